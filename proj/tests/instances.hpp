#pragma once

#include <cstdint>
#include <random>

#include "fewshot/graph.hpp"
#include "fewshot/models.hpp"
#include "support.hpp"

// Small randomly initialized networks with a scalar loss, for gradient checks.
namespace instances {

inline constexpr std::size_t kDim = 8;
inline constexpr std::size_t kClasses = 3;
inline constexpr std::size_t kShots = 2;

inline fewshot::ModelConfig compact_config(fewshot::ModelKind kind) {
  fewshot::ModelConfig c;
  c.kind = kind;
  c.input_dim = kDim;
  c.encoder_hidden = 16;
  c.encoder_out = kDim;
  c.channels = 4;
  c.kernel = 3;
  c.fc_hidden = 8;
  return c;
}

inline fewshot::EpisodeBatch random_batch(std::mt19937_64& rng) {
  fewshot::EpisodeBatch b;
  b.c_way = kClasses;
  b.support = testing_support::random_tensor({kClasses * kShots, kDim}, rng);
  b.query = testing_support::random_tensor({kClasses * kShots, kDim}, rng);
  for (std::size_t c = 0; c < kClasses; ++c) {
    for (std::size_t k = 0; k < kShots; ++k) {
      b.support_class.push_back(c);
      b.query_class.push_back(c);
    }
  }
  return b;
}

/// Encoder output contracted with a random constant.
inline fewshot::NodeId encoder_loss(fewshot::Graph& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const fewshot::ModelBundle bundle = fewshot::init_model(compact_config(fewshot::ModelKind::prototypical), rng());
  fewshot::ParameterNodes p(g, bundle.params);
  const auto x = g.constant(testing_support::random_tensor({kClasses * kShots, kDim}, rng));
  const auto out = fewshot::encode_rows(g, p, x);
  const auto weights = g.constant(testing_support::random_tensor(g.value(out).shape(), rng));
  return g.sum_all(g.mul(out, weights));
}

/// Relation head on random class sums and queries, MSE loss.
inline fewshot::NodeId relation_head_loss(fewshot::Graph& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const fewshot::ModelConfig config = compact_config(fewshot::ModelKind::relation);
  fewshot::ModelBundle bundle = fewshot::init_model(config, rng());
  for (auto& [name, t] : bundle.params) {
    if (name.rfind("relation.", 0) == 0 && name.back() == 'b') t = testing_support::random_tensor(t.shape(), rng, 0.1);
  }
  fewshot::ParameterNodes p(g, bundle.params);
  const fewshot::EpisodeBatch b = random_batch(rng);
  const auto sums = g.constant(testing_support::random_tensor({kClasses, kDim}, rng));
  const auto query = g.constant(b.query);
  const auto r = fewshot::relation_head(g, p, config, fewshot::pair_sums(g, sums, query));
  const auto scores = g.reshape(r, {b.query.dim(0), kClasses});
  return fewshot::build_loss(g, fewshot::ModelKind::relation, scores, b.query_class);
}

/// Attentive head over a random raw-vector episode, MSE loss.
inline fewshot::NodeId attentive_loss(fewshot::Graph& g, std::uint64_t seed, bool parallel = false) {
  std::mt19937_64 rng(seed);
  fewshot::ModelConfig config = compact_config(fewshot::ModelKind::attentive);
  config.parallel_blocks = parallel;
  fewshot::ModelBundle bundle = fewshot::init_model(config, rng());
  for (auto& [name, t] : bundle.params) {
    if (name.back() == 'b') t = testing_support::random_tensor(t.shape(), rng, 0.1);
  }
  const fewshot::EpisodeBatch b = random_batch(rng);
  const fewshot::ScoreNodes s = fewshot::build_scores(g, bundle, b);
  return fewshot::build_loss(g, fewshot::ModelKind::attentive, s.scores, b.query_class);
}

}  // namespace instances
