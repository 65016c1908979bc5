#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fewshot/collection.hpp"
#include "fewshot/episodes.hpp"
#include "fewshot/graph.hpp"
#include "fewshot/optimizer.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

enum class ModelKind { matching, prototypical, relation, attentive };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);
/// Relation-family heads output scores in (0,1) and train with MSE.
bool is_relation_family(ModelKind kind);

struct ModelConfig {
  ModelKind kind = ModelKind::prototypical;
  std::size_t input_dim = 0;
  std::size_t encoder_hidden = 128;
  std::size_t encoder_out = 64;
  std::size_t channels = 32;
  std::size_t kernel = 3;
  std::size_t fc_hidden = 64;
  /// Attentive head: compute l2 from the pair (true) or from l1 (false).
  bool parallel_blocks = false;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Parameters of one learner plus what it was trained on.
struct ModelBundle {
  ModelConfig config;
  Parameters params;
  /// Labels seen during meta-training, sorted.
  std::vector<std::string> train_labels;
  std::uint64_t steps = 0;

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

/// Glorot-uniform weights, zero biases, deterministic in `seed`.
ModelBundle init_model(const ModelConfig& config, std::uint64_t seed);

/// Support and query vectors of one episode as dense matrices.
struct EpisodeBatch {
  Tensor support;  // [ns x d]
  std::vector<std::size_t> support_class;
  Tensor query;  // [nq x d]
  std::vector<std::size_t> query_class;
  std::size_t c_way = 0;
};

EpisodeBatch make_batch(const Collection& collection, const Episode& episode);

/// Graph nodes exposed by the attentive head, one row per (query, class)
/// pair in query-major order.
struct AttentionNodes {
  NodeId compatibility;  // c  [P x 1 x d]
  NodeId attention;      // a  [P x 1 x d]
  NodeId global;         // g  [P x channels x d]
  NodeId relation;       // r  [P x 1]
};

struct ScoreNodes {
  /// [nq x C], larger means more likely.
  NodeId scores;
  std::optional<AttentionNodes> attention;
};

/// Adds the bundle's parameters to `graph` as trainable leaves and returns
/// a node per name. Parameters absent from the bundle throw ContractError.
class ParameterNodes {
 public:
  ParameterNodes(Graph& graph, const Parameters& params);
  NodeId operator()(const std::string& name) const;

 private:
  std::map<std::string, NodeId> ids_;
};

/// f(x) = W2 relu(W1 x + b1) + b2 applied to each row of [n x d].
NodeId encode_rows(Graph& graph, const ParameterNodes& p, NodeId x);

/// Per-class averaging weights [ns x C]: 1/K_c where support i is in class c.
Tensor class_mean_weights(const std::vector<std::size_t>& classes, std::size_t c_way);
/// One-hot class membership [ns x C].
Tensor class_membership(const std::vector<std::size_t>& classes, std::size_t c_way);

NodeId matching_scores_node(Graph& graph, NodeId support, const std::vector<std::size_t>& classes, NodeId query,
                            std::size_t c_way);
NodeId prototypical_scores_node(Graph& graph, NodeId support, const std::vector<std::size_t>& classes, NodeId query,
                                std::size_t c_way);
/// Pair features [nq*C x D], row i*C + c = class_sum[c] + query[i].
NodeId pair_sums(Graph& graph, NodeId class_sums, NodeId query);
/// Relation module over pair features; returns r as [P x 1].
NodeId relation_head(Graph& graph, const ParameterNodes& p, const ModelConfig& config, NodeId pairs);
AttentionNodes attentive_head(Graph& graph, const ParameterNodes& p, const ModelConfig& config, NodeId pairs);

/// Full forward pass of a learner over one episode.
ScoreNodes build_scores(Graph& graph, const ModelBundle& bundle, const EpisodeBatch& batch);
/// MSE against one-hot targets for the relation family, softmax
/// cross-entropy otherwise.
NodeId build_loss(Graph& graph, ModelKind kind, NodeId scores, const std::vector<std::size_t>& targets);

struct PredictionDistribution {
  std::vector<double> scores;
  /// argmax of scores; ties go to the lowest class index.
  std::size_t predicted = 0;
};

std::size_t argmax_lowest(std::span<const double> scores);
PredictionDistribution make_prediction(std::vector<double> scores);

/// Encodes one vector [d] into [encoder_out].
Tensor encode(const ModelBundle& bundle, const Tensor& vector);

/// Mean cosine similarity between the query and each class's supports.
/// Throws NumericError naming a zero-norm support or the query.
PredictionDistribution matching_scores(const Tensor& support, const std::vector<std::size_t>& classes,
                                       const Tensor& query);
/// Negative Euclidean distance from the query to each class mean.
PredictionDistribution prototypical_scores(const Tensor& support, const std::vector<std::size_t>& classes,
                                           const Tensor& query);
/// Elementwise sum of each class's supports, [C x D].
Tensor class_sum(const Tensor& support, const std::vector<std::size_t>& classes);
/// Relation scores of `query` against precomputed class sums, using the
/// bundle's relation head (no encoder).
PredictionDistribution relation_scores(const ModelBundle& bundle, const Tensor& class_sums, const Tensor& query);

struct AttentionDiagnostics {
  double relation = 0.0;
  std::vector<double> compatibility;
  std::vector<double> attention;
  std::vector<double> global;
};

struct AttentiveResult {
  PredictionDistribution prediction;
  std::vector<AttentionDiagnostics> per_class;
};

/// Attentive relation scores over raw vectors. Throws NumericError naming
/// the stage when an intermediate is non-finite.
AttentiveResult attentive_relation_scores(const ModelBundle& bundle, const Tensor& support,
                                          const std::vector<std::size_t>& classes, const Tensor& query);

/// True when matching and prototypical predictions agree on a one-shot
/// episode. Features must have unit norm and each class exactly one support;
/// otherwise ContractError.
bool one_shot_equivalence_check(const Tensor& support, const std::vector<std::size_t>& classes, const Tensor& query);
/// Encodes and L2-normalizes raw vectors before the check above.
bool one_shot_equivalence_check(const ModelBundle& encoder, const Tensor& support,
                                const std::vector<std::size_t>& classes, const Tensor& query);

inline constexpr int kCheckpointVersion = 1;

void write_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle read_checkpoint(const std::filesystem::path& path);

}  // namespace fewshot
