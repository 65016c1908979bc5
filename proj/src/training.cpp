#include "fewshot/training.hpp"

#include <cmath>
#include <numeric>

#include "fewshot/episodes.hpp"
#include "fewshot/error.hpp"
#include "fewshot/graph.hpp"
#include "fewshot/log.hpp"

namespace fewshot {

void TrainConfig::validate() const {
  if (eval_every == 0) throw ContractError("eval_every must be positive");
  if (train_episodes % eval_every != 0) {
    throw ContractError("eval_every (" + std::to_string(eval_every) + ") must divide train_episodes (" +
                        std::to_string(train_episodes) + ")");
  }
  if (c_way == 0 || k_shot == 0) throw ContractError("c_way and k_shot must be positive");
}

std::vector<std::size_t> TrainConfig::checkpoint_steps() const {
  validate();
  std::vector<std::size_t> steps;
  for (std::size_t s = eval_every; s <= train_episodes; s += eval_every) steps.push_back(s);
  return steps;
}

double mean_of_checkpoints(const std::vector<EvalCheckpoint>& checkpoints) {
  if (checkpoints.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& c : checkpoints) sum += c.accuracy;
  return sum / static_cast<double>(checkpoints.size());
}

namespace {

double loss_value(ModelKind kind, const Tensor& scores, const std::vector<std::size_t>& targets) {
  Graph graph;
  NodeId loss = build_loss(graph, kind, graph.constant(scores), targets);
  return graph.value(loss).item();
}

double episode_accuracy(const Tensor& scores, const std::vector<std::size_t>& targets) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (argmax_lowest(scores.row(i)) == targets[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(targets.size());
}

}  // namespace

double mse_episode_loss(const Tensor& scores, const std::vector<std::size_t>& targets) {
  for (double v : scores.data()) {
    if (!(v > 0.0 && v < 1.0)) throw ContractError("mse_episode_loss: relation scores must lie in (0,1)");
  }
  return loss_value(ModelKind::relation, scores, targets);
}

double cross_entropy_episode_loss(const Tensor& scores, const std::vector<std::size_t>& targets) {
  if (!scores.all_finite()) throw ContractError("cross_entropy_episode_loss: scores must be finite");
  return loss_value(ModelKind::prototypical, scores, targets);
}

TrainResult meta_train(ModelConfig model, const Collection& train, const TrainConfig& config,
                       const CheckpointCallback& on_checkpoint) {
  config.validate();
  if (model.input_dim == 0) model.input_dim = train.manifest().dimension;
  TrainResult result;
  result.bundle = init_model(model, derive_seed(config.seed, kInitStream, 0));
  result.bundle.train_labels = train.labels();
  result.loss_curve.reserve(config.train_episodes);

  Optimizer optimizer(config.optimizer);
  const EpisodeSpec spec{config.c_way, config.k_shot, config.query_per_class, config.seed};
  const EpisodeStream stream(train, spec, config.train_episodes, kTrainStream);
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const EpisodeBatch batch = make_batch(train, stream.at(i));
    Graph graph;
    const ScoreNodes scores = build_scores(graph, result.bundle, batch);
    const NodeId loss = build_loss(graph, model.kind, scores.scores, batch.query_class);
    const double value = graph.value(loss).item();
    if (!std::isfinite(value)) {
      throw NumericError("non-finite loss at step " + std::to_string(i + 1) + " (model " +
                         std::string(to_string(model.kind)) + ")");
    }
    optimizer.step(result.bundle.params, graph.backward(loss));
    result.loss_curve.push_back(value);
    result.bundle.steps = i + 1;
    if ((i + 1) % config.eval_every == 0) {
      log_debug("train model={} step={} loss={:.6f}", to_string(model.kind), i + 1, value);
      if (on_checkpoint) on_checkpoint(i + 1, result.bundle);
    }
  }
  return result;
}

EvalRun meta_test(const ModelBundle& bundle, const Collection& test, const TrainConfig& config) {
  std::vector<std::string> leaked;
  for (const auto& label : bundle.train_labels) {
    if (test.has_label(label)) leaked.push_back(label);
  }
  if (!leaked.empty()) {
    std::string list;
    for (const auto& l : leaked) list += (list.empty() ? "" : ", ") + l;
    throw ContractError("test labels overlap training labels: " + list);
  }

  const EpisodeSpec spec{config.test_c_way(), config.k_shot, config.query_per_class, config.seed};
  const EpisodeStream stream(test, spec, config.eval_episodes, kEvalStream);
  EvalRun run;
  run.episode_accuracies.reserve(stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const EpisodeBatch batch = make_batch(test, stream.at(i));
    Graph graph;
    const ScoreNodes scores = build_scores(graph, bundle, batch);
    run.episode_accuracies.push_back(episode_accuracy(graph.value(scores.scores), batch.query_class));
  }
  double mean = 0.0;
  if (!run.episode_accuracies.empty()) {
    mean = std::accumulate(run.episode_accuracies.begin(), run.episode_accuracies.end(), 0.0) /
           static_cast<double>(run.episode_accuracies.size());
  }
  run.checkpoints.push_back({static_cast<std::size_t>(bundle.steps), mean});
  run.final_accuracy = mean;
  return run;
}

TrainResult train_and_evaluate(ModelConfig model, const Collection& train, const Collection& test,
                               const TrainConfig& config) {
  EvalRun eval;
  auto on_checkpoint = [&](std::size_t step, const ModelBundle& bundle) {
    EvalRun point = meta_test(bundle, test, config);
    eval.checkpoints.push_back({step, point.final_accuracy});
    eval.episode_accuracies = std::move(point.episode_accuracies);
    log_info("eval model={} step={} accuracy={:.4f}", to_string(bundle.config.kind), step, point.final_accuracy);
  };
  TrainResult result = meta_train(std::move(model), train, config, on_checkpoint);
  eval.final_accuracy = mean_of_checkpoints(eval.checkpoints);
  result.eval = std::move(eval);
  return result;
}

}  // namespace fewshot
