#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "fewshot/collection.hpp"
#include "fewshot/models.hpp"
#include "fewshot/optimizer.hpp"

namespace fewshot {

// Seed-derivation domains, so that training, evaluation and initialization
// draw from disjoint streams of the same base seed.
inline constexpr std::uint64_t kTrainStream = 0x7472'6169'6eULL;
inline constexpr std::uint64_t kEvalStream = 0x6576'616cULL;
inline constexpr std::uint64_t kInitStream = 0x696e'6974ULL;

struct TrainConfig {
  std::size_t train_episodes = 10000;
  std::size_t eval_every = 500;
  std::size_t eval_episodes = 1000;
  std::size_t c_way = 5;
  /// Classes per evaluation episode; 0 means c_way.
  std::size_t eval_c_way = 0;
  std::size_t k_shot = 5;
  /// 0 means k_shot.
  std::size_t query_per_class = 0;
  OptimizerSettings optimizer;
  std::uint64_t seed = 1;

  /// Throws ContractError unless eval_every > 0 divides train_episodes.
  void validate() const;
  std::vector<std::size_t> checkpoint_steps() const;
  std::size_t test_c_way() const { return eval_c_way ? eval_c_way : c_way; }
};

struct EvalCheckpoint {
  std::size_t step = 0;
  double accuracy = 0.0;

  friend bool operator==(const EvalCheckpoint&, const EvalCheckpoint&) = default;
};

struct EvalRun {
  std::vector<EvalCheckpoint> checkpoints;
  /// Arithmetic mean of the checkpoint accuracies.
  double final_accuracy = 0.0;
  /// Per-episode accuracies of the most recent evaluation.
  std::vector<double> episode_accuracies;

  friend bool operator==(const EvalRun&, const EvalRun&) = default;
};

double mean_of_checkpoints(const std::vector<EvalCheckpoint>& checkpoints);

struct TrainResult {
  ModelBundle bundle;
  /// Loss of each training episode, in order.
  std::vector<double> loss_curve;
  /// Filled by train_and_evaluate only.
  EvalRun eval;
};

using CheckpointCallback = std::function<void(std::size_t step, const ModelBundle& bundle)>;

double mse_episode_loss(const Tensor& scores, const std::vector<std::size_t>& targets);
double cross_entropy_episode_loss(const Tensor& scores, const std::vector<std::size_t>& targets);

/// Episodic training. `model.input_dim` of 0 is taken from the collection.
/// Calls `on_checkpoint` after every eval_every-th episode. Throws
/// NumericError naming the step if a loss becomes non-finite.
TrainResult meta_train(ModelConfig model, const Collection& train, const TrainConfig& config,
                       const CheckpointCallback& on_checkpoint = {});

/// Accuracy of `bundle` over config.eval_episodes episodes of `test`,
/// reported as a single checkpoint at bundle.steps. Throws ContractError if
/// any test label was seen in training.
EvalRun meta_test(const ModelBundle& bundle, const Collection& test, const TrainConfig& config);

/// meta_train with a meta_test at every checkpoint; eval.final_accuracy is
/// the mean over checkpoints.
TrainResult train_and_evaluate(ModelConfig model, const Collection& train, const Collection& test,
                               const TrainConfig& config);

}  // namespace fewshot
