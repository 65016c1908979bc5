#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "fewshot/graph.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

/// Named trainable tensors. std::map keeps iteration order stable, which
/// the checkpoint format and the optimizer rely on.
using Parameters = std::map<std::string, Tensor>;

enum class OptimizerKind { sgd, adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view name);

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerSettings settings);

  /// One update of every parameter that has a gradient entry. A gradient
  /// whose shape differs from its parameter throws DimensionError before
  /// anything is modified.
  void step(Parameters& params, const GradientMap& grads);

  std::uint64_t step_count() const { return steps_; }
  const OptimizerSettings& settings() const { return settings_; }
  const Tensor* first_moment(const std::string& name) const;
  const Tensor* second_moment(const std::string& name) const;

 private:
  OptimizerSettings settings_;
  std::uint64_t steps_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

}  // namespace fewshot
