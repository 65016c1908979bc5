#include "fewshot/optimizer.hpp"

#include <cmath>

#include "fewshot/error.hpp"

namespace fewshot {

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ContractError("unknown optimizer '" + std::string(name) + "'");
}

Optimizer::Optimizer(OptimizerSettings settings) : settings_(settings) {
  if (!(settings_.learning_rate > 0.0)) throw ContractError("learning rate must be positive");
}

const Tensor* Optimizer::first_moment(const std::string& name) const {
  auto it = m_.find(name);
  return it == m_.end() ? nullptr : &it->second;
}

const Tensor* Optimizer::second_moment(const std::string& name) const {
  auto it = v_.find(name);
  return it == v_.end() ? nullptr : &it->second;
}

void Optimizer::step(Parameters& params, const GradientMap& grads) {
  for (const auto& [name, grad] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ContractError("gradient for unknown parameter '" + name + "'");
    if (it->second.shape() != grad.shape()) {
      throw DimensionError("optimizer: parameter '" + name + "' has shape " + shape_string(it->second.shape()) +
                           " but gradient has " + shape_string(grad.shape()));
    }
  }
  ++steps_;
  const double lr = settings_.learning_rate;
  if (settings_.kind == OptimizerKind::sgd) {
    for (const auto& [name, grad] : grads) {
      Tensor& w = params.at(name);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * grad[i];
    }
    return;
  }

  const double b1 = settings_.beta1, b2 = settings_.beta2;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (const auto& [name, grad] : grads) {
    Tensor& w = params.at(name);
    Tensor& m = m_.try_emplace(name, w.shape(), 0.0).first->second;
    Tensor& v = v_.try_emplace(name, w.shape(), 0.0).first->second;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + settings_.epsilon);
    }
  }
}

}  // namespace fewshot
