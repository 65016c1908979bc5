#include "fewshot/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace fewshot {

namespace {

// Central difference for one element, or nullopt if the probe crossed a kink.
std::optional<double> central_difference(Graph& graph, NodeId param, std::size_t index, NodeId loss, double step,
                                         const std::vector<std::int8_t>& base_regime) {
  const Tensor original = graph.value(param);
  Tensor probe = original;

  probe[index] = original[index] + step;
  graph.set_value(param, probe);
  graph.recompute();
  const double plus = graph.value(loss).item();
  const bool plus_same = graph.regime_signature() == base_regime;

  probe[index] = original[index] - step;
  graph.set_value(param, probe);
  graph.recompute();
  const double minus = graph.value(loss).item();
  const bool minus_same = graph.regime_signature() == base_regime;

  graph.set_value(param, original);
  if (!plus_same || !minus_same) return std::nullopt;
  return (plus - minus) / (2.0 * step);
}

}  // namespace

GradCheckReport grad_check(Graph& graph, NodeId loss, const GradCheckOptions& options) {
  GradCheckReport report;
  graph.recompute();
  const GradientMap analytic = graph.backward(loss);
  const auto base_regime = graph.regime_signature();

  for (NodeId param : graph.parameters()) {
    const std::string& name = graph.parameter_name(param);
    const Tensor& grad = analytic.at(name);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      auto numeric = central_difference(graph, param, i, loss, options.step, base_regime);
      if (!numeric) numeric = central_difference(graph, param, i, loss, options.step / 10.0, base_regime);
      if (!numeric) {
        ++report.skipped_kinks;
        continue;
      }
      const double a = grad[i];
      const double denom = std::max({std::abs(a), std::abs(*numeric), options.denominator_floor});
      double rel = std::abs(a - *numeric) / denom;
      if (!std::isfinite(rel)) rel = std::numeric_limits<double>::infinity();
      ++report.checked;
      if (report.worst_parameter.empty() || rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_parameter = name;
        report.worst_index = i;
      }
    }
  }
  graph.recompute();
  report.passed = report.max_relative_error < options.tolerance;
  return report;
}

}  // namespace fewshot
