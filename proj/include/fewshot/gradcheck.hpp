#pragma once

#include <cstddef>
#include <string>

#include "fewshot/graph.hpp"

namespace fewshot {

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  /// Lower bound on the relative-error denominator, so gradients that are
  /// zero up to rounding are compared in absolute terms.
  double denominator_floor = 1e-6;
};

struct GradCheckReport {
  bool passed = true;
  double max_relative_error = 0.0;
  /// Parameter holding the worst element; empty when nothing was checked.
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  /// Elements whose central difference straddled a ReLU kink at both the
  /// base step and step/10; these have no well-defined derivative.
  std::size_t skipped_kinks = 0;
};

/// Compares graph.backward(loss) with central finite differences for every
/// parameter element. The graph is perturbed in place and restored.
GradCheckReport grad_check(Graph& graph, NodeId loss, const GradCheckOptions& options = {});

}  // namespace fewshot
