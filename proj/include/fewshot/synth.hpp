#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "fewshot/collection.hpp"

namespace fewshot {

/// Gaussian clusters: each class mean is a random unit direction scaled by
/// `separation`; values add unit-variance isotropic noise.
struct SynthSpec {
  std::size_t classes = 10;
  std::size_t dimension = 32;
  double separation = 4.0;
  std::size_t values_per_class = 50;
  std::uint64_t seed = 7;
  /// Prefix of the generated labels, e.g. "class" gives class_00, class_01.
  std::string label_prefix = "class";
};

/// Labels are `<prefix>_NN`, tokens `<label>_vNNN`; embedder "synthetic".
Collection make_synthetic_collection(const SynthSpec& spec);

}  // namespace fewshot
