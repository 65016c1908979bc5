#include "fewshot/synth.hpp"

#include <fmt/format.h>

#include <cmath>
#include <random>

#include "fewshot/error.hpp"

namespace fewshot {

Collection make_synthetic_collection(const SynthSpec& spec) {
  if (spec.classes == 0 || spec.dimension == 0 || spec.values_per_class == 0) {
    throw ContractError("synthetic collection needs classes, dimension and values_per_class > 0");
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  CollectionManifest manifest;
  manifest.embedder = "synthetic";
  manifest.dimension = spec.dimension;
  manifest.domains = {"synthetic"};
  manifest.values_per_slot = spec.values_per_class;
  manifest.policy = fmt::format("gaussian clusters, separation {}, seed {}", spec.separation, spec.seed);

  std::vector<Triplet> triplets;
  triplets.reserve(spec.classes * spec.values_per_class);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    std::vector<double> mean(spec.dimension);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& v : mean) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
    } while (norm == 0.0);
    for (double& v : mean) v *= spec.separation / norm;

    const std::string label = fmt::format("{}_{:02}", spec.label_prefix, c);
    manifest.label_domains[label] = "synthetic";
    for (std::size_t i = 0; i < spec.values_per_class; ++i) {
      Triplet t{fmt::format("{}_v{:03}", label, i), label, mean};
      for (double& v : t.embedding) v += normal(rng);
      triplets.push_back(std::move(t));
    }
  }
  return Collection(std::move(manifest), std::move(triplets));
}

}  // namespace fewshot
