#pragma once

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fewshot/collection.hpp"
#include "fewshot/tensor.hpp"

namespace testing_support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("fewshot_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline fewshot::Tensor random_tensor(fewshot::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  fewshot::Tensor t(std::move(shape));
  for (double& v : t.data()) v = normal(rng);
  return t;
}

/// Labels "L0".."L{labels-1}", `per_label` triplets each, dimension `dim`.
inline fewshot::Collection toy_collection(std::size_t labels, std::size_t per_label, std::size_t dim,
                                          std::uint64_t seed = 1, const std::string& prefix = "L") {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  fewshot::CollectionManifest manifest{"synthetic", dim, {"toy"}, per_label, 1, {}, ""};
  std::vector<fewshot::Triplet> triplets;
  for (std::size_t l = 0; l < labels; ++l) {
    for (std::size_t i = 0; i < per_label; ++i) {
      fewshot::Triplet t{prefix + std::to_string(l) + "_" + std::to_string(i), prefix + std::to_string(l), {}};
      for (std::size_t d = 0; d < dim; ++d) t.embedding.push_back(normal(rng) + 3.0 * static_cast<double>(d == l % dim));
      triplets.push_back(std::move(t));
    }
  }
  return fewshot::Collection(std::move(manifest), std::move(triplets));
}

}  // namespace testing_support
