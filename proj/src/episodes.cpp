#include "fewshot/episodes.hpp"

#include <random>

#include "fewshot/error.hpp"

namespace fewshot {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t domain, std::uint64_t index) {
  return mix64(mix64(base ^ mix64(domain)) + index);
}

namespace {

// Moves a uniform random choice of `count` elements to the front of `items`.
template <typename T>
void partial_shuffle(std::vector<T>& items, std::size_t count, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, items.size() - 1);
    std::swap(items[i], items[pick(rng)]);
  }
}

}  // namespace

Episode sample_episode(const Collection& collection, const EpisodeSpec& spec) {
  if (spec.c_way == 0 || spec.k_shot == 0) throw ContractError("episodes need c_way >= 1 and k_shot >= 1");
  std::vector<std::string> labels = collection.labels();
  if (labels.size() < spec.c_way) {
    throw CapacityError("collection has " + std::to_string(labels.size()) + " labels, episode needs " +
                        std::to_string(spec.c_way));
  }
  std::mt19937_64 rng(spec.seed);
  partial_shuffle(labels, spec.c_way, rng);
  labels.resize(spec.c_way);

  const std::size_t k = spec.k_shot;
  const std::size_t q = spec.queries();
  Episode episode;
  episode.labels = labels;
  episode.support.reserve(k * spec.c_way);
  episode.query.reserve(q * spec.c_way);
  for (std::size_t c = 0; c < spec.c_way; ++c) {
    std::vector<std::size_t> pool = collection.indices_of(labels[c]);
    if (pool.size() < k + q) {
      throw CapacityError("label '" + labels[c] + "' has " + std::to_string(pool.size()) + " triplets, episode needs " +
                          std::to_string(k + q));
    }
    partial_shuffle(pool, k + q, rng);
    for (std::size_t i = 0; i < k; ++i) episode.support.push_back({pool[i], c});
    for (std::size_t i = k; i < k + q; ++i) episode.query.push_back({pool[i], c});
  }
  return episode;
}

EpisodeStream::EpisodeStream(const Collection& collection, EpisodeSpec spec, std::size_t count, std::uint64_t domain)
    : collection_(&collection), spec_(spec), count_(count), domain_(domain) {}

Episode EpisodeStream::at(std::size_t i) const {
  if (i >= count_) throw ContractError("episode index out of range");
  EpisodeSpec spec = spec_;
  spec.seed = derive_seed(spec_.seed, domain_, i);
  return sample_episode(*collection_, spec);
}

}  // namespace fewshot
