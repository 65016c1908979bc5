#pragma once

#include <cstddef>
#include <cstdint>
#include <iterator>
#include <string>
#include <vector>

#include "fewshot/collection.hpp"

namespace fewshot {

struct EpisodeSpec {
  std::size_t c_way = 5;
  std::size_t k_shot = 5;
  /// Query examples per class; 0 means "same as k_shot".
  std::size_t query_per_class = 0;
  std::uint64_t seed = 0;

  std::size_t queries() const { return query_per_class ? query_per_class : k_shot; }
};

struct EpisodeItem {
  /// Index into the source collection.
  std::size_t triplet;
  std::size_t class_index;

  friend bool operator==(const EpisodeItem&, const EpisodeItem&) = default;
};

/// C sampled labels with K support and Q query triplets each.
struct Episode {
  std::vector<std::string> labels;
  std::vector<EpisodeItem> support;
  std::vector<EpisodeItem> query;

  friend bool operator==(const Episode&, const Episode&) = default;
};

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);
/// Seed for item `index` of the stream identified by (`base`, `domain`).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t domain, std::uint64_t index);

/// Samples C distinct labels, then K + Q distinct triplets per label.
/// Throws CapacityError when the collection has fewer than C labels or a
/// sampled label has fewer than K + Q triplets.
Episode sample_episode(const Collection& collection, const EpisodeSpec& spec);

/// `count` episodes whose i-th element is sampled with
/// derive_seed(spec.seed, domain, i), so any element can be produced
/// without materializing the ones before it.
class EpisodeStream {
 public:
  EpisodeStream(const Collection& collection, EpisodeSpec spec, std::size_t count, std::uint64_t domain = 0);

  std::size_t size() const { return count_; }
  Episode at(std::size_t i) const;

  class iterator {
   public:
    using iterator_category = std::input_iterator_tag;
    using value_type = Episode;
    using difference_type = std::ptrdiff_t;
    using pointer = const Episode*;
    using reference = Episode;

    iterator(const EpisodeStream* stream, std::size_t i) : stream_(stream), i_(i) {}
    Episode operator*() const { return stream_->at(i_); }
    iterator& operator++() {
      ++i_;
      return *this;
    }
    iterator operator++(int) {
      iterator tmp = *this;
      ++i_;
      return tmp;
    }
    friend bool operator==(const iterator& a, const iterator& b) { return a.i_ == b.i_; }

   private:
    const EpisodeStream* stream_;
    std::size_t i_;
  };

  iterator begin() const { return {this, 0}; }
  iterator end() const { return {this, count_}; }

 private:
  const Collection* collection_;
  EpisodeSpec spec_;
  std::size_t count_;
  std::uint64_t domain_;
};

}  // namespace fewshot
