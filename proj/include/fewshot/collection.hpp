#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace fewshot {

/// One labeled slot value.
struct Triplet {
  std::string token;
  std::string label;
  std::vector<double> embedding;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

struct CollectionManifest {
  /// fasttext, elmo, bert or synthetic.
  std::string embedder;
  std::size_t dimension = 0;
  std::vector<std::string> domains;
  /// Maximum number of values kept per label (N).
  std::size_t values_per_slot = 0;
  int format_version = 1;
  /// Optional label -> domain map; when present, labels are checked against
  /// `domains`.
  std::map<std::string, std::string> label_domains;
  /// Optional description of how vectors were produced (e.g. layer merge).
  std::string policy;

  friend bool operator==(const CollectionManifest&, const CollectionManifest&) = default;
};

inline constexpr int kCollectionFormatVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kTripletsFile = "triplets.jsonl";

/// Immutable set of triplets with a label index. Construction does not
/// validate; use validate_collection() for that.
class Collection {
 public:
  Collection() = default;
  Collection(CollectionManifest manifest, std::vector<Triplet> triplets);

  const CollectionManifest& manifest() const { return manifest_; }
  const std::vector<Triplet>& triplets() const { return triplets_; }
  const Triplet& triplet(std::size_t i) const { return triplets_.at(i); }
  std::size_t size() const { return triplets_.size(); }

  /// Labels in ascending order.
  std::vector<std::string> labels() const;
  const std::map<std::string, std::vector<std::size_t>>& label_index() const { return label_index_; }
  const std::vector<std::size_t>& indices_of(const std::string& label) const;
  bool has_label(const std::string& label) const { return label_index_.contains(label); }

  friend bool operator==(const Collection& a, const Collection& b) {
    return a.manifest_ == b.manifest_ && a.triplets_ == b.triplets_;
  }

 private:
  CollectionManifest manifest_;
  std::vector<Triplet> triplets_;
  std::map<std::string, std::vector<std::size_t>> label_index_;
};

/// Reads `<dir>/manifest.json` and `<dir>/triplets.jsonl`. Throws ParseError
/// for malformed records and ValidationError for records whose vector
/// dimension disagrees with the manifest; both name the line.
Collection read_collection(const std::filesystem::path& dir);
/// Writes both files atomically. Throws ValidationError for non-finite values.
void write_collection(const Collection& collection, const std::filesystem::path& dir);

struct Issue {
  std::string location;
  std::string message;
};

struct ValidationReport {
  std::vector<Issue> violations;
  std::vector<Issue> warnings;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate_collection(const Collection& collection);

struct DomainSplit {
  std::string test_domain;
  std::vector<std::string> train_domains;
  std::set<std::string> train_labels;
  std::set<std::string> test_labels;
};

/// One split per domain, holding that domain out for testing. Requires at
/// least two domains, each with a label; a label owned by two domains
/// throws ValidationError.
std::vector<DomainSplit> build_domain_splits(const std::vector<std::string>& domains,
                                             const std::map<std::string, std::set<std::string>>& labels_by_domain);

struct SubsampleResult {
  Collection collection;
  /// One entry per label that had fewer than n triplets.
  std::vector<std::string> warnings;
};

/// Keeps min(n, available) triplets per label, drawn uniformly without
/// replacement; the kept triplets stay in their original order.
SubsampleResult subsample_collection(const Collection& collection, std::size_t n, std::uint64_t seed);

/// Triplets whose label is in `labels`; the manifest is copied and its
/// domains narrowed when label_domains is known.
Collection select_labels(const Collection& collection, const std::set<std::string>& labels);

/// Concatenates collections sharing embedder and dimension.
Collection merge_collections(const std::vector<Collection>& parts);

}  // namespace fewshot
