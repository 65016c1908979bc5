#include "fewshot/collection.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <json.hpp>

#include "fewshot/error.hpp"
#include "fewshot/io.hpp"

namespace fewshot {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

const std::set<std::string>& known_embedders() {
  static const std::set<std::string> names{"fasttext", "elmo", "bert", "synthetic"};
  return names;
}

ordered_json manifest_to_json(const CollectionManifest& m) {
  ordered_json j;
  j["embedder"] = m.embedder;
  j["dimension"] = m.dimension;
  j["domains"] = m.domains;
  j["values_per_slot"] = m.values_per_slot;
  j["format_version"] = m.format_version;
  if (!m.label_domains.empty()) j["label_domains"] = m.label_domains;
  if (!m.policy.empty()) j["policy"] = m.policy;
  return j;
}

CollectionManifest manifest_from_json(const json& j, const std::string& where) {
  CollectionManifest m;
  try {
    m.embedder = j.at("embedder").get<std::string>();
    m.dimension = j.at("dimension").get<std::size_t>();
    m.domains = j.at("domains").get<std::vector<std::string>>();
    m.values_per_slot = j.at("values_per_slot").get<std::size_t>();
    m.format_version = j.at("format_version").get<int>();
    if (j.contains("label_domains")) m.label_domains = j.at("label_domains").get<std::map<std::string, std::string>>();
    if (j.contains("policy")) m.policy = j.at("policy").get<std::string>();
  } catch (const json::exception& e) {
    throw ParseError(where + ": " + e.what());
  }
  if (m.format_version != kCollectionFormatVersion) {
    throw ParseError(where + ": unsupported format_version " + std::to_string(m.format_version));
  }
  return m;
}

std::string triplet_line(const Triplet& t) {
  std::string line = "{\"token\":" + json(t.token).dump() + ",\"label\":" + json(t.label).dump() + ",\"vector\":[";
  for (std::size_t i = 0; i < t.embedding.size(); ++i) {
    if (i) line += ',';
    line += format_double(t.embedding[i]);
  }
  line += "]}\n";
  return line;
}

}  // namespace

Collection::Collection(CollectionManifest manifest, std::vector<Triplet> triplets)
    : manifest_(std::move(manifest)), triplets_(std::move(triplets)) {
  for (std::size_t i = 0; i < triplets_.size(); ++i) label_index_[triplets_[i].label].push_back(i);
}

std::vector<std::string> Collection::labels() const {
  std::vector<std::string> out;
  out.reserve(label_index_.size());
  for (const auto& [label, idx] : label_index_) out.push_back(label);
  return out;
}

const std::vector<std::size_t>& Collection::indices_of(const std::string& label) const {
  auto it = label_index_.find(label);
  if (it == label_index_.end()) throw ContractError("collection has no label '" + label + "'");
  return it->second;
}

Collection read_collection(const std::filesystem::path& dir) {
  const auto manifest_path = dir / kManifestFile;
  const auto triplets_path = dir / kTripletsFile;
  json mj;
  try {
    mj = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw ParseError(manifest_path.string() + ": " + e.what());
  }
  CollectionManifest manifest = manifest_from_json(mj, manifest_path.string());

  std::istringstream in(read_file(triplets_path));
  std::vector<Triplet> triplets;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = triplets_path.string() + ":" + std::to_string(line_no);
    Triplet t;
    try {
      const json record = json::parse(line);
      t.token = record.at("token").get<std::string>();
      t.label = record.at("label").get<std::string>();
      t.embedding = record.at("vector").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (t.embedding.size() != manifest.dimension) {
      throw ValidationError(where + ": vector has " + std::to_string(t.embedding.size()) +
                            " values but manifest dimension is " + std::to_string(manifest.dimension));
    }
    triplets.push_back(std::move(t));
  }
  return Collection(std::move(manifest), std::move(triplets));
}

void write_collection(const Collection& collection, const std::filesystem::path& dir) {
  std::string body;
  for (std::size_t i = 0; i < collection.size(); ++i) {
    const Triplet& t = collection.triplet(i);
    for (double v : t.embedding) {
      if (!std::isfinite(v)) {
        throw ValidationError("triplet " + std::to_string(i) + " ('" + t.token + "') has a non-finite value");
      }
    }
    body += triplet_line(t);
  }
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / kTripletsFile, body);
  write_file_atomic(dir / kManifestFile, manifest_to_json(collection.manifest()).dump(2) + "\n");
}

ValidationReport validate_collection(const Collection& collection) {
  ValidationReport report;
  const CollectionManifest& m = collection.manifest();
  auto violation = [&](std::string loc, std::string msg) { report.violations.push_back({std::move(loc), std::move(msg)}); };
  auto warning = [&](std::string loc, std::string msg) { report.warnings.push_back({std::move(loc), std::move(msg)}); };

  if (m.embedder.empty()) {
    violation("manifest", "embedder is empty");
  } else if (!known_embedders().contains(m.embedder)) {
    warning("manifest", "unknown embedder '" + m.embedder + "'");
  }
  if (m.dimension == 0) violation("manifest", "dimension must be positive");
  if (m.values_per_slot == 0) violation("manifest", "values_per_slot must be positive");
  if (m.format_version != kCollectionFormatVersion) violation("manifest", "unsupported format_version");
  const std::set<std::string> domains(m.domains.begin(), m.domains.end());
  for (const auto& [label, domain] : m.label_domains) {
    if (!domains.contains(domain)) {
      violation("manifest", "label '" + label + "' maps to domain '" + domain + "' outside the manifest domains");
    }
  }

  std::map<std::pair<std::string, std::string>, std::size_t> seen;
  for (std::size_t i = 0; i < collection.size(); ++i) {
    const Triplet& t = collection.triplet(i);
    const std::string loc = "triplet " + std::to_string(i) + " (line " + std::to_string(i + 1) + ")";
    if (t.token.empty()) violation(loc, "empty token");
    if (t.label.empty()) violation(loc, "empty label");
    if (t.embedding.size() != m.dimension) {
      violation(loc, "vector has " + std::to_string(t.embedding.size()) + " values, manifest dimension is " +
                         std::to_string(m.dimension));
    }
    for (std::size_t j = 0; j < t.embedding.size(); ++j) {
      if (!std::isfinite(t.embedding[j])) {
        violation(loc, "non-finite value at component " + std::to_string(j));
        break;
      }
    }
    if (!m.label_domains.empty() && !m.label_domains.contains(t.label)) {
      violation(loc, "label '" + t.label + "' has no domain in the manifest");
    }
    auto [it, inserted] = seen.try_emplace({t.token, t.label}, i);
    if (!inserted) {
      warning(loc, "duplicate (token, label) pair first seen at triplet " + std::to_string(it->second));
    }
  }

  std::size_t indexed = 0;
  for (const auto& [label, idx] : collection.label_index()) {
    if (idx.empty()) violation("label_index", "label '" + label + "' has no triplets");
    for (std::size_t i : idx) {
      if (i >= collection.size() || collection.triplet(i).label != label) {
        violation("label_index", "inconsistent entry for label '" + label + "'");
      }
    }
    if (m.values_per_slot > 0 && idx.size() > m.values_per_slot) {
      warning("label_index", "label '" + label + "' has " + std::to_string(idx.size()) +
                                 " values, more than values_per_slot");
    }
    indexed += idx.size();
  }
  if (indexed != collection.size()) violation("label_index", "index does not cover every triplet");
  return report;
}

std::vector<DomainSplit> build_domain_splits(const std::vector<std::string>& domains,
                                             const std::map<std::string, std::set<std::string>>& labels_by_domain) {
  if (domains.size() < 2) throw ContractError("domain splitting needs at least two domains");
  std::map<std::string, std::string> owner;
  for (const auto& domain : domains) {
    auto it = labels_by_domain.find(domain);
    if (it == labels_by_domain.end() || it->second.empty()) {
      throw ContractError("domain '" + domain + "' has no labels");
    }
    for (const auto& label : it->second) {
      auto [pos, inserted] = owner.try_emplace(label, domain);
      if (!inserted && pos->second != domain) {
        throw ValidationError("label '" + label + "' appears in domains '" + pos->second + "' and '" + domain +
                              "'; namespace it upstream");
      }
    }
  }

  std::vector<DomainSplit> splits;
  for (const auto& held_out : domains) {
    DomainSplit split;
    split.test_domain = held_out;
    for (const auto& domain : domains) {
      const auto& labels = labels_by_domain.at(domain);
      if (domain == held_out) {
        split.test_labels.insert(labels.begin(), labels.end());
      } else {
        split.train_domains.push_back(domain);
        split.train_labels.insert(labels.begin(), labels.end());
      }
    }
    splits.push_back(std::move(split));
  }
  return splits;
}

SubsampleResult subsample_collection(const Collection& collection, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ContractError("subsample size must be positive");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> keep;
  SubsampleResult result;
  for (const auto& [label, indices] : collection.label_index()) {
    std::vector<std::size_t> pool = indices;
    if (pool.size() < n) {
      result.warnings.push_back("label '" + label + "': requested " + std::to_string(n) + " values, only " +
                                std::to_string(pool.size()) + " available");
    }
    const std::size_t take = std::min(n, pool.size());
    for (std::size_t i = 0; i < take && take < pool.size(); ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    keep.insert(keep.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(keep.begin(), keep.end());
  std::vector<Triplet> triplets;
  triplets.reserve(keep.size());
  for (std::size_t i : keep) triplets.push_back(collection.triplet(i));
  CollectionManifest manifest = collection.manifest();
  manifest.values_per_slot = n;
  result.collection = Collection(std::move(manifest), std::move(triplets));
  return result;
}

Collection select_labels(const Collection& collection, const std::set<std::string>& labels) {
  for (const auto& label : labels) {
    if (!collection.has_label(label)) throw ContractError("collection has no label '" + label + "'");
  }
  std::vector<Triplet> triplets;
  for (const auto& t : collection.triplets()) {
    if (labels.contains(t.label)) triplets.push_back(t);
  }
  CollectionManifest manifest = collection.manifest();
  if (!manifest.label_domains.empty()) {
    std::map<std::string, std::string> kept;
    std::set<std::string> used;
    for (const auto& label : labels) {
      auto it = manifest.label_domains.find(label);
      if (it == manifest.label_domains.end()) continue;
      kept.insert(*it);
      used.insert(it->second);
    }
    std::vector<std::string> domains;
    for (const auto& d : manifest.domains) {
      if (used.contains(d)) domains.push_back(d);
    }
    manifest.label_domains = std::move(kept);
    manifest.domains = std::move(domains);
  }
  return Collection(std::move(manifest), std::move(triplets));
}

Collection merge_collections(const std::vector<Collection>& parts) {
  if (parts.empty()) throw ContractError("nothing to merge");
  CollectionManifest manifest = parts.front().manifest();
  std::vector<Triplet> triplets;
  for (const auto& part : parts) {
    const CollectionManifest& m = part.manifest();
    if (m.embedder != manifest.embedder || m.dimension != manifest.dimension) {
      throw ValidationError("cannot merge collections with different embedder or dimension");
    }
    if (m.policy != manifest.policy) throw ValidationError("cannot merge collections with different policies");
    if (&part != &parts.front()) {
      for (const auto& d : m.domains) {
        if (std::find(manifest.domains.begin(), manifest.domains.end(), d) == manifest.domains.end()) {
          manifest.domains.push_back(d);
        }
      }
      for (const auto& [label, domain] : m.label_domains) {
        auto [it, inserted] = manifest.label_domains.try_emplace(label, domain);
        if (!inserted && it->second != domain) {
          throw ValidationError("label '" + label + "' belongs to two domains");
        }
      }
      manifest.values_per_slot = std::max(manifest.values_per_slot, m.values_per_slot);
    }
    triplets.insert(triplets.end(), part.triplets().begin(), part.triplets().end());
  }
  return Collection(std::move(manifest), std::move(triplets));
}

}  // namespace fewshot
