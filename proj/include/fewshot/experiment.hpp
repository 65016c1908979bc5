#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "fewshot/collection.hpp"
#include "fewshot/models.hpp"
#include "fewshot/training.hpp"

namespace fewshot {

struct GridSpec {
  /// Root for directory_loader().
  std::filesystem::path collections_root;
  std::vector<std::string> domains;
  std::vector<std::string> embedders;
  std::vector<ModelKind> models;
  std::vector<std::size_t> k_shots{5, 10, 15};
  std::vector<std::size_t> sizes{50, 100, 200};
  std::size_t test_size = 200;
  /// k_shot and eval_c_way are set per cell.
  TrainConfig train;
  /// Widths; kind and input_dim are set per cell.
  ModelConfig model;
  /// Evaluation C per held-out domain.
  std::map<std::string, std::size_t> eval_c_way{{"SearchCreativeWork", 3}};
};

/// Reads a grid spec JSON file; a relative collections root is resolved
/// against the spec's directory. Unknown keys are rejected.
GridSpec read_grid_spec(const std::filesystem::path& path);

struct GridRow {
  std::string domain;
  std::string embedder;
  ModelKind model = ModelKind::prototypical;
  std::size_t k_shot = 0;
  std::size_t size = 0;
  /// Empty when the cell could not run; see note.
  std::optional<double> accuracy;
  std::string note;

  friend bool operator==(const GridRow&, const GridRow&) = default;
};

struct GridResult {
  std::vector<GridRow> rows;

  friend bool operator==(const GridResult&, const GridResult&) = default;
};

enum class CollectionRole { train, test };

/// Returns nullopt when a collection does not exist.
using CollectionLoader = std::function<std::optional<Collection>(const std::string& embedder, const std::string& domain,
                                                                 CollectionRole role, std::size_t size)>;

/// Loader over `<root>/<embedder>/<domain>/{train,test}_<size>/`.
CollectionLoader directory_loader(const std::filesystem::path& root);
std::filesystem::path collection_path(const std::filesystem::path& root, const std::string& embedder,
                                      const std::string& domain, CollectionRole role, std::size_t size);

/// One row per (domain, embedder, model, K, size). Cells run on up to
/// `threads` worker threads; the result does not depend on the count.
GridResult run_experiment_grid(const GridSpec& spec, const CollectionLoader& loader, std::size_t threads = 1);

enum class ReportFormat { csv, markdown };

/// Published accuracies in percent keyed by (domain, embedder, model, K).
using ReferenceTable = std::map<std::tuple<std::string, std::string, std::string, std::size_t>, double>;

ReferenceTable read_reference_table(const std::filesystem::path& path);

/// Accuracies averaged over collection sizes, in percent with one decimal,
/// ordered by domain, embedder, model, then K. Throws ContractError on an
/// empty grid.
std::string aggregate_report(const GridResult& grid, ReportFormat format, const ReferenceTable* reference = nullptr);

}  // namespace fewshot
