#include "fewshot/experiment.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "fewshot/error.hpp"
#include "fewshot/io.hpp"
#include "fewshot/log.hpp"

namespace fewshot {

namespace {

using json = nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw ParseError(where + ": unknown key '" + key + "'");
  }
}

using CollectionKey = std::tuple<std::string, std::string, CollectionRole, std::size_t>;

std::string percent(double accuracy) { return fmt::format("{:.1f}", accuracy * 100.0); }

struct Aggregate {
  double sum = 0.0;
  std::size_t count = 0;
};

}  // namespace

GridSpec read_grid_spec(const std::filesystem::path& path) {
  GridSpec spec;
  const std::string where = path.string();
  try {
    const json j = json::parse(read_file(path));
    reject_unknown(j, {"collections", "domains", "embedders", "models", "k_shots", "sizes", "test_size", "train",
                       "model", "eval_c_way"},
                   where);
    std::filesystem::path root = j.at("collections").get<std::string>();
    spec.collections_root = root.is_absolute() ? root : path.parent_path() / root;
    spec.domains = j.at("domains").get<std::vector<std::string>>();
    spec.embedders = j.at("embedders").get<std::vector<std::string>>();
    spec.models.clear();
    for (const auto& m : j.at("models")) spec.models.push_back(parse_model_kind(m.get<std::string>()));
    if (j.contains("k_shots")) spec.k_shots = j.at("k_shots").get<std::vector<std::size_t>>();
    if (j.contains("sizes")) spec.sizes = j.at("sizes").get<std::vector<std::size_t>>();
    if (j.contains("test_size")) spec.test_size = j.at("test_size").get<std::size_t>();
    if (j.contains("eval_c_way")) spec.eval_c_way = j.at("eval_c_way").get<std::map<std::string, std::size_t>>();
    if (j.contains("train")) {
      const json& t = j.at("train");
      reject_unknown(t, {"train_episodes", "eval_every", "eval_episodes", "c_way", "query_per_class", "seed",
                         "optimizer", "learning_rate"},
                     where + " [train]");
      TrainConfig& c = spec.train;
      c.train_episodes = t.value("train_episodes", c.train_episodes);
      c.eval_every = t.value("eval_every", c.eval_every);
      c.eval_episodes = t.value("eval_episodes", c.eval_episodes);
      c.c_way = t.value("c_way", c.c_way);
      c.query_per_class = t.value("query_per_class", c.query_per_class);
      c.seed = t.value("seed", c.seed);
      if (t.contains("optimizer")) c.optimizer.kind = parse_optimizer_kind(t.at("optimizer").get<std::string>());
      c.optimizer.learning_rate = t.value("learning_rate", c.optimizer.learning_rate);
    }
    if (j.contains("model")) {
      const json& m = j.at("model");
      reject_unknown(m, {"encoder_hidden", "encoder_out", "channels", "kernel", "fc_hidden", "parallel_blocks"},
                     where + " [model]");
      ModelConfig& c = spec.model;
      c.encoder_hidden = m.value("encoder_hidden", c.encoder_hidden);
      c.encoder_out = m.value("encoder_out", c.encoder_out);
      c.channels = m.value("channels", c.channels);
      c.kernel = m.value("kernel", c.kernel);
      c.fc_hidden = m.value("fc_hidden", c.fc_hidden);
      c.parallel_blocks = m.value("parallel_blocks", c.parallel_blocks);
    }
  } catch (const json::exception& e) {
    throw ParseError(where + ": " + e.what());
  }
  spec.train.validate();
  return spec;
}

std::filesystem::path collection_path(const std::filesystem::path& root, const std::string& embedder,
                                      const std::string& domain, CollectionRole role, std::size_t size) {
  const std::string leaf = (role == CollectionRole::train ? "train_" : "test_") + std::to_string(size);
  return root / embedder / domain / leaf;
}

CollectionLoader directory_loader(const std::filesystem::path& root) {
  return [root](const std::string& embedder, const std::string& domain, CollectionRole role,
                std::size_t size) -> std::optional<Collection> {
    const auto dir = collection_path(root, embedder, domain, role, size);
    if (!std::filesystem::exists(dir / kManifestFile)) return std::nullopt;
    return read_collection(dir);
  };
}

GridResult run_experiment_grid(const GridSpec& spec, const CollectionLoader& loader, std::size_t threads) {
  std::vector<GridRow> rows;
  for (const auto& domain : spec.domains)
    for (const auto& embedder : spec.embedders)
      for (ModelKind model : spec.models)
        for (std::size_t k : spec.k_shots)
          for (std::size_t size : spec.sizes) {
            GridRow row;
            row.domain = domain;
            row.embedder = embedder;
            row.model = model;
            row.k_shot = k;
            row.size = size;
            rows.push_back(std::move(row));
          }

  // Collections are loaded once, up front, so workers only read shared state.
  std::map<CollectionKey, std::optional<Collection>> collections;
  for (const auto& domain : spec.domains) {
    for (const auto& embedder : spec.embedders) {
      collections.emplace(CollectionKey{embedder, domain, CollectionRole::test, spec.test_size},
                          loader(embedder, domain, CollectionRole::test, spec.test_size));
      for (std::size_t size : spec.sizes) {
        collections.emplace(CollectionKey{embedder, domain, CollectionRole::train, size},
                            loader(embedder, domain, CollectionRole::train, size));
      }
    }
  }

  auto run_cell = [&](GridRow& row) {
    const auto& train = collections.at({row.embedder, row.domain, CollectionRole::train, row.size});
    const auto& test = collections.at({row.embedder, row.domain, CollectionRole::test, spec.test_size});
    if (!train || !test) {
      row.note = std::string("missing ") + (!train ? "train" : "test") + " collection";
      log_error("grid cell {}/{}/{}/K={}/N={}: {}", row.domain, row.embedder, to_string(row.model), row.k_shot,
                row.size, row.note);
      return;
    }
    TrainConfig config = spec.train;
    config.k_shot = row.k_shot;
    if (auto it = spec.eval_c_way.find(row.domain); it != spec.eval_c_way.end()) config.eval_c_way = it->second;
    ModelConfig model = spec.model;
    model.kind = row.model;
    model.input_dim = train->manifest().dimension;
    try {
      row.accuracy = train_and_evaluate(model, *train, *test, config).eval.final_accuracy;
      log_info("grid cell {}/{}/{}/K={}/N={} accuracy={:.4f}", row.domain, row.embedder, to_string(row.model),
               row.k_shot, row.size, *row.accuracy);
    } catch (const std::exception& e) {
      row.note = e.what();
      log_error("grid cell {}/{}/{}/K={}/N={} failed: {}", row.domain, row.embedder, to_string(row.model),
                row.k_shot, row.size, row.note);
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, rows.size()));
  if (workers == 1) {
    for (auto& row : rows) run_cell(row);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < rows.size(); i = next++) run_cell(rows[i]);
      });
    }
    for (auto& t : pool) t.join();
  }
  return GridResult{std::move(rows)};
}

ReferenceTable read_reference_table(const std::filesystem::path& path) {
  ReferenceTable table;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || line.rfind("domain,", 0) == 0) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (fields.size() != 5) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 5 fields");
    try {
      table[{fields[0], fields[1], fields[2], std::stoul(fields[3])}] = std::stod(fields[4]);
    } catch (const std::logic_error&) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad number");
    }
  }
  return table;
}

std::string aggregate_report(const GridResult& grid, ReportFormat format, const ReferenceTable* reference) {
  if (grid.rows.empty()) throw ContractError("cannot report an empty grid");
  using Key = std::tuple<std::string, std::string, std::string, std::size_t>;
  std::map<Key, Aggregate> cells;
  for (const auto& row : grid.rows) {
    Aggregate& a = cells[{row.domain, row.embedder, std::string(to_string(row.model)), row.k_shot}];
    if (row.accuracy) {
      a.sum += *row.accuracy;
      ++a.count;
    }
  }
  auto value = [](const Aggregate& a) { return a.count ? percent(a.sum / static_cast<double>(a.count)) : "NA"; };

  std::string out;
  if (format == ReportFormat::csv) {
    out = "domain,embedder,model,k_shot,accuracy\n";
    for (const auto& [key, agg] : cells) {
      const auto& [domain, embedder, model, k] = key;
      out += fmt::format("{},{},{},{},{}\n", domain, embedder, model, k, value(agg));
    }
    return out;
  }

  std::set<std::string> embedders, domains;
  std::set<std::pair<std::string, std::size_t>> columns;
  for (const auto& [key, agg] : cells) {
    domains.insert(std::get<0>(key));
    embedders.insert(std::get<1>(key));
    columns.insert({std::get<2>(key), std::get<3>(key)});
  }
  for (const auto& embedder : embedders) {
    out += "## " + embedder + "\n\n| Domain |";
    for (const auto& [model, k] : columns) out += fmt::format(" {} K={} |", model, k);
    out += "\n|---|";
    for (std::size_t i = 0; i < columns.size(); ++i) out += "---|";
    out += "\n";
    for (const auto& domain : domains) {
      out += "| " + domain + " |";
      for (const auto& [model, k] : columns) {
        auto it = cells.find({domain, embedder, model, k});
        std::string cell = it == cells.end() ? "" : value(it->second);
        if (reference) {
          auto ref = reference->find({domain, embedder, model, k});
          if (ref != reference->end()) cell += fmt::format(" (ref {:.1f})", ref->second);
        }
        out += " " + cell + " |";
      }
      out += "\n";
    }
    out += "\n";
  }
  if (reference) out += "Values marked \"ref\" are published reference accuracies, not results of this run.\n";
  return out;
}

}  // namespace fewshot
