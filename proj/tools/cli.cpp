#include "cli.hpp"

#include <fmt/format.h>

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fewshot/collection.hpp"
#include "fewshot/episodes.hpp"
#include "fewshot/error.hpp"
#include "fewshot/experiment.hpp"
#include "fewshot/io.hpp"
#include "fewshot/log.hpp"
#include "fewshot/models.hpp"
#include "fewshot/synth.hpp"
#include "fewshot/training.hpp"

namespace fewshot {

namespace {

namespace fs = std::filesystem;

inline constexpr std::uint64_t kSplitStream = 0x7370'6c69'74ULL;
inline constexpr std::uint64_t kSubsampleStream = 0x7375'6273ULL;

struct RunFlags {
  std::string collection;
  std::string test_collection;
  std::string model = "prototypical";
  std::string embedder;
  std::size_t c_way = 5;
  std::size_t eval_c_way = 0;
  std::size_t k_shot = 5;
  std::size_t query_per_class = 0;
  std::size_t train_episodes = 10000;
  std::size_t eval_every = 500;
  std::size_t eval_episodes = 1000;
  std::size_t size = 0;
  std::uint64_t seed = 1;
  std::string optimizer = "adam";
  double learning_rate = 1e-3;
  std::string out;

  TrainConfig train_config() const {
    TrainConfig c;
    c.train_episodes = train_episodes;
    c.eval_every = eval_every;
    c.eval_episodes = eval_episodes;
    c.c_way = c_way;
    c.eval_c_way = eval_c_way;
    c.k_shot = k_shot;
    c.query_per_class = query_per_class;
    c.seed = seed;
    c.optimizer.kind = parse_optimizer_kind(optimizer);
    c.optimizer.learning_rate = learning_rate;
    return c;
  }
};

struct SplitFlags {
  std::string corpus_dir;
  std::string out;
  std::vector<std::size_t> sizes{50, 100, 200};
  std::size_t test_size = 200;
  std::uint64_t seed = 1;
};

struct GridFlags {
  std::string spec;
  std::string out;
  std::string reference;
  std::size_t threads = 1;
};

void add_episode_flags(CLI::App& cmd, RunFlags& f) {
  cmd.add_option("--c-way", f.c_way, "Classes per episode (C)")->capture_default_str();
  cmd.add_option("--eval-c-way", f.eval_c_way, "Classes per evaluation episode; 0 uses --c-way")
      ->capture_default_str();
  cmd.add_option("--k-shot", f.k_shot, "Support examples per class (K)")->capture_default_str();
  cmd.add_option("--query-per-class", f.query_per_class, "Query examples per class; 0 uses --k-shot")
      ->capture_default_str();
  cmd.add_option("--eval-episodes", f.eval_episodes, "Episodes per evaluation")->capture_default_str();
  cmd.add_option("--seed", f.seed, "Base seed for sampling and initialization")->capture_default_str();
  cmd.add_option("--embedder", f.embedder, "Expected embedder of the collections; empty accepts any");
}

void check_embedder(const Collection& c, const std::string& expected, const std::string& what) {
  if (!expected.empty() && c.manifest().embedder != expected) {
    throw ContractError(fmt::format("{} was built with embedder '{}', not '{}'", what, c.manifest().embedder,
                                    expected));
  }
}

std::string eval_csv(const EvalRun& run) {
  std::string out = "step,accuracy\n";
  for (const auto& c : run.checkpoints) out += fmt::format("{},{}\n", c.step, format_double(c.accuracy));
  out += fmt::format("mean,{}\n", format_double(run.final_accuracy));
  return out;
}

std::string loss_csv(const std::vector<double>& losses) {
  std::string out = "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) out += fmt::format("{},{}\n", i + 1, format_double(losses[i]));
  return out;
}

int cmd_validate(const std::string& path) {
  const Collection collection = read_collection(path);
  const ValidationReport report = validate_collection(collection);
  for (const auto& v : report.violations) std::cout << "violation " << v.location << ": " << v.message << "\n";
  for (const auto& w : report.warnings) std::cout << "warning " << w.location << ": " << w.message << "\n";
  std::cout << fmt::format("{} triplets, {} labels, {} violations, {} warnings\n", collection.size(),
                           collection.labels().size(), report.violations.size(), report.warnings.size());
  log_info("validate path={} ok={}", path, report.ok());
  return report.ok() ? 0 : 1;
}

Collection load_corpus(const fs::path& dir) {
  if (fs::exists(dir / kManifestFile)) return read_collection(dir);
  std::vector<fs::path> subdirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / kManifestFile)) subdirs.push_back(entry.path());
  }
  if (subdirs.empty()) throw ContractError("no collection found under " + dir.string());
  std::sort(subdirs.begin(), subdirs.end());
  std::vector<Collection> parts;
  for (const auto& sub : subdirs) {
    Collection part = read_collection(sub);
    CollectionManifest manifest = part.manifest();
    if (manifest.label_domains.empty()) {
      if (manifest.domains.size() != 1) {
        throw ValidationError(sub.string() + ": a per-domain collection must name exactly one domain");
      }
      for (const auto& label : part.labels()) manifest.label_domains[label] = manifest.domains.front();
    }
    parts.emplace_back(std::move(manifest), part.triplets());
  }
  return merge_collections(parts);
}

int cmd_split(const SplitFlags& f) {
  const Collection corpus = load_corpus(f.corpus_dir);
  const CollectionManifest& manifest = corpus.manifest();
  if (manifest.label_domains.empty()) throw ValidationError("corpus manifest has no label_domains map");
  std::map<std::string, std::set<std::string>> labels_by_domain;
  for (const auto& label : corpus.labels()) {
    auto it = manifest.label_domains.find(label);
    if (it == manifest.label_domains.end()) throw ValidationError("label '" + label + "' has no domain");
    labels_by_domain[it->second].insert(label);
  }
  const auto splits = build_domain_splits(manifest.domains, labels_by_domain);
  const fs::path root = fs::path(f.out) / manifest.embedder;
  for (std::size_t di = 0; di < splits.size(); ++di) {
    const DomainSplit& split = splits[di];
    const std::uint64_t base = derive_seed(f.seed, kSplitStream, di);
    const fs::path dir = root / split.test_domain;
    nlohmann::ordered_json warnings = nlohmann::ordered_json::array();

    const Collection train = select_labels(corpus, split.train_labels);
    for (std::size_t n : f.sizes) {
      SubsampleResult sub = subsample_collection(train, n, derive_seed(base, kSubsampleStream, n));
      for (auto& w : sub.warnings) warnings.push_back(fmt::format("train_{}: {}", n, w));
      write_collection(sub.collection, collection_path(f.out, manifest.embedder, split.test_domain,
                                                       CollectionRole::train, n));
    }
    const Collection test = select_labels(corpus, split.test_labels);
    SubsampleResult sub = subsample_collection(test, f.test_size, derive_seed(base, kSubsampleStream + 1, f.test_size));
    for (auto& w : sub.warnings) warnings.push_back(fmt::format("test_{}: {}", f.test_size, w));
    write_collection(sub.collection,
                     collection_path(f.out, manifest.embedder, split.test_domain, CollectionRole::test, f.test_size));

    nlohmann::ordered_json j;
    j["test_domain"] = split.test_domain;
    j["train_domains"] = split.train_domains;
    j["train_labels"] = split.train_labels;
    j["test_labels"] = split.test_labels;
    j["sizes"] = f.sizes;
    j["test_size"] = f.test_size;
    j["seed"] = f.seed;
    j["warnings"] = warnings;
    write_file_atomic(dir / "split.json", j.dump(2) + "\n");
    log_info("split domain={} train_labels={} test_labels={} warnings={}", split.test_domain,
             split.train_labels.size(), split.test_labels.size(), warnings.size());
  }
  return 0;
}

int cmd_train(const RunFlags& f) {
  Collection train = read_collection(f.collection);
  check_embedder(train, f.embedder, f.collection);
  if (f.size > 0) {
    SubsampleResult sub = subsample_collection(train, f.size, derive_seed(f.seed, kSubsampleStream, f.size));
    for (const auto& w : sub.warnings) log_info("subsample warning: {}", w);
    train = std::move(sub.collection);
  }
  const TrainConfig config = f.train_config();
  ModelConfig model;
  model.kind = parse_model_kind(f.model);
  model.input_dim = train.manifest().dimension;
  log_info("train model={} c_way={} k_shot={} episodes={} seed={}", f.model, config.c_way, config.k_shot,
           config.train_episodes, config.seed);

  TrainResult result;
  if (!f.test_collection.empty()) {
    const Collection test = read_collection(f.test_collection);
    check_embedder(test, f.embedder, f.test_collection);
    result = train_and_evaluate(model, train, test, config);
    write_file_atomic(fs::path(f.out) / "eval.csv", eval_csv(result.eval));
    std::cout << fmt::format("accuracy {:.4f}\n", result.eval.final_accuracy);
  } else {
    result = meta_train(model, train, config);
  }
  write_checkpoint(result.bundle, fs::path(f.out) / "checkpoint.json");
  write_file_atomic(fs::path(f.out) / "loss_curve.csv", loss_csv(result.loss_curve));
  log_info("train done out={}", f.out);
  return 0;
}

int cmd_eval(const RunFlags& f, const std::string& checkpoint) {
  const ModelBundle bundle = read_checkpoint(checkpoint);
  const Collection test = read_collection(f.test_collection);
  check_embedder(test, f.embedder, f.test_collection);
  const EvalRun run = meta_test(bundle, test, f.train_config());
  write_file_atomic(fs::path(f.out) / "eval.csv", eval_csv(run));
  std::cout << fmt::format("accuracy {:.4f}\n", run.final_accuracy);
  log_info("eval done model={} accuracy={:.4f}", to_string(bundle.config.kind), run.final_accuracy);
  return 0;
}

int cmd_grid(const GridFlags& f) {
  const GridSpec spec = read_grid_spec(f.spec);
  log_info("grid domains={} embedders={} models={} threads={}", spec.domains.size(), spec.embedders.size(),
           spec.models.size(), f.threads);
  const GridResult grid = run_experiment_grid(spec, directory_loader(spec.collections_root), f.threads);

  std::string rows = "domain,embedder,model,k_shot,size,accuracy,note\n";
  for (const auto& r : grid.rows) {
    std::string note = r.note;
    std::replace(note.begin(), note.end(), ',', ';');
    std::replace(note.begin(), note.end(), '\n', ' ');
    rows += fmt::format("{},{},{},{},{},{},{}\n", r.domain, r.embedder, to_string(r.model), r.k_shot, r.size,
                        r.accuracy ? format_double(*r.accuracy) : "NA", note);
  }
  std::optional<ReferenceTable> reference;
  if (!f.reference.empty()) reference = read_reference_table(f.reference);
  const fs::path out(f.out);
  write_file_atomic(out / "results.csv", rows);
  write_file_atomic(out / "report.csv", aggregate_report(grid, ReportFormat::csv));
  write_file_atomic(out / "report.md",
                    aggregate_report(grid, ReportFormat::markdown, reference ? &*reference : nullptr));
  log_info("grid done out={}", f.out);
  return 0;
}

int cmd_synth(const SynthSpec& spec, const std::string& out) {
  write_collection(make_synthetic_collection(spec), out);
  log_info("synth classes={} dim={} separation={} out={}", spec.classes, spec.dimension, spec.separation, out);
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Metric-based few-shot learners over precomputed embeddings", "fewshot"};
  app.require_subcommand(1);

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Check a collection for integrity problems");
  validate->add_option("--collection", validate_path, "Collection directory")->required();

  SplitFlags split_flags;
  auto* split = app.add_subcommand("split", "Build domain-disjoint train/test collections, one per held-out domain");
  split->add_option("--corpus-dir", split_flags.corpus_dir,
                    "Collection directory with label_domains, or a directory of per-domain collections")
      ->required();
  split->add_option("--out", split_flags.out, "Output root; writes <out>/<embedder>/<domain>/")->required();
  split->add_option("--sizes", split_flags.sizes, "Values kept per label (N) for training collections")
      ->capture_default_str()
      ->delimiter(',');
  split->add_option("--test-size", split_flags.test_size, "Values kept per label for the test collection")
      ->capture_default_str();
  split->add_option("--seed", split_flags.seed, "Subsampling seed")->capture_default_str();

  RunFlags train_flags;
  auto* train = app.add_subcommand("train", "Meta-train a model; evaluates at checkpoints if a test set is given");
  train->add_option("--collection", train_flags.collection, "Training collection directory")->required();
  train->add_option("--test-collection", train_flags.test_collection, "Test collection directory");
  train->add_option("--model", train_flags.model, "Learner")
      ->capture_default_str()
      ->check(CLI::IsMember({"matching", "prototypical", "relation", "attentive"}));
  add_episode_flags(*train, train_flags);
  train->add_option("--train-episodes", train_flags.train_episodes, "Training episodes")->capture_default_str();
  train->add_option("--eval-every", train_flags.eval_every, "Episodes between evaluations")->capture_default_str();
  train->add_option("--size", train_flags.size, "Subsample the training collection to N values per label; 0 keeps all")
      ->capture_default_str();
  train->add_option("--optimizer", train_flags.optimizer, "Optimizer")
      ->capture_default_str()
      ->check(CLI::IsMember({"adam", "sgd"}));
  train->add_option("--learning-rate", train_flags.learning_rate, "Learning rate")->capture_default_str();
  train->add_option("--out", train_flags.out, "Output directory")->required();

  RunFlags eval_flags;
  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a test collection");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--test-collection", eval_flags.test_collection, "Test collection directory")->required();
  add_episode_flags(*eval, eval_flags);
  eval->add_option("--out", eval_flags.out, "Output directory")->required();

  GridFlags grid_flags;
  auto* grid = app.add_subcommand("grid", "Run an experiment grid and write CSV and Markdown reports");
  grid->add_option("--spec", grid_flags.spec, "Grid spec JSON file")->required();
  grid->add_option("--threads", grid_flags.threads, "Worker threads")->capture_default_str();
  grid->add_option("--reference", grid_flags.reference, "Published accuracies CSV shown beside results");
  grid->add_option("--out", grid_flags.out, "Output directory")->required();

  SynthSpec synth_spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a Gaussian-cluster collection");
  synth->add_option("--classes", synth_spec.classes, "Number of labels")->capture_default_str();
  synth->add_option("--dim", synth_spec.dimension, "Vector dimension")->capture_default_str();
  synth->add_option("--separation", synth_spec.separation, "Norm of each class mean")->capture_default_str();
  synth->add_option("--values-per-class", synth_spec.values_per_class, "Triplets per label")->capture_default_str();
  synth->add_option("--label-prefix", synth_spec.label_prefix, "Label prefix")->capture_default_str();
  synth->add_option("--seed", synth_spec.seed, "Generator seed")->capture_default_str();
  synth->add_option("--out", synth_out, "Output collection directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*validate) return cmd_validate(validate_path);
    if (*split) return cmd_split(split_flags);
    if (*train) return cmd_train(train_flags);
    if (*eval) return cmd_eval(eval_flags, checkpoint);
    if (*grid) return cmd_grid(grid_flags);
    if (*synth) return cmd_synth(synth_spec, synth_out);
  } catch (const std::exception& e) {
    log_error("{}", e.what());
    return 1;
  }
  return 2;
}

}  // namespace fewshot
