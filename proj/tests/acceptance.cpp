// Acceptance checks. Prints one PASS/FAIL line per criterion; with
// arguments, runs only the named criteria. Exit status is 1 if any failed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "cli.hpp"
#include "fewshot/collection.hpp"
#include "fewshot/error.hpp"
#include "fewshot/gradcheck.hpp"
#include "fewshot/io.hpp"
#include "fewshot/log.hpp"
#include "fewshot/models.hpp"
#include "fewshot/synth.hpp"
#include "fewshot/training.hpp"
#include "instances.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace fewshot;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool passed = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "fewshot");
  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  std::ostringstream sink;
  std::streambuf* saved = std::cout.rdbuf(sink.rdbuf());
  const int code = run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(saved);
  return code;
}

const std::vector<ModelKind> kModels{ModelKind::matching, ModelKind::prototypical, ModelKind::relation,
                                     ModelKind::attentive};

// Gradient suite -----------------------------------------------------------

Outcome gradient_suite() {
  const auto start = Clock::now();
  double worst = 0.0;
  std::string worst_where;
  std::size_t failures = 0, kinks = 0;
  auto record = [&](const std::string& what, std::uint64_t seed, const GradCheckReport& r) {
    kinks += r.skipped_kinks;
    if (!r.passed) ++failures;
    if (r.max_relative_error > worst) {
      worst = r.max_relative_error;
      worst_where = fmt::format("{} seed {} {}", what, seed, r.worst_parameter);
    }
  };
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    {
      Graph g;
      const NodeId loss = instances::encoder_loss(g, 1000 + seed);
      record("encoder", seed, grad_check(g, loss));
    }
    {
      Graph g;
      const NodeId loss = instances::relation_head_loss(g, 2000 + seed);
      record("relation", seed, grad_check(g, loss));
    }
    {
      Graph g;
      const NodeId loss = instances::attentive_loss(g, 3000 + seed, seed % 2 == 1);
      record("attentive", seed, grad_check(g, loss));
    }
  }
  const double elapsed = seconds_since(start);
  return {failures == 0 && elapsed < 60.0,
          fmt::format("150 instances, {} failed, max rel err {:.2e} ({}), {} kink elements skipped, {:.1f} s",
                      failures, worst, worst_where, kinks, elapsed)};
}

// Oracle equivalence -------------------------------------------------------

Outcome oracle_equivalence() {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> value(-5, 5);
  std::uniform_int_distribution<std::size_t> small(1, 5), dims(1, 8);
  double worst = 0.0;
  auto nonzero_row = [&](std::size_t d) {
    std::vector<double> v(d);
    do {
      for (double& x : v) x = value(rng);
    } while (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }));
    return v;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t c_way = small(rng), k = small(rng), d = dims(rng);
    oracles::Matrix rows;
    std::vector<std::size_t> classes;
    Tensor support({c_way * k, d});
    for (std::size_t i = 0; i < c_way * k; ++i) {
      rows.push_back(nonzero_row(d));
      classes.push_back(i % c_way);
      for (std::size_t j = 0; j < d; ++j) support.at(i, j) = rows.back()[j];
    }
    const std::vector<double> q = nonzero_row(d);
    const Tensor query = Tensor::vector(q);
    const auto m = matching_scores(support, classes, query).scores;
    const auto p = prototypical_scores(support, classes, query).scores;
    const auto om = oracles::matching(rows, classes, q, c_way);
    const auto op = oracles::prototypical(rows, classes, q, c_way);
    for (std::size_t c = 0; c < c_way; ++c) {
      worst = std::max({worst, std::abs(m[c] - om[c]), std::abs(p[c] - op[c])});
    }
  }
  return {worst <= 1e-12, fmt::format("1000 integer episodes, max abs difference {:.2e}", worst)};
}

// One-shot equivalence -----------------------------------------------------

Outcome one_shot_equivalence() {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<std::size_t> ways(2, 5), dims(2, 16);
  auto unit = [&](std::size_t d) {
    std::vector<double> v(d);
    double n = 0.0;
    for (double& x : v) {
      x = normal(rng);
      n += x * x;
    }
    for (double& x : v) x /= std::sqrt(n);
    return v;
  };
  std::size_t agree = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t c_way = ways(rng), d = dims(rng);
    Tensor support({c_way, d});
    std::vector<std::size_t> classes(c_way);
    for (std::size_t c = 0; c < c_way; ++c) {
      classes[c] = c;
      const auto row = unit(d);
      for (std::size_t j = 0; j < d; ++j) support.at(c, j) = row[j];
    }
    if (one_shot_equivalence_check(support, classes, Tensor::vector(unit(d)))) ++agree;
  }
  return {agree == 1000, fmt::format("{}/1000 episodes with identical predictions", agree)};
}

// Attentive fixed point ----------------------------------------------------

Outcome attentive_fixed_point() {
  std::size_t bad_r = 0, bad_a = 0, checked = 0;
  for (bool parallel : {false, true}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      ModelConfig c;
      c.kind = ModelKind::attentive;
      c.input_dim = 16;
      c.parallel_blocks = parallel;
      ModelBundle b = init_model(c, seed);
      for (auto& [name, t] : b.params) {
        if (name == "attentive.u" || name.rfind("attentive.classifier", 0) == 0 || name.back() == 'b') t.fill(0.0);
      }
      std::mt19937_64 rng(seed);
      const Tensor support = testing_support::random_tensor({6, 16}, rng, 2.0);
      const AttentiveResult r =
          attentive_relation_scores(b, support, {0, 1, 2, 0, 1, 2}, testing_support::random_tensor({16}, rng, 2.0));
      for (const auto& diag : r.per_class) {
        ++checked;
        if (diag.relation != 0.5) ++bad_r;
        for (double a : diag.attention) bad_a += a != 0.5;
      }
    }
  }
  return {bad_r == 0 && bad_a == 0,
          fmt::format("{} class scores, {} not exactly 0.5; {} attention values not exactly 0.5", checked, bad_r,
                      bad_a)};
}

// Synthetic benchmark ------------------------------------------------------

struct Benchmark {
  Collection train, test, flat_test;
};

TrainConfig synthetic_config(std::size_t k_shot) {
  TrainConfig c;
  c.train_episodes = 2000;
  c.eval_every = 100;
  c.eval_episodes = 200;
  c.c_way = 3;
  c.k_shot = k_shot;
  c.seed = 1;
  return c;
}

Collection synth_via_cli(const fs::path& dir, const std::string& separation) {
  if (run({"synth", "--classes", "10", "--dim", "32", "--separation", separation, "--values-per-class", "200",
           "--seed", "7", "--out", dir.string()}) != 0) {
    throw ContractError("synth command failed");
  }
  return read_collection(dir);
}

const Benchmark& benchmark() {
  static const Benchmark b = [] {
    testing_support::TempDir dir("acceptance_synth");
    const Collection full = synth_via_cli(dir / "separated", "4.0");
    const Collection flat = synth_via_cli(dir / "flat", "0");
    const auto labels = full.labels();
    const std::set<std::string> train_labels(labels.begin(), labels.begin() + 7);
    const std::set<std::string> test_labels(labels.begin() + 7, labels.end());
    return Benchmark{select_labels(full, train_labels), select_labels(full, test_labels),
                     select_labels(flat, test_labels)};
  }();
  return b;
}

std::map<std::pair<ModelKind, std::size_t>, double>& accuracy_cache() {
  static std::map<std::pair<ModelKind, std::size_t>, double> cache;
  return cache;
}

double synthetic_accuracy(ModelKind kind, std::size_t k_shot) {
  auto& cache = accuracy_cache();
  const auto key = std::make_pair(kind, k_shot);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  ModelConfig m;
  m.kind = kind;
  const TrainResult r = train_and_evaluate(m, benchmark().train, benchmark().test, synthetic_config(k_shot));
  return cache[key] = r.eval.final_accuracy;
}

Outcome synthetic_end_to_end() {
  const auto start = Clock::now();
  bool ok = true;
  std::string detail;
  for (ModelKind kind : kModels) {
    const double acc = synthetic_accuracy(kind, 5);
    ok = ok && acc >= 0.90;
    detail += fmt::format("{} {:.3f}; ", to_string(kind), acc);
  }
  detail += "chance";
  TrainConfig chance = synthetic_config(5);
  chance.eval_episodes = 1000;
  for (ModelKind kind : kModels) {
    ModelConfig m;
    m.kind = kind;
    m.input_dim = benchmark().flat_test.manifest().dimension;
    const double acc = meta_test(init_model(m, 5), benchmark().flat_test, chance).final_accuracy;
    ok = ok && acc >= 0.28 && acc <= 0.39;
    detail += fmt::format(" {} {:.3f}", to_string(kind), acc);
  }
  const double elapsed = seconds_since(start);
  ok = ok && elapsed < 600.0;
  return {ok, detail + fmt::format("; {:.0f} s", elapsed)};
}

Outcome k_monotonicity() {
  bool ok = true;
  std::string detail;
  for (ModelKind kind : kModels) {
    const double k5 = synthetic_accuracy(kind, 5), k15 = synthetic_accuracy(kind, 15);
    ok = ok && k15 >= k5 - 0.02;
    detail += fmt::format("{} K=5 {:.3f} K=15 {:.3f}; ", to_string(kind), k5, k15);
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

// Determinism --------------------------------------------------------------

Outcome determinism() {
  testing_support::TempDir dir("acceptance_determinism");
  bool ok = true;
  std::string detail;
  run({"synth", "--classes", "6", "--dim", "8", "--values-per-class", "20", "--label-prefix", "tr", "--seed", "1",
       "--out", (dir / "tr").string()});
  run({"synth", "--classes", "4", "--dim", "8", "--values-per-class", "20", "--label-prefix", "te", "--seed", "2",
       "--out", (dir / "te").string()});
  for (ModelKind kind : kModels) {
    const std::string model(to_string(kind));
    for (const std::string out : {"a", "b"}) {
      ok = ok && run({"train", "--collection", (dir / "tr").string(), "--test-collection", (dir / "te").string(),
                      "--model", model, "--c-way", "3", "--k-shot", "3", "--train-episodes", "40", "--eval-every",
                      "20", "--eval-episodes", "10", "--seed", "5", "--out", (dir / model / out).string()}) == 0;
    }
    for (const std::string file : {"checkpoint.json", "loss_curve.csv"}) {
      const bool same = read_file(dir / model / "a" / file) == read_file(dir / model / "b" / file);
      ok = ok && same;
      if (!same) detail += fmt::format("{} {} differs; ", model, file);
    }
  }

  for (const std::string domain : {"Alpha", "Beta", "Gamma"}) {
    SynthSpec s;
    s.classes = 4;
    s.dimension = 8;
    s.values_per_class = 30;
    s.label_prefix = domain;
    s.seed = std::hash<std::string>{}(domain);
    const Collection c = make_synthetic_collection(s);
    CollectionManifest m = c.manifest();
    m.domains = {domain};
    m.label_domains.clear();
    m.policy = "gaussian clusters";
    write_collection(Collection(m, c.triplets()), dir / "corpus" / domain);
  }
  ok = ok && run({"split", "--corpus-dir", (dir / "corpus").string(), "--out", (dir / "splits").string(), "--sizes",
                  "10,20", "--test-size", "30"}) == 0;
  write_file_atomic(dir / "grid.json", R"({
    "collections": "splits",
    "domains": ["Alpha", "Beta", "Gamma"],
    "embedders": ["synthetic"],
    "models": ["matching", "prototypical", "relation", "attentive"],
    "k_shots": [2, 4],
    "sizes": [10, 20],
    "test_size": 30,
    "train": {"train_episodes": 20, "eval_every": 10, "eval_episodes": 10, "c_way": 3},
    "model": {"encoder_hidden": 16, "encoder_out": 8, "channels": 4, "fc_hidden": 8}
  })");
  ok = ok && run({"grid", "--spec", (dir / "grid.json").string(), "--out", (dir / "serial").string()}) == 0;
  ok = ok && run({"grid", "--spec", (dir / "grid.json").string(), "--threads", "4", "--out",
                  (dir / "parallel").string()}) == 0;
  const std::string serial = read_file(dir / "serial" / "results.csv");
  const bool grid_same = serial == read_file(dir / "parallel" / "results.csv");
  const auto rows = std::count(serial.begin(), serial.end(), '\n') - 1;
  const bool complete = serial.find(",NA,") == std::string::npos;
  ok = ok && grid_same && complete && rows == 3 * 4 * 2 * 2;
  detail += fmt::format("4 models trained twice; grid of {} cells serial vs 4 threads {}", rows,
                        grid_same ? "identical" : "differs");
  return {ok, detail};
}

// Protocol arithmetic ------------------------------------------------------

Outcome protocol_arithmetic() {
  TrainConfig c;
  c.train_episodes = 10000;
  c.eval_every = 500;
  c.eval_episodes = 1000;
  const auto steps = c.checkpoint_steps();
  bool ok = steps.size() == 20 && steps.front() == 500 && steps.back() == 10000;

  // A short run with the same 20-checkpoint structure, checked end to end.
  SynthSpec s;
  s.classes = 6;
  s.dimension = 8;
  s.values_per_class = 20;
  s.label_prefix = "tr";
  const Collection train = make_synthetic_collection(s);
  s.label_prefix = "te";
  s.seed = 8;
  const Collection test = make_synthetic_collection(s);
  TrainConfig small;
  small.train_episodes = 40;
  small.eval_every = 2;
  small.eval_episodes = 5;
  small.c_way = 3;
  small.k_shot = 2;
  ModelConfig m;
  m.kind = ModelKind::prototypical;
  const TrainResult r = train_and_evaluate(m, train, test, small);
  double sum = 0.0;
  for (const auto& cp : r.eval.checkpoints) sum += cp.accuracy;
  const double mean = sum / static_cast<double>(r.eval.checkpoints.size());
  ok = ok && r.eval.checkpoints.size() == 20 && std::abs(r.eval.final_accuracy - mean) <= 1e-15;
  return {ok, fmt::format("{} checkpoints at 10000/500; short run {} checkpoints, final {:.4f} vs mean {:.4f}",
                          steps.size(), r.eval.checkpoints.size(), r.eval.final_accuracy, mean)};
}

}  // namespace

int main(int argc, char** argv) {
  set_log_level(LogLevel::error);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient_suite", gradient_suite},
      {"oracle_equivalence", oracle_equivalence},
      {"one_shot_equivalence", one_shot_equivalence},
      {"attentive_fixed_point", attentive_fixed_point},
      {"synthetic_end_to_end", synthetic_end_to_end},
      {"k_monotonicity", k_monotonicity},
      {"determinism", determinism},
      {"protocol_arithmetic", protocol_arithmetic},
  };
  std::vector<std::string> selected(argv + 1, argv + argc);
  for (const auto& name : selected) {
    if (std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return c.first == name; })) {
      std::cerr << "unknown criterion '" << name << "'\n";
      return 2;
    }
  }
  bool all = true;
  for (const auto& [name, check] : criteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), name) == selected.end()) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.passed;
    std::cout << (o.passed ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
