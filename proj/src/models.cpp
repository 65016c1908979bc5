#include "fewshot/models.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "fewshot/error.hpp"
#include "fewshot/io.hpp"

namespace fewshot {

namespace {

using ordered_json = nlohmann::ordered_json;
using json = nlohmann::json;

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;  // 0 marks a bias (zero-initialized)
};

std::vector<ParamSpec> encoder_specs(const ModelConfig& c) {
  return {
      {"encoder.w1", {c.input_dim, c.encoder_hidden}, c.input_dim, c.encoder_hidden},
      {"encoder.b1", {c.encoder_hidden}},
      {"encoder.w2", {c.encoder_hidden, c.encoder_out}, c.encoder_hidden, c.encoder_out},
      {"encoder.b2", {c.encoder_out}},
  };
}

std::vector<ParamSpec> relation_specs(const ModelConfig& c) {
  const std::size_t d = c.encoder_out, ch = c.channels, k = c.kernel;
  return {
      {"relation.conv1.w", {ch, 1, k}, k, ch * k},
      {"relation.conv1.b", {ch}},
      {"relation.conv2.w", {ch, ch, k}, ch * k, ch * k},
      {"relation.conv2.b", {ch}},
      {"relation.fc1.w", {ch * d, c.fc_hidden}, ch * d, c.fc_hidden},
      {"relation.fc1.b", {c.fc_hidden}},
      {"relation.fc2.w", {c.fc_hidden, 1}, c.fc_hidden, 1},
      {"relation.fc2.b", {1}},
  };
}

std::vector<ParamSpec> attentive_specs(const ModelConfig& c) {
  const std::size_t d = c.input_dim, ch = c.channels, k = c.kernel;
  std::vector<ParamSpec> specs{
      {"attentive.block1.w", {ch, 1, k}, k, ch * k},
      {"attentive.block1.b", {ch}},
      {"attentive.block1.proj", {ch, 1, 1}, 1, ch},
  };
  if (c.parallel_blocks) {
    specs.push_back({"attentive.block2.w", {ch, 1, k}, k, ch * k});
    specs.push_back({"attentive.block2.b", {ch}});
    specs.push_back({"attentive.block2.proj", {ch, 1, 1}, 1, ch});
  } else {
    specs.push_back({"attentive.block2.w", {ch, ch, k}, ch * k, ch * k});
    specs.push_back({"attentive.block2.b", {ch}});
  }
  specs.push_back({"attentive.u", {1, ch, 1}, ch, 1});
  specs.push_back({"attentive.classifier.w", {(ch + 1) * d, 1}, (ch + 1) * d, 1});
  specs.push_back({"attentive.classifier.b", {1}});
  return specs;
}

std::vector<ParamSpec> param_specs(const ModelConfig& c) {
  std::vector<ParamSpec> specs;
  if (c.kind != ModelKind::attentive) specs = encoder_specs(c);
  if (c.kind == ModelKind::relation) {
    auto r = relation_specs(c);
    specs.insert(specs.end(), r.begin(), r.end());
  }
  if (c.kind == ModelKind::attentive) specs = attentive_specs(c);
  return specs;
}

void check_rows(const std::string& op, const Tensor& t, const std::string& what) {
  if (t.rank() != 2) throw DimensionError(op + ": " + what + " must be a matrix, got " + shape_string(t.shape()));
}

void check_classes(const std::string& op, const Tensor& support, const std::vector<std::size_t>& classes) {
  check_rows(op, support, "support");
  if (classes.size() != support.dim(0)) {
    throw DimensionError(op + ": " + std::to_string(classes.size()) + " class indices for " +
                         std::to_string(support.dim(0)) + " supports");
  }
}

std::size_t class_count(const std::vector<std::size_t>& classes) {
  if (classes.empty()) throw ContractError("episode has no supports");
  const std::size_t c = *std::max_element(classes.begin(), classes.end()) + 1;
  std::vector<bool> present(c, false);
  for (auto k : classes) present[k] = true;
  for (std::size_t k = 0; k < c; ++k) {
    if (!present[k]) throw ContractError("class " + std::to_string(k) + " has no supports");
  }
  return c;
}

Tensor as_query_row(const std::string& op, const Tensor& query, std::size_t dim) {
  if (query.size() != dim) {
    throw DimensionError(op + ": query " + shape_string(query.shape()) + " does not match feature dimension " +
                         std::to_string(dim));
  }
  return query.reshaped({1, dim});
}

std::vector<double> first_row(const Tensor& t) {
  const auto r = t.row(0);
  return {r.begin(), r.end()};
}

void require_finite(const Graph& graph, NodeId node, const char* stage) {
  if (!graph.value(node).all_finite()) {
    throw NumericError(std::string("attentive head: non-finite values at stage '") + stage + "'");
  }
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::matching: return "matching";
    case ModelKind::prototypical: return "prototypical";
    case ModelKind::relation: return "relation";
    case ModelKind::attentive: return "attentive";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "matching") return ModelKind::matching;
  if (name == "prototypical") return ModelKind::prototypical;
  if (name == "relation") return ModelKind::relation;
  if (name == "attentive") return ModelKind::attentive;
  throw ContractError("unknown model '" + std::string(name) + "'");
}

bool is_relation_family(ModelKind kind) { return kind == ModelKind::relation || kind == ModelKind::attentive; }

ModelBundle init_model(const ModelConfig& config, std::uint64_t seed) {
  if (config.input_dim == 0) throw ContractError("model input_dim must be positive");
  if (config.kernel == 0 || config.channels == 0 || config.fc_hidden == 0 || config.encoder_hidden == 0 ||
      config.encoder_out == 0) {
    throw ContractError("model widths must be positive");
  }
  ModelBundle bundle;
  bundle.config = config;
  auto specs = param_specs(config);
  std::sort(specs.begin(), specs.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  std::mt19937_64 rng(seed);
  for (const auto& spec : specs) {
    Tensor t(spec.shape, 0.0);
    if (spec.fan_out > 0) {
      const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in + spec.fan_out));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : t.data()) v = dist(rng);
    }
    bundle.params.emplace(spec.name, std::move(t));
  }
  return bundle;
}

EpisodeBatch make_batch(const Collection& collection, const Episode& episode) {
  const std::size_t d = collection.manifest().dimension;
  auto fill = [&](const std::vector<EpisodeItem>& items, Tensor& out, std::vector<std::size_t>& classes) {
    out = Tensor({items.size(), d});
    classes.clear();
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& v = collection.triplet(items[i].triplet).embedding;
      if (v.size() != d) throw DimensionError("triplet vector does not match manifest dimension");
      std::copy(v.begin(), v.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
      classes.push_back(items[i].class_index);
    }
  };
  EpisodeBatch batch;
  fill(episode.support, batch.support, batch.support_class);
  fill(episode.query, batch.query, batch.query_class);
  batch.c_way = episode.labels.size();
  return batch;
}

ParameterNodes::ParameterNodes(Graph& graph, const Parameters& params) {
  for (const auto& [name, value] : params) ids_[name] = graph.parameter(name, value);
}

NodeId ParameterNodes::operator()(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) throw ContractError("model has no parameter '" + name + "'");
  return it->second;
}

NodeId encode_rows(Graph& graph, const ParameterNodes& p, NodeId x) {
  NodeId h = graph.relu(graph.add_bias(graph.matmul(x, p("encoder.w1")), p("encoder.b1")));
  return graph.add_bias(graph.matmul(h, p("encoder.w2")), p("encoder.b2"));
}

Tensor class_mean_weights(const std::vector<std::size_t>& classes, std::size_t c_way) {
  std::vector<double> counts(c_way, 0.0);
  for (auto c : classes) counts.at(c) += 1.0;
  Tensor w({classes.size(), c_way});
  for (std::size_t i = 0; i < classes.size(); ++i) w.at(i, classes[i]) = 1.0 / counts[classes[i]];
  return w;
}

Tensor class_membership(const std::vector<std::size_t>& classes, std::size_t c_way) {
  Tensor w({classes.size(), c_way});
  for (std::size_t i = 0; i < classes.size(); ++i) w.at(i, classes.at(i)) = 1.0;
  return w;
}

NodeId matching_scores_node(Graph& graph, NodeId support, const std::vector<std::size_t>& classes, NodeId query,
                            std::size_t c_way) {
  NodeId s = graph.l2_normalize_rows(support);
  NodeId q = graph.l2_normalize_rows(query);
  NodeId cosine = graph.matmul(q, graph.transpose(s));
  return graph.matmul(cosine, graph.constant(class_mean_weights(classes, c_way)));
}

NodeId prototypical_scores_node(Graph& graph, NodeId support, const std::vector<std::size_t>& classes, NodeId query,
                                std::size_t c_way) {
  NodeId mean_t = graph.transpose(graph.constant(class_mean_weights(classes, c_way)));
  NodeId prototypes = graph.matmul(mean_t, support);
  return graph.scale(graph.pairwise_distance(query, prototypes), -1.0);
}

NodeId pair_sums(Graph& graph, NodeId class_sums, NodeId query) {
  const std::size_t c_way = graph.value(class_sums).dim(0);
  const std::size_t nq = graph.value(query).dim(0);
  Tensor pick_query({nq * c_way, nq});
  Tensor pick_class({nq * c_way, c_way});
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t c = 0; c < c_way; ++c) {
      pick_query.at(i * c_way + c, i) = 1.0;
      pick_class.at(i * c_way + c, c) = 1.0;
    }
  }
  return graph.add(graph.matmul(graph.constant(std::move(pick_query)), query),
                   graph.matmul(graph.constant(std::move(pick_class)), class_sums));
}

NodeId relation_head(Graph& graph, const ParameterNodes& p, const ModelConfig& config, NodeId pairs) {
  const std::size_t n = graph.value(pairs).dim(0), d = graph.value(pairs).dim(1);
  NodeId x = graph.reshape(pairs, {n, 1, d});
  NodeId h1 = graph.relu(graph.add_bias(graph.conv1d(x, p("relation.conv1.w"), Padding::same), p("relation.conv1.b")));
  NodeId h2 = graph.relu(graph.add_bias(graph.conv1d(h1, p("relation.conv2.w"), Padding::same), p("relation.conv2.b")));
  NodeId flat = graph.reshape(h2, {n, config.channels * d});
  NodeId f = graph.relu(graph.add_bias(graph.matmul(flat, p("relation.fc1.w")), p("relation.fc1.b")));
  return graph.sigmoid(graph.add_bias(graph.matmul(f, p("relation.fc2.w")), p("relation.fc2.b")));
}

AttentionNodes attentive_head(Graph& graph, const ParameterNodes& p, const ModelConfig& config, NodeId pairs) {
  const std::size_t n = graph.value(pairs).dim(0), d = graph.value(pairs).dim(1);
  auto block = [&](NodeId input, const std::string& name, bool project) {
    NodeId z = graph.add_bias(graph.conv1d(input, p(name + ".w"), Padding::same), p(name + ".b"));
    NodeId shortcut = project ? graph.conv1d(input, p(name + ".proj"), Padding::same) : input;
    return graph.relu(graph.add(z, shortcut));
  };
  NodeId x = graph.reshape(pairs, {n, 1, d});
  NodeId l1 = block(x, "attentive.block1", true);
  NodeId l2 = config.parallel_blocks ? block(x, "attentive.block2", true) : block(l1, "attentive.block2", false);

  AttentionNodes out{};
  out.compatibility = graph.conv1d(graph.add(l1, l2), p("attentive.u"), Padding::same);
  out.attention = graph.sigmoid(out.compatibility);
  out.global = graph.mul_channels(l1, out.attention);
  NodeId features = graph.concat(graph.reshape(out.global, {n, config.channels * d}),
                                 graph.reshape(out.compatibility, {n, d}), 1);
  out.relation = graph.sigmoid(
      graph.add_bias(graph.matmul(features, p("attentive.classifier.w")), p("attentive.classifier.b")));
  return out;
}

ScoreNodes build_scores(Graph& graph, const ModelBundle& bundle, const EpisodeBatch& batch) {
  const ModelConfig& config = bundle.config;
  if (batch.support.dim(1) != config.input_dim || batch.query.dim(1) != config.input_dim) {
    throw DimensionError("episode vectors have dimension " + std::to_string(batch.support.dim(1)) +
                         " but the model expects " + std::to_string(config.input_dim));
  }
  ParameterNodes p(graph, bundle.params);
  NodeId support = graph.constant(batch.support);
  NodeId query = graph.constant(batch.query);
  const std::size_t nq = batch.query.dim(0);
  ScoreNodes out{};
  switch (config.kind) {
    case ModelKind::matching:
      out.scores = matching_scores_node(graph, encode_rows(graph, p, support), batch.support_class,
                                        encode_rows(graph, p, query), batch.c_way);
      break;
    case ModelKind::prototypical:
      out.scores = prototypical_scores_node(graph, encode_rows(graph, p, support), batch.support_class,
                                            encode_rows(graph, p, query), batch.c_way);
      break;
    case ModelKind::relation: {
      NodeId members = graph.transpose(graph.constant(class_membership(batch.support_class, batch.c_way)));
      NodeId sums = graph.matmul(members, encode_rows(graph, p, support));
      NodeId r = relation_head(graph, p, config, pair_sums(graph, sums, encode_rows(graph, p, query)));
      out.scores = graph.reshape(r, {nq, batch.c_way});
      break;
    }
    case ModelKind::attentive: {
      NodeId members = graph.transpose(graph.constant(class_membership(batch.support_class, batch.c_way)));
      NodeId sums = graph.matmul(members, support);
      out.attention = attentive_head(graph, p, config, pair_sums(graph, sums, query));
      out.scores = graph.reshape(out.attention->relation, {nq, batch.c_way});
      break;
    }
  }
  return out;
}

NodeId build_loss(Graph& graph, ModelKind kind, NodeId scores, const std::vector<std::size_t>& targets) {
  const Tensor& s = graph.value(scores);
  if (s.rank() != 2 || s.dim(0) != targets.size()) {
    throw DimensionError("loss: scores " + shape_string(s.shape()) + " for " + std::to_string(targets.size()) +
                         " targets");
  }
  if (is_relation_family(kind)) {
    Tensor onehot(s.shape(), 0.0);
    for (std::size_t i = 0; i < targets.size(); ++i) onehot.at(i, targets[i]) = 1.0;
    NodeId diff = graph.sub(scores, graph.constant(std::move(onehot)));
    return graph.mean_all(graph.mul(diff, diff));
  }
  return graph.scale(graph.mean_all(graph.select_columns(graph.log_softmax_rows(scores), targets)), -1.0);
}

std::size_t argmax_lowest(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

PredictionDistribution make_prediction(std::vector<double> scores) {
  PredictionDistribution p;
  p.predicted = argmax_lowest(scores);
  p.scores = std::move(scores);
  return p;
}

Tensor encode(const ModelBundle& bundle, const Tensor& vector) {
  if (vector.size() != bundle.config.input_dim) {
    throw DimensionError("encode: vector " + shape_string(vector.shape()) + " but encoder input dimension is " +
                         std::to_string(bundle.config.input_dim));
  }
  Graph graph;
  ParameterNodes p(graph, bundle.params);
  NodeId out = encode_rows(graph, p, graph.constant(vector.reshaped({1, vector.size()})));
  return graph.value(out).reshaped({bundle.config.encoder_out});
}

PredictionDistribution matching_scores(const Tensor& support, const std::vector<std::size_t>& classes,
                                       const Tensor& query) {
  check_classes("matching_scores", support, classes);
  const std::size_t c_way = class_count(classes);
  const Tensor q = as_query_row("matching_scores", query, support.dim(1));
  auto zero_norm = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
  };
  for (std::size_t i = 0; i < support.dim(0); ++i) {
    if (zero_norm(support.row(i))) throw NumericError("matching_scores: support " + std::to_string(i) + " has zero norm");
  }
  if (zero_norm(q.row(0))) throw NumericError("matching_scores: query has zero norm");
  Graph graph;
  NodeId scores = matching_scores_node(graph, graph.constant(support), classes, graph.constant(q), c_way);
  return make_prediction(first_row(graph.value(scores)));
}

PredictionDistribution prototypical_scores(const Tensor& support, const std::vector<std::size_t>& classes,
                                           const Tensor& query) {
  check_classes("prototypical_scores", support, classes);
  const std::size_t c_way = class_count(classes);
  Graph graph;
  NodeId scores = prototypical_scores_node(graph, graph.constant(support), classes,
                                           graph.constant(as_query_row("prototypical_scores", query, support.dim(1))),
                                           c_way);
  return make_prediction(first_row(graph.value(scores)));
}

Tensor class_sum(const Tensor& support, const std::vector<std::size_t>& classes) {
  check_classes("class_sum", support, classes);
  const std::size_t c_way = class_count(classes), d = support.dim(1);
  Tensor out({c_way, d});
  for (std::size_t i = 0; i < classes.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out.at(classes[i], j) += support.at(i, j);
  }
  return out;
}

PredictionDistribution relation_scores(const ModelBundle& bundle, const Tensor& class_sums, const Tensor& query) {
  if (bundle.config.kind != ModelKind::relation) throw ContractError("relation_scores needs a relation model");
  check_rows("relation_scores", class_sums, "class sums");
  if (class_sums.dim(1) != bundle.config.encoder_out) {
    throw DimensionError("relation_scores: class sums " + shape_string(class_sums.shape()) +
                         " do not match the head width " + std::to_string(bundle.config.encoder_out));
  }
  Graph graph;
  ParameterNodes p(graph, bundle.params);
  NodeId q = graph.constant(as_query_row("relation_scores", query, class_sums.dim(1)));
  NodeId r = relation_head(graph, p, bundle.config, pair_sums(graph, graph.constant(class_sums), q));
  return make_prediction(graph.value(r).values());
}

AttentiveResult attentive_relation_scores(const ModelBundle& bundle, const Tensor& support,
                                          const std::vector<std::size_t>& classes, const Tensor& query) {
  if (bundle.config.kind != ModelKind::attentive) throw ContractError("attentive_relation_scores needs an attentive model");
  check_classes("attentive_relation_scores", support, classes);
  if (support.dim(1) != bundle.config.input_dim) {
    throw DimensionError("attentive_relation_scores: supports " + shape_string(support.shape()) +
                         " but the head expects dimension " + std::to_string(bundle.config.input_dim));
  }
  const Tensor sums = class_sum(support, classes);
  const std::size_t c_way = sums.dim(0), d = sums.dim(1), ch = bundle.config.channels;
  Graph graph;
  ParameterNodes p(graph, bundle.params);
  NodeId pairs = pair_sums(graph, graph.constant(sums),
                           graph.constant(as_query_row("attentive_relation_scores", query, d)));
  require_finite(graph, pairs, "input");
  const AttentionNodes nodes = attentive_head(graph, p, bundle.config, pairs);
  require_finite(graph, nodes.compatibility, "compatibility");
  require_finite(graph, nodes.attention, "attention");
  require_finite(graph, nodes.global, "global");
  require_finite(graph, nodes.relation, "relation");

  AttentiveResult result;
  const Tensor& r = graph.value(nodes.relation);
  const Tensor& c = graph.value(nodes.compatibility);
  const Tensor& a = graph.value(nodes.attention);
  const Tensor& g = graph.value(nodes.global);
  for (std::size_t k = 0; k < c_way; ++k) {
    AttentionDiagnostics diag;
    diag.relation = r[k];
    diag.compatibility.assign(c.data().begin() + k * d, c.data().begin() + (k + 1) * d);
    diag.attention.assign(a.data().begin() + k * d, a.data().begin() + (k + 1) * d);
    diag.global.assign(g.data().begin() + k * ch * d, g.data().begin() + (k + 1) * ch * d);
    result.per_class.push_back(std::move(diag));
  }
  result.prediction = make_prediction(r.values());
  return result;
}

bool one_shot_equivalence_check(const Tensor& support, const std::vector<std::size_t>& classes, const Tensor& query) {
  check_classes("one_shot_equivalence_check", support, classes);
  const std::size_t c_way = class_count(classes);
  if (classes.size() != c_way) throw ContractError("one_shot_equivalence_check needs exactly one support per class");
  auto unit = [](std::span<const double> v) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    return std::abs(std::sqrt(ss) - 1.0) <= 1e-9;
  };
  for (std::size_t i = 0; i < support.dim(0); ++i) {
    if (!unit(support.row(i))) throw ContractError("one_shot_equivalence_check: support " + std::to_string(i) + " is not unit-norm");
  }
  if (!unit(query.data())) throw ContractError("one_shot_equivalence_check: query is not unit-norm");
  return matching_scores(support, classes, query).predicted == prototypical_scores(support, classes, query).predicted;
}

bool one_shot_equivalence_check(const ModelBundle& encoder, const Tensor& support,
                                const std::vector<std::size_t>& classes, const Tensor& query) {
  check_classes("one_shot_equivalence_check", support, classes);
  Graph graph;
  ParameterNodes p(graph, encoder.params);
  NodeId s = graph.l2_normalize_rows(encode_rows(graph, p, graph.constant(support)));
  NodeId q = graph.l2_normalize_rows(
      encode_rows(graph, p, graph.constant(as_query_row("one_shot_equivalence_check", query, support.dim(1)))));
  return one_shot_equivalence_check(graph.value(s), classes, graph.value(q).reshaped({encoder.config.encoder_out}));
}

void write_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path) {
  const ModelConfig& c = bundle.config;
  ordered_json j;
  j["format"] = "fewshot-checkpoint";
  j["version"] = kCheckpointVersion;
  j["config"] = {{"kind", std::string(to_string(c.kind))},
                 {"input_dim", c.input_dim},
                 {"encoder_hidden", c.encoder_hidden},
                 {"encoder_out", c.encoder_out},
                 {"channels", c.channels},
                 {"kernel", c.kernel},
                 {"fc_hidden", c.fc_hidden},
                 {"parallel_blocks", c.parallel_blocks}};
  j["train_labels"] = bundle.train_labels;
  j["steps"] = bundle.steps;
  ordered_json params = ordered_json::array();
  for (const auto& [name, t] : bundle.params) {
    params.push_back({{"name", name}, {"shape", t.shape()}, {"data", t.values()}});
  }
  j["params"] = std::move(params);
  write_file_atomic(path, j.dump() + "\n");
}

ModelBundle read_checkpoint(const std::filesystem::path& path) {
  ModelBundle bundle;
  try {
    const json j = json::parse(read_file(path));
    if (j.at("format").get<std::string>() != "fewshot-checkpoint") throw ParseError(path.string() + ": not a checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion) throw ParseError(path.string() + ": unsupported version");
    const json& c = j.at("config");
    bundle.config.kind = parse_model_kind(c.at("kind").get<std::string>());
    bundle.config.input_dim = c.at("input_dim").get<std::size_t>();
    bundle.config.encoder_hidden = c.at("encoder_hidden").get<std::size_t>();
    bundle.config.encoder_out = c.at("encoder_out").get<std::size_t>();
    bundle.config.channels = c.at("channels").get<std::size_t>();
    bundle.config.kernel = c.at("kernel").get<std::size_t>();
    bundle.config.fc_hidden = c.at("fc_hidden").get<std::size_t>();
    bundle.config.parallel_blocks = c.at("parallel_blocks").get<bool>();
    bundle.train_labels = j.at("train_labels").get<std::vector<std::string>>();
    bundle.steps = j.at("steps").get<std::uint64_t>();
    for (const auto& p : j.at("params")) {
      bundle.params.emplace(p.at("name").get<std::string>(),
                            Tensor(p.at("shape").get<Shape>(), p.at("data").get<std::vector<double>>()));
    }
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  const ModelBundle reference = init_model(bundle.config, 0);
  for (const auto& [name, t] : reference.params) {
    auto it = bundle.params.find(name);
    if (it == bundle.params.end()) throw ParseError(path.string() + ": missing parameter '" + name + "'");
    if (it->second.shape() != t.shape()) throw ParseError(path.string() + ": parameter '" + name + "' has wrong shape");
  }
  if (bundle.params.size() != reference.params.size()) throw ParseError(path.string() + ": unexpected parameters");
  return bundle;
}

}  // namespace fewshot
