#include <doctest.h>

#include <cmath>
#include <random>

#include "fewshot/error.hpp"
#include "fewshot/gradcheck.hpp"
#include "fewshot/graph.hpp"
#include "fewshot/optimizer.hpp"
#include "support.hpp"

using namespace fewshot;
using testing_support::random_tensor;

namespace {

// Plain triple-loop product used as the matmul oracle.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.dim(1); ++p) s += a.at(i, p) * b.at(p, j);
      c.at(i, j) = s;
    }
  return c;
}

// Zero-padded sliding-window cross-correlation, written from the definition.
Tensor naive_conv(const Tensor& x, const Tensor& w, bool same) {
  const std::size_t cin = x.dim(0), len = x.dim(1), cout = w.dim(0), k = w.dim(2);
  const long pad = same ? static_cast<long>((k - 1) / 2) : 0;
  const std::size_t out_len = same ? len : len - k + 1;
  Tensor y({cout, out_len});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t t = 0; t < out_len; ++t) {
      double s = 0.0;
      for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t j = 0; j < k; ++j) {
          const long pos = static_cast<long>(t + j) - pad;
          if (pos >= 0 && pos < static_cast<long>(len)) s += w[(o * cin + c) * k + j] * x[c * len + pos];
        }
      y[o * out_len + t] = s;
    }
  return y;
}

void check_close(const Tensor& a, const Tensor& b, double tol) {
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(tol));
}

}  // namespace

TEST_CASE("tensor construction and invariants") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.at(1, 2) == 1.5);
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{}), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK(Tensor::scalar(4).item() == 4);
  CHECK_THROWS(t.item());
  CHECK(t.reshaped({3, 2}).dim(0) == 3);
  CHECK_THROWS_AS(t.reshaped({4, 2}), DimensionError);
}

TEST_CASE("matmul examples") {
  Graph g;
  auto b = g.constant(Tensor::matrix({{3}, {4}}));
  CHECK(g.value(g.matmul(g.constant(Tensor::matrix({{1, 0}, {0, 1}})), b)) == Tensor::matrix({{3}, {4}}));
  CHECK(g.value(g.matmul(g.constant(Tensor::matrix({{1, 2}})), b)).item() == 11.0);
  CHECK(g.value(g.matmul(g.constant(Tensor::matrix({{0, 0}})), b)).item() == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Graph g;
  auto a = g.constant(Tensor({2, 3}));
  auto b = g.constant(Tensor({2, 3}));
  try {
    g.matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul agrees with a naive product on random shapes") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 7);
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
    Graph g;
    check_close(g.value(g.matmul(g.constant(a), g.constant(b))), naive_matmul(a, b), 1e-12);
  }
}

TEST_CASE("conv1d examples") {
  Graph g;
  auto x = g.constant(Tensor({1, 4}, {1, 2, 3, 4}));
  auto w = g.constant(Tensor({1, 1, 3}, {1, 0, -1}));
  CHECK(g.value(g.conv1d(x, w, Padding::valid)) == Tensor({1, 2}, {-2, -2}));

  std::mt19937_64 rng(3);
  Tensor input = random_tensor({1, 9}, rng);
  auto in = g.constant(input);
  CHECK(g.value(g.conv1d(in, g.constant(Tensor({1, 1, 1}, {1.0})), Padding::same)) == input);
  const Tensor zero = g.value(g.conv1d(in, g.constant(Tensor({2, 1, 3}, 0.0)), Padding::same));
  for (double v : zero.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(g.conv1d(g.constant(Tensor({1, 2})), w, Padding::valid), DimensionError);
  CHECK_THROWS_AS(g.conv1d(g.constant(Tensor({2, 4})), w, Padding::same), DimensionError);
}

TEST_CASE("conv1d agrees with the sliding-window definition") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    std::uniform_int_distribution<std::size_t> small(1, 4);
    const std::size_t cin = small(rng), cout = small(rng), k = 2 * small(rng) - 1 + (trial % 2);
    const std::size_t len = k + small(rng) + 2;
    Tensor x = random_tensor({cin, len}, rng), w = random_tensor({cout, cin, k}, rng);
    for (bool same : {true, false}) {
      Graph g;
      const Tensor y = g.value(g.conv1d(g.constant(x), g.constant(w), same ? Padding::same : Padding::valid));
      check_close(y, naive_conv(x, w, same), 1e-12);
    }
    Graph g;
    const Tensor batched = g.value(g.conv1d(g.constant(x.reshaped({1, cin, len})), g.constant(w), Padding::same));
    check_close(batched.reshaped({cout, len}), naive_conv(x, w, true), 1e-12);
  }
}

TEST_CASE("elementwise examples") {
  Graph g;
  CHECK(g.value(g.sigmoid(g.constant(Tensor::scalar(0)))).item() == 0.5);
  CHECK(g.value(g.relu(g.constant(Tensor::vector({-2, 3})))) == Tensor::vector({0, 3}));
  CHECK(g.value(g.mul(g.constant(Tensor::vector({1, 2})), g.constant(Tensor::vector({0.5, 0.5})))) ==
        Tensor::vector({0.5, 1.0}));
  const Tensor s = g.value(g.sigmoid(g.constant(Tensor::vector({-800, 800}))));
  CHECK(s.all_finite());
  CHECK(s[0] >= 0.0);
  CHECK(s[1] == 1.0);
  CHECK_THROWS_AS(g.add(g.constant(Tensor::vector({1, 2})), g.constant(Tensor::vector({1, 2, 3}))), DimensionError);
}

TEST_CASE("forward ops keep finite inputs finite") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g;
    auto x = g.constant(random_tensor({4, 6}, rng, 50.0));
    for (NodeId n : {g.sigmoid(x), g.relu(x), g.log_softmax_rows(x), g.l2_normalize_rows(x),
                     g.pairwise_distance(x, x), g.mean_axis(x, 1)}) {
      CHECK(g.value(n).all_finite());
    }
  }
}

TEST_CASE("backward analytic examples") {
  {
    Graph g;
    auto x = g.parameter("x", Tensor::scalar(3));
    auto loss = g.mul(x, x);
    CHECK(g.backward(loss).at("x").item() == doctest::Approx(6.0).epsilon(1e-15));
  }
  {
    Graph g;
    auto x = g.parameter("x", Tensor::scalar(0));
    CHECK(g.backward(g.sigmoid(x)).at("x").item() == 0.25);
  }
  {
    Graph g;
    auto x = g.parameter("x", Tensor::vector({1, 2}));
    CHECK_THROWS_AS(g.backward(x), ContractError);
    auto y = g.parameter("unused", Tensor::vector({1, 2}));
    const GradientMap grads = g.backward(g.sum_all(x));
    CHECK(grads.at("unused") == Tensor::vector({0, 0}));
    CHECK_THROWS_AS(g.parameter("x", Tensor::scalar(1)), ContractError);
    (void)y;
  }
}

TEST_CASE("a shared node receives gradient from every consumer") {
  Graph g;
  auto x = g.parameter("x", Tensor::scalar(2));
  auto y = g.mul(x, x);
  auto loss = g.add(y, g.scale(x, 3.0));
  CHECK(g.backward(loss).at("x").item() == doctest::Approx(7.0).epsilon(1e-15));
}

TEST_CASE("grad_check passes on a linear layer and on every op") {
  std::mt19937_64 rng(23);
  {
    Graph g;
    auto w = g.parameter("w", random_tensor({4, 3}, rng));
    auto b = g.parameter("b", random_tensor({3}, rng));
    auto x = g.constant(random_tensor({5, 4}, rng));
    auto loss = g.mean_all(g.mul(g.add_bias(g.matmul(x, w), b), g.add_bias(g.matmul(x, w), b)));
    const GradCheckReport r = grad_check(g, loss);
    CHECK(r.passed);
    CHECK(r.checked == 15);
    CHECK(r.max_relative_error < 1e-4);
  }
  {
    Graph g;
    auto a = g.parameter("a", random_tensor({3, 4}, rng));
    auto b = g.parameter("b", random_tensor({2, 4}, rng));
    auto s = g.parameter("s", Tensor::scalar(0.7));
    auto t = g.parameter("t", random_tensor({4, 3}, rng));
    NodeId acc = g.sum_all(g.pairwise_distance(a, b));
    acc = g.add(acc, g.sum_all(g.log_softmax_rows(g.matmul(a, t))));
    acc = g.add(acc, g.sum_all(g.select_columns(g.l2_normalize_rows(a), {0, 3, 1})));
    acc = g.add(acc, g.mean_all(g.mul(g.sigmoid(a), s)));
    acc = g.add(acc, g.sum_all(g.sub(g.transpose(g.concat(a, b, 0)), g.reshape(g.concat(a, b, 0), {4, 5}))));
    acc = g.add(acc, g.sum_all(g.mul(g.sum_axis(a, 0), g.mean_axis(b, 0))));
    const GradCheckReport r = grad_check(g, acc);
    CHECK_MESSAGE(r.passed, r.worst_parameter << " " << r.max_relative_error);
  }
  {
    Graph g;
    auto w1 = g.parameter("w1", random_tensor({4, 2, 3}, rng));
    auto w2 = g.parameter("w2", random_tensor({3, 4, 3}, rng));
    auto b1 = g.parameter("b1", random_tensor({4}, rng));
    auto gate = g.parameter("gate", random_tensor({3, 1, 7}, rng));
    auto x = g.constant(random_tensor({3, 2, 7}, rng));
    auto h = g.relu(g.add_bias(g.conv1d(x, w1, Padding::same), b1));
    auto y = g.conv1d(h, w2, Padding::valid);
    auto z = g.mul_channels(g.conv1d(h, w2, Padding::same), g.sigmoid(gate));
    auto loss = g.add(g.mean_all(g.mul(y, y)), g.sum_all(z));
    const GradCheckReport r = grad_check(g, loss);
    CHECK_MESSAGE(r.passed, r.worst_parameter << " " << r.max_relative_error);
    CHECK(r.checked + r.skipped_kinks == 4 * 2 * 3 + 3 * 4 * 3 + 4 + 21);
  }
}

TEST_CASE("grad_check detects a corrupted backward rule") {
  auto rule = std::make_shared<OpRule>();
  rule->forward = [](OpInputs in) {
    Tensor out = *in[0];
    for (double& v : out.data()) v *= 2.0;
    return out;
  };
  rule->backward = [](OpInputs, const Tensor&, const Tensor& gout, std::span<Tensor* const> gin) {
    for (std::size_t i = 0; i < gout.size(); ++i) (*gin[0])[i] += 3.0 * gout[i];
  };
  Graph g;
  auto good = g.parameter("good", Tensor::vector({1, 2}));
  auto bad = g.parameter("bad", Tensor::vector({0.5, -1}));
  auto loss = g.add(g.sum_all(g.mul(good, good)), g.sum_all(g.apply("double", {bad}, rule)));
  const GradCheckReport r = grad_check(g, loss);
  CHECK_FALSE(r.passed);
  CHECK(r.worst_parameter == "bad");
  CHECK(r.max_relative_error == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("grad_check on a parameter-free graph passes vacuously") {
  Graph g;
  auto loss = g.sum_all(g.constant(Tensor::vector({1, 2})));
  const GradCheckReport r = grad_check(g, loss);
  CHECK(r.passed);
  CHECK(r.checked == 0);
}

TEST_CASE("grad_check restores parameter values") {
  std::mt19937_64 rng(2);
  Graph g;
  const Tensor w0 = random_tensor({3, 3}, rng);
  auto w = g.parameter("w", w0);
  auto loss = g.sum_all(g.relu(g.matmul(g.constant(random_tensor({2, 3}, rng)), w)));
  const double before = g.value(loss).item();
  grad_check(g, loss);
  CHECK(g.value(w) == w0);
  CHECK(g.value(loss).item() == before);
}

TEST_CASE("sgd and adam updates") {
  {
    Parameters p{{"w", Tensor::scalar(1)}};
    Optimizer sgd({OptimizerKind::sgd, 0.1});
    sgd.step(p, {{"w", Tensor::scalar(1)}});
    CHECK(p.at("w").item() == doctest::Approx(0.9).epsilon(1e-15));
  }
  {
    Parameters p{{"w", Tensor::vector({1, -2, 3})}};
    const Parameters before = p;
    Optimizer adam(OptimizerSettings{});
    adam.step(p, {{"w", Tensor::vector({0, 0, 0})}});
    adam.step(p, {{"w", Tensor::vector({0, 0, 0})}});
    CHECK(p == before);
    CHECK(adam.step_count() == 2);
  }
  {
    Parameters p{{"w", Tensor::vector({1, 1, 1, 1})}};
    Optimizer adam(OptimizerSettings{});
    const std::vector<double> g{0.3, -5.0, 1e-3, 42.0};
    adam.step(p, {{"w", Tensor::vector(g)}});
    for (std::size_t i = 0; i < g.size(); ++i) {
      // m_hat = g and v_hat = g^2 at t = 1, so the step is lr * |g| / (|g| + eps).
      const double expected = 1.0 - 1e-3 * g[i] / (std::abs(g[i]) + 1e-8);
      CHECK(p.at("w")[i] == doctest::Approx(expected).epsilon(1e-12));
      CHECK(std::abs(1.0 - p.at("w")[i]) == doctest::Approx(1e-3).epsilon(1e-4));
    }
    REQUIRE(adam.first_moment("w"));
    CHECK(adam.first_moment("w")->shape() == p.at("w").shape());
    CHECK(adam.second_moment("w")->shape() == p.at("w").shape());
  }
  {
    Parameters p{{"w", Tensor::vector({1, 1})}};
    Optimizer adam(OptimizerSettings{});
    CHECK_THROWS_AS(adam.step(p, {{"w", Tensor::vector({1, 1, 1})}}), DimensionError);
    CHECK(adam.step_count() == 0);
    CHECK(p.at("w") == Tensor::vector({1, 1}));
  }
}

TEST_CASE("adam matches a hand-unrolled recurrence over several steps") {
  Parameters p{{"w", Tensor::scalar(0.5)}};
  OptimizerSettings s;
  s.learning_rate = 0.01;
  Optimizer adam(s);
  double w = 0.5, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    const double g = 2.0 * w - 0.3;
    adam.step(p, {{"w", Tensor::scalar(g)}});
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    CHECK(p.at("w").item() == doctest::Approx(w).epsilon(1e-14));
  }
}

TEST_CASE("optimizer names round-trip") {
  CHECK(parse_optimizer_kind(to_string(OptimizerKind::adam)) == OptimizerKind::adam);
  CHECK(parse_optimizer_kind(to_string(OptimizerKind::sgd)) == OptimizerKind::sgd);
  CHECK_THROWS(parse_optimizer_kind("rmsprop"));
}
