#include "fewshot/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fewshot/error.hpp"

namespace fewshot {

namespace {

using Rule = std::shared_ptr<const OpRule>;
using GradIn = std::span<Tensor* const>;

Rule make_rule(decltype(OpRule::forward) forward, decltype(OpRule::backward) backward,
               decltype(OpRule::regime) regime = {}) {
  auto rule = std::make_shared<OpRule>();
  rule->forward = std::move(forward);
  rule->backward = std::move(backward);
  rule->regime = std::move(regime);
  return rule;
}

[[noreturn]] void mismatch(const std::string& op, const Shape& a, const Shape& b) {
  throw DimensionError(op + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

void require_rank(const std::string& op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(op + ": expected rank " + std::to_string(rank) + ", got " + shape_string(t.shape()));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Elementwise binary op with scalar-only broadcasting. Returns the output shape.
Shape broadcast_shape(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.size() == 1) return a.shape();
  if (a.size() == 1) return b.shape();
  mismatch(op, a.shape(), b.shape());
}

template <typename F>
Tensor binary_forward(const std::string& op, const Tensor& a, const Tensor& b, F f) {
  Tensor out(broadcast_shape(op, a, b));
  const bool sa = a.size() == 1 && out.size() != 1;
  const bool sb = b.size() == 1 && out.size() != 1;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[sa ? 0 : i], b[sb ? 0 : i]);
  return out;
}

// Adds `contribution[i]` into grad, summing over broadcast elements when grad is a scalar.
void accumulate(Tensor* grad, std::size_t i, double contribution) {
  if (grad->size() == 1) {
    (*grad)[0] += contribution;
  } else {
    (*grad)[i] += contribution;
  }
}

// Four partial sums so the reduction vectorizes under strict FP semantics.
double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

struct ConvGeometry {
  std::size_t batch, c_in, length, c_out, k, pad_left, out_length;
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernels, Padding padding) {
  if (input.rank() != 2 && input.rank() != 3) {
    throw DimensionError("conv1d: input must be [c_in x L] or [B x c_in x L], got " + shape_string(input.shape()));
  }
  require_rank("conv1d kernels", kernels, 3);
  ConvGeometry g{};
  g.batch = input.rank() == 3 ? input.dim(0) : 1;
  g.c_in = input.dim(input.rank() - 2);
  g.length = input.dim(input.rank() - 1);
  g.c_out = kernels.dim(0);
  g.k = kernels.dim(2);
  if (kernels.dim(1) != g.c_in) mismatch("conv1d", input.shape(), kernels.shape());
  if (padding == Padding::valid) {
    if (g.k > g.length) {
      throw DimensionError("conv1d: kernel " + shape_string(kernels.shape()) + " longer than input " +
                           shape_string(input.shape()) + " under valid padding");
    }
    g.pad_left = 0;
    g.out_length = g.length - g.k + 1;
  } else {
    g.pad_left = (g.k - 1) / 2;
    g.out_length = g.length;
  }
  return g;
}

// Output positions t for which t + j - pad_left lies inside the input.
std::pair<std::size_t, std::size_t> tap_range(const ConvGeometry& g, std::size_t j) {
  const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(g.pad_left);
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
  const std::ptrdiff_t hi =
      std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(g.out_length), static_cast<std::ptrdiff_t>(g.length) - shift);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

Shape without_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t n = 1;
  for (std::size_t i = from; i < to; ++i) n *= s[i];
  return n;
}

Rule reduce_rule(std::size_t axis, bool mean) {
  return make_rule(
      [axis, mean](OpInputs in) {
        const Tensor& x = *in[0];
        if (axis >= x.rank()) throw DimensionError("reduce: axis " + std::to_string(axis) + " out of range for " +
                                                   shape_string(x.shape()));
        const std::size_t outer = prod(x.shape(), 0, axis), n = x.dim(axis),
                          inner = prod(x.shape(), axis + 1, x.rank());
        Tensor out(without_axis(x.shape(), axis));
        const double f = mean ? 1.0 / static_cast<double>(n) : 1.0;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t m = 0; m < n; ++m) {
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * n + m) * inner + i];
          }
        }
        if (mean) {
          for (auto& v : out.data()) v *= f;
        }
        return out;
      },
      [axis, mean](OpInputs in, const Tensor&, const Tensor& gout, GradIn gin) {
        const Tensor& x = *in[0];
        const std::size_t outer = prod(x.shape(), 0, axis), n = x.dim(axis),
                          inner = prod(x.shape(), axis + 1, x.rank());
        const double f = mean ? 1.0 / static_cast<double>(n) : 1.0;
        Tensor& g = *gin[0];
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t m = 0; m < n; ++m) {
            for (std::size_t i = 0; i < inner; ++i) g[(o * n + m) * inner + i] += f * gout[o * inner + i];
          }
        }
      });
}

Rule reduce_all_rule(bool mean) {
  return make_rule(
      [mean](OpInputs in) {
        const Tensor& x = *in[0];
        double s = 0.0;
        for (double v : x.data()) s += v;
        if (mean) s /= static_cast<double>(x.size());
        return Tensor::scalar(s);
      },
      [mean](OpInputs in, const Tensor&, const Tensor& gout, GradIn gin) {
        const double f = mean ? gout[0] / static_cast<double>(in[0]->size()) : gout[0];
        for (auto& v : gin[0]->data()) v += f;
      });
}

}  // namespace

NodeId Graph::constant(Tensor value) {
  Node node;
  node.kind = "constant";
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

NodeId Graph::parameter(const std::string& name, Tensor value) {
  if (name.empty()) throw ContractError("parameter name must be non-empty");
  if (param_index_.contains(name)) throw ContractError("duplicate parameter '" + name + "'");
  Node node;
  node.kind = "parameter";
  node.value = std::move(value);
  node.param_name = name;
  node.needs_grad = true;
  nodes_.push_back(std::move(node));
  param_index_[name] = nodes_.size() - 1;
  return nodes_.size() - 1;
}

std::vector<const Tensor*> Graph::input_values(const Node& node) const {
  std::vector<const Tensor*> values;
  values.reserve(node.inputs.size());
  for (NodeId id : node.inputs) values.push_back(&nodes_[id].value);
  return values;
}

NodeId Graph::apply(const std::string& kind, std::vector<NodeId> inputs, std::shared_ptr<const OpRule> rule) {
  for (NodeId id : inputs) {
    if (id >= nodes_.size()) throw ContractError(kind + ": unknown input node " + std::to_string(id));
  }
  Node node;
  node.kind = kind;
  node.inputs = std::move(inputs);
  node.rule = std::move(rule);
  const auto values = input_values(node);
  node.value = node.rule->forward(values);
  node.needs_grad = std::any_of(node.inputs.begin(), node.inputs.end(),
                                [this](NodeId id) { return nodes_[id].needs_grad; });
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  static const Rule rule = make_rule(
      [](OpInputs in) {
        const Tensor& a = *in[0];
        const Tensor& b = *in[1];
        if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) mismatch("matmul", a.shape(), b.shape());
        const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
        Tensor c({m, n});
        double* cd = c.data().data();
        const double* ad = a.data().data();
        const double* bd = b.data().data();
        for (std::size_t i = 0; i < m; ++i) {
          double* crow = cd + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = ad[i * k + p];
            const double* brow = bd + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
          }
        }
        return c;
      },
      [](OpInputs in, const Tensor&, const Tensor& gout, GradIn gin) {
        const Tensor& a = *in[0];
        const Tensor& b = *in[1];
        const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
        const double* gd = gout.data().data();
        if (gin[0]) {
          double* ga = gin[0]->data().data();
          const double* bd = b.data().data();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              ga[i * k + p] += dot(gd + i * n, bd + p * n, n);
            }
          }
        }
        if (gin[1]) {
          double* gb = gin[1]->data().data();
          const double* ad = a.data().data();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = ad[i * k + p];
              double* gbrow = gb + p * n;
              const double* grow = gd + i * n;
              for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
            }
          }
        }
      });
  return apply("matmul", {a, b}, rule);
}

NodeId Graph::conv1d(NodeId input, NodeId kernels, Padding padding) {
  auto forward = [padding](OpInputs in) {
    const Tensor& x = *in[0];
    const Tensor& w = *in[1];
    const ConvGeometry g = conv_geometry(x, w, padding);
    Shape out_shape = x.rank() == 3 ? Shape{g.batch, g.c_out, g.out_length} : Shape{g.c_out, g.out_length};
    Tensor out(out_shape);
    const double* xd = x.data().data();
    const double* wd = w.data().data();
    double* od = out.data().data();
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t co = 0; co < g.c_out; ++co) {
        double* orow = od + (b * g.c_out + co) * g.out_length;
        for (std::size_t ci = 0; ci < g.c_in; ++ci) {
          const double* xrow = xd + (b * g.c_in + ci) * g.length;
          for (std::size_t j = 0; j < g.k; ++j) {
            const double wv = wd[(co * g.c_in + ci) * g.k + j];
            const auto [lo, hi] = tap_range(g, j);
            const double* xs = xrow + j - g.pad_left;
            for (std::size_t t = lo; t < hi; ++t) orow[t] += wv * xs[t];
          }
        }
      }
    }
    return out;
  };
  auto backward = [padding](OpInputs in, const Tensor&, const Tensor& gout, GradIn gin) {
    const Tensor& x = *in[0];
    const Tensor& w = *in[1];
    const ConvGeometry g = conv_geometry(x, w, padding);
    const double* xd = x.data().data();
    const double* wd = w.data().data();
    const double* gd = gout.data().data();
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t co = 0; co < g.c_out; ++co) {
        const double* grow = gd + (b * g.c_out + co) * g.out_length;
        for (std::size_t ci = 0; ci < g.c_in; ++ci) {
          const std::size_t xoff = (b * g.c_in + ci) * g.length;
          for (std::size_t j = 0; j < g.k; ++j) {
            const std::size_t widx = (co * g.c_in + ci) * g.k + j;
            const auto [lo, hi] = tap_range(g, j);
            if (gin[0]) {
              double* gx = gin[0]->data().data() + xoff + j - g.pad_left;
              const double wv = wd[widx];
              for (std::size_t t = lo; t < hi; ++t) gx[t] += wv * grow[t];
            }
            if (gin[1]) {
              const double* xs = xd + xoff + j - g.pad_left;
              (*gin[1])[widx] += dot(grow + lo, xs + lo, hi - lo);
            }
          }
        }
      }
    }
  };
  return apply("conv1d", {input, kernels}, make_rule(forward, backward));
}

NodeId Graph::add_bias(NodeId x, NodeId bias) {
  static const Rule rule = make_rule(
      [](OpInputs in) {
        const Tensor& x = *in[0];
        const Tensor& b = *in[1];
        Tensor out = x;
        if (x.rank() == 2 && b.size() == x.dim(1)) {
          const std::size_t n = x.dim(0), m = x.dim(1);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) out[i * m + j] += b[j];
        } else if (x.rank() == 3 && b.size() == x.dim(1)) {
          const std::size_t bs = x.dim(0), c = x.dim(1), l = x.dim(2);
          for (std::size_t i = 0; i < bs; ++i)
            for (std::size_t ch = 0; ch < c; ++ch)
              for (std::size_t t = 0; t < l; ++t) out[(i * c + ch) * l + t] += b[ch];
        } else {
          mismatch("add_bias", x.shape(), b.shape());
        }
        return out;
      },
      [](OpInputs in, const Tensor&, const Tensor& gout, GradIn gin) {
        const Tensor& x = *in[0];
        if (gin[0]) {
          for (std::size_t i = 0; i < gout.size(); ++i) (*gin[0])[i] += gout[i];
        }
        if (gin[1]) {
          Tensor& gb = *gin[1];
          if (x.rank() == 2) {
            const std::size_t n = x.dim(0), m = x.dim(1);
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < m; ++j) gb[j] += gout[i * m + j];
          } else {
            const std::size_t bs = x.dim(0), c = x.dim(1), l = x.dim(2);
            for (std::size_t i = 0; i < bs; ++i)
              for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t t = 0; t < l; ++t) gb[ch] += gout[(i * c + ch) * l + t];
          }
        }
      });
  return apply("add_bias", {x, bias}, rule);
}

NodeId Graph::relu(NodeId x) {
  static const Rule rule = make_rule(
      [](OpInputs in) {
        Tensor out = *in[0];
        for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
        return out;
      },
      [](OpInputs in, const Tensor&, const Tensor& gout, GradIn gin) {
        const Tensor& x = *in[0];
        for (std::size_t i = 0; i < x.size(); ++i) {
          if (x[i] > 0.0) (*gin[0])[i] += gout[i];
        }
      },
      [](OpInputs in) {
        std::vector<std::int8_t> code(in[0]->size());
        for (std::size_t i = 0; i < code.size(); ++i) code[i] = (*in[0])[i] > 0.0 ? 1 : 0;
        return code;
      });
  return apply("relu", {x}, rule);
}

NodeId Graph::sigmoid(NodeId x) {
  static const Rule rule = make_rule(
      [](OpInputs in) {
        Tensor out = *in[0];
        for (auto& v : out.data()) v = stable_sigmoid(v);
        return out;
      },
      [](OpInputs, const Tensor& out, const Tensor& gout, GradIn gin) {
        for (std::size_t i = 0; i < out.size(); ++i) (*gin[0])[i] += gout[i] * out[i] * (1.0 - out[i]);
      });
  return apply("sigmoid", {x}, rule);
}

NodeId Graph::add(NodeId a, NodeId b) {
  static const Rule rule = make_rule(
      [](OpInputs in) { return binary_forward("add", *in[0], *in[1], [](double x, double y) { return x + y; }); },
      [](OpInputs, const Tensor&, const Tensor& gout, GradIn gin) {
        for (std::size_t i = 0; i < gout.size(); ++i) {
          if (gin[0]) accumulate(gin[0], i, gout[i]);
          if (gin[1]) accumulate(gin[1], i, gout[i]);
        }
      });
  return apply("add", {a, b}, rule);
}

NodeId Graph::sub(NodeId a, NodeId b) {
  static const Rule rule = make_rule(
      [](OpInputs in) { return binary_forward("sub", *in[0], *in[1], [](double x, double y) { return x - y; }); },
      [](OpInputs, const Tensor&, const Tensor& gout, GradIn gin) {
        for (std::size_t i = 0; i < gout.size(); ++i) {
          if (gin[0]) accumulate(gin[0], i, gout[i]);
          if (gin[1]) accumulate(gin[1], i, -gout[i]);
        }
      });
  return apply("sub", {a, b}, rule);
}

NodeId Graph::mul(NodeId a, NodeId b) {
  static const Rule rule = make_rule(
      [](OpInputs in) {
        return binary_forward("mul_elementwise", *in[0], *in[1], [](double x, double y) { return x * y; });
      },
      [](OpInputs in, const Tensor& out, const Tensor& gout, GradIn gin) {
        const Tensor& a = *in[0];
        const Tensor& b = *in[1];
        const bool sa = a.size() == 1 && out.size() != 1;
        const bool sb = b.size() == 1 && out.size() != 1;
        for (std::size_t i = 0; i < gout.size(); ++i) {
          if (gin[0]) accumulate(gin[0], i, gout[i] * b[sb ? 0 : i]);
          if (gin[1]) accumulate(gin[1], i, gout[i] * a[sa ? 0 : i]);
        }
      });
  return apply("mul", {a, b}, rule);
}

NodeId Graph::scale(NodeId x, double factor) {
  return apply("scale", {x},
               make_rule(
                   [factor](OpInputs in) {
                     Tensor out = *in[0];
                     for (auto& v : out.data()) v *= factor;
                     return out;
                   },
                   [factor](OpInputs, const Tensor&, const Tensor& gout, GradIn gin) {
                     for (std::size_t i = 0; i < gout.size(); ++i) (*gin[0])[i] += factor * gout[i];
                   }));
}

NodeId Graph::concat(NodeId a, NodeId b, std::size_t axis) {
  auto forward = [axis](OpInputs in) {
    const Tensor& a = *in[0];
    const Tensor& b = *in[1];
    if (a.rank() != b.rank() || axis >= a.rank()) mismatch("concat", a.shape(), b.shape());
    for (std::size_t i = 0; i < a.rank(); ++i) {
      if (i != axis && a.dim(i) != b.dim(i)) mismatch("concat", a.shape(), b.shape());
    }
    Shape shape = a.shape();
    shape[axis] += b.dim(axis);
    const std::size_t outer = prod(a.shape(), 0, axis);
    const std::size_t inner = prod(a.shape(), axis + 1, a.rank());
    const std::size_t ca = a.dim(axis) * inner, cb = b.dim(axis) * inner;
    Tensor out(shape);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(a.data().begin() + o * ca, ca, out.data().begin() + o * (ca + cb));
      std::copy_n(b.data().begin() + o * cb, cb, out.data().begin() + o * (ca + cb) + ca);
    }
    return out;
  };
  auto backward = [axis](OpInputs in, const Tensor&, const Tensor& gout, GradIn gin) {
    const Tensor& a = *in[0];
    const Tensor& b = *in[1];
    const std::size_t outer = prod(a.shape(), 0, axis);
    const std::size_t inner = prod(a.shape(), axis + 1, a.rank());
    const std::size_t ca = a.dim(axis) * inner, cb = b.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      if (gin[0])
        for (std::size_t i = 0; i < ca; ++i) (*gin[0])[o * ca + i] += gout[o * (ca + cb) + i];
      if (gin[1])
        for (std::size_t i = 0; i < cb; ++i) (*gin[1])[o * cb + i] += gout[o * (ca + cb) + ca + i];
    }
  };
  return apply("concat", {a, b}, make_rule(forward, backward));
}

NodeId Graph::sum_axis(NodeId x, std::size_t axis) { return apply("sum_axis", {x}, reduce_rule(axis, false)); }
NodeId Graph::mean_axis(NodeId x, std::size_t axis) { return apply("mean_axis", {x}, reduce_rule(axis, true)); }

NodeId Graph::sum_all(NodeId x) {
  static const Rule rule = reduce_all_rule(false);
  return apply("sum_all", {x}, rule);
}

NodeId Graph::mean_all(NodeId x) {
  static const Rule rule = reduce_all_rule(true);
  return apply("mean_all", {x}, rule);
}

NodeId Graph::reshape(NodeId x, Shape shape) {
  return apply("reshape", {x},
               make_rule([shape](OpInputs in) { return in[0]->reshaped(shape); },
                         [](OpInputs, const Tensor&, const Tensor& gout, GradIn gin) {
                           for (std::size_t i = 0; i < gout.size(); ++i) (*gin[0])[i] += gout[i];
                         }));
}

NodeId Graph::transpose(NodeId x) {
  static const Rule rule = make_rule(
      [](OpInputs in) {
        const Tensor& x = *in[0];
        require_rank("transpose", x, 2);
        const std::size_t n = x.dim(0), m = x.dim(1);
        Tensor out({m, n});
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) out[j * n + i] = x[i * m + j];
        return out;
      },
      [](OpInputs in, const Tensor&, const Tensor& gout, GradIn gin) {
        const std::size_t n = in[0]->dim(0), m = in[0]->dim(1);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) (*gin[0])[i * m + j] += gout[j * n + i];
      });
  return apply("transpose", {x}, rule);
}

NodeId Graph::l2_normalize_rows(NodeId x) {
  static const Rule rule = make_rule(
      [](OpInputs in) {
        const Tensor& x = *in[0];
        require_rank("l2_normalize_rows", x, 2);
        const std::size_t n = x.dim(0), d = x.dim(1);
        Tensor out = x;
        for (std::size_t i = 0; i < n; ++i) {
          double ss = 0.0;
          for (std::size_t j = 0; j < d; ++j) ss += x[i * d + j] * x[i * d + j];
          const double norm = std::sqrt(ss);
          if (!(norm > 0.0) || !std::isfinite(norm)) {
            throw NumericError("l2_normalize_rows: row " + std::to_string(i) + " has zero or non-finite norm");
          }
          for (std::size_t j = 0; j < d; ++j) out[i * d + j] /= norm;
        }
        return out;
      },
      [](OpInputs in, const Tensor& out, const Tensor& gout, GradIn gin) {
        const Tensor& x = *in[0];
        const std::size_t n = x.dim(0), d = x.dim(1);
        for (std::size_t i = 0; i < n; ++i) {
          double ss = 0.0, gy = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            ss += x[i * d + j] * x[i * d + j];
            gy += gout[i * d + j] * out[i * d + j];
          }
          const double norm = std::sqrt(ss);
          for (std::size_t j = 0; j < d; ++j) {
            (*gin[0])[i * d + j] += (gout[i * d + j] - out[i * d + j] * gy) / norm;
          }
        }
      });
  return apply("l2_normalize_rows", {x}, rule);
}

NodeId Graph::pairwise_distance(NodeId a, NodeId b) {
  static const Rule rule = make_rule(
      [](OpInputs in) {
        const Tensor& a = *in[0];
        const Tensor& b = *in[1];
        if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) mismatch("pairwise_distance", a.shape(), b.shape());
        const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
        Tensor out({n, m});
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < m; ++k) {
            double ss = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double diff = a[i * d + j] - b[k * d + j];
              ss += diff * diff;
            }
            out[i * m + k] = std::sqrt(ss);
          }
        }
        return out;
      },
      [](OpInputs in, const Tensor& out, const Tensor& gout, GradIn gin) {
        const Tensor& a = *in[0];
        const Tensor& b = *in[1];
        const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < m; ++k) {
            const double dist = out[i * m + k];
            if (dist == 0.0) continue;  // subgradient 0 at coincident points
            const double f = gout[i * m + k] / dist;
            for (std::size_t j = 0; j < d; ++j) {
              const double diff = a[i * d + j] - b[k * d + j];
              if (gin[0]) (*gin[0])[i * d + j] += f * diff;
              if (gin[1]) (*gin[1])[k * d + j] -= f * diff;
            }
          }
        }
      });
  return apply("pairwise_distance", {a, b}, rule);
}

NodeId Graph::log_softmax_rows(NodeId x) {
  static const Rule rule = make_rule(
      [](OpInputs in) {
        const Tensor& x = *in[0];
        require_rank("log_softmax_rows", x, 2);
        const std::size_t n = x.dim(0), m = x.dim(1);
        Tensor out = x;
        for (std::size_t i = 0; i < n; ++i) {
          const auto row = x.row(i);
          const double mx = *std::max_element(row.begin(), row.end());
          double s = 0.0;
          for (double v : row) s += std::exp(v - mx);
          const double lse = mx + std::log(s);
          for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x[i * m + j] - lse;
        }
        return out;
      },
      [](OpInputs, const Tensor& out, const Tensor& gout, GradIn gin) {
        const std::size_t n = out.dim(0), m = out.dim(1);
        for (std::size_t i = 0; i < n; ++i) {
          double gs = 0.0;
          for (std::size_t j = 0; j < m; ++j) gs += gout[i * m + j];
          for (std::size_t j = 0; j < m; ++j) {
            (*gin[0])[i * m + j] += gout[i * m + j] - std::exp(out[i * m + j]) * gs;
          }
        }
      });
  return apply("log_softmax_rows", {x}, rule);
}

NodeId Graph::select_columns(NodeId x, std::vector<std::size_t> index) {
  auto forward = [index](OpInputs in) {
    const Tensor& x = *in[0];
    require_rank("select_columns", x, 2);
    if (index.size() != x.dim(0)) {
      throw DimensionError("select_columns: " + std::to_string(index.size()) + " indices for " +
                           shape_string(x.shape()));
    }
    Tensor out({index.size()});
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= x.dim(1)) throw DimensionError("select_columns: index out of range");
      out[i] = x.at(i, index[i]);
    }
    return out;
  };
  auto backward = [index](OpInputs in, const Tensor&, const Tensor& gout, GradIn gin) {
    const std::size_t m = in[0]->dim(1);
    for (std::size_t i = 0; i < index.size(); ++i) (*gin[0])[i * m + index[i]] += gout[i];
  };
  return apply("select_columns", {x}, make_rule(forward, backward));
}

NodeId Graph::mul_channels(NodeId x, NodeId weights) {
  static const Rule rule = make_rule(
      [](OpInputs in) {
        const Tensor& x = *in[0];
        const Tensor& w = *in[1];
        if (x.rank() != 3 || w.rank() != 3 || w.dim(0) != x.dim(0) || w.dim(1) != 1 || w.dim(2) != x.dim(2)) {
          mismatch("mul_channels", x.shape(), w.shape());
        }
        const std::size_t bs = x.dim(0), c = x.dim(1), l = x.dim(2);
        Tensor out = x;
        for (std::size_t b = 0; b < bs; ++b)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t t = 0; t < l; ++t) out[(b * c + ch) * l + t] *= w[b * l + t];
        return out;
      },
      [](OpInputs in, const Tensor&, const Tensor& gout, GradIn gin) {
        const Tensor& x = *in[0];
        const Tensor& w = *in[1];
        const std::size_t bs = x.dim(0), c = x.dim(1), l = x.dim(2);
        for (std::size_t b = 0; b < bs; ++b) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t t = 0; t < l; ++t) {
              const std::size_t i = (b * c + ch) * l + t;
              if (gin[0]) (*gin[0])[i] += gout[i] * w[b * l + t];
              if (gin[1]) (*gin[1])[b * l + t] += gout[i] * x[i];
            }
          }
        }
      });
  return apply("mul_channels", {x, weights}, rule);
}

std::vector<NodeId> Graph::parameters() const {
  std::vector<NodeId> ids;
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].param_name.empty()) ids.push_back(i);
  }
  return ids;
}

const std::string& Graph::parameter_name(NodeId id) const {
  const Node& node = nodes_.at(id);
  if (node.param_name.empty()) throw ContractError("node " + std::to_string(id) + " is not a parameter");
  return node.param_name;
}

void Graph::set_value(NodeId leaf, Tensor value) {
  Node& node = nodes_.at(leaf);
  if (node.rule) throw ContractError("set_value on op node " + std::to_string(leaf));
  if (value.shape() != node.value.shape()) mismatch("set_value", node.value.shape(), value.shape());
  node.value = std::move(value);
}

void Graph::recompute() {
  for (Node& node : nodes_) {
    if (!node.rule) continue;
    const auto values = input_values(node);
    node.value = node.rule->forward(values);
  }
}

GradientMap Graph::backward(NodeId loss) const {
  if (loss >= nodes_.size()) throw ContractError("backward: unknown loss node");
  if (nodes_[loss].value.size() != 1) {
    throw ContractError("backward: loss must be scalar-shaped, got " + shape_string(nodes_[loss].value.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  grads[loss] = Tensor(nodes_[loss].value.shape(), 1.0);

  for (NodeId id = loss + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!node.rule || !node.needs_grad || grads[id].empty()) continue;
    std::vector<Tensor*> grad_in(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const NodeId input = node.inputs[i];
      if (!nodes_[input].needs_grad) continue;
      if (grads[input].empty()) grads[input] = Tensor(nodes_[input].value.shape(), 0.0);
      grad_in[i] = &grads[input];
    }
    const auto values = input_values(node);
    node.rule->backward(values, node.value, grads[id], grad_in);
  }

  GradientMap out;
  for (const auto& [name, id] : param_index_) {
    out[name] = grads[id].empty() ? Tensor(nodes_[id].value.shape(), 0.0) : std::move(grads[id]);
  }
  return out;
}

std::vector<std::int8_t> Graph::regime_signature() const {
  std::vector<std::int8_t> signature;
  for (const Node& node : nodes_) {
    if (!node.rule || !node.rule->regime) continue;
    const auto values = input_values(node);
    const auto code = node.rule->regime(values);
    signature.insert(signature.end(), code.begin(), code.end());
  }
  return signature;
}

}  // namespace fewshot
