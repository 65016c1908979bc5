#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot {

using NodeId = std::size_t;

/// Gradients keyed by parameter name.
using GradientMap = std::map<std::string, Tensor>;

enum class Padding { same, valid };

using OpInputs = std::span<const Tensor* const>;

/// Forward and backward rules of one operation.
///
/// `backward` accumulates (+=) into every non-null entry of `grad_in`; a null
/// entry means that input does not need a gradient. `regime`, when set,
/// reports which piece of a piecewise-smooth function each element is on
/// (ReLU: sign of its input) so gradient checks can detect kinks.
struct OpRule {
  std::function<Tensor(OpInputs)> forward;
  std::function<void(OpInputs in, const Tensor& out, const Tensor& grad_out, std::span<Tensor* const> grad_in)>
      backward;
  std::function<std::vector<std::int8_t>(OpInputs)> regime;
};

/// Reverse-mode differentiation tape.
///
/// Nodes are appended in evaluation order, so insertion order is a
/// topological order. Every op node keeps its rule, which lets the graph be
/// replayed after a leaf value changes (see recompute()).
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  NodeId constant(Tensor value);
  /// Trainable leaf. Names are unique within a graph.
  NodeId parameter(const std::string& name, Tensor value);

  NodeId matmul(NodeId a, NodeId b);
  /// Cross-correlation. Input is [c_in x L] or batched [B x c_in x L];
  /// kernels are [c_out x c_in x k].
  NodeId conv1d(NodeId input, NodeId kernels, Padding padding);
  /// Bias over the last axis of [N x M] or over channels of [B x C x L].
  NodeId add_bias(NodeId x, NodeId bias);

  NodeId relu(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  /// Elementwise product; either side may be a one-element scalar.
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId x, double factor);
  NodeId concat(NodeId a, NodeId b, std::size_t axis);
  NodeId sum_axis(NodeId x, std::size_t axis);
  NodeId mean_axis(NodeId x, std::size_t axis);
  NodeId sum_all(NodeId x);
  NodeId mean_all(NodeId x);
  NodeId reshape(NodeId x, Shape shape);
  NodeId transpose(NodeId x);

  /// Divides each row of [N x D] by its L2 norm. A zero row throws
  /// NumericError naming the row.
  NodeId l2_normalize_rows(NodeId x);
  /// Euclidean distances between rows: [N x D], [M x D] -> [N x M].
  NodeId pairwise_distance(NodeId a, NodeId b);
  NodeId log_softmax_rows(NodeId x);
  /// Picks x[i, index[i]] from [N x M], giving [N].
  NodeId select_columns(NodeId x, std::vector<std::size_t> index);
  /// [B x C x L] scaled by [B x 1 x L], broadcast over channels.
  NodeId mul_channels(NodeId x, NodeId weights);

  /// Registers an arbitrary operation.
  NodeId apply(const std::string& kind, std::vector<NodeId> inputs, std::shared_ptr<const OpRule> rule);

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  const std::string& kind(NodeId id) const { return nodes_.at(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// Parameter node ids in insertion order.
  std::vector<NodeId> parameters() const;
  const std::string& parameter_name(NodeId id) const;

  /// Replaces a leaf value; op nodes keep stale values until recompute().
  void set_value(NodeId leaf, Tensor value);
  /// Re-runs every op node in insertion order.
  void recompute();

  /// Gradient of a one-element node with respect to every parameter.
  /// Parameters the loss does not reach receive zero gradients.
  GradientMap backward(NodeId loss) const;

  /// Concatenated regime codes of all piecewise ops.
  std::vector<std::int8_t> regime_signature() const;

 private:
  struct Node {
    std::string kind;
    std::vector<NodeId> inputs;
    Tensor value;
    std::string param_name;
    std::shared_ptr<const OpRule> rule;
    bool needs_grad = false;
  };

  std::vector<const Tensor*> input_values(const Node& node) const;

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> param_index_;
};

}  // namespace fewshot
