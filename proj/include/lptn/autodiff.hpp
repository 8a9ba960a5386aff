#pragma once

#include <functional>
#include <vector>

#include "lptn/kernels.hpp"
#include "lptn/tensor.hpp"

namespace lptn {

using kernels::ConvSpec;
using kernels::PadMode;

template <typename T>
class Graph;

// Handle to a node of one Graph. Plain id; cheap to copy.
template <typename T>
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

using Varf = Var<float>;
using Vard = Var<double>;

// Reverse-mode tape. Nodes are appended in execution order, so inputs always
// precede their consumers and a single reverse sweep visits each node once.
// A graph is built per forward pass and thrown away after the step.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    return push("leaf", {}, std::move(value), nullptr, requires_grad);
  }

  // Appends a node. backward receives this graph and the node id and must
  // accumulate (+=) into the input gradients via grad_buffer().
  Var<T> push(const char* tag, std::vector<int> inputs, Tensor<T> value, BackwardFn backward,
              bool force_requires_grad = false) {
    const int id = static_cast<int>(nodes_.size());
    bool needs = force_requires_grad;
    for (int in : inputs) {
      if (in < 0 || in >= id) throw Error(cat("graph: bad input node ", in, " for node ", id));
      needs = needs || nodes_[static_cast<std::size_t>(in)].needs_grad;
    }
    Node node;
    node.value = std::move(value);
    node.inputs = std::move(inputs);
    node.tag = tag;
    node.needs_grad = needs;
    if (needs) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    grads_.emplace_back();
    return Var<T>{id};
  }

  const Tensor<T>& value(Var<T> v) const { return node_at(v).value; }
  const char* tag(Var<T> v) const { return node_at(v).tag; }
  bool needs_grad(Var<T> v) const { return node_at(v).needs_grad; }
  bool has_grad(Var<T> v) const { return v.valid() && !grads_[static_cast<std::size_t>(v.id)].empty(); }

  const Tensor<T>& grad(Var<T> v) const {
    if (!has_grad(v)) throw Error(cat("graph: no gradient recorded for node ", v.id));
    return grads_[static_cast<std::size_t>(v.id)];
  }

  // Gradient of v, or zeros when no path from the loss reached it.
  Tensor<T> grad_or_zero(Var<T> v) const {
    if (has_grad(v)) return grads_[static_cast<std::size_t>(v.id)];
    return Tensor<T>(value(v).shape);
  }

  Tensor<T>& grad_buffer(int id) {
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.empty()) g = Tensor<T>(nodes_[static_cast<std::size_t>(id)].value.shape);
    return g;
  }

  // Reverse sweep from a scalar loss node. Fills gradients for every
  // requires_grad leaf the loss depends on.
  void backward(Var<T> loss) {
    const Node& ln = node_at(loss);
    if (ln.value.numel() != 1) {
      throw ValueError(cat("backward: loss must be scalar, got shape ", ln.value.shape.str()));
    }
    if (!ln.needs_grad) return;  // nothing requires grad
    grad_buffer(loss.id).fill(T(1));
    for (int id = loss.id; id >= 0; --id) {
      Node& node = nodes_[static_cast<std::size_t>(id)];
      if (node.backward && !grads_[static_cast<std::size_t>(id)].empty()) {
        node.backward(*this, id);
      }
    }
  }

  i64 size() const { return static_cast<i64>(nodes_.size()); }

  void clear() {
    nodes_.clear();
    grads_.clear();
  }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<int> inputs;
    const char* tag = "";
    BackwardFn backward;
    bool needs_grad = false;
  };

  const Node& node_at(Var<T> v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
      throw Error(cat("graph: invalid node handle ", v.id));
    }
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
};

using Graphf = Graph<float>;
using Graphd = Graph<double>;

// -------- differentiable ops --------

template <typename T>
Var<T> conv2d(Graph<T>& g, Var<T> x, Var<T> w, Var<T> bias, const ConvSpec& spec);
template <typename T>
Var<T> conv2d(Graph<T>& g, Var<T> x, Var<T> w, const ConvSpec& spec);  // no bias
template <typename T>
Var<T> conv2d_transpose(Graph<T>& g, Var<T> x, Var<T> w, const ConvSpec& spec, i64 out_h = 0,
                        i64 out_w = 0);

template <typename T>
Var<T> bilinear_up2(Graph<T>& g, Var<T> x);
template <typename T>
Var<T> bilinear_down2(Graph<T>& g, Var<T> x);
template <typename T>
Var<T> avg_pool2(Graph<T>& g, Var<T> x);
template <typename T>
Var<T> pyr_down(Graph<T>& g, Var<T> x);
template <typename T>
Var<T> pyr_up(Graph<T>& g, Var<T> x);

template <typename T>
Var<T> leaky_relu(Graph<T>& g, Var<T> x, T slope);
template <typename T>
Var<T> tanh(Graph<T>& g, Var<T> x);
template <typename T>
Var<T> instance_norm(Graph<T>& g, Var<T> x, Var<T> gamma, Var<T> beta, T eps);

template <typename T>
Var<T> add(Graph<T>& g, Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Graph<T>& g, Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Graph<T>& g, Var<T> a, Var<T> b);
template <typename T>
Var<T> add_scalar(Graph<T>& g, Var<T> x, T s);
template <typename T>
Var<T> mul_scalar(Graph<T>& g, Var<T> x, T s);

template <typename T>
Var<T> concat_channels(Graph<T>& g, const std::vector<Var<T>>& parts);
template <typename T>
Var<T> broadcast_mul_mask(Graph<T>& g, Var<T> x, Var<T> mask);

template <typename T>
Var<T> mean_all(Graph<T>& g, Var<T> x);
template <typename T>
Var<T> sum_all(Graph<T>& g, Var<T> x);

template <typename T>
Var<T> crop_tl(Graph<T>& g, Var<T> x, i64 h, i64 w);
template <typename T>
Var<T> pad_reflect_br(Graph<T>& g, Var<T> x, i64 pb, i64 pr);

}  // namespace lptn
