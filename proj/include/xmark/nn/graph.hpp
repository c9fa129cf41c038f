#pragma once

// Tape-based reverse-mode autodiff over Tensor. A Graph is built per training
// step; ops append nodes and backward() sweeps them in reverse creation order.
// Per-element summation order inside every op is fixed, so gradients are
// reproducible and independent of the worker thread count.

#include <functional>
#include <string>
#include <vector>

#include "xmark/core/tensor.hpp"

namespace xmark::nn {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  // frozen parameters (trainable == false) receive no gradient and cost no
  // backward work
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor(value.dims());
  }
  void zero_grad() { grad.fill(0.0f); }
  std::int64_t numel() const { return value.numel(); }
};

class BatchNorm2d;

enum class PadMode { zero, reflect };

class Graph {
 public:
  explicit Graph(bool training = true) : training_(training) {}

  bool training() const { return training_; }

  // Leaves.
  Var constant(Tensor t);
  Var input(Tensor t, bool requires_grad = false);
  Var param(Parameter& p);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;  // valid after backward(); zeros if untouched

  // Elementwise.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, float s);
  Var relu(Var a);
  Var leaky_relu(Var a, float slope);
  Var tanh_op(Var a);
  Var sigmoid(Var a);
  Var square(Var a);
  Var clamp01(Var a);

  // Shape / structure.
  Var concat_channels(Var a, Var b);      // [N,C1,H,W] + [N,C2,H,W]
  Var slice_col(Var x, int col);          // [N,K] -> [N,1]
  Var slice_rows(Var x, int start, int count);  // [N,K] -> [count,K]
  Var broadcast_channel_mul(Var x, const Tensor& per_channel);  // constant mask

  // Conv / pooling / resampling. x is [N,C,H,W].
  Var conv2d(Var x, Var w, Var b, int stride, int pad, PadMode pad_mode = PadMode::zero);
  Var linear(Var x, Var w, Var b);        // x [N,din], w [dout,din]
  Var maxpool2(Var x);                    // 2x2 stride 2, floor
  Var global_avg_pool(Var x);             // -> [N,C]
  Var bilinear_resize(Var x, int oh, int ow);  // half-pixel convention
  Var pad_to(Var x, int top, int left, int oh, int ow);  // zero canvas
  Var decimate2(Var x);                   // x[..., ::2, ::2], ceil sizes
  Var reflect_pad(Var x, int p);          // symmetric (edge-inclusive) reflection

  // Normalization.
  Var batchnorm(Var x, BatchNorm2d& bn);
  Var groupnorm(Var x, Var gamma, Var beta, int groups, float eps);
  Var channel_l2_normalize(Var x, float eps);  // unit norm across C per (n,h,w)

  // Reductions / losses (scalar outputs).
  Var mean_all(Var x);
  Var sum_all(Var x);
  Var l1_diff_mean(Var a, Var b);
  Var bce_with_logits(Var z, const Tensor& targets);
  Var weighted_sum_scalars(const std::vector<Var>& vs, const std::vector<float>& ws);

  void backward(Var loss);

  std::size_t node_count() const { return nodes_.size(); }

  // Multiply-accumulate count of every conv/linear executed on this graph
  // (weights x output locations; norms and activations excluded).
  std::int64_t macs() const { return macs_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    bool grad_alloc = false;
    Parameter* bound = nullptr;
    std::function<void(Graph&)> backward;
  };

  int make_node(Tensor value, std::initializer_list<int> inputs);
  bool needs(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  Tensor& grad_buf(int id);
  const Tensor& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  void accumulate(int id, const Tensor& g);

  bool training_;
  std::vector<Node> nodes_;
  std::int64_t macs_ = 0;

  friend struct GraphOps;
};

}  // namespace xmark::nn
