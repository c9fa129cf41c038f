#pragma once

#include <string>
#include <vector>

#include "xmark/core/rng.hpp"
#include "xmark/nn/graph.hpp"

namespace xmark::nn {

// Named tensors of a model: parameters plus non-trainable buffers (running
// stats, channel masks). Used by checkpoints and fingerprints.
struct StateDict {
  std::vector<std::pair<std::string, Tensor*>> entries;
  void add(const std::string& name, Tensor* t) { entries.emplace_back(name, t); }
};

struct Conv2d {
  Parameter w;  // [cout, cin, k, k]
  Parameter b;  // [cout], absent when has_bias == false
  int stride = 1, pad = 0, ksize = 3;
  bool has_bias = true;

  Conv2d() = default;
  Conv2d(const std::string& name, int cin, int cout, int ksize, int stride, int pad, bool bias,
         Rng& rng);
  Var forward(Graph& g, Var x) const;
  void params(std::vector<Parameter*>& out);
  void state(StateDict& sd);
};

struct Linear {
  Parameter w;  // [dout, din]
  Parameter b;  // [dout]

  Linear() = default;
  Linear(const std::string& name, int din, int dout, Rng& rng);
  Var forward(Graph& g, Var x) const;
  void params(std::vector<Parameter*>& out);
  void state(StateDict& sd);
};

class BatchNorm2d {
 public:
  Parameter gamma, beta;
  Tensor running_mean, running_var;
  float momentum = 0.1f;
  float eps = 1e-5f;

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels);
  Var forward(Graph& g, Var x) { return g.batchnorm(x, *this); }
  void params(std::vector<Parameter*>& out);
  void state(StateDict& sd);

 private:
  std::string name_;
};

struct GroupNorm {
  Parameter gamma, beta;
  int groups = 8;
  float eps = 1e-5f;

  GroupNorm() = default;
  GroupNorm(const std::string& name, int channels, int groups);
  Var forward(Graph& g, Var x) {
    return g.groupnorm(x, g.param(gamma), g.param(beta), groups, eps);
  }
  void params(std::vector<Parameter*>& out);
  void state(StateDict& sd);
};

}  // namespace xmark::nn
