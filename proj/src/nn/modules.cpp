#include "xmark/nn/modules.hpp"

#include <cmath>

namespace xmark::nn {

namespace {
Tensor kaiming_conv(int cout, int cin, int ksize, Rng& rng) {
  Tensor w({cout, cin, ksize, ksize});
  double fan_in = static_cast<double>(cin) * ksize * ksize;
  double stdev = std::sqrt(2.0 / fan_in);
  for (std::int64_t i = 0; i < w.numel(); ++i)
    w.at(static_cast<std::size_t>(i)) = static_cast<float>(rng.normal(0.0, stdev));
  return w;
}
}  // namespace

Conv2d::Conv2d(const std::string& name, int cin, int cout, int ksize_, int stride_, int pad_,
               bool bias, Rng& rng)
    : stride(stride_), pad(pad_), ksize(ksize_), has_bias(bias) {
  w = Parameter(name + ".w", kaiming_conv(cout, cin, ksize_, rng));
  if (has_bias) b = Parameter(name + ".b", Tensor({cout}));
}

Var Conv2d::forward(Graph& g, Var x) const {
  Var wv = g.param(const_cast<Parameter&>(w));
  Var bv = has_bias ? g.param(const_cast<Parameter&>(b)) : Var{};
  return g.conv2d(x, wv, bv, stride, pad);
}

void Conv2d::params(std::vector<Parameter*>& out) {
  out.push_back(&w);
  if (has_bias) out.push_back(&b);
}

void Conv2d::state(StateDict& sd) {
  sd.add(w.name, &w.value);
  if (has_bias) sd.add(b.name, &b.value);
}

Linear::Linear(const std::string& name, int din, int dout, Rng& rng) {
  Tensor wt({dout, din});
  double bound = 1.0 / std::sqrt(static_cast<double>(din));
  for (std::int64_t i = 0; i < wt.numel(); ++i)
    wt.at(static_cast<std::size_t>(i)) = static_cast<float>(rng.uniform(-bound, bound));
  w = Parameter(name + ".w", std::move(wt));
  b = Parameter(name + ".b", Tensor({dout}));
}

Var Linear::forward(Graph& g, Var x) const {
  return g.linear(x, g.param(const_cast<Parameter&>(w)), g.param(const_cast<Parameter&>(b)));
}

void Linear::params(std::vector<Parameter*>& out) {
  out.push_back(&w);
  out.push_back(&b);
}

void Linear::state(StateDict& sd) {
  sd.add(w.name, &w.value);
  sd.add(b.name, &b.value);
}

BatchNorm2d::BatchNorm2d(const std::string& name, int channels) : name_(name) {
  gamma = Parameter(name + ".gamma", Tensor::full({channels}, 1.0f));
  beta = Parameter(name + ".beta", Tensor({channels}));
  running_mean = Tensor({channels});
  running_var = Tensor::full({channels}, 1.0f);
}

void BatchNorm2d::params(std::vector<Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

void BatchNorm2d::state(StateDict& sd) {
  sd.add(gamma.name, &gamma.value);
  sd.add(beta.name, &beta.value);
  sd.add(name_ + ".running_mean", &running_mean);
  sd.add(name_ + ".running_var", &running_var);
}

GroupNorm::GroupNorm(const std::string& name, int channels, int groups_) : groups(groups_) {
  gamma = Parameter(name + ".gamma", Tensor::full({channels}, 1.0f));
  beta = Parameter(name + ".beta", Tensor({channels}));
}

void GroupNorm::params(std::vector<Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

void GroupNorm::state(StateDict& sd) {
  sd.add(gamma.name, &gamma.value);
  sd.add(beta.name, &beta.value);
}

}  // namespace xmark::nn
