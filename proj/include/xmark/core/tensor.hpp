#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "xmark/core/error.hpp"

namespace xmark {

// Dense row-major float tensor with value semantics. Rank is small (<= 4 in
// practice: N,C,H,W). Shape {} denotes a scalar with one element.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> dims) : dims_(std::move(dims)) {
    v_.assign(static_cast<std::size_t>(numel_of(dims_)), 0.0f);
  }
  Tensor(std::vector<int> dims, std::vector<float> data)
      : dims_(std::move(dims)), v_(std::move(data)) {
    XM_CHECK(static_cast<std::int64_t>(v_.size()) == numel_of(dims_),
             "tensor data size ", v_.size(), " does not match shape");
  }

  static Tensor zeros(std::vector<int> dims) { return Tensor(std::move(dims)); }
  static Tensor full(std::vector<int> dims, float value) {
    Tensor t(std::move(dims));
    for (auto& x : t.v_) x = value;
    return t;
  }
  static Tensor scalar(float value) { return Tensor({}, {value}); }

  static std::int64_t numel_of(const std::vector<int>& dims) {
    std::int64_t n = 1;
    for (int d : dims) {
      XM_CHECK(d >= 0, "negative dimension in shape");
      n *= d;
    }
    return n;
  }

  const std::vector<int>& dims() const { return dims_; }
  int dim(int i) const { return dims_.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(dims_.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(v_.size()); }
  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  float* data() { return v_.data(); }
  const float* data() const { return v_.data(); }
  std::vector<float>& vec() { return v_; }
  const std::vector<float>& vec() const { return v_; }

  float& at(std::size_t i) { return v_[i]; }
  float at(std::size_t i) const { return v_[i]; }

  // 2-D convenience accessors (images).
  float& at2(int r, int c) { return v_[static_cast<std::size_t>(r) * dims_[1] + c]; }
  float at2(int r, int c) const { return v_[static_cast<std::size_t>(r) * dims_[1] + c]; }

  Tensor reshaped(std::vector<int> dims) const {
    XM_CHECK(numel_of(dims) == numel(), "reshape element count mismatch");
    Tensor t;
    t.dims_ = std::move(dims);
    t.v_ = v_;
    return t;
  }

  void fill(float value) {
    for (auto& x : v_) x = value;
  }

 private:
  std::vector<int> dims_;
  std::vector<float> v_;
};

}  // namespace xmark
