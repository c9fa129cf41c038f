#pragma once

#include <cstdint>
#include <vector>

#include "xmark/nn/graph.hpp"

namespace xmark::nn {

// Adam with decoupled weight decay.
class AdamW {
 public:
  struct Options {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 1e-4f;
  };

  AdamW(std::vector<Parameter*> params, Options opt);

  void zero_grad();
  void step();
  void set_lr(float lr) { opt_.lr = lr; }
  float lr() const { return opt_.lr; }
  std::int64_t steps_taken() const { return t_; }

 private:
  struct Slot {
    Tensor m, v;
  };
  std::vector<Parameter*> params_;
  std::vector<Slot> slots_;
  Options opt_;
  std::int64_t t_ = 0;
};

}  // namespace xmark::nn
