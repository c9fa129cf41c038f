#include "xmark/nn/optim.hpp"

#include <cmath>

#include "xmark/kernels/kernels.hpp"

namespace xmark::nn {

AdamW::AdamW(std::vector<Parameter*> params, Options opt) : params_(std::move(params)), opt_(opt) {
  slots_.reserve(params_.size());
  for (Parameter* p : params_) slots_.push_back({Tensor(p->value.dims()), Tensor(p->value.dims())});
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void AdamW::step() {
  ++t_;
  float c1 = 1.0f / (1.0f - std::pow(opt_.beta1, static_cast<float>(t_)));
  float c2 = 1.0f / (1.0f - std::pow(opt_.beta2, static_cast<float>(t_)));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter* p = params_[i];
    kernels::adamw_step(p->value.data(), slots_[i].m.data(), slots_[i].v.data(), p->grad.data(),
                        static_cast<std::size_t>(p->value.numel()), opt_.lr, opt_.beta1, opt_.beta2,
                        opt_.eps, opt_.weight_decay, c1, c2);
  }
}

}  // namespace xmark::nn
