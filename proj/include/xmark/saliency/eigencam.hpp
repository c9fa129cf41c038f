#pragma once

#include "xmark/core/tensor.hpp"

namespace xmark::saliency {

// Saliency values live in [0,1]; an all-constant raw map normalizes to zeros.
struct SaliencyMap {
  Tensor values;  // 2-D
};

// Min-max normalization with the degenerate all-zeros rule.
Tensor normalize_cam(const Tensor& raw_hw);

// Projects [C,h,w] activations onto their first right singular vector
// (computed on the (h*w) x C matrix), with the sign chosen so the projected
// map has nonnegative mean, then min-max normalizes.
SaliencyMap eigencam(const Tensor& activations_chw);

}  // namespace xmark::saliency
