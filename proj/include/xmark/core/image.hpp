#pragma once

#include "xmark/core/tensor.hpp"

namespace xmark::img {

// Bilinear resampling of a 2-D image, half-pixel centers. Identity when the
// shape already matches.
Tensor bilinear_resize(const Tensor& image_hw, int out_h, int out_w);

// Scale so the longer side hits `target` (aspect preserved, shorter side
// floored to >= 1), then zero-pad to target x target. Padding is symmetric
// with the extra row/column on the bottom/right.
Tensor resize_with_padding(const Tensor& image_hw, int target);

float min_value(const Tensor& t);
float max_value(const Tensor& t);

}  // namespace xmark::img
