#pragma once

#include <vector>

#include "xmark/core/tensor.hpp"
#include "xmark/nn/graph.hpp"

namespace xmark::pyr {

// Burt-Adelson style pyramid: 5-tap binomial blur [1,4,6,4,1]/16 with
// symmetric reflection at the borders, decimation by 2 (ceil), bilinear
// upsampling back to the exact finer shape.
struct LaplacianPyramid {
  std::vector<Tensor> bandpass;  // fine to coarse, one per level
  Tensor lowpass_residual;       // coarsest gaussian level
};

Tensor gaussian_blur5(const Tensor& image_hw);
Tensor gaussian_downsample(const Tensor& image_hw);  // blur then x[::2,::2]
Tensor upsample_to(const Tensor& image_hw, int out_h, int out_w);

LaplacianPyramid build_laplacian_pyramid(const Tensor& image_hw, int levels);
Tensor reconstruct(const LaplacianPyramid& pyramid);

// Sum over levels of mean |bandpass_l(a) - bandpass_l(b)| (per-pixel
// normalized, residual excluded).
double laplacian_pyramid_loss(const Tensor& a_hw, const Tensor& b_hw, int levels);

// Discrete Laplacian (center 4, cross -1), reflect borders.
Tensor laplacian_highpass(const Tensor& image_hw);

// Differentiable version over batched [N,1,H,W] vars; same math as the plain
// path up to float summation order.
nn::Var laplacian_pyramid_loss_var(nn::Graph& g, nn::Var a, nn::Var b, int levels);

}  // namespace xmark::pyr
