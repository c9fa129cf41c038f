#include "xmark/saliency/eigencam.hpp"

#include <cmath>
#include <vector>

namespace xmark::saliency {

Tensor normalize_cam(const Tensor& raw_hw) {
  XM_CHECK(raw_hw.rank() == 2, "normalize_cam: 2-D map expected");
  float lo = raw_hw.numel() ? raw_hw.at(0) : 0.0f;
  float hi = lo;
  for (std::int64_t i = 0; i < raw_hw.numel(); ++i) {
    float v = raw_hw.at(static_cast<std::size_t>(i));
    XM_CHECK(std::isfinite(v), "normalize_cam: non-finite value");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Tensor out(raw_hw.dims());
  if (hi <= lo) return out;  // constant map -> zeros
  float range = hi - lo;
  // divide (not multiply by reciprocal) so the max lands exactly on 1
  for (std::int64_t i = 0; i < raw_hw.numel(); ++i)
    out.at(static_cast<std::size_t>(i)) = (raw_hw.at(static_cast<std::size_t>(i)) - lo) / range;
  return out;
}

SaliencyMap eigencam(const Tensor& activations_chw) {
  XM_CHECK(activations_chw.rank() == 3, "eigencam: [C,h,w] activations expected");
  int c = activations_chw.dim(0), h = activations_chw.dim(1), w = activations_chw.dim(2);
  XM_CHECK(c >= 1 && h * w >= 1, "eigencam: empty activations");
  std::size_t hw = static_cast<std::size_t>(h) * w;
  const float* act = activations_chw.data();
  for (std::int64_t i = 0; i < activations_chw.numel(); ++i)
    XM_CHECK(std::isfinite(act[static_cast<std::size_t>(i)]), "eigencam: non-finite activations");

  // Gram matrix of M (hw x C, M[j,ch] = act[ch,j]): G = M^T M, C x C.
  std::vector<double> gram(static_cast<std::size_t>(c) * c, 0.0);
  for (int a = 0; a < c; ++a)
    for (int b = a; b < c; ++b) {
      double s = 0.0;
      const float* pa = act + static_cast<std::size_t>(a) * hw;
      const float* pb = act + static_cast<std::size_t>(b) * hw;
      for (std::size_t j = 0; j < hw; ++j) s += static_cast<double>(pa[j]) * pb[j];
      gram[static_cast<std::size_t>(a) * c + b] = s;
      gram[static_cast<std::size_t>(b) * c + a] = s;
    }

  // Power iteration for the dominant eigenvector of G.
  std::vector<double> v(static_cast<std::size_t>(c), 1.0 / std::sqrt(static_cast<double>(c)));
  double fro = 0.0;
  for (double g : gram) fro += g * g;
  if (fro == 0.0) return SaliencyMap{Tensor({h, w})};  // all-zero activations

  auto mul = [&](const std::vector<double>& x, std::vector<double>& y) {
    for (int i = 0; i < c; ++i) {
      double s = 0.0;
      for (int j = 0; j < c; ++j) s += gram[static_cast<std::size_t>(i) * c + j] * x[static_cast<std::size_t>(j)];
      y[static_cast<std::size_t>(i)] = s;
    }
  };

  std::vector<double> u(static_cast<std::size_t>(c));
  mul(v, u);
  double un = 0.0;
  for (double x : u) un += x * x;
  if (un < 1e-30 * fro) {
    // initial vector in the null space; restart from the heaviest diagonal entry
    int best = 0;
    for (int i = 1; i < c; ++i)
      if (gram[static_cast<std::size_t>(i) * c + i] > gram[static_cast<std::size_t>(best) * c + best]) best = i;
    std::fill(v.begin(), v.end(), 0.0);
    v[static_cast<std::size_t>(best)] = 1.0;
  }

  for (int iter = 0; iter < 1000; ++iter) {
    mul(v, u);
    double norm = 0.0;
    for (double x : u) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) break;
    double delta = 0.0;
    for (int i = 0; i < c; ++i) {
      double nv = u[static_cast<std::size_t>(i)] / norm;
      delta = std::max(delta, std::fabs(nv - v[static_cast<std::size_t>(i)]));
      v[static_cast<std::size_t>(i)] = nv;
    }
    if (delta < 1e-13) break;
  }

  // raw = M v, then fix sign so the mean is nonnegative.
  Tensor raw({h, w});
  double mean = 0.0;
  for (std::size_t j = 0; j < hw; ++j) {
    double s = 0.0;
    for (int ch = 0; ch < c; ++ch) s += static_cast<double>(act[static_cast<std::size_t>(ch) * hw + j]) * v[static_cast<std::size_t>(ch)];
    raw.at(j) = static_cast<float>(s);
    mean += s;
  }
  if (mean < 0.0)
    for (std::size_t j = 0; j < hw; ++j) raw.at(j) = -raw.at(j);

  return SaliencyMap{normalize_cam(raw)};
}

}  // namespace xmark::saliency
