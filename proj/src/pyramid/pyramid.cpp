#include "xmark/pyramid/pyramid.hpp"

#include <cmath>

#include "xmark/core/image.hpp"

namespace xmark::pyr {

namespace {

constexpr float kTap[5] = {1.0f / 16, 4.0f / 16, 6.0f / 16, 4.0f / 16, 1.0f / 16};

inline int reflect(int i, int n) {
  if (i < 0) i = -i - 1;
  if (i >= n) i = 2 * n - 1 - i;
  return i;
}

int level_count_check(const Tensor& img, int levels) {
  XM_CHECK(img.rank() == 2, "pyramid: 2-D image expected");
  XM_CHECK(levels >= 1, "pyramid: levels must be >= 1");
  int side = std::min(img.dim(0), img.dim(1));
  XM_CHECK(side >= (1 << levels), "image ", img.dim(0), "x", img.dim(1),
           " too small for ", levels, " pyramid levels");
  return levels;
}

}  // namespace

Tensor gaussian_blur5(const Tensor& image_hw) {
  XM_CHECK(image_hw.rank() == 2, "gaussian_blur5: 2-D image expected");
  int h = image_hw.dim(0), w = image_hw.dim(1);
  Tensor tmp({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float s = 0.0f;
      for (int t = -2; t <= 2; ++t) s += kTap[t + 2] * image_hw.at2(y, reflect(x + t, w));
      tmp.at2(y, x) = s;
    }
  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float s = 0.0f;
      for (int t = -2; t <= 2; ++t) s += kTap[t + 2] * tmp.at2(reflect(y + t, h), x);
      out.at2(y, x) = s;
    }
  return out;
}

Tensor gaussian_downsample(const Tensor& image_hw) {
  XM_CHECK(image_hw.rank() == 2, "gaussian_downsample: 2-D image expected");
  int h = image_hw.dim(0), w = image_hw.dim(1);
  XM_CHECK(h >= 2 && w >= 2, "gaussian_downsample: image must be at least 2x2");
  Tensor blurred = gaussian_blur5(image_hw);
  int oh = (h + 1) / 2, ow = (w + 1) / 2;
  Tensor out({oh, ow});
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) out.at2(y, x) = blurred.at2(2 * y, 2 * x);
  return out;
}

Tensor upsample_to(const Tensor& image_hw, int out_h, int out_w) {
  return img::bilinear_resize(image_hw, out_h, out_w);
}

LaplacianPyramid build_laplacian_pyramid(const Tensor& image_hw, int levels) {
  level_count_check(image_hw, levels);
  std::vector<Tensor> gauss;
  gauss.push_back(image_hw);
  for (int l = 0; l < levels; ++l) gauss.push_back(gaussian_downsample(gauss.back()));
  LaplacianPyramid p;
  for (int l = 0; l < levels; ++l) {
    const Tensor& fine = gauss[static_cast<std::size_t>(l)];
    Tensor up = upsample_to(gauss[static_cast<std::size_t>(l + 1)], fine.dim(0), fine.dim(1));
    Tensor band(fine.dims());
    for (std::int64_t i = 0; i < fine.numel(); ++i)
      band.at(static_cast<std::size_t>(i)) =
          fine.at(static_cast<std::size_t>(i)) - up.at(static_cast<std::size_t>(i));
    p.bandpass.push_back(std::move(band));
  }
  p.lowpass_residual = gauss.back();
  return p;
}

Tensor reconstruct(const LaplacianPyramid& pyramid) {
  XM_CHECK(!pyramid.bandpass.empty(), "reconstruct: empty pyramid");
  XM_CHECK(pyramid.lowpass_residual.rank() == 2, "reconstruct: malformed residual");
  Tensor cur = pyramid.lowpass_residual;
  for (int l = static_cast<int>(pyramid.bandpass.size()) - 1; l >= 0; --l) {
    const Tensor& band = pyramid.bandpass[static_cast<std::size_t>(l)];
    XM_CHECK(band.rank() == 2, "reconstruct: malformed bandpass level");
    int fh = band.dim(0), fw = band.dim(1);
    XM_CHECK((cur.dim(0) == (fh + 1) / 2) && (cur.dim(1) == (fw + 1) / 2),
             "reconstruct: inconsistent level shapes at level ", l);
    Tensor up = upsample_to(cur, fh, fw);
    for (std::int64_t i = 0; i < up.numel(); ++i)
      up.at(static_cast<std::size_t>(i)) += band.at(static_cast<std::size_t>(i));
    cur = std::move(up);
  }
  return cur;
}

double laplacian_pyramid_loss(const Tensor& a_hw, const Tensor& b_hw, int levels) {
  XM_CHECK(a_hw.same_shape(b_hw), "laplacian_pyramid_loss: shape mismatch");
  level_count_check(a_hw, levels);
  LaplacianPyramid pa = build_laplacian_pyramid(a_hw, levels);
  LaplacianPyramid pb = build_laplacian_pyramid(b_hw, levels);
  double total = 0.0;
  for (int l = 0; l < levels; ++l) {
    const Tensor& ba = pa.bandpass[static_cast<std::size_t>(l)];
    const Tensor& bb = pb.bandpass[static_cast<std::size_t>(l)];
    double s = 0.0;
    for (std::int64_t i = 0; i < ba.numel(); ++i)
      s += std::fabs(static_cast<double>(ba.at(static_cast<std::size_t>(i))) -
                     bb.at(static_cast<std::size_t>(i)));
    total += s / static_cast<double>(ba.numel());
  }
  return total;
}

Tensor laplacian_highpass(const Tensor& image_hw) {
  XM_CHECK(image_hw.rank() == 2, "laplacian_highpass: 2-D image expected");
  int h = image_hw.dim(0), w = image_hw.dim(1);
  XM_CHECK(h >= 3 && w >= 3, "laplacian_highpass: image must be at least 3x3");
  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.at2(y, x) = 4.0f * image_hw.at2(y, x) - image_hw.at2(reflect(y - 1, h), x) -
                      image_hw.at2(reflect(y + 1, h), x) - image_hw.at2(y, reflect(x - 1, w)) -
                      image_hw.at2(y, reflect(x + 1, w));
  return out;
}

// ---- differentiable path ----

namespace {

nn::Var blur5_var(nn::Graph& g, nn::Var x) {
  // 5x5 outer-product binomial kernel as a constant conv weight
  Tensor w({1, 1, 5, 5});
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      w.at(static_cast<std::size_t>(i) * 5 + j) = kTap[i] * kTap[j];
  nn::Var kv = g.constant(std::move(w));
  nn::Var padded = g.reflect_pad(x, 2);
  return g.conv2d(padded, kv, nn::Var{}, 1, 0);
}

nn::Var down_var(nn::Graph& g, nn::Var x) { return g.decimate2(blur5_var(g, x)); }

}  // namespace

nn::Var laplacian_pyramid_loss_var(nn::Graph& g, nn::Var a, nn::Var b, int levels) {
  const Tensor& ta = g.value(a);
  XM_CHECK(ta.rank() == 4 && ta.dim(1) == 1, "laplacian_pyramid_loss_var: [N,1,H,W] expected");
  XM_CHECK(ta.same_shape(g.value(b)), "laplacian_pyramid_loss_var: shape mismatch");
  XM_CHECK(std::min(ta.dim(2), ta.dim(3)) >= (1 << levels),
           "laplacian_pyramid_loss_var: image too small for ", levels, " levels");
  std::vector<nn::Var> terms;
  std::vector<float> weights;
  nn::Var ga = a, gb = b;
  for (int l = 0; l < levels; ++l) {
    nn::Var da = down_var(g, ga);
    nn::Var db = down_var(g, gb);
    int fh = g.value(ga).dim(2), fw = g.value(ga).dim(3);
    nn::Var band_a = g.sub(ga, g.bilinear_resize(da, fh, fw));
    nn::Var band_b = g.sub(gb, g.bilinear_resize(db, fh, fw));
    terms.push_back(g.l1_diff_mean(band_a, band_b));
    weights.push_back(1.0f);
    ga = da;
    gb = db;
  }
  return g.weighted_sum_scalars(terms, weights);
}

}  // namespace xmark::pyr
