#include "xmark/core/image.hpp"

#include <algorithm>
#include <cmath>

namespace xmark::img {

namespace {
struct Lerp {
  int i0, i1;
  float w1;
};

Lerp lerp_at(int o, int in, double scale) {
  double src = (o + 0.5) * scale - 0.5;
  if (src < 0.0) src = 0.0;
  if (src > in - 1) src = in - 1;
  int i0 = std::min(static_cast<int>(std::floor(src)), in - 1);
  return {i0, std::min(i0 + 1, in - 1), static_cast<float>(src - i0)};
}
}  // namespace

Tensor bilinear_resize(const Tensor& image_hw, int out_h, int out_w) {
  XM_CHECK(image_hw.rank() == 2, "bilinear_resize: 2-D image expected");
  XM_CHECK(out_h >= 1 && out_w >= 1, "bilinear_resize: target must be >= 1");
  int h = image_hw.dim(0), w = image_hw.dim(1);
  XM_CHECK(h >= 1 && w >= 1, "bilinear_resize: empty image");
  Tensor out({out_h, out_w});
  double sy = static_cast<double>(h) / out_h;
  double sx = static_cast<double>(w) / out_w;
  std::vector<Lerp> cols(static_cast<std::size_t>(out_w));
  for (int ox = 0; ox < out_w; ++ox) cols[static_cast<std::size_t>(ox)] = lerp_at(ox, w, sx);
  for (int oy = 0; oy < out_h; ++oy) {
    Lerp ly = lerp_at(oy, h, sy);
    const float* r0 = image_hw.data() + static_cast<std::size_t>(ly.i0) * w;
    const float* r1 = image_hw.data() + static_cast<std::size_t>(ly.i1) * w;
    float* dst = out.data() + static_cast<std::size_t>(oy) * out_w;
    for (int ox = 0; ox < out_w; ++ox) {
      const Lerp& lx = cols[static_cast<std::size_t>(ox)];
      float top = r0[lx.i0] * (1.0f - lx.w1) + r0[lx.i1] * lx.w1;
      float bot = r1[lx.i0] * (1.0f - lx.w1) + r1[lx.i1] * lx.w1;
      dst[ox] = top * (1.0f - ly.w1) + bot * ly.w1;
    }
  }
  return out;
}

Tensor resize_with_padding(const Tensor& image_hw, int target) {
  XM_CHECK(image_hw.rank() == 2, "resize_with_padding: 2-D image expected");
  XM_CHECK(target >= 1, "resize_with_padding: target must be >= 1");
  int h = image_hw.dim(0), w = image_hw.dim(1);
  XM_CHECK(h >= 1 && w >= 1, "resize_with_padding: empty image");
  int nh, nw;
  if (h >= w) {
    nh = target;
    nw = std::max(1, static_cast<int>(static_cast<std::int64_t>(target) * w / h));
  } else {
    nw = target;
    nh = std::max(1, static_cast<int>(static_cast<std::int64_t>(target) * h / w));
  }
  Tensor content = bilinear_resize(image_hw, nh, nw);
  if (nh == target && nw == target) return content;
  Tensor out({target, target});
  int top = (target - nh) / 2;
  int left = (target - nw) / 2;
  for (int y = 0; y < nh; ++y)
    std::copy(content.data() + static_cast<std::size_t>(y) * nw,
              content.data() + static_cast<std::size_t>(y + 1) * nw,
              out.data() + static_cast<std::size_t>(top + y) * target + left);
  return out;
}

float min_value(const Tensor& t) {
  float m = t.numel() > 0 ? t.at(0) : 0.0f;
  for (std::int64_t i = 1; i < t.numel(); ++i) m = std::min(m, t.at(static_cast<std::size_t>(i)));
  return m;
}

float max_value(const Tensor& t) {
  float m = t.numel() > 0 ? t.at(0) : 0.0f;
  for (std::int64_t i = 1; i < t.numel(); ++i) m = std::max(m, t.at(static_cast<std::size_t>(i)));
  return m;
}

}  // namespace xmark::img
