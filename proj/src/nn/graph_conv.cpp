// Convolution, pooling and resampling ops. Convolutions run as im2col + gemm;
// the column buffer is rebuilt in the backward pass instead of being cached.

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "xmark/kernels/kernels.hpp"
#include "xmark/nn/graph.hpp"

namespace xmark::nn {

namespace k = xmark::kernels;

namespace {

inline int reflect_index(int i, int n) {
  // symmetric reflection with edge repeat: -1 -> 0, -2 -> 1, n -> n-1
  if (i < 0) i = -i - 1;
  if (i >= n) i = 2 * n - 1 - i;
  return i;
}

struct ConvDims {
  int n, c, h, w, cout, kh, kw, stride, pad, oh, ow;
  std::size_t ckk() const { return static_cast<std::size_t>(c) * kh * kw; }
  std::size_t ohw() const { return static_cast<std::size_t>(oh) * ow; }
};

void im2col(const float* x, const ConvDims& d, PadMode mode, float* cols) {
  // cols is [c*kh*kw, oh*ow]
  for (int ch = 0; ch < d.c; ++ch) {
    const float* xp = x + static_cast<std::size_t>(ch) * d.h * d.w;
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        float* crow = cols + ((static_cast<std::size_t>(ch) * d.kh + ki) * d.kw + kj) * d.ohw();
        for (int oy = 0; oy < d.oh; ++oy) {
          int iy = oy * d.stride - d.pad + ki;
          bool row_ok = iy >= 0 && iy < d.h;
          if (!row_ok && mode == PadMode::reflect) {
            iy = reflect_index(iy, d.h);
            row_ok = true;
          }
          float* dst = crow + static_cast<std::size_t>(oy) * d.ow;
          if (!row_ok) {
            std::fill(dst, dst + d.ow, 0.0f);
            continue;
          }
          const float* src = xp + static_cast<std::size_t>(iy) * d.w;
          for (int ox = 0; ox < d.ow; ++ox) {
            int ix = ox * d.stride - d.pad + kj;
            if (ix < 0 || ix >= d.w) {
              if (mode == PadMode::reflect) {
                dst[ox] = src[reflect_index(ix, d.w)];
              } else {
                dst[ox] = 0.0f;
              }
            } else {
              dst[ox] = src[ix];
            }
          }
        }
      }
    }
  }
}

void col2im_accumulate(const float* cols, const ConvDims& d, PadMode mode, float* dx) {
  for (int ch = 0; ch < d.c; ++ch) {
    float* xp = dx + static_cast<std::size_t>(ch) * d.h * d.w;
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        const float* crow = cols + ((static_cast<std::size_t>(ch) * d.kh + ki) * d.kw + kj) * d.ohw();
        for (int oy = 0; oy < d.oh; ++oy) {
          int iy = oy * d.stride - d.pad + ki;
          if (iy < 0 || iy >= d.h) {
            if (mode != PadMode::reflect) continue;
            iy = reflect_index(iy, d.h);
          }
          const float* src = crow + static_cast<std::size_t>(oy) * d.ow;
          float* dst = xp + static_cast<std::size_t>(iy) * d.w;
          for (int ox = 0; ox < d.ow; ++ox) {
            int ix = ox * d.stride - d.pad + kj;
            if (ix < 0 || ix >= d.w) {
              if (mode != PadMode::reflect) continue;
              ix = reflect_index(ix, d.w);
            }
            dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var Graph::conv2d(Var x, Var w, Var b, int stride, int pad, PadMode pad_mode) {
  const Tensor& tx = val(x.id);
  const Tensor& tw = val(w.id);
  XM_CHECK(tx.rank() == 4, "conv2d: input must be [N,C,H,W]");
  XM_CHECK(tw.rank() == 4, "conv2d: weight must be [Cout,Cin,kh,kw]");
  XM_CHECK(tx.dim(1) == tw.dim(1), "conv2d: channel mismatch");
  XM_CHECK(stride >= 1, "conv2d: stride must be >= 1");
  ConvDims d;
  d.n = tx.dim(0); d.c = tx.dim(1); d.h = tx.dim(2); d.w = tx.dim(3);
  d.cout = tw.dim(0); d.kh = tw.dim(2); d.kw = tw.dim(3);
  d.stride = stride; d.pad = pad;
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  XM_CHECK(d.oh >= 1 && d.ow >= 1, "conv2d: kernel larger than padded input");

  macs_ += static_cast<std::int64_t>(d.n) * d.cout * static_cast<std::int64_t>(d.ckk()) *
           static_cast<std::int64_t>(d.ohw());
  Tensor out({d.n, d.cout, d.oh, d.ow});
  std::vector<float> cols(d.ckk() * d.ohw());
  const float* bias = b.valid() ? val(b.id).data() : nullptr;
  for (int i = 0; i < d.n; ++i) {
    const float* xp = tx.data() + static_cast<std::size_t>(i) * d.c * d.h * d.w;
    float* yp = out.data() + static_cast<std::size_t>(i) * d.cout * d.ohw();
    im2col(xp, d, pad_mode, cols.data());
    k::gemm_nn(tw.data(), cols.data(), yp, d.cout, static_cast<int>(d.ckk()),
               static_cast<int>(d.ohw()), false);
    if (bias) {
      for (int co = 0; co < d.cout; ++co) {
        float bv = bias[co];
        float* row = yp + static_cast<std::size_t>(co) * d.ohw();
        for (std::size_t j = 0; j < d.ohw(); ++j) row[j] += bv;
      }
    }
  }

  int id = make_node(std::move(out), {x.id, w.id, b.id});
  int ix = x.id, iw = w.id, ib = b.id;
  nodes_.back().backward = [id, ix, iw, ib, d, pad_mode](Graph& g) {
    const Tensor& go = g.grad_buf(id);
    const Tensor& tw2 = g.val(iw);
    bool nx = g.needs(ix), nw = g.needs(iw);
    bool nb = ib >= 0 && g.needs(ib);
    std::vector<float> cols(d.ckk() * d.ohw());
    for (int i = 0; i < d.n; ++i) {
      const float* gyp = go.data() + static_cast<std::size_t>(i) * d.cout * d.ohw();
      if (nx) {
        k::gemm_tn(tw2.data(), gyp, cols.data(), static_cast<int>(d.ckk()), d.cout,
                   static_cast<int>(d.ohw()), false);
        float* dxp = g.grad_buf(ix).data() + static_cast<std::size_t>(i) * d.c * d.h * d.w;
        col2im_accumulate(cols.data(), d, pad_mode, dxp);
      }
      if (nw) {
        const float* xp = g.val(ix).data() + static_cast<std::size_t>(i) * d.c * d.h * d.w;
        im2col(xp, d, pad_mode, cols.data());
        k::gemm_nt(gyp, cols.data(), g.grad_buf(iw).data(), d.cout,
                   static_cast<int>(d.ohw()), static_cast<int>(d.ckk()), true);
      }
      if (nb) {
        float* db = g.grad_buf(ib).data();
        for (int co = 0; co < d.cout; ++co)
          db[co] += k::vsum(gyp + static_cast<std::size_t>(co) * d.ohw(), d.ohw());
      }
    }
  };
  return Var{id};
}

Var Graph::linear(Var x, Var w, Var b) {
  const Tensor& tx = val(x.id);
  const Tensor& tw = val(w.id);
  XM_CHECK(tx.rank() == 2 && tw.rank() == 2, "linear: rank-2 expected");
  XM_CHECK(tx.dim(1) == tw.dim(1), "linear: feature dim mismatch");
  int n = tx.dim(0), din = tx.dim(1), dout = tw.dim(0);
  macs_ += static_cast<std::int64_t>(n) * din * dout;
  Tensor out({n, dout});
  k::gemm_nt(tx.data(), tw.data(), out.data(), n, din, dout, false);
  if (b.valid()) {
    const Tensor& tb = val(b.id);
    for (int i = 0; i < n; ++i)
      k::axpy(1.0f, tb.data(), out.data() + static_cast<std::size_t>(i) * dout,
              static_cast<std::size_t>(dout));
  }
  int id = make_node(std::move(out), {x.id, w.id, b.id});
  int ix = x.id, iw = w.id, ib = b.id;
  nodes_.back().backward = [id, ix, iw, ib, n, din, dout](Graph& g) {
    const Tensor& go = g.grad_buf(id);
    if (g.needs(ix))
      k::gemm_nn(go.data(), g.val(iw).data(), g.grad_buf(ix).data(), n, dout, din, true);
    if (g.needs(iw))
      k::gemm_tn(go.data(), g.val(ix).data(), g.grad_buf(iw).data(), dout, n, din, true);
    if (ib >= 0 && g.needs(ib)) {
      float* db = g.grad_buf(ib).data();
      for (int i = 0; i < n; ++i)
        k::axpy(1.0f, go.data() + static_cast<std::size_t>(i) * dout, db,
                static_cast<std::size_t>(dout));
    }
  };
  return Var{id};
}

Var Graph::maxpool2(Var x) {
  const Tensor& tx = val(x.id);
  XM_CHECK(tx.rank() == 4, "maxpool2: rank-4 expected");
  int n = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
  int oh = h / 2, ow = w / 2;
  XM_CHECK(oh >= 1 && ow >= 1, "maxpool2: input too small");
  Tensor out({n, c, oh, ow});
  auto idx = std::make_shared<std::vector<int>>(static_cast<std::size_t>(n) * c * oh * ow);
  std::size_t plane = static_cast<std::size_t>(h) * w;
  std::size_t oplane = static_cast<std::size_t>(oh) * ow;
  for (int i = 0; i < n * c; ++i) {
    const float* xp = tx.data() + static_cast<std::size_t>(i) * plane;
    float* yp = out.data() + static_cast<std::size_t>(i) * oplane;
    int* ip = idx->data() + static_cast<std::size_t>(i) * oplane;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        int base = 2 * oy * w + 2 * ox;
        int best = base;
        float bv = xp[base];
        const int cand[3] = {base + 1, base + w, base + w + 1};
        for (int cidx : cand)
          if (xp[cidx] > bv) { bv = xp[cidx]; best = cidx; }
        yp[static_cast<std::size_t>(oy) * ow + ox] = bv;
        ip[static_cast<std::size_t>(oy) * ow + ox] = best;
      }
  }
  int id = make_node(std::move(out), {x.id});
  int ix = x.id;
  nodes_.back().backward = [id, ix, idx, n, c, plane, oplane](Graph& g) {
    if (!g.needs(ix)) return;
    const Tensor& go = g.grad_buf(id);
    Tensor& dx = g.grad_buf(ix);
    for (int i = 0; i < n * c; ++i) {
      const float* gp = go.data() + static_cast<std::size_t>(i) * oplane;
      const int* ip = idx->data() + static_cast<std::size_t>(i) * oplane;
      float* dp = dx.data() + static_cast<std::size_t>(i) * plane;
      for (std::size_t j = 0; j < oplane; ++j) dp[ip[j]] += gp[j];
    }
  };
  return Var{id};
}

Var Graph::global_avg_pool(Var x) {
  const Tensor& tx = val(x.id);
  XM_CHECK(tx.rank() == 4, "global_avg_pool: rank-4 expected");
  int n = tx.dim(0), c = tx.dim(1);
  std::size_t plane = static_cast<std::size_t>(tx.dim(2)) * tx.dim(3);
  Tensor out({n, c});
  for (int i = 0; i < n * c; ++i)
    out.at(static_cast<std::size_t>(i)) =
        k::vsum(tx.data() + static_cast<std::size_t>(i) * plane, plane) / static_cast<float>(plane);
  int id = make_node(std::move(out), {x.id});
  int ix = x.id;
  nodes_.back().backward = [id, ix, n, c, plane](Graph& g) {
    if (!g.needs(ix)) return;
    const Tensor& go = g.grad_buf(id);
    Tensor& dx = g.grad_buf(ix);
    float inv = 1.0f / static_cast<float>(plane);
    for (int i = 0; i < n * c; ++i) {
      float gv = go.at(static_cast<std::size_t>(i)) * inv;
      float* dp = dx.data() + static_cast<std::size_t>(i) * plane;
      for (std::size_t j = 0; j < plane; ++j) dp[j] += gv;
    }
  };
  return Var{id};
}

namespace {
struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<float> w1;  // weight of i1; weight of i0 is 1-w1
};

LerpAxis make_lerp(int in, int out) {
  LerpAxis ax;
  ax.i0.resize(out);
  ax.i1.resize(out);
  ax.w1.resize(out);
  double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    if (src > in - 1) src = in - 1;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    int i1 = std::min(i0 + 1, in - 1);
    ax.i0[o] = i0;
    ax.i1[o] = i1;
    ax.w1[o] = static_cast<float>(src - i0);
  }
  return ax;
}
}  // namespace

Var Graph::bilinear_resize(Var x, int oh, int ow) {
  const Tensor& tx = val(x.id);
  XM_CHECK(tx.rank() == 4, "bilinear_resize: rank-4 expected");
  XM_CHECK(oh >= 1 && ow >= 1, "bilinear_resize: target must be >= 1");
  int n = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
  auto ay = std::make_shared<LerpAxis>(make_lerp(h, oh));
  auto ax = std::make_shared<LerpAxis>(make_lerp(w, ow));
  Tensor out({n, c, oh, ow});
  std::size_t plane = static_cast<std::size_t>(h) * w;
  std::size_t oplane = static_cast<std::size_t>(oh) * ow;
  for (int i = 0; i < n * c; ++i) {
    const float* xp = tx.data() + static_cast<std::size_t>(i) * plane;
    float* yp = out.data() + static_cast<std::size_t>(i) * oplane;
    for (int oy = 0; oy < oh; ++oy) {
      const float* r0 = xp + static_cast<std::size_t>(ay->i0[oy]) * w;
      const float* r1 = xp + static_cast<std::size_t>(ay->i1[oy]) * w;
      float wy = ay->w1[oy];
      for (int ox = 0; ox < ow; ++ox) {
        float wx = ax->w1[ox];
        float top = r0[ax->i0[ox]] * (1.0f - wx) + r0[ax->i1[ox]] * wx;
        float bot = r1[ax->i0[ox]] * (1.0f - wx) + r1[ax->i1[ox]] * wx;
        yp[static_cast<std::size_t>(oy) * ow + ox] = top * (1.0f - wy) + bot * wy;
      }
    }
  }
  int id = make_node(std::move(out), {x.id});
  int ix = x.id;
  nodes_.back().backward = [id, ix, ay, ax, n, c, w, ow, oh, plane, oplane](Graph& g) {
    if (!g.needs(ix)) return;
    const Tensor& go = g.grad_buf(id);
    Tensor& dx = g.grad_buf(ix);
    for (int i = 0; i < n * c; ++i) {
      const float* gp = go.data() + static_cast<std::size_t>(i) * oplane;
      float* dp = dx.data() + static_cast<std::size_t>(i) * plane;
      for (int oy = 0; oy < oh; ++oy) {
        float wy = ay->w1[oy];
        float* d0 = dp + static_cast<std::size_t>(ay->i0[oy]) * w;
        float* d1 = dp + static_cast<std::size_t>(ay->i1[oy]) * w;
        for (int ox = 0; ox < ow; ++ox) {
          float gv = gp[static_cast<std::size_t>(oy) * ow + ox];
          float wx = ax->w1[ox];
          d0[ax->i0[ox]] += gv * (1.0f - wy) * (1.0f - wx);
          d0[ax->i1[ox]] += gv * (1.0f - wy) * wx;
          d1[ax->i0[ox]] += gv * wy * (1.0f - wx);
          d1[ax->i1[ox]] += gv * wy * wx;
        }
      }
    }
  };
  return Var{id};
}

Var Graph::pad_to(Var x, int top, int left, int oh, int ow) {
  const Tensor& tx = val(x.id);
  XM_CHECK(tx.rank() == 4, "pad_to: rank-4 expected");
  int n = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
  XM_CHECK(top >= 0 && left >= 0 && top + h <= oh && left + w <= ow, "pad_to: region out of canvas");
  Tensor out({n, c, oh, ow});
  for (int i = 0; i < n * c; ++i) {
    const float* xp = tx.data() + static_cast<std::size_t>(i) * h * w;
    float* yp = out.data() + static_cast<std::size_t>(i) * oh * ow;
    for (int y = 0; y < h; ++y)
      std::copy(xp + static_cast<std::size_t>(y) * w, xp + static_cast<std::size_t>(y + 1) * w,
                yp + static_cast<std::size_t>(top + y) * ow + left);
  }
  int id = make_node(std::move(out), {x.id});
  int ix = x.id;
  nodes_.back().backward = [id, ix, top, left, n, c, h, w, oh, ow](Graph& g) {
    if (!g.needs(ix)) return;
    const Tensor& go = g.grad_buf(id);
    Tensor& dx = g.grad_buf(ix);
    for (int i = 0; i < n * c; ++i) {
      const float* gp = go.data() + static_cast<std::size_t>(i) * oh * ow;
      float* dp = dx.data() + static_cast<std::size_t>(i) * h * w;
      for (int y = 0; y < h; ++y)
        k::axpy(1.0f, gp + static_cast<std::size_t>(top + y) * ow + left,
                dp + static_cast<std::size_t>(y) * w, static_cast<std::size_t>(w));
    }
  };
  return Var{id};
}

Var Graph::decimate2(Var x) {
  const Tensor& tx = val(x.id);
  XM_CHECK(tx.rank() == 4, "decimate2: rank-4 expected");
  int n = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
  int oh = (h + 1) / 2, ow = (w + 1) / 2;
  Tensor out({n, c, oh, ow});
  for (int i = 0; i < n * c; ++i) {
    const float* xp = tx.data() + static_cast<std::size_t>(i) * h * w;
    float* yp = out.data() + static_cast<std::size_t>(i) * oh * ow;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        yp[static_cast<std::size_t>(oy) * ow + ox] = xp[static_cast<std::size_t>(2 * oy) * w + 2 * ox];
  }
  int id = make_node(std::move(out), {x.id});
  int ix = x.id;
  nodes_.back().backward = [id, ix, n, c, h, w, oh, ow](Graph& g) {
    if (!g.needs(ix)) return;
    const Tensor& go = g.grad_buf(id);
    Tensor& dx = g.grad_buf(ix);
    for (int i = 0; i < n * c; ++i) {
      const float* gp = go.data() + static_cast<std::size_t>(i) * oh * ow;
      float* dp = dx.data() + static_cast<std::size_t>(i) * h * w;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
          dp[static_cast<std::size_t>(2 * oy) * w + 2 * ox] += gp[static_cast<std::size_t>(oy) * ow + ox];
    }
  };
  return Var{id};
}

Var Graph::reflect_pad(Var x, int p) {
  const Tensor& tx = val(x.id);
  XM_CHECK(tx.rank() == 4, "reflect_pad: rank-4 expected");
  int n = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
  XM_CHECK(p >= 0 && p <= h && p <= w, "reflect_pad: pad too large");
  int oh = h + 2 * p, ow = w + 2 * p;
  Tensor out({n, c, oh, ow});
  for (int i = 0; i < n * c; ++i) {
    const float* xp = tx.data() + static_cast<std::size_t>(i) * h * w;
    float* yp = out.data() + static_cast<std::size_t>(i) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      int iy = reflect_index(oy - p, h);
      for (int ox = 0; ox < ow; ++ox)
        yp[static_cast<std::size_t>(oy) * ow + ox] =
            xp[static_cast<std::size_t>(iy) * w + reflect_index(ox - p, w)];
    }
  }
  int id = make_node(std::move(out), {x.id});
  int ix = x.id;
  nodes_.back().backward = [id, ix, n, c, h, w, p, oh, ow](Graph& g) {
    if (!g.needs(ix)) return;
    const Tensor& go = g.grad_buf(id);
    Tensor& dx = g.grad_buf(ix);
    for (int i = 0; i < n * c; ++i) {
      const float* gp = go.data() + static_cast<std::size_t>(i) * oh * ow;
      float* dp = dx.data() + static_cast<std::size_t>(i) * h * w;
      for (int oy = 0; oy < oh; ++oy) {
        int iy = reflect_index(oy - p, h);
        for (int ox = 0; ox < ow; ++ox)
          dp[static_cast<std::size_t>(iy) * w + reflect_index(ox - p, w)] +=
              gp[static_cast<std::size_t>(oy) * ow + ox];
      }
    }
  };
  return Var{id};
}

}  // namespace xmark::nn
