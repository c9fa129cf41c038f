// Normalization ops: batch norm (with running stats), group norm, and the
// per-location channel L2 normalization used by the perceptual metric.

#include <cmath>
#include <memory>
#include <vector>

#include "xmark/kernels/kernels.hpp"
#include "xmark/nn/graph.hpp"
#include "xmark/nn/modules.hpp"

namespace xmark::nn {

namespace k = xmark::kernels;

Var Graph::batchnorm(Var x, BatchNorm2d& bn) {
  // param() first: it may grow the node vector and invalidate references
  Var gamma = param(bn.gamma);
  Var beta = param(bn.beta);
  const Tensor& tx = val(x.id);
  XM_CHECK(tx.rank() == 4, "batchnorm: rank-4 expected");
  int n = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
  XM_CHECK(c == static_cast<int>(bn.gamma.value.numel()), "batchnorm: channel mismatch");
  std::size_t plane = static_cast<std::size_t>(h) * w;
  std::size_t m = static_cast<std::size_t>(n) * plane;

  auto mean = std::make_shared<std::vector<float>>(c);
  auto inv = std::make_shared<std::vector<float>>(c);

  if (training_) {
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int i = 0; i < n; ++i)
        s += k::vsum(tx.data() + (static_cast<std::size_t>(i) * c + ch) * plane, plane);
      double mu = s / static_cast<double>(m);
      double sq = 0.0;
      for (int i = 0; i < n; ++i) {
        const float* p = tx.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          double d = p[j] - mu;
          sq += d * d;
        }
      }
      double var = sq / static_cast<double>(m);
      (*mean)[ch] = static_cast<float>(mu);
      (*inv)[ch] = static_cast<float>(1.0 / std::sqrt(var + bn.eps));
      // running stats keep the unbiased variance
      double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var;
      bn.running_mean.at(ch) = (1.0f - bn.momentum) * bn.running_mean.at(ch) +
                               bn.momentum * static_cast<float>(mu);
      bn.running_var.at(ch) = (1.0f - bn.momentum) * bn.running_var.at(ch) +
                              bn.momentum * static_cast<float>(unbiased);
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      (*mean)[ch] = bn.running_mean.at(ch);
      (*inv)[ch] = 1.0f / std::sqrt(bn.running_var.at(ch) + bn.eps);
    }
  }

  const Tensor& tg = val(gamma.id);
  const Tensor& tb = val(beta.id);
  Tensor out(tx.dims());
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      float mu = (*mean)[ch], iv = (*inv)[ch];
      float gm = tg.at(ch), bt = tb.at(ch);
      const float* p = tx.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
      float* q = out.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) q[j] = gm * (p[j] - mu) * iv + bt;
    }

  int id = make_node(std::move(out), {x.id, gamma.id, beta.id});
  int ix = x.id, ig = gamma.id, ib = beta.id;
  bool train_mode = training_;
  nodes_.back().backward = [id, ix, ig, ib, mean, inv, n, c, plane, m, train_mode](Graph& g) {
    const Tensor& go = g.grad_buf(id);
    const Tensor& xv = g.val(ix);
    const Tensor& gm = g.val(ig);
    bool nx = g.needs(ix);
    for (int ch = 0; ch < c; ++ch) {
      float mu = (*mean)[ch], iv = (*inv)[ch];
      double sum_dy = 0.0, sum_dyxh = 0.0;
      for (int i = 0; i < n; ++i) {
        const float* gp = go.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
        const float* xp = xv.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          sum_dy += gp[j];
          sum_dyxh += gp[j] * (xp[j] - mu) * iv;
        }
      }
      if (g.needs(ib)) g.grad_buf(ib).at(ch) += static_cast<float>(sum_dy);
      if (g.needs(ig)) g.grad_buf(ig).at(ch) += static_cast<float>(sum_dyxh);
      if (!nx) continue;
      float gch = gm.at(ch);
      if (train_mode) {
        float mean_dy = static_cast<float>(sum_dy / static_cast<double>(m));
        float mean_dyxh = static_cast<float>(sum_dyxh / static_cast<double>(m));
        for (int i = 0; i < n; ++i) {
          const float* gp = go.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          const float* xp = xv.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          float* dp = g.grad_buf(ix).data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          for (std::size_t j = 0; j < plane; ++j) {
            float xh = (xp[j] - mu) * iv;
            dp[j] += gch * iv * (gp[j] - mean_dy - xh * mean_dyxh);
          }
        }
      } else {
        float scale = gch * iv;
        for (int i = 0; i < n; ++i) {
          const float* gp = go.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          float* dp = g.grad_buf(ix).data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          k::axpy(scale, gp, dp, plane);
        }
      }
    }
  };
  return Var{id};
}

Var Graph::groupnorm(Var x, Var gamma, Var beta, int groups, float eps) {
  const Tensor& tx = val(x.id);
  XM_CHECK(tx.rank() == 4, "groupnorm: rank-4 expected");
  int n = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
  XM_CHECK(groups >= 1 && c % groups == 0, "groupnorm: channels not divisible by groups");
  int gc = c / groups;
  std::size_t plane = static_cast<std::size_t>(h) * w;
  std::size_t m = static_cast<std::size_t>(gc) * plane;

  auto mean = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n) * groups);
  auto inv = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n) * groups);
  for (int i = 0; i < n; ++i)
    for (int gi = 0; gi < groups; ++gi) {
      const float* p = tx.data() + (static_cast<std::size_t>(i) * c + static_cast<std::size_t>(gi) * gc) * plane;
      double s = k::vsum(p, m);
      double mu = s / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        double d = p[j] - mu;
        sq += d * d;
      }
      (*mean)[static_cast<std::size_t>(i) * groups + gi] = static_cast<float>(mu);
      (*inv)[static_cast<std::size_t>(i) * groups + gi] =
          static_cast<float>(1.0 / std::sqrt(sq / static_cast<double>(m) + eps));
    }

  const Tensor& tg = val(gamma.id);
  const Tensor& tb = val(beta.id);
  Tensor out(tx.dims());
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      int gi = ch / gc;
      float mu = (*mean)[static_cast<std::size_t>(i) * groups + gi];
      float iv = (*inv)[static_cast<std::size_t>(i) * groups + gi];
      float gmv = tg.at(ch), btv = tb.at(ch);
      const float* p = tx.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
      float* q = out.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) q[j] = gmv * (p[j] - mu) * iv + btv;
    }

  int id = make_node(std::move(out), {x.id, gamma.id, beta.id});
  int ix = x.id, ig = gamma.id, ib = beta.id;
  nodes_.back().backward = [id, ix, ig, ib, mean, inv, n, c, gc, groups, plane, m](Graph& g) {
    const Tensor& go = g.grad_buf(id);
    const Tensor& xv = g.val(ix);
    const Tensor& gm = g.val(ig);
    // channel-affine grads
    if (g.needs(ig) || g.needs(ib)) {
      for (int ch = 0; ch < c; ++ch) {
        int gi = ch / gc;
        double sdy = 0.0, sdyxh = 0.0;
        for (int i = 0; i < n; ++i) {
          float mu = (*mean)[static_cast<std::size_t>(i) * groups + gi];
          float iv = (*inv)[static_cast<std::size_t>(i) * groups + gi];
          const float* gp = go.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          const float* xp = xv.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          for (std::size_t j = 0; j < plane; ++j) {
            sdy += gp[j];
            sdyxh += gp[j] * (xp[j] - mu) * iv;
          }
        }
        if (g.needs(ib)) g.grad_buf(ib).at(ch) += static_cast<float>(sdy);
        if (g.needs(ig)) g.grad_buf(ig).at(ch) += static_cast<float>(sdyxh);
      }
    }
    if (!g.needs(ix)) return;
    for (int i = 0; i < n; ++i)
      for (int gi = 0; gi < groups; ++gi) {
        float mu = (*mean)[static_cast<std::size_t>(i) * groups + gi];
        float iv = (*inv)[static_cast<std::size_t>(i) * groups + gi];
        // gh = dy * gamma within the group
        double s1 = 0.0, s2 = 0.0;
        for (int cc = 0; cc < gc; ++cc) {
          int ch = gi * gc + cc;
          float gch = gm.at(ch);
          const float* gp = go.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          const float* xp = xv.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          for (std::size_t j = 0; j < plane; ++j) {
            float gh = gp[j] * gch;
            s1 += gh;
            s2 += gh * (xp[j] - mu) * iv;
          }
        }
        float mean_gh = static_cast<float>(s1 / static_cast<double>(m));
        float mean_ghxh = static_cast<float>(s2 / static_cast<double>(m));
        for (int cc = 0; cc < gc; ++cc) {
          int ch = gi * gc + cc;
          float gch = gm.at(ch);
          const float* gp = go.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          const float* xp = xv.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          float* dp = g.grad_buf(ix).data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          for (std::size_t j = 0; j < plane; ++j) {
            float xh = (xp[j] - mu) * iv;
            dp[j] += iv * (gp[j] * gch - mean_gh - xh * mean_ghxh);
          }
        }
      }
  };
  return Var{id};
}

Var Graph::channel_l2_normalize(Var x, float eps) {
  const Tensor& tx = val(x.id);
  XM_CHECK(tx.rank() == 4, "channel_l2_normalize: rank-4 expected");
  int n = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
  std::size_t plane = static_cast<std::size_t>(h) * w;
  auto norms = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n) * plane);
  Tensor out(tx.dims());
  for (int i = 0; i < n; ++i) {
    const float* xp = tx.data() + static_cast<std::size_t>(i) * c * plane;
    float* op = out.data() + static_cast<std::size_t>(i) * c * plane;
    float* np = norms->data() + static_cast<std::size_t>(i) * plane;
    for (std::size_t j = 0; j < plane; ++j) {
      double s = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        float v = xp[static_cast<std::size_t>(ch) * plane + j];
        s += static_cast<double>(v) * v;
      }
      float nv = static_cast<float>(std::sqrt(s + eps));
      np[j] = nv;
      for (int ch = 0; ch < c; ++ch)
        op[static_cast<std::size_t>(ch) * plane + j] = xp[static_cast<std::size_t>(ch) * plane + j] / nv;
    }
  }
  int id = make_node(std::move(out), {x.id});
  int ix = x.id;
  nodes_.back().backward = [id, ix, norms, n, c, plane](Graph& g) {
    if (!g.needs(ix)) return;
    const Tensor& go = g.grad_buf(id);
    const Tensor& xv = g.val(ix);
    Tensor& dx = g.grad_buf(ix);
    for (int i = 0; i < n; ++i) {
      const float* gp = go.data() + static_cast<std::size_t>(i) * c * plane;
      const float* xp = xv.data() + static_cast<std::size_t>(i) * c * plane;
      float* dp = dx.data() + static_cast<std::size_t>(i) * c * plane;
      const float* np = norms->data() + static_cast<std::size_t>(i) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        float nv = np[j];
        double dot = 0.0;
        for (int ch = 0; ch < c; ++ch)
          dot += static_cast<double>(gp[static_cast<std::size_t>(ch) * plane + j]) *
                 xp[static_cast<std::size_t>(ch) * plane + j];
        float proj = static_cast<float>(dot) / (nv * nv * nv);
        for (int ch = 0; ch < c; ++ch) {
          std::size_t o = static_cast<std::size_t>(ch) * plane + j;
          dp[o] += gp[o] / nv - xp[o] * proj;
        }
      }
    }
  };
  return Var{id};
}

}  // namespace xmark::nn
