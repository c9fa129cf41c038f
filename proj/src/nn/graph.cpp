#include "xmark/nn/graph.hpp"

#include <cmath>

#include "xmark/kernels/kernels.hpp"

namespace xmark::nn {

namespace k = xmark::kernels;

int Graph::make_node(Tensor value, std::initializer_list<int> inputs) {
  Node n;
  n.value = std::move(value);
  for (int in : inputs)
    if (in >= 0 && nodes_[static_cast<std::size_t>(in)].needs_grad) n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Graph::grad_buf(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.grad_alloc) {
    n.grad = Tensor(n.value.dims());
    n.grad_alloc = true;
  }
  return n.grad;
}

void Graph::accumulate(int id, const Tensor& g) {
  Tensor& dst = grad_buf(id);
  k::axpy(1.0f, g.data(), dst.data(), static_cast<std::size_t>(dst.numel()));
}

Var Graph::constant(Tensor t) { return Var{make_node(std::move(t), {})}; }

Var Graph::input(Tensor t, bool requires_grad) {
  int id = make_node(std::move(t), {});
  nodes_[static_cast<std::size_t>(id)].needs_grad = requires_grad;
  return Var{id};
}

Var Graph::param(Parameter& p) {
  int id = make_node(p.value, {});
  Node& n = nodes_[static_cast<std::size_t>(id)];
  n.needs_grad = p.trainable;
  if (p.trainable) n.bound = &p;
  return Var{id};
}

const Tensor& Graph::value(Var v) const {
  XM_CHECK(v.valid() && v.id < static_cast<int>(nodes_.size()), "invalid var");
  return nodes_[static_cast<std::size_t>(v.id)].value;
}

const Tensor& Graph::grad(Var v) const {
  XM_CHECK(v.valid() && v.id < static_cast<int>(nodes_.size()), "invalid var");
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  XM_CHECK(n.grad_alloc, "gradient not computed for this var");
  return n.grad;
}

void Graph::backward(Var loss) {
  XM_CHECK(loss.valid(), "backward on invalid var");
  Node& ln = nodes_[static_cast<std::size_t>(loss.id)];
  XM_CHECK(ln.value.numel() == 1, "backward requires a scalar loss");
  XM_CHECK(ln.needs_grad, "loss does not depend on any differentiable leaf");
  grad_buf(loss.id).at(0) = 1.0f;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.needs_grad && n.grad_alloc && n.backward) n.backward(*this);
  }
  for (auto& n : nodes_) {
    if (n.bound && n.grad_alloc)
      k::axpy(1.0f, n.grad.data(), n.bound->grad.data(),
              static_cast<std::size_t>(n.grad.numel()));
  }
}

// ---- elementwise ----

Var Graph::add(Var a, Var b) {
  const Tensor& ta = val(a.id);
  const Tensor& tb = val(b.id);
  XM_CHECK(ta.same_shape(tb), "add: shape mismatch");
  Tensor out(ta.dims());
  k::vadd(ta.data(), tb.data(), out.data(), static_cast<std::size_t>(out.numel()));
  int id = make_node(std::move(out), {a.id, b.id});
  int ia = a.id, ib = b.id;
  nodes_.back().backward = [id, ia, ib](Graph& g) {
    const Tensor& go = g.grad_buf(id);
    if (g.needs(ia)) g.accumulate(ia, go);
    if (g.needs(ib)) g.accumulate(ib, go);
  };
  return Var{id};
}

Var Graph::sub(Var a, Var b) {
  const Tensor& ta = val(a.id);
  const Tensor& tb = val(b.id);
  XM_CHECK(ta.same_shape(tb), "sub: shape mismatch");
  Tensor out(ta.dims());
  k::vsub(ta.data(), tb.data(), out.data(), static_cast<std::size_t>(out.numel()));
  int id = make_node(std::move(out), {a.id, b.id});
  int ia = a.id, ib = b.id;
  nodes_.back().backward = [id, ia, ib](Graph& g) {
    const Tensor& go = g.grad_buf(id);
    if (g.needs(ia)) g.accumulate(ia, go);
    if (g.needs(ib))
      k::axpy(-1.0f, go.data(), g.grad_buf(ib).data(), static_cast<std::size_t>(go.numel()));
  };
  return Var{id};
}

Var Graph::mul(Var a, Var b) {
  const Tensor& ta = val(a.id);
  const Tensor& tb = val(b.id);
  XM_CHECK(ta.same_shape(tb), "mul: shape mismatch");
  Tensor out(ta.dims());
  k::vmul(ta.data(), tb.data(), out.data(), static_cast<std::size_t>(out.numel()));
  int id = make_node(std::move(out), {a.id, b.id});
  int ia = a.id, ib = b.id;
  nodes_.back().backward = [id, ia, ib](Graph& g) {
    const Tensor& go = g.grad_buf(id);
    std::size_t n = static_cast<std::size_t>(go.numel());
    if (g.needs(ia)) {
      Tensor t(go.dims());
      k::vmul(go.data(), g.val(ib).data(), t.data(), n);
      g.accumulate(ia, t);
    }
    if (g.needs(ib)) {
      Tensor t(go.dims());
      k::vmul(go.data(), g.val(ia).data(), t.data(), n);
      g.accumulate(ib, t);
    }
  };
  return Var{id};
}

Var Graph::scale(Var a, float s) {
  Tensor out = val(a.id);
  k::vscale(s, out.data(), static_cast<std::size_t>(out.numel()));
  int id = make_node(std::move(out), {a.id});
  int ia = a.id;
  nodes_.back().backward = [id, ia, s](Graph& g) {
    if (!g.needs(ia)) return;
    const Tensor& go = g.grad_buf(id);
    k::axpy(s, go.data(), g.grad_buf(ia).data(), static_cast<std::size_t>(go.numel()));
  };
  return Var{id};
}

Var Graph::relu(Var a) {
  const Tensor& ta = val(a.id);
  Tensor out(ta.dims());
  k::relu_forward(ta.data(), out.data(), static_cast<std::size_t>(out.numel()));
  int id = make_node(std::move(out), {a.id});
  int ia = a.id;
  nodes_.back().backward = [id, ia](Graph& g) {
    if (!g.needs(ia)) return;
    const Tensor& go = g.grad_buf(id);
    k::relu_backward(g.val(ia).data(), go.data(), g.grad_buf(ia).data(),
                     static_cast<std::size_t>(go.numel()));
  };
  return Var{id};
}

Var Graph::leaky_relu(Var a, float slope) {
  const Tensor& ta = val(a.id);
  Tensor out(ta.dims());
  k::leaky_relu_forward(ta.data(), out.data(), slope, static_cast<std::size_t>(out.numel()));
  int id = make_node(std::move(out), {a.id});
  int ia = a.id;
  nodes_.back().backward = [id, ia, slope](Graph& g) {
    if (!g.needs(ia)) return;
    const Tensor& go = g.grad_buf(id);
    k::leaky_relu_backward(g.val(ia).data(), go.data(), g.grad_buf(ia).data(), slope,
                           static_cast<std::size_t>(go.numel()));
  };
  return Var{id};
}

Var Graph::tanh_op(Var a) {
  const Tensor& ta = val(a.id);
  Tensor out(ta.dims());
  for (std::int64_t i = 0; i < ta.numel(); ++i)
    out.at(static_cast<std::size_t>(i)) = std::tanh(ta.at(static_cast<std::size_t>(i)));
  int id = make_node(std::move(out), {a.id});
  int ia = a.id;
  nodes_.back().backward = [id, ia](Graph& g) {
    if (!g.needs(ia)) return;
    const Tensor& go = g.grad_buf(id);
    const Tensor& y = g.val(id);
    Tensor& da = g.grad_buf(ia);
    for (std::int64_t i = 0; i < go.numel(); ++i) {
      float yi = y.at(static_cast<std::size_t>(i));
      da.at(static_cast<std::size_t>(i)) += go.at(static_cast<std::size_t>(i)) * (1.0f - yi * yi);
    }
  };
  return Var{id};
}

Var Graph::sigmoid(Var a) {
  const Tensor& ta = val(a.id);
  Tensor out(ta.dims());
  for (std::int64_t i = 0; i < ta.numel(); ++i) {
    float x = ta.at(static_cast<std::size_t>(i));
    out.at(static_cast<std::size_t>(i)) = 1.0f / (1.0f + std::exp(-x));
  }
  int id = make_node(std::move(out), {a.id});
  int ia = a.id;
  nodes_.back().backward = [id, ia](Graph& g) {
    if (!g.needs(ia)) return;
    const Tensor& go = g.grad_buf(id);
    const Tensor& y = g.val(id);
    Tensor& da = g.grad_buf(ia);
    for (std::int64_t i = 0; i < go.numel(); ++i) {
      float yi = y.at(static_cast<std::size_t>(i));
      da.at(static_cast<std::size_t>(i)) += go.at(static_cast<std::size_t>(i)) * yi * (1.0f - yi);
    }
  };
  return Var{id};
}

Var Graph::square(Var a) { return mul(a, a); }

Var Graph::clamp01(Var a) {
  const Tensor& ta = val(a.id);
  Tensor out(ta.dims());
  k::clamp01(ta.data(), out.data(), static_cast<std::size_t>(out.numel()));
  int id = make_node(std::move(out), {a.id});
  int ia = a.id;
  nodes_.back().backward = [id, ia](Graph& g) {
    if (!g.needs(ia)) return;
    const Tensor& go = g.grad_buf(id);
    const Tensor& x = g.val(ia);
    Tensor& da = g.grad_buf(ia);
    for (std::int64_t i = 0; i < go.numel(); ++i) {
      float xi = x.at(static_cast<std::size_t>(i));
      if (xi >= 0.0f && xi <= 1.0f) da.at(static_cast<std::size_t>(i)) += go.at(static_cast<std::size_t>(i));
    }
  };
  return Var{id};
}

// ---- reductions / losses ----

Var Graph::sum_all(Var x) {
  const Tensor& tx = val(x.id);
  Tensor out = Tensor::scalar(k::vsum(tx.data(), static_cast<std::size_t>(tx.numel())));
  int id = make_node(std::move(out), {x.id});
  int ix = x.id;
  nodes_.back().backward = [id, ix](Graph& g) {
    if (!g.needs(ix)) return;
    float go = g.grad_buf(id).at(0);
    Tensor& dx = g.grad_buf(ix);
    for (std::int64_t i = 0; i < dx.numel(); ++i) dx.at(static_cast<std::size_t>(i)) += go;
  };
  return Var{id};
}

Var Graph::mean_all(Var x) {
  std::int64_t n = val(x.id).numel();
  return scale(sum_all(x), 1.0f / static_cast<float>(n));
}

Var Graph::l1_diff_mean(Var a, Var b) {
  const Tensor& ta = val(a.id);
  const Tensor& tb = val(b.id);
  XM_CHECK(ta.same_shape(tb), "l1_diff_mean: shape mismatch");
  std::size_t n = static_cast<std::size_t>(ta.numel());
  Tensor diff(ta.dims());
  k::vsub(ta.data(), tb.data(), diff.data(), n);
  float lsum = k::vasum(diff.data(), n);
  int id = make_node(Tensor::scalar(lsum / static_cast<float>(n)), {a.id, b.id});
  int ia = a.id, ib = b.id;
  nodes_.back().backward = [id, ia, ib, n](Graph& g) {
    float go = g.grad_buf(id).at(0) / static_cast<float>(n);
    const Tensor& va = g.val(ia);
    const Tensor& vb = g.val(ib);
    bool na = g.needs(ia), nb = g.needs(ib);
    Tensor* da = na ? &g.grad_buf(ia) : nullptr;
    Tensor* db = nb ? &g.grad_buf(ib) : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      float d = va.at(i) - vb.at(i);
      float s = d > 0.0f ? go : (d < 0.0f ? -go : 0.0f);
      if (da) da->at(i) += s;
      if (db) db->at(i) -= s;
    }
  };
  return Var{id};
}

Var Graph::bce_with_logits(Var z, const Tensor& targets) {
  const Tensor& tz = val(z.id);
  XM_CHECK(tz.same_shape(targets), "bce_with_logits: target shape mismatch");
  std::size_t n = static_cast<std::size_t>(tz.numel());
  XM_CHECK(n > 0, "bce_with_logits: empty input");
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    float zi = tz.at(i), ti = targets.at(i);
    loss += std::fmax(zi, 0.0f) - zi * ti + std::log1p(std::exp(-std::fabs(zi)));
  }
  int id = make_node(Tensor::scalar(static_cast<float>(loss / static_cast<double>(n))), {z.id});
  int iz = z.id;
  Tensor tgt = targets;
  nodes_.back().backward = [id, iz, tgt, n](Graph& g) {
    if (!g.needs(iz)) return;
    float go = g.grad_buf(id).at(0) / static_cast<float>(n);
    const Tensor& zv = g.val(iz);
    Tensor& dz = g.grad_buf(iz);
    for (std::size_t i = 0; i < n; ++i) {
      float p = 1.0f / (1.0f + std::exp(-zv.at(i)));
      dz.at(i) += go * (p - tgt.at(i));
    }
  };
  return Var{id};
}

Var Graph::weighted_sum_scalars(const std::vector<Var>& vs, const std::vector<float>& ws) {
  XM_CHECK(!vs.empty() && vs.size() == ws.size(), "weighted_sum_scalars: size mismatch");
  float total = 0.0f;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    XM_CHECK(val(vs[i].id).numel() == 1, "weighted_sum_scalars: non-scalar term");
    total += ws[i] * val(vs[i].id).at(0);
  }
  std::vector<int> ids;
  for (Var v : vs) ids.push_back(v.id);
  Node n;
  n.value = Tensor::scalar(total);
  for (int in : ids)
    if (nodes_[static_cast<std::size_t>(in)].needs_grad) n.needs_grad = true;
  nodes_.push_back(std::move(n));
  int id = static_cast<int>(nodes_.size()) - 1;
  std::vector<float> w = ws;
  nodes_.back().backward = [id, ids, w](Graph& g) {
    float go = g.grad_buf(id).at(0);
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (g.needs(ids[i])) g.grad_buf(ids[i]).at(0) += go * w[i];
  };
  return Var{id};
}

// ---- structure ----

Var Graph::concat_channels(Var a, Var b) {
  const Tensor& ta = val(a.id);
  const Tensor& tb = val(b.id);
  XM_CHECK(ta.rank() == 4 && tb.rank() == 4, "concat_channels: rank-4 expected");
  XM_CHECK(ta.dim(0) == tb.dim(0) && ta.dim(2) == tb.dim(2) && ta.dim(3) == tb.dim(3),
           "concat_channels: shape mismatch");
  int n = ta.dim(0), c1 = ta.dim(1), c2 = tb.dim(1), h = ta.dim(2), w = ta.dim(3);
  Tensor out({n, c1 + c2, h, w});
  std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    const float* pa = ta.data() + static_cast<std::size_t>(i) * c1 * plane;
    const float* pb = tb.data() + static_cast<std::size_t>(i) * c2 * plane;
    float* po = out.data() + static_cast<std::size_t>(i) * (c1 + c2) * plane;
    std::copy(pa, pa + static_cast<std::size_t>(c1) * plane, po);
    std::copy(pb, pb + static_cast<std::size_t>(c2) * plane, po + static_cast<std::size_t>(c1) * plane);
  }
  int id = make_node(std::move(out), {a.id, b.id});
  int ia = a.id, ib = b.id;
  nodes_.back().backward = [id, ia, ib, n, c1, c2, plane](Graph& g) {
    const Tensor& go = g.grad_buf(id);
    for (int i = 0; i < n; ++i) {
      const float* po = go.data() + static_cast<std::size_t>(i) * (c1 + c2) * plane;
      if (g.needs(ia)) {
        float* da = g.grad_buf(ia).data() + static_cast<std::size_t>(i) * c1 * plane;
        k::axpy(1.0f, po, da, static_cast<std::size_t>(c1) * plane);
      }
      if (g.needs(ib)) {
        float* db = g.grad_buf(ib).data() + static_cast<std::size_t>(i) * c2 * plane;
        k::axpy(1.0f, po + static_cast<std::size_t>(c1) * plane, db,
                static_cast<std::size_t>(c2) * plane);
      }
    }
  };
  return Var{id};
}

Var Graph::slice_col(Var x, int col) {
  const Tensor& tx = val(x.id);
  XM_CHECK(tx.rank() == 2, "slice_col: rank-2 expected");
  int n = tx.dim(0), kdim = tx.dim(1);
  XM_CHECK(col >= 0 && col < kdim, "slice_col: column out of range");
  Tensor out({n, 1});
  for (int i = 0; i < n; ++i) out.at(static_cast<std::size_t>(i)) = tx.at(static_cast<std::size_t>(i) * kdim + col);
  int id = make_node(std::move(out), {x.id});
  int ix = x.id;
  nodes_.back().backward = [id, ix, col, n, kdim](Graph& g) {
    if (!g.needs(ix)) return;
    const Tensor& go = g.grad_buf(id);
    Tensor& dx = g.grad_buf(ix);
    for (int i = 0; i < n; ++i)
      dx.at(static_cast<std::size_t>(i) * kdim + col) += go.at(static_cast<std::size_t>(i));
  };
  return Var{id};
}

Var Graph::slice_rows(Var x, int start, int count) {
  const Tensor& tx = val(x.id);
  XM_CHECK(tx.rank() == 2, "slice_rows: rank-2 expected");
  int n = tx.dim(0), kdim = tx.dim(1);
  XM_CHECK(start >= 0 && count >= 1 && start + count <= n, "slice_rows: range out of bounds");
  Tensor out({count, kdim});
  std::copy(tx.data() + static_cast<std::size_t>(start) * kdim,
            tx.data() + static_cast<std::size_t>(start + count) * kdim, out.data());
  int id = make_node(std::move(out), {x.id});
  int ix = x.id;
  nodes_.back().backward = [id, ix, start, count, kdim](Graph& g) {
    if (!g.needs(ix)) return;
    const Tensor& go = g.grad_buf(id);
    float* dst = g.grad_buf(ix).data() + static_cast<std::size_t>(start) * kdim;
    k::axpy(1.0f, go.data(), dst, static_cast<std::size_t>(count) * kdim);
  };
  return Var{id};
}

Var Graph::broadcast_channel_mul(Var x, const Tensor& per_channel) {
  const Tensor& tx = val(x.id);
  XM_CHECK(tx.rank() == 4, "broadcast_channel_mul: rank-4 expected");
  int n = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
  XM_CHECK(per_channel.numel() == c, "broadcast_channel_mul: channel count mismatch");
  Tensor out(tx.dims());
  std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      float m = per_channel.at(static_cast<std::size_t>(ch));
      const float* px = tx.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
      float* po = out.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) po[j] = px[j] * m;
    }
  int id = make_node(std::move(out), {x.id});
  int ix = x.id;
  Tensor mask = per_channel;
  nodes_.back().backward = [id, ix, mask, n, c, plane](Graph& g) {
    if (!g.needs(ix)) return;
    const Tensor& go = g.grad_buf(id);
    Tensor& dx = g.grad_buf(ix);
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        float m = mask.at(static_cast<std::size_t>(ch));
        const float* pg = go.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
        float* pd = dx.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
        k::axpy(m, pg, pd, plane);
      }
  };
  return Var{id};
}

}  // namespace xmark::nn
