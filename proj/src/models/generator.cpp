#include "xmark/models/generator.hpp"

#include <cmath>

#include "xmark/models/classifier.hpp"

namespace xmark::models {

using nn::Graph;
using nn::Var;

namespace {

constexpr float kSlope = 0.1f;

int pick_groups(int channels, int wanted) {
  for (int g = std::min(wanted, channels); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

struct ConvGnAct {
  nn::Conv2d conv;
  nn::GroupNorm gn;

  ConvGnAct() = default;
  ConvGnAct(const std::string& name, int cin, int cout, int stride, int groups, Rng& rng)
      : conv(name + ".conv", cin, cout, 3, stride, 1, false, rng),
        gn(name + ".gn", cout, pick_groups(cout, groups)) {}
  Var forward(Graph& g, Var x) { return g.leaky_relu(gn.forward(g, conv.forward(g, x)), kSlope); }
  void params(std::vector<nn::Parameter*>& out) {
    conv.params(out);
    gn.params(out);
  }
  void state(nn::StateDict& sd) {
    conv.state(sd);
    gn.state(sd);
  }
};

struct ResBlock {
  ConvGnAct c1;
  nn::Conv2d c2;
  nn::GroupNorm gn2;

  ResBlock() = default;
  ResBlock(const std::string& name, int channels, int groups, Rng& rng)
      : c1(name + ".c1", channels, channels, 1, groups, rng),
        c2(name + ".c2", channels, channels, 3, 1, 1, false, rng),
        gn2(name + ".gn2", channels, pick_groups(channels, groups)) {}
  Var forward(Graph& g, Var x) {
    Var v = gn2.forward(g, c2.forward(g, c1.forward(g, x)));
    return g.leaky_relu(g.add(v, x), kSlope);
  }
  void params(std::vector<nn::Parameter*>& out) {
    c1.params(out);
    c2.params(out);
    gn2.params(out);
  }
  void state(nn::StateDict& sd) {
    c1.state(sd);
    c2.state(sd);
    gn2.state(sd);
  }
};

}  // namespace

struct Generator::Impl {
  ConvGnAct stem;
  std::vector<ConvGnAct> enc;
  ResBlock rb_pre, rb_post;
  nn::Conv2d sal1, sal2;
  nn::Conv2d fuse;  // concat mode only
  std::vector<ConvGnAct> dec;
  ConvGnAct refine;
  nn::Conv2d head;
};

Generator::Generator(GeneratorConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), seed_(seed), impl_(std::make_shared<Impl>()) {
  XM_CHECK(cfg_.widths.size() >= 2, "generator needs a stem width and at least one stage");
  XM_CHECK(cfg_.fusion == "add" || cfg_.fusion == "concat", "unknown fusion mode '", cfg_.fusion, "'");
  Rng rng(seed);
  int s = stages();
  const auto& w = cfg_.widths;
  impl_->stem = ConvGnAct("gen.stem", 1, w[0], 1, cfg_.norm_groups, rng);
  for (int i = 0; i < s; ++i)
    impl_->enc.emplace_back("gen.enc" + std::to_string(i + 1), w[static_cast<std::size_t>(i)],
                            w[static_cast<std::size_t>(i + 1)], 2, cfg_.norm_groups, rng);
  int wb = w.back();
  impl_->rb_pre = ResBlock("gen.rb_pre", wb, cfg_.norm_groups, rng);
  impl_->sal1 = nn::Conv2d("gen.sal1", 1, cfg_.saliency_hidden, 3, 1, 1, true, rng);
  impl_->sal2 = nn::Conv2d("gen.sal2", cfg_.saliency_hidden, wb, 3, 1, 1, true, rng);
  if (cfg_.fusion == "concat")
    impl_->fuse = nn::Conv2d("gen.fuse", 2 * wb, wb, 3, 1, 1, false, rng);
  impl_->rb_post = ResBlock("gen.rb_post", wb, cfg_.norm_groups, rng);
  for (int i = s; i >= 1; --i)
    impl_->dec.emplace_back("gen.dec" + std::to_string(i), w[static_cast<std::size_t>(i)],
                            w[static_cast<std::size_t>(i - 1)], 1, cfg_.norm_groups, rng);
  impl_->refine = ConvGnAct("gen.refine", w[0], w[0], 1, cfg_.norm_groups, rng);
  impl_->head = nn::Conv2d("gen.head", w[0], 1, 3, 1, 1, true, rng);
  // identity at initialization: delta == 0 until training moves the head
  impl_->head.w.value.fill(0.0f);
  impl_->head.b.value.fill(0.0f);
}

Var Generator::raw_delta(Graph& g, Var x, Var saliency) {
  const Tensor& tx = g.value(x);
  XM_CHECK(tx.rank() == 4 && tx.dim(1) == 1, "generator input must be [N,1,H,W]");
  int factor = downsample_factor();
  XM_CHECK(tx.dim(2) % factor == 0 && tx.dim(3) % factor == 0,
           "generator input ", tx.dim(2), "x", tx.dim(3), " not divisible by ", factor);
  XM_CHECK(g.value(saliency).rank() == 4 && g.value(saliency).dim(0) == tx.dim(0),
           "saliency batch mismatch");

  std::vector<Var> skips;
  Var v = impl_->stem.forward(g, x);
  skips.push_back(v);
  for (auto& e : impl_->enc) {
    v = e.forward(g, v);
    skips.push_back(v);
  }

  v = impl_->rb_pre.forward(g, v);
  const Tensor& bshape = g.value(v);
  Var sal = g.bilinear_resize(saliency, bshape.dim(2), bshape.dim(3));
  Var proj = impl_->sal2.forward(g, g.leaky_relu(impl_->sal1.forward(g, sal), kSlope));
  if (cfg_.fusion == "add") {
    v = g.add(v, proj);
  } else {
    v = impl_->fuse.forward(g, g.concat_channels(v, proj));
  }
  v = impl_->rb_post.forward(g, v);

  for (std::size_t i = 0; i < impl_->dec.size(); ++i) {
    v = impl_->dec[i].forward(g, v);
    const Tensor& target = g.value(skips[skips.size() - 2 - i]);
    v = g.bilinear_resize(v, target.dim(2), target.dim(3));
    v = g.add(v, skips[skips.size() - 2 - i]);
  }
  v = impl_->refine.forward(g, v);
  return impl_->head.forward(g, v);
}

Var Generator::forward(Graph& g, Var x, Var saliency, float eps) {
  XM_CHECK(eps >= 0.0f, "generator: eps must be nonnegative");
  Var delta = raw_delta(g, x, saliency);
  return g.clamp01(g.add(x, g.scale(g.tanh_op(delta), eps)));
}

Tensor Generator::watermark_image(const Tensor& image_hw, const Tensor& saliency_hw, float eps) {
  XM_CHECK(image_hw.rank() == 2 && saliency_hw.rank() == 2,
           "watermark_image: 2-D image and saliency expected");
  Graph g(false);
  Var x = g.input(image_hw.reshaped({1, 1, image_hw.dim(0), image_hw.dim(1)}), false);
  Var s = g.input(saliency_hw.reshaped({1, 1, saliency_hw.dim(0), saliency_hw.dim(1)}), false);
  Var out = forward(g, x, s, eps);
  return g.value(out).reshaped({image_hw.dim(0), image_hw.dim(1)});
}

void Generator::collect_params(std::vector<nn::Parameter*>& out) {
  impl_->stem.params(out);
  for (auto& e : impl_->enc) e.params(out);
  impl_->rb_pre.params(out);
  impl_->sal1.params(out);
  impl_->sal2.params(out);
  if (cfg_.fusion == "concat") impl_->fuse.params(out);
  impl_->rb_post.params(out);
  for (auto& d : impl_->dec) d.params(out);
  impl_->refine.params(out);
  impl_->head.params(out);
}

void Generator::collect_state(nn::StateDict& sd) {
  impl_->stem.state(sd);
  for (auto& e : impl_->enc) e.state(sd);
  impl_->rb_pre.state(sd);
  impl_->sal1.state(sd);
  impl_->sal2.state(sd);
  if (cfg_.fusion == "concat") impl_->fuse.state(sd);
  impl_->rb_post.state(sd);
  for (auto& d : impl_->dec) d.state(sd);
  impl_->refine.state(sd);
  impl_->head.state(sd);
}

// ---- reference U-Net ----

struct ReferenceUnet::Impl {
  struct Stage {
    nn::Conv2d a, b;
  };
  std::vector<Stage> enc;
  Stage bottleneck;
  struct DecStage {
    nn::Conv2d up, a, b;
  };
  std::vector<DecStage> dec;
  nn::Conv2d final1x1;
};

ReferenceUnet::ReferenceUnet(int base_width, std::uint64_t seed) : impl_(std::make_shared<Impl>()) {
  Rng rng(seed);
  int w = base_width;
  int cin = 1;
  for (int i = 0; i < 4; ++i) {
    int c = w << i;
    impl_->enc.push_back({nn::Conv2d("ref.e" + std::to_string(i) + "a", cin, c, 3, 1, 1, true, rng),
                          nn::Conv2d("ref.e" + std::to_string(i) + "b", c, c, 3, 1, 1, true, rng)});
    cin = c;
  }
  int cb = w << 4;
  impl_->bottleneck = {nn::Conv2d("ref.ba", cin, cb, 3, 1, 1, true, rng),
                       nn::Conv2d("ref.bb", cb, cb, 3, 1, 1, true, rng)};
  int cur = cb;
  for (int i = 3; i >= 0; --i) {
    int c = w << i;
    impl_->dec.push_back({nn::Conv2d("ref.d" + std::to_string(i) + "up", cur, c, 3, 1, 1, true, rng),
                          nn::Conv2d("ref.d" + std::to_string(i) + "a", 2 * c, c, 3, 1, 1, true, rng),
                          nn::Conv2d("ref.d" + std::to_string(i) + "b", c, c, 3, 1, 1, true, rng)});
    cur = c;
  }
  impl_->final1x1 = nn::Conv2d("ref.final", w, 1, 1, 1, 0, true, rng);
}

Var ReferenceUnet::forward(Graph& g, Var x) {
  std::vector<Var> skips;
  Var v = x;
  for (auto& e : impl_->enc) {
    v = g.relu(e.a.forward(g, v));
    v = g.relu(e.b.forward(g, v));
    skips.push_back(v);
    v = g.maxpool2(v);
  }
  v = g.relu(impl_->bottleneck.a.forward(g, v));
  v = g.relu(impl_->bottleneck.b.forward(g, v));
  for (std::size_t i = 0; i < impl_->dec.size(); ++i) {
    Var skip = skips[skips.size() - 1 - i];
    const Tensor& ts = g.value(skip);
    v = g.bilinear_resize(v, ts.dim(2), ts.dim(3));
    v = g.relu(impl_->dec[i].up.forward(g, v));
    v = g.concat_channels(skip, v);
    v = g.relu(impl_->dec[i].a.forward(g, v));
    v = g.relu(impl_->dec[i].b.forward(g, v));
  }
  return impl_->final1x1.forward(g, v);
}

void ReferenceUnet::collect_params(std::vector<nn::Parameter*>& out) {
  for (auto& e : impl_->enc) {
    e.a.params(out);
    e.b.params(out);
  }
  impl_->bottleneck.a.params(out);
  impl_->bottleneck.b.params(out);
  for (auto& d : impl_->dec) {
    d.up.params(out);
    d.a.params(out);
    d.b.params(out);
  }
  impl_->final1x1.params(out);
}

// ---- cost counting ----

namespace {

std::int64_t params_of(const std::vector<nn::Parameter*>& params) {
  std::int64_t n = 0;
  for (const nn::Parameter* p : params) n += p->numel();
  return n;
}

// MACs are measured by executing a probe forward pass. Fully convolutional
// models scale exactly with area, so large resolutions are probed at a
// divisor and rescaled.
template <typename Fwd>
std::int64_t probe_macs(int resolution, int min_divisible, Fwd&& fwd) {
  XM_CHECK(resolution >= min_divisible && resolution % min_divisible == 0,
           "resolution ", resolution, " must be a positive multiple of ", min_divisible);
  int probe = resolution;
  while (probe > 128 && probe % 2 == 0 && (probe / 2) % min_divisible == 0) probe /= 2;
  std::int64_t m = fwd(probe);
  std::int64_t scale = static_cast<std::int64_t>(resolution / probe);
  return m * scale * scale;
}

}  // namespace

ModelCost count_params_and_macs(Generator& model, int resolution) {
  std::vector<nn::Parameter*> params;
  model.collect_params(params);
  int factor = model.downsample_factor();
  std::int64_t macs = probe_macs(resolution, factor, [&](int r) {
    Graph g(false);
    Var x = g.input(Tensor({1, 1, r, r}), false);
    Var s = g.input(Tensor({1, 1, r / factor, r / factor}), false);
    model.forward(g, x, s, 16.0f / 255.0f);
    return g.macs();
  });
  return {params_of(params), macs};
}

ModelCost count_params_and_macs(ReferenceUnet& model, int resolution) {
  std::vector<nn::Parameter*> params;
  model.collect_params(params);
  std::int64_t macs = probe_macs(resolution, 16, [&](int r) {
    Graph g(false);
    Var x = g.input(Tensor({1, 1, r, r}), false);
    model.forward(g, x);
    return g.macs();
  });
  return {params_of(params), macs};
}

ModelCost count_params_and_macs(Classifier& model, int resolution) {
  // the linear head is resolution-independent, so probe directly (cheap for
  // classifiers even at full size) instead of area-rescaling
  XM_CHECK(resolution >= 32 && resolution % 32 == 0,
           "resolution ", resolution, " must be a positive multiple of 32");
  std::vector<nn::Parameter*> params;
  model.collect_params(params);
  Graph g(false);
  Var x = g.input(Tensor({1, 1, resolution, resolution}), false);
  model.logits(g, x, nullptr);
  return {params_of(params), g.macs()};
}

GeneratorConfig paper_scale_generator_config() {
  GeneratorConfig cfg;
  cfg.widths = {64, 128, 256, 512, 640};
  cfg.saliency_hidden = 160;
  cfg.norm_groups = 8;
  cfg.resolution = 1024;
  return cfg;
}

}  // namespace xmark::models
