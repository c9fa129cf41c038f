#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "xmark/perceptual/perceptual.hpp"

using namespace xmark;

namespace {

std::shared_ptr<models::Classifier> shared_toy(int k, std::uint64_t seed) {
  std::shared_ptr<models::Classifier> m = models::build_classifier("toy-cnn", k, "random", seed);
  m->set_trained_resolution(32);
  return m;
}

}  // namespace

TEST_CASE("perceptual distance: identity, symmetry, nonnegativity") {
  auto metric = perceptual::make_perceptual_metric({}, shared_toy(4, 3));
  Rng rng(5);
  Tensor a = tu::random_tensor({32, 32}, rng);
  Tensor b = tu::random_tensor({32, 32}, rng);

  CHECK(metric->distance(a, a) == 0.0);
  double ab = metric->distance(a, b);
  double ba = metric->distance(b, a);
  CHECK(ab > 0.0);
  CHECK(std::fabs(ab - ba) < 1e-6);
}

TEST_CASE("perceptual distance: monotone under growing noise") {
  auto metric = perceptual::make_perceptual_metric({}, shared_toy(4, 7));
  Rng rng(11);
  Tensor base = tu::random_tensor({32, 32}, rng, 0.2f, 0.8f);
  Tensor noise = tu::random_tensor({32, 32}, rng, -1.0f, 1.0f);
  double last = 0.0;
  for (double sigma : {0.01, 0.02, 0.04}) {
    Tensor noisy = base;
    for (std::int64_t i = 0; i < noisy.numel(); ++i)
      noisy.at(static_cast<std::size_t>(i)) += static_cast<float>(sigma) * noise.at(static_cast<std::size_t>(i));
    double d = metric->distance(base, noisy);
    CHECK(d > last);
    last = d;
  }
}

namespace {

// Double-precision reference of the surrogate-feature metric, used as the
// finite-difference oracle: relu kinks and float32 noise make direct float
// differencing meaningless at the spec tolerance.
struct DoubleRef {
  struct ConvBn {
    Tensor w;                      // [cout,cin,3,3]
    std::vector<double> scale, shift;  // folded eval-mode batchnorm
  };
  std::vector<ConvBn> blocks;
  int k;

  explicit DoubleRef(models::Classifier& m) {
    nn::StateDict sd;
    m.collect_state(sd);
    auto find = [&](const std::string& name) -> Tensor* {
      for (auto& [n, t] : sd.entries)
        if (n == name) return t;
      FAIL("missing tensor ", name);
      return nullptr;
    };
    for (int i = 1; i <= 5; ++i) {
      std::string base = "toy-cnn.c" + std::to_string(i);
      ConvBn cb;
      cb.w = *find(base + ".conv.w");
      Tensor& gamma = *find(base + ".bn.gamma");
      Tensor& beta = *find(base + ".bn.beta");
      Tensor& rm = *find(base + ".bn.running_mean");
      Tensor& rv = *find(base + ".bn.running_var");
      for (std::int64_t c = 0; c < gamma.numel(); ++c) {
        double inv = 1.0 / std::sqrt(static_cast<double>(rv.at(static_cast<std::size_t>(c))) + 1e-5);
        cb.scale.push_back(gamma.at(static_cast<std::size_t>(c)) * inv);
        cb.shift.push_back(beta.at(static_cast<std::size_t>(c)) -
                           gamma.at(static_cast<std::size_t>(c)) * inv * rm.at(static_cast<std::size_t>(c)));
      }
      blocks.push_back(std::move(cb));
    }
  }

  using Fmap = std::vector<std::vector<double>>;  // [C][H*W]

  static Fmap conv_bn_relu(const Fmap& x, int h, int w, const ConvBn& cb) {
    int cin = static_cast<int>(x.size());
    int cout = cb.w.dim(0);
    Fmap y(static_cast<std::size_t>(cout), std::vector<double>(static_cast<std::size_t>(h) * w, 0.0));
    for (int co = 0; co < cout; ++co) {
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) {
          double s = 0;
          for (int ci = 0; ci < cin; ++ci)
            for (int ky = -1; ky <= 1; ++ky)
              for (int kx = -1; kx <= 1; ++kx) {
                int iy = yy + ky, ix = xx + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                s += static_cast<double>(
                         cb.w.at(((static_cast<std::size_t>(co) * cin + ci) * 3 + (ky + 1)) * 3 + (kx + 1))) *
                     x[static_cast<std::size_t>(ci)][static_cast<std::size_t>(iy) * w + ix];
              }
          s = s * cb.scale[static_cast<std::size_t>(co)] + cb.shift[static_cast<std::size_t>(co)];
          y[static_cast<std::size_t>(co)][static_cast<std::size_t>(yy) * w + xx] = s > 0 ? s : 0;
        }
    }
    return y;
  }

  static Fmap pool2(const Fmap& x, int h, int w) {
    int oh = h / 2, ow = w / 2;
    Fmap y(x.size(), std::vector<double>(static_cast<std::size_t>(oh) * ow));
    for (std::size_t c = 0; c < x.size(); ++c)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) {
          double m = x[c][static_cast<std::size_t>(2 * yy) * w + 2 * xx];
          m = std::max(m, x[c][static_cast<std::size_t>(2 * yy) * w + 2 * xx + 1]);
          m = std::max(m, x[c][static_cast<std::size_t>(2 * yy + 1) * w + 2 * xx]);
          m = std::max(m, x[c][static_cast<std::size_t>(2 * yy + 1) * w + 2 * xx + 1]);
          y[c][static_cast<std::size_t>(yy) * ow + xx] = m;
        }
    return y;
  }

  static double layer_term(const Fmap& fa, const Fmap& fb) {
    std::size_t hw = fa[0].size();
    std::size_t c = fa.size();
    double total = 0;
    for (std::size_t j = 0; j < hw; ++j) {
      double sa = 0, sb = 0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        sa += fa[ch][j] * fa[ch][j];
        sb += fb[ch][j] * fb[ch][j];
      }
      double na = std::sqrt(sa + 1e-3), nb = std::sqrt(sb + 1e-3);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double d = fa[ch][j] / na - fb[ch][j] / nb;
        total += d * d;
      }
    }
    return total / static_cast<double>(hw);
  }

  // taps conv2..conv5, matching the toy-cnn default layer set
  double distance(const std::vector<double>& a, const std::vector<double>& b, int h, int w) const {
    Fmap xa{a}, xb{b};
    int ch = h, cw = w;
    double total = 0;
    for (int i = 0; i < 5; ++i) {
      xa = conv_bn_relu(xa, ch, cw, blocks[static_cast<std::size_t>(i)]);
      xb = conv_bn_relu(xb, ch, cw, blocks[static_cast<std::size_t>(i)]);
      if (i >= 1) total += layer_term(xa, xb);
      if (i == 1 || i == 2 || i == 3) {  // pools after conv2, conv3, conv4
        xa = pool2(xa, ch, cw);
        xb = pool2(xb, ch, cw);
        ch /= 2;
        cw /= 2;
      }
    }
    return total;
  }
};

}  // namespace

TEST_CASE("perceptual distance gradient matches central differences on 8x8") {
  auto surrogate = shared_toy(3, 13);
  perceptual::PerceptualMetricConfig ucfg;
  ucfg.scale = 1.0;  // unit scale so the double reference matches exactly
  auto metric = perceptual::make_perceptual_metric(ucfg, surrogate);
  Rng rng(17);
  Tensor a0 = tu::random_tensor({8, 8}, rng, 0.2f, 0.8f);
  Tensor b0 = tu::random_tensor({8, 8}, rng, 0.2f, 0.8f);

  DoubleRef ref(*surrogate);
  std::vector<double> da(a0.data(), a0.data() + 64), db(b0.data(), b0.data() + 64);
  // the double reference agrees with the shipped float path
  CHECK(ref.distance(da, db, 8, 8) == doctest::Approx(metric->distance(a0, b0)).epsilon(1e-4));

  nn::Graph g(false);
  nn::Var a = g.input(a0.reshaped({1, 1, 8, 8}), true);
  nn::Var b = g.input(b0.reshaped({1, 1, 8, 8}), false);
  nn::Var d = metric->distance_var(g, a, b);
  g.backward(d);
  Tensor analytic = g.grad(a);

  double h = 1e-6;
  double f0 = ref.distance(da, db, 8, 8);
  int kinks = 0, checked = 0;
  for (std::size_t i = 0; i < 64; ++i) {
    std::vector<double> ap = da, am = da;
    ap[i] += h;
    am[i] -= h;
    double fp = ref.distance(ap, db, 8, 8), fm = ref.distance(am, db, 8, 8);
    double right = (fp - f0) / h, left = (f0 - fm) / h;
    if (std::fabs(right - left) > 1e-3 * std::max({1.0, std::fabs(right), std::fabs(left)})) {
      ++kinks;  // a relu/maxpool kink inside the step
      continue;
    }
    double fd = (fp - fm) / (2 * h);
    double an = analytic.at(i);
    CHECK(std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-3}) < 1e-3);
    ++checked;
  }
  CHECK(checked >= 48);  // kinks must stay the exception
  (void)kinks;
}

TEST_CASE("file feature backbone: round trip and replication") {
  tu::TempDir td("backbone");
  Rng rng(29);
  std::vector<perceptual::FeatureBackboneLayer> layers = {{3, 8, false}, {8, 12, true}};
  std::vector<Tensor> w, b;
  w.push_back(tu::random_tensor({8, 3, 3, 3}, rng, -0.3f, 0.3f));
  b.push_back(tu::random_tensor({8}, rng, -0.1f, 0.1f));
  w.push_back(tu::random_tensor({12, 8, 3, 3}, rng, -0.3f, 0.3f));
  b.push_back(tu::random_tensor({12}, rng, -0.1f, 0.1f));
  std::string path = (td.path() / "bb.ckpt").string();
  perceptual::save_feature_backbone(path, layers, {0, 1}, w, b);

  perceptual::PerceptualMetricConfig cfg;
  cfg.backbone = "file:" + path;
  cfg.channel_replication = true;
  auto metric = perceptual::make_perceptual_metric(cfg, nullptr);

  Tensor a = tu::random_tensor({16, 16}, rng);
  Tensor bimg = tu::random_tensor({16, 16}, rng);
  CHECK(metric->distance(a, a) == 0.0);
  CHECK(metric->distance(a, bimg) > 0.0);
  CHECK(std::fabs(metric->distance(a, bimg) - metric->distance(bimg, a)) < 1e-6);
}

TEST_CASE("perceptual config validation") {
  CHECK_THROWS(perceptual::make_perceptual_metric({"nonsense", {}, false}, nullptr));
  CHECK_THROWS(perceptual::make_perceptual_metric({}, nullptr));  // surrogate missing
}
