#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "xmark/saliency/eigencam.hpp"

using namespace xmark;

TEST_CASE("normalize_cam arithmetic and degenerate rule") {
  Tensor raw({1, 3}, {0.0f, 5.0f, 10.0f});
  Tensor n = saliency::normalize_cam(raw);
  CHECK(n.at(0) == doctest::Approx(0.0f));
  CHECK(n.at(1) == doctest::Approx(0.5f));
  CHECK(n.at(2) == doctest::Approx(1.0f));

  Tensor c = Tensor::full({4, 4}, 3.0f);
  Tensor nc = saliency::normalize_cam(c);
  for (std::int64_t i = 0; i < nc.numel(); ++i) CHECK(nc.at(static_cast<std::size_t>(i)) == 0.0f);

  Tensor already({2, 2}, {0.0f, 0.25f, 0.75f, 1.0f});
  Tensor na = saliency::normalize_cam(already);
  CHECK(tu::max_abs_diff(na, already) == 0.0f);

  Tensor bad({1, 2}, {0.0f, std::nanf("")});
  CHECK_THROWS(saliency::normalize_cam(bad));
}

TEST_CASE("eigencam: single channel is a normalized copy") {
  Rng rng(3);
  Tensor act({1, 5, 7});
  for (std::int64_t i = 0; i < act.numel(); ++i)
    act.at(static_cast<std::size_t>(i)) = static_cast<float>(rng.uniform(0.0, 2.0));
  saliency::SaliencyMap sm = saliency::eigencam(act);
  Tensor want = saliency::normalize_cam(act.reshaped({5, 7}));
  CHECK(tu::max_abs_diff(sm.values, want) < 1e-6f);
}

TEST_CASE("eigencam: rank-1 activations recover the planted map (SVD oracle)") {
  Rng rng(11);
  int h = 6, w = 9, c = 8;
  // planted spatial map with nonnegative mean
  Tensor m({h, w});
  for (std::int64_t i = 0; i < m.numel(); ++i)
    m.at(static_cast<std::size_t>(i)) = static_cast<float>(rng.uniform(-0.3, 1.0));
  std::vector<float> weights(static_cast<std::size_t>(c));
  for (auto& wc : weights) wc = static_cast<float>(rng.uniform(0.2, 1.5));

  Tensor act({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int j = 0; j < h * w; ++j)
      act.at(static_cast<std::size_t>(ch) * h * w + static_cast<std::size_t>(j)) =
          weights[static_cast<std::size_t>(ch)] * m.at(static_cast<std::size_t>(j));

  saliency::SaliencyMap sm = saliency::eigencam(act);
  Tensor want = saliency::normalize_cam(m);
  CHECK(tu::max_abs_diff(sm.values, want) < 1e-5f);
}

TEST_CASE("eigencam: constant activations give all-zero saliency") {
  Tensor act = Tensor::full({4, 3, 3}, 0.7f);
  saliency::SaliencyMap sm = saliency::eigencam(act);
  for (std::int64_t i = 0; i < sm.values.numel(); ++i)
    CHECK(sm.values.at(static_cast<std::size_t>(i)) == 0.0f);

  Tensor zeros({3, 2, 2});
  saliency::SaliencyMap sz = saliency::eigencam(zeros);
  for (std::int64_t i = 0; i < sz.values.numel(); ++i)
    CHECK(sz.values.at(static_cast<std::size_t>(i)) == 0.0f);
}

TEST_CASE("eigencam: positive scaling invariance and output range") {
  Rng rng(13);
  Tensor act = tu::random_tensor({6, 8, 8}, rng, -1.0f, 1.0f);
  saliency::SaliencyMap s1 = saliency::eigencam(act);
  Tensor scaled = act;
  for (std::int64_t i = 0; i < scaled.numel(); ++i) scaled.at(static_cast<std::size_t>(i)) *= 7.5f;
  saliency::SaliencyMap s2 = saliency::eigencam(scaled);
  CHECK(tu::max_abs_diff(s1.values, s2.values) < 1e-6f);

  float lo = 1.0f, hi = 0.0f;
  for (std::int64_t i = 0; i < s1.values.numel(); ++i) {
    float v = s1.values.at(static_cast<std::size_t>(i));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(lo == 0.0f);
  CHECK(hi == 1.0f);

  // determinism
  saliency::SaliencyMap s3 = saliency::eigencam(act);
  CHECK(tu::max_abs_diff(s1.values, s3.values) == 0.0f);

  Tensor bad = act;
  bad.at(5) = std::numeric_limits<float>::infinity();
  CHECK_THROWS(saliency::eigencam(bad));
}
