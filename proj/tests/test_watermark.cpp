#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "test_util.hpp"
#include "xmark/core/io.hpp"
#include "xmark/data/dataset.hpp"
#include "xmark/models/checkpoint.hpp"
#include "xmark/perceptual/perceptual.hpp"
#include "xmark/pyramid/pyramid.hpp"
#include "xmark/watermark/watermark.hpp"

using namespace xmark;

namespace {

struct Fixture {
  data::Dataset ds;
  std::shared_ptr<models::Classifier> surrogate;
  std::shared_ptr<models::Generator> generator;
  std::shared_ptr<watermark::SaliencyProvider> saliency;
  watermark::WatermarkApplier applier;

  explicit Fixture(bool randomize_gen = true) {
    data::ToyDatasetConfig dcfg;
    dcfg.n_samples = 120;
    dcfg.resolution = 32;
    dcfg.num_classes = 4;
    dcfg.seed = 9;
    ds = data::generate_toy_dataset(dcfg);
    data::split(ds, 0.7, 0.15, 0.15, 3);

    surrogate = models::build_classifier("toy-cnn", 4, "random", 21);
    surrogate->set_trained_resolution(32);

    models::GeneratorConfig gcfg;
    gcfg.widths = {8, 16, 24};
    gcfg.resolution = 32;
    generator = std::make_shared<models::Generator>(gcfg, 33);
    if (randomize_gen) {
      Rng rng(5);
      std::vector<nn::Parameter*> params;
      generator->collect_params(params);
      for (nn::Parameter* p : params)
        for (std::int64_t i = 0; i < p->value.numel(); ++i)
          p->value.at(static_cast<std::size_t>(i)) += static_cast<float>(rng.uniform(-0.3, 0.3));
    }
    saliency = std::make_shared<watermark::SaliencyProvider>(surrogate, 32);
    applier = watermark::WatermarkApplier{generator, saliency, 16.0 / 255.0};
  }
};

}  // namespace

TEST_CASE("watermark config validation") {
  watermark::WatermarkConfig c;
  c.validate();
  c.gamma = 0.0;
  CHECK_THROWS(c.validate());
  c.gamma = 0.1;
  c.tau = 1.5;
  CHECK_THROWS(c.validate());
  c.tau = 0.25;
  c.lambda_lap = -1;
  CHECK_THROWS(c.validate());
}

TEST_CASE("watermark_dataset: count, clean labels, only-target, budget, determinism") {
  Fixture fx;
  watermark::WatermarkConfig wcfg;
  wcfg.gamma = 0.1;
  wcfg.target_class = 0;
  wcfg.seed = 77;

  std::vector<int> target_train = fx.ds.class_indices(data::Split::train, 0, true);
  std::size_t expected =
      static_cast<std::size_t>(std::floor(0.1 * static_cast<double>(target_train.size()) + 0.5));

  watermark::WatermarkedDataset wd = watermark::watermark_dataset(fx.ds, fx.applier, wcfg);
  CHECK(wd.watermarked_ids.size() == expected);
  CHECK(expected >= 1);

  float eps = static_cast<float>(wcfg.eps);
  int changed = 0;
  for (std::size_t i = 0; i < fx.ds.samples.size(); ++i) {
    const auto& before = fx.ds.samples[i];
    const auto& after = wd.dataset.samples[i];
    CHECK(before.labels == after.labels);  // clean-label
    float diff = tu::max_abs_diff(before.pixels, after.pixels);
    if (wd.watermarked_ids.count(before.id)) {
      CHECK(before.labels[0] == 1);         // only target-class samples selected
      CHECK(before.split == data::Split::train);
      CHECK(diff <= eps + 1e-6f);
      if (diff > 0) ++changed;
    } else {
      CHECK(diff == 0.0f);  // untouched
    }
  }
  CHECK(changed > 0);

  // sample-specific: perturbation fields differ pairwise
  std::vector<Tensor> deltas;
  for (std::size_t i = 0; i < fx.ds.samples.size(); ++i)
    if (wd.watermarked_ids.count(fx.ds.samples[i].id)) {
      Tensor d(fx.ds.samples[i].pixels.dims());
      for (std::int64_t j = 0; j < d.numel(); ++j)
        d.at(static_cast<std::size_t>(j)) = wd.dataset.samples[i].pixels.at(static_cast<std::size_t>(j)) -
                                            fx.ds.samples[i].pixels.at(static_cast<std::size_t>(j));
      deltas.push_back(std::move(d));
    }
  for (std::size_t i = 0; i < deltas.size(); ++i)
    for (std::size_t j = i + 1; j < deltas.size(); ++j)
      CHECK(tu::max_abs_diff(deltas[i], deltas[j]) > 0.0f);

  // determinism
  watermark::WatermarkedDataset wd2 = watermark::watermark_dataset(fx.ds, fx.applier, wcfg);
  CHECK(wd2.watermarked_ids == wd.watermarked_ids);
  for (std::size_t i = 0; i < wd.dataset.samples.size(); ++i)
    CHECK(tu::max_abs_diff(wd.dataset.samples[i].pixels, wd2.dataset.samples[i].pixels) == 0.0f);

  // different seed, different selection (with overwhelming probability)
  watermark::WatermarkConfig other = wcfg;
  other.seed = 78;
  watermark::WatermarkedDataset wd3 = watermark::watermark_dataset(fx.ds, fx.applier, other);
  CHECK(wd3.watermarked_ids.size() == expected);
}

TEST_CASE("watermark_dataset: tiny gamma rounds to zero and reports unmodified") {
  Fixture fx;
  watermark::WatermarkConfig wcfg;
  wcfg.gamma = 1e-4;  // rounds to zero samples
  watermark::WatermarkedDataset wd = watermark::watermark_dataset(fx.ds, fx.applier, wcfg);
  CHECK(wd.watermarked_ids.empty());
  for (std::size_t i = 0; i < fx.ds.samples.size(); ++i)
    CHECK(tu::max_abs_diff(fx.ds.samples[i].pixels, wd.dataset.samples[i].pixels) == 0.0f);
}

TEST_CASE("export + sidecar round trip") {
  tu::TempDir td("wmexport");
  Fixture fx;
  watermark::WatermarkConfig wcfg;
  wcfg.gamma = 0.2;
  wcfg.seed = 5;
  watermark::WatermarkedDataset wd = watermark::watermark_dataset(fx.ds, fx.applier, wcfg);
  watermark::export_watermarked_dataset(wd, td.str());

  data::Dataset back = data::load_manifest((td.path() / "manifest.csv").string());
  REQUIRE(back.samples.size() == wd.dataset.samples.size());
  float eps = static_cast<float>(wcfg.eps);
  for (std::size_t i = 0; i < back.samples.size(); ++i) {
    CHECK(back.samples[i].id == wd.dataset.samples[i].id);
    CHECK(back.samples[i].labels == wd.dataset.samples[i].labels);
    CHECK(tu::max_abs_diff(back.samples[i].pixels, wd.dataset.samples[i].pixels) <=
          1.0f / 510.0f + 1e-7f);
    // budget holds against the original up to quantization slack
    CHECK(tu::max_abs_diff(back.samples[i].pixels, fx.ds.samples[i].pixels) <=
          eps + 1.0f / 510.0f + 1e-7f);
  }

  watermark::Sidecar side = watermark::load_sidecar((td.path() / "sidecar.json").string());
  CHECK(side.schema_version == 1);
  CHECK(side.watermarked_ids == wd.watermarked_ids);
  CHECK(side.config.gamma == wcfg.gamma);
  CHECK(side.generator_fingerprint == io::hex64(wd.generator_fingerprint));
}

TEST_CASE("identity-initialized generator has near-zero perceptual and pyramid losses") {
  Fixture fx(false);  // keep the zero head
  auto metric = perceptual::make_perceptual_metric({}, fx.surrogate);

  std::vector<int> idx = {0, 1, 2, 3};
  Tensor x = models::make_batch(fx.ds, idx, 32);
  nn::Graph g(false);
  nn::Var xv = g.input(x, false);
  Tensor sal({4, 1, 4, 4});
  sal.fill(0.5f);
  nn::Var wm = fx.generator->forward(g, xv, g.input(sal, false), 16.0f / 255.0f);
  nn::Var lp = metric->distance_var(g, wm, xv);
  nn::Var lap = pyr::laplacian_pyramid_loss_var(g, wm, xv, 3);
  CHECK(g.value(lp).at(0) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(g.value(lap).at(0) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("train_generator: smoke run records four components and respects caps") {
  Fixture fx(false);
  auto metric = perceptual::make_perceptual_metric({}, fx.surrogate);
  watermark::WatermarkConfig wcfg;
  wcfg.target_class = 0;
  watermark::GenTrainConfig tcfg;
  tcfg.epoch_cap = 2;
  tcfg.batch_size = 4;
  tcfg.lr = 1e-3;
  tcfg.probe_size = 8;
  tcfg.early_stop_flip_rate = 2.0;  // unreachable: always run to the cap

  std::uint64_t sur_before = models::classifier_fingerprint(*fx.surrogate);
  watermark::GenTrainResult r =
      watermark::train_generator(*fx.generator, *fx.saliency, fx.ds, wcfg, tcfg, *metric);
  CHECK(r.epochs_run == 2);
  REQUIRE(r.history.size() == 2);
  CHECK(r.history[0].loss_lpips >= 0.0);
  CHECK(r.history[0].loss_lap >= 0.0);
  CHECK(r.history[0].loss_t >= 0.0);
  CHECK(r.history[0].loss_nt >= 0.0);
  // only theta moves; the surrogate is untouched
  CHECK(models::classifier_fingerprint(*fx.surrogate) == sur_before);
  // balanced subsets
  CHECK(r.target_subset.size() == r.non_target_subset.size());
  for (int idx : r.target_subset)
    CHECK(fx.ds.samples[static_cast<std::size_t>(idx)].labels[0] == 1);
  for (int idx : r.non_target_subset)
    CHECK(fx.ds.samples[static_cast<std::size_t>(idx)].labels[0] == 0);
}

TEST_CASE("saliency provider caches and stays in range") {
  Fixture fx;
  const Tensor& s1 = fx.saliency->for_sample(fx.ds.samples[0]);
  const Tensor& s2 = fx.saliency->for_sample(fx.ds.samples[0]);
  CHECK(&s1 == &s2);  // cached
  for (std::int64_t i = 0; i < s1.numel(); ++i) {
    CHECK(s1.at(static_cast<std::size_t>(i)) >= 0.0f);
    CHECK(s1.at(static_cast<std::size_t>(i)) <= 1.0f);
  }
  tu::TempDir td("salcache");
  fx.saliency->save_cache(td.str());
  CHECK(std::filesystem::exists(td.path() / (fx.ds.samples[0].id + ".f32")));
}
