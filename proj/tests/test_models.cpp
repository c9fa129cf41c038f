#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "test_util.hpp"
#include "xmark/models/checkpoint.hpp"
#include "xmark/models/classifier.hpp"
#include "xmark/models/generator.hpp"
#include "xmark/nn/optim.hpp"

using namespace xmark;
using models::Classifier;
using models::Generator;

TEST_CASE("classifier registry: shapes, probability range, determinism") {
  for (const std::string& id : models::registered_classifiers()) {
    auto model = models::build_classifier(id, 6, "random", 11);
    Rng rng(3);
    Tensor x = tu::random_tensor({2, 1, 64, 64}, rng);
    Tensor p = model->predict_proba(x);
    REQUIRE(p.dims() == std::vector<int>{2, 6});
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      CHECK(p.at(static_cast<std::size_t>(i)) > 0.0f);
      CHECK(p.at(static_cast<std::size_t>(i)) < 1.0f);
    }
    // same seed, same init, same outputs
    auto model2 = models::build_classifier(id, 6, "random", 11);
    Tensor p2 = model2->predict_proba(x);
    CHECK(tu::max_abs_diff(p, p2) == 0.0f);
  }
  CHECK_THROWS(models::build_classifier("alexnet", 6, "random", 1));
}

TEST_CASE("predict_proba: batch order, duplicated rows, zero logits") {
  auto model = models::build_classifier("toy-cnn", 4, "random", 5);
  Rng rng(9);
  Tensor x = tu::random_tensor({3, 1, 32, 32}, rng);
  // duplicate row 1 into row 2
  std::size_t plane = 32 * 32;
  std::copy(x.data() + plane, x.data() + 2 * plane, x.data() + 2 * plane);
  Tensor p = model->predict_proba(x);
  for (int j = 0; j < 4; ++j)
    CHECK(p.at(static_cast<std::size_t>(1 * 4 + j)) == p.at(static_cast<std::size_t>(2 * 4 + j)));

  // logit 0 -> probability exactly 0.5
  Tensor pooled({1, model->final_conv_channels()});
  auto heads = model->head_params();
  heads[0]->value.fill(0.0f);
  heads[1]->value.fill(0.0f);
  Tensor z = model->head_logits_from_pooled(pooled);
  for (int j = 0; j < 4; ++j) CHECK(z.at(static_cast<std::size_t>(j)) == 0.0f);
}

TEST_CASE("predict_proba is permutation-equivariant over the batch") {
  auto model = models::build_classifier("toy-cnn", 3, "random", 19);
  Rng rng(23);
  Tensor x = tu::random_tensor({4, 1, 32, 32}, rng);
  Tensor p = model->predict_proba(x);
  // reverse the batch
  Tensor rev({4, 1, 32, 32});
  std::size_t plane = 32 * 32;
  for (int i = 0; i < 4; ++i)
    std::copy(x.data() + static_cast<std::size_t>(i) * plane,
              x.data() + static_cast<std::size_t>(i + 1) * plane,
              rev.data() + static_cast<std::size_t>(3 - i) * plane);
  Tensor pr = model->predict_proba(rev);
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 3; ++k)
      CHECK(p.at(static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(k)) ==
            pr.at(static_cast<std::size_t>(3 - i) * 3 + static_cast<std::size_t>(k)));
}

TEST_CASE("predict_proba rejects a resolution mismatch") {
  auto model = models::build_classifier("toy-cnn", 3, "random", 2);
  model->set_trained_resolution(64);
  Rng rng(3);
  Tensor x = tu::random_tensor({1, 1, 32, 32}, rng);
  CHECK_THROWS(model->predict_proba(x));
}

TEST_CASE("classifier training reduces loss on the toy dataset") {
  data::ToyDatasetConfig dcfg;
  dcfg.n_samples = 160;
  dcfg.resolution = 32;
  dcfg.num_classes = 4;
  dcfg.seed = 21;
  data::Dataset ds = data::generate_toy_dataset(dcfg);
  data::split(ds, 0.8, 0.1, 0.1, 2);

  auto model = models::build_classifier("toy-cnn", 4, "random", 7);
  models::TrainConfig tcfg;
  tcfg.epochs = 3;
  tcfg.batch_size = 16;
  tcfg.lr = 2e-3;
  tcfg.resolution = 32;
  tcfg.seed = 13;
  auto history = models::train_classifier(*model, ds, tcfg);
  REQUIRE(history.size() == 3);
  CHECK(history.back() < history.front());

  // zero epochs leave the model untouched
  auto frozen = models::build_classifier("toy-cnn", 4, "random", 7);
  std::uint64_t before = models::classifier_fingerprint(*frozen);
  models::TrainConfig zero = tcfg;
  zero.epochs = 0;
  models::train_classifier(*frozen, ds, zero);
  CHECK(models::classifier_fingerprint(*frozen) == before);

  // empty train split rejected
  data::Dataset no_train = ds;
  for (auto& s : no_train.samples) s.split = data::Split::test;
  CHECK_THROWS(models::train_classifier(*model, no_train, tcfg));
}

TEST_CASE("generator: identity at init, budget enforced structurally") {
  models::GeneratorConfig gcfg;
  gcfg.widths = {8, 16, 24};
  gcfg.resolution = 32;
  Generator gen(gcfg, 77);

  Rng rng(5);
  Tensor img = tu::random_tensor({32, 32}, rng);
  Tensor sal = tu::random_tensor({8, 8}, rng);

  // zero-initialized head: output equals input exactly
  Tensor out = gen.watermark_image(img, sal, 16.0f / 255.0f);
  CHECK(tu::max_abs_diff(out, img) == 0.0f);

  // eps = 0 collapses the budget for any parameters
  std::vector<nn::Parameter*> params;
  gen.collect_params(params);
  for (nn::Parameter* p : params)
    for (std::int64_t i = 0; i < p->value.numel(); ++i)
      p->value.at(static_cast<std::size_t>(i)) += static_cast<float>(rng.uniform(-0.3, 0.3));
  Tensor out0 = gen.watermark_image(img, sal, 0.0f);
  CHECK(tu::max_abs_diff(out0, img) == 0.0f);

  // random parameters: budget and range hold structurally
  float eps = 16.0f / 255.0f;
  Tensor out1 = gen.watermark_image(img, sal, eps);
  CHECK(tu::max_abs_diff(out1, img) <= eps + 1e-7f);
  for (std::int64_t i = 0; i < out1.numel(); ++i) {
    CHECK(out1.at(static_cast<std::size_t>(i)) >= 0.0f);
    CHECK(out1.at(static_cast<std::size_t>(i)) <= 1.0f);
  }

  // saturated input stays in range
  Tensor ones = Tensor::full({32, 32}, 1.0f);
  Tensor outs = gen.watermark_image(ones, sal, eps);
  for (std::int64_t i = 0; i < outs.numel(); ++i)
    CHECK(outs.at(static_cast<std::size_t>(i)) <= 1.0f);

  CHECK_THROWS(gen.watermark_image(Tensor({30, 30}), sal, eps));  // not divisible by 4

  // saliency conditioning reaches the output once parameters are nonzero
  Tensor sal2 = sal;
  for (std::int64_t i = 0; i < sal2.numel(); ++i)
    sal2.at(static_cast<std::size_t>(i)) = 1.0f - sal2.at(static_cast<std::size_t>(i));
  Tensor out2 = gen.watermark_image(img, sal2, eps);
  CHECK(tu::max_abs_diff(out2, out1) > 0.0f);
}

TEST_CASE("generator checkpoint round trip preserves the forward function") {
  tu::TempDir td("gckpt");
  models::GeneratorConfig gcfg;
  gcfg.widths = {8, 16, 24};
  gcfg.resolution = 32;
  Generator gen(gcfg, 3);
  std::vector<nn::Parameter*> params;
  gen.collect_params(params);
  Rng rng(8);
  for (nn::Parameter* p : params)
    for (std::int64_t i = 0; i < p->value.numel(); ++i)
      p->value.at(static_cast<std::size_t>(i)) += static_cast<float>(rng.uniform(-0.2, 0.2));

  std::string path = (td.path() / "gen.ckpt").string();
  models::save_generator(path, gen, {});
  auto back = models::load_generator(path);
  CHECK(models::generator_fingerprint(*back) == models::generator_fingerprint(gen));

  Tensor img = tu::random_tensor({32, 32}, rng);
  Tensor sal = tu::random_tensor({8, 8}, rng);
  Tensor a = gen.watermark_image(img, sal, 0.05f);
  Tensor b = back->watermark_image(img, sal, 0.05f);
  CHECK(tu::max_abs_diff(a, b) <= 1e-6f);
}

TEST_CASE("classifier checkpoint round trip preserves predictions") {
  tu::TempDir td("cckpt");
  auto model = models::build_classifier("toy-cnn", 3, "random", 15);
  model->set_trained_resolution(32);
  // perturb a BN running stat and the mask to confirm buffers serialize
  model->channel_mask().at(1) = 0.0f;
  std::string path = (td.path() / "cls.ckpt").string();
  models::save_classifier(path, *model, {{"note", "test"}});
  auto back = models::load_classifier(path);
  CHECK(back->architecture_id() == "toy-cnn");
  CHECK(back->trained_resolution() == 32);
  CHECK(back->channel_mask().at(1) == 0.0f);

  Rng rng(2);
  Tensor x = tu::random_tensor({2, 1, 32, 32}, rng);
  CHECK(tu::max_abs_diff(model->predict_proba(x), back->predict_proba(x)) <= 1e-6f);
}

TEST_CASE("count_params_and_macs: closed-form single conv and scaling law") {
  // single 3x3 conv, 1 -> 8 channels, 64x64 output, no bias
  Rng rng(1);
  nn::Conv2d conv("probe", 1, 8, 3, 1, 1, false, rng);
  CHECK(conv.w.value.numel() == 72);
  nn::Graph g(false);
  nn::Var y = conv.forward(g, g.input(Tensor({1, 1, 64, 64}), false));
  CHECK(g.value(y).dim(2) == 64);
  CHECK(g.macs() == 72 * 64 * 64);

  // fully convolutional: doubling resolution multiplies MACs by 4, params fixed
  models::GeneratorConfig gcfg;
  gcfg.widths = {8, 16, 24};
  Generator gen(gcfg, 5);
  auto c32 = models::count_params_and_macs(gen, 32);
  auto c64 = models::count_params_and_macs(gen, 64);
  CHECK(c64.params == c32.params);
  CHECK(c64.macs == 4 * c32.macs);

  auto cls = models::build_classifier("toy-cnn", 6, "random", 4);
  auto k32 = models::count_params_and_macs(*cls, 32);
  auto k64 = models::count_params_and_macs(*cls, 64);
  CHECK(k64.params == k32.params);
  // conv MACs scale by 4; only the constant GAP head breaks exactness
  CHECK(std::fabs(static_cast<double>(k64.macs) / static_cast<double>(k32.macs) - 4.0) < 0.01);
}

TEST_CASE("paper-scale residual generator vs reference U-Net cost reduction") {
  Generator gen(models::paper_scale_generator_config(), 1);
  models::ReferenceUnet ref(64, 1);
  auto gcost = models::count_params_and_macs(gen, 1024);
  auto rcost = models::count_params_and_macs(ref, 1024);
  double param_reduction = 100.0 * (1.0 - static_cast<double>(gcost.params) / static_cast<double>(rcost.params));
  double mac_reduction = 100.0 * (1.0 - static_cast<double>(gcost.macs) / static_cast<double>(rcost.macs));
  // within +/- 5 points of the 25% / 72% design targets
  CHECK(param_reduction > 20.0);
  CHECK(param_reduction < 30.0);
  CHECK(mac_reduction > 67.0);
  CHECK(mac_reduction < 77.0);
}

TEST_CASE("budget invariant propagates through training steps") {
  // random parameters and inputs; the constraint is structural
  models::GeneratorConfig gcfg;
  gcfg.widths = {6, 12, 18};
  Generator gen(gcfg, 31);
  std::vector<nn::Parameter*> params;
  gen.collect_params(params);
  Rng rng(77);
  float eps = 16.0f / 255.0f;
  for (int rep = 0; rep < 25; ++rep) {
    for (nn::Parameter* p : params)
      for (std::int64_t i = 0; i < p->value.numel(); ++i)
        p->value.at(static_cast<std::size_t>(i)) = static_cast<float>(rng.normal(0.0, 0.5));
    Tensor img = tu::random_tensor({16, 16}, rng);
    Tensor sal = tu::random_tensor({4, 4}, rng);
    Tensor out = gen.watermark_image(img, sal, eps);
    CHECK(tu::max_abs_diff(out, img) <= eps + 1e-7f);
  }
}
