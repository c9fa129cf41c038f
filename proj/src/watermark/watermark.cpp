#include "xmark/watermark/watermark.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "xmark/core/image.hpp"
#include "xmark/core/io.hpp"
#include "xmark/models/checkpoint.hpp"
#include "xmark/nn/optim.hpp"
#include "xmark/pyramid/pyramid.hpp"
#include "xmark/saliency/eigencam.hpp"

namespace xmark::watermark {

namespace fs = std::filesystem;
using nn::Graph;
using nn::Var;

void WatermarkConfig::validate() const {
  XM_CHECK(eps >= 0.0, "watermark config: eps must be >= 0");
  XM_CHECK(gamma > 0.0 && gamma <= 1.0, "watermark config: gamma must be in (0,1]");
  XM_CHECK(lambda_t >= 0 && lambda_nt >= 0 && lambda_lpips >= 0 && lambda_lap >= 0,
           "watermark config: loss weights must be nonnegative");
  XM_CHECK(tau >= 0.0 && tau <= 1.0, "watermark config: tau must be in [0,1]");
  XM_CHECK(pyramid_levels >= 1, "watermark config: pyramid levels must be >= 1");
  XM_CHECK(target_class >= 0, "watermark config: target class must be >= 0");
}

// ---- saliency provider ----

SaliencyProvider::SaliencyProvider(std::shared_ptr<models::Classifier> surrogate, int resolution)
    : surrogate_(std::move(surrogate)), resolution_(resolution) {
  XM_CHECK(surrogate_ != nullptr, "saliency provider needs a surrogate");
  XM_CHECK(resolution_ >= 8, "saliency provider: resolution too small");
}

const Tensor& SaliencyProvider::for_sample(const data::ImageSample& sample) {
  auto it = cache_.find(sample.id);
  if (it != cache_.end()) return it->second;
  Tensor input = img::resize_with_padding(sample.pixels, resolution_);
  Tensor acts = surrogate_->final_conv_activations(
      input.reshaped({1, 1, resolution_, resolution_}));
  Tensor chw = acts.reshaped({acts.dim(1), acts.dim(2), acts.dim(3)});
  saliency::SaliencyMap sm = saliency::eigencam(chw);
  auto [pos, inserted] = cache_.emplace(sample.id, std::move(sm.values));
  return pos->second;
}

void SaliencyProvider::save_cache(const std::string& dir) const {
  fs::create_directories(dir);
  for (const auto& [id, map] : cache_)
    io::write_f32_blob((fs::path(dir) / (id + ".f32")).string(), map);
}

// ---- applier ----

Tensor WatermarkApplier::apply(const Tensor& image_hw) const {
  XM_CHECK(generator != nullptr && saliency != nullptr, "watermark applier not wired");
  int gen_res = generator->config().resolution;
  Tensor at_gen = img::resize_with_padding(image_hw, gen_res);
  data::ImageSample probe;  // saliency cache keyed by content when no id is known
  probe.id = "anon-" + io::hex64(io::fnv1a64(image_hw.data(),
                                             static_cast<std::size_t>(image_hw.numel()) * 4));
  probe.pixels = image_hw;
  const Tensor& sal = saliency->for_sample(probe);
  Tensor wm = generator->watermark_image(at_gen, sal, static_cast<float>(eps));
  if (wm.same_shape(image_hw)) return wm;
  // map back to the native grid; bilinear is a convex combination, so the
  // per-pixel budget survives the round trip
  return img::bilinear_resize(wm, image_hw.dim(0), image_hw.dim(1));
}

// ---- generator training ----

namespace {

std::vector<int> pick_subset(std::vector<int> pool, std::size_t count, Rng rng) {
  rng.shuffle(pool);
  pool.resize(std::min(count, pool.size()));
  std::sort(pool.begin(), pool.end());
  return pool;
}

Tensor saliency_batch(SaliencyProvider& provider, const data::Dataset& ds,
                      const std::vector<int>& indices) {
  XM_CHECK(!indices.empty(), "saliency_batch: empty index list");
  const Tensor& first = provider.for_sample(ds.samples[static_cast<std::size_t>(indices[0])]);
  int h = first.dim(0), w = first.dim(1);
  Tensor out({static_cast<int>(indices.size()), 1, h, w});
  std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& sal = provider.for_sample(ds.samples[static_cast<std::size_t>(indices[i])]);
    XM_CHECK(sal.dim(0) == h && sal.dim(1) == w, "saliency maps disagree in shape");
    std::copy(sal.data(), sal.data() + plane, out.data() + i * plane);
  }
  return out;
}

}  // namespace

GenTrainResult train_generator(models::Generator& gen, SaliencyProvider& saliency_provider,
                               const data::Dataset& ds, const WatermarkConfig& wcfg,
                               const GenTrainConfig& tcfg, perceptual::PerceptualMetric& metric) {
  wcfg.validate();
  XM_CHECK(wcfg.target_class < ds.num_classes(), "target class out of range for dataset");
  XM_CHECK(tcfg.batch_size >= 2 && tcfg.batch_size % 2 == 0,
           "generator batch size must be even (balanced halves)");
  models::Classifier& surrogate = *saliency_provider.surrogate();
  int k = wcfg.target_class;
  int gen_res = gen.config().resolution;
  int sur_res = surrogate.trained_resolution();
  XM_CHECK(sur_res > 0, "surrogate has no trained resolution");

  std::vector<int> target_all = ds.class_indices(data::Split::train, k, true);
  std::vector<int> non_target_all = ds.class_indices(data::Split::train, k, false);
  XM_CHECK(!target_all.empty(), "dataset has no target-class train samples (class ", k, ")");
  XM_CHECK(!non_target_all.empty(), "dataset has no non-target train samples (class ", k, ")");

  Rng master(static_cast<std::uint64_t>(tcfg.seed));
  std::size_t subset_n = static_cast<std::size_t>(
      std::max<std::int64_t>(1, std::llround(tcfg.subset_fraction * static_cast<double>(target_all.size()))));
  GenTrainResult result;
  result.target_subset = pick_subset(target_all, subset_n, master.fork(1));
  result.non_target_subset = pick_subset(non_target_all, result.target_subset.size(), master.fork(2));

  // probe for early stopping: held-out non-target samples from the val split
  std::vector<int> probe = ds.class_indices(data::Split::val, k, false);
  {
    Rng prng = master.fork(3);
    prng.shuffle(probe);
    probe.resize(std::min<std::size_t>(probe.size(), static_cast<std::size_t>(tcfg.probe_size)));
  }

  // freeze the surrogate
  std::vector<nn::Parameter*> sur_params;
  surrogate.collect_params(sur_params);
  std::vector<bool> was_trainable;
  for (nn::Parameter* p : sur_params) {
    was_trainable.push_back(p->trainable);
    p->trainable = false;
  }

  std::vector<nn::Parameter*> gen_params;
  gen.collect_params(gen_params);
  nn::AdamW::Options opt;
  opt.lr = static_cast<float>(tcfg.lr);
  opt.weight_decay = static_cast<float>(tcfg.weight_decay);
  nn::AdamW optim(gen_params, opt);

  int half = tcfg.batch_size / 2;
  float eps = static_cast<float>(wcfg.eps);

  auto probe_flip_rate = [&]() -> double {
    if (probe.empty()) return 1.0;
    int flipped = 0;
    for (int idx : probe) {
      const data::ImageSample& s = ds.samples[static_cast<std::size_t>(idx)];
      Tensor at_gen = img::resize_with_padding(s.pixels, gen_res);
      Tensor wm = gen.watermark_image(at_gen, saliency_provider.for_sample(s), eps);
      Tensor at_sur = img::resize_with_padding(wm, sur_res);
      Tensor p = surrogate.predict_proba(at_sur.reshaped({1, 1, sur_res, sur_res}));
      if (p.at(static_cast<std::size_t>(k)) >= 0.5f) ++flipped;
    }
    return static_cast<double>(flipped) / static_cast<double>(probe.size());
  };

  for (int epoch = 0; epoch < tcfg.epoch_cap; ++epoch) {
    Rng erng = master.fork(100 + static_cast<std::uint64_t>(epoch));
    std::vector<int> t_order = result.target_subset;
    std::vector<int> nt_order = result.non_target_subset;
    erng.shuffle(t_order);
    erng.shuffle(nt_order);

    GenEpochStats stats;
    int steps = 0;
    std::size_t pos = 0;
    while (pos < t_order.size()) {
      std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(half), t_order.size() - pos);
      if (take == 0) break;
      std::vector<int> batch_idx;
      for (std::size_t i = 0; i < take; ++i) batch_idx.push_back(t_order[pos + i]);
      for (std::size_t i = 0; i < take; ++i)
        batch_idx.push_back(nt_order[(pos + i) % nt_order.size()]);
      pos += take;
      int bt = static_cast<int>(take);
      int bn = static_cast<int>(take);

      Graph g(false);  // frozen surrogate runs with its running statistics
      Var x = g.input(models::make_batch(ds, batch_idx, gen_res), false);
      Var sal = g.input(saliency_batch(saliency_provider, ds, batch_idx), false);
      Var wm = gen.forward(g, x, sal, eps);

      Var wm_sur = g.bilinear_resize(wm, sur_res, sur_res);
      Var x_sur = g.bilinear_resize(x, sur_res, sur_res);
      Var logits = surrogate.logits(g, wm_sur, nullptr);
      Var logit_k = g.slice_col(logits, k);

      // target half driven to 0 on class k, non-target half to 1
      Var loss_t = g.bce_with_logits(g.slice_rows(logit_k, 0, bt), Tensor({bt, 1}));
      Var loss_nt =
          g.bce_with_logits(g.slice_rows(logit_k, bt, bn), Tensor::full({bn, 1}, 1.0f));
      Var lp = metric.distance_var(g, wm_sur, x_sur);
      Var lap = pyr::laplacian_pyramid_loss_var(g, wm, x, wcfg.pyramid_levels);

      Var total = g.weighted_sum_scalars(
          {loss_t, loss_nt, lp, lap},
          {static_cast<float>(wcfg.lambda_t), static_cast<float>(wcfg.lambda_nt),
           static_cast<float>(wcfg.lambda_lpips), static_cast<float>(wcfg.lambda_lap)});

      double p_t = g.value(loss_t).at(0);
      double p_nt = g.value(loss_nt).at(0);
      double lv = g.value(total).at(0);
      XM_CHECK(std::isfinite(lv), "train_generator: non-finite loss at epoch ", epoch);
      optim.zero_grad();
      g.backward(total);
      optim.step();

      stats.total += lv;
      stats.loss_t += p_t;
      stats.loss_nt += p_nt;
      stats.loss_lpips += g.value(lp).at(0);
      stats.loss_lap += g.value(lap).at(0);
      ++steps;
    }
    if (steps > 0) {
      stats.total /= steps;
      stats.loss_t /= steps;
      stats.loss_nt /= steps;
      stats.loss_lpips /= steps;
      stats.loss_lap /= steps;
    }
    stats.probe_flip_rate = probe_flip_rate();
    result.history.push_back(stats);
    result.epochs_run = epoch + 1;
    if (stats.probe_flip_rate >= tcfg.early_stop_flip_rate &&
        stats.loss_lpips <= tcfg.early_stop_lpips_ceiling) {
      result.early_stopped = true;
      break;
    }
  }

  for (std::size_t i = 0; i < sur_params.size(); ++i) sur_params[i]->trainable = was_trainable[i];
  return result;
}

// ---- dataset watermarking ----

WatermarkedDataset watermark_dataset(const data::Dataset& ds, const WatermarkApplier& applier,
                                     const WatermarkConfig& config) {
  config.validate();
  XM_CHECK(config.target_class < ds.num_classes(), "target class out of range for dataset");
  WatermarkedDataset wd;
  wd.dataset = ds;
  wd.config = config;
  wd.generator_fingerprint = models::generator_fingerprint(*applier.generator);
  wd.surrogate_fingerprint = models::classifier_fingerprint(*applier.saliency->surrogate());

  std::vector<int> target_train = ds.class_indices(data::Split::train, config.target_class, true);
  XM_CHECK(!target_train.empty(), "no target-class samples in the train split");
  // round-half-up
  std::size_t count = static_cast<std::size_t>(
      std::floor(config.gamma * static_cast<double>(target_train.size()) + 0.5));
  if (count == 0) return wd;  // reported by the caller; dataset unmodified

  Rng rng(static_cast<std::uint64_t>(config.seed) ^ 0x77a7e12dULL);
  rng.shuffle(target_train);
  target_train.resize(count);
  std::sort(target_train.begin(), target_train.end());

  for (int idx : target_train) {
    data::ImageSample& s = wd.dataset.samples[static_cast<std::size_t>(idx)];
    int gen_res = applier.generator->config().resolution;
    Tensor at_gen = img::resize_with_padding(s.pixels, gen_res);
    const Tensor& sal = applier.saliency->for_sample(ds.samples[static_cast<std::size_t>(idx)]);
    Tensor wm = applier.generator->watermark_image(at_gen, sal, static_cast<float>(applier.eps));
    s.pixels = wm.same_shape(s.pixels) ? std::move(wm)
                                       : img::bilinear_resize(wm, s.pixels.dim(0), s.pixels.dim(1));
    wd.watermarked_ids.insert(s.id);
  }
  return wd;
}

void export_watermarked_dataset(const WatermarkedDataset& wd, const std::string& out_dir) {
  data::save_dataset(wd.dataset, out_dir);
  nlohmann::json side;
  side["schema_version"] = 1;
  side["config"] = {
      {"eps", wd.config.eps},
      {"gamma", wd.config.gamma},
      {"target_class", wd.config.target_class},
      {"lambda_t", wd.config.lambda_t},
      {"lambda_nt", wd.config.lambda_nt},
      {"lambda_lpips", wd.config.lambda_lpips},
      {"lambda_lap", wd.config.lambda_lap},
      {"pyramid_levels", wd.config.pyramid_levels},
      {"tau", wd.config.tau},
      {"seed", wd.config.seed},
  };
  side["watermarked_ids"] = std::vector<std::string>(wd.watermarked_ids.begin(),
                                                     wd.watermarked_ids.end());
  side["generator_fingerprint"] = io::hex64(wd.generator_fingerprint);
  side["surrogate_fingerprint"] = io::hex64(wd.surrogate_fingerprint);
  io::write_text_file((fs::path(out_dir) / "sidecar.json").string(), side.dump(2) + "\n");
}

Sidecar load_sidecar(const std::string& path) {
  nlohmann::json j = nlohmann::json::parse(io::read_text_file(path));
  Sidecar s;
  s.schema_version = j.at("schema_version").get<int>();
  XM_CHECK(s.schema_version == 1, "unsupported sidecar schema version ", s.schema_version);
  const auto& c = j.at("config");
  s.config.eps = c.at("eps").get<double>();
  s.config.gamma = c.at("gamma").get<double>();
  s.config.target_class = c.at("target_class").get<int>();
  s.config.lambda_t = c.at("lambda_t").get<double>();
  s.config.lambda_nt = c.at("lambda_nt").get<double>();
  s.config.lambda_lpips = c.at("lambda_lpips").get<double>();
  s.config.lambda_lap = c.at("lambda_lap").get<double>();
  s.config.pyramid_levels = c.at("pyramid_levels").get<int>();
  s.config.tau = c.at("tau").get<double>();
  s.config.seed = c.at("seed").get<std::int64_t>();
  for (const auto& id : j.at("watermarked_ids")) s.watermarked_ids.insert(id.get<std::string>());
  s.generator_fingerprint = j.at("generator_fingerprint").get<std::string>();
  s.surrogate_fingerprint = j.at("surrogate_fingerprint").get<std::string>();
  return s;
}

}  // namespace xmark::watermark
