#include "xmark/attacks/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "xmark/core/image.hpp"
#include "xmark/models/checkpoint.hpp"
#include "xmark/nn/optim.hpp"
#include "xmark/verify/verify.hpp"

namespace xmark::attacks {

using nn::Graph;
using nn::Var;

namespace {

// GAP features of the final conv layer (pre-mask) for a set of prepared
// images; repeated head-only evaluations then cost a dot product each.
Tensor pooled_features(models::Classifier& model, const Tensor& images_nchw) {
  Tensor acts = model.final_conv_activations(images_nchw);
  int n = acts.dim(0), c = acts.dim(1);
  std::size_t plane = static_cast<std::size_t>(acts.dim(2)) * acts.dim(3);
  Tensor pooled({n, c});
  for (int i = 0; i < n * c; ++i) {
    const float* p = acts.data() + static_cast<std::size_t>(i) * plane;
    double s = 0;
    for (std::size_t j = 0; j < plane; ++j) s += p[j];
    pooled.at(static_cast<std::size_t>(i)) = static_cast<float>(s / static_cast<double>(plane));
  }
  return pooled;
}

Tensor watermarked_batch(const watermark::WatermarkApplier& applier, const data::Dataset& ds,
                         const std::vector<int>& indices, int resolution) {
  Tensor batch({static_cast<int>(indices.size()), 1, resolution, resolution});
  std::size_t plane = static_cast<std::size_t>(resolution) * resolution;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    Tensor wm = applier.apply(ds.samples[static_cast<std::size_t>(indices[i])].pixels);
    Tensor at_res = img::resize_with_padding(wm, resolution);
    std::copy(at_res.data(), at_res.data() + plane, batch.data() + i * plane);
  }
  return batch;
}

Tensor probs_from_pooled(models::Classifier& model, const Tensor& pooled) {
  Tensor z = model.head_logits_from_pooled(pooled);
  Tensor p(z.dims());
  for (std::int64_t i = 0; i < z.numel(); ++i)
    p.at(static_cast<std::size_t>(i)) =
        std::min(0.99999994f, std::max(1e-12f, 1.0f / (1.0f + std::exp(-z.at(static_cast<std::size_t>(i))))));
  return p;
}

struct CachedEval {
  Tensor val_pooled, val_labels;
  Tensor test_pooled, test_labels;
  Tensor wsr_pooled;
  int target_class = 0;

  CachedEval(models::Classifier& model, const data::Dataset& ds,
             const watermark::WatermarkApplier& applier, int k) {
    target_class = k;
    int res = model.trained_resolution();
    std::vector<int> val_idx = ds.indices(data::Split::val);
    std::vector<int> test_idx = ds.indices(data::Split::test);
    XM_CHECK(!val_idx.empty() && !test_idx.empty(), "attack eval needs val and test splits");
    val_pooled = pooled_features(model, models::make_batch(ds, val_idx, res));
    val_labels = models::labels_batch(ds, val_idx);
    test_pooled = pooled_features(model, models::make_batch(ds, test_idx, res));
    test_labels = models::labels_batch(ds, test_idx);
    std::vector<int> wsr_idx = ds.class_indices(data::Split::test, k, false);
    XM_CHECK(!wsr_idx.empty(), "attack eval needs non-target test samples");
    wsr_pooled = pooled_features(model, watermarked_batch(applier, ds, wsr_idx, res));
  }

  // thresholds recomputed from the current head/mask state
  std::pair<double, double> ba_wsr(models::Classifier& model) const {
    Tensor val_probs = probs_from_pooled(model, val_pooled);
    verify::ThresholdVector thr = verify::optimal_f1_thresholds(val_probs, val_labels);
    Tensor test_probs = probs_from_pooled(model, test_pooled);
    int n = test_probs.dim(0), kdim = test_probs.dim(1);
    std::int64_t hits = 0;
    for (int i = 0; i < n; ++i)
      for (int k2 = 0; k2 < kdim; ++k2) {
        bool pred = test_probs.at(static_cast<std::size_t>(i) * kdim + k2) >=
                    thr.values[static_cast<std::size_t>(k2)];
        bool truth = test_labels.at(static_cast<std::size_t>(i) * kdim + k2) >= 0.5f;
        if (pred == truth) ++hits;
      }
    double ba = 100.0 * static_cast<double>(hits) / (static_cast<double>(n) * kdim);

    Tensor wsr_probs = probs_from_pooled(model, wsr_pooled);
    int wn = wsr_probs.dim(0);
    std::int64_t hit = 0;
    for (int i = 0; i < wn; ++i)
      if (wsr_probs.at(static_cast<std::size_t>(i) * kdim + target_class) >=
          thr.values[static_cast<std::size_t>(target_class)])
        ++hit;
    double wsr = 100.0 * static_cast<double>(hit) / static_cast<double>(wn);
    return {ba, wsr};
  }
};

std::vector<int> benign_subset_indices(const data::Dataset& ds, double fraction,
                                       std::uint64_t seed) {
  std::vector<int> train = ds.indices(data::Split::train);
  XM_CHECK(!train.empty(), "attack: empty train split");
  Rng rng(seed ^ 0xa77ac4ULL);
  rng.shuffle(train);
  std::size_t count = static_cast<std::size_t>(
      std::max<std::int64_t>(1, std::llround(fraction * static_cast<double>(train.size()))));
  train.resize(std::min(count, train.size()));
  std::sort(train.begin(), train.end());
  return train;
}

}  // namespace

std::vector<AttackResult> finetune_attack(models::Classifier& model, const data::Dataset& benign,
                                          const FinetuneConfig& cfg, const EvalContext& ectx) {
  XM_CHECK(ectx.dataset && ectx.applier, "finetune_attack: eval context not wired");
  XM_CHECK(cfg.epochs >= 0, "finetune_attack: negative epochs");
  std::vector<AttackResult> series;
  if (cfg.epochs == 0) return series;

  std::vector<int> subset = benign_subset_indices(benign, cfg.subset_fraction, static_cast<std::uint64_t>(cfg.seed));
  int res = model.trained_resolution();
  Tensor sub_pooled = pooled_features(model, models::make_batch(benign, subset, res));
  Tensor sub_labels = models::labels_batch(benign, subset);
  CachedEval eval(model, *ectx.dataset, *ectx.applier, ectx.target_class);

  std::vector<nn::Parameter*> head = model.head_params();
  nn::AdamW::Options opt;
  opt.lr = static_cast<float>(cfg.lr);
  opt.weight_decay = static_cast<float>(cfg.weight_decay);
  nn::AdamW optim(head, opt);

  // the mask is fixed during fine-tuning; premultiply the cached features
  Tensor masked = sub_pooled;
  int c = sub_pooled.dim(1);
  for (int i = 0; i < sub_pooled.dim(0); ++i)
    for (int ch = 0; ch < c; ++ch)
      masked.at(static_cast<std::size_t>(i) * c + ch) *= model.channel_mask().at(static_cast<std::size_t>(ch));

  Rng rng(static_cast<std::uint64_t>(cfg.seed));
  int n = masked.dim(0);
  int kdim = sub_labels.dim(1);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng erng = rng.fork(static_cast<std::uint64_t>(epoch));
    erng.shuffle(order);
    for (int b0 = 0; b0 < n; b0 += cfg.batch_size) {
      int bs = std::min(cfg.batch_size, n - b0);
      Tensor bx({bs, c}), by({bs, kdim});
      for (int i = 0; i < bs; ++i) {
        int src = order[static_cast<std::size_t>(b0 + i)];
        std::copy(masked.data() + static_cast<std::size_t>(src) * c,
                  masked.data() + static_cast<std::size_t>(src + 1) * c,
                  bx.data() + static_cast<std::size_t>(i) * c);
        std::copy(sub_labels.data() + static_cast<std::size_t>(src) * kdim,
                  sub_labels.data() + static_cast<std::size_t>(src + 1) * kdim,
                  by.data() + static_cast<std::size_t>(i) * kdim);
      }
      Graph g(true);
      Var z = g.linear(g.input(std::move(bx), false), g.param(*head[0]), g.param(*head[1]));
      Var loss = g.bce_with_logits(z, by);
      optim.zero_grad();
      g.backward(loss);
      optim.step();
    }
    auto [ba, wsr] = eval.ba_wsr(model);
    series.push_back({"finetune", static_cast<double>(epoch + 1), ba, wsr});
  }
  return series;
}

std::vector<int> prune_ranking(models::Classifier& model, const data::Dataset& ds,
                               const std::vector<int>& benign_subset) {
  XM_CHECK(!benign_subset.empty(), "prune_ranking: empty benign subset");
  int res = model.trained_resolution();
  Tensor acts = model.final_conv_activations(models::make_batch(ds, benign_subset, res));
  int n = acts.dim(0), c = acts.dim(1);
  std::size_t plane = static_cast<std::size_t>(acts.dim(2)) * acts.dim(3);
  std::vector<double> mean_abs(static_cast<std::size_t>(c), 0.0);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const float* p = acts.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
      double s = 0;
      for (std::size_t j = 0; j < plane; ++j) s += std::fabs(p[j]);
      mean_abs[static_cast<std::size_t>(ch)] += s / static_cast<double>(plane);
    }
  std::vector<int> order(static_cast<std::size_t>(c));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return mean_abs[static_cast<std::size_t>(a)] < mean_abs[static_cast<std::size_t>(b)];
  });
  return order;
}

AttackResult fine_prune(models::Classifier& model, const data::Dataset& benign, double beta,
                        const std::vector<int>& ranking, const PruneConfig& cfg,
                        const EvalContext& ectx) {
  XM_CHECK(beta >= 0.0 && beta < 1.0, "fine_prune: beta must be in [0,1)");
  XM_CHECK(ectx.dataset && ectx.applier, "fine_prune: eval context not wired");
  int c = model.final_conv_channels();
  XM_CHECK(static_cast<int>(ranking.size()) == c, "fine_prune: ranking size mismatch");
  int masked = static_cast<int>(std::floor(beta * static_cast<double>(c)));
  for (int i = 0; i < masked; ++i)
    model.channel_mask().at(static_cast<std::size_t>(ranking[static_cast<std::size_t>(i)])) = 0.0f;

  if (cfg.refinetune && cfg.refinetune_cfg.epochs > 0)
    finetune_attack(model, benign, cfg.refinetune_cfg, ectx);

  CachedEval eval(model, *ectx.dataset, *ectx.applier, ectx.target_class);
  auto [ba, wsr] = eval.ba_wsr(model);
  return {"prune", beta, ba, wsr};
}

std::vector<AttackResult> prune_sweep(models::Classifier& model, const data::Dataset& benign,
                                      double beta_step, const PruneConfig& cfg,
                                      const EvalContext& ectx) {
  XM_CHECK(beta_step > 0.0 && beta_step < 1.0, "prune_sweep: bad step");
  std::vector<int> subset =
      benign_subset_indices(benign, cfg.subset_fraction, static_cast<std::uint64_t>(cfg.seed));
  std::vector<int> ranking = prune_ranking(model, benign, subset);
  // one shared feature cache: masking commutes with pooling, so per-beta
  // evaluation only needs the head
  CachedEval eval(model, *ectx.dataset, *ectx.applier, ectx.target_class);
  std::vector<AttackResult> results;
  for (double beta = 0.0; beta < 1.0 - 1e-9; beta += beta_step) {
    auto copy = models::clone_classifier(model);
    int c = copy->final_conv_channels();
    int masked = static_cast<int>(std::floor(beta * static_cast<double>(c)));
    for (int i = 0; i < masked; ++i)
      copy->channel_mask().at(static_cast<std::size_t>(ranking[static_cast<std::size_t>(i)])) = 0.0f;
    auto [ba, wsr] = eval.ba_wsr(*copy);
    results.push_back({"prune", beta, ba, wsr});
  }
  return results;
}

namespace {

AttackResult train_and_eval(const data::Dataset& watermarked, const std::string& arch,
                            const models::TrainConfig& cfg, const EvalContext& ectx,
                            const std::string& attack_id, double parameter) {
  auto model = models::build_classifier(arch, watermarked.num_classes(), "random",
                                        static_cast<std::uint64_t>(cfg.seed));
  models::train_classifier(*model, watermarked, cfg);
  std::shared_ptr<models::Classifier> shared = std::move(model);
  auto bb = verify::make_checkpoint_blackbox(shared);

  std::vector<int> val_idx = watermarked.indices(data::Split::val);
  Tensor val_probs = bb->query(models::make_batch(watermarked, val_idx, cfg.resolution));
  verify::ThresholdVector thr =
      verify::optimal_f1_thresholds(val_probs, models::labels_batch(watermarked, val_idx));
  double ba = verify::benign_accuracy(*bb, watermarked, data::Split::test, thr);
  std::vector<int> wsr_idx =
      watermarked.class_indices(data::Split::test, ectx.target_class, false);
  double wsr = verify::watermark_success_rate(*bb, *ectx.applier, watermarked, wsr_idx,
                                              ectx.target_class,
                                              thr.values[static_cast<std::size_t>(ectx.target_class)]);
  return {attack_id, parameter, ba, wsr};
}

}  // namespace

std::vector<AttackResult> scale_invariance_sweep(const data::Dataset& watermarked,
                                                 const std::vector<int>& resolutions,
                                                 const std::string& architecture_id,
                                                 const models::TrainConfig& base_cfg,
                                                 const EvalContext& ectx) {
  for (int r : resolutions)
    XM_CHECK(r >= 32 && r % 32 == 0, "scale sweep: resolution ", r,
             " incompatible with the classifier family (need a multiple of 32, >= 32)");
  std::vector<AttackResult> results;
  for (int r : resolutions) {
    models::TrainConfig cfg = base_cfg;
    cfg.resolution = r;
    results.push_back(
        train_and_eval(watermarked, architecture_id, cfg, ectx, "scale", static_cast<double>(r)));
  }
  return results;
}

std::vector<AttackResult> transfer_sweep(const data::Dataset& watermarked,
                                         const std::vector<std::string>& architecture_ids,
                                         const models::TrainConfig& base_cfg,
                                         const EvalContext& ectx) {
  XM_CHECK(!architecture_ids.empty(), "transfer sweep: no architectures");
  for (const std::string& id : architecture_ids)
    XM_CHECK(models::classifier_registered(id), "transfer sweep: unknown architecture '", id, "'");
  std::vector<AttackResult> results;
  double pos = 0;
  for (const std::string& id : architecture_ids)
    results.push_back(train_and_eval(watermarked, id, base_cfg, ectx, "transfer:" + id, pos++));
  return results;
}

std::string results_to_csv(const std::vector<AttackResult>& results) {
  std::ostringstream out;
  out << "attack_id,parameter,BA,WSR\n";
  for (const AttackResult& r : results)
    out << r.attack_id << ',' << r.parameter << ',' << r.ba << ',' << r.wsr << '\n';
  return out.str();
}

}  // namespace xmark::attacks
