#include "xmark/verify/verify.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "xmark/core/image.hpp"
#include "xmark/core/rng.hpp"
#include "xmark/verify/stats.hpp"

namespace xmark::verify {

namespace {

class CheckpointBlackBox final : public BlackBoxModel {
 public:
  explicit CheckpointBlackBox(std::shared_ptr<models::Classifier> model) : model_(std::move(model)) {
    XM_CHECK(model_ != nullptr, "checkpoint black box needs a model");
    XM_CHECK(model_->trained_resolution() > 0, "black box model has no trained resolution");
  }
  Tensor query(const Tensor& images_nchw) override { return model_->predict_proba(images_nchw); }
  int input_resolution() const override { return model_->trained_resolution(); }
  int num_classes() const override { return model_->num_classes(); }

 private:
  std::shared_ptr<models::Classifier> model_;
};

Tensor batch_for_model(BlackBoxModel& model, const data::Dataset& ds,
                       const std::vector<int>& indices) {
  return models::make_batch(ds, indices, model.input_resolution());
}

}  // namespace

std::unique_ptr<BlackBoxModel> make_checkpoint_blackbox(std::shared_ptr<models::Classifier> model) {
  return std::make_unique<CheckpointBlackBox>(std::move(model));
}

double f1_at_threshold(const Tensor& probs_nk, const Tensor& labels_nk, int k, double threshold) {
  int n = probs_nk.dim(0), kdim = probs_nk.dim(1);
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (int i = 0; i < n; ++i) {
    bool pred = probs_nk.at(static_cast<std::size_t>(i) * kdim + k) >= threshold;
    bool pos = labels_nk.at(static_cast<std::size_t>(i) * kdim + k) >= 0.5f;
    if (pred && pos) ++tp;
    else if (pred && !pos) ++fp;
    else if (!pred && pos) ++fn;
  }
  double denom = 2.0 * static_cast<double>(tp) + static_cast<double>(fp) + static_cast<double>(fn);
  return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
}

ThresholdVector optimal_f1_thresholds(const Tensor& probs_nk, const Tensor& labels_nk) {
  XM_CHECK(probs_nk.rank() == 2 && probs_nk.same_shape(labels_nk),
           "optimal_f1_thresholds: [N,K] probs and labels must match");
  int n = probs_nk.dim(0), kdim = probs_nk.dim(1);
  XM_CHECK(n >= 1, "optimal_f1_thresholds: empty input");
  ThresholdVector out;
  for (int k = 0; k < kdim; ++k) {
    bool any_pos = false;
    for (int i = 0; i < n; ++i)
      if (labels_nk.at(static_cast<std::size_t>(i) * kdim + k) >= 0.5f) any_pos = true;
    if (!any_pos) {
      out.values.push_back(0.5);
      out.warnings.push_back("class " + std::to_string(k) +
                             " has no positives; threshold defaults to 0.5");
      continue;
    }
    std::vector<double> candidates;
    for (int i = 0; i < n; ++i)
      candidates.push_back(probs_nk.at(static_cast<std::size_t>(i) * kdim + k));
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    double best_t = candidates.front(), best_f1 = -1.0;
    for (double t : candidates) {
      double f1 = f1_at_threshold(probs_nk, labels_nk, k, t);
      if (f1 > best_f1 || (f1 == best_f1 && t > best_t)) {
        best_f1 = f1;
        best_t = t;
      }
    }
    out.values.push_back(best_t);
  }
  return out;
}

double benign_accuracy(BlackBoxModel& model, const data::Dataset& ds, data::Split split,
                       const ThresholdVector& thresholds) {
  std::vector<int> idx = ds.indices(split);
  XM_CHECK(!idx.empty(), "benign_accuracy: empty split");
  int kdim = ds.num_classes();
  XM_CHECK(static_cast<int>(thresholds.values.size()) == kdim,
           "benign_accuracy: threshold count mismatch");
  Tensor probs = model.query(batch_for_model(model, ds, idx));
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (int k = 0; k < kdim; ++k) {
      bool pred = probs.at(i * static_cast<std::size_t>(kdim) + static_cast<std::size_t>(k)) >=
                  thresholds.values[static_cast<std::size_t>(k)];
      bool truth =
          ds.samples[static_cast<std::size_t>(idx[i])].labels[static_cast<std::size_t>(k)] == 1;
      if (pred == truth) ++hits;
    }
  return 100.0 * static_cast<double>(hits) /
         (static_cast<double>(idx.size()) * static_cast<double>(kdim));
}

double watermark_success_rate(BlackBoxModel& model, const watermark::WatermarkApplier& applier,
                              const data::Dataset& ds, const std::vector<int>& non_target_indices,
                              int k, double threshold) {
  XM_CHECK(!non_target_indices.empty(), "watermark_success_rate: empty sample set");
  int res = model.input_resolution();
  Tensor batch({static_cast<int>(non_target_indices.size()), 1, res, res});
  std::size_t plane = static_cast<std::size_t>(res) * res;
  for (std::size_t i = 0; i < non_target_indices.size(); ++i) {
    const data::ImageSample& s = ds.samples[static_cast<std::size_t>(non_target_indices[i])];
    XM_CHECK(s.labels[static_cast<std::size_t>(k)] == 0,
             "watermark_success_rate: sample ", s.id, " is target-class");
    Tensor wm = applier.apply(s.pixels);
    Tensor at_res = img::resize_with_padding(wm, res);
    std::copy(at_res.data(), at_res.data() + plane, batch.data() + i * plane);
  }
  Tensor probs = model.query(batch);
  int kdim = probs.dim(1);
  std::int64_t hit = 0;
  for (std::size_t i = 0; i < non_target_indices.size(); ++i)
    if (probs.at(i * static_cast<std::size_t>(kdim) + static_cast<std::size_t>(k)) >= threshold)
      ++hit;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(non_target_indices.size());
}

VerificationReport verify_ownership(BlackBoxModel& model,
                                    const watermark::WatermarkApplier& applier,
                                    const data::Dataset& ds, const std::vector<int>& pool,
                                    const VerificationConfig& cfg) {
  XM_CHECK(cfg.n >= 2, "verify_ownership: n must be >= 2");
  XM_CHECK(static_cast<int>(pool.size()) >= cfg.n, "verification pool has ", pool.size(),
           " samples, need n = ", cfg.n);
  for (int idx : pool)
    XM_CHECK(ds.samples[static_cast<std::size_t>(idx)].labels[static_cast<std::size_t>(cfg.target_class)] == 0,
             "verification pool must be non-target samples");

  std::vector<int> sampled = pool;
  Rng rng(static_cast<std::uint64_t>(cfg.seed) ^ 0xd07e11ULL);
  rng.shuffle(sampled);
  sampled.resize(static_cast<std::size_t>(cfg.n));

  int res = model.input_resolution();
  std::size_t plane = static_cast<std::size_t>(res) * res;
  Tensor benign({cfg.n, 1, res, res});
  Tensor marked({cfg.n, 1, res, res});
  for (int i = 0; i < cfg.n; ++i) {
    const data::ImageSample& s = ds.samples[static_cast<std::size_t>(sampled[static_cast<std::size_t>(i)])];
    Tensor b = img::resize_with_padding(s.pixels, res);
    Tensor w = img::resize_with_padding(applier.apply(s.pixels), res);
    std::copy(b.data(), b.data() + plane, benign.data() + static_cast<std::size_t>(i) * plane);
    std::copy(w.data(), w.data() + plane, marked.data() + static_cast<std::size_t>(i) * plane);
  }

  Tensor pb = model.query(benign);
  Tensor pv = model.query(marked);
  int kdim = pb.dim(1);

  VerificationReport r;
  r.n = cfg.n;
  r.tau = cfg.tau;
  r.alpha = cfg.alpha;
  r.seed = cfg.seed;
  r.scenario = cfg.scenario;
  for (int i = 0; i < cfg.n; ++i) {
    r.p_benign.push_back(pb.at(static_cast<std::size_t>(i) * kdim + cfg.target_class));
    r.p_watermarked.push_back(pv.at(static_cast<std::size_t>(i) * kdim + cfg.target_class));
  }
  double mb = 0, mv = 0;
  for (int i = 0; i < cfg.n; ++i) {
    mb += r.p_benign[static_cast<std::size_t>(i)];
    mv += r.p_watermarked[static_cast<std::size_t>(i)];
  }
  r.delta_p = (mv - mb) / cfg.n;
  stats::TTest tt = stats::paired_t_test(r.p_benign, r.p_watermarked, cfg.tau);
  r.t_stat = tt.t_stat;
  r.p_value = tt.p_value;
  r.decision = r.p_value < cfg.alpha;
  return r;
}

namespace {
double json_safe(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? 1.7976931348623157e308 : -1.7976931348623157e308;
}
}  // namespace

nlohmann::json report_to_json(const VerificationReport& r) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["scenario"] = r.scenario;
  j["n"] = r.n;
  j["tau"] = r.tau;
  j["alpha"] = r.alpha;
  j["seed"] = r.seed;
  j["delta_p"] = r.delta_p;
  j["t_stat"] = json_safe(r.t_stat);
  j["p_value"] = r.p_value;
  j["decision"] = r.decision;
  j["p_benign"] = r.p_benign;
  j["p_watermarked"] = r.p_watermarked;
  return j;
}

VerificationReport report_from_json(const nlohmann::json& j) {
  XM_CHECK(j.value("schema_version", 0) == 1, "unsupported verification report schema");
  VerificationReport r;
  r.scenario = j.value("scenario", "");
  r.n = j.at("n").get<int>();
  r.tau = j.at("tau").get<double>();
  r.alpha = j.at("alpha").get<double>();
  r.seed = j.at("seed").get<std::int64_t>();
  r.delta_p = j.at("delta_p").get<double>();
  r.t_stat = j.at("t_stat").get<double>();
  r.p_value = j.at("p_value").get<double>();
  r.decision = j.at("decision").get<bool>();
  r.p_benign = j.at("p_benign").get<std::vector<double>>();
  r.p_watermarked = j.at("p_watermarked").get<std::vector<double>>();
  return r;
}

}  // namespace xmark::verify
