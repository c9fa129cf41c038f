#pragma once

#include <json.hpp>

#include <memory>
#include <string>
#include <vector>

#include "xmark/data/dataset.hpp"
#include "xmark/models/classifier.hpp"
#include "xmark/watermark/watermark.hpp"

namespace xmark::verify {

// The owner's only capability: batched image -> per-class probability queries.
class BlackBoxModel {
 public:
  virtual ~BlackBoxModel() = default;
  virtual Tensor query(const Tensor& images_nchw) = 0;  // [N,K] probabilities in (0,1)
  virtual int input_resolution() const = 0;
  virtual int num_classes() const = 0;
};

// In-process adapter over a classifier checkpoint.
std::unique_ptr<BlackBoxModel> make_checkpoint_blackbox(std::shared_ptr<models::Classifier> model);

struct HttpAdapterConfig {
  std::string host = "127.0.0.1";
  int port = 0;
  std::string endpoint = "/predict";
  int batch_size = 16;
  int timeout_s = 30;
  int resolution = 64;
  int num_classes = 6;
};
// POSTs {"height","width","images":[...]} and expects {"probs":[[...], ...]}.
std::unique_ptr<BlackBoxModel> make_http_blackbox(const HttpAdapterConfig& cfg);

struct ThresholdVector {
  std::vector<double> values;             // length K, each in (0,1)
  std::vector<std::string> warnings;      // degenerate classes that fell back to 0.5
};

// Per-class threshold from the observed probabilities maximizing F1; ties go
// to the larger threshold; classes without positives fall back to 0.5.
ThresholdVector optimal_f1_thresholds(const Tensor& probs_nk, const Tensor& labels_nk);
double f1_at_threshold(const Tensor& probs_nk, const Tensor& labels_nk, int k, double threshold);

// Mean over samples and classes of [(prob >= threshold) == label], percent.
double benign_accuracy(BlackBoxModel& model, const data::Dataset& ds, data::Split split,
                       const ThresholdVector& thresholds);

// Percent of watermarked non-target samples whose class-k probability clears
// the threshold.
double watermark_success_rate(BlackBoxModel& model, const watermark::WatermarkApplier& applier,
                              const data::Dataset& ds, const std::vector<int>& non_target_indices,
                              int k, double threshold);

struct VerificationConfig {
  int n = 100;
  double tau = 0.25;
  double alpha = 0.05;
  int target_class = 0;
  std::int64_t seed = 1;
  std::string scenario;  // optional label: malicious / ind-w / ind-m
};

struct VerificationReport {
  int n = 0;
  double tau = 0, alpha = 0;
  std::int64_t seed = 0;
  std::string scenario;
  std::vector<double> p_benign;      // P_b
  std::vector<double> p_watermarked; // P_v
  double delta_p = 0;                // mean(P_v) - mean(P_b)
  double t_stat = 0;
  double p_value = 1;
  bool decision = false;             // reject H0 at alpha
};

// Samples n pool entries without replacement, queries benign and watermarked
// versions in identical order, and assembles the report. Touches nothing but
// the query interface.
VerificationReport verify_ownership(BlackBoxModel& model, const watermark::WatermarkApplier& applier,
                                    const data::Dataset& ds, const std::vector<int>& pool,
                                    const VerificationConfig& cfg);

nlohmann::json report_to_json(const VerificationReport& r);
VerificationReport report_from_json(const nlohmann::json& j);

}  // namespace xmark::verify
