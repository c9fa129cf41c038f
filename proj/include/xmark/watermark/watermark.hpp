#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "xmark/data/dataset.hpp"
#include "xmark/models/classifier.hpp"
#include "xmark/models/generator.hpp"
#include "xmark/perceptual/perceptual.hpp"

namespace xmark::watermark {

struct WatermarkConfig {
  double eps = 16.0 / 255.0;
  double gamma = 0.1;   // watermarking rate over target-class train samples
  int target_class = 0;
  double lambda_t = 1.0;
  double lambda_nt = 1.0;
  double lambda_lpips = 10.0;
  double lambda_lap = 3.0;
  int pyramid_levels = 3;
  double tau = 0.25;    // verification margin
  std::int64_t seed = 1;

  void validate() const;
};

// Per-sample EigenCAM maps from the frozen surrogate, computed once and
// cached (write-once, then read-only).
class SaliencyProvider {
 public:
  SaliencyProvider(std::shared_ptr<models::Classifier> surrogate, int resolution);
  const Tensor& for_sample(const data::ImageSample& sample);
  std::shared_ptr<models::Classifier> surrogate() const { return surrogate_; }
  int resolution() const { return resolution_; }
  void save_cache(const std::string& dir) const;

 private:
  std::shared_ptr<models::Classifier> surrogate_;
  int resolution_;
  std::map<std::string, Tensor> cache_;
};

// Generator + saliency source + budget: everything needed to watermark one
// image anywhere in the pipeline (training-time embedding and verification
// queries use this same path).
struct WatermarkApplier {
  std::shared_ptr<models::Generator> generator;
  std::shared_ptr<SaliencyProvider> saliency;
  double eps = 16.0 / 255.0;

  Tensor apply(const Tensor& image_hw) const;
};

struct GenTrainConfig {
  int epoch_cap = 60;
  int batch_size = 8;
  double lr = 2e-4;
  std::int64_t seed = 1;
  double subset_fraction = 0.1;         // of target-class train samples
  double early_stop_flip_rate = 0.95;   // objective II satisfaction on the probe
  double early_stop_lpips_ceiling = 0.05;
  int probe_size = 64;
  double weight_decay = 1e-4;
};

struct GenEpochStats {
  double total = 0, loss_t = 0, loss_nt = 0, loss_lpips = 0, loss_lap = 0;
  double probe_flip_rate = 0;
};

struct GenTrainResult {
  std::vector<GenEpochStats> history;
  int epochs_run = 0;
  bool early_stopped = false;
  std::vector<int> target_subset;      // dataset indices used for training
  std::vector<int> non_target_subset;
};

// Trains theta against the frozen surrogate with the four-component
// objective; balanced target/non-target batches; only generator parameters
// move.
GenTrainResult train_generator(models::Generator& gen, SaliencyProvider& saliency,
                               const data::Dataset& ds, const WatermarkConfig& wcfg,
                               const GenTrainConfig& tcfg, perceptual::PerceptualMetric& metric);

struct WatermarkedDataset {
  data::Dataset dataset;
  std::set<std::string> watermarked_ids;
  std::uint64_t generator_fingerprint = 0;
  std::uint64_t surrogate_fingerprint = 0;
  WatermarkConfig config;
};

// Replaces round(gamma * N_t) target-class train samples with their
// watermarked versions; labels untouched; everything else untouched.
WatermarkedDataset watermark_dataset(const data::Dataset& ds, const WatermarkApplier& applier,
                                     const WatermarkConfig& config);

// manifest + PNGs + sidecar metadata (versioned JSON schema)
void export_watermarked_dataset(const WatermarkedDataset& wd, const std::string& out_dir);

struct Sidecar {
  int schema_version = 0;
  WatermarkConfig config;
  std::set<std::string> watermarked_ids;
  std::string generator_fingerprint;
  std::string surrogate_fingerprint;
};
Sidecar load_sidecar(const std::string& path);

}  // namespace xmark::watermark
