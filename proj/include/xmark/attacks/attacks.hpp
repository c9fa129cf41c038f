#pragma once

#include <string>
#include <vector>

#include "xmark/data/dataset.hpp"
#include "xmark/models/classifier.hpp"
#include "xmark/watermark/watermark.hpp"

namespace xmark::attacks {

struct AttackResult {
  std::string attack_id;
  double parameter = 0;  // epoch index or pruning rate
  double ba = 0;         // percent
  double wsr = 0;        // percent
};

// Shared evaluation wiring: thresholds come from the val split of `dataset`,
// BA from its test split, WSR from watermarked versions of the non-target
// test samples.
struct EvalContext {
  const data::Dataset* dataset = nullptr;
  const watermark::WatermarkApplier* applier = nullptr;
  int target_class = 0;
};

struct FinetuneConfig {
  double subset_fraction = 0.1;  // of benign train samples
  int epochs = 100;
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::int64_t seed = 1;
};

// Fine-tunes only the classifier head on a benign subset; the feature
// extractor runs frozen in eval mode, so every convolutional tensor is
// bit-identical afterwards. Returns one BA/WSR entry per epoch.
std::vector<AttackResult> finetune_attack(models::Classifier& model, const data::Dataset& benign,
                                          const FinetuneConfig& cfg, const EvalContext& ectx);

// Mean-|activation| ranking over the benign subset, ascending.
std::vector<int> prune_ranking(models::Classifier& model, const data::Dataset& ds,
                               const std::vector<int>& benign_subset);

struct PruneConfig {
  double subset_fraction = 0.1;
  std::int64_t seed = 1;
  bool refinetune = false;  // optional prune-then-finetune mode
  FinetuneConfig refinetune_cfg;
};

// Masks the floor(beta*C) lowest-ranked channels of the final conv output
// permanently and evaluates the pruned model.
AttackResult fine_prune(models::Classifier& model, const data::Dataset& benign, double beta,
                        const std::vector<int>& ranking, const PruneConfig& cfg,
                        const EvalContext& ectx);

// Full sweep over beta in {0, step, 2*step, ...} < 1, each on a fresh copy.
std::vector<AttackResult> prune_sweep(models::Classifier& model, const data::Dataset& benign,
                                      double beta_step, const PruneConfig& cfg,
                                      const EvalContext& ectx);

// Trains a fresh backdoored classifier per resolution on the watermarked
// dataset and reports BA/WSR at that resolution.
std::vector<AttackResult> scale_invariance_sweep(const data::Dataset& watermarked,
                                                 const std::vector<int>& resolutions,
                                                 const std::string& architecture_id,
                                                 const models::TrainConfig& base_cfg,
                                                 const EvalContext& ectx);

// Same per architecture at a fixed resolution. Unknown ids fail before any
// training starts.
std::vector<AttackResult> transfer_sweep(const data::Dataset& watermarked,
                                         const std::vector<std::string>& architecture_ids,
                                         const models::TrainConfig& base_cfg,
                                         const EvalContext& ectx);

std::string results_to_csv(const std::vector<AttackResult>& results);

}  // namespace xmark::attacks
