#pragma once

#include <memory>
#include <string>
#include <vector>

#include "xmark/data/dataset.hpp"
#include "xmark/nn/graph.hpp"
#include "xmark/nn/modules.hpp"

namespace xmark::models {

// Feature maps recorded during a forward pass, keyed by layer id.
struct ForwardTaps {
  std::vector<std::pair<std::string, nn::Var>> features;
  nn::Var at(const std::string& name) const;
};

// Multi-label classifier: final-conv features -> channel mask -> global
// average pool -> linear head -> K logits (sigmoid outside). The channel mask
// is all-ones until fine-pruning writes zeros into it.
class Classifier {
 public:
  virtual ~Classifier() = default;

  const std::string& architecture_id() const { return arch_; }
  int num_classes() const { return k_; }
  std::uint64_t init_seed() const { return seed_; }
  int trained_resolution() const { return trained_resolution_; }
  void set_trained_resolution(int r) { trained_resolution_ = r; }

  nn::Var logits(nn::Graph& g, nn::Var x, ForwardTaps* taps = nullptr);

  // final conv feature map (before mask), plus requested taps
  virtual nn::Var features(nn::Graph& g, nn::Var x, ForwardTaps* taps) = 0;
  virtual std::vector<std::string> perceptual_taps() const = 0;
  virtual int final_conv_channels() const = 0;

  void collect_params(std::vector<nn::Parameter*>& out);
  virtual void collect_feature_params(std::vector<nn::Parameter*>& out) = 0;
  virtual void collect_feature_state(nn::StateDict& sd) = 0;
  std::vector<nn::Parameter*> head_params();
  std::vector<nn::Parameter*> conv_params();  // everything except the head
  void collect_state(nn::StateDict& sd);

  Tensor& channel_mask() { return mask_; }
  const Tensor& channel_mask() const { return mask_; }

  // Frozen-model helpers (eval mode, batched internally).
  Tensor predict_proba(const Tensor& images_nchw);
  Tensor final_conv_activations(const Tensor& images_nchw);
  // logits for precomputed GAP features [N, C] (mask applied here)
  Tensor head_logits_from_pooled(const Tensor& pooled_nc);

 protected:
  Classifier(std::string arch, int k, std::uint64_t seed);
  void init_head(int in_channels, Rng& rng);

  std::string arch_;
  int k_;
  std::uint64_t seed_;
  int trained_resolution_ = 0;
  nn::Linear head_;
  Tensor mask_;
};

// Registry ids: toy-cnn, resnet18-like, resnet34-like, vgg16bn-like,
// vgg19bn-like. init is "random" or "pretrained:<checkpoint path>".
std::unique_ptr<Classifier> build_classifier(const std::string& architecture_id, int K,
                                             const std::string& init, std::uint64_t seed);
bool classifier_registered(const std::string& architecture_id);
std::vector<std::string> registered_classifiers();

struct TrainConfig {
  int epochs = 5;
  int batch_size = 32;
  double lr = 1e-3;
  std::string optimizer_id = "adamw";
  int resolution = 64;
  std::int64_t seed = 1;
  double weight_decay = 1e-4;
};

// Mean multi-label BCE per epoch. Deterministic for fixed seed and kernel
// configuration; aborts on non-finite loss.
std::vector<double> train_classifier(Classifier& model, const data::Dataset& ds,
                                     const TrainConfig& cfg);

// [B,1,R,R] batch via resize_with_padding.
Tensor make_batch(const data::Dataset& ds, const std::vector<int>& indices, int resolution);
Tensor labels_batch(const data::Dataset& ds, const std::vector<int>& indices);

}  // namespace xmark::models
