#pragma once

#include <memory>
#include <string>
#include <vector>

#include "xmark/nn/graph.hpp"
#include "xmark/nn/modules.hpp"

namespace xmark::models {

struct GeneratorConfig {
  // stem width plus one entry per encoder stage
  std::vector<int> widths = {12, 24, 48, 72};
  int saliency_hidden = 36;
  std::string fusion = "add";  // "add" or "concat"
  int norm_groups = 4;
  int resolution = 128;  // trained resolution; inputs must be divisible by 2^stages
};

// Residual U-Net with strided-convolution downsampling and a saliency
// conditioning block at the bottleneck. The output head is zero-initialized so
// a fresh generator is the identity map. Output is always
// clip(x + eps*tanh(delta), 0, 1), which enforces the L-inf budget
// structurally.
class Generator {
 public:
  Generator(GeneratorConfig cfg, std::uint64_t seed);

  const GeneratorConfig& config() const { return cfg_; }
  std::uint64_t init_seed() const { return seed_; }
  int stages() const { return static_cast<int>(cfg_.widths.size()) - 1; }
  int downsample_factor() const { return 1 << stages(); }

  // x [N,1,H,W], saliency [N,1,h,w] (resized to the bottleneck internally)
  nn::Var raw_delta(nn::Graph& g, nn::Var x, nn::Var saliency);
  nn::Var forward(nn::Graph& g, nn::Var x, nn::Var saliency, float eps);

  // single-image eval path
  Tensor watermark_image(const Tensor& image_hw, const Tensor& saliency_hw, float eps);

  void collect_params(std::vector<nn::Parameter*>& out);
  void collect_state(nn::StateDict& sd);

 private:
  struct Impl;
  GeneratorConfig cfg_;
  std::uint64_t seed_;
  std::shared_ptr<Impl> impl_;
};

// Plain encoder/decoder U-Net in the classic configuration (double 3x3 convs,
// pooling, mirrored decoder with skip concatenation). Exists as the cost
// baseline the residual generator is compared against.
class ReferenceUnet {
 public:
  explicit ReferenceUnet(int base_width, std::uint64_t seed);
  nn::Var forward(nn::Graph& g, nn::Var x);
  void collect_params(std::vector<nn::Parameter*>& out);

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

struct ModelCost {
  std::int64_t params;
  std::int64_t macs;
};

class Classifier;
ModelCost count_params_and_macs(Generator& model, int resolution);
ModelCost count_params_and_macs(ReferenceUnet& model, int resolution);
ModelCost count_params_and_macs(Classifier& model, int resolution);

// Paper-scale generator profile used for the cost comparison.
GeneratorConfig paper_scale_generator_config();

}  // namespace xmark::models
