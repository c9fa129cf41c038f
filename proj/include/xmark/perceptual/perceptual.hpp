#pragma once

#include <memory>
#include <string>
#include <vector>

#include "xmark/models/classifier.hpp"
#include "xmark/nn/graph.hpp"

namespace xmark::perceptual {

struct PerceptualMetricConfig {
  // "surrogate" uses the trained surrogate classifier's intermediate features
  // with unit channel weights; "file:<path>" loads a conv feature backbone
  // checkpoint (e.g. converted published weights).
  std::string backbone = "surrogate";
  std::vector<std::string> layer_set;  // empty -> backbone default taps
  bool channel_replication = false;    // replicate grayscale to 3 channels
  // Global calibration applied to the distance. Published LPIPS weights keep
  // budget-limited perturbations in the ~0.02 range; the uncalibrated
  // surrogate-feature distance runs ~40x hotter, which would let the
  // perceptual term swamp the Eq.-3 style weighting. <= 0 picks the backbone
  // default (0.025 for surrogate features, 1.0 for file backbones).
  double scale = 0.0;
};

// Perceptual distance: per-layer channel-unit-normalized feature differences,
// squared, spatially averaged, summed over the layer set. Zero iff all
// selected feature maps coincide; differentiable in both arguments.
class PerceptualMetric {
 public:
  virtual ~PerceptualMetric() = default;
  // a, b are [N,1,H,W] in [0,1] at the backbone's input resolution
  virtual nn::Var distance_var(nn::Graph& g, nn::Var a, nn::Var b) = 0;
  virtual int input_resolution() const = 0;
  double distance(const Tensor& a_hw, const Tensor& b_hw);
};

std::unique_ptr<PerceptualMetric> make_perceptual_metric(
    const PerceptualMetricConfig& cfg, std::shared_ptr<models::Classifier> surrogate);

// Feature-backbone checkpoint: plain conv3x3+relu stack with optional pooling,
// used by the "file:" metric. Written here mainly so tests and converted
// weights share one format.
struct FeatureBackboneLayer {
  int cin = 0, cout = 0;
  bool pool_before = false;
};
void save_feature_backbone(const std::string& path, const std::vector<FeatureBackboneLayer>& layers,
                           const std::vector<int>& tap_indices, const std::vector<Tensor>& weights,
                           const std::vector<Tensor>& biases);

}  // namespace xmark::perceptual
