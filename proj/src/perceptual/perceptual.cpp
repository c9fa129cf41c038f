#include "xmark/perceptual/perceptual.hpp"

#include "xmark/models/checkpoint.hpp"

namespace xmark::perceptual {

using nn::Graph;
using nn::Var;

namespace {
// keeps locations with near-zero feature norms from dominating the distance
constexpr float kNormEps = 1e-3f;

// sum over layers of C_l * mean((na - nb)^2) == spatial mean of the squared
// channel-normalized difference
Var layer_term(Graph& g, Var fa, Var fb) {
  Var na = g.channel_l2_normalize(fa, kNormEps);
  Var nb = g.channel_l2_normalize(fb, kNormEps);
  Var diff = g.sub(na, nb);
  int c = g.value(fa).dim(1);
  return g.scale(g.mean_all(g.square(diff)), static_cast<float>(c));
}
}  // namespace

double PerceptualMetric::distance(const Tensor& a_hw, const Tensor& b_hw) {
  XM_CHECK(a_hw.same_shape(b_hw), "perceptual distance: shape mismatch");
  XM_CHECK(a_hw.rank() == 2, "perceptual distance: 2-D images expected");
  Graph g(false);
  Var a = g.input(a_hw.reshaped({1, 1, a_hw.dim(0), a_hw.dim(1)}), false);
  Var b = g.input(b_hw.reshaped({1, 1, b_hw.dim(0), b_hw.dim(1)}), false);
  return g.value(distance_var(g, a, b)).at(0);
}

namespace {

class SurrogateLpips final : public PerceptualMetric {
 public:
  SurrogateLpips(std::shared_ptr<models::Classifier> surrogate, std::vector<std::string> taps,
                 double scale)
      : surrogate_(std::move(surrogate)), taps_(std::move(taps)),
        scale_(static_cast<float>(scale)) {
    XM_CHECK(surrogate_ != nullptr, "surrogate perceptual metric needs a classifier");
    XM_CHECK(scale_ > 0.0f, "perceptual metric scale must be positive");
    if (taps_.empty()) taps_ = surrogate_->perceptual_taps();
    XM_CHECK(!taps_.empty(), "perceptual metric layer set is empty");
  }

  Var distance_var(Graph& g, Var a, Var b) override {
    XM_CHECK(g.value(a).same_shape(g.value(b)), "perceptual distance: shape mismatch");
    models::ForwardTaps ta, tb;
    surrogate_->features(g, a, &ta);
    surrogate_->features(g, b, &tb);
    std::vector<Var> terms;
    std::vector<float> weights;
    for (const std::string& name : taps_) {
      terms.push_back(layer_term(g, ta.at(name), tb.at(name)));
      weights.push_back(scale_);
    }
    return g.weighted_sum_scalars(terms, weights);
  }

  int input_resolution() const override { return surrogate_->trained_resolution(); }

 private:
  std::shared_ptr<models::Classifier> surrogate_;
  std::vector<std::string> taps_;
  float scale_;
};

class FileBackboneLpips final : public PerceptualMetric {
 public:
  FileBackboneLpips(const std::string& path, std::vector<std::string> layer_set, bool replicate,
                    double scale)
      : replicate_(replicate), scale_(static_cast<float>(scale)) {
    XM_CHECK(scale_ > 0.0f, "perceptual metric scale must be positive");
    models::Checkpoint ck = models::read_checkpoint(path);
    XM_CHECK(ck.kind == "feature_backbone", path, " is not a feature backbone checkpoint");
    resolution_ = ck.meta.value("resolution", 0);
    for (const auto& jl : ck.meta.at("layers")) {
      FeatureBackboneLayer l;
      l.cin = jl.at("cin").get<int>();
      l.cout = jl.at("cout").get<int>();
      l.pool_before = jl.at("pool_before").get<bool>();
      layers_.push_back(l);
    }
    for (int t : ck.meta.at("taps").get<std::vector<int>>()) taps_.push_back(t);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      std::string base = "layer" + std::to_string(i);
      weights_.push_back(ck.tensors.at(base + ".w"));
      biases_.push_back(ck.tensors.at(base + ".b"));
    }
    if (!layer_set.empty()) {
      // layer ids are "convN"
      taps_.clear();
      for (const std::string& name : layer_set) {
        XM_CHECK(name.rfind("conv", 0) == 0, "file backbone layer ids look like convN, got ", name);
        taps_.push_back(std::stoi(name.substr(4)));
      }
    }
    XM_CHECK(!taps_.empty(), "file backbone has no taps selected");
    for (int t : taps_)
      XM_CHECK(t >= 0 && t < static_cast<int>(layers_.size()), "tap index out of range: ", t);
  }

  Var distance_var(Graph& g, Var a, Var b) override {
    XM_CHECK(g.value(a).same_shape(g.value(b)), "perceptual distance: shape mismatch");
    std::vector<Var> fa = run(g, a), fb = run(g, b);
    std::vector<Var> terms;
    std::vector<float> weights;
    for (int t : taps_) {
      terms.push_back(layer_term(g, fa[static_cast<std::size_t>(t)], fb[static_cast<std::size_t>(t)]));
      weights.push_back(scale_);
    }
    return g.weighted_sum_scalars(terms, weights);
  }

  int input_resolution() const override { return resolution_; }

 private:
  std::vector<Var> run(Graph& g, Var x) {
    Var v = x;
    if (replicate_) v = g.concat_channels(g.concat_channels(x, x), x);
    std::vector<Var> feats;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i].pool_before) v = g.maxpool2(v);
      Var w = g.constant(weights_[i]);
      Var bias = g.constant(biases_[i]);
      v = g.relu(g.conv2d(v, w, bias, 1, 1));
      feats.push_back(v);
    }
    return feats;
  }

  bool replicate_;
  float scale_;
  int resolution_ = 0;
  std::vector<FeatureBackboneLayer> layers_;
  std::vector<int> taps_;
  std::vector<Tensor> weights_, biases_;
};

}  // namespace

std::unique_ptr<PerceptualMetric> make_perceptual_metric(
    const PerceptualMetricConfig& cfg, std::shared_ptr<models::Classifier> surrogate) {
  if (cfg.backbone == "surrogate") {
    double scale = cfg.scale > 0.0 ? cfg.scale : 0.025;
    return std::make_unique<SurrogateLpips>(std::move(surrogate), cfg.layer_set, scale);
  }
  if (cfg.backbone.rfind("file:", 0) == 0) {
    double scale = cfg.scale > 0.0 ? cfg.scale : 1.0;
    return std::make_unique<FileBackboneLpips>(cfg.backbone.substr(5), cfg.layer_set,
                                               cfg.channel_replication, scale);
  }
  fail("unknown perceptual backbone '", cfg.backbone, "' (expected surrogate or file:<path>)");
}

void save_feature_backbone(const std::string& path, const std::vector<FeatureBackboneLayer>& layers,
                           const std::vector<int>& tap_indices, const std::vector<Tensor>& weights,
                           const std::vector<Tensor>& biases) {
  XM_CHECK(layers.size() == weights.size() && layers.size() == biases.size(),
           "save_feature_backbone: layer/tensor count mismatch");
  nlohmann::json meta;
  meta["layers"] = nlohmann::json::array();
  for (const FeatureBackboneLayer& l : layers)
    meta["layers"].push_back({{"cin", l.cin}, {"cout", l.cout}, {"pool_before", l.pool_before}});
  meta["taps"] = tap_indices;
  nn::StateDict sd;
  std::vector<Tensor> copies_w = weights, copies_b = biases;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    std::string base = "layer" + std::to_string(i);
    sd.add(base + ".w", &copies_w[i]);
    sd.add(base + ".b", &copies_b[i]);
  }
  models::save_checkpoint(path, "feature_backbone", meta, sd);
}

}  // namespace xmark::perceptual
