#include "xmark/models/classifier.hpp"

#include <cmath>

#include "xmark/core/image.hpp"
#include "xmark/nn/optim.hpp"

namespace xmark::models {

using nn::Graph;
using nn::Var;

nn::Var ForwardTaps::at(const std::string& name) const {
  for (const auto& [n, v] : features)
    if (n == name) return v;
  fail("no feature tap named '", name, "'");
}

Classifier::Classifier(std::string arch, int k, std::uint64_t seed)
    : arch_(std::move(arch)), k_(k), seed_(seed) {
  XM_CHECK(k >= 1, "classifier needs at least one class");
}

void Classifier::init_head(int in_channels, Rng& rng) {
  head_ = nn::Linear(arch_ + ".head", in_channels, k_, rng);
  mask_ = Tensor::full({in_channels}, 1.0f);
}

Var Classifier::logits(Graph& g, Var x, ForwardTaps* taps) {
  Var f = features(g, x, taps);
  Var masked = g.broadcast_channel_mul(f, mask_);
  return head_.forward(g, g.global_avg_pool(masked));
}

void Classifier::collect_params(std::vector<nn::Parameter*>& out) {
  collect_feature_params(out);
  head_.params(out);
}

std::vector<nn::Parameter*> Classifier::head_params() {
  std::vector<nn::Parameter*> out;
  head_.params(out);
  return out;
}

std::vector<nn::Parameter*> Classifier::conv_params() {
  std::vector<nn::Parameter*> out;
  collect_feature_params(out);
  return out;
}

void Classifier::collect_state(nn::StateDict& sd) {
  collect_feature_state(sd);
  head_.state(sd);
  sd.add(arch_ + ".channel_mask", &mask_);
}

namespace {
constexpr int kEvalBatch = 32;
}

Tensor Classifier::predict_proba(const Tensor& images_nchw) {
  XM_CHECK(images_nchw.rank() == 4 && images_nchw.dim(1) == 1,
           "predict_proba: [N,1,H,W] input expected");
  if (trained_resolution_ > 0)
    XM_CHECK(images_nchw.dim(2) == trained_resolution_ && images_nchw.dim(3) == trained_resolution_,
             "predict_proba: input resolution ", images_nchw.dim(2), "x", images_nchw.dim(3),
             " does not match trained resolution ", trained_resolution_);
  int n = images_nchw.dim(0), h = images_nchw.dim(2), w = images_nchw.dim(3);
  Tensor out({n, k_});
  std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int b0 = 0; b0 < n; b0 += kEvalBatch) {
    int bs = std::min(kEvalBatch, n - b0);
    Tensor batch({bs, 1, h, w});
    std::copy(images_nchw.data() + static_cast<std::size_t>(b0) * plane,
              images_nchw.data() + static_cast<std::size_t>(b0 + bs) * plane, batch.data());
    Graph g(false);
    Var p = g.sigmoid(logits(g, g.input(std::move(batch), false), nullptr));
    const Tensor& pv = g.value(p);
    // keep the open interval (0,1) under float rounding
    for (std::size_t i = 0; i < static_cast<std::size_t>(bs) * k_; ++i)
      out.at(static_cast<std::size_t>(b0) * k_ + i) =
          std::min(0.99999994f, std::max(1e-12f, pv.at(i)));
  }
  return out;
}

Tensor Classifier::final_conv_activations(const Tensor& images_nchw) {
  XM_CHECK(images_nchw.rank() == 4 && images_nchw.dim(1) == 1,
           "final_conv_activations: [N,1,H,W] input expected");
  int n = images_nchw.dim(0), h = images_nchw.dim(2), w = images_nchw.dim(3);
  std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out;
  for (int b0 = 0; b0 < n; b0 += kEvalBatch) {
    int bs = std::min(kEvalBatch, n - b0);
    Tensor batch({bs, 1, h, w});
    std::copy(images_nchw.data() + static_cast<std::size_t>(b0) * plane,
              images_nchw.data() + static_cast<std::size_t>(b0 + bs) * plane, batch.data());
    Graph g(false);
    Var f = features(g, g.input(std::move(batch), false), nullptr);
    const Tensor& fv = g.value(f);
    if (out.numel() == 0) out = Tensor({n, fv.dim(1), fv.dim(2), fv.dim(3)});
    std::copy(fv.data(), fv.data() + fv.numel(),
              out.data() + static_cast<std::size_t>(b0) * fv.dim(1) * fv.dim(2) * fv.dim(3));
  }
  return out;
}

Tensor Classifier::head_logits_from_pooled(const Tensor& pooled_nc) {
  XM_CHECK(pooled_nc.rank() == 2 && pooled_nc.dim(1) == mask_.numel(),
           "head_logits_from_pooled: [N,C] with C matching the final conv expected");
  Tensor masked = pooled_nc;
  int n = pooled_nc.dim(0), c = pooled_nc.dim(1);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      masked.at(static_cast<std::size_t>(i) * c + ch) *= mask_.at(static_cast<std::size_t>(ch));
  Graph g(false);
  Var z = head_.forward(g, g.input(std::move(masked), false));
  return g.value(z);
}

// ---- architectures ----

namespace {

struct ConvBnRelu {
  nn::Conv2d conv;
  nn::BatchNorm2d bn;

  ConvBnRelu() = default;
  ConvBnRelu(const std::string& name, int cin, int cout, int stride, Rng& rng)
      : conv(name + ".conv", cin, cout, 3, stride, 1, false, rng), bn(name + ".bn", cout) {}
  Var forward(Graph& g, Var x) { return g.relu(bn.forward(g, conv.forward(g, x))); }
  void params(std::vector<nn::Parameter*>& out) {
    conv.params(out);
    bn.params(out);
  }
  void state(nn::StateDict& sd) {
    conv.state(sd);
    bn.state(sd);
  }
};

class ToyCnn final : public Classifier {
 public:
  ToyCnn(int k, std::uint64_t seed, int width = 16) : Classifier("toy-cnn", k, seed) {
    Rng rng(seed);
    c1_ = ConvBnRelu("toy-cnn.c1", 1, width, 1, rng);
    c2_ = ConvBnRelu("toy-cnn.c2", width, width, 1, rng);
    c3_ = ConvBnRelu("toy-cnn.c3", width, 2 * width, 1, rng);
    c4_ = ConvBnRelu("toy-cnn.c4", 2 * width, 4 * width, 1, rng);
    c5_ = ConvBnRelu("toy-cnn.c5", 4 * width, 4 * width, 1, rng);
    channels_ = 4 * width;
    init_head(channels_, rng);
  }

  Var features(Graph& g, Var x, ForwardTaps* taps) override {
    Var v = c1_.forward(g, x);
    if (taps) taps->features.emplace_back("conv1", v);
    v = c2_.forward(g, v);
    if (taps) taps->features.emplace_back("conv2", v);
    v = g.maxpool2(v);
    v = c3_.forward(g, v);
    if (taps) taps->features.emplace_back("conv3", v);
    v = g.maxpool2(v);
    v = c4_.forward(g, v);
    if (taps) taps->features.emplace_back("conv4", v);
    v = g.maxpool2(v);
    v = c5_.forward(g, v);
    if (taps) taps->features.emplace_back("conv5", v);
    return v;
  }

  std::vector<std::string> perceptual_taps() const override {
    return {"conv2", "conv3", "conv4", "conv5"};
  }
  int final_conv_channels() const override { return channels_; }

  void collect_feature_params(std::vector<nn::Parameter*>& out) override {
    c1_.params(out);
    c2_.params(out);
    c3_.params(out);
    c4_.params(out);
    c5_.params(out);
  }
  void collect_feature_state(nn::StateDict& sd) override {
    c1_.state(sd);
    c2_.state(sd);
    c3_.state(sd);
    c4_.state(sd);
    c5_.state(sd);
  }

 private:
  ConvBnRelu c1_, c2_, c3_, c4_, c5_;
  int channels_ = 0;
};

struct BasicBlock {
  nn::Conv2d conv1, conv2, shortcut;
  nn::BatchNorm2d bn1, bn2, bn_short;
  bool has_shortcut = false;

  BasicBlock() = default;
  BasicBlock(const std::string& name, int cin, int cout, int stride, Rng& rng)
      : conv1(name + ".conv1", cin, cout, 3, stride, 1, false, rng),
        conv2(name + ".conv2", cout, cout, 3, 1, 1, false, rng),
        bn1(name + ".bn1", cout),
        bn2(name + ".bn2", cout) {
    if (stride != 1 || cin != cout) {
      has_shortcut = true;
      shortcut = nn::Conv2d(name + ".short", cin, cout, 1, stride, 0, false, rng);
      bn_short = nn::BatchNorm2d(name + ".bn_short", cout);
    }
  }

  Var forward(Graph& g, Var x) {
    Var out = g.relu(bn1.forward(g, conv1.forward(g, x)));
    out = bn2.forward(g, conv2.forward(g, out));
    Var skip = has_shortcut ? bn_short.forward(g, shortcut.forward(g, x)) : x;
    return g.relu(g.add(out, skip));
  }
  void params(std::vector<nn::Parameter*>& out) {
    conv1.params(out);
    conv2.params(out);
    bn1.params(out);
    bn2.params(out);
    if (has_shortcut) {
      shortcut.params(out);
      bn_short.params(out);
    }
  }
  void state(nn::StateDict& sd) {
    conv1.state(sd);
    conv2.state(sd);
    bn1.state(sd);
    bn2.state(sd);
    if (has_shortcut) {
      shortcut.state(sd);
      bn_short.state(sd);
    }
  }
};

class ResNetLike final : public Classifier {
 public:
  ResNetLike(const std::string& id, std::vector<int> block_counts, int k, std::uint64_t seed,
             int width = 16)
      : Classifier(id, k, seed) {
    Rng rng(seed);
    stem_ = ConvBnRelu(id + ".stem", 1, width, 1, rng);
    int cin = width;
    for (int stage = 0; stage < 4; ++stage) {
      int cout = width << stage;
      for (int b = 0; b < block_counts[static_cast<std::size_t>(stage)]; ++b) {
        int stride = (b == 0 && stage > 0) ? 2 : 1;
        blocks_.emplace_back(id + ".s" + std::to_string(stage) + "b" + std::to_string(b), cin,
                             cout, stride, rng);
        cin = cout;
      }
      stage_ends_.push_back(static_cast<int>(blocks_.size()) - 1);
    }
    channels_ = cin;
    init_head(channels_, rng);
  }

  Var features(Graph& g, Var x, ForwardTaps* taps) override {
    Var v = stem_.forward(g, x);
    if (taps) taps->features.emplace_back("stem", v);
    v = g.maxpool2(v);
    int i = 0;
    for (BasicBlock& b : blocks_) {
      v = b.forward(g, v);
      if (taps) taps->features.emplace_back("block" + std::to_string(i), v);
      ++i;
    }
    return v;
  }

  std::vector<std::string> perceptual_taps() const override {
    std::vector<std::string> taps;
    for (int e : stage_ends_) taps.push_back("block" + std::to_string(e));
    return taps;
  }
  int final_conv_channels() const override { return channels_; }

  void collect_feature_params(std::vector<nn::Parameter*>& out) override {
    stem_.params(out);
    for (BasicBlock& b : blocks_) b.params(out);
  }
  void collect_feature_state(nn::StateDict& sd) override {
    stem_.state(sd);
    for (BasicBlock& b : blocks_) b.state(sd);
  }

 private:
  ConvBnRelu stem_;
  std::vector<BasicBlock> blocks_;
  std::vector<int> stage_ends_;
  int channels_ = 0;
};

class VggBnLike final : public Classifier {
 public:
  VggBnLike(const std::string& id, std::vector<int> group_counts, int k, std::uint64_t seed,
            int width = 8)
      : Classifier(id, k, seed) {
    Rng rng(seed);
    const int mult[5] = {1, 2, 4, 8, 8};
    int cin = 1;
    for (int gi = 0; gi < 5; ++gi) {
      int cout = width * mult[gi];
      for (int c = 0; c < group_counts[static_cast<std::size_t>(gi)]; ++c) {
        convs_.emplace_back(id + ".g" + std::to_string(gi) + "c" + std::to_string(c), cin, cout, 1,
                            rng);
        cin = cout;
      }
      group_ends_.push_back(static_cast<int>(convs_.size()) - 1);
    }
    channels_ = cin;
    init_head(channels_, rng);
  }

  Var features(Graph& g, Var x, ForwardTaps* taps) override {
    Var v = x;
    int gi = 0;
    for (int i = 0; i < static_cast<int>(convs_.size()); ++i) {
      v = convs_[static_cast<std::size_t>(i)].forward(g, v);
      if (taps) taps->features.emplace_back("conv" + std::to_string(i), v);
      if (gi < static_cast<int>(group_ends_.size()) && i == group_ends_[static_cast<std::size_t>(gi)]) {
        if (g.value(v).dim(2) >= 2 && g.value(v).dim(3) >= 2) v = g.maxpool2(v);
        ++gi;
      }
    }
    return v;
  }

  std::vector<std::string> perceptual_taps() const override {
    std::vector<std::string> taps;
    for (int e : group_ends_) taps.push_back("conv" + std::to_string(e));
    return taps;
  }
  int final_conv_channels() const override { return channels_; }

  void collect_feature_params(std::vector<nn::Parameter*>& out) override {
    for (ConvBnRelu& c : convs_) c.params(out);
  }
  void collect_feature_state(nn::StateDict& sd) override {
    for (ConvBnRelu& c : convs_) c.state(sd);
  }

 private:
  std::vector<ConvBnRelu> convs_;
  std::vector<int> group_ends_;
  int channels_ = 0;
};

}  // namespace

bool classifier_registered(const std::string& architecture_id) {
  for (const std::string& id : registered_classifiers())
    if (id == architecture_id) return true;
  return false;
}

std::vector<std::string> registered_classifiers() {
  return {"toy-cnn", "resnet18-like", "resnet34-like", "vgg16bn-like", "vgg19bn-like"};
}

std::unique_ptr<Classifier> build_classifier(const std::string& architecture_id, int K,
                                             const std::string& init, std::uint64_t seed) {
  std::unique_ptr<Classifier> model;
  if (architecture_id == "toy-cnn") {
    model = std::make_unique<ToyCnn>(K, seed);
  } else if (architecture_id == "resnet18-like") {
    model = std::make_unique<ResNetLike>(architecture_id, std::vector<int>{2, 2, 2, 2}, K, seed);
  } else if (architecture_id == "resnet34-like") {
    model = std::make_unique<ResNetLike>(architecture_id, std::vector<int>{3, 4, 6, 3}, K, seed);
  } else if (architecture_id == "vgg16bn-like") {
    model = std::make_unique<VggBnLike>(architecture_id, std::vector<int>{2, 2, 3, 3, 3}, K, seed);
  } else if (architecture_id == "vgg19bn-like") {
    model = std::make_unique<VggBnLike>(architecture_id, std::vector<int>{2, 2, 4, 4, 4}, K, seed);
  } else {
    fail("unknown classifier architecture: '", architecture_id, "'");
  }
  if (init != "random") {
    XM_CHECK(init.rfind("pretrained:", 0) == 0,
             "classifier init must be 'random' or 'pretrained:<path>', got '", init, "'");
    // weight loading is handled by the checkpoint module; see load_classifier
    fail("pretrained initialization goes through load_classifier(\"", init.substr(11), "\")");
  }
  return model;
}

// ---- training ----

Tensor make_batch(const data::Dataset& ds, const std::vector<int>& indices, int resolution) {
  XM_CHECK(!indices.empty(), "make_batch: empty index list");
  Tensor batch({static_cast<int>(indices.size()), 1, resolution, resolution});
  std::size_t plane = static_cast<std::size_t>(resolution) * resolution;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    Tensor resized = img::resize_with_padding(
        ds.samples[static_cast<std::size_t>(indices[i])].pixels, resolution);
    std::copy(resized.data(), resized.data() + plane, batch.data() + i * plane);
  }
  return batch;
}

Tensor labels_batch(const data::Dataset& ds, const std::vector<int>& indices) {
  int k = ds.num_classes();
  Tensor t({static_cast<int>(indices.size()), k});
  for (std::size_t i = 0; i < indices.size(); ++i)
    for (int j = 0; j < k; ++j)
      t.at(i * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)) =
          static_cast<float>(ds.samples[static_cast<std::size_t>(indices[i])].labels[static_cast<std::size_t>(j)]);
  return t;
}

std::vector<double> train_classifier(Classifier& model, const data::Dataset& ds,
                                     const TrainConfig& cfg) {
  XM_CHECK(cfg.optimizer_id == "adamw", "unknown optimizer '", cfg.optimizer_id, "'");
  XM_CHECK(cfg.epochs >= 0 && cfg.batch_size >= 1 && cfg.lr > 0 && cfg.resolution >= 8,
           "invalid train config");
  std::vector<int> train_idx = ds.indices(data::Split::train);
  XM_CHECK(!train_idx.empty(), "train_classifier: empty train split");
  XM_CHECK(ds.num_classes() == model.num_classes(), "dataset K does not match model K");

  model.set_trained_resolution(cfg.resolution);
  std::vector<nn::Parameter*> params;
  model.collect_params(params);
  nn::AdamW::Options opt;
  opt.lr = static_cast<float>(cfg.lr);
  opt.weight_decay = static_cast<float>(cfg.weight_decay);
  nn::AdamW optim(params, opt);

  Rng rng(static_cast<std::uint64_t>(cfg.seed));
  std::vector<double> history;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng = rng.fork(static_cast<std::uint64_t>(epoch));
    std::vector<int> order = train_idx;
    erng.shuffle(order);
    double loss_sum = 0.0;
    std::int64_t batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<int> batch_idx(order.begin() + static_cast<std::ptrdiff_t>(b0),
                                 order.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                     order.size(), b0 + static_cast<std::size_t>(cfg.batch_size))));
      Graph g(true);
      Var x = g.input(make_batch(ds, batch_idx, cfg.resolution), false);
      Var loss = g.bce_with_logits(model.logits(g, x, nullptr), labels_batch(ds, batch_idx));
      double lv = g.value(loss).at(0);
      XM_CHECK(std::isfinite(lv), "train_classifier: non-finite loss at epoch ", epoch, ", batch ",
               batches, " (lr=", cfg.lr, ")");
      optim.zero_grad();
      g.backward(loss);
      optim.step();
      loss_sum += lv;
      ++batches;
    }
    history.push_back(loss_sum / static_cast<double>(std::max<std::int64_t>(1, batches)));
  }
  return history;
}

}  // namespace xmark::models
