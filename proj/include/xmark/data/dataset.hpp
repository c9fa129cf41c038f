#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xmark/core/tensor.hpp"

namespace xmark::data {

enum class Split { train, val, test };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct ImageSample {
  std::string id;
  Tensor pixels;            // [H,W], values in [0,1]
  std::vector<int> labels;  // length K, each 0/1
  Split split = Split::train;
  std::string rel_path;     // manifest-relative image path (empty for in-memory data)
};

struct Dataset {
  std::vector<ImageSample> samples;
  std::vector<std::string> label_names;
  int target_class = 0;  // index k used for watermarking

  int num_classes() const { return static_cast<int>(label_names.size()); }
  std::vector<int> indices(Split s) const;
  // samples in split s with labels[k] == positive
  std::vector<int> class_indices(Split s, int k, bool positive) const;
  void validate() const;
};

struct ToyDatasetConfig {
  int n_samples = 2000;
  int resolution = 128;
  int num_classes = 6;  // K
  std::int64_t seed = 7;
  double label_feature_strength = 1.0;  // in [0,1], scales pathology contrast
};

// Synthetic grayscale chest-image surrogate: torso/lung background, smooth
// texture, pixel noise, and one low-frequency feature per pathology class at a
// class-specific position. Class 0 ("no_finding") is mutually exclusive with
// the others. Deterministic for a given config.
Dataset generate_toy_dataset(const ToyDatasetConfig& config);

// Manifest CSV: header "id,path,split,<label_1>,...,<label_K>"; paths relative
// to the manifest directory; single-channel 8/16-bit PNGs.
Dataset load_manifest(const std::string& manifest_path);
std::string serialize_manifest(const Dataset& ds);
// Writes images/<id>.png plus the manifest file into out_dir.
void save_dataset(const Dataset& ds, const std::string& out_dir,
                  const std::string& manifest_name = "manifest.csv");

// Deterministic stratified split assignment; fractions must sum to 1.
void split(Dataset& ds, double train_frac, double val_frac, double test_frac, std::int64_t seed);

}  // namespace xmark::data
