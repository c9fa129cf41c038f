#pragma once

#include <json.hpp>

#include <map>
#include <memory>
#include <string>

#include "xmark/models/classifier.hpp"
#include "xmark/models/generator.hpp"
#include "xmark/nn/modules.hpp"

namespace xmark::models {

// Versioned binary container: magic, JSON header (kind, metadata, tensor
// directory), then raw float32 data. Round-trips bit-exactly.
inline constexpr char kCheckpointMagic[] = "XMCK0001";

void save_checkpoint(const std::string& path, const std::string& kind, const nlohmann::json& meta,
                     const nn::StateDict& state);

struct Checkpoint {
  std::string kind;
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors;
};

Checkpoint read_checkpoint(const std::string& path);

// Copies checkpoint tensors into the model state; every entry must match by
// name and shape in both directions.
void apply_state(const Checkpoint& ck, nn::StateDict& sd);

// FNV-1a over the raw bytes of all state tensors in declaration order.
std::uint64_t state_fingerprint(const nn::StateDict& sd);

void save_classifier(const std::string& path, Classifier& model, const nlohmann::json& extra_meta);
std::unique_ptr<Classifier> load_classifier(const std::string& path);

void save_generator(const std::string& path, Generator& model, const nlohmann::json& extra_meta);
std::unique_ptr<Generator> load_generator(const std::string& path);

std::uint64_t classifier_fingerprint(Classifier& model);
std::uint64_t generator_fingerprint(Generator& model);

// Deep copy through the state dictionary.
std::unique_ptr<Classifier> clone_classifier(Classifier& model);

// Fingerprint over the non-head ("convolutional") state only; the freeze
// contract of FC-only fine-tuning is checked against this.
std::uint64_t conv_state_fingerprint(Classifier& model);

}  // namespace xmark::models
