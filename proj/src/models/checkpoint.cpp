#include "xmark/models/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "xmark/core/io.hpp"

namespace xmark::models {

using nlohmann::json;

void save_checkpoint(const std::string& path, const std::string& kind, const json& meta,
                     const nn::StateDict& state) {
  json header;
  header["schema_version"] = 1;
  header["kind"] = kind;
  header["meta"] = meta;
  json dir = json::array();
  std::int64_t offset = 0;
  for (const auto& [name, tensor] : state.entries) {
    json entry;
    entry["name"] = name;
    entry["dims"] = tensor->dims();
    entry["offset"] = offset;
    dir.push_back(entry);
    offset += tensor->numel() * 4;
  }
  header["tensors"] = dir;
  std::string htext = header.dump();

  std::ofstream f(path, std::ios::binary);
  XM_CHECK(f.good(), "cannot write checkpoint: ", path);
  f.write(kCheckpointMagic, 8);
  std::uint64_t hlen = htext.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& [name, tensor] : state.entries)
    f.write(reinterpret_cast<const char*>(tensor->data()),
            static_cast<std::streamsize>(tensor->numel() * 4));
  XM_CHECK(f.good(), "checkpoint write failed: ", path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  XM_CHECK(f.good(), "cannot open checkpoint: ", path);
  char magic[8];
  f.read(magic, 8);
  XM_CHECK(f.good() && std::memcmp(magic, kCheckpointMagic, 8) == 0,
           "not a checkpoint file (bad magic): ", path);
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  XM_CHECK(f.good() && hlen > 0 && hlen < (1ULL << 30), "corrupt checkpoint header: ", path);
  std::string htext(hlen, '\0');
  f.read(htext.data(), static_cast<std::streamsize>(hlen));
  XM_CHECK(f.good(), "truncated checkpoint header: ", path);
  json header = json::parse(htext);
  XM_CHECK(header.value("schema_version", 0) == 1, "unsupported checkpoint schema in ", path);

  Checkpoint ck;
  ck.kind = header.at("kind").get<std::string>();
  ck.meta = header.value("meta", json::object());
  for (const auto& entry : header.at("tensors")) {
    std::string name = entry.at("name").get<std::string>();
    std::vector<int> dims = entry.at("dims").get<std::vector<int>>();
    Tensor t(dims);
    f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 4));
    XM_CHECK(f.good(), "truncated checkpoint tensor '", name, "' in ", path);
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  return ck;
}

void apply_state(const Checkpoint& ck, nn::StateDict& sd) {
  XM_CHECK(ck.tensors.size() == sd.entries.size(), "checkpoint has ", ck.tensors.size(),
           " tensors but the model expects ", sd.entries.size());
  for (auto& [name, tensor] : sd.entries) {
    auto it = ck.tensors.find(name);
    XM_CHECK(it != ck.tensors.end(), "checkpoint is missing tensor '", name, "'");
    XM_CHECK(it->second.dims() == tensor->dims(), "checkpoint tensor '", name, "' shape mismatch");
    *tensor = it->second;
  }
}

std::uint64_t state_fingerprint(const nn::StateDict& sd) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, tensor] : sd.entries) {
    std::uint64_t hn = io::fnv1a64(name.data(), name.size());
    std::uint64_t hd = io::fnv1a64(tensor->data(), static_cast<std::size_t>(tensor->numel()) * 4);
    h ^= hn;
    h *= 0x100000001b3ULL;
    h ^= hd;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void save_classifier(const std::string& path, Classifier& model, const json& extra_meta) {
  nn::StateDict sd;
  model.collect_state(sd);
  json meta = extra_meta;
  meta["architecture_id"] = model.architecture_id();
  meta["num_classes"] = model.num_classes();
  meta["init_seed"] = model.init_seed();
  meta["trained_resolution"] = model.trained_resolution();
  meta["fingerprint"] = io::hex64(state_fingerprint(sd));
  save_checkpoint(path, "classifier", meta, sd);
}

std::unique_ptr<Classifier> load_classifier(const std::string& path) {
  Checkpoint ck = read_checkpoint(path);
  XM_CHECK(ck.kind == "classifier", path, " is a '", ck.kind, "' checkpoint, expected classifier");
  auto model = build_classifier(ck.meta.at("architecture_id").get<std::string>(),
                                ck.meta.at("num_classes").get<int>(), "random",
                                ck.meta.at("init_seed").get<std::uint64_t>());
  model->set_trained_resolution(ck.meta.value("trained_resolution", 0));
  nn::StateDict sd;
  model->collect_state(sd);
  apply_state(ck, sd);
  return model;
}

void save_generator(const std::string& path, Generator& model, const json& extra_meta) {
  nn::StateDict sd;
  model.collect_state(sd);
  json meta = extra_meta;
  const GeneratorConfig& cfg = model.config();
  meta["widths"] = cfg.widths;
  meta["saliency_hidden"] = cfg.saliency_hidden;
  meta["fusion"] = cfg.fusion;
  meta["norm_groups"] = cfg.norm_groups;
  meta["resolution"] = cfg.resolution;
  meta["init_seed"] = model.init_seed();
  meta["fingerprint"] = io::hex64(state_fingerprint(sd));
  save_checkpoint(path, "generator", meta, sd);
}

std::unique_ptr<Generator> load_generator(const std::string& path) {
  Checkpoint ck = read_checkpoint(path);
  XM_CHECK(ck.kind == "generator", path, " is a '", ck.kind, "' checkpoint, expected generator");
  GeneratorConfig cfg;
  cfg.widths = ck.meta.at("widths").get<std::vector<int>>();
  cfg.saliency_hidden = ck.meta.at("saliency_hidden").get<int>();
  cfg.fusion = ck.meta.at("fusion").get<std::string>();
  cfg.norm_groups = ck.meta.at("norm_groups").get<int>();
  cfg.resolution = ck.meta.value("resolution", 128);
  auto model = std::make_unique<Generator>(cfg, ck.meta.at("init_seed").get<std::uint64_t>());
  nn::StateDict sd;
  model->collect_state(sd);
  apply_state(ck, sd);
  return model;
}

std::uint64_t classifier_fingerprint(Classifier& model) {
  nn::StateDict sd;
  model.collect_state(sd);
  return state_fingerprint(sd);
}

std::unique_ptr<Classifier> clone_classifier(Classifier& model) {
  auto copy = build_classifier(model.architecture_id(), model.num_classes(), "random",
                               model.init_seed());
  copy->set_trained_resolution(model.trained_resolution());
  nn::StateDict src, dst;
  model.collect_state(src);
  copy->collect_state(dst);
  XM_CHECK(src.entries.size() == dst.entries.size(), "clone_classifier: state mismatch");
  for (std::size_t i = 0; i < src.entries.size(); ++i) {
    XM_CHECK(src.entries[i].first == dst.entries[i].first, "clone_classifier: name mismatch");
    *dst.entries[i].second = *src.entries[i].second;
  }
  return copy;
}

std::uint64_t conv_state_fingerprint(Classifier& model) {
  nn::StateDict sd;
  model.collect_feature_state(sd);
  return state_fingerprint(sd);
}

std::uint64_t generator_fingerprint(Generator& model) {
  nn::StateDict sd;
  model.collect_state(sd);
  return state_fingerprint(sd);
}

}  // namespace xmark::models
