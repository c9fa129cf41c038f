#include "xmark/cli/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "xmark/attacks/attacks.hpp"
#include "xmark/core/image.hpp"
#include "xmark/core/io.hpp"
#include "xmark/data/dataset.hpp"
#include "xmark/models/checkpoint.hpp"
#include "xmark/pyramid/pyramid.hpp"
#include "xmark/saliency/eigencam.hpp"
#include "xmark/verify/stats.hpp"
#include "xmark/verify/verify.hpp"
#include "xmark/watermark/watermark.hpp"

namespace xmark::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- configuration ----

json default_config() {
  json cfg;
  cfg["seed"] = 1;
  cfg["name"] = "main";
  cfg["data"] = {{"kind", "toy"},         {"n_samples", 2000},
                 {"resolution", 128},     {"num_classes", 6},
                 {"seed", 7},             {"label_feature_strength", 1.0},
                 {"fractions", {0.7, 0.1, 0.2}}, {"split_seed", 11},
                 {"manifest", ""}};
  json cls = {{"architecture", "toy-cnn"}, {"epochs", 5},   {"batch_size", 32},
              {"lr", 1e-3},                {"resolution", 64}, {"seed", 101},
              {"weight_decay", 1e-4}};
  cfg["surrogate"] = cls;
  cfg["benign"] = cls;
  cfg["benign"]["seed"] = 202;
  cfg["backdoor"] = cls;
  cfg["backdoor"]["seed"] = 303;
  cfg["generator"] = {{"widths", {12, 24, 48, 72}},
                      {"saliency_hidden", 36},
                      {"fusion", "add"},
                      {"norm_groups", 4},
                      {"resolution", 128},
                      {"epoch_cap", 100},
                      {"batch_size", 8},
                      {"lr", 2e-3},
                      {"seed", 404},
                      {"subset_fraction", 0.1},
                      {"early_stop_flip_rate", 0.95},
                      {"early_stop_lpips_ceiling", 0.05},
                      {"probe_size", 64},
                      {"weight_decay", 1e-4},
                      {"surrogate_model", "surrogate"}};
  cfg["watermark"] = {{"eps", 16.0 / 255.0}, {"gamma", 0.1},      {"target_class", 0},
                      {"lambda_t", 1.0},     {"lambda_nt", 1.0},  {"lambda_lpips", 10.0},
                      {"lambda_lap", 3.0},   {"pyramid_levels", 3}, {"tau", 0.25},
                      {"seed", 505}};
  cfg["perceptual"] = {{"backbone", "surrogate"},
                       {"channel_replication", false},
                       {"layer_set", json::array()},
                       {"scale", 0.025}};
  cfg["verify"] = {{"n", 100},
                   {"alpha", 0.05},
                   {"seed", 606},
                   {"scenario", "malicious"},
                   {"adapter", "checkpoint"},
                   {"http", {{"host", "127.0.0.1"},
                             {"port", 0},
                             {"endpoint", "/predict"},
                             {"batch_size", 16},
                             {"timeout_s", 30}}}};
  cfg["attack"] = {{"kind", "finetune"}, {"finetune_epochs", 100}, {"subset_fraction", 0.1},
                   {"lr", 1e-3},         {"batch_size", 32},       {"prune_step", 0.02},
                   {"seed", 707},        {"refinetune", false}};
  cfg["sweep"] = {{"kind", "scale"},
                  {"resolutions", {32, 64, 128}},
                  {"architectures", {"toy-cnn", "resnet18-like"}},
                  {"seed", 808}};
  cfg["inspect"] = {{"count", 4}};
  return cfg;
}

namespace {

void check_keys(const json& node, const json& schema, const std::string& path) {
  XM_CHECK(node.is_object(), "config section ", path.empty() ? "<root>" : path,
           " must be an object");
  for (auto it = node.begin(); it != node.end(); ++it) {
    std::string child = path.empty() ? it.key() : path + "." + it.key();
    XM_CHECK(schema.contains(it.key()), "unknown config key '", child, "'");
    const json& ref = schema.at(it.key());
    const json& val = it.value();
    if (ref.is_object()) {
      check_keys(val, ref, child);
    } else if (ref.is_number() && !ref.is_boolean()) {
      XM_CHECK(val.is_number(), "config key '", child, "' must be a number");
    } else if (ref.is_boolean()) {
      XM_CHECK(val.is_boolean(), "config key '", child, "' must be a boolean");
    } else if (ref.is_string()) {
      XM_CHECK(val.is_string(), "config key '", child, "' must be a string");
    } else if (ref.is_array()) {
      XM_CHECK(val.is_array(), "config key '", child, "' must be an array");
    }
  }
}

json merged_with_defaults(const json& user) {
  json cfg = default_config();
  cfg.merge_patch(user);
  return cfg;
}

void apply_override(json& cfg, const std::string& kv) {
  std::size_t eq = kv.find('=');
  XM_CHECK(eq != std::string::npos, "--set expects key.path=value, got '", kv, "'");
  std::string path = kv.substr(0, eq);
  std::string raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (...) {
    value = raw;  // plain string
  }
  json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    std::size_t dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    XM_CHECK(!key.empty(), "bad --set path '", path, "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace

void validate_config(const json& cfg) {
  check_keys(cfg, default_config(), "");
  XM_CHECK(cfg.at("data").at("kind") == "toy" || cfg.at("data").at("kind") == "manifest",
           "data.kind must be toy or manifest");
}

json load_run_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  json user = json::object();
  if (!config_path.empty()) user = json::parse(io::read_text_file(config_path));
  json cfg = merged_with_defaults(user);
  for (const std::string& kv : overrides) apply_override(cfg, kv);
  validate_config(cfg);
  return cfg;
}

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> subs = {
      "gen-data",       "train-surrogate", "train-generator", "watermark", "train-backdoor",
      "verify",         "attack",          "sweep",           "inspect",   "report"};
  return subs;
}

// ---- stage plumbing ----

namespace {

struct RunPaths {
  fs::path root;
  fs::path data() const { return root / "data"; }
  fs::path data_manifest() const { return data() / "manifest.csv"; }
  fs::path models() const { return root / "models"; }
  fs::path classifier(const std::string& name) const { return models() / (name + ".ckpt"); }
  fs::path generator(const std::string& name) const {
    return models() / ("generator-" + name + ".ckpt");
  }
  fs::path watermarked(const std::string& name) const { return root / ("watermarked-" + name); }
  fs::path backdoored(const std::string& name) const {
    return models() / ("backdoored-" + name + ".ckpt");
  }
  fs::path reports() const { return root / "reports"; }
  fs::path provenance() const { return root / "provenance"; }
};

std::int64_t mix_seed(const json& cfg, std::int64_t stage_seed) {
  return stage_seed + cfg.at("seed").get<std::int64_t>() * 1000003;
}

void require_artifact(const fs::path& p, const std::string& producing_stage) {
  XM_CHECK(fs::exists(p), "missing artifact ", p.string(), "; run `xmark ", producing_stage,
           "` first");
}

std::uint64_t file_hash(const fs::path& p) {
  std::string bytes = io::read_text_file(p.string());
  return io::fnv1a64(bytes.data(), bytes.size());
}

class Provenance {
 public:
  Provenance(const RunPaths& rp, const json& cfg, const std::string& stage, const std::string& tag)
      : rp_(rp), stage_(stage), tag_(tag), start_(std::chrono::steady_clock::now()) {
    record_["schema_version"] = 1;
    record_["stage"] = stage;
    record_["tag"] = tag;
    record_["config_hash"] = io::hex64(io::fnv1a64_str(cfg.dump()));
    record_["timestamp_unix"] =
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count();
  }
  void input(const std::string& name, const fs::path& p) {
    record_["inputs"][name] = io::hex64(file_hash(p));
  }
  void input_hash(const std::string& name, std::uint64_t h) {
    record_["inputs"][name] = io::hex64(h);
  }
  void note(const std::string& key, const json& v) { record_[key] = v; }
  void commit() {
    record_["wall_time_s"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    fs::create_directories(rp_.provenance());
    std::string name = tag_.empty() ? stage_ : stage_ + "-" + tag_;
    io::write_text_file((rp_.provenance() / (name + ".json")).string(), record_.dump(2) + "\n");
  }

 private:
  RunPaths rp_;
  std::string stage_, tag_;
  std::chrono::steady_clock::time_point start_;
  json record_;
};

models::TrainConfig train_config_from(const json& section, const json& cfg) {
  models::TrainConfig t;
  t.epochs = section.at("epochs").get<int>();
  t.batch_size = section.at("batch_size").get<int>();
  t.lr = section.at("lr").get<double>();
  t.resolution = section.at("resolution").get<int>();
  t.seed = mix_seed(cfg, section.at("seed").get<std::int64_t>());
  t.weight_decay = section.at("weight_decay").get<double>();
  return t;
}

watermark::WatermarkConfig watermark_config_from(const json& cfg) {
  const json& w = cfg.at("watermark");
  watermark::WatermarkConfig c;
  c.eps = w.at("eps").get<double>();
  c.gamma = w.at("gamma").get<double>();
  c.target_class = w.at("target_class").get<int>();
  c.lambda_t = w.at("lambda_t").get<double>();
  c.lambda_nt = w.at("lambda_nt").get<double>();
  c.lambda_lpips = w.at("lambda_lpips").get<double>();
  c.lambda_lap = w.at("lambda_lap").get<double>();
  c.pyramid_levels = w.at("pyramid_levels").get<int>();
  c.tau = w.at("tau").get<double>();
  c.seed = mix_seed(cfg, w.at("seed").get<std::int64_t>());
  c.validate();
  return c;
}

data::Dataset load_run_dataset(const RunPaths& rp) {
  require_artifact(rp.data_manifest(), "gen-data");
  return data::load_manifest(rp.data_manifest().string());
}

std::shared_ptr<models::Classifier> load_cls(const fs::path& p, const std::string& stage) {
  require_artifact(p, stage);
  return std::shared_ptr<models::Classifier>(models::load_classifier(p.string()));
}

// generator + the surrogate it was trained against + saliency provider
struct ApplierBundle {
  std::shared_ptr<models::Generator> generator;
  std::shared_ptr<models::Classifier> surrogate;
  std::shared_ptr<watermark::SaliencyProvider> saliency;
  watermark::WatermarkApplier applier;
  std::string surrogate_name;
};

ApplierBundle load_applier(const RunPaths& rp, const std::string& gen_name, double eps) {
  fs::path gp = rp.generator(gen_name);
  require_artifact(gp, "train-generator --set name=" + gen_name);
  models::Checkpoint ck = models::read_checkpoint(gp.string());
  ApplierBundle b;
  b.generator = std::shared_ptr<models::Generator>(models::load_generator(gp.string()));
  b.surrogate_name = ck.meta.value("surrogate_model", "surrogate");
  b.surrogate = load_cls(rp.classifier(b.surrogate_name),
                         "train-surrogate --set name=" + b.surrogate_name);
  b.saliency = std::make_shared<watermark::SaliencyProvider>(b.surrogate,
                                                             b.surrogate->trained_resolution());
  b.applier = watermark::WatermarkApplier{b.generator, b.saliency, eps};
  return b;
}

json classifier_metrics(models::Classifier& model, const data::Dataset& ds) {
  auto shared = std::shared_ptr<models::Classifier>(&model, [](models::Classifier*) {});
  auto bb = verify::make_checkpoint_blackbox(shared);
  std::vector<int> val_idx = ds.indices(data::Split::val);
  std::vector<int> test_idx = ds.indices(data::Split::test);
  json out;
  if (val_idx.empty() || test_idx.empty()) return out;
  Tensor val_probs = bb->query(models::make_batch(ds, val_idx, model.trained_resolution()));
  verify::ThresholdVector thr =
      verify::optimal_f1_thresholds(val_probs, models::labels_batch(ds, val_idx));
  out["thresholds"] = thr.values;
  out["threshold_warnings"] = thr.warnings;
  out["benign_accuracy"] = verify::benign_accuracy(*bb, ds, data::Split::test, thr);
  Tensor test_probs = bb->query(models::make_batch(ds, test_idx, model.trained_resolution()));
  json aurocs = json::array();
  for (int k = 0; k < ds.num_classes(); ++k) {
    std::vector<float> s;
    std::vector<int> l;
    for (std::size_t i = 0; i < test_idx.size(); ++i) {
      s.push_back(test_probs.at(i * static_cast<std::size_t>(ds.num_classes()) + static_cast<std::size_t>(k)));
      l.push_back(ds.samples[static_cast<std::size_t>(test_idx[i])].labels[static_cast<std::size_t>(k)]);
    }
    bool has_both = std::count(l.begin(), l.end(), 1) > 0 && std::count(l.begin(), l.end(), 0) > 0;
    aurocs.push_back(has_both ? json(stats::auroc(s, l)) : json());
  }
  out["auroc"] = aurocs;
  return out;
}

void write_report(const RunPaths& rp, const std::string& name, const json& j) {
  fs::create_directories(rp.reports());
  io::write_text_file((rp.reports() / name).string(), j.dump(2) + "\n");
}

// ---- stages ----

int stage_gen_data(const json& cfg, const RunPaths& rp) {
  Provenance prov(rp, cfg, "gen-data", "");
  const json& d = cfg.at("data");
  data::Dataset ds;
  if (d.at("kind") == "toy") {
    data::ToyDatasetConfig t;
    t.n_samples = d.at("n_samples").get<int>();
    t.resolution = d.at("resolution").get<int>();
    t.num_classes = d.at("num_classes").get<int>();
    t.seed = mix_seed(cfg, d.at("seed").get<std::int64_t>());
    t.label_feature_strength = d.at("label_feature_strength").get<double>();
    ds = data::generate_toy_dataset(t);
    auto fr = d.at("fractions").get<std::vector<double>>();
    XM_CHECK(fr.size() == 3, "data.fractions must have three entries");
    data::split(ds, fr[0], fr[1], fr[2], mix_seed(cfg, d.at("split_seed").get<std::int64_t>()));
  } else {
    std::string src = d.at("manifest").get<std::string>();
    XM_CHECK(!src.empty(), "data.kind=manifest requires data.manifest path");
    ds = data::load_manifest(src);
  }
  data::save_dataset(ds, rp.data().string());
  prov.note("samples", ds.samples.size());
  prov.input("manifest", rp.data_manifest());
  prov.commit();
  std::printf("gen-data: %zu samples, K=%d -> %s\n", ds.samples.size(), ds.num_classes(),
              rp.data().string().c_str());
  return 0;
}

int stage_train_surrogate(const json& cfg, const RunPaths& rp) {
  std::string name = cfg.at("name").get<std::string>();
  if (name == "main") name = "surrogate";  // default tag maps to the surrogate section
  XM_CHECK(name == "surrogate" || name == "benign",
           "train-surrogate name must be surrogate or benign, got '", name, "'");
  Provenance prov(rp, cfg, "train-surrogate", name);
  data::Dataset ds = load_run_dataset(rp);
  const json& section = cfg.at(name);
  models::TrainConfig tcfg = train_config_from(section, cfg);
  auto model = models::build_classifier(section.at("architecture").get<std::string>(),
                                        ds.num_classes(), "random",
                                        static_cast<std::uint64_t>(tcfg.seed));
  auto history = models::train_classifier(*model, ds, tcfg);
  fs::create_directories(rp.models());
  models::save_classifier(rp.classifier(name).string(), *model, {{"role", name}});
  json metrics = classifier_metrics(*model, ds);
  metrics["train_loss"] = history;
  write_report(rp, "metrics-" + name + ".json", metrics);
  prov.input("data", rp.data_manifest());
  prov.input("checkpoint", rp.classifier(name));
  prov.note("seed", tcfg.seed);
  prov.commit();
  std::printf("train-surrogate[%s]: done, BA=%.2f%%\n", name.c_str(),
              metrics.value("benign_accuracy", 0.0));
  return 0;
}

int stage_train_generator(const json& cfg, const RunPaths& rp) {
  std::string name = cfg.at("name").get<std::string>();
  Provenance prov(rp, cfg, "train-generator", name);
  data::Dataset ds = load_run_dataset(rp);
  const json& gsec = cfg.at("generator");
  std::string sur_name = gsec.at("surrogate_model").get<std::string>();
  auto surrogate = load_cls(rp.classifier(sur_name), "train-surrogate --set name=" + sur_name);

  models::GeneratorConfig gcfg;
  gcfg.widths = gsec.at("widths").get<std::vector<int>>();
  gcfg.saliency_hidden = gsec.at("saliency_hidden").get<int>();
  gcfg.fusion = gsec.at("fusion").get<std::string>();
  gcfg.norm_groups = gsec.at("norm_groups").get<int>();
  gcfg.resolution = gsec.at("resolution").get<int>();
  std::int64_t gseed = mix_seed(cfg, gsec.at("seed").get<std::int64_t>());
  models::Generator gen(gcfg, static_cast<std::uint64_t>(gseed));

  watermark::WatermarkConfig wcfg = watermark_config_from(cfg);
  watermark::GenTrainConfig tcfg;
  tcfg.epoch_cap = gsec.at("epoch_cap").get<int>();
  tcfg.batch_size = gsec.at("batch_size").get<int>();
  tcfg.lr = gsec.at("lr").get<double>();
  tcfg.seed = gseed;
  tcfg.subset_fraction = gsec.at("subset_fraction").get<double>();
  tcfg.early_stop_flip_rate = gsec.at("early_stop_flip_rate").get<double>();
  tcfg.early_stop_lpips_ceiling = gsec.at("early_stop_lpips_ceiling").get<double>();
  tcfg.probe_size = gsec.at("probe_size").get<int>();
  tcfg.weight_decay = gsec.at("weight_decay").get<double>();

  watermark::SaliencyProvider saliency(surrogate, surrogate->trained_resolution());
  perceptual::PerceptualMetricConfig pcfg;
  pcfg.backbone = cfg.at("perceptual").at("backbone").get<std::string>();
  pcfg.channel_replication = cfg.at("perceptual").at("channel_replication").get<bool>();
  pcfg.layer_set = cfg.at("perceptual").at("layer_set").get<std::vector<std::string>>();
  pcfg.scale = cfg.at("perceptual").at("scale").get<double>();
  auto metric = perceptual::make_perceptual_metric(pcfg, surrogate);

  watermark::GenTrainResult result = train_generator(gen, saliency, ds, wcfg, tcfg, *metric);

  fs::create_directories(rp.models());
  json meta;
  meta["surrogate_model"] = sur_name;
  meta["surrogate_fingerprint"] = io::hex64(models::classifier_fingerprint(*surrogate));
  meta["epochs_run"] = result.epochs_run;
  meta["early_stopped"] = result.early_stopped;
  models::save_generator(rp.generator(name).string(), gen, meta);

  json hist = json::array();
  for (const auto& e : result.history)
    hist.push_back({{"total", e.total},
                    {"loss_t", e.loss_t},
                    {"loss_nt", e.loss_nt},
                    {"loss_lpips", e.loss_lpips},
                    {"loss_lap", e.loss_lap},
                    {"probe_flip_rate", e.probe_flip_rate}});
  write_report(rp, "genhist-" + name + ".json",
               json{{"history", hist},
                    {"epochs_run", result.epochs_run},
                    {"early_stopped", result.early_stopped}});
  prov.input("data", rp.data_manifest());
  prov.input("surrogate", rp.classifier(sur_name));
  prov.input("checkpoint", rp.generator(name));
  prov.note("seed", gseed);
  prov.commit();
  std::printf("train-generator[%s]: %d epochs%s, final flip rate %.3f\n", name.c_str(),
              result.epochs_run, result.early_stopped ? " (early stop)" : "",
              result.history.empty() ? 0.0 : result.history.back().probe_flip_rate);
  return 0;
}

int stage_watermark(const json& cfg, const RunPaths& rp) {
  std::string name = cfg.at("name").get<std::string>();
  Provenance prov(rp, cfg, "watermark", name);
  data::Dataset ds = load_run_dataset(rp);
  watermark::WatermarkConfig wcfg = watermark_config_from(cfg);
  ApplierBundle bundle = load_applier(rp, name, wcfg.eps);

  watermark::WatermarkedDataset wd = watermark::watermark_dataset(ds, bundle.applier, wcfg);
  if (wd.watermarked_ids.empty())
    std::fprintf(stderr,
                 "watermark[%s]: gamma*N_t rounded to zero samples; dataset left unmodified\n",
                 name.c_str());

  // budget sanity before anything ships
  float eps = static_cast<float>(wcfg.eps);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Tensor& a = ds.samples[i].pixels;
    const Tensor& b = wd.dataset.samples[i].pixels;
    float worst = 0.0f;
    for (std::int64_t j = 0; j < a.numel(); ++j)
      worst = std::max(worst, std::fabs(a.at(static_cast<std::size_t>(j)) - b.at(static_cast<std::size_t>(j))));
    XM_CHECK(worst <= eps + 1e-6f, "budget violated for sample ", ds.samples[i].id);
  }

  watermark::export_watermarked_dataset(wd, rp.watermarked(name).string());
  prov.input("data", rp.data_manifest());
  prov.input("generator", rp.generator(name));
  prov.input("manifest", rp.watermarked(name) / "manifest.csv");
  prov.note("watermarked_count", wd.watermarked_ids.size());
  prov.commit();
  std::printf("watermark[%s]: %zu samples watermarked -> %s\n", name.c_str(),
              wd.watermarked_ids.size(), rp.watermarked(name).string().c_str());
  return 0;
}

int stage_train_backdoor(const json& cfg, const RunPaths& rp) {
  std::string name = cfg.at("name").get<std::string>();
  Provenance prov(rp, cfg, "train-backdoor", name);
  fs::path wm_manifest = rp.watermarked(name) / "manifest.csv";
  require_artifact(wm_manifest, "watermark --set name=" + name);
  data::Dataset wm = data::load_manifest(wm_manifest.string());
  models::TrainConfig tcfg = train_config_from(cfg.at("backdoor"), cfg);
  auto model = models::build_classifier(cfg.at("backdoor").at("architecture").get<std::string>(),
                                        wm.num_classes(), "random",
                                        static_cast<std::uint64_t>(tcfg.seed));
  auto history = models::train_classifier(*model, wm, tcfg);
  fs::create_directories(rp.models());
  models::save_classifier(rp.backdoored(name).string(), *model, {{"role", "backdoored-" + name}});
  json metrics = classifier_metrics(*model, wm);
  metrics["train_loss"] = history;
  write_report(rp, "metrics-backdoored-" + name + ".json", metrics);
  prov.input("watermarked", wm_manifest);
  prov.input("checkpoint", rp.backdoored(name));
  prov.note("seed", tcfg.seed);
  prov.commit();
  std::printf("train-backdoor[%s]: done, BA=%.2f%%\n", name.c_str(),
              metrics.value("benign_accuracy", 0.0));
  return 0;
}

int stage_verify(const json& cfg, const RunPaths& rp) {
  const json& vsec = cfg.at("verify");
  std::string scenario = vsec.at("scenario").get<std::string>();
  XM_CHECK(scenario == "malicious" || scenario == "ind-w" || scenario == "ind-m",
           "verify.scenario must be malicious, ind-w or ind-m");
  Provenance prov(rp, cfg, "verify", scenario);
  data::Dataset ds = load_run_dataset(rp);
  watermark::WatermarkConfig wcfg = watermark_config_from(cfg);

  // scenario wiring: which model is suspected, which watermark queries it
  std::string gen_name = scenario == "ind-w" ? "indw" : cfg.at("name").get<std::string>();
  ApplierBundle bundle = load_applier(rp, gen_name, wcfg.eps);

  std::unique_ptr<verify::BlackBoxModel> bb;
  std::shared_ptr<models::Classifier> suspect;
  fs::path suspect_path;
  if (scenario == "ind-m") {
    suspect_path = rp.classifier("benign");
    suspect = load_cls(suspect_path, "train-surrogate --set name=benign");
  } else {
    suspect_path = rp.backdoored(cfg.at("name").get<std::string>());
    require_artifact(suspect_path, "train-backdoor");
    suspect = std::shared_ptr<models::Classifier>(models::load_classifier(suspect_path.string()));
  }
  if (vsec.at("adapter") == "http") {
    verify::HttpAdapterConfig hcfg;
    const json& h = vsec.at("http");
    hcfg.host = h.at("host").get<std::string>();
    hcfg.port = h.at("port").get<int>();
    hcfg.endpoint = h.at("endpoint").get<std::string>();
    hcfg.batch_size = h.at("batch_size").get<int>();
    hcfg.timeout_s = h.at("timeout_s").get<int>();
    hcfg.resolution = suspect->trained_resolution();
    hcfg.num_classes = suspect->num_classes();
    bb = verify::make_http_blackbox(hcfg);
  } else {
    bb = verify::make_checkpoint_blackbox(suspect);
  }

  verify::VerificationConfig vcfg;
  vcfg.n = vsec.at("n").get<int>();
  vcfg.tau = wcfg.tau;
  vcfg.alpha = vsec.at("alpha").get<double>();
  vcfg.target_class = wcfg.target_class;
  vcfg.seed = mix_seed(cfg, vsec.at("seed").get<std::int64_t>());
  vcfg.scenario = scenario;

  std::vector<int> pool = ds.class_indices(data::Split::test, wcfg.target_class, false);
  verify::VerificationReport report =
      verify::verify_ownership(*bb, bundle.applier, ds, pool, vcfg);
  write_report(rp, "verify-" + scenario + ".json", verify::report_to_json(report));
  prov.input("suspect", suspect_path);
  prov.input("generator", rp.generator(gen_name));
  prov.commit();
  std::printf("verify[%s]: dP=%.4f p=%.3g decision=%s\n", scenario.c_str(), report.delta_p,
              report.p_value, report.decision ? "watermarked" : "not proven");
  return 0;
}

int stage_attack(const json& cfg, const RunPaths& rp) {
  const json& asec = cfg.at("attack");
  std::string kind = asec.at("kind").get<std::string>();
  XM_CHECK(kind == "finetune" || kind == "prune", "attack.kind must be finetune or prune");
  Provenance prov(rp, cfg, "attack", kind);
  std::string name = cfg.at("name").get<std::string>();
  data::Dataset ds = load_run_dataset(rp);
  watermark::WatermarkConfig wcfg = watermark_config_from(cfg);
  ApplierBundle bundle = load_applier(rp, name, wcfg.eps);
  fs::path bd_path = rp.backdoored(name);
  require_artifact(bd_path, "train-backdoor");
  auto model = models::load_classifier(bd_path.string());

  attacks::EvalContext ectx{&ds, &bundle.applier, wcfg.target_class};
  json out;
  std::vector<attacks::AttackResult> series;
  std::uint64_t conv_before = models::conv_state_fingerprint(*model);
  if (kind == "finetune") {
    attacks::FinetuneConfig fcfg;
    fcfg.subset_fraction = asec.at("subset_fraction").get<double>();
    fcfg.epochs = asec.at("finetune_epochs").get<int>();
    fcfg.batch_size = asec.at("batch_size").get<int>();
    fcfg.lr = asec.at("lr").get<double>();
    fcfg.seed = mix_seed(cfg, asec.at("seed").get<std::int64_t>());
    series = attacks::finetune_attack(*model, ds, fcfg, ectx);
    out["conv_fingerprint_before"] = io::hex64(conv_before);
    out["conv_fingerprint_after"] = io::hex64(models::conv_state_fingerprint(*model));
  } else {
    attacks::PruneConfig pcfg;
    pcfg.subset_fraction = asec.at("subset_fraction").get<double>();
    pcfg.seed = mix_seed(cfg, asec.at("seed").get<std::int64_t>());
    pcfg.refinetune = asec.at("refinetune").get<bool>();
    series = attacks::prune_sweep(*model, ds, asec.at("prune_step").get<double>(), pcfg, ectx);
  }
  fs::create_directories(rp.reports());
  io::write_text_file((rp.reports() / ("attack-" + kind + ".csv")).string(),
                      attacks::results_to_csv(series));
  json jseries = json::array();
  for (const auto& r : series)
    jseries.push_back({{"attack_id", r.attack_id}, {"parameter", r.parameter}, {"BA", r.ba}, {"WSR", r.wsr}});
  out["series"] = jseries;
  write_report(rp, "attack-" + kind + ".json", out);
  models::save_classifier((rp.models() / ("attacked-" + kind + ".ckpt")).string(), *model,
                          {{"role", "attacked-" + kind}});
  prov.input("backdoored", bd_path);
  prov.commit();
  std::printf("attack[%s]: %zu entries -> reports/attack-%s.csv\n", kind.c_str(), series.size(),
              kind.c_str());
  return 0;
}

int stage_sweep(const json& cfg, const RunPaths& rp) {
  const json& ssec = cfg.at("sweep");
  std::string kind = ssec.at("kind").get<std::string>();
  XM_CHECK(kind == "scale" || kind == "transfer", "sweep.kind must be scale or transfer");
  Provenance prov(rp, cfg, "sweep", kind);
  std::string name = cfg.at("name").get<std::string>();
  watermark::WatermarkConfig wcfg = watermark_config_from(cfg);
  fs::path wm_manifest = rp.watermarked(name) / "manifest.csv";
  require_artifact(wm_manifest, "watermark");
  data::Dataset wm = data::load_manifest(wm_manifest.string());
  ApplierBundle bundle = load_applier(rp, name, wcfg.eps);

  models::TrainConfig base = train_config_from(cfg.at("backdoor"), cfg);
  base.seed = mix_seed(cfg, ssec.at("seed").get<std::int64_t>());
  attacks::EvalContext ectx{&wm, &bundle.applier, wcfg.target_class};

  std::vector<attacks::AttackResult> results;
  if (kind == "scale") {
    results = attacks::scale_invariance_sweep(
        wm, ssec.at("resolutions").get<std::vector<int>>(),
        cfg.at("backdoor").at("architecture").get<std::string>(), base, ectx);
  } else {
    results = attacks::transfer_sweep(
        wm, ssec.at("architectures").get<std::vector<std::string>>(), base, ectx);
  }
  fs::create_directories(rp.reports());
  io::write_text_file((rp.reports() / ("sweep-" + kind + ".csv")).string(),
                      attacks::results_to_csv(results));
  json jseries = json::array();
  for (const auto& r : results)
    jseries.push_back({{"attack_id", r.attack_id}, {"parameter", r.parameter}, {"BA", r.ba}, {"WSR", r.wsr}});
  write_report(rp, "sweep-" + kind + ".json", json{{"series", jseries}});
  prov.input("watermarked", wm_manifest);
  prov.commit();
  std::printf("sweep[%s]: %zu entries -> reports/sweep-%s.csv\n", kind.c_str(), results.size(),
              kind.c_str());
  return 0;
}

int stage_inspect(const json& cfg, const RunPaths& rp) {
  std::string name = cfg.at("name").get<std::string>();
  Provenance prov(rp, cfg, "inspect", name);
  data::Dataset ds = load_run_dataset(rp);
  watermark::WatermarkConfig wcfg = watermark_config_from(cfg);
  fs::path side_path = rp.watermarked(name) / "sidecar.json";
  require_artifact(side_path, "watermark");
  watermark::Sidecar side = watermark::load_sidecar(side_path.string());
  ApplierBundle bundle = load_applier(rp, name, wcfg.eps);
  data::Dataset wm = data::load_manifest((rp.watermarked(name) / "manifest.csv").string());

  std::shared_ptr<models::Classifier> backdoored;
  if (fs::exists(rp.backdoored(name)))
    backdoored = std::shared_ptr<models::Classifier>(
        models::load_classifier(rp.backdoored(name).string()));

  fs::path dir = rp.reports() / "inspect";
  fs::create_directories(dir);
  int count = cfg.at("inspect").at("count").get<int>();
  int written = 0;
  for (std::size_t i = 0; i < ds.samples.size() && written < count; ++i) {
    const data::ImageSample& s = ds.samples[i];
    if (!side.watermarked_ids.count(s.id)) continue;
    const Tensor& benign = s.pixels;
    const Tensor& marked = wm.samples[i].pixels;
    Tensor delta(benign.dims());
    for (std::int64_t j = 0; j < benign.numel(); ++j)
      delta.at(static_cast<std::size_t>(j)) =
          0.5f + (marked.at(static_cast<std::size_t>(j)) - benign.at(static_cast<std::size_t>(j))) /
                     (2.0f * static_cast<float>(wcfg.eps));
    Tensor high = saliency::normalize_cam(pyr::laplacian_highpass(marked));
    const Tensor& sal = bundle.saliency->for_sample(s);
    Tensor sal_big = img::bilinear_resize(sal, benign.dim(0), benign.dim(1));

    io::write_png_gray8((dir / (s.id + "-benign.png")).string(), benign);
    io::write_png_gray8((dir / (s.id + "-watermarked.png")).string(), marked);
    io::write_png_gray8((dir / (s.id + "-delta.png")).string(), delta);
    io::write_png_gray8((dir / (s.id + "-highpass.png")).string(), high);
    io::write_png_gray8((dir / (s.id + "-saliency.png")).string(), sal_big);
    if (backdoored) {
      int res = backdoored->trained_resolution();
      Tensor at_res = img::resize_with_padding(marked, res);
      Tensor acts = backdoored->final_conv_activations(at_res.reshaped({1, 1, res, res}));
      saliency::SaliencyMap cam =
          saliency::eigencam(acts.reshaped({acts.dim(1), acts.dim(2), acts.dim(3)}));
      io::write_png_gray8((dir / (s.id + "-cam-backdoored.png")).string(),
                          img::bilinear_resize(cam.values, benign.dim(0), benign.dim(1)));
    }
    ++written;
  }
  prov.note("written", written);
  prov.commit();
  std::printf("inspect: wrote %d sample panels -> %s\n", written, dir.string().c_str());
  return 0;
}

int stage_report(const json& cfg, const RunPaths& rp) {
  Provenance prov(rp, cfg, "report", "");
  json summary;
  summary["schema_version"] = 1;
  auto add_if = [&](const std::string& key, const fs::path& p) {
    if (fs::exists(p)) summary[key] = json::parse(io::read_text_file(p.string()));
  };
  add_if("metrics_surrogate", rp.reports() / "metrics-surrogate.json");
  add_if("metrics_benign", rp.reports() / "metrics-benign.json");
  add_if("metrics_backdoored", rp.reports() / "metrics-backdoored-main.json");
  add_if("metrics_backdoored_nolap", rp.reports() / "metrics-backdoored-nolap.json");
  add_if("generator_history", rp.reports() / "genhist-main.json");
  add_if("generator_history_indw", rp.reports() / "genhist-indw.json");
  add_if("generator_history_nolap", rp.reports() / "genhist-nolap.json");
  add_if("verify_malicious", rp.reports() / "verify-malicious.json");
  add_if("verify_ind_w", rp.reports() / "verify-ind-w.json");
  add_if("verify_ind_m", rp.reports() / "verify-ind-m.json");
  add_if("attack_finetune", rp.reports() / "attack-finetune.json");
  add_if("attack_prune", rp.reports() / "attack-prune.json");
  add_if("sweep_scale", rp.reports() / "sweep-scale.json");
  add_if("sweep_transfer", rp.reports() / "sweep-transfer.json");
  fs::path side = rp.watermarked(cfg.at("name").get<std::string>()) / "sidecar.json";
  add_if("watermark_sidecar", side);

  write_report(rp, "summary.json", summary);

  std::string md = "# Run summary\n\n";
  auto vline = [&](const std::string& label, const std::string& key) {
    if (!summary.contains(key)) return;
    const json& v = summary[key];
    md += "- " + label + ": dP=" + std::to_string(v.value("delta_p", 0.0)) +
          ", p=" + std::to_string(v.value("p_value", 1.0)) +
          ", decision=" + (v.value("decision", false) ? std::string("watermarked") : std::string("not proven")) +
          "\n";
  };
  if (summary.contains("metrics_benign"))
    md += "- benign BA: " +
          std::to_string(summary["metrics_benign"].value("benign_accuracy", 0.0)) + "%\n";
  if (summary.contains("metrics_backdoored"))
    md += "- backdoored BA: " +
          std::to_string(summary["metrics_backdoored"].value("benign_accuracy", 0.0)) + "%\n";
  vline("verify malicious", "verify_malicious");
  vline("verify ind-w", "verify_ind_w");
  vline("verify ind-m", "verify_ind_m");
  io::write_text_file((rp.reports() / "summary.md").string(), md);
  prov.commit();
  std::printf("report: reports/summary.json + summary.md\n");
  return 0;
}

}  // namespace

int run_subcommand(const std::string& subcommand, const json& cfg, const std::string& run_dir) {
  XM_CHECK(!run_dir.empty(), "run directory not set (use --run-dir or XMARK_RUN_DIR)");
  RunPaths rp{fs::path(run_dir)};
  fs::create_directories(rp.root);
  if (subcommand == "gen-data") return stage_gen_data(cfg, rp);
  if (subcommand == "train-surrogate") return stage_train_surrogate(cfg, rp);
  if (subcommand == "train-generator") return stage_train_generator(cfg, rp);
  if (subcommand == "watermark") return stage_watermark(cfg, rp);
  if (subcommand == "train-backdoor") return stage_train_backdoor(cfg, rp);
  if (subcommand == "verify") return stage_verify(cfg, rp);
  if (subcommand == "attack") return stage_attack(cfg, rp);
  if (subcommand == "sweep") return stage_sweep(cfg, rp);
  if (subcommand == "inspect") return stage_inspect(cfg, rp);
  if (subcommand == "report") return stage_report(cfg, rp);
  fail("unknown subcommand '", subcommand, "'");
}

}  // namespace xmark::cli
