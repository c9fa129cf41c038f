// xmark: clean-label watermarking and dataset-ownership verification pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>

#include "xmark/cli/pipeline.hpp"
#include "xmark/core/error.hpp"

int main(int argc, char** argv) {
  CLI::App app{"xmark: sample-specific clean-label dataset watermarking"};
  app.require_subcommand(1);

  std::string config_path;
  std::string run_dir;
  std::vector<std::string> overrides;
  long long seed = -1;
  bool have_seed = false;

  const char* env_dir = std::getenv("XMARK_RUN_DIR");
  if (env_dir) run_dir = env_dir;

  std::vector<CLI::App*> subs;
  for (const std::string& name : xmark::cli::subcommands()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--set", overrides, "override a config key, e.g. --set watermark.gamma=0.2");
    sub->add_option("--run-dir", run_dir, "run directory (default: $XMARK_RUN_DIR)");
    sub->add_option("--seed", seed, "global seed mixed into every stage seed")
        ->each([&](const std::string&) { have_seed = true; });
    subs.push_back(sub);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    nlohmann::json cfg = xmark::cli::load_run_config(config_path, overrides);
    if (have_seed) cfg["seed"] = seed;
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (subs[i]->parsed())
        return xmark::cli::run_subcommand(xmark::cli::subcommands()[i], cfg, run_dir);
    }
  } catch (const xmark::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 1;
}
