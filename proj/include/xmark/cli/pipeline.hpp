#pragma once

#include <json.hpp>

#include <string>
#include <vector>

namespace xmark::cli {

// Full default run configuration (toy data, desk-scale models).
nlohmann::json default_config();

// Load (or default), apply --set overrides, then strict-validate: unknown keys
// are rejected with their full path.
nlohmann::json load_run_config(const std::string& config_path,
                               const std::vector<std::string>& overrides);

void validate_config(const nlohmann::json& cfg);

// Executes one pipeline stage against the run directory. Throws xmark::Error
// on misconfiguration or missing upstream artifacts; returns the process exit
// code otherwise.
int run_subcommand(const std::string& subcommand, const nlohmann::json& cfg,
                   const std::string& run_dir);

const std::vector<std::string>& subcommands();

}  // namespace xmark::cli
