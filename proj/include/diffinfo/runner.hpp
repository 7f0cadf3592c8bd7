#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace diffinfo::runner {

// CLI exit codes.
constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitNumericalError = 3;

struct RunnerOptions {
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> out_override;
  std::optional<int> threads_override;
};

nlohmann::json load_config(const std::string& path);

/// Schema check; returns one message per violation, each naming the offending
/// field path. Empty means valid.
std::vector<std::string> validate_config(const nlohmann::json& config);

/// Executes the experiment named by config["experiment"], writing outputs and
/// a hashed manifest into the output directory. In reproducibility mode a
/// pre-existing manifest is verified against the fresh outputs and any
/// mismatch raises NumericalError.
void run_experiment(const nlohmann::json& config, const RunnerOptions& opts = {});

/// Render the totals stored in a manifest for human consumption.
std::string report_manifest(const std::string& manifest_path);

std::string sha256_file(const std::string& path);

}  // namespace diffinfo::runner
