#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "diffinfo/common.hpp"
#include "diffinfo/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"diffinfo: information-flow measurement for diffusion generative processes"};
  app.require_subcommand(1);

  std::string config_path, manifest_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  int threads = 0;

  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  run->add_option("config", config_path, "path to the experiment config (JSON)")->required();
  auto* seed_opt = run->add_option("--seed", seed, "override the master seed");
  auto* out_opt = run->add_option("--out", out_dir, "override the output directory");
  auto* threads_opt = run->add_option("--threads", threads, "worker slots for experiment cells");

  auto* validate = app.add_subcommand("validate", "Check a config against its schema");
  validate->add_option("config", config_path, "path to the experiment config (JSON)")->required();

  auto* report = app.add_subcommand("report", "Pretty-print the totals of a run manifest");
  report->add_option("manifest", manifest_path, "path to manifest.json")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate->parsed()) {
      const auto errors = diffinfo::runner::validate_config(
          diffinfo::runner::load_config(config_path));
      if (errors.empty()) {
        std::cout << "ok\n";
        return diffinfo::runner::kExitOk;
      }
      for (const auto& e : errors) std::cerr << e << "\n";
      return diffinfo::runner::kExitConfigError;
    }
    if (report->parsed()) {
      std::cout << diffinfo::runner::report_manifest(manifest_path);
      return diffinfo::runner::kExitOk;
    }

    diffinfo::runner::RunnerOptions opts;
    if (!seed_opt->empty()) opts.seed_override = seed;
    if (!out_opt->empty()) opts.out_override = out_dir;
    if (!threads_opt->empty()) opts.threads_override = threads;
    diffinfo::runner::run_experiment(diffinfo::runner::load_config(config_path), opts);
    return diffinfo::runner::kExitOk;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return diffinfo::runner::kExitConfigError;
  } catch (const diffinfo::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return diffinfo::runner::kExitNumericalError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return diffinfo::runner::kExitConfigError;
  }
}
