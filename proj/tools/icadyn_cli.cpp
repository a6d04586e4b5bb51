#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "icadyn/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"online ICA dynamics: simulation, mean-field prediction, phase analysis"};
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  int threads = 0;
  app.add_option("--config", config_path, "experiment config (JSON)")->required();
  auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
  auto* out_opt = app.add_option("--out", out_dir, "override the output directory");
  auto* thr_opt = app.add_option("--threads", threads, "worker threads");
  CLI11_PARSE(app, argc, argv);

  try {
    icadyn::json raw;
    try {
      raw = icadyn::read_json(config_path);
    } catch (const nlohmann::json::exception& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return 2;
    } catch (const std::runtime_error& e) {
      // unreadable config file: still the user's config, not a runtime fault
      std::cerr << "config error: " << e.what() << '\n';
      return 2;
    }
    icadyn::ExperimentConfig cfg = icadyn::ExperimentConfig::parse(raw);
    if (thr_opt->count() > 0) {
      if (threads < 1) throw icadyn::ConfigError("threads", "must be at least 1");
      cfg.threads = threads;
    }
    if (const char* env = std::getenv("ICADYN_OUTPUT_DIR")) cfg.output_dir = env;
    if (out_opt->count() > 0) cfg.output_dir = out_dir;
    if (seed_opt->count() > 0) cfg.seed = seed;

    icadyn::CommandResult res = icadyn::run_command(cfg);
    std::cout << cfg.command << ": wrote " << res.outputs.size() << " artifact(s) to "
              << cfg.output_dir << '\n';
    return 0;
  } catch (const icadyn::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
