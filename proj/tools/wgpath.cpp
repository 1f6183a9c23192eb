// Command-line experiment runner.

#include "wgpath/experiment.hpp"
#include "wgpath/json_util.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>

using namespace wgpath;

int main(int argc, char** argv) {
  CLI::App app{"Wasserstein gradient-flow paths with normalizing flows"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  auto* run = app.add_subcommand("run", "Train, evaluate and validate an experiment");
  run->add_option("config", config, "Preset name or JSON config file")->required();
  run->add_option("--seed", seed, "Override the experiment seed");
  run->add_option("--out", out, "Run directory (default: output_dir of the config)");

  std::string dir;
  auto* vonly = app.add_subcommand("validate-only", "Re-run the checks of a saved run");
  vonly->add_option("run_dir", dir)->required();
  auto* rtime = app.add_subcommand("recover-time", "Recompute the physical timeline of a saved run");
  rtime->add_option("run_dir", dir)->required();
  auto* cmp = app.add_subcommand("compare-meshes", "Uniform versus recovered physical-time mesh");
  cmp->add_option("run_dir", dir)->required();

  std::string shown;
  auto* show = app.add_subcommand("show-config", "Print the canonical form of a preset or config");
  show->add_option("config", shown)->required();
  auto* list = app.add_subcommand("presets", "List the built-in presets");

  CLI11_PARSE(app, argc, argv);

  if (const char* threads = std::getenv("WGPATH_THREADS")) {
    std::cerr << "WGPATH_THREADS=" << threads << " (this build runs single-threaded)\n";
  }

  try {
    if (*run) {
      ExperimentConfig cfg = load_experiment(config);
      if (seed) cfg.seed = *seed;
      const auto res = run_experiment(cfg, out.empty() ? cfg.output_dir : out, std::cerr);
      std::cout << (res.validation.pass() ? "PASS" : "FAIL") << " " << res.dir << "\n";
      return res.exit_code();
    }
    if (*vonly) {
      bool same = false;
      const auto rep = revalidate(dir, same);
      for (const auto& c : rep.checks) std::cout << (c.pass ? "PASS " : "FAIL ") << c.spec.kind << "\n";
      std::cout << "stored report " << (same ? "reproduced" : "differs") << "\n";
      return rep.pass() ? 0 : 1;
    }
    if (*rtime) {
      const auto tl = recover_run_time(dir);
      std::cout << to_json(tl).dump(2) << "\n";
      return 0;
    }
    if (*cmp) {
      const auto res = compare_run_meshes(dir, std::cerr);
      std::cout << res.to_json().dump(2) << "\n";
      return res.recovered_not_worse() ? 0 : 1;
    }
    if (*show) {
      std::cout << canonical_dump(load_experiment(shown));
      return 0;
    }
    if (*list) {
      for (const auto& n : preset_names()) std::cout << n << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
