#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "hqinf/harness/acceptance.hpp"
#include "hqinf/harness/config.hpp"
#include "hqinf/harness/experiments.hpp"
#include "hqinf/harness/report.hpp"

namespace fs = std::filesystem;
using namespace hqinf;
using namespace hqinf::harness;

int main(int argc, char** argv) {
  CLI::App app{"hqinflab: infinite-server queue limit experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> reps;
  std::optional<unsigned> threads;

  auto* run = app.add_subcommand("run", "run the experiment in a config file and write its report");
  run->add_option("--config", config_path, "experiment config (YAML)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "output directory")->required();
  run->add_option("--seed", seed, "override the master seed");
  run->add_option("--reps", reps, "override the replication count")->check(CLI::PositiveNumber);
  run->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);

  auto* surf = app.add_subcommand("surfaces", "write analytic surfaces for the config's model and grid");
  surf->add_option("--config", config_path, "experiment config (YAML)")->required()->check(CLI::ExistingFile);
  surf->add_option("--out", out_dir, "output directory")->required();

  unsigned self_threads = 1;
  auto* self = app.add_subcommand("selftest", "run the acceptance suite");
  self->add_option("--threads", self_threads, "worker threads")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      ExperimentConfig cfg = parse_config(config_path);
      if (seed) cfg.master_seed = *seed;
      if (reps) cfg.replications = *reps;
      if (threads) cfg.threads = *threads;
      const ExperimentReport report = run_experiment(cfg);
      emit(report, out_dir);
      std::cout << report.experiment << ": " << (report.verdict() ? "PASS" : "FAIL") << " (" << report.points.size()
                << " checks, " << report.failures() << " failed, " << report.runtime_seconds << " s) -> " << out_dir
                << '\n';
      return report.verdict() ? 0 : 1;
    }
    if (*surf) {
      const ExperimentConfig cfg = parse_config(config_path);
      fs::create_directories(out_dir);
      std::ofstream out(fs::path(out_dir) / "surfaces.csv", std::ios::binary);
      if (!out) throw std::runtime_error("cannot write " + (fs::path(out_dir) / "surfaces.csv").string());
      bool header = true;
      for (const auto& s : analytic_surfaces(cfg)) {
        write_field_csv(out, s, header);
        header = false;
      }
      std::cout << "surfaces -> " << (fs::path(out_dir) / "surfaces.csv").string() << '\n';
      return 0;
    }
    if (*self) return run_acceptance(std::cout, self_threads) ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "hqinflab: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
