// gradmix: run an experiment grid or export its tables.
//
//   gradmix run --config configs/full_grid.json --out out/full_grid --jobs 4
//   gradmix export --out out/full_grid --table

#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gradmix/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Few-shot cross-lingual transfer with stochastic gradient surgery"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::size_t jobs = 1;
  auto* run = app.add_subcommand("run", "Run every cell of an experiment config");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  std::string export_dir;
  bool table = false;
  auto* exp = app.add_subcommand("export", "Re-emit tables and similarity CSVs from a finished run");
  exp->add_option("--out", export_dir, "Output directory of a previous run")->required();
  exp->add_flag("--table", table, "Print the strategy x K summary table");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto cfg = gradmix::load_experiment_config(config_path);
      const auto result = gradmix::run_experiment(cfg, out_dir, jobs, &std::cerr);
      std::cerr << result.succeeded << "/" << result.cells << " cells succeeded\n";
      for (const auto& f : result.failures) std::cerr << "failed: " << f.cell << ": " << f.message << '\n';
      return result.exit_code();
    }
    const auto text = gradmix::export_artifacts(export_dir, {table});
    if (table) std::cout << text;
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "gradmix: " << e.what() << '\n';
    return 2;
  }
}
