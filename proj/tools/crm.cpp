#include "crm/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Finite-grid position operators in the Bloch representation"};
  app.require_subcommand(1);

  std::string config;
  crm::cli::RunOptions opts;
  std::string output;
  std::uint64_t seed = 0;
  auto* run = app.add_subcommand("run", "Validate a JSON config and execute its task");
  run->add_option("config", config, "Path to the JSON config")->required();
  auto* out_opt = run->add_option("-o,--output", output, "Output directory (overrides config and CRM_OUTPUT_DIR)");
  auto* seed_opt = run->add_option("-s,--seed", seed, "Seed override");
  run->add_option("-j,--workers", opts.workers, "Worker threads")->check(CLI::PositiveNumber);
  run->add_flag("-v,--verbose", opts.verbosity, "Print task messages and written files");

  auto* presets = app.add_subcommand("presets", "List the shipped model presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : crm::cli::exit_config;
  }

  if (presets->parsed()) {
    std::cout << crm::cli::list_presets();
    return crm::cli::exit_ok;
  }

  if (*out_opt) opts.output_dir = output;
  if (*seed_opt) opts.seed = seed;
  const crm::cli::RunOutcome r = crm::cli::run_file(config, opts);
  if (r.exit_code != crm::cli::exit_ok) {
    std::cerr << "error: " << r.error << "\n";
    return r.exit_code;
  }
  for (const auto& m : r.messages) std::cout << m << "\n";
  if (opts.verbosity > 0) {
    for (const auto& f : r.files) std::cout << "wrote " << f << "\n";
  }
  return crm::cli::exit_ok;
}
