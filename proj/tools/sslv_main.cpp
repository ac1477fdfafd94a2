#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sslv/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised surgical-video learning experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir, baseline;
  int64_t seed_override = -1;
  std::vector<std::string> run_dirs;

  auto* run = app.add_subcommand("run", "Run an experiment from a config file");
  run->add_option("-c,--config", config_path, "TOML config file")->required();
  run->add_option("--seed-override", seed_override, "Run only this seed");
  run->add_option("--out", out_dir, "Override the output directory");

  auto* compare = app.add_subcommand("compare", "Compare finished run directories");
  compare->add_option("dirs", run_dirs, "Run directories with aggregate.csv")
      ->required()
      ->expected(-1);
  compare->add_option("--baseline", baseline, "Baseline method name");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (run->parsed())
    return sslv::cli::main_run(config_path, out_dir, seed_override, std::cout,
                               std::cerr);
  return sslv::cli::main_compare(run_dirs, baseline, std::cout, std::cerr);
}
