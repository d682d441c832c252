#include "stdb/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace stdb::cli;
  CLI::App app{"Schrodinger-type bridge diffusion toolkit", "stdb"};
  std::string command, config_path;
  RunOptions options;
  std::uint64_t seed = 0;
  app.add_option("command", command, "stats | simulate | train | generate | evaluate | elbo")->required();
  app.add_option("--config", config_path, "flat JSON config with a \"command\" field")->required();
  app.add_option("--out", options.out_dir, "output directory");
  auto* seed_opt = app.add_option("--seed", seed, "overrides the config seed");
  app.set_version_flag("--version", version_string());
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }
  if (*seed_opt) options.seed = seed;

  try {
    Config config = Config::from_file(config_path);
    if (config.command() != command) {
      std::cerr << "error: command '" << command << "' does not match config command '" << config.command() << "'\n";
      return kExitValidation;
    }
    std::cout << "config: " << config_path << "\n";
    const nlohmann::json summary = run(config, options);
    std::cout << "resolved config:\n" << config.resolved().dump(2) << "\n";
    std::cout << summary.dump(2) << "\n" << version_string() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}
