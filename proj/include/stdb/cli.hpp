#pragma once

#include "stdb/affine_opt.hpp"
#include "stdb/bridge.hpp"
#include "stdb/datasets.hpp"
#include "stdb/laplacian.hpp"
#include "stdb/score.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace stdb::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumeric = 3;

std::string version_string();
std::vector<std::string> command_names();

/// Flat JSON run configuration. Every key that is read is recorded in
/// resolved() together with the default used when it was absent, so the
/// echoed config reproduces the run. Keys never read are rejected.
class Config {
 public:
  explicit Config(nlohmann::json doc);
  static Config from_file(const std::string& path);

  const std::string& command() const noexcept { return command_; }
  bool has(const std::string& key) const { return doc_.contains(key); }

  double number(const std::string& key, double fallback);
  double number(const std::string& key);
  std::uint64_t integer(const std::string& key, std::uint64_t fallback);
  std::uint64_t integer(const std::string& key);
  std::string text(const std::string& key, const std::string& fallback);
  std::string text(const std::string& key);
  bool flag(const std::string& key, bool fallback);
  std::vector<double> numbers(const std::string& key, const std::vector<double>& fallback);
  std::vector<std::size_t> counts(const std::string& key, const std::vector<std::size_t>& fallback);
  // A number is broadcast to `dim` entries; an array must have `dim` entries.
  Vec vector(const std::string& key, std::size_t dim, double fallback);
  // Any JSON value, recorded as given.
  nlohmann::json raw(const std::string& key, const nlohmann::json& fallback);

  void override_value(const std::string& key, const nlohmann::json& value);
  // Throws InvalidArgument naming every key that was not read.
  void reject_unknown() const;
  nlohmann::json resolved() const;

 private:
  const nlohmann::json* lookup(const std::string& key);
  [[noreturn]] void bad_type(const std::string& key, const char* expected) const;

  nlohmann::json doc_;
  nlohmann::json resolved_ = nlohmann::json::object();
  std::string command_;
  std::set<std::string> used_;
};

/// Bridge family named by the config keys "schedule", "dim", "grid_rows",
/// "grid_cols", "diffusion_scale", "drift", "diffusion", "offset",
/// "schedule_file", "n_steps", "epsilon".
///   brownian   Abar = I/(1-t) (direct);   basic process A = 0
///   laplacian  Abar = L/(1-t) (direct);   no basic process
///   constant   Doob bridge of dx = (A x + c) dt + dW
///   custom-file Doob bridge of a tabulated basic process
struct BridgeSetup {
  std::string schedule;
  std::size_t dim = 0;
  std::size_t n_steps = 1000;
  double epsilon = 1e-3;
  std::shared_ptr<const BridgeDrift> drift;
  std::optional<DriftSchedule> basic;
  std::optional<GridLaplacian> laplacian;

  TimeGrid pinned_grid() const { return TimeGrid::pinned(n_steps, epsilon); }
};

BridgeSetup parse_bridge(Config& config, std::size_t default_dim);
// Basic process dx = (A x + c) dt + dW for "brownian", "constant", "custom-file".
DriftSchedule parse_basic(Config& config, const std::string& schedule, std::size_t dim);
InitialDistribution parse_p0(Config& config, std::size_t dim);
// "data_file" (CSV) or "dataset" with "n_data" and "data_seed".
SampleSet parse_data(Config& config, const std::string& count_key = "n_data", std::size_t default_count = 20000,
                     const std::string& seed_key = "data_seed", std::uint64_t default_seed = 1);

/// Samples of the generative SDE of a trained model:
///   FT: x(eps) ~ p0, forward to 1 - eps with pin = x(0);
///   RT: x(1 - eps) ~ p0, reverse to eps with pin = x(1).
/// n_steps = 0 returns the initial draws.
Mat generate_with_model(std::shared_ptr<const ScoreFunction> score, const BridgeSetup& bridge,
                        const InitialDistribution& p0, Objective scheme, std::size_t n_samples, std::size_t n_steps,
                        double epsilon, std::uint64_t seed);

/// Rebuilds the bridge and p0 a checkpoint was trained with.
struct LoadedModel {
  std::shared_ptr<const ScoreModel> model;
  BridgeSetup bridge;
  InitialDistribution p0;
};
LoadedModel load_model(const std::string& checkpoint);

struct RunOptions {
  std::string out_dir = "stdb_out";
  std::optional<std::uint64_t> seed;
};

/// Runs one command, writes its artifacts plus config.json and version.txt
/// under out_dir, and returns a summary of the results.
nlohmann::json run(Config& config, const RunOptions& options);

/// Exit code for an exception escaping run().
int exit_code_for(const std::exception& e);

}  // namespace stdb::cli
