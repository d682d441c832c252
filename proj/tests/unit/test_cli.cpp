#include "doctest.h"

#include "stdb/cli.hpp"
#include "stdb/errors.hpp"
#include "stdb/sde.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace stdb;
using namespace stdb::cli;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("stdb_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json run_in(const fs::path& dir, json doc, std::optional<std::uint64_t> seed = std::nullopt) {
  Config c(std::move(doc));
  return run(c, RunOptions{dir.string(), seed});
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

int code_of(const fs::path& dir, const json& doc) {
  try {
    run_in(dir, doc);
  } catch (const std::exception& e) {
    return exit_code_for(e);
  }
  return kExitOk;
}

}  // namespace

TEST_CASE("config validation maps to exit code 2") {
  const fs::path dir = scratch("validation");
  CHECK(code_of(dir, {{"command", "stats"}, {"bogus", 1}}) == kExitValidation);
  CHECK(code_of(dir, {{"command", "stats"}, {"n_steps", "many"}}) == kExitValidation);
  CHECK(code_of(dir, {{"command", "stats"}, {"schedule", "spiral"}}) == kExitValidation);
  CHECK(code_of(dir, {{"command", "dance"}}) == kExitValidation);
  CHECK(code_of(dir, {{"command", "simulate"}, {"mode", "doob"}}) == kExitValidation);
  CHECK(code_of(dir, {{"command", "stats"}, {"dim", 2}, {"x0", {1.0, 2.0, 3.0}}}) == kExitValidation);
  CHECK_THROWS_AS(Config(json{{"n_steps", 3}}), Error);
  CHECK_THROWS_AS(Config(json{{"command", "stats"}, {"nested", {{"a", 1}}}}), Error);
  // unknown keys are caught before anything is written
  CHECK_FALSE(fs::exists(dir / "config.json"));

  CHECK(exit_code_for(Error(ErrorCode::TrainingDiverged, "x")) == kExitNumeric);
  CHECK(exit_code_for(Error(ErrorCode::DivergedPath, "x")) == kExitNumeric);
  CHECK(exit_code_for(Error(ErrorCode::DimensionMismatch, "x")) == kExitValidation);
}

TEST_CASE("stats: Brownian bridge marginals and pinned endpoints") {
  const fs::path dir = scratch("stats");
  const json doc = run_in(dir, {{"command", "stats"}, {"x0", 0.0}, {"x1", 1.0}, {"times", {0.0, 0.5}}});
  const auto& m = doc["marginals"];
  REQUIRE(m.size() == 2);
  CHECK(m[0]["pinned"].get<bool>());
  CHECK(std::abs(m[0]["marginal"]["mean"][0].get<double>()) < 1e-12);
  CHECK_FALSE(m[1]["pinned"].get<bool>());
  CHECK(m[1]["marginal"]["mean"][0].get<double>() == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(m[1]["marginal"]["cov_lower"][0].get<double>() == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(m[1]["closed_form_max_abs_diff"].get<double>() < 1e-9);
  CHECK(fs::exists(dir / "forward_process.csv"));
}

TEST_CASE("stats: 8x8 Laplacian writes 64 eigenchannels") {
  const fs::path dir = scratch("stats_grid");
  const json doc = run_in(dir, {{"command", "stats"}, {"schedule", "laplacian"}, {"grid_rows", 8}, {"grid_cols", 8},
                                {"n_steps", 200}, {"times", {0.5}}});
  CHECK(doc["dim"].get<std::size_t>() == 64);
  CHECK(doc["eigenvalues"].size() == 64);
  std::ifstream in(dir / "eigenchannels.csv");
  std::string header;
  std::getline(in, header);
  CHECK(std::count(header.begin(), header.end(), ',') == 64);
  CHECK(doc["marginals"][0]["closed_form_max_abs_diff"].get<double>() < 1e-6);
}

TEST_CASE("simulate: deterministic per seed, mean inside the 3-sigma band") {
  const fs::path a = scratch("sim_a"), b = scratch("sim_b"), c = scratch("sim_c");
  const json cfg{{"command", "simulate"}, {"dim", 2}, {"n_paths", 2000}, {"n_steps", 100}, {"format", "both"},
                 {"x0", 0.5}, {"x1", -1.0}};
  const json sa = run_in(a, cfg, 7);
  run_in(b, cfg, 7);
  run_in(c, cfg, 8);
  CHECK(slurp(a / "trajectories.bin") == slurp(b / "trajectories.bin"));
  CHECK(slurp(a / "trajectories.csv") == slurp(b / "trajectories.csv"));
  CHECK(slurp(a / "trajectories.bin") != slurp(c / "trajectories.bin"));
  CHECK(sa["all_within_3sigma"].get<bool>());
  const TrajectoryBatch batch = read_trajectories_binary((a / "trajectories.bin").string());
  CHECK(batch.n_paths == 2000);
  CHECK(batch.n_saved() == 5);
}

TEST_CASE("simulate: zero diffusion with equal endpoints keeps paths constant") {
  const fs::path dir = scratch("sim_still");
  run_in(dir, {{"command", "simulate"}, {"dim", 3}, {"n_paths", 16}, {"n_steps", 50}, {"diffusion_scale", 0.0},
               {"x0", 0.7}, {"x1", 0.7}});
  const TrajectoryBatch batch = read_trajectories_binary((dir / "trajectories.bin").string());
  for (std::size_t s = 0; s < batch.n_saved(); ++s)
    CHECK((batch.at(s).array() - 0.7).abs().maxCoeff() < 1e-12);
}

TEST_CASE("config echo and version string") {
  const fs::path a = scratch("echo_a"), b = scratch("echo_b");
  run_in(a, {{"command", "stats"}, {"times", {0.25}}});
  CHECK(slurp(a / "version.txt") == version_string() + "\n");
  const json echoed = load(a / "config.json");
  CHECK(echoed["command"] == "stats");
  CHECK(echoed["schedule"] == "brownian");
  CHECK(echoed["n_steps"].get<std::size_t>() == 1000);
  // the echoed config reproduces the run
  run_in(b, echoed);
  CHECK(slurp(a / "stats.json") == slurp(b / "stats.json"));
  CHECK(slurp(a / "config.json") == slurp(b / "config.json"));
}

TEST_CASE("train with zero learning rate leaves the initialization; generate with zero steps copies p0 draws") {
  const fs::path tdir = scratch("train0");
  const json tc{{"command", "train"},  {"dataset", "gm2"},      {"n_data", 200},        {"hidden", {8}},
                {"epochs", 2},         {"steps_per_epoch", 3}, {"learning_rate", 0.0}, {"batch_size", 16},
                {"n_steps", 50},       {"seed", 11}};
  run_in(tdir, tc);
  const ScoreModel trained = load_checkpoint((tdir / "model.ckpt").string());
  ScoreModel fresh(2, {8}, Activation::SiLU, Objective::RT);
  fresh.initialize(11);
  CHECK((trained.net().params() - fresh.net().params()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(trained.metadata["learning_rate"].get<double>() == 0.0);

  const fs::path gdir = scratch("gen0");
  run_in(gdir, {{"command", "generate"}, {"checkpoint", (tdir / "model.ckpt").string()}, {"n_samples", 40},
                {"n_steps", 0}, {"seed", 5}});
  const Mat samples = read_samples_csv((gdir / "samples.csv").string());
  const LoadedModel loaded = load_model((tdir / "model.ckpt").string());
  CHECK((samples - loaded.p0.sample(40, 5)).cwiseAbs().maxCoeff() < 1e-12);

  // the FT scheme needs an FT checkpoint
  CHECK(code_of(scratch("gen_bad"), {{"command", "generate"},
                                     {"checkpoint", (tdir / "model.ckpt").string()},
                                     {"scheme", "ft"}}) == kExitValidation);
}

TEST_CASE("generate: oracle forward sampler lands on the target") {
  const fs::path dir = scratch("gen_oracle");
  const json doc = run_in(dir, {{"command", "generate"}, {"score", "oracle"}, {"dim", 2}, {"x1", {1.0, -2.0}},
                                {"n_samples", 200}, {"n_steps", 400}});
  CHECK(doc["sample_mean"][0].get<double>() == doctest::Approx(1.0).epsilon(0.02));
  CHECK(doc["sample_mean"][1].get<double>() == doctest::Approx(-2.0).epsilon(0.02));
}

TEST_CASE("evaluate: identical sets score zero; sweep writes one row per step count and seed") {
  const fs::path dir = scratch("eval");
  const Mat ref = make_dataset("gm2", 300, 4).data;
  write_samples_csv(ref, (dir / "ref.csv").string());
  const fs::path out = dir / "out";
  const json doc = run_in(out, {{"command", "evaluate"}, {"generated", (dir / "ref.csv").string()},
                                {"reference", (dir / "ref.csv").string()}});
  CHECK(std::abs(doc["energy_distance"].get<double>()) < 1e-12);
  CHECK(doc["sliced_wasserstein"].get<double>() < 1e-12);

  const fs::path tdir = dir / "model";
  run_in(tdir, {{"command", "train"}, {"n_data", 200}, {"hidden", {8}}, {"epochs", 1}, {"steps_per_epoch", 2},
                {"n_steps", 50}});
  const fs::path sdir = dir / "sweep";
  const json sw = run_in(sdir, {{"command", "evaluate"},
                                {"reference", (dir / "ref.csv").string()},
                                {"checkpoint_rt", (tdir / "model.ckpt").string()},
                                {"sweep_steps", {5, 10, 20}},
                                {"sweep_seeds", {1, 2}},
                                {"n_samples", 50}});
  CHECK(sw["sweep"].size() == 6);
  std::ifstream in(sdir / "sweep.csv");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 7);
  CHECK(sw["trend"]["rt"]["n_seeds"].get<std::size_t>() == 2);
  CHECK_FALSE(sw["trend"].contains("ft"));
}

TEST_CASE("elbo: zero-iteration search returns the initial family") {
  const fs::path dir = scratch("elbo0");
  const json doc = run_in(dir, {{"command", "elbo"}, {"mode", "search"}, {"objective", "evidence"}, {"n_data", 300},
                                {"max_iterations", 0}, {"family_params", {-0.5, 1.5}}});
  CHECK(doc["best"]["params"] == json({-0.5, 1.5}));
  CHECK(doc["best_elbo"]["value"].get<double>() == doc["initial_elbo"]["value"].get<double>());

  const json est = run_in(scratch("elbo_est"), {{"command", "elbo"}, {"n_data", 300}, {"n_mc", 200}, {"n_steps", 100}});
  CHECK(std::isfinite(est["elbo"]["value"].get<double>()));
  CHECK(est["elbo"]["n_samples"].get<std::size_t>() == 200);
}

#ifdef STDB_CLI_PATH
TEST_CASE("stdb executable: exit codes and command check") {
  const fs::path dir = scratch("exe");
  const auto write = [&](const std::string& name, const json& doc) {
    std::ofstream(dir / name) << doc.dump();
    return (dir / name).string();
  };
  const auto exec = [&](const std::string& args) {
    const std::string cmd = std::string(STDB_CLI_PATH) + " " + args + " > " + (dir / "log.txt").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };
  const std::string ok = write("ok.json", {{"command", "stats"}, {"times", {0.5}}});
  CHECK(exec("stats --config " + ok + " --out " + (dir / "o").string()) == 0);
  CHECK(fs::exists(dir / "o" / "stats.json"));
  CHECK(exec("simulate --config " + ok) == 2);
  CHECK(exec("stats --config " + write("bad.json", {{"command", "stats"}, {"colour", "red"}})) == 2);
  CHECK(exec("stats") == 2);
  CHECK(exec("stats --config " + (dir / "missing.json").string()) == 2);
  std::ofstream(dir / "broken.json") << "{\"command\": ";
  CHECK(exec("stats --config " + (dir / "broken.json").string()) == 2);
}
#endif
