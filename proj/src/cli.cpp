#include "stdb/cli.hpp"

#include "stdb/errors.hpp"
#include "stdb/sde.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace stdb::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool is_count(const json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0); }

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::Io, "cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const json& doc) { open_out(path) << doc.dump(2) << "\n"; }

json to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

fs::path prepare(const RunOptions& options, const Config& config) {
  const fs::path dir(options.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorCode::Io, "cannot create output directory " + dir.string());
  write_json(dir / "config.json", config.resolved());
  open_out(dir / "version.txt") << version_string() << "\n";
  return dir;
}

Mat replicate(const Vec& v, std::size_t n) { return v.replicate(1, static_cast<Eigen::Index>(n)); }

std::size_t square_side(std::size_t dim) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(dim))));
  return side * side == dim ? side : 0;
}

Mat simulate_generative(const std::shared_ptr<const ScoreFunction>& score, const BridgeSetup& bridge,
                        const Mat& initial, const Mat& pins, Objective scheme, std::size_t n_steps, double epsilon,
                        std::uint64_t seed) {
  if (n_steps == 0) return initial;
  const TimeGrid grid = TimeGrid::interior(n_steps, epsilon);
  if (scheme == Objective::FT) {
    const ScoreDriftField field(score, bridge.drift, Direction::Forward);
    return simulate_forward(field, initial, pins, grid, seed).final_states();
  }
  const ScoreDriftField field(score, bridge.drift, Direction::Reverse);
  return simulate_reverse(field, initial, pins, grid, seed).final_states();
}

// ---------------------------------------------------------------------------

json cmd_stats(Config& c, const RunOptions& options) {
  const BridgeSetup b = parse_bridge(c, 1);
  const double eps = b.epsilon;
  const std::vector<double> times = c.numbers("times", {0.0, 0.25, 0.5, 0.75, 1.0 - eps});
  const Vec x0 = c.vector("x0", b.dim, 0.0), x1 = c.vector("x1", b.dim, 1.0);
  c.reject_unknown();
  const fs::path dir = prepare(options, c);

  const BridgeSpec spec{b.drift, x0, x1, b.pinned_grid()};
  spec.validate();
  std::optional<EigenBasis> basis;
  if (b.laplacian) basis = eigendecompose(*b.laplacian);

  json marginals = json::array();
  std::ostringstream channels, frames;
  if (basis) {
    channels << "t";
    for (std::size_t i = 0; i < b.dim; ++i) channels << ",ch" << i;
    channels << "\n";
  }
  frames << "t,noise_scale";
  for (std::size_t i = 0; i < b.dim; ++i) frames << ",mean_" << i;
  frames << "\n";
  for (double t : times) {
    const GaussianMarginal m = bridge_marginal(spec, t);
    json entry{{"t", t}, {"pinned", m.degenerate}, {"marginal", marginal_to_json(m)}};
    std::optional<GaussianMarginal> exact;
    if (b.schedule == "brownian") {
      const double scale = b.drift->at(0.0).diffusion(0, 0);
      const auto k = static_cast<Eigen::Index>(b.dim);
      exact = make_gaussian((1 - t) * x0 + t * x1, scale * t * (1 - t) * Mat::Identity(k, k));
    } else if (basis) {
      exact = laplacian_bridge_closed_form(*basis, x0, x1, t);
    }
    if (exact) {
      entry["closed_form_max_abs_diff"] =
          std::max((m.mean - exact->mean).cwiseAbs().maxCoeff(), (m.cov - exact->cov).cwiseAbs().maxCoeff());
    }
    marginals.push_back(entry);
    if (basis) {
      channels << g17(t);
      for (Eigen::Index i = 0; i < basis->values.size(); ++i)
        channels << "," << g17(laplacian_channel_variance(basis->values[i], t));
      channels << "\n";
    }
    frames << g17(t) << "," << g17(std::sqrt(std::max(0.0, m.cov.trace() / static_cast<double>(b.dim))));
    for (Eigen::Index i = 0; i < m.mean.size(); ++i) frames << "," << g17(m.mean[i]);
    frames << "\n";
  }
  json doc{{"schedule", b.schedule}, {"dim", b.dim}, {"x0", to_json(x0)}, {"x1", to_json(x1)},
           {"marginals", marginals}};
  if (basis) {
    doc["eigenvalues"] = to_json(basis->values);
    open_out(dir / "eigenchannels.csv") << channels.str();
  }
  open_out(dir / "forward_process.csv") << frames.str();
  write_json(dir / "stats.json", doc);
  return doc;
}

json cmd_simulate(Config& c, const RunOptions& options) {
  const BridgeSetup b = parse_bridge(c, 1);
  const std::size_t n_paths = c.integer("n_paths", 10000);
  const Vec x0 = c.vector("x0", b.dim, 0.0), x1 = c.vector("x1", b.dim, 1.0);
  const std::vector<double> save_times = c.numbers("save_times", {0.25, 0.5, 0.75});
  const std::string mode = c.text("mode", "bridge");
  const std::string format = c.text("format", "binary");
  const std::uint64_t seed = c.integer("seed", 0);
  require(n_paths >= 2, ErrorCode::InvalidArgument, "n_paths must be at least 2");
  require(format == "csv" || format == "binary" || format == "both", ErrorCode::InvalidArgument,
          "format must be csv, binary or both");
  std::unique_ptr<DriftField> field;
  if (mode == "bridge") {
    field = std::make_unique<BridgeDriftField>(b.drift);
  } else if (mode == "doob") {
    const auto doob = std::dynamic_pointer_cast<const DoobBridgeDrift>(b.drift);
    require(doob != nullptr, ErrorCode::InvalidArgument,
            "mode 'doob' needs a basic-process schedule (constant or custom-file)");
    field = std::make_unique<DoobDriftField>(doob);
  } else {
    fail(ErrorCode::InvalidArgument, "mode must be bridge or doob, got '" + mode + "'");
  }
  c.reject_unknown();
  const fs::path dir = prepare(options, c);

  const TimeGrid grid = b.pinned_grid();
  SimulationOptions so;
  // Requested times snap to the nearest node; summaries use the node time.
  for (double t : save_times) {
    require(t >= 0.0 && t <= grid.t_end(), ErrorCode::DomainError,
            "save time " + g17(t) + " lies outside [0, " + g17(grid.t_end()) + "]");
    so.save_times.push_back(grid.time(static_cast<std::size_t>(std::llround(t / grid.step()))));
  }
  const TrajectoryBatch batch = simulate_forward(*field, replicate(x0, n_paths), replicate(x1, n_paths), grid, seed, so);
  if (format != "binary") write_trajectories_csv(batch, (dir / "trajectories.csv").string());
  if (format != "csv") write_trajectories_binary(batch, (dir / "trajectories.bin").string());

  const BridgeSpec spec{b.drift, x0, x1, grid};
  const double s = static_cast<double>(n_paths);
  std::ostringstream csv;
  csv << "t,coord,mean,exact_mean,abs_dev,mean_3sigma,within_3sigma,var,exact_var,var_3sigma\n";
  double worst = 0.0;
  bool all_within = true;
  for (std::size_t i = 0; i < batch.n_saved(); ++i) {
    const double t = batch.times[i];
    const Mat x = batch.at(i);
    const GaussianMarginal exact = bridge_marginal(spec, t);
    const Vec mean = x.rowwise().mean();
    const Vec var = (x.colwise() - mean).array().square().rowwise().sum() / (s - 1.0);
    for (Eigen::Index r = 0; r < mean.size(); ++r) {
      const double ev = exact.cov(r, r);
      const double dev = std::abs(mean[r] - exact.mean[r]);
      const double band = 3.0 * std::sqrt(ev / s);
      const bool within = dev <= band + 1e-12 * (1.0 + std::abs(exact.mean[r]));
      worst = std::max(worst, dev);
      // the pinned start and the clipped end carry discretization bias, not sampling error
      if (i > 0 && i + 1 < batch.n_saved()) all_within = all_within && within;
      csv << g17(t) << "," << r << "," << g17(mean[r]) << "," << g17(exact.mean[r]) << "," << g17(dev) << ","
          << g17(band) << "," << (within ? 1 : 0) << "," << g17(var[r]) << "," << g17(ev) << ","
          << g17(3.0 * ev * std::sqrt(2.0 / (s - 1.0))) << "\n";
    }
  }
  open_out(dir / "summary.csv") << csv.str();
  json doc{{"n_paths", n_paths}, {"saved_times", batch.times}, {"max_abs_mean_dev", worst},
           {"all_within_3sigma", all_within}};
  write_json(dir / "simulate.json", doc);
  return doc;
}

json cmd_train(Config& c, const RunOptions& options) {
  const SampleSet data = parse_data(c);
  const BridgeSetup b = parse_bridge(c, data.dim());
  require(b.dim == data.dim(), ErrorCode::DimensionMismatch,
          "schedule dimension " + std::to_string(b.dim) + " differs from data dimension " + std::to_string(data.dim()));
  const InitialDistribution p0 = parse_p0(c, b.dim);
  const Objective objective = objective_from_string(c.text("objective", "rt"));
  const std::vector<std::size_t> hidden = c.counts("hidden", {128, 128});
  const Activation activation = activation_from_string(c.text("activation", "silu"));
  const Weighting weighting = weighting_from_string(c.text("weighting", "unit"));
  TrainConfig tc;
  tc.batch_size = c.integer("batch_size", tc.batch_size);
  tc.learning_rate = c.number("learning_rate", tc.learning_rate);
  tc.epochs = c.integer("epochs", tc.epochs);
  tc.steps_per_epoch = c.integer("steps_per_epoch", tc.steps_per_epoch);
  tc.final_lr_fraction = c.number("final_lr_fraction", tc.final_lr_fraction);
  tc.seed = c.integer("seed", 0);
  tc.validate();
  c.reject_unknown();
  const fs::path dir = prepare(options, c);

  const auto table = std::make_shared<const BridgeMarginalTable>(b.drift, b.pinned_grid());
  const BridgeBatchSource source(table, objective, data.data, p0, weighting);
  ScoreModel model(b.dim, hidden, activation, objective);
  model.initialize(tc.seed);
  model.metadata = c.resolved();
  const TrainResult r = train(model, source, tc);
  save_checkpoint(model, (dir / "model.ckpt").string());

  std::ostringstream csv;
  csv << "epoch,loss\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) csv << e << "," << g17(r.epoch_loss[e]) << "\n";
  open_out(dir / "loss.csv") << csv.str();
  json doc{{"objective", to_string(objective)},
           {"pin", objective == Objective::FT ? "x0" : "x1"},
           {"pin_dim", b.dim},
           {"n_params", model.net().n_params()},
           {"initial_loss", r.initial_loss},
           {"final_loss", r.epoch_loss.empty() ? r.initial_loss : r.epoch_loss.back()},
           {"epoch_loss", r.epoch_loss}};
  write_json(dir / "train.json", doc);
  return doc;
}

json cmd_generate(Config& c, const RunOptions& options) {
  const std::string mode = c.text("score", "model");
  const std::uint64_t seed = c.integer("seed", 0);
  const std::size_t n_samples = c.integer("n_samples", 2000);
  require(n_samples > 0, ErrorCode::InvalidArgument, "n_samples must be positive");

  std::shared_ptr<const ScoreFunction> score;
  BridgeSetup bridge;
  InitialDistribution p0;
  Objective scheme = Objective::RT;
  std::optional<Vec> fixed_pin;
  std::size_t n_steps = 0;
  double epsilon = 0.0;
  if (mode == "model") {
    LoadedModel loaded = load_model(c.text("checkpoint"));
    scheme = objective_from_string(c.text("scheme", to_string(loaded.model->objective())));
    require(scheme == loaded.model->objective(), ErrorCode::InvalidArgument,
            "scheme " + to_string(scheme) + " needs a " + to_string(scheme) + "-trained checkpoint");
    n_steps = c.integer("n_steps", loaded.bridge.n_steps);
    epsilon = c.number("epsilon", loaded.bridge.epsilon);
    score = loaded.model;
    bridge = std::move(loaded.bridge);
    p0 = std::move(loaded.p0);
  } else if (mode == "oracle") {
    bridge = parse_bridge(c, 1);
    n_steps = bridge.n_steps;
    epsilon = bridge.epsilon;
    p0 = parse_p0(c, bridge.dim);
    scheme = objective_from_string(c.text("scheme", "ft"));
    const auto drift = bridge.drift;
    if (scheme == Objective::FT) {
      // grad log p(x1 | x(t)) towards the fixed endpoint x1, passed as the pin
      fixed_pin = c.vector("x1", bridge.dim, 1.0);
      score = std::make_shared<LambdaScore>(bridge.dim, [drift](double t, const Mat& x, const Mat& pin) {
        const AffineTarget m = drift->ft_target_map(t);
        Mat out = m.state * x + m.pin * pin;
        out.colwise() += m.constant;
        return out;
      });
    } else {
      // grad log p(x(t) | x0, x1) for the fixed start x0
      const Vec x0 = c.vector("x0", bridge.dim, 0.0);
      const TimeGrid grid = bridge.pinned_grid();
      score = std::make_shared<LambdaScore>(bridge.dim, [drift, grid, x0](double t, const Mat& x, const Mat& pin) {
        const BridgeMoments m = bridge_moments_at(*drift, grid, t);
        Mat centred = x - m.pin_map * pin;
        centred.colwise() -= m.omega * x0 + m.offset;
        return (-m.cov.ldlt().solve(centred)).eval();
      });
    }
  } else {
    fail(ErrorCode::InvalidArgument, "score must be model or oracle, got '" + mode + "'");
  }
  const std::size_t side = square_side(bridge.dim);
  const std::size_t n_images = bridge.dim == 64 ? c.integer("n_images", 16) : 0;
  c.reject_unknown();
  const fs::path dir = prepare(options, c);

  const Mat initial = p0.sample(n_samples, seed);
  const Mat pins = fixed_pin ? replicate(*fixed_pin, n_samples) : initial;
  const Mat samples = simulate_generative(score, bridge, initial, pins, scheme, n_steps, epsilon, seed);
  write_samples_csv(samples, (dir / "samples.csv").string());
  if (n_images > 0) {
    fs::create_directories(dir / "images");
    for (std::size_t i = 0; i < std::min<std::size_t>(n_images, n_samples); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "sample_%03zu.pgm", i);
      write_pgm(samples.col(static_cast<Eigen::Index>(i)), side, side, (dir / "images" / name).string());
    }
  }
  json doc{{"scheme", to_string(scheme)},
           {"score", mode},
           {"n_samples", n_samples},
           {"n_steps", n_steps},
           {"sample_mean", to_json(samples.rowwise().mean())}};
  write_json(dir / "generate.json", doc);
  return doc;
}

json cmd_evaluate(Config& c, const RunOptions& options) {
  const std::uint64_t seed = c.integer("seed", 0);
  const SampleSet reference = c.has("reference") ? SampleSet{read_samples_csv(c.text("reference")), "reference", 0}
                                                 : parse_data(c, "n_reference", 2000, "reference_seed", 2);
  const std::size_t n_projections = c.integer("n_projections", 32);
  require(n_projections > 0, ErrorCode::InvalidArgument, "n_projections must be positive");
  std::optional<Mat> generated;
  if (c.has("generated")) generated = read_samples_csv(c.text("generated"));
  std::optional<LoadedModel> models[2];
  const char* keys[2] = {"checkpoint_ft", "checkpoint_rt"};
  for (int s = 0; s < 2; ++s)
    if (c.has(keys[s])) models[s] = load_model(c.text(keys[s]));
  const bool sweep = models[0] || models[1];
  require(generated || sweep, ErrorCode::InvalidArgument,
          "evaluate needs 'generated' samples or a checkpoint_ft / checkpoint_rt sweep");
  std::vector<std::size_t> steps;
  std::vector<std::size_t> seeds;
  std::size_t n_samples = 0;
  if (sweep) {
    steps = c.counts("sweep_steps", {50, 100, 250, 500, 1000});
    seeds = c.counts("sweep_seeds", {static_cast<std::size_t>(seed), static_cast<std::size_t>(seed + 1),
                                     static_cast<std::size_t>(seed + 2)});
    n_samples = c.integer("n_samples", 2000);
    require(!steps.empty() && !seeds.empty() && n_samples > 0, ErrorCode::InvalidArgument,
            "sweep needs step counts, seeds and n_samples > 0");
    for (int s = 0; s < 2; ++s)
      if (models[s]) {
        require(models[s]->model->objective() == (s == 0 ? Objective::FT : Objective::RT), ErrorCode::InvalidArgument,
                std::string(keys[s]) + " holds a model trained with the other objective");
        require(models[s]->bridge.dim == reference.dim(), ErrorCode::DimensionMismatch,
                std::string(keys[s]) + " dimension differs from the reference set");
      }
  }
  c.reject_unknown();
  const fs::path dir = prepare(options, c);

  json doc = json::object();
  if (generated) {
    require(generated->rows() == reference.data.rows(), ErrorCode::DimensionMismatch,
            "generated and reference samples differ in dimension");
    doc["energy_distance"] = energy_distance(*generated, reference.data);
    doc["sliced_wasserstein"] = sliced_wasserstein(*generated, reference.data, n_projections, seed);
  }
  if (sweep) {
    std::ostringstream csv;
    csv << "n_steps,seed,ed_ft,sw_ft,ed_rt,sw_rt\n";
    json rows = json::array();
    // [scheme][seed] -> metric at the first and last step count
    std::vector<std::vector<double>> first(2, std::vector<double>(seeds.size())), last = first;
    for (std::size_t si = 0; si < steps.size(); ++si) {
      for (std::size_t qi = 0; qi < seeds.size(); ++qi) {
        json row{{"n_steps", steps[si]}, {"seed", seeds[qi]}};
        csv << steps[si] << "," << seeds[qi];
        for (int s = 0; s < 2; ++s) {
          if (!models[s]) {
            csv << ",,";
            continue;
          }
          const LoadedModel& m = *models[s];
          const Mat gen = generate_with_model(m.model, m.bridge, m.p0, m.model->objective(), n_samples, steps[si],
                                              m.bridge.epsilon, seeds[qi]);
          const double ed = energy_distance(gen, reference.data);
          const double sw = sliced_wasserstein(gen, reference.data, n_projections, seeds[qi]);
          const std::string tag = s == 0 ? "ft" : "rt";
          row["ed_" + tag] = ed;
          row["sw_" + tag] = sw;
          csv << "," << g17(ed) << "," << g17(sw);
          if (si == 0) first[s][qi] = ed;
          if (si + 1 == steps.size()) last[s][qi] = ed;
        }
        csv << "\n";
        rows.push_back(row);
      }
    }
    open_out(dir / "sweep.csv") << csv.str();
    doc["sweep"] = rows;
    json trend = json::object();
    for (int s = 0; s < 2; ++s) {
      if (!models[s]) continue;
      std::size_t improved = 0;
      for (std::size_t qi = 0; qi < seeds.size(); ++qi) improved += last[s][qi] <= first[s][qi] ? 1 : 0;
      trend[s == 0 ? "ft" : "rt"] = {{"improved_seeds", improved},
                                     {"n_seeds", seeds.size()},
                                     {"majority", 2 * improved > seeds.size()}};
    }
    doc["trend"] = trend;
  }
  write_json(dir / "metrics.json", doc);
  return doc;
}

json cmd_elbo(Config& c, const RunOptions& options) {
  const std::string mode = c.text("mode", "estimate");
  require(mode == "estimate" || mode == "search" || mode == "refine", ErrorCode::InvalidArgument,
          "mode must be estimate, search or refine, got '" + mode + "'");
  const SampleSet data = parse_data(c, "n_data", 2000, "data_seed", 1);
  const std::size_t k = data.dim();
  const InitialDistribution p0 = parse_p0(c, k);
  ElboOptions eo;
  eo.objective = elbo_objective_from_string(c.text("objective", mode == "refine" ? "evidence" : "literal"));
  if (eo.objective == ElboObjective::Literal) eo.n_mc = c.integer("n_mc", eo.n_mc);
  eo.seed = c.integer("seed", 0);
  eo.n_steps = c.integer("n_steps", eo.n_steps);
  eo.epsilon = c.number("epsilon", eo.epsilon);
  eo.validate();

  std::optional<ScheduleFamily> family;
  SearchConfig sc;
  std::optional<DriftSchedule> basic;
  RefineConfig rc;
  if (mode != "refine") {
    const FamilyKind kind = family_kind_from_string(c.text("family", "scalar-identity"));
    Mat lap;
    if (kind != FamilyKind::ScalarIdentity) {
      const std::size_t side = square_side(k);
      const std::size_t rows = c.integer("grid_rows", side ? side : 1);
      const std::size_t cols = c.integer("grid_cols", side ? side : k);
      require(rows * cols == k, ErrorCode::DimensionMismatch, "grid_rows * grid_cols must equal the data dimension");
      lap = build_grid_laplacian(rows, cols).matrix;
    }
    std::vector<double> fallback{0.0, 1.0};
    if (kind == FamilyKind::EigenDiagonal) fallback.assign(k + 1, 0.0), fallback.back() = 1.0;
    const std::vector<double> params = c.numbers("family_params", fallback);
    const Vec p = Eigen::Map<const Vec>(params.data(), static_cast<Eigen::Index>(params.size()));
    const std::size_t expected = kind == FamilyKind::EigenDiagonal ? k + 1 : 2;
    require(params.size() == expected, ErrorCode::InvalidArgument,
            "family_params needs " + std::to_string(expected) + " values");
    if (kind == FamilyKind::ScalarIdentity) family = ScheduleFamily::scalar_identity(k, p[0], p[1]);
    else if (kind == FamilyKind::ScalarLaplacian) family = ScheduleFamily::scalar_laplacian(lap, p[0], p[1]);
    else family = ScheduleFamily::eigen_diagonal(lap, p.head(static_cast<Eigen::Index>(k)), p[static_cast<Eigen::Index>(k)]);
    if (mode == "search") {
      std::vector<double> lo(expected, -3.0), hi(expected, 3.0);
      lo.back() = 0.05;
      hi.back() = 4.0;
      lo = c.numbers("lower", lo);
      hi = c.numbers("upper", hi);
      require(lo.size() == expected && hi.size() == expected, ErrorCode::InvalidArgument,
              "lower and upper need one bound per family parameter");
      sc.lower = Eigen::Map<const Vec>(lo.data(), static_cast<Eigen::Index>(expected));
      sc.upper = Eigen::Map<const Vec>(hi.data(), static_cast<Eigen::Index>(expected));
      sc.max_iterations = c.integer("max_iterations", 60);
      sc.initial_step = c.number("initial_step", sc.initial_step);
      sc.tolerance = c.number("tolerance", sc.tolerance);
      sc.elbo = eo;
    }
  } else {
    basic = parse_basic(c, c.text("schedule", "brownian"), k);
    rc.elbo = eo;
    rc.max_iterations = c.integer("max_iterations", rc.max_iterations);
    rc.hessian = hessian_source_from_string(c.text("hessian", "trained"));
    rc.n_hessian = c.integer("n_hessian", rc.n_hessian);
    const std::size_t n_knots = c.integer("n_knots", 11);
    require(n_knots >= 2, ErrorCode::InvalidArgument, "n_knots must be at least 2");
    for (std::size_t i = 0; i < n_knots; ++i)
      rc.knots.push_back(eo.epsilon + (1.0 - 2.0 * eo.epsilon) * static_cast<double>(i) / static_cast<double>(n_knots - 1));
    rc.significance = c.number("significance", rc.significance);
    if (rc.hessian == HessianSource::Trained) {
      rc.hidden = c.counts("hidden", {64, 64});
      rc.weighting = weighting_from_string(c.text("weighting", "variance"));
      rc.train.batch_size = c.integer("batch_size", 256);
      rc.train.learning_rate = c.number("learning_rate", 2e-3);
      rc.train.epochs = c.integer("epochs", 5);
      rc.train.steps_per_epoch = c.integer("steps_per_epoch", 200);
      rc.train.final_lr_fraction = c.number("final_lr_fraction", 1.0);
    }
    rc.train.seed = eo.seed;
    rc.validate();
  }
  c.reject_unknown();
  const fs::path dir = prepare(options, c);

  const auto estimate_json = [](const ElboEstimate& e) {
    return json{{"value", e.value}, {"std_error", e.std_error}, {"n_samples", e.n_samples}};
  };
  json doc{{"mode", mode}, {"objective", to_string(eo.objective)}};
  if (mode == "estimate") {
    doc["family"] = family->to_json();
    doc["elbo"] = estimate_json(elbo(*family, data.data, p0, eo));
  } else if (mode == "search") {
    const SearchResult r = max_elbo(*family, data.data, p0, sc);
    doc["initial"] = family->to_json();
    doc["initial_elbo"] = estimate_json(r.initial_elbo);
    doc["best"] = r.best.to_json();
    doc["best_elbo"] = estimate_json(r.best_elbo);
    doc["evaluations"] = r.evaluations;
    std::ostringstream csv;
    csv << "iteration,best_elbo";
    for (std::size_t i = 0; i < family->n_params(); ++i) csv << ",param_" << i;
    csv << "\n";
    for (std::size_t i = 0; i < r.best_seen.size(); ++i) {
      csv << i << "," << g17(r.best_seen[i]);
      for (Eigen::Index j = 0; j < r.best_params[i].size(); ++j) csv << "," << g17(r.best_params[i][j]);
      csv << "\n";
    }
    open_out(dir / "search_trace.csv") << csv.str();
  } else {
    const RefineResult r = refine_drift(*basic, data.data, p0, rc);
    doc["initial_elbo"] = estimate_json(r.initial);
    doc["final_elbo"] = estimate_json(r.final_elbo);
    doc["stop_reason"] = r.stop_reason;
    std::ostringstream csv;
    csv << "iteration,step_size,candidate_elbo,improvement,std_error,accepted,best_seen\n";
    for (const auto& s : r.trace)
      csv << s.iteration << "," << g17(s.step_size) << "," << g17(s.candidate.value) << "," << g17(s.improvement)
          << "," << g17(s.std_error) << "," << (s.accepted ? 1 : 0) << "," << g17(s.best_seen) << "\n";
    open_out(dir / "refine_trace.csv") << csv.str();
    const TimeGrid knots(r.knots.front(), r.knots.back(), r.knots.size() - 1);
    write_json(dir / "refined_schedule.json", schedule_to_json(r.schedule, knots));
    json trace = json::array();
    for (const auto& s : r.trace)
      trace.push_back({{"iteration", s.iteration}, {"accepted", s.accepted}, {"best_seen", s.best_seen},
                       {"improvement", s.improvement}, {"std_error", s.std_error}, {"step_size", s.step_size}});
    doc["trace"] = trace;
  }
  write_json(dir / "elbo.json", doc);
  return doc;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string version_string() { return std::string("stdb ") + STDB_VERSION; }

std::vector<std::string> command_names() { return {"stats", "simulate", "train", "generate", "evaluate", "elbo"}; }

Config::Config(json doc) : doc_(std::move(doc)) {
  require(doc_.is_object(), ErrorCode::InvalidArgument, "config must be a JSON object");
  require(doc_.contains("command") && doc_.at("command").is_string(), ErrorCode::InvalidArgument,
          "config needs a string field \"command\"");
  command_ = doc_.at("command").get<std::string>();
  used_.insert("command");
  resolved_["command"] = command_;
  for (const auto& [key, value] : doc_.items())
    require(!value.is_object(), ErrorCode::InvalidArgument, "config is flat: key '" + key + "' holds an object");
}

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::Io, "cannot open config file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::InvalidArgument, "config " + path + ": " + e.what());
  }
  return Config(std::move(doc));
}

const json* Config::lookup(const std::string& key) {
  used_.insert(key);
  const auto it = doc_.find(key);
  return it == doc_.end() ? nullptr : &*it;
}

void Config::bad_type(const std::string& key, const char* expected) const {
  fail(ErrorCode::InvalidArgument, "config key '" + key + "' must be " + expected);
}

double Config::number(const std::string& key, double fallback) {
  const json* v = lookup(key);
  if (!v) {
    resolved_[key] = fallback;
    return fallback;
  }
  if (!v->is_number()) bad_type(key, "a number");
  resolved_[key] = *v;
  return v->get<double>();
}

double Config::number(const std::string& key) {
  if (!has(key)) fail(ErrorCode::InvalidArgument, "config key '" + key + "' is required");
  return number(key, 0.0);
}

std::uint64_t Config::integer(const std::string& key, std::uint64_t fallback) {
  const json* v = lookup(key);
  if (!v) {
    resolved_[key] = fallback;
    return fallback;
  }
  if (!is_count(*v)) bad_type(key, "a non-negative integer");
  resolved_[key] = *v;
  return v->get<std::uint64_t>();
}

std::uint64_t Config::integer(const std::string& key) {
  if (!has(key)) fail(ErrorCode::InvalidArgument, "config key '" + key + "' is required");
  return integer(key, 0);
}

std::string Config::text(const std::string& key, const std::string& fallback) {
  const json* v = lookup(key);
  if (!v) {
    resolved_[key] = fallback;
    return fallback;
  }
  if (!v->is_string()) bad_type(key, "a string");
  resolved_[key] = *v;
  return v->get<std::string>();
}

std::string Config::text(const std::string& key) {
  if (!has(key)) fail(ErrorCode::InvalidArgument, "config key '" + key + "' is required");
  return text(key, "");
}

bool Config::flag(const std::string& key, bool fallback) {
  const json* v = lookup(key);
  if (!v) {
    resolved_[key] = fallback;
    return fallback;
  }
  if (!v->is_boolean()) bad_type(key, "true or false");
  resolved_[key] = *v;
  return v->get<bool>();
}

std::vector<double> Config::numbers(const std::string& key, const std::vector<double>& fallback) {
  const json* v = lookup(key);
  if (!v) {
    resolved_[key] = fallback;
    return fallback;
  }
  if (!v->is_array()) bad_type(key, "an array of numbers");
  for (const auto& e : *v)
    if (!e.is_number()) bad_type(key, "an array of numbers");
  resolved_[key] = *v;
  return v->get<std::vector<double>>();
}

std::vector<std::size_t> Config::counts(const std::string& key, const std::vector<std::size_t>& fallback) {
  const json* v = lookup(key);
  if (!v) {
    resolved_[key] = fallback;
    return fallback;
  }
  if (!v->is_array()) bad_type(key, "an array of non-negative integers");
  for (const auto& e : *v)
    if (!is_count(e)) bad_type(key, "an array of non-negative integers");
  resolved_[key] = *v;
  return v->get<std::vector<std::size_t>>();
}

Vec Config::vector(const std::string& key, std::size_t dim, double fallback) {
  const json* v = lookup(key);
  const auto k = static_cast<Eigen::Index>(dim);
  if (!v) {
    resolved_[key] = fallback;
    return Vec::Constant(k, fallback);
  }
  resolved_[key] = *v;
  if (v->is_number()) return Vec::Constant(k, v->get<double>());
  if (!v->is_array()) bad_type(key, "a number or an array of numbers");
  for (const auto& e : *v)
    if (!e.is_number()) bad_type(key, "a number or an array of numbers");
  require(v->size() == dim, ErrorCode::DimensionMismatch,
          "config key '" + key + "' has " + std::to_string(v->size()) + " entries, expected " + std::to_string(dim));
  const auto values = v->get<std::vector<double>>();
  return Eigen::Map<const Vec>(values.data(), k);
}

json Config::raw(const std::string& key, const json& fallback) {
  const json* v = lookup(key);
  resolved_[key] = v ? *v : fallback;
  return resolved_[key];
}

void Config::override_value(const std::string& key, const json& value) { doc_[key] = value; }

void Config::reject_unknown() const {
  std::string unknown;
  for (const auto& [key, value] : doc_.items()) {
    if (used_.count(key)) continue;
    unknown += (unknown.empty() ? "'" : ", '") + key + "'";
  }
  require(unknown.empty(), ErrorCode::InvalidArgument,
          "unknown config key(s) for command '" + command_ + "' with these settings: " + unknown);
}

json Config::resolved() const { return resolved_; }

// ---------------------------------------------------------------------------

DriftSchedule parse_basic(Config& c, const std::string& schedule, std::size_t dim) {
  const auto k = static_cast<Eigen::Index>(dim);
  if (schedule == "brownian") return make_brownian_schedule(dim, c.number("diffusion_scale", 1.0));
  if (schedule == "constant") {
    const json drift = c.raw("drift", 0.0);
    Mat a;
    if (drift.is_number()) {
      a = drift.get<double>() * Mat::Identity(k, k);
    } else {
      require(drift.is_array() && drift.size() == dim * dim, ErrorCode::InvalidArgument,
              "config key 'drift' must be a number or k*k row-major numbers");
      a.resize(k, k);
      for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j) {
          const json& e = drift.at(static_cast<std::size_t>(i * k + j));
          require(e.is_number(), ErrorCode::InvalidArgument, "config key 'drift' must hold numbers");
          a(i, j) = e.get<double>();
        }
    }
    const double kappa = c.number("diffusion", 1.0);
    require(kappa >= 0.0, ErrorCode::InvalidArgument, "diffusion must be non-negative");
    const Vec offset = c.vector("offset", dim, 0.0);
    DriftSchedule s = make_constant_schedule(a, kappa * Mat::Identity(k, k), offset.isZero(0.0) ? Vec() : offset);
    s.name = "constant";
    return s;
  }
  if (schedule == "custom-file") {
    DriftSchedule s = load_schedule_file(c.text("schedule_file"));
    require(s.dim == dim, ErrorCode::DimensionMismatch,
            "schedule file dimension " + std::to_string(s.dim) + " differs from " + std::to_string(dim));
    return s;
  }
  fail(ErrorCode::InvalidArgument, "schedule '" + schedule + "' has no basic process (brownian, constant, custom-file)");
}

BridgeSetup parse_bridge(Config& c, std::size_t default_dim) {
  BridgeSetup b;
  b.schedule = c.text("schedule", "brownian");
  b.n_steps = c.integer("n_steps", 1000);
  b.epsilon = c.number("epsilon", 1e-3);
  require(b.n_steps > 0, ErrorCode::InvalidArgument, "n_steps must be positive");
  require(b.epsilon > 0.0 && b.epsilon < 0.5, ErrorCode::InvalidArgument, "epsilon must lie in (0, 0.5)");
  if (b.schedule == "laplacian") {
    const std::size_t side = square_side(default_dim);
    const std::size_t rows = c.integer("grid_rows", side ? side : 1);
    const std::size_t cols = c.integer("grid_cols", side ? side : default_dim);
    b.laplacian = build_grid_laplacian(rows, cols);
    b.dim = rows * cols;
    b.drift = make_laplacian_bridge(b.laplacian->matrix);
    return b;
  }
  if (b.schedule == "brownian") {
    b.dim = c.integer("dim", default_dim);
    require(b.dim > 0, ErrorCode::InvalidArgument, "dim must be positive");
    const double scale = c.number("diffusion_scale", 1.0);
    require(scale >= 0.0, ErrorCode::InvalidArgument, "diffusion_scale must be non-negative");
    b.drift = make_brownian_bridge(b.dim, scale);
    b.basic = make_brownian_schedule(b.dim, scale);
    return b;
  }
  if (b.schedule == "constant") {
    b.dim = c.integer("dim", default_dim);
    require(b.dim > 0, ErrorCode::InvalidArgument, "dim must be positive");
  } else if (b.schedule == "custom-file") {
    b.dim = default_dim;
  } else {
    fail(ErrorCode::InvalidArgument,
         "unknown schedule '" + b.schedule + "' (brownian, laplacian, constant, custom-file)");
  }
  b.basic = parse_basic(c, b.schedule, b.dim);
  b.dim = b.basic->dim;
  validate_schedule(*b.basic, TimeGrid(0.0, 1.0, b.n_steps));
  b.drift = make_doob_bridge(*b.basic, b.n_steps, b.epsilon);
  return b;
}

InitialDistribution parse_p0(Config& c, std::size_t dim) {
  InitialDistribution p0{c.vector("p0_mean", dim, 0.0), c.vector("p0_scale", dim, 1.0)};
  p0.validate();
  return p0;
}

SampleSet parse_data(Config& c, const std::string& count_key, std::size_t default_count, const std::string& seed_key,
                     std::uint64_t default_seed) {
  if (c.has("data_file")) {
    const std::string path = c.text("data_file");
    return SampleSet{read_samples_csv(path), path, 0};
  }
  const std::string name = c.text("dataset", "gm2");
  const std::size_t n = c.integer(count_key, default_count);
  const std::uint64_t seed = c.integer(seed_key, default_seed);
  return make_dataset(name, n, seed);
}

Mat generate_with_model(std::shared_ptr<const ScoreFunction> score, const BridgeSetup& bridge,
                        const InitialDistribution& p0, Objective scheme, std::size_t n_samples, std::size_t n_steps,
                        double epsilon, std::uint64_t seed) {
  const Mat initial = p0.sample(n_samples, seed);
  return simulate_generative(score, bridge, initial, initial, scheme, n_steps, epsilon, seed);
}

LoadedModel load_model(const std::string& checkpoint) {
  require(fs::exists(checkpoint), ErrorCode::Io, "checkpoint '" + checkpoint + "' does not exist");
  auto model = std::make_shared<ScoreModel>(load_checkpoint(checkpoint));
  require(model->metadata.is_object() && model->metadata.contains("command"), ErrorCode::Io,
          "checkpoint '" + checkpoint + "' carries no training config");
  Config c(model->metadata);
  LoadedModel out{model, parse_bridge(c, model->dim()), {}};
  out.p0 = parse_p0(c, model->dim());
  require(out.bridge.dim == model->dim(), ErrorCode::Io, "checkpoint schedule does not match its model");
  return out;
}

json run(Config& config, const RunOptions& options) {
  if (options.seed) config.override_value("seed", *options.seed);
  const std::string& cmd = config.command();
  if (cmd == "stats") return cmd_stats(config, options);
  if (cmd == "simulate") return cmd_simulate(config, options);
  if (cmd == "train") return cmd_train(config, options);
  if (cmd == "generate") return cmd_generate(config, options);
  if (cmd == "evaluate") return cmd_evaluate(config, options);
  if (cmd == "elbo") return cmd_elbo(config, options);
  fail(ErrorCode::InvalidArgument, "unknown command '" + cmd + "' (stats, simulate, train, generate, evaluate, elbo)");
}

int exit_code_for(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) return is_validation_error(err->code()) ? kExitValidation : kExitNumeric;
  if (dynamic_cast<const json::exception*>(&e)) return kExitValidation;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kExitValidation;
  return kExitNumeric;
}

}  // namespace stdb::cli
