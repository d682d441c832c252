#include "stdb/sde.hpp"

#include "stdb/binary_io.hpp"
#include "stdb/errors.hpp"
#include "stdb/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace stdb {

std::string to_string(Direction d) { return d == Direction::Forward ? "forward" : "reverse"; }

Direction direction_from_string(const std::string& s) {
  if (s == "forward") return Direction::Forward;
  if (s == "reverse") return Direction::Reverse;
  fail(ErrorCode::InvalidArgument, "direction must be 'forward' or 'reverse', got '" + s + "'");
}

Eigen::Map<const Vec> TrajectoryBatch::state(std::size_t path, std::size_t saved) const {
  return Eigen::Map<const Vec>(data.data() + (path * n_saved() + saved) * dim, static_cast<Eigen::Index>(dim));
}

Eigen::Map<Vec> TrajectoryBatch::state(std::size_t path, std::size_t saved) {
  return Eigen::Map<Vec>(data.data() + (path * n_saved() + saved) * dim, static_cast<Eigen::Index>(dim));
}

Mat TrajectoryBatch::at(std::size_t saved) const {
  require(saved < n_saved(), ErrorCode::DomainError, "saved-time index out of range");
  Mat out(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(n_paths));
  for (std::size_t s = 0; s < n_paths; ++s) out.col(static_cast<Eigen::Index>(s)) = state(s, saved);
  return out;
}

std::size_t TrajectoryBatch::saved_index(double t) const {
  for (std::size_t i = 0; i < times.size(); ++i)
    if (std::abs(times[i] - t) <= 1e-9) return i;
  std::ostringstream msg;
  msg << "time " << t << " was not saved in this trajectory batch";
  fail(ErrorCode::DomainError, msg.str());
}

void AffineDriftField::evaluate(double t, const Mat& states, const Mat&, Mat& out) const {
  out.noalias() = schedule_.drift_at(t) * states;
  if (schedule_.has_offset()) out.colwise() += schedule_.offset_at(t);
}

void BridgeDriftField::evaluate(double t, const Mat& states, const Mat& pins, Mat& out) const {
  const BridgeCoefficients c = bridge_->at(t);
  out.noalias() = -c.restoring * states;
  out.noalias() += c.pin_gain * pins;
  out.colwise() += c.offset;
}

void DoobDriftField::evaluate(double t, const Mat& states, const Mat& pins, Mat& out) const {
  const auto& base = bridge_->base();
  out.noalias() = base.drift_at(t) * states;
  out.colwise() += base.offset_at(t);
  out.noalias() += base.diffusion_at(t) * bridge_->doob_scores(t, states, pins);
}

namespace {

constexpr std::size_t kBlockPaths = 4096;

std::vector<std::size_t> saved_nodes(const TimeGrid& grid, const SimulationOptions& options) {
  std::set<std::size_t> nodes{0, grid.n_steps()};
  if (options.save_all)
    for (std::size_t j = 0; j <= grid.n_steps(); ++j) nodes.insert(j);
  for (double t : options.save_times) nodes.insert(grid.node(t));
  return {nodes.begin(), nodes.end()};
}

TrajectoryBatch simulate(const DriftField& drift, const Mat& start, const Mat& pins, const TimeGrid& grid,
                         std::uint64_t seed, const SimulationOptions& options, Direction direction) {
  const auto k = static_cast<Eigen::Index>(drift.dim());
  require(start.rows() == k, ErrorCode::DimensionMismatch, "initial states must have k rows");
  require(start.cols() > 0, ErrorCode::InvalidArgument, "need at least one path");
  require(pins.size() == 0 || (pins.rows() == k && pins.cols() == start.cols()), ErrorCode::DimensionMismatch,
          "pins must be k x S");
  require(start.allFinite(), ErrorCode::InvalidArgument, "initial states must be finite");

  const std::size_t n = grid.n_steps();
  const double h = grid.step();
  const double root_h = std::sqrt(h);
  std::vector<Mat> noise_factor(grid.size());
  std::vector<bool> noiseless(grid.size());
  for (std::size_t j = 0; j <= n; ++j) {
    const JitteredCholesky f = jittered_cholesky(drift.diffusion(grid.time(j)));
    noise_factor[j] = root_h * f.lower;
    noiseless[j] = f.degenerate;
  }

  std::vector<std::size_t> nodes = saved_nodes(grid, options);
  if (direction == Direction::Reverse) std::reverse(nodes.begin(), nodes.end());

  TrajectoryBatch batch;
  batch.grid = grid;
  batch.dim = static_cast<std::size_t>(k);
  batch.n_paths = static_cast<std::size_t>(start.cols());
  batch.direction = direction;
  batch.seed = seed;
  batch.pins = pins;
  for (std::size_t j : nodes) batch.times.push_back(grid.time(j));
  batch.data.assign(batch.n_paths * batch.n_saved() * batch.dim, 0.0);

  const Mat no_pins = Mat::Zero(k, std::min<Eigen::Index>(start.cols(), kBlockPaths));
  const std::size_t n_blocks = (batch.n_paths + kBlockPaths - 1) / kBlockPaths;

  parallel_for(
      n_blocks,
      [&](std::size_t block_begin, std::size_t block_end) {
        for (std::size_t b = block_begin; b < block_end; ++b) {
          const std::size_t first = b * kBlockPaths;
          const auto width = static_cast<Eigen::Index>(std::min(kBlockPaths, batch.n_paths - first));
          const auto col0 = static_cast<Eigen::Index>(first);
          Mat x = start.middleCols(col0, width);
          const Mat p = pins.size() ? Mat(pins.middleCols(col0, width)) : Mat(no_pins.leftCols(width));
          Mat d(k, width);
          Mat z(k, width);
          std::size_t next_save = 0;
          auto store = [&](std::size_t node) {
            if (next_save < nodes.size() && nodes[next_save] == node) {
              for (Eigen::Index s = 0; s < width; ++s)
                batch.state(first + static_cast<std::size_t>(s), next_save) = x.col(s);
              ++next_save;
            }
          };
          auto step = [&](std::size_t node, double sign) {
            drift.evaluate(grid.time(node), x, p, d);
            x += (sign * h) * d;
            if (!noiseless[node]) {
              for (Eigen::Index s = 0; s < width; ++s) {
                CounterRng rng(seed, RngDomain::Simulate, first + static_cast<std::size_t>(s),
                               static_cast<std::uint32_t>(node));
                rng.normals(z.col(s).data(), static_cast<std::size_t>(k));
              }
              x.noalias() += noise_factor[node] * z;
            }
            if (!x.allFinite()) {
              Eigen::Index bad = 0;
              while (bad < width && x.col(bad).allFinite()) ++bad;
              std::ostringstream msg;
              msg << "path " << first + static_cast<std::size_t>(bad) << " diverged at step " << node << " (t = "
                  << grid.time(node) << ")";
              fail(ErrorCode::DivergedPath, msg.str());
            }
          };
          if (direction == Direction::Forward) {
            store(0);
            for (std::size_t j = 0; j < n; ++j) {
              step(j, 1.0);
              store(j + 1);
            }
          } else {
            store(n);
            for (std::size_t j = n; j > 0; --j) {
              step(j, -1.0);
              store(j - 1);
            }
          }
        }
      },
      options.max_threads);
  return batch;
}

}  // namespace

TrajectoryBatch simulate_forward(const DriftField& drift, const Mat& x0, const Mat& pins, const TimeGrid& grid,
                                 std::uint64_t seed, const SimulationOptions& options) {
  return simulate(drift, x0, pins, grid, seed, options, Direction::Forward);
}

TrajectoryBatch simulate_reverse(const DriftField& drift, const Mat& x1, const Mat& pins, const TimeGrid& grid,
                                 std::uint64_t seed, const SimulationOptions& options) {
  return simulate(drift, x1, pins, grid, seed, options, Direction::Reverse);
}

TrajectoryBatch sample_bridge_exact(const BridgeSpec& spec, const std::vector<double>& t_list, std::size_t n_paths,
                                    std::uint64_t seed) {
  spec.validate();
  require(!t_list.empty() && n_paths > 0, ErrorCode::InvalidArgument, "need times and paths to sample");
  for (double t : t_list) spec.grid.node(t);
  TrajectoryBatch batch;
  batch.grid = spec.grid;
  batch.dim = spec.drift->dim();
  batch.n_paths = n_paths;
  batch.times = t_list;
  batch.seed = seed;
  batch.pins = spec.x1.replicate(1, static_cast<Eigen::Index>(n_paths));
  batch.data.assign(n_paths * t_list.size() * batch.dim, 0.0);
  Vec z(static_cast<Eigen::Index>(batch.dim));
  for (std::size_t i = 0; i < t_list.size(); ++i) {
    const GaussianMarginal m = bridge_marginal(spec, t_list[i]);
    for (std::size_t s = 0; s < n_paths; ++s) {
      CounterRng rng(seed, RngDomain::BridgeSample, s, static_cast<std::uint32_t>(i));
      rng.normals(z.data(), batch.dim);
      batch.state(s, i) = m.sample(z);
    }
  }
  return batch;
}

void write_trajectories_csv(const TrajectoryBatch& batch, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::Io, "cannot open '" + path + "' for writing");
  out << "path,t";
  for (std::size_t i = 0; i < batch.dim; ++i) out << ",x" << i;
  out << '\n' << std::setprecision(17);
  for (std::size_t s = 0; s < batch.n_paths; ++s)
    for (std::size_t i = 0; i < batch.n_saved(); ++i) {
      out << s << ',' << batch.times[i];
      const auto x = batch.state(s, i);
      for (Eigen::Index c = 0; c < x.size(); ++c) out << ',' << x(c);
      out << '\n';
    }
  require(out.good(), ErrorCode::Io, "failed writing '" + path + "'");
}

void write_trajectories_binary(const TrajectoryBatch& batch, const std::string& path) {
  BinaryWriter w(path);
  w.magic("STDBTRJ1");
  w.u32(batch.direction == Direction::Forward ? 0u : 1u);
  w.u64(batch.seed);
  w.u64(batch.dim);
  w.u64(batch.n_paths);
  w.u64(batch.n_saved());
  w.f64(batch.grid.t_start());
  w.f64(batch.grid.t_end());
  w.u64(batch.grid.n_steps());
  w.f64(batch.grid.epsilon_clip());
  for (double t : batch.times) w.f64(t);
  w.bytes(batch.data.data(), batch.data.size() * sizeof(double));
  const bool has_pins = batch.pins.size() > 0;
  w.u64(has_pins ? 1u : 0u);
  if (has_pins) w.bytes(batch.pins.data(), static_cast<std::size_t>(batch.pins.size()) * sizeof(double));
}

TrajectoryBatch read_trajectories_binary(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic("STDBTRJ1");
  TrajectoryBatch batch;
  batch.direction = r.u32() == 0u ? Direction::Forward : Direction::Reverse;
  batch.seed = r.u64();
  batch.dim = r.u64();
  batch.n_paths = r.u64();
  const std::size_t n_saved = r.u64();
  const double t_start = r.f64();
  const double t_end = r.f64();
  const std::size_t n_steps = r.u64();
  const double eps = r.f64();
  batch.grid = TimeGrid(t_start, t_end, n_steps, eps);
  require(batch.dim > 0 && batch.dim <= 1u << 20 && n_saved <= 1u << 24, ErrorCode::Io,
          "corrupt trajectory header in '" + path + "'");
  batch.times.resize(n_saved);
  for (double& t : batch.times) t = r.f64();
  batch.data.resize(batch.n_paths * n_saved * batch.dim);
  r.bytes(batch.data.data(), batch.data.size() * sizeof(double));
  if (r.u64() == 1u) {
    batch.pins.resize(static_cast<Eigen::Index>(batch.dim), static_cast<Eigen::Index>(batch.n_paths));
    r.bytes(batch.pins.data(), static_cast<std::size_t>(batch.pins.size()) * sizeof(double));
  }
  return batch;
}

}  // namespace stdb
