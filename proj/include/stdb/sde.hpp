#pragma once

#include "stdb/bridge.hpp"
#include "stdb/linalg.hpp"
#include "stdb/schedule.hpp"
#include "stdb/time_grid.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace stdb {

enum class Direction { Forward, Reverse };

std::string to_string(Direction d);
Direction direction_from_string(const std::string& s);

/// Sample paths stored at a subset of times ("saved" times). Storage order is
/// [path][saved][coordinate]; the full grid is kept as metadata only so that
/// 1e5-path batches stay small.
struct TrajectoryBatch {
  TimeGrid grid{0.0, 1.0, 1};
  std::size_t dim = 0;
  std::size_t n_paths = 0;
  std::vector<double> times;  // saved times, in stepping order
  std::vector<double> data;
  Direction direction = Direction::Forward;
  std::uint64_t seed = 0;
  Mat pins;  // k x S endpoint each path is conditioned on (may be empty)

  std::size_t n_saved() const noexcept { return times.size(); }
  Eigen::Map<const Vec> state(std::size_t path, std::size_t saved) const;
  Eigen::Map<Vec> state(std::size_t path, std::size_t saved);
  // k x S matrix of all paths at one saved time.
  Mat at(std::size_t saved) const;
  Mat final_states() const { return at(n_saved() - 1); }
  // Index of the saved time equal to t (within 1e-9).
  std::size_t saved_index(double t) const;
};

/// Vector field for a batch of states (columns) with per-path pins.
class DriftField {
 public:
  virtual ~DriftField() = default;
  virtual std::size_t dim() const = 0;
  virtual Mat diffusion(double t) const = 0;
  // out = drift(t, states.col(s), pins.col(s)) for every column s.
  virtual void evaluate(double t, const Mat& states, const Mat& pins, Mat& out) const = 0;
};

/// A(t) x + c(t): the basic process; pins ignored.
class AffineDriftField final : public DriftField {
 public:
  explicit AffineDriftField(DriftSchedule schedule) : schedule_(std::move(schedule)) {}
  std::size_t dim() const override { return schedule_.dim; }
  Mat diffusion(double t) const override { return schedule_.diffusion_at(t); }
  void evaluate(double t, const Mat& states, const Mat& pins, Mat& out) const override;

 private:
  DriftSchedule schedule_;
};

/// -Abar(t) x + B(t) x1 + varsigma(t), the bridge drift with Abar as given
/// by the bridge (bar_drift for Doob bridges).
class BridgeDriftField final : public DriftField {
 public:
  explicit BridgeDriftField(std::shared_ptr<const BridgeDrift> bridge) : bridge_(std::move(bridge)) {}
  std::size_t dim() const override { return bridge_->dim(); }
  Mat diffusion(double t) const override { return bridge_->at(t).diffusion; }
  void evaluate(double t, const Mat& states, const Mat& pins, Mat& out) const override;

 private:
  std::shared_ptr<const BridgeDrift> bridge_;
};

/// A(t) x + c(t) + kappa(t) grad_x log p(x1 | x(t) = x): the basic process
/// with the Doob correction applied through doob_score.
class DoobDriftField final : public DriftField {
 public:
  explicit DoobDriftField(std::shared_ptr<const DoobBridgeDrift> bridge) : bridge_(std::move(bridge)) {}
  std::size_t dim() const override { return bridge_->dim(); }
  Mat diffusion(double t) const override { return bridge_->base().diffusion_at(t); }
  void evaluate(double t, const Mat& states, const Mat& pins, Mat& out) const override;

 private:
  std::shared_ptr<const DoobBridgeDrift> bridge_;
};

struct SimulationOptions {
  // Grid nodes to store besides the start and end (any time within 1e-9 of a node).
  std::vector<double> save_times;
  bool save_all = false;
  std::size_t max_threads = 0;
};

/// Euler-Maruyama from grid.t_start() to grid.t_end():
///   x_{j+1} = x_j + drift(t_j, x_j) dt + chol(kappa(t_j)) sqrt(dt) xi_j,
/// xi_j drawn from the (seed, path, step) stream. `pins` may be empty.
TrajectoryBatch simulate_forward(const DriftField& drift, const Mat& x0, const Mat& pins, const TimeGrid& grid,
                                 std::uint64_t seed, const SimulationOptions& options = {});

/// Same stepping from grid.t_end() down to grid.t_start():
///   x_{j-1} = x_j - drift(t_j, x_j) dt + chol(kappa(t_j)) sqrt(dt) xi_j,
/// where `drift` is the forward-time drift with the score already subtracted.
TrajectoryBatch simulate_reverse(const DriftField& drift, const Mat& x1, const Mat& pins, const TimeGrid& grid,
                                 std::uint64_t seed, const SimulationOptions& options = {});

/// S i.i.d. draws from bridge_marginal(spec, t) for each t in t_list.
TrajectoryBatch sample_bridge_exact(const BridgeSpec& spec, const std::vector<double>& t_list, std::size_t n_paths,
                                    std::uint64_t seed);

/// CSV: header "path,t,x0,...,x{k-1}", one row per path per saved time.
void write_trajectories_csv(const TrajectoryBatch& batch, const std::string& path);
/// Binary: "STDBTRJ1", u32 direction, u64 seed, u64 k, u64 S, u64 n_saved,
/// f64 t_start, f64 t_end, u64 n_steps, f64 eps, n_saved f64 times,
/// then S * n_saved * k f64 states, then u64 has_pins and k * S pins.
void write_trajectories_binary(const TrajectoryBatch& batch, const std::string& path);
TrajectoryBatch read_trajectories_binary(const std::string& path);

}  // namespace stdb
