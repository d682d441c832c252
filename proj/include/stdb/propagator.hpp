#pragma once

#include "stdb/linalg.hpp"
#include "stdb/schedule.hpp"
#include "stdb/time_grid.hpp"

#include <vector>

namespace stdb {

/// State-transition matrix Omega(t; tau) of dx/dt = A(t) x on a uniform grid.
///
/// Only the per-step factors Omega(t_{j+1}; t_j) and their inverses are
/// stored; any pair of nodes is composed on demand. Immutable once built.
class Propagator {
 public:
  // Condition numbers of a step factor above this are rejected.
  static constexpr double kMaxStepCondition = 1e12;

  const TimeGrid& grid() const noexcept { return grid_; }
  std::size_t dim() const noexcept { return dim_; }

  const Mat& step_factor(std::size_t j) const { return steps_.at(j); }
  const Mat& step_inverse(std::size_t j) const { return inverses_.at(j); }

  // Omega(t_to; t_from) for node indices from <= to.
  Mat between(std::size_t to, std::size_t from) const;
  // Omega(t_to; t_from)^{-1}.
  Mat inverse_between(std::size_t to, std::size_t from) const;
  // Omega(t; tau) for node times.
  Mat at(double t, double tau) const;

  // Omega(t_end; t_j) for every node j, computed in one backward sweep.
  std::vector<Mat> to_end() const;

 private:
  friend Propagator solve_propagator(const DriftSchedule&, const TimeGrid&);
  Propagator(TimeGrid grid, std::size_t dim) : grid_(grid), dim_(dim) {}

  TimeGrid grid_;
  std::size_t dim_;
  std::vector<Mat> steps_;
  std::vector<Mat> inverses_;
};

/// Classical RK4 step of dOmega/dt = A(t) Omega from t to t + h, starting at I.
Mat rk4_step_factor(const MatrixFn& drift, double t, double h, std::size_t dim);

/// Builds the propagator of `schedule` on `grid`. Throws SingularSchedule naming
/// the grid time at which a non-finite drift or factor appears, and
/// IllConditioned when a step factor cannot be inverted reliably.
Propagator solve_propagator(const DriftSchedule& schedule, const TimeGrid& grid);

/// Omega^{-1}(t_end; t) composed from per-step inverse factors.
Mat propagator_inverse_path(const Propagator& prop, double t);

/// Sigma = int_{t_from}^{t_to} Omega(t_to; tau) kappa(tau) Omega(t_to; tau)^T dtau
/// by composite trapezoid on the grid; symmetrized. Throws NotPSD when the
/// smallest eigenvalue falls below -psd_tol * max(1, trace/k).
Mat covariance_integral(const DriftSchedule& schedule, const Propagator& prop, double t_from,
                        double t_to, double psd_tol = 1e-10);

/// int_{t_from}^{t_to} Omega(t_to; tau) c(tau) dtau, trapezoid on the grid.
Vec offset_integral(const DriftSchedule& schedule, const Propagator& prop, double t_from,
                    double t_to);

}  // namespace stdb
