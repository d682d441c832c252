#pragma once

#include "stdb/gaussian.hpp"
#include "stdb/laplacian.hpp"
#include "stdb/linalg.hpp"
#include "stdb/propagator.hpp"
#include "stdb/schedule.hpp"
#include "stdb/time_grid.hpp"

#include <memory>
#include <string>
#include <vector>

namespace stdb {

/// Coefficients of a bridge SDE written as
///
///   dx = (-Abar(t) x + B(t) x1 + varsigma(t)) dt + dW,   E[dW dW^T] = kappa(t) dt.
///
/// Abar is the restoring rate towards the pin: the Brownian bridge has
/// Abar = I/(1-t) and the graph-Laplacian bridge Abar = L/(1-t). When
/// B == Abar and varsigma == 0 the drift has the pinned form -Abar (x - x1).
struct BridgeCoefficients {
  Mat restoring;  // Abar(t)
  Mat pin_gain;   // B(t)
  Vec offset;     // varsigma(t)
  Mat diffusion;  // kappa(t)
};

/// ft(t, x, x1) = F_x x + F_pin x1 + f_0, the forward-time regression target.
struct AffineTarget {
  Mat state;
  Mat pin;
  Vec constant;

  Vec apply(const Vec& x, const Vec& x1) const { return state * x + pin * x1 + constant; }
};

class BridgeDrift {
 public:
  virtual ~BridgeDrift() = default;

  virtual std::size_t dim() const = 0;
  virtual std::string name() const = 0;
  virtual BridgeCoefficients at(double t) const = 0;

  // Drift A(t) x + c(t) of the process being conditioned; zero for bridges
  // specified directly through Abar.
  virtual Mat base_drift(double t) const;
  virtual Vec base_offset(double t) const;

  // kappa^{-1} (bridge drift - base drift), affine in (x, x1). For a Doob
  // bridge this is grad_x log p(x1 | x(t) = x).
  virtual AffineTarget ft_target_map(double t) const;

  Vec ft_target(double t, const Vec& x, const Vec& x1) const { return ft_target_map(t).apply(x, x1); }
  Vec drift(double t, const Vec& x, const Vec& x1) const;
};

/// Bridge given directly by a restoring-rate schedule: the schedule's drift
/// field is Abar(t), its offset is varsigma(t), B == Abar.
class DirectBridgeDrift final : public BridgeDrift {
 public:
  explicit DirectBridgeDrift(DriftSchedule restoring);

  std::size_t dim() const override { return schedule_.dim; }
  std::string name() const override { return schedule_.name; }
  BridgeCoefficients at(double t) const override;

  const DriftSchedule& schedule() const noexcept { return schedule_; }

 private:
  DriftSchedule schedule_;
};

/// Doob h-transform of the basic process dx = (A x + c) dt + dW. Needs a
/// propagator whose grid ends at t = 1; node quantities
///   Omega(1; t_j),  Sigma(t_j) = int_{t_j}^1 Omega(1;s) kappa Omega(1;s)^T ds,
///   m_c(t_j) = int_{t_j}^1 Omega(1;s) c(s) ds
/// are tabulated once (trapezoid, as in covariance_integral). Off-node times
/// use a partial RK4 step and trapezoid to the next node.
class DoobBridgeDrift final : public BridgeDrift {
 public:
  // Queries beyond 1 - epsilon throw NearPinned.
  DoobBridgeDrift(DriftSchedule base, std::shared_ptr<const Propagator> prop, double epsilon);

  std::size_t dim() const override { return base_.dim; }
  std::string name() const override { return "doob(" + base_.name + ")"; }
  BridgeCoefficients at(double t) const override;
  Mat base_drift(double t) const override { return base_.drift_at(t); }
  Vec base_offset(double t) const override { return base_.offset_at(t); }
  AffineTarget ft_target_map(double t) const override;

  // grad_{x(t)} log p(x1 | x(t)) of the basic process.
  Vec doob_score(double t, const Vec& x_t, const Vec& x1) const;
  // Column-wise doob_score for a batch of states and pins.
  Mat doob_scores(double t, const Mat& states, const Mat& pins) const;
  // ||B - Abar||_F / ||Abar||_F; zero exactly when the drift has pinned form.
  double pinned_form_defect(double t) const;

  struct EndpointTerms {
    Mat omega;  // Omega(1; t)
    Mat sigma;  // Sigma(t)
    Vec drift_mean;  // m_c(t)
  };
  EndpointTerms endpoint_terms(double t) const;

  const DriftSchedule& base() const noexcept { return base_; }
  const Propagator& propagator() const noexcept { return *prop_; }
  double epsilon() const noexcept { return epsilon_; }

 private:
  struct Solved {
    Mat omega;
    Mat gain;  // Omega^T Sigma^{-1}
    Vec drift_mean;
  };
  Solved solve(double t) const;

  DriftSchedule base_;
  std::shared_ptr<const Propagator> prop_;
  double epsilon_;
  std::vector<Mat> omega_end_;
  std::vector<Mat> sigma_end_;
  std::vector<Vec> mean_end_;
};

std::shared_ptr<const BridgeDrift> make_brownian_bridge(std::size_t dim, double diffusion_scale = 1.0);
// Abar(t) = L / (1 - t), kappa = I.
std::shared_ptr<const BridgeDrift> make_laplacian_bridge(const Mat& laplacian, std::string name = "laplacian");
// Builds the base propagator on [0, 1] with `n_steps` RK4 steps.
std::shared_ptr<const DoobBridgeDrift> make_doob_bridge(const DriftSchedule& base, std::size_t n_steps,
                                                        double epsilon);

/// Bridge from x0 at grid.t_start() to the pin x1 at t = 1.
struct BridgeSpec {
  std::shared_ptr<const BridgeDrift> drift;
  Vec x0;
  Vec x1;
  TimeGrid grid;

  void validate() const;
};

/// Linear maps of the bridge marginal at time t:
///   mean = omega x0 + pin_map x1 + offset,  cov.
/// omega solves dOmega/dt = -Abar Omega (the bridge propagator, Omega(t; t_start)).
struct BridgeMoments {
  double t = 0.0;
  Mat omega;
  Mat pin_map;
  Vec offset;
  Mat cov;

  Vec mean(const Vec& x0, const Vec& x1) const { return omega * x0 + pin_map * x1 + offset; }
};

/// RK4 on the joint system
///   Omega' = -Abar Omega,  Gamma' = -Abar Gamma + B,  gamma' = -Abar gamma + varsigma,
///   Sigma' = -Abar Sigma - Sigma Abar^T + kappa,
/// whose Sigma is int Omega(t;s) kappa(s) Omega(t;s)^T ds. Returns the moments at
/// every grid node.
std::vector<BridgeMoments> integrate_bridge_moments(const BridgeDrift& drift, const TimeGrid& grid);
/// Moments at a single time in [t_start, t_end] (final partial step if off-grid).
BridgeMoments bridge_moments_at(const BridgeDrift& drift, const TimeGrid& grid, double t);

/// Abar(t) of the Doob bridge of `base`: kappa Omega(1;t)^T Sigma(t)^{-1} Omega(1;t) - A(t).
/// `prop` must cover [.., 1]; t must be a node with t < 1.
Mat bar_drift(const DriftSchedule& base, const Propagator& prop, double t);
/// grad_{x_t} log p(x1 | x_t) of the basic process at node time t < 1.
Vec doob_score(const DriftSchedule& base, const Propagator& prop, double t, const Vec& x_t, const Vec& x1);

/// Basic-process conditional p(x(t_to) | x(t_from) = x_from) on propagator nodes.
GaussianMarginal basic_conditional(const DriftSchedule& schedule, const Propagator& prop,
                                   const Vec& x_from, double t_from, double t_to);

GaussianMarginal bridge_marginal(const BridgeSpec& spec, double t);

/// Closed-form graph-Laplacian bridge: mean (1-t)^L x0 + (I - (1-t)^L) x1,
/// covariance P diag(((1-t)^{2 lambda} - (1-t)) / (1 - 2 lambda)) P^T.
GaussianMarginal laplacian_bridge_closed_form(const EigenBasis& basis, const Vec& x0, const Vec& x1,
                                              double t);
/// Per-eigenchannel variance of the Laplacian bridge, including the lambda = 1/2 limit.
double laplacian_channel_variance(double lambda, double t);

/// Node tables of the Doob bridge of a basic process with offset c(t),
/// in the parametrization
///   x(tau) ~ N(tOmega(tau;0) x0 - tLambda(tau) x_pin + tvarsigma(tau), tSigma(tau)),
///   tA = A - kappa Omega(1;tau)^T Sigma(tau)^{-1} Omega(1;tau)  (= -Abar).
struct GeneralNormalBridge {
  TimeGrid grid;
  std::vector<Mat> tilde_drift;
  std::vector<Vec> varsigma;
  std::vector<Mat> tilde_omega;
  std::vector<Mat> tilde_lambda;
  std::vector<Vec> tilde_varsigma;
  std::vector<Mat> tilde_sigma;

  GaussianMarginal marginal(std::size_t node, const Vec& x0, const Vec& x_pin) const;
};

GeneralNormalBridge general_normal_bridge(const DriftSchedule& base, std::shared_ptr<const Propagator> prop,
                                          const TimeGrid& grid);

/// Precomputed marginals of a bridge family (any x0, x1) at every grid node:
/// the simulation-free sampler behind training and ELBO estimation.
class BridgeMarginalTable {
 public:
  BridgeMarginalTable(std::shared_ptr<const BridgeDrift> drift, const TimeGrid& grid);

  const TimeGrid& grid() const noexcept { return grid_; }
  const BridgeDrift& drift() const noexcept { return *drift_; }
  std::shared_ptr<const BridgeDrift> drift_ptr() const noexcept { return drift_; }
  std::size_t dim() const noexcept { return drift_->dim(); }

  const BridgeMoments& moments(std::size_t node) const { return moments_.at(node); }
  const JitteredCholesky& factor(std::size_t node) const { return factors_.at(node); }
  const AffineTarget& ft_map(std::size_t node) const { return ft_maps_.at(node); }

  GaussianMarginal marginal(std::size_t node, const Vec& x0, const Vec& x1) const;
  Vec sample(std::size_t node, const Vec& x0, const Vec& x1, const Vec& standard_normal) const;
  // -Sigma^{-1} (x - mean): grad_x log p(x(t) | x0, x1).
  Vec rt_target(std::size_t node, const Vec& x, const Vec& x0, const Vec& x1) const;
  Vec ft_target(std::size_t node, const Vec& x, const Vec& x1) const { return ft_map(node).apply(x, x1); }
  double mean_variance(std::size_t node) const;  // trace(Sigma)/k
  double log_det_cov(std::size_t node) const;

 private:
  std::shared_ptr<const BridgeDrift> drift_;
  TimeGrid grid_;
  std::vector<BridgeMoments> moments_;
  std::vector<JitteredCholesky> factors_;
  std::vector<AffineTarget> ft_maps_;
};

}  // namespace stdb
