#pragma once

#include "stdb/bridge.hpp"
#include "stdb/datasets.hpp"
#include "stdb/schedule.hpp"
#include "stdb/score.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace stdb {

struct ElboEstimate {
  double value = 0.0;
  std::size_t n_samples = 0;
  double std_error = 0.0;
  std::vector<double> terms;  // per-sample contributions, for paired comparisons

  bool feasible() const { return std::isfinite(value); }
};

// Standard error of the per-sample differences b - a (same random numbers).
double paired_std_error(const ElboEstimate& a, const ElboEstimate& b);

/// Literal: E[log p(x(t) | x(0), x(1))] with x(t) drawn from that same bridge
/// marginal (t over the nodes in [eps, 1 - eps], x(0) ~ p0, x(1) ~ GT).
/// Evidence: mean over GT of log p(x(1)) under the pushforward of p0,
/// N(Omega(1;0) m0 + m_c, Omega(1;0) S0 Omega(1;0)^T + Sigma(0)).
enum class ElboObjective { Literal, Evidence };
std::string to_string(ElboObjective o);
ElboObjective elbo_objective_from_string(const std::string& s);

enum class FamilyKind { ScalarIdentity, ScalarLaplacian, EigenDiagonal };
std::string to_string(FamilyKind f);
FamilyKind family_kind_from_string(const std::string& s);

/// Constant basic process A = f(params), kappa = params.back() * I.
///   scalar-identity:  params (a, kappa),        A = a I
///   scalar-laplacian: params (a, kappa),        A = a L
///   eigen-diagonal:   params (a_1..a_k, kappa), A = P diag(a) P^T, L = P diag(lambda) P^T
struct ScheduleFamily {
  FamilyKind kind = FamilyKind::ScalarIdentity;
  std::size_t dim = 1;
  Mat laplacian;  // required for the Laplacian kinds
  Vec params;

  static ScheduleFamily scalar_identity(std::size_t dim, double a, double kappa);
  static ScheduleFamily scalar_laplacian(const Mat& laplacian, double a, double kappa);
  static ScheduleFamily eigen_diagonal(const Mat& laplacian, const Vec& a, double kappa);

  std::size_t n_params() const { return static_cast<std::size_t>(params.size()); }
  ScheduleFamily with_params(const Vec& p) const;
  Mat drift_matrix() const;
  double kappa() const { return params[params.size() - 1]; }
  // Throws InvalidArgument for kappa <= 0 or non-finite parameters.
  DriftSchedule to_schedule() const;
  nlohmann::json to_json() const;
};

struct ElboOptions {
  ElboObjective objective = ElboObjective::Literal;
  std::size_t n_mc = 4000;  // literal objective only
  std::uint64_t seed = 0;
  std::size_t n_steps = 1000;
  double epsilon = 1e-3;

  void validate() const;
};

/// ELBO of the Doob bridge of an arbitrary basic schedule. Degenerate schedules
/// (NotPSD, SingularSchedule, IllConditioned) give value = -inf.
ElboEstimate elbo(const DriftSchedule& basic, const Mat& gt_samples, const InitialDistribution& p0,
                  const ElboOptions& options);
// Parameters outside the family's domain (kappa <= 0) give value = -inf.
ElboEstimate elbo(const ScheduleFamily& family, const Mat& gt_samples, const InitialDistribution& p0,
                  const ElboOptions& options);

struct SearchConfig {
  Vec lower;
  Vec upper;
  std::size_t max_iterations = 60;
  double initial_step = 0.25;  // simplex edge as a fraction of the box width
  double tolerance = 1e-6;     // stop when the simplex spread in value falls below this
  ElboOptions elbo;
};

struct SearchResult {
  ScheduleFamily best;
  ElboEstimate best_elbo;
  ElboEstimate initial_elbo;
  std::vector<double> best_seen;  // after each iteration, starting with the initial point
  std::vector<Vec> best_params;
  std::size_t evaluations = 0;
};

/// Nelder-Mead in the parameter box (points are clamped to it) with common
/// random numbers across evaluations. Keeps the best point seen. Throws
/// InfeasibleFamily when every evaluation is -inf.
SearchResult max_elbo(const ScheduleFamily& initial, const Mat& gt_samples, const InitialDistribution& p0,
                      const SearchConfig& config);

/// H_ij = d s_i / d x_j at x(t) = x0 by central differences with step
/// 1e-4 (1 + |x0_j|). Throws ExtractFail on non-finite values.
Mat extract_hessian(const ScoreFunction& score, const Vec& x0, const Vec& pin, double t);

/// k x k matrix function of (t, x0): an Mlp on [t, sin(2^i pi t), x0] with k^2
/// outputs (column-major matrix).
class HessianModel {
 public:
  HessianModel(std::size_t dim, std::vector<std::size_t> hidden, Activation activation);

  std::size_t dim() const noexcept { return dim_; }
  Mlp& net() noexcept { return net_; }
  const Mlp& net() const noexcept { return net_; }
  Mat embed(const Vec& t, const Mat& x0) const;
  Mat operator()(double t, const Vec& x0) const;

 private:
  std::size_t dim_;
  Mlp net_;
};

struct HessianBatch {
  Vec t;
  Mat x0;                   // k x n
  std::vector<Mat> target;  // analytic Hessians of log p at x(t) = x(0)
  Vec weight;
};

/// mean_i w_i ||H(t_i, x0_i) - target_i||_F^2 and its gradient.
LossAndGrad hessian_regression_loss(const HessianModel& model, const HessianBatch& batch);

enum class HessianSource { Trained, Analytic };
std::string to_string(HessianSource h);
HessianSource hessian_source_from_string(const std::string& s);

struct RefineConfig {
  std::size_t max_iterations = 3;
  std::vector<double> knots;  // schedule knots; empty gives 11 uniform knots on [eps, 1 - eps]
  std::size_t n_hessian = 256;  // GT draws averaged into H(t)
  HessianSource hessian = HessianSource::Trained;
  std::vector<std::size_t> hidden{64, 64};
  TrainConfig train;
  Weighting weighting = Weighting::Variance;
  std::vector<double> step_sizes{1.0, 0.5, 0.25, 0.125};
  double significance = 3.0;  // accept only improvements above this many standard errors
  ElboOptions elbo{ElboObjective::Evidence};

  void validate() const;
};

struct RefineStep {
  std::size_t iteration = 0;
  double step_size = 0.0;  // 0 when no step size helped
  ElboEstimate candidate;
  double improvement = 0.0;
  double std_error = 0.0;
  bool accepted = false;
  double best_seen = 0.0;
};

struct RefineResult {
  DriftSchedule schedule;
  ElboEstimate initial;
  ElboEstimate final_elbo;
  std::vector<RefineStep> trace;
  std::vector<double> knots;
  std::vector<Mat> mean_hessian;  // H(t) of the last iteration, per knot
  std::string stop_reason;
};

/// The schedule as tabulated drift/diffusion/offset at the knots (clamped outside).
DriftSchedule tabulate_schedule(const DriftSchedule& schedule, const std::vector<double>& knots);

/// Mean over (x0, pin) pairs of extract_hessian at each knot time.
std::vector<Mat> mean_hessian(const ScoreFunction& score, const std::vector<double>& knots, const Mat& x0,
                              const Mat& pins);

/// Per-sample form of the update: A(t; x0) = A(t) + H(t; x0) at the knots.
DriftSchedule per_sample_update(const DriftSchedule& schedule, const ScoreFunction& score, const Vec& x0,
                                const Vec& pin, const std::vector<double>& knots);

/// A(t) <- A(t) + eta H(t), repeated while the ELBO improves by more than
/// `significance` paired standard errors. Candidates that are non-finite or
/// fail to improve are rolled back; the loop stops after the first such
/// iteration. Throws TrainingDiverged from the score fits.
RefineResult refine_drift(const DriftSchedule& schedule, const Mat& gt_samples, const InitialDistribution& p0,
                          const RefineConfig& config);

}  // namespace stdb
