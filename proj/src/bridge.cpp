#include "stdb/bridge.hpp"

#include "stdb/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace stdb {

namespace {

Mat solve_spd(const Mat& spd, const Mat& rhs, const char* what, double t) {
  Eigen::LLT<Mat> llt(spd);
  if (llt.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << what << " is singular at t = " << t << " (too close to the pinned endpoint)";
    fail(ErrorCode::NearPinned, msg.str());
  }
  return llt.solve(rhs);
}

Mat inverse_diffusion(const Mat& kappa, double t) {
  Eigen::LLT<Mat> llt(kappa);
  if (llt.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << "diffusion matrix must be positive definite for the forward-time target at t = " << t;
    fail(ErrorCode::NotPSD, msg.str());
  }
  return llt.solve(Mat::Identity(kappa.rows(), kappa.cols()));
}

}  // namespace

Mat BridgeDrift::base_drift(double) const {
  const auto k = static_cast<Eigen::Index>(dim());
  return Mat::Zero(k, k);
}

Vec BridgeDrift::base_offset(double) const { return Vec::Zero(static_cast<Eigen::Index>(dim())); }

AffineTarget BridgeDrift::ft_target_map(double t) const {
  const BridgeCoefficients c = at(t);
  const Mat kinv = inverse_diffusion(c.diffusion, t);
  return AffineTarget{kinv * (-c.restoring - base_drift(t)), kinv * c.pin_gain,
                      kinv * (c.offset - base_offset(t))};
}

Vec BridgeDrift::drift(double t, const Vec& x, const Vec& x1) const {
  const BridgeCoefficients c = at(t);
  return -c.restoring * x + c.pin_gain * x1 + c.offset;
}

// --- direct bridges -------------------------------------------------------

DirectBridgeDrift::DirectBridgeDrift(DriftSchedule restoring) : schedule_(std::move(restoring)) {
  require(schedule_.dim > 0 && schedule_.drift && schedule_.diffusion, ErrorCode::InvalidArgument,
          "bridge schedule needs dim, drift and diffusion");
}

BridgeCoefficients DirectBridgeDrift::at(double t) const {
  Mat restoring = schedule_.drift_at(t);
  Mat gain = restoring;
  return BridgeCoefficients{std::move(restoring), std::move(gain), schedule_.offset_at(t),
                            schedule_.diffusion_at(t)};
}

std::shared_ptr<const BridgeDrift> make_brownian_bridge(std::size_t dim, double diffusion_scale) {
  const auto k = static_cast<Eigen::Index>(dim);
  DriftSchedule s;
  s.name = "brownian";
  s.dim = dim;
  s.drift = [k](double t) -> Mat { return Mat::Identity(k, k) / (1.0 - t); };
  s.diffusion = [k, diffusion_scale](double) -> Mat { return diffusion_scale * Mat::Identity(k, k); };
  s.singular_at_one = true;
  return std::make_shared<DirectBridgeDrift>(std::move(s));
}

std::shared_ptr<const BridgeDrift> make_laplacian_bridge(const Mat& laplacian, std::string name) {
  require(laplacian.rows() == laplacian.cols(), ErrorCode::DimensionMismatch, "Laplacian must be square");
  const auto k = laplacian.rows();
  DriftSchedule s;
  s.name = std::move(name);
  s.dim = static_cast<std::size_t>(k);
  s.drift = [laplacian](double t) -> Mat { return laplacian / (1.0 - t); };
  s.diffusion = [k](double) -> Mat { return Mat::Identity(k, k); };
  s.singular_at_one = true;
  return std::make_shared<DirectBridgeDrift>(std::move(s));
}

// --- Doob bridges -----------------------------------------------------------

DoobBridgeDrift::DoobBridgeDrift(DriftSchedule base, std::shared_ptr<const Propagator> prop, double epsilon)
    : base_(std::move(base)), prop_(std::move(prop)), epsilon_(epsilon) {
  require(prop_ != nullptr, ErrorCode::MissingPropagator, "Doob bridge needs a basic-process propagator");
  require(prop_->dim() == base_.dim, ErrorCode::DimensionMismatch, "propagator and schedule dimensions differ");
  require(std::abs(prop_->grid().t_end() - 1.0) < 1e-12, ErrorCode::MissingPropagator,
          "Doob bridge needs the basic propagator up to t = 1");
  require(epsilon_ >= 0.0, ErrorCode::InvalidArgument, "epsilon must be non-negative");

  const auto& grid = prop_->grid();
  const auto k = static_cast<Eigen::Index>(base_.dim);
  const double h = grid.step();
  const std::size_t n = grid.n_steps();
  omega_end_ = prop_->to_end();
  sigma_end_.assign(grid.size(), Mat::Zero(k, k));
  mean_end_.assign(grid.size(), Vec::Zero(k));
  auto integrand = [&](std::size_t j) {
    const Mat& w = omega_end_[j];
    return Mat(w * base_.diffusion_at(grid.time(j)) * w.transpose());
  };
  Mat upper = integrand(n);
  Vec upper_c = base_.offset_at(grid.time(n));
  for (std::size_t j = n; j-- > 0;) {
    const Mat lower = integrand(j);
    const Vec lower_c = omega_end_[j] * base_.offset_at(grid.time(j));
    sigma_end_[j] = symmetrize(sigma_end_[j + 1] + 0.5 * h * (upper + lower));
    mean_end_[j] = mean_end_[j + 1] + 0.5 * h * (upper_c + lower_c);
    upper = lower;
    upper_c = lower_c;
  }
}

DoobBridgeDrift::EndpointTerms DoobBridgeDrift::endpoint_terms(double t) const {
  const auto& grid = prop_->grid();
  require(grid.contains(t), ErrorCode::DomainError, "time outside the basic propagator grid");
  if (auto j = grid.index_of(t)) return {omega_end_[*j], sigma_end_[*j], mean_end_[*j]};
  const std::size_t next = grid.interval(t) + 1;
  const double t_next = grid.time(next);
  const double delta = t_next - t;
  const Mat step = rk4_step_factor(base_.drift, t, delta, base_.dim);
  EndpointTerms out;
  out.omega = omega_end_[next] * step;
  const Mat g_here = out.omega * base_.diffusion_at(t) * out.omega.transpose();
  const Mat g_next = omega_end_[next] * base_.diffusion_at(t_next) * omega_end_[next].transpose();
  out.sigma = symmetrize(sigma_end_[next] + 0.5 * delta * (g_here + g_next));
  out.drift_mean = mean_end_[next] + 0.5 * delta * (out.omega * base_.offset_at(t) +
                                                    omega_end_[next] * base_.offset_at(t_next));
  return out;
}

DoobBridgeDrift::Solved DoobBridgeDrift::solve(double t) const {
  if (t > 1.0 - epsilon_ + 1e-12 || t >= 1.0) {
    std::ostringstream msg;
    msg << "t = " << t << " lies beyond the clipped endpoint 1 - " << epsilon_;
    fail(ErrorCode::NearPinned, msg.str());
  }
  EndpointTerms e = endpoint_terms(t);
  Solved s;
  s.gain = solve_spd(e.sigma, e.omega, "endpoint covariance", t).transpose();
  s.omega = std::move(e.omega);
  s.drift_mean = std::move(e.drift_mean);
  return s;
}

BridgeCoefficients DoobBridgeDrift::at(double t) const {
  const Solved s = solve(t);
  const Mat kappa = base_.diffusion_at(t);
  BridgeCoefficients c;
  c.pin_gain = kappa * s.gain;
  c.restoring = c.pin_gain * s.omega - base_.drift_at(t);
  c.offset = base_.offset_at(t) - c.pin_gain * s.drift_mean;
  c.diffusion = kappa;
  return c;
}

AffineTarget DoobBridgeDrift::ft_target_map(double t) const {
  const Solved s = solve(t);
  return AffineTarget{-s.gain * s.omega, s.gain, -s.gain * s.drift_mean};
}

Vec DoobBridgeDrift::doob_score(double t, const Vec& x_t, const Vec& x1) const {
  require(x_t.size() == static_cast<Eigen::Index>(dim()) && x1.size() == x_t.size(),
          ErrorCode::DimensionMismatch, "doob_score vectors must have length k");
  const Solved s = solve(t);
  return s.gain * (x1 - s.omega * x_t - s.drift_mean);
}

Mat DoobBridgeDrift::doob_scores(double t, const Mat& states, const Mat& pins) const {
  require(states.rows() == static_cast<Eigen::Index>(dim()) && pins.rows() == states.rows() &&
              pins.cols() == states.cols(),
          ErrorCode::DimensionMismatch, "doob_scores needs k x S states and pins");
  const Solved s = solve(t);
  Mat residual = pins - s.omega * states;
  residual.colwise() -= s.drift_mean;
  return s.gain * residual;
}

double DoobBridgeDrift::pinned_form_defect(double t) const {
  const BridgeCoefficients c = at(t);
  const double scale = c.restoring.norm();
  return scale == 0.0 ? (c.pin_gain.norm()) : (c.pin_gain - c.restoring).norm() / scale;
}

std::shared_ptr<const DoobBridgeDrift> make_doob_bridge(const DriftSchedule& base, std::size_t n_steps,
                                                        double epsilon) {
  auto prop = std::make_shared<const Propagator>(solve_propagator(base, TimeGrid(0.0, 1.0, n_steps)));
  return std::make_shared<const DoobBridgeDrift>(base, std::move(prop), epsilon);
}

Mat bar_drift(const DriftSchedule& base, const Propagator& prop, double t) {
  prop.grid().node(t);
  DoobBridgeDrift doob(base, std::make_shared<const Propagator>(prop), prop.grid().epsilon_clip());
  return doob.at(t).restoring;
}

Vec doob_score(const DriftSchedule& base, const Propagator& prop, double t, const Vec& x_t, const Vec& x1) {
  prop.grid().node(t);
  DoobBridgeDrift doob(base, std::make_shared<const Propagator>(prop), prop.grid().epsilon_clip());
  return doob.doob_score(t, x_t, x1);
}

GaussianMarginal basic_conditional(const DriftSchedule& schedule, const Propagator& prop, const Vec& x_from,
                                   double t_from, double t_to) {
  require(x_from.size() == static_cast<Eigen::Index>(prop.dim()), ErrorCode::DimensionMismatch,
          "initial state has wrong dimension");
  const auto& grid = prop.grid();
  const auto from = grid.index_of(t_from);
  const auto to = grid.index_of(t_to);
  if (!from || !to) fail(ErrorCode::MissingPropagator, "basic_conditional times must be propagator nodes");
  require(*from <= *to, ErrorCode::DomainError, "basic_conditional needs t_from <= t_to");
  Vec mean = prop.between(*to, *from) * x_from + offset_integral(schedule, prop, t_from, t_to);
  return make_gaussian(std::move(mean), covariance_integral(schedule, prop, t_from, t_to));
}

// --- bridge marginals -------------------------------------------------------

void BridgeSpec::validate() const {
  require(drift != nullptr, ErrorCode::InvalidArgument, "bridge spec needs a drift");
  const auto k = static_cast<Eigen::Index>(drift->dim());
  require(x0.size() == k && x1.size() == k, ErrorCode::DimensionMismatch, "bridge endpoints must have length k");
  require(x0.allFinite() && x1.allFinite(), ErrorCode::InvalidArgument, "bridge endpoints must be finite");
  grid.require_clipped();
}

namespace {

struct MomentState {
  Mat omega;
  Mat gain;
  Vec offset;
  Mat cov;
};

MomentState derivative(const BridgeCoefficients& c, const MomentState& s) {
  MomentState d;
  d.omega = -c.restoring * s.omega;
  d.gain = -c.restoring * s.gain + c.pin_gain;
  d.offset = -c.restoring * s.offset + c.offset;
  const Mat rs = c.restoring * s.cov;
  d.cov = -rs - rs.transpose() + c.diffusion;
  return d;
}

MomentState axpy(const MomentState& s, double h, const MomentState& d) {
  return MomentState{s.omega + h * d.omega, s.gain + h * d.gain, s.offset + h * d.offset, s.cov + h * d.cov};
}

void rk4_advance(MomentState& s, const BridgeCoefficients& c0, const BridgeCoefficients& cm,
                 const BridgeCoefficients& c1, double h) {
  const MomentState k1 = derivative(c0, s);
  const MomentState k2 = derivative(cm, axpy(s, 0.5 * h, k1));
  const MomentState k3 = derivative(cm, axpy(s, 0.5 * h, k2));
  const MomentState k4 = derivative(c1, axpy(s, h, k3));
  s.omega += (h / 6.0) * (k1.omega + 2.0 * k2.omega + 2.0 * k3.omega + k4.omega);
  s.gain += (h / 6.0) * (k1.gain + 2.0 * k2.gain + 2.0 * k3.gain + k4.gain);
  s.offset += (h / 6.0) * (k1.offset + 2.0 * k2.offset + 2.0 * k3.offset + k4.offset);
  s.cov += (h / 6.0) * (k1.cov + 2.0 * k2.cov + 2.0 * k3.cov + k4.cov);
  s.cov = symmetrize(s.cov);
}

// Steps across [t0, t1], split so that h * |restoring| stays below 0.5: the
// restoring term grows like 1/(1 - t) and a coarse step near t = 1 is unstable.
void advance_interval(MomentState& s, const BridgeDrift& drift, double t0, double t1, const BridgeCoefficients& c0,
                      const BridgeCoefficients& c1) {
  const double h = t1 - t0;
  const double stiffness =
      std::max(c0.restoring.lpNorm<Eigen::Infinity>(), c1.restoring.lpNorm<Eigen::Infinity>()) * h;
  const auto m = static_cast<std::size_t>(std::min(4096.0, std::max(1.0, std::ceil(stiffness / 0.5))));
  if (m == 1) {
    rk4_advance(s, c0, drift.at(t0 + 0.5 * h), c1, h);
    return;
  }
  const double hs = h / static_cast<double>(m);
  BridgeCoefficients a = c0;
  for (std::size_t i = 0; i < m; ++i) {
    const double ta = t0 + static_cast<double>(i) * hs;
    BridgeCoefficients b = i + 1 == m ? c1 : drift.at(ta + hs);
    rk4_advance(s, a, drift.at(ta + 0.5 * hs), b, i + 1 == m ? t1 - ta : hs);
    a = std::move(b);
  }
}

MomentState initial_state(std::size_t dim) {
  const auto k = static_cast<Eigen::Index>(dim);
  return MomentState{Mat::Identity(k, k), Mat::Zero(k, k), Vec::Zero(k), Mat::Zero(k, k)};
}

BridgeMoments to_moments(double t, const MomentState& s) {
  if (!s.omega.allFinite() || !s.cov.allFinite()) {
    std::ostringstream msg;
    msg << "bridge moments became non-finite at t = " << t;
    fail(ErrorCode::SingularSchedule, msg.str());
  }
  return BridgeMoments{t, s.omega, s.gain, s.offset, s.cov};
}

}  // namespace

std::vector<BridgeMoments> integrate_bridge_moments(const BridgeDrift& drift, const TimeGrid& grid) {
  grid.require_clipped();
  std::vector<BridgeMoments> out;
  out.reserve(grid.size());
  MomentState s = initial_state(drift.dim());
  out.push_back(to_moments(grid.time(0), s));
  BridgeCoefficients c0 = drift.at(grid.time(0));
  for (std::size_t j = 0; j < grid.n_steps(); ++j) {
    BridgeCoefficients c1 = drift.at(grid.time(j + 1));
    advance_interval(s, drift, grid.time(j), grid.time(j + 1), c0, c1);
    out.push_back(to_moments(grid.time(j + 1), s));
    c0 = std::move(c1);
  }
  return out;
}

BridgeMoments bridge_moments_at(const BridgeDrift& drift, const TimeGrid& grid, double t) {
  grid.require_clipped();
  require(grid.contains(t), ErrorCode::DomainError, "bridge time outside [t_start, 1 - eps]");
  MomentState s = initial_state(drift.dim());
  const auto node = grid.index_of(t);
  const std::size_t full = node ? *node : grid.interval(t);
  if (full == 0 && node) return to_moments(grid.time(0), s);
  BridgeCoefficients c0 = drift.at(grid.time(0));
  for (std::size_t j = 0; j < full; ++j) {
    BridgeCoefficients c1 = drift.at(grid.time(j + 1));
    advance_interval(s, drift, grid.time(j), grid.time(j + 1), c0, c1);
    c0 = std::move(c1);
  }
  if (!node) {
    const double tj = grid.time(full);
    const double rest = t - tj;
    if (rest > 0.0) advance_interval(s, drift, tj, t, c0, drift.at(t));
  }
  return to_moments(t, s);
}

GaussianMarginal bridge_marginal(const BridgeSpec& spec, double t) {
  spec.validate();
  const BridgeMoments m = bridge_moments_at(*spec.drift, spec.grid, t);
  return make_gaussian(m.mean(spec.x0, spec.x1), m.cov);
}

double laplacian_channel_variance(double lambda, double t) {
  require(t >= 0.0 && t < 1.0, ErrorCode::DomainError, "Laplacian bridge needs t in [0, 1)");
  const double s = 1.0 - t;
  const double log_s = std::log1p(-t);
  const double delta = 1.0 - 2.0 * lambda;
  // ((s^{2 lambda} - s) / (1 - 2 lambda)) = s * expm1(-delta log s) / delta, 0/0 at lambda = 1/2.
  if (std::abs(delta) < 1e-6) return -s * log_s * (1.0 - 0.5 * delta * log_s);
  return s * std::expm1(-delta * log_s) / delta;
}

GaussianMarginal laplacian_bridge_closed_form(const EigenBasis& basis, const Vec& x0, const Vec& x1, double t) {
  const auto k = static_cast<Eigen::Index>(basis.dim());
  require(x0.size() == k && x1.size() == k, ErrorCode::DimensionMismatch, "bridge endpoints must have length k");
  const Mat blur = matrix_power_one_minus_t(basis, t);
  Vec mean = blur * x0 + (x1 - blur * x1);
  Vec channel(k);
  for (Eigen::Index i = 0; i < k; ++i) channel(i) = laplacian_channel_variance(basis.values(i), t);
  Mat cov = basis.vectors * channel.asDiagonal() * basis.vectors.transpose();
  return make_gaussian(std::move(mean), std::move(cov));
}

// --- general normal bridge --------------------------------------------------

GaussianMarginal GeneralNormalBridge::marginal(std::size_t node, const Vec& x0, const Vec& x_pin) const {
  require(node < tilde_omega.size(), ErrorCode::DomainError, "node outside the general bridge tables");
  return make_gaussian(tilde_omega[node] * x0 - tilde_lambda[node] * x_pin + tilde_varsigma[node],
                       tilde_sigma[node]);
}

GeneralNormalBridge general_normal_bridge(const DriftSchedule& base, std::shared_ptr<const Propagator> prop,
                                          const TimeGrid& grid) {
  grid.require_clipped();
  DoobBridgeDrift doob(base, std::move(prop), grid.epsilon_clip());
  GeneralNormalBridge out{grid, {}, {}, {}, {}, {}, {}};
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const BridgeCoefficients c = doob.at(grid.time(j));
    out.tilde_drift.push_back(-c.restoring);
    out.varsigma.push_back(c.offset);
  }
  for (auto& m : integrate_bridge_moments(doob, grid)) {
    out.tilde_omega.push_back(std::move(m.omega));
    out.tilde_lambda.push_back(-m.pin_map);
    out.tilde_varsigma.push_back(std::move(m.offset));
    out.tilde_sigma.push_back(std::move(m.cov));
  }
  return out;
}

// --- marginal tables ----------------------------------------------------------

BridgeMarginalTable::BridgeMarginalTable(std::shared_ptr<const BridgeDrift> drift, const TimeGrid& grid)
    : drift_(std::move(drift)), grid_(grid) {
  require(drift_ != nullptr, ErrorCode::InvalidArgument, "marginal table needs a drift");
  moments_ = integrate_bridge_moments(*drift_, grid_);
  factors_.reserve(moments_.size());
  ft_maps_.reserve(moments_.size());
  for (std::size_t j = 0; j < moments_.size(); ++j) {
    factors_.push_back(jittered_cholesky(moments_[j].cov));
    ft_maps_.push_back(drift_->ft_target_map(grid_.time(j)));
  }
}

GaussianMarginal BridgeMarginalTable::marginal(std::size_t node, const Vec& x0, const Vec& x1) const {
  const auto& m = moments_.at(node);
  GaussianMarginal g;
  g.mean = m.mean(x0, x1);
  g.cov = m.cov;
  g.chol = factors_[node].lower;
  g.jitter = factors_[node].jitter;
  g.degenerate = factors_[node].degenerate;
  return g;
}

Vec BridgeMarginalTable::sample(std::size_t node, const Vec& x0, const Vec& x1, const Vec& standard_normal) const {
  return moments_.at(node).mean(x0, x1) + factors_[node].lower * standard_normal;
}

Vec BridgeMarginalTable::rt_target(std::size_t node, const Vec& x, const Vec& x0, const Vec& x1) const {
  const auto& f = factors_.at(node);
  require(!f.degenerate, ErrorCode::NotPSD, "reverse-time target is undefined where the bridge is pinned");
  const auto lower = f.lower.triangularView<Eigen::Lower>();
  const Vec z = lower.solve(x - moments_[node].mean(x0, x1));
  return -lower.transpose().solve(z);
}

double BridgeMarginalTable::mean_variance(std::size_t node) const {
  return moments_.at(node).cov.trace() / static_cast<double>(dim());
}

double BridgeMarginalTable::log_det_cov(std::size_t node) const {
  const auto& f = factors_.at(node);
  require(!f.degenerate, ErrorCode::NotPSD, "log-determinant of a point mass");
  return 2.0 * f.lower.diagonal().array().log().sum();
}

}  // namespace stdb
