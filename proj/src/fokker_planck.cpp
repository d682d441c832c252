#include "stdb/fokker_planck.hpp"

#include "stdb/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace stdb {

namespace {

// (e^{a d} - 1) / a and (e^{2 a d} - 1) / (2 a) with their a -> 0 limits.
double growth(double a, double d) { return a == 0.0 ? d : std::expm1(a * d) / a; }

double normal_pdf(double x, double mean, double var) {
  const double z = x - mean;
  return std::exp(-0.5 * z * z / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

void check(const ScalarBridgeProblem& p, double t) {
  require(p.kappa > 0.0, ErrorCode::InvalidArgument, "Fokker-Planck oracle needs kappa > 0");
  require(t > 0.0 && t < 1.0, ErrorCode::DomainError, "Fokker-Planck oracle needs t in (0, 1)");
}

}  // namespace

ScalarMoments scalar_transition(const ScalarBridgeProblem& p, double x, double s, double t) {
  const double d = t - s;
  return {std::exp(p.a * d) * x + p.c * growth(p.a, d), p.kappa * growth(2.0 * p.a, d)};
}

double bridge_density(const ScalarBridgeProblem& p, double x, double t) {
  const auto fwd = scalar_transition(p, p.x0, 0.0, t);
  const auto bwd = scalar_transition(p, x, t, 1.0);
  const auto all = scalar_transition(p, p.x0, 0.0, 1.0);
  return normal_pdf(x, fwd.mean, fwd.var) * normal_pdf(p.x1, bwd.mean, bwd.var) /
         normal_pdf(p.x1, all.mean, all.var);
}

double bridge_drift_1d(const ScalarBridgeProblem& p, double x, double t) {
  const auto bwd = scalar_transition(p, x, t, 1.0);
  const double omega = std::exp(p.a * (1.0 - t));
  return p.a * x + p.c + p.kappa * omega * (p.x1 - bwd.mean) / bwd.var;
}

ScalarMoments bridge_moments_1d(const ScalarBridgeProblem& p, double t) {
  const auto fwd = scalar_transition(p, p.x0, 0.0, t);
  const auto bwd = scalar_transition(p, 0.0, t, 1.0);  // mean = offset part
  const double omega = std::exp(p.a * (1.0 - t));
  const double precision = 1.0 / fwd.var + omega * omega / bwd.var;
  const double mean = (fwd.mean / fwd.var + omega * (p.x1 - bwd.mean) / bwd.var) / precision;
  return {mean, 1.0 / precision};
}

double fp_residual(const ScalarBridgeProblem& p, double t, double h, double h_t) {
  check(p, t);
  require(h > 0.0, ErrorCode::InvalidArgument, "spatial step must be positive");
  if (h_t <= 0.0) h_t = h;
  require(t - h_t > 0.0 && t + h_t < 1.0, ErrorCode::DomainError, "time stencil leaves (0, 1)");
  const auto m = bridge_moments_1d(p, t);
  const double sd = std::sqrt(m.var);
  const double lo = m.mean - 4.0 * sd;
  const auto n = static_cast<std::size_t>(std::ceil(8.0 * sd / h));
  auto flux = [&](double x) { return bridge_drift_1d(p, x, t) * bridge_density(p, x, t); };
  double worst = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    const double x = lo + static_cast<double>(i) * h;
    const double dp_dt = (bridge_density(p, x, t + h_t) - bridge_density(p, x, t - h_t)) / (2.0 * h_t);
    const double dflux = (flux(x + h) - flux(x - h)) / (2.0 * h);
    const double lap = (bridge_density(p, x + h, t) - 2.0 * bridge_density(p, x, t) +
                        bridge_density(p, x - h, t)) / (h * h);
    worst = std::max(worst, std::abs(dp_dt + dflux - 0.5 * p.kappa * lap));
  }
  return worst;
}

}  // namespace stdb
