#pragma once

#include <cstddef>

namespace stdb {

/// 1-D basic process dx = (a x + c) dt + sqrt(kappa) dW from x0 at t = 0,
/// conditioned on x(1) = x1.
struct ScalarBridgeProblem {
  double a = 0.0;
  double c = 0.0;
  double kappa = 1.0;
  double x0 = 0.0;
  double x1 = 0.0;
};

// Mean and variance of x(t) given x(s) = x for the basic process.
struct ScalarMoments {
  double mean;
  double var;
};
ScalarMoments scalar_transition(const ScalarBridgeProblem& p, double x, double s, double t);

/// p~(x, t) = p(x, t | x0, 0) p(x1, 1 | x, t) / p(x1, 1 | x0, 0), built from
/// the transition densities alone.
double bridge_density(const ScalarBridgeProblem& p, double x, double t);
/// a x + c + kappa d/dx log p(x1, 1 | x, t).
double bridge_drift_1d(const ScalarBridgeProblem& p, double x, double t);
/// Moments of p~(., t) by Gaussian conditioning.
ScalarMoments bridge_moments_1d(const ScalarBridgeProblem& p, double t);

/// max |dp/dt + d(b p)/dx - kappa/2 d2p/dx2| over x in mean +- 4 sd, all
/// derivatives by central differences with spatial step h and time step
/// h_t (h_t <= 0 means h_t = h).
double fp_residual(const ScalarBridgeProblem& p, double t, double h, double h_t = 0.0);

}  // namespace stdb
