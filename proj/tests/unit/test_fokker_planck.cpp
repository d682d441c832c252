#include "doctest.h"

#include "stdb/errors.hpp"
#include "stdb/fokker_planck.hpp"

#include <cmath>

using namespace stdb;

TEST_CASE("density is the Brownian bridge marginal") {
  const ScalarBridgeProblem p{0.0, 0.0, 1.0, -1.0, 2.0};
  const double t = 0.3;
  const double mean = 0.7 * -1.0 + 0.3 * 2.0;
  const double var = 0.3 * 0.7;
  for (double x : {-1.0, 0.0, 0.5}) {
    const double expected = std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2.0 * M_PI * var);
    CHECK(bridge_density(p, x, t) == doctest::Approx(expected).epsilon(1e-12));
  }
  CHECK(bridge_drift_1d(p, 0.4, t) == doctest::Approx((2.0 - 0.4) / 0.7).epsilon(1e-12));
  const auto m = bridge_moments_1d(p, t);
  CHECK(m.mean == doctest::Approx(mean).epsilon(1e-12));
  CHECK(m.var == doctest::Approx(var).epsilon(1e-12));
}

TEST_CASE("residual vanishes at second order") {
  for (const ScalarBridgeProblem& p : {ScalarBridgeProblem{0.0, 0.0, 1.0, 0.0, 1.0},
                                       ScalarBridgeProblem{-0.8, 0.5, 0.6, 1.0, -1.0}}) {
    const double coarse = fp_residual(p, 0.5, 2e-2);
    const double fine = fp_residual(p, 0.5, 1e-2);
    const double finer = fp_residual(p, 0.5, 5e-3);
    CHECK(coarse / fine >= 3.0);
    CHECK(fine / finer >= 3.0);
    CHECK(finer < 1e-3);
  }
}

TEST_CASE("preconditions") {
  CHECK_THROWS_AS(fp_residual(ScalarBridgeProblem{0.0, 0.0, 0.0, 0.0, 1.0}, 0.5, 1e-2), Error);
  CHECK_THROWS_AS(fp_residual(ScalarBridgeProblem{}, 1.0, 1e-2), Error);
}
