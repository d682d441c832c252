#pragma once

#include "stdb/linalg.hpp"

#include <nlohmann/json.hpp>

namespace stdb {

/// N(mean, cov) with a (possibly jittered) lower Cholesky factor.
/// A zero covariance is a point mass: `degenerate` is set and the factor is 0.
struct GaussianMarginal {
  Vec mean;
  Mat cov;
  Mat chol;
  double jitter = 0.0;
  bool degenerate = false;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(mean.size()); }
  Vec sample(const Vec& standard_normal) const { return mean + chol * standard_normal; }
};

GaussianMarginal make_gaussian(Vec mean, Mat cov);

/// Exact log-density through the stored factor. Throws NotPSD for a point mass.
double gaussian_logpdf(const GaussianMarginal& m, const Vec& x);

/// grad_x log N(x; mean, cov) = -cov^{-1} (x - mean).
Vec gaussian_score(const GaussianMarginal& m, const Vec& x);

/// {"dim", "mean", "cov_lower": row-wise lower triangle, "jitter", "degenerate"}.
nlohmann::json marginal_to_json(const GaussianMarginal& m);

}  // namespace stdb
