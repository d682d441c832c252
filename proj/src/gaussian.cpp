#include "stdb/gaussian.hpp"

#include "stdb/errors.hpp"

#include <cmath>
#include <numbers>

namespace stdb {

GaussianMarginal make_gaussian(Vec mean, Mat cov) {
  require(cov.rows() == mean.size() && cov.cols() == mean.size(), ErrorCode::DimensionMismatch,
          "covariance must be k x k for a k-vector mean");
  GaussianMarginal m;
  m.cov = symmetrize(cov);
  auto factor = jittered_cholesky(m.cov);
  m.mean = std::move(mean);
  m.chol = std::move(factor.lower);
  m.jitter = factor.jitter;
  m.degenerate = factor.degenerate;
  return m;
}

double gaussian_logpdf(const GaussianMarginal& m, const Vec& x) {
  require(x.size() == m.mean.size(), ErrorCode::DimensionMismatch, "logpdf point has wrong dimension");
  require(!m.degenerate, ErrorCode::NotPSD, "log-density of a point mass is undefined");
  const Vec z = m.chol.triangularView<Eigen::Lower>().solve(x - m.mean);
  const double log_det = 2.0 * m.chol.diagonal().array().log().sum();
  const double k = static_cast<double>(m.mean.size());
  return -0.5 * (k * std::log(2.0 * std::numbers::pi) + log_det + z.squaredNorm());
}

Vec gaussian_score(const GaussianMarginal& m, const Vec& x) {
  require(x.size() == m.mean.size(), ErrorCode::DimensionMismatch, "score point has wrong dimension");
  require(!m.degenerate, ErrorCode::NotPSD, "score of a point mass is undefined");
  const auto lower = m.chol.triangularView<Eigen::Lower>();
  const Vec z = lower.solve(x - m.mean);
  return -lower.transpose().solve(z);
}

nlohmann::json marginal_to_json(const GaussianMarginal& m) {
  nlohmann::json doc;
  doc["dim"] = m.dim();
  doc["mean"] = std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size());
  std::vector<double> lower;
  for (Eigen::Index i = 0; i < m.cov.rows(); ++i)
    for (Eigen::Index j = 0; j <= i; ++j) lower.push_back(m.cov(i, j));
  doc["cov_lower"] = std::move(lower);
  doc["jitter"] = m.jitter;
  doc["degenerate"] = m.degenerate;
  return doc;
}

}  // namespace stdb
