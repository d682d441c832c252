#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>

namespace stdb {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

inline bool all_finite(const Mat& m) { return m.allFinite(); }

double min_eigenvalue(const Mat& symmetric);

/// Cholesky factor of a covariance that may be rank-deficient.
///
/// Factorizes directly when every pivot exceeds 1e-10 * trace/k; otherwise
/// adds jitter * I, starting at 1e-10 * trace/k and escalating by 10x up to
/// 1e-6 * trace/k. A covariance with zero trace is
/// treated as a point mass (`degenerate`, zero factor). Throws NotPSD when no
/// jitter level succeeds or an eigenvalue is below -tol * max(1, trace/k).
struct JitteredCholesky {
  Mat lower;
  double jitter = 0.0;
  bool degenerate = false;
};

JitteredCholesky jittered_cholesky(const Mat& covariance, double psd_tol = 1e-10);

// 1-norm condition number estimate from an explicit inverse.
double condition_number_1(const Mat& m, const Mat& inverse);

// Runs body(begin, end) over [0, n) split into contiguous chunks, one per worker.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t max_threads = 0);

}  // namespace stdb
