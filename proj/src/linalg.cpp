#include "stdb/linalg.hpp"

#include "stdb/errors.hpp"

#include <algorithm>
#include <sstream>
#include <thread>
#include <vector>

namespace stdb {

double min_eigenvalue(const Mat& symmetric) {
  if (symmetric.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> solver(symmetric, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) fail(ErrorCode::EigenFail, "eigenvalue computation failed");
  return solver.eigenvalues().minCoeff();
}

JitteredCholesky jittered_cholesky(const Mat& covariance, double psd_tol) {
  const auto k = covariance.rows();
  require(covariance.cols() == k, ErrorCode::DimensionMismatch, "covariance must be square");
  require(covariance.allFinite(), ErrorCode::NotPSD, "covariance has non-finite entries");

  JitteredCholesky out;
  const Mat sym = symmetrize(covariance);
  const double scale = sym.trace() / static_cast<double>(std::max<Eigen::Index>(k, 1));
  if (scale == 0.0 && sym.cwiseAbs().maxCoeff() == 0.0) {
    out.lower = Mat::Zero(k, k);
    out.degenerate = true;
    return out;
  }
  const double floor = -psd_tol * std::max(1.0, std::abs(scale));
  if (scale < 0.0 || min_eigenvalue(sym) < floor) {
    std::ostringstream msg;
    msg << "covariance has an eigenvalue below " << floor;
    fail(ErrorCode::NotPSD, msg.str());
  }

  // Well-conditioned covariances are factorized as they are; jitter is only
  // for the rank-deficient ones, recognised by a pivot below the first level.
  {
    Eigen::LLT<Mat> llt(sym);
    if (llt.info() == Eigen::Success) {
      Mat lower = llt.matrixL();
      if (lower.diagonal().array().square().minCoeff() > 1e-10 * scale) {
        out.lower = std::move(lower);
        return out;
      }
    }
  }
  for (double rel = 1e-10; rel <= 1e-6 * (1.0 + 1e-9); rel *= 10.0) {
    const double jitter = rel * scale;
    Mat shifted = sym;
    shifted.diagonal().array() += jitter;
    Eigen::LLT<Mat> llt(shifted);
    if (llt.info() == Eigen::Success) {
      out.lower = llt.matrixL();
      out.jitter = jitter;
      return out;
    }
  }
  fail(ErrorCode::NotPSD, "Cholesky factorization failed at every jitter level");
}

double condition_number_1(const Mat& m, const Mat& inverse) {
  const double a = m.cwiseAbs().colwise().sum().maxCoeff();
  const double b = inverse.cwiseAbs().colwise().sum().maxCoeff();
  return a * b;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t max_threads) {
  if (n == 0) return;
  std::size_t workers = max_threads != 0 ? max_threads : std::thread::hardware_concurrency();
  workers = std::clamp<std::size_t>(workers, 1, n);
  if (workers == 1) {
    body(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, w, begin, end] {
      try {
        body(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace stdb
