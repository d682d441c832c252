#pragma once

// Independent reference computations the library is checked against.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// exp(M) by scaling and squaring with a 30-term Taylor series.
inline Mat expm(const Mat& m) {
  const double norm = m.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Mat a = m / std::ldexp(1.0, squarings);
  Mat term = Mat::Identity(m.rows(), m.cols());
  Mat sum = term;
  for (int i = 1; i <= 30; ++i) {
    term = term * a / static_cast<double>(i);
    sum += term;
  }
  for (int i = 0; i < squarings; ++i) sum = sum * sum;
  return sum;
}

// Van Loan: int_0^t e^{A s} K e^{A^T s} ds for constant A, K.
inline Mat lyapunov_integral(const Mat& a, const Mat& kappa, double t) {
  const auto k = a.rows();
  Mat block = Mat::Zero(2 * k, 2 * k);
  block.topLeftCorner(k, k) = -a;
  block.topRightCorner(k, k) = kappa;
  block.bottomRightCorner(k, k) = a.transpose();
  const Mat f = expm(block * t);
  return f.bottomRightCorner(k, k).transpose() * f.topRightCorner(k, k);
}

// int_0^t e^{A s} c ds via the augmented state [x; 1].
inline Vec offset_integral(const Mat& a, const Vec& c, double t) {
  const auto k = a.rows();
  Mat aug = Mat::Zero(k + 1, k + 1);
  aug.topLeftCorner(k, k) = a;
  aug.topRightCorner(k, 1) = c;
  return expm(aug * t).topRightCorner(k, 1);
}

struct Gaussian {
  Vec mean;
  Mat cov;
};

// x(t) | x(0) = x0, x(1) = x1 for dx = (A x + c) dt + dW, E dW dW^T = K dt,
// by conditioning the joint Gaussian of (x(t), x(1)).
inline Gaussian conditioned_marginal(const Mat& a, const Vec& c, const Mat& kappa, const Vec& x0, const Vec& x1,
                                     double t) {
  const Mat omega_t = expm(a * t);
  const Mat omega_rest = expm(a * (1.0 - t));
  const Vec mean_t = omega_t * x0 + offset_integral(a, c, t);
  const Mat var_t = lyapunov_integral(a, kappa, t);
  const Vec mean_1 = omega_rest * mean_t + offset_integral(a, c, 1.0 - t);
  const Mat var_1 = omega_rest * var_t * omega_rest.transpose() + lyapunov_integral(a, kappa, 1.0 - t);
  const Mat cross = var_t * omega_rest.transpose();
  const Mat gain = var_1.ldlt().solve(cross.transpose()).transpose();
  Gaussian g;
  g.mean = mean_t + gain * (x1 - mean_1);
  g.cov = var_t - gain * cross.transpose();
  g.cov = 0.5 * (g.cov + g.cov.transpose());
  return g;
}

inline double normal_logpdf(const Vec& x, const Vec& mean, const Mat& cov) {
  const Eigen::LLT<Mat> llt(cov);
  const Vec z = llt.matrixL().solve(x - mean);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (z.squaredNorm() + logdet + static_cast<double>(x.size()) * std::log(2.0 * M_PI));
}

// Central-difference gradient of a scalar function.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec up = x, down = x;
    up(i) += h;
    down(i) -= h;
    g(i) = (f(up) - f(down)) / (2.0 * h);
  }
  return g;
}

inline double sample_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// 1-D Brownian bridge with x0 drawn from a Gaussian mixture: the marginal
// p(x_t | x1) is the mixture of N((1-t) mu_m + t x1, (1-t)^2 sd_m^2 + t(1-t)).
// Returns d/dx log p(x_t | x1).
inline double gmm_bridge_score(const std::vector<double>& weights, const std::vector<double>& means,
                               const std::vector<double>& sds, double t, double x, double x1) {
  std::vector<double> logw(weights.size()), slope(weights.size());
  double top = -1e300;
  for (std::size_t m = 0; m < weights.size(); ++m) {
    const double mean = (1.0 - t) * means[m] + t * x1;
    const double var = (1.0 - t) * (1.0 - t) * sds[m] * sds[m] + t * (1.0 - t);
    logw[m] = std::log(weights[m]) - 0.5 * std::log(var) - 0.5 * (x - mean) * (x - mean) / var;
    slope[m] = -(x - mean) / var;
    top = std::max(top, logw[m]);
  }
  double num = 0.0, den = 0.0;
  for (std::size_t m = 0; m < weights.size(); ++m) {
    const double w = std::exp(logw[m] - top);
    num += w * slope[m];
    den += w;
  }
  return num / den;
}

}  // namespace oracle
