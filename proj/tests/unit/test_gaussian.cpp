#include "doctest.h"
#include "oracles.hpp"

#include "stdb/errors.hpp"
#include "stdb/gaussian.hpp"
#include "stdb/linalg.hpp"

#include <cmath>

using namespace stdb;

TEST_CASE("log-density") {
  const GaussianMarginal standard = make_gaussian(Vec::Zero(1), Mat::Identity(1, 1));
  CHECK(gaussian_logpdf(standard, Vec::Zero(1)) == doctest::Approx(-0.9189385332046727).epsilon(1e-12));

  Mat cov(3, 3);
  cov << 2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5;
  Vec mean(3);
  mean << 1.0, -1.0, 0.5;
  const GaussianMarginal g = make_gaussian(mean, cov);
  const double at_mean = -0.5 * (3.0 * std::log(2.0 * M_PI) + std::log(cov.determinant()));
  CHECK(gaussian_logpdf(g, mean) == doctest::Approx(at_mean).epsilon(1e-12));
  Vec x(3);
  x << 0.2, 0.4, -1.0;
  CHECK(gaussian_logpdf(g, x) == doctest::Approx(oracle::normal_logpdf(x, mean, cov)).epsilon(1e-12));

  Mat diag = Mat::Zero(2, 2);
  diag(0, 0) = 0.7;
  diag(1, 1) = 2.5;
  const GaussianMarginal d = make_gaussian(Vec::Zero(2), diag);
  Vec y(2);
  y << 0.3, -1.1;
  const double sum = gaussian_logpdf(make_gaussian(Vec::Zero(1), Mat::Constant(1, 1, 0.7)), y.head(1)) +
                     gaussian_logpdf(make_gaussian(Vec::Zero(1), Mat::Constant(1, 1, 2.5)), y.tail(1));
  CHECK(std::abs(gaussian_logpdf(d, y) - sum) < 1e-12);
}

TEST_CASE("score matches finite differences") {
  Mat cov(2, 2);
  cov << 0.8, 0.25, 0.25, 0.4;
  Vec mean(2);
  mean << 0.5, -0.3;
  const GaussianMarginal g = make_gaussian(mean, cov);
  Vec x(2);
  x << -0.2, 0.9;
  const Vec fd = oracle::fd_gradient([&](const Vec& v) { return gaussian_logpdf(g, v); }, x, 1e-4);
  CHECK((gaussian_score(g, x) - fd).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("jittered Cholesky") {
  SUBCASE("point mass") {
    const JitteredCholesky f = jittered_cholesky(Mat::Zero(3, 3));
    CHECK(f.degenerate);
    CHECK(f.lower.isZero(0.0));
    CHECK_THROWS_AS(gaussian_logpdf(make_gaussian(Vec::Zero(3), Mat::Zero(3, 3)), Vec::Zero(3)), Error);
  }
  SUBCASE("rank deficient") {
    Vec v(3);
    v << 1.0, 2.0, -1.0;
    const Mat cov = v * v.transpose();
    const JitteredCholesky f = jittered_cholesky(cov);
    CHECK_FALSE(f.degenerate);
    CHECK(f.jitter > 0.0);
    CHECK((f.lower * f.lower.transpose() - cov).norm() < 1e-8);
  }
  SUBCASE("indefinite") {
    Mat cov(2, 2);
    cov << 1.0, 0.0, 0.0, -0.5;
    CHECK_THROWS_AS(jittered_cholesky(cov), Error);
  }
}

TEST_CASE("marginal export") {
  Mat cov(2, 2);
  cov << 1.0, 0.2, 0.2, 3.0;
  const auto j = marginal_to_json(make_gaussian(Vec::Ones(2), cov));
  CHECK(j.at("dim").get<int>() == 2);
  CHECK(j.at("cov_lower").size() == 3);  // row-wise lower triangle
  CHECK(j.at("cov_lower")[1].get<double>() == doctest::Approx(0.2));
  CHECK(j.at("cov_lower")[2].get<double>() == doctest::Approx(3.0));
}
