#include "doctest.h"
#include "oracles.hpp"

#include "stdb/affine_opt.hpp"
#include "stdb/errors.hpp"
#include "stdb/laplacian.hpp"
#include "stdb/rng.hpp"

#include <cmath>

using namespace stdb;

namespace {

constexpr double kEps = 1e-3;

Mat normal_set(std::size_t n, double mean, double sd, std::uint64_t seed) {
  Mat m(1, static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < m.cols(); ++i) {
    CounterRng r(seed, RngDomain::Dataset, static_cast<std::uint64_t>(i));
    m(0, i) = mean + sd * r.normal();
  }
  return m;
}

// RT score of a fixed-x0 bridge family, pin = x(1).
std::shared_ptr<LambdaScore> analytic_rt_score(std::shared_ptr<const BridgeDrift> drift, const Vec& x0) {
  const auto k = drift->dim();
  return std::make_shared<LambdaScore>(k, [drift, x0](double t, const Mat& x, const Mat& pin) {
    Mat out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
      const BridgeSpec spec{drift, x0, pin.col(i), TimeGrid::pinned(1000, kEps)};
      out.col(i) = analytic_rt_target(spec, t, x.col(i));
    }
    return out;
  });
}

double rel_frobenius(const Mat& a, const Mat& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST_CASE("schedule families") {
  const Mat lap = build_grid_laplacian(1, 2).matrix;
  CHECK(ScheduleFamily::scalar_identity(3, -0.5, 2.0).drift_matrix() == -0.5 * Mat::Identity(3, 3));
  CHECK(ScheduleFamily::scalar_laplacian(lap, 0.25, 1.0).drift_matrix() == 0.25 * lap);
  const EigenBasis b = eigendecompose(lap);
  CHECK((ScheduleFamily::eigen_diagonal(lap, b.values, 1.0).drift_matrix() - lap).norm() < 1e-12);
  const auto f = ScheduleFamily::scalar_identity(2, 0.1, 0.7);
  CHECK(f.to_schedule().diffusion_at(0.3) == 0.7 * Mat::Identity(2, 2));
  CHECK(f.with_params(Vec::Constant(2, 3.0)).kappa() == 3.0);
  CHECK_THROWS_AS(f.with_params(Vec::Zero(2)).to_schedule(), Error);
}

TEST_CASE("literal ELBO of the Brownian family is minus the mean bridge entropy") {
  const Mat gt = normal_set(500, 0.0, 1.0, 1);
  const auto p0 = InitialDistribution::isotropic(1, 0.0, 1.0);
  ElboOptions opt;
  opt.n_mc = 20000;
  opt.seed = 3;
  const ElboEstimate e = elbo(ScheduleFamily::scalar_identity(1, 0.0, 1.0), gt, p0, opt);
  // t is uniform over the nodes of the pinned grid in [eps, 1 - eps]
  const TimeGrid grid = TimeGrid::pinned(opt.n_steps, kEps);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const double t = grid.time(j);
    if (t < kEps - 1e-12) continue;
    sum += -0.5 * std::log(2.0 * M_PI * t * (1.0 - t)) - 0.5;
    ++count;
  }
  const double expected = sum / static_cast<double>(count);
  MESSAGE("ELBO " << e.value << " +- " << e.std_error << ", expected " << expected);
  CHECK(std::abs(e.value - expected) < 3.0 * e.std_error);
  CHECK(e.n_samples == 20000);
  CHECK(e.std_error > 0.0);
}

TEST_CASE("ELBO is deterministic per seed and unbiased across seeds") {
  const Mat gt = normal_set(200, 0.5, 0.3, 2);
  const auto p0 = InitialDistribution::isotropic(1, 0.0, 1.0);
  const auto fam = ScheduleFamily::scalar_identity(1, -0.5, 0.8);
  ElboOptions opt;
  opt.n_mc = 400;
  opt.n_steps = 200;
  opt.seed = 9;
  CHECK(elbo(fam, gt, p0, opt).value == elbo(fam, gt, p0, opt).value);
  std::size_t agree = 0;
  for (std::uint64_t r = 0; r < 100; ++r) {
    ElboOptions a = opt, b = opt;
    a.seed = 1000 + 2 * r;
    b.seed = 1001 + 2 * r;
    const ElboEstimate ea = elbo(fam, gt, p0, a), eb = elbo(fam, gt, p0, b);
    if (std::abs(ea.value - eb.value) < 3.0 * std::hypot(ea.std_error, eb.std_error)) ++agree;
  }
  CHECK(agree >= 95);
}

TEST_CASE("inflated diffusion lowers the ELBO on a tight GT set") {
  const Mat gt = normal_set(300, 1.0, 0.05, 4);
  const auto p0 = InitialDistribution::isotropic(1, 1.0, 0.05);
  ElboOptions opt;
  opt.n_mc = 2000;
  for (ElboObjective obj : {ElboObjective::Literal, ElboObjective::Evidence}) {
    opt.objective = obj;
    const ElboEstimate tight = elbo(ScheduleFamily::scalar_identity(1, 0.0, 0.01), gt, p0, opt);
    const ElboEstimate wide = elbo(ScheduleFamily::scalar_identity(1, 0.0, 25.0), gt, p0, opt);
    CHECK(wide.value < tight.value);
  }
  // kappa <= 0 is outside the family
  CHECK(!elbo(ScheduleFamily::scalar_identity(1, 0.0, -1.0), gt, p0, opt).feasible());
}

TEST_CASE("evidence objective is the log-likelihood of the pushforward of p0") {
  const Mat gt = normal_set(100, 0.3, 1.2, 5);
  const auto p0 = InitialDistribution::isotropic(1, 0.5, 0.5);
  ElboOptions opt;
  opt.objective = ElboObjective::Evidence;
  const double a = -0.7, kappa = 1.3;
  const ElboEstimate e = elbo(ScheduleFamily::scalar_identity(1, a, kappa), gt, p0, opt);
  const double mean = std::exp(a) * 0.5;
  const double var = std::exp(2 * a) * 0.25 + kappa * (std::exp(2 * a) - 1) / (2 * a);
  double expected = 0.0;
  for (Eigen::Index i = 0; i < gt.cols(); ++i)
    expected += -0.5 * std::log(2 * M_PI * var) - 0.5 * (gt(0, i) - mean) * (gt(0, i) - mean) / var;
  expected /= static_cast<double>(gt.cols());
  // trapezoid error of Sigma(0) at n = 1000
  CHECK(e.value == doctest::Approx(expected).epsilon(1e-6));
  CHECK(e.n_samples == 100);
}

TEST_CASE("max-ELBO search") {
  const double a_true = -1.0, kappa_true = 1.0;
  const auto p0 = InitialDistribution::isotropic(1, 1.0, 0.5);
  const double m = std::exp(a_true);
  const double v = std::exp(2 * a_true) * 0.25 + kappa_true * (std::exp(2 * a_true) - 1) / (2 * a_true);
  Mat gt = normal_set(20000, m, std::sqrt(v), 6);
  SearchConfig sc;
  sc.lower = Vec(2);
  sc.upper = Vec(2);
  sc.lower << -3.0, 0.05;
  sc.upper << 3.0, 4.0;
  sc.elbo.objective = ElboObjective::Evidence;
  const auto start = ScheduleFamily::scalar_identity(1, 0.0, 0.5);

  SUBCASE("planted parameter is recovered") {
    sc.max_iterations = 80;
    const SearchResult r = max_elbo(start, gt, p0, sc);
    CHECK(std::abs(r.best.params[0] - a_true) / std::abs(a_true) < 0.05);
    CHECK(std::abs(r.best.params[1] - kappa_true) / kappa_true < 0.05);
    CHECK(r.best_elbo.value >= r.initial_elbo.value);
    for (std::size_t i = 1; i < r.best_seen.size(); ++i) CHECK(r.best_seen[i] >= r.best_seen[i - 1]);
  }
  SUBCASE("zero iterations return the initial point") {
    sc.max_iterations = 0;
    const SearchResult r = max_elbo(start, gt, p0, sc);
    CHECK(r.best.params == start.params);
    CHECK(r.evaluations == 1);
    CHECK(r.best_seen.size() == 1);
  }
  SUBCASE("literal objective search keeps the best seen") {
    sc.elbo.objective = ElboObjective::Literal;
    sc.elbo.n_mc = 500;
    sc.elbo.n_steps = 200;
    sc.max_iterations = 10;
    const SearchResult r = max_elbo(start, gt, p0, sc);
    for (std::size_t i = 1; i < r.best_seen.size(); ++i) CHECK(r.best_seen[i] >= r.best_seen[i - 1]);
  }
  SUBCASE("an infeasible box raises InfeasibleFamily") {
    sc.lower << -1.0, -2.0;
    sc.upper << 1.0, -1.0;
    sc.max_iterations = 5;
    try {
      max_elbo(ScheduleFamily::scalar_identity(1, 0.0, -1.5), gt, p0, sc);
      FAIL("expected InfeasibleFamily");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InfeasibleFamily);
    }
  }
}

TEST_CASE("extract_hessian") {
  SUBCASE("linear score") {
    Mat m(3, 3);
    m << -2.0, 0.5, 0.1, 0.3, -1.0, 0.0, 0.2, 0.4, -3.0;
    Vec x0(3);
    x0 << 0.5, -2.0, 10.0;
    const LambdaScore lin(3, [&](double, const Mat& x, const Mat&) { return (m * (x.colwise() - x0)).eval(); });
    CHECK((extract_hessian(lin, x0, Vec::Zero(3), 0.4) - m).cwiseAbs().maxCoeff() < 1e-6);
  }
  SUBCASE("zero model") {
    ScoreModel zero(2, {8}, Activation::SiLU, Objective::RT);
    CHECK(extract_hessian(zero, Vec::Ones(2), Vec::Zero(2), 0.5).norm() == 0.0);
  }
  SUBCASE("non-finite score") {
    const LambdaScore bad(1, [](double, const Mat& x, const Mat&) { return (x.array() / 0.0).matrix().eval(); });
    CHECK_THROWS_AS(extract_hessian(bad, Vec::Zero(1), Vec::Zero(1), 0.5), Error);
  }
  SUBCASE("analytic RT score gives -Sigma^{-1}") {
    Vec x0(2), pin(2), at(2);
    x0 << 0.4, -1.0;
    pin << 1.5, 0.2;
    const Mat lap = build_grid_laplacian(1, 2).matrix;
    for (const auto& drift : {make_brownian_bridge(2), make_laplacian_bridge(lap)}) {
      for (double t : {0.1, 0.5, 0.9 * (1 - kEps)}) {
        CAPTURE(t);
        const BridgeSpec spec{drift, x0, pin, TimeGrid::pinned(1000, kEps)};
        const Mat sigma = bridge_marginal(spec, t).cov;
        const Mat h = extract_hessian(*analytic_rt_score(drift, x0), x0, pin, t);
        CHECK(rel_frobenius(h, -sigma.inverse()) < 1e-4);
      }
    }
  }
}

TEST_CASE("Hessian regression") {
  const std::size_t k = 2;
  HessianBatch batch;
  batch.t = Vec(5);
  batch.t << 0.1, 0.3, 0.5, 0.7, 0.9;
  batch.x0 = Mat::Random(2, 5);
  batch.weight = Vec::Ones(5);
  // Gaussian bridge: the target -Sigma(t)^{-1} does not depend on x0
  Mat target(2, 2);
  target << -4.0, 1.0, 1.0, -3.0;
  batch.target.assign(5, target);

  HessianModel constant(k, {}, Activation::SiLU);
  constant.net().params().setZero();
  constant.net().params().tail(4) = Eigen::Map<const Vec>(target.data(), 4);
  const LossAndGrad zero = hessian_regression_loss(constant, batch);
  CHECK(zero.loss == 0.0);
  CHECK(zero.grad.norm() == 0.0);
  CHECK(constant(0.2, Vec::Ones(2)) == target);

  HessianModel model(k, {16, 16}, Activation::Tanh);
  model.net().initialize(3);
  const LossAndGrad lg = hessian_regression_loss(model, batch);
  CHECK(lg.loss > 0.0);
  Vec& p = model.net().params();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < p.size(); i += std::max<Eigen::Index>(1, p.size() / 50)) {
    const double saved = p[i], h = 1e-5;
    p[i] = saved + h;
    const double up = hessian_regression_loss(model, batch).loss;
    p[i] = saved - h;
    const double down = hessian_regression_loss(model, batch).loss;
    p[i] = saved;
    const double fd = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(fd - lg.grad[i]) / std::max({std::abs(fd), std::abs(lg.grad[i]), 1e-6}));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("tabulated and per-sample schedules") {
  const DriftSchedule s = make_constant_schedule(Mat::Constant(1, 1, -2.0), Mat::Identity(1, 1));
  const DriftSchedule tab = tabulate_schedule(s, {0.1, 0.5, 0.9});
  CHECK(tab.drift_at(0.0)(0, 0) == -2.0);
  CHECK(tab.drift_at(1.0)(0, 0) == -2.0);
  const LambdaScore lin(1, [](double t, const Mat& x, const Mat&) { return (-t * x).eval(); });
  const DriftSchedule upd = per_sample_update(s, lin, Vec::Ones(1), Vec::Zero(1), {0.1, 0.9});
  CHECK(upd.drift_at(0.5)(0, 0) == doctest::Approx(-2.5));
  CHECK(upd.drift_at(0.0)(0, 0) == doctest::Approx(-2.1));
}

TEST_CASE("drift refinement") {
  const auto p0 = InitialDistribution::isotropic(1, 0.0, 1.0);
  RefineConfig rc;
  rc.train.epochs = 5;
  rc.train.steps_per_epoch = 200;
  rc.train.learning_rate = 2e-3;
  rc.hidden = {32, 32};

  SUBCASE("zero iterations leave the schedule unchanged") {
    rc.max_iterations = 0;
    const Mat gt = normal_set(500, 0.0, 0.3, 7);
    const RefineResult r = refine_drift(make_brownian_schedule(1), gt, p0, rc);
    CHECK(r.trace.empty());
    CHECK(r.schedule.drift_at(0.5)(0, 0) == 0.0);
    CHECK(r.final_elbo.value == r.initial.value);
  }
  SUBCASE("GT representable by the schedule: the loop stops after one iteration") {
    // pushforward of N(0, 1) under Brownian motion is N(0, 2)
    const Mat gt = normal_set(2000, 0.0, std::sqrt(2.0), 8);
    for (HessianSource src : {HessianSource::Analytic, HessianSource::Trained}) {
      rc.hessian = src;
      const RefineResult r = refine_drift(make_brownian_schedule(1), gt, p0, rc);
      REQUIRE(r.trace.size() == 1);
      CHECK_FALSE(r.trace[0].accepted);
      CHECK(r.final_elbo.value == r.initial.value);
      CHECK(r.schedule.drift_at(0.5)(0, 0) == 0.0);
    }
  }
  SUBCASE("narrow GT against a too-wide schedule improves the ELBO") {
    const Mat gt = normal_set(2000, 0.0, 0.3, 9);
    rc.max_iterations = 4;
    const RefineResult r = refine_drift(make_brownian_schedule(1), gt, p0, rc);
    REQUIRE(!r.trace.empty());
    CHECK(r.trace[0].accepted);
    CHECK(r.trace[0].improvement > 3.0 * r.trace[0].std_error);
    double prev = r.initial.value;
    for (const auto& s : r.trace) {
      CHECK(s.best_seen >= prev);
      prev = s.best_seen;
    }
    CHECK(r.final_elbo.value > r.initial.value);
    CHECK(r.mean_hessian.size() == r.knots.size());
    CHECK(r.knots.size() == 11);
  }
}
