#include "stdb/affine_opt.hpp"

#include "stdb/errors.hpp"
#include "stdb/laplacian.hpp"
#include "stdb/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace stdb {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

ElboEstimate infeasible() {
  ElboEstimate e;
  e.value = kNegInf;
  e.std_error = std::numeric_limits<double>::infinity();
  return e;
}

ElboEstimate summarize(std::vector<double> terms) {
  ElboEstimate e;
  e.n_samples = terms.size();
  const double n = static_cast<double>(terms.size());
  e.value = std::accumulate(terms.begin(), terms.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : terms) ss += (v - e.value) * (v - e.value);
  e.std_error = terms.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  e.terms = std::move(terms);
  if (!std::isfinite(e.value)) return infeasible();
  return e;
}

bool is_degenerate_schedule(ErrorCode c) {
  return c == ErrorCode::NotPSD || c == ErrorCode::SingularSchedule || c == ErrorCode::IllConditioned ||
         c == ErrorCode::NearPinned;
}

// Piecewise-linear k x k table, constant beyond the end knots.
struct MatrixTable {
  std::vector<double> times;
  std::vector<Mat> values;

  Mat at(double t) const {
    if (t <= times.front()) return values.front();
    if (t >= times.back()) return values.back();
    const auto j = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin());
    const double w = (t - times[j - 1]) / (times[j] - times[j - 1]);
    return (1.0 - w) * values[j - 1] + w * values[j];
  }
};

DriftSchedule add_drift(const DriftSchedule& base, std::vector<double> knots, std::vector<Mat> delta, double eta,
                        const std::string& name) {
  auto table = std::make_shared<const MatrixTable>(MatrixTable{std::move(knots), std::move(delta)});
  DriftSchedule s = base;
  s.name = name;
  const MatrixFn inner = base.drift;
  s.drift = [inner, table, eta](double t) { return (inner(t) + eta * table->at(t)).eval(); };
  return s;
}

std::vector<double> default_knots(double eps, std::size_t n) {
  std::vector<double> k(n);
  for (std::size_t i = 0; i < n; ++i)
    k[i] = eps + (1.0 - 2.0 * eps) * static_cast<double>(i) / static_cast<double>(n - 1);
  return k;
}

}  // namespace

double paired_std_error(const ElboEstimate& a, const ElboEstimate& b) {
  require(a.terms.size() == b.terms.size() && !a.terms.empty(), ErrorCode::InvalidArgument,
          "paired standard error needs estimates over the same samples");
  std::vector<double> d(a.terms.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = b.terms[i] - a.terms[i];
  return summarize(std::move(d)).std_error;
}

std::string to_string(ElboObjective o) { return o == ElboObjective::Literal ? "literal" : "evidence"; }
ElboObjective elbo_objective_from_string(const std::string& s) {
  if (s == "literal") return ElboObjective::Literal;
  if (s == "evidence") return ElboObjective::Evidence;
  fail(ErrorCode::InvalidArgument, "unknown ELBO objective '" + s + "' (literal, evidence)");
}

std::string to_string(FamilyKind f) {
  switch (f) {
    case FamilyKind::ScalarIdentity: return "scalar-identity";
    case FamilyKind::ScalarLaplacian: return "scalar-laplacian";
    case FamilyKind::EigenDiagonal: return "eigen-diagonal";
  }
  return "?";
}
FamilyKind family_kind_from_string(const std::string& s) {
  if (s == "scalar-identity") return FamilyKind::ScalarIdentity;
  if (s == "scalar-laplacian") return FamilyKind::ScalarLaplacian;
  if (s == "eigen-diagonal") return FamilyKind::EigenDiagonal;
  fail(ErrorCode::InvalidArgument,
       "unknown schedule family '" + s + "' (scalar-identity, scalar-laplacian, eigen-diagonal)");
}

std::string to_string(HessianSource h) { return h == HessianSource::Trained ? "trained" : "analytic"; }
HessianSource hessian_source_from_string(const std::string& s) {
  if (s == "trained") return HessianSource::Trained;
  if (s == "analytic") return HessianSource::Analytic;
  fail(ErrorCode::InvalidArgument, "unknown hessian source '" + s + "' (trained, analytic)");
}

// ---------------------------------------------------------------------------

ScheduleFamily ScheduleFamily::scalar_identity(std::size_t dim, double a, double kappa) {
  ScheduleFamily f;
  f.kind = FamilyKind::ScalarIdentity;
  f.dim = dim;
  f.params = Vec(2);
  f.params << a, kappa;
  return f;
}

ScheduleFamily ScheduleFamily::scalar_laplacian(const Mat& laplacian, double a, double kappa) {
  ScheduleFamily f;
  f.kind = FamilyKind::ScalarLaplacian;
  f.dim = static_cast<std::size_t>(laplacian.rows());
  f.laplacian = laplacian;
  f.params = Vec(2);
  f.params << a, kappa;
  return f;
}

ScheduleFamily ScheduleFamily::eigen_diagonal(const Mat& laplacian, const Vec& a, double kappa) {
  require(a.size() == laplacian.rows(), ErrorCode::DimensionMismatch, "one rate per eigenchannel");
  ScheduleFamily f;
  f.kind = FamilyKind::EigenDiagonal;
  f.dim = static_cast<std::size_t>(laplacian.rows());
  f.laplacian = laplacian;
  f.params = Vec(a.size() + 1);
  f.params << a, kappa;
  return f;
}

ScheduleFamily ScheduleFamily::with_params(const Vec& p) const {
  require(p.size() == params.size(), ErrorCode::DimensionMismatch, "family parameter count mismatch");
  ScheduleFamily f = *this;
  f.params = p;
  return f;
}

Mat ScheduleFamily::drift_matrix() const {
  const auto k = static_cast<Eigen::Index>(dim);
  switch (kind) {
    case FamilyKind::ScalarIdentity: return params[0] * Mat::Identity(k, k);
    case FamilyKind::ScalarLaplacian:
      require(laplacian.rows() == k, ErrorCode::InvalidArgument, "family needs a Laplacian");
      return params[0] * laplacian;
    case FamilyKind::EigenDiagonal: {
      require(laplacian.rows() == k, ErrorCode::InvalidArgument, "family needs a Laplacian");
      const EigenBasis b = eigendecompose(laplacian);
      return b.vectors * params.head(k).asDiagonal() * b.vectors.transpose();
    }
  }
  return {};
}

DriftSchedule ScheduleFamily::to_schedule() const {
  require(params.allFinite(), ErrorCode::InvalidArgument, "family parameters must be finite");
  require(kappa() > 0.0, ErrorCode::InvalidArgument, "family diffusion scale must be positive");
  const auto k = static_cast<Eigen::Index>(dim);
  DriftSchedule s = make_constant_schedule(drift_matrix(), kappa() * Mat::Identity(k, k));
  s.name = to_string(kind);
  return s;
}

nlohmann::json ScheduleFamily::to_json() const {
  return {{"family", to_string(kind)},
          {"dim", dim},
          {"params", std::vector<double>(params.data(), params.data() + params.size())}};
}

void ElboOptions::validate() const {
  require(objective == ElboObjective::Evidence || n_mc >= 100, ErrorCode::InvalidArgument,
          "ELBO needs n_mc >= 100");
  require(n_steps > 0, ErrorCode::InvalidArgument, "ELBO grid needs n_steps > 0");
  require(epsilon > 0.0 && epsilon < 0.5, ErrorCode::InvalidArgument, "ELBO epsilon must lie in (0, 0.5)");
}

// ---------------------------------------------------------------------------

ElboEstimate elbo(const DriftSchedule& basic, const Mat& gt, const InitialDistribution& p0,
                  const ElboOptions& options) {
  options.validate();
  const auto k = static_cast<Eigen::Index>(basic.dim);
  require(gt.rows() == k && gt.cols() > 0, ErrorCode::DimensionMismatch, "GT samples do not match the schedule");
  require(static_cast<Eigen::Index>(p0.dim()) == k, ErrorCode::DimensionMismatch, "p0 does not match the schedule");
  p0.validate();
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  try {
    const auto doob = make_doob_bridge(basic, options.n_steps, options.epsilon);
    if (options.objective == ElboObjective::Evidence) {
      const auto e = doob->endpoint_terms(0.0);
      const Vec mean = e.omega * p0.mean + e.drift_mean;
      const Mat cov = symmetrize(e.omega * p0.covariance() * e.omega.transpose() + e.sigma);
      const GaussianMarginal m = make_gaussian(mean, cov);
      if (m.degenerate) return infeasible();
      std::vector<double> terms(static_cast<std::size_t>(gt.cols()));
      for (Eigen::Index i = 0; i < gt.cols(); ++i) terms[static_cast<std::size_t>(i)] = gaussian_logpdf(m, gt.col(i));
      return summarize(std::move(terms));
    }

    const BridgeMarginalTable table(doob, TimeGrid::pinned(options.n_steps, options.epsilon));
    std::vector<std::size_t> nodes;
    for (std::size_t j = 0; j < table.grid().size(); ++j)
      if (table.grid().time(j) >= options.epsilon - 1e-12) nodes.push_back(j);
    for (std::size_t node : nodes)
      if (table.factor(node).degenerate) return infeasible();
    std::vector<double> terms(options.n_mc);
    parallel_for(options.n_mc, [&](std::size_t begin, std::size_t end) {
      Vec draw(k), z(k);
      for (std::size_t i = begin; i < end; ++i) {
        CounterRng rng(options.seed, RngDomain::Elbo, i);
        const std::size_t node = nodes[rng.below(nodes.size())];
        const Vec x1 = gt.col(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(gt.cols()))));
        rng.normals(draw.data(), static_cast<std::size_t>(k));
        const Vec x0 = p0.mean + p0.scale.cwiseProduct(draw);
        rng.normals(z.data(), static_cast<std::size_t>(k));
        const Vec x = table.sample(node, x0, x1, z);
        const Vec r = x - table.moments(node).mean(x0, x1);
        const Vec y = table.factor(node).lower.triangularView<Eigen::Lower>().solve(r);
        terms[i] = -0.5 * (static_cast<double>(k) * log_2pi + table.log_det_cov(node) + y.squaredNorm());
      }
    });
    return summarize(std::move(terms));
  } catch (const Error& e) {
    if (is_degenerate_schedule(e.code())) return infeasible();
    throw;
  }
}

ElboEstimate elbo(const ScheduleFamily& family, const Mat& gt, const InitialDistribution& p0,
                  const ElboOptions& options) {
  if (!family.params.allFinite() || family.kappa() <= 0.0) return infeasible();
  return elbo(family.to_schedule(), gt, p0, options);
}

// ---------------------------------------------------------------------------

SearchResult max_elbo(const ScheduleFamily& initial, const Mat& gt, const InitialDistribution& p0,
                      const SearchConfig& config) {
  const auto n = static_cast<Eigen::Index>(initial.n_params());
  require(config.lower.size() == n && config.upper.size() == n, ErrorCode::DimensionMismatch,
          "search box must bound every family parameter");
  require((config.upper.array() > config.lower.array()).all(), ErrorCode::InvalidArgument,
          "search box must have upper > lower");
  config.elbo.validate();
  const Vec width = config.upper - config.lower;
  const auto clamp = [&](const Vec& p) { return p.cwiseMax(config.lower).cwiseMin(config.upper).eval(); };

  SearchResult out;
  out.best = initial;
  const auto evaluate = [&](const Vec& p) {
    ++out.evaluations;
    ElboEstimate e = elbo(initial.with_params(p), gt, p0, config.elbo);
    if (e.value > out.best_elbo.value || out.evaluations == 1) {
      out.best_elbo = e;
      out.best = initial.with_params(p);
    }
    return e;
  };
  // Nelder-Mead minimizes the negative ELBO; -inf maps to +inf.
  const auto cost = [](const ElboEstimate& e) { return e.feasible() ? -e.value : std::numeric_limits<double>::infinity(); };

  out.initial_elbo = evaluate(initial.params);
  out.best_seen.push_back(out.best_elbo.value);
  out.best_params.push_back(out.best.params);
  const auto finish = [&]() -> SearchResult {
    if (!out.best_elbo.feasible()) fail(ErrorCode::InfeasibleFamily, "every ELBO evaluation was -inf");
    return out;
  };
  if (config.max_iterations == 0) return finish();

  std::vector<Vec> simplex{clamp(initial.params)};
  std::vector<double> f{cost(out.initial_elbo)};
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec p = simplex.front();
    const double step = config.initial_step * width[i];
    p[i] = p[i] + step <= config.upper[i] ? p[i] + step : p[i] - step;
    simplex.push_back(clamp(p));
    f.push_back(cost(evaluate(simplex.back())));
  }

  for (std::size_t iter = 0; iter < config.max_iterations; ++iter) {
    std::vector<std::size_t> order(simplex.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return f[a] < f[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];

    double spread = 0.0;
    for (const Vec& p : simplex) spread = std::max(spread, ((p - simplex[best]).array() / width.array()).abs().maxCoeff());
    if (std::isfinite(f[worst]) && f[worst] - f[best] <= config.tolerance && spread <= 1e-6) break;

    Vec centroid = Vec::Zero(n);
    for (std::size_t i = 0; i < simplex.size(); ++i)
      if (i != worst) centroid += simplex[i];
    centroid /= static_cast<double>(n);

    const Vec reflected = clamp(centroid + (centroid - simplex[worst]));
    const double fr = cost(evaluate(reflected));
    if (fr < f[best]) {
      const Vec expanded = clamp(centroid + 2.0 * (centroid - simplex[worst]));
      const double fe = cost(evaluate(expanded));
      if (fe < fr) {
        simplex[worst] = expanded;
        f[worst] = fe;
      } else {
        simplex[worst] = reflected;
        f[worst] = fr;
      }
    } else if (fr < f[second]) {
      simplex[worst] = reflected;
      f[worst] = fr;
    } else {
      const bool outside = fr < f[worst];
      const Vec contracted = clamp(outside ? centroid + 0.5 * (reflected - centroid)
                                           : centroid + 0.5 * (simplex[worst] - centroid));
      const double fc = cost(evaluate(contracted));
      if (fc < std::min(fr, f[worst])) {
        simplex[worst] = contracted;
        f[worst] = fc;
      } else {
        for (std::size_t i = 0; i < simplex.size(); ++i) {
          if (i == best) continue;
          simplex[i] = clamp(simplex[best] + 0.5 * (simplex[i] - simplex[best]));
          f[i] = cost(evaluate(simplex[i]));
        }
      }
    }
    out.best_seen.push_back(out.best_elbo.value);
    out.best_params.push_back(out.best.params);
  }
  return finish();
}

// ---------------------------------------------------------------------------

Mat extract_hessian(const ScoreFunction& score, const Vec& x0, const Vec& pin, double t) {
  const auto k = x0.size();
  require(static_cast<std::size_t>(k) == score.dim() && pin.size() == k, ErrorCode::DimensionMismatch,
          "Hessian point does not match the score dimension");
  // All 2k perturbed states in one batch.
  Mat states(k, 2 * k), pins(k, 2 * k);
  Vec h(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    h[j] = 1e-4 * (1.0 + std::abs(x0[j]));
    states.col(2 * j) = x0;
    states.col(2 * j + 1) = x0;
    states(j, 2 * j) += h[j];
    states(j, 2 * j + 1) -= h[j];
    pins.col(2 * j) = pin;
    pins.col(2 * j + 1) = pin;
  }
  const Mat s = score(t, states, pins);
  Mat hess(k, k);
  for (Eigen::Index j = 0; j < k; ++j) hess.col(j) = (s.col(2 * j) - s.col(2 * j + 1)) / (2.0 * h[j]);
  if (!hess.allFinite())
    fail(ErrorCode::ExtractFail, "score derivative is not finite at t = " + std::to_string(t));
  return hess;
}

HessianModel::HessianModel(std::size_t dim, std::vector<std::size_t> hidden, Activation activation)
    : dim_(dim), net_([&] {
        std::vector<std::size_t> sizes{1 + kTimeFrequencies + dim};
        sizes.insert(sizes.end(), hidden.begin(), hidden.end());
        sizes.push_back(dim * dim);
        return sizes;
      }(), activation) {}

Mat HessianModel::embed(const Vec& t, const Mat& x0) const {
  const auto k = static_cast<Eigen::Index>(dim_);
  require(x0.rows() == k && x0.cols() == t.size(), ErrorCode::DimensionMismatch, "Hessian model input shapes");
  Mat in(static_cast<Eigen::Index>(1 + kTimeFrequencies) + k, t.size());
  in.row(0) = t.transpose();
  for (std::size_t i = 0; i < kTimeFrequencies; ++i) {
    const double freq = std::ldexp(std::numbers::pi, static_cast<int>(i));
    in.row(1 + static_cast<Eigen::Index>(i)) = (freq * t.array()).sin().matrix().transpose();
  }
  in.bottomRows(k) = x0;
  return in;
}

Mat HessianModel::operator()(double t, const Vec& x0) const {
  const Mat out = net_.forward(embed(Vec::Constant(1, t), x0));
  const auto k = static_cast<Eigen::Index>(dim_);
  return Eigen::Map<const Mat>(out.data(), k, k);
}

LossAndGrad hessian_regression_loss(const HessianModel& model, const HessianBatch& batch) {
  const auto n = batch.t.size();
  require(n > 0 && batch.x0.cols() == n && static_cast<Eigen::Index>(batch.target.size()) == n && batch.weight.size() == n,
          ErrorCode::InvalidArgument, "Hessian batch is empty or inconsistent");
  Mlp::Tape tape;
  const Mat out = model.net().forward(model.embed(batch.t, batch.x0), tape);
  const auto k = static_cast<Eigen::Index>(model.dim());
  Mat grad_out(out.rows(), n);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Mat& target = batch.target[static_cast<std::size_t>(i)];
    require(target.rows() == k && target.cols() == k, ErrorCode::DimensionMismatch, "Hessian target shape");
    const Vec r = out.col(i) - Eigen::Map<const Vec>(target.data(), k * k);
    loss += batch.weight[i] * r.squaredNorm();
    grad_out.col(i) = (2.0 * batch.weight[i] / static_cast<double>(n)) * r;
  }
  LossAndGrad lg;
  lg.loss = loss / static_cast<double>(n);
  lg.grad = Vec::Zero(static_cast<Eigen::Index>(model.net().n_params()));
  model.net().backward(tape, grad_out, lg.grad);
  return lg;
}

// ---------------------------------------------------------------------------

void RefineConfig::validate() const {
  require(n_hessian > 0, ErrorCode::InvalidArgument, "n_hessian must be positive");
  require(!step_sizes.empty(), ErrorCode::InvalidArgument, "at least one step size is needed");
  for (double s : step_sizes) require(s > 0.0, ErrorCode::InvalidArgument, "step sizes must be positive");
  require(significance >= 0.0, ErrorCode::InvalidArgument, "significance must be non-negative");
  for (std::size_t i = 1; i < knots.size(); ++i)
    require(knots[i] > knots[i - 1], ErrorCode::InvalidArgument, "knots must increase");
  train.validate();
  elbo.validate();
}

DriftSchedule tabulate_schedule(const DriftSchedule& schedule, const std::vector<double>& knots) {
  std::vector<Mat> drift, diffusion;
  std::vector<Vec> offset;
  for (double t : knots) {
    drift.push_back(schedule.drift_at(t));
    diffusion.push_back(schedule.diffusion_at(t));
    if (schedule.has_offset()) offset.push_back(schedule.offset_at(t));
  }
  DriftSchedule s = make_tabulated_schedule(knots, std::move(drift), std::move(offset), std::move(diffusion));
  s.name = schedule.name;
  return s;
}

std::vector<Mat> mean_hessian(const ScoreFunction& score, const std::vector<double>& knots, const Mat& x0,
                              const Mat& pins) {
  require(x0.cols() > 0 && pins.cols() == x0.cols(), ErrorCode::InvalidArgument, "Hessian draws are empty");
  std::vector<Mat> out;
  for (double t : knots) {
    Mat sum = Mat::Zero(x0.rows(), x0.rows());
    for (Eigen::Index i = 0; i < x0.cols(); ++i) sum += extract_hessian(score, x0.col(i), pins.col(i), t);
    out.push_back(sum / static_cast<double>(x0.cols()));
  }
  return out;
}

DriftSchedule per_sample_update(const DriftSchedule& schedule, const ScoreFunction& score, const Vec& x0,
                                const Vec& pin, const std::vector<double>& knots) {
  std::vector<Mat> h;
  for (double t : knots) h.push_back(extract_hessian(score, x0, pin, t));
  return add_drift(schedule, knots, std::move(h), 1.0, schedule.name + "+H(x0)");
}

RefineResult refine_drift(const DriftSchedule& schedule, const Mat& gt, const InitialDistribution& p0,
                          const RefineConfig& config) {
  config.validate();
  const double eps = config.elbo.epsilon;
  const auto k = static_cast<Eigen::Index>(schedule.dim);
  RefineResult result;
  result.schedule = schedule;
  result.knots = config.knots.empty() ? default_knots(eps, 11) : config.knots;
  result.initial = elbo(schedule, gt, p0, config.elbo);
  result.final_elbo = result.initial;
  require(result.initial.feasible(), ErrorCode::InfeasibleFamily, "initial schedule has -inf ELBO");
  result.stop_reason = "iteration limit";

  for (std::size_t iter = 0; iter < config.max_iterations; ++iter) {
    // (a) reverse-time score of the current schedule
    const auto doob = make_doob_bridge(result.schedule, config.elbo.n_steps, eps);
    const auto table = std::make_shared<const BridgeMarginalTable>(doob, TimeGrid::pinned(config.elbo.n_steps, eps));

    // (b) Hessian of the score at x(t) = x(0), averaged over GT draws
    Mat x0(k, static_cast<Eigen::Index>(config.n_hessian)), pins(k, x0.cols());
    for (Eigen::Index i = 0; i < x0.cols(); ++i) {
      CounterRng rng(config.train.seed, RngDomain::Search, iter, static_cast<std::uint32_t>(i));
      x0.col(i) = gt.col(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(gt.cols()))));
      Vec z(k);
      rng.normals(z.data(), static_cast<std::size_t>(k));
      pins.col(i) = p0.mean + p0.scale.cwiseProduct(z);
    }
    std::vector<Mat> hbar;
    if (config.hessian == HessianSource::Trained) {
      const BridgeBatchSource source(table, Objective::RT, gt, p0, config.weighting);
      ScoreModel model(schedule.dim, config.hidden, Activation::SiLU, Objective::RT);
      model.initialize(config.train.seed + iter);
      TrainConfig tc = config.train;
      tc.seed = config.train.seed + 1000003 * (iter + 1);
      train(model, source, tc);
      hbar = mean_hessian(model, result.knots, x0, pins);
    } else {
      // the conditional score -Sigma(t)^{-1} (x - mu) has Jacobian -Sigma(t)^{-1}
      for (double t : result.knots) {
        const BridgeMoments m = bridge_moments_at(*doob, table->grid(), std::min(t, table->grid().t_end()));
        hbar.push_back(-m.cov.ldlt().solve(Mat::Identity(k, k)));
      }
    }
    result.mean_hessian = hbar;

    // (c, d) update with backtracking, accept only significant improvements
    RefineStep step;
    step.iteration = iter;
    bool finite = true;
    for (double eta : config.step_sizes) {
      DriftSchedule candidate = add_drift(result.schedule, result.knots, hbar, eta, schedule.name + "+H");
      bool ok = true;
      for (double t : result.knots) ok = ok && candidate.drift_at(t).allFinite();
      if (!ok) {
        finite = false;
        continue;
      }
      ElboEstimate e = elbo(candidate, gt, p0, config.elbo);
      if (!e.feasible()) continue;
      const double gain = e.value - result.final_elbo.value;
      const double se = paired_std_error(result.final_elbo, e);
      if (step.step_size == 0.0 || gain > step.improvement) {
        step.candidate = e;
        step.improvement = gain;
        step.std_error = se;
        step.step_size = eta;
      }
      if (gain > config.significance * se) {
        step.accepted = true;
        step.candidate = e;
        step.improvement = gain;
        step.std_error = se;
        step.step_size = eta;
        result.schedule = std::move(candidate);
        result.final_elbo = std::move(e);
        break;
      }
    }
    step.best_seen = result.final_elbo.value;
    step.candidate.terms.clear();
    result.trace.push_back(step);
    if (!step.accepted) {
      result.stop_reason = finite ? "no significant improvement" : "non-finite update rolled back";
      break;
    }
  }
  return result;
}

}  // namespace stdb
