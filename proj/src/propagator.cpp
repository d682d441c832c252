#include "stdb/propagator.hpp"

#include "stdb/errors.hpp"

#include <sstream>

namespace stdb {

namespace {

std::string at_time(double t) {
  std::ostringstream out;
  out << "t = " << t;
  return out.str();
}

}  // namespace

Mat rk4_step_factor(const MatrixFn& drift, double t, double h, std::size_t dim) {
  const auto k = static_cast<Eigen::Index>(dim);
  const Mat a0 = drift(t);
  const Mat am = drift(t + 0.5 * h);
  const Mat a1 = drift(t + h);
  const Mat identity = Mat::Identity(k, k);
  const Mat k1 = a0;
  const Mat k2 = am * (identity + 0.5 * h * k1);
  const Mat k3 = am * (identity + 0.5 * h * k2);
  const Mat k4 = a1 * (identity + h * k3);
  return identity + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Propagator solve_propagator(const DriftSchedule& schedule, const TimeGrid& grid) {
  if (schedule.singular_at_one) grid.require_clipped();
  Propagator prop(grid, schedule.dim);
  prop.steps_.reserve(grid.n_steps());
  prop.inverses_.reserve(grid.n_steps());
  const double h = grid.step();
  for (std::size_t j = 0; j < grid.n_steps(); ++j) {
    const double t = grid.time(j);
    Mat factor = rk4_step_factor(schedule.drift, t, h, schedule.dim);
    if (!factor.allFinite())
      fail(ErrorCode::SingularSchedule, "non-finite propagator step at " + at_time(t));
    Eigen::PartialPivLU<Mat> lu(factor);
    Mat inverse = lu.inverse();
    if (!inverse.allFinite() || condition_number_1(factor, inverse) > Propagator::kMaxStepCondition)
      fail(ErrorCode::IllConditioned, "ill-conditioned propagator step at " + at_time(t));
    prop.steps_.push_back(std::move(factor));
    prop.inverses_.push_back(std::move(inverse));
  }
  return prop;
}

Mat Propagator::between(std::size_t to, std::size_t from) const {
  require(from <= to && to < grid_.size(), ErrorCode::DomainError,
          "propagator query needs from <= to on the grid");
  const auto k = static_cast<Eigen::Index>(dim_);
  Mat out = Mat::Identity(k, k);
  for (std::size_t j = from; j < to; ++j) out = steps_[j] * out;
  return out;
}

Mat Propagator::inverse_between(std::size_t to, std::size_t from) const {
  require(from <= to && to < grid_.size(), ErrorCode::DomainError,
          "propagator query needs from <= to on the grid");
  const auto k = static_cast<Eigen::Index>(dim_);
  Mat out = Mat::Identity(k, k);
  for (std::size_t j = from; j < to; ++j) out = out * inverses_[j];
  return out;
}

Mat Propagator::at(double t, double tau) const { return between(grid_.node(t), grid_.node(tau)); }

std::vector<Mat> Propagator::to_end() const {
  const auto k = static_cast<Eigen::Index>(dim_);
  std::vector<Mat> out(grid_.size());
  out.back() = Mat::Identity(k, k);
  for (std::size_t j = grid_.n_steps(); j-- > 0;) out[j] = out[j + 1] * steps_[j];
  return out;
}

Mat propagator_inverse_path(const Propagator& prop, double t) {
  const std::size_t j = prop.grid().node(t);
  Mat inv = prop.inverse_between(prop.grid().n_steps(), j);
  if (!inv.allFinite())
    fail(ErrorCode::IllConditioned, "inverse propagator is not finite at " + at_time(t));
  return inv;
}

Mat covariance_integral(const DriftSchedule& schedule, const Propagator& prop, double t_from,
                        double t_to, double psd_tol) {
  const auto& grid = prop.grid();
  const std::size_t from = grid.node(t_from);
  const std::size_t to = grid.node(t_to);
  require(from <= to, ErrorCode::DomainError, "covariance integral needs t_from <= t_to");
  const auto k = static_cast<Eigen::Index>(prop.dim());
  const double h = grid.step();

  Mat sigma = Mat::Zero(k, k);
  if (from == to) return sigma;
  Mat omega = Mat::Identity(k, k);  // Omega(t_to; t_j)
  Mat upper = schedule.diffusion_at(grid.time(to));
  for (std::size_t j = to; j-- > from;) {
    omega = omega * prop.step_factor(j);
    const Mat lower = omega * schedule.diffusion_at(grid.time(j)) * omega.transpose();
    sigma += 0.5 * h * (upper + lower);
    upper = lower;
  }
  sigma = symmetrize(sigma);
  if (!sigma.allFinite()) fail(ErrorCode::SingularSchedule, "covariance integral is not finite");
  const double scale = std::max(1.0, std::abs(sigma.trace()) / static_cast<double>(k));
  if (min_eigenvalue(sigma) < -psd_tol * scale)
    fail(ErrorCode::NotPSD, "covariance integral has a negative eigenvalue");
  return sigma;
}

Vec offset_integral(const DriftSchedule& schedule, const Propagator& prop, double t_from,
                    double t_to) {
  const auto& grid = prop.grid();
  const std::size_t from = grid.node(t_from);
  const std::size_t to = grid.node(t_to);
  require(from <= to, ErrorCode::DomainError, "offset integral needs t_from <= t_to");
  const auto k = static_cast<Eigen::Index>(prop.dim());
  Vec acc = Vec::Zero(k);
  if (from == to || !schedule.has_offset()) return acc;
  const double h = grid.step();
  Mat omega = Mat::Identity(k, k);
  Vec upper = schedule.offset_at(grid.time(to));
  for (std::size_t j = to; j-- > from;) {
    omega = omega * prop.step_factor(j);
    const Vec lower = omega * schedule.offset_at(grid.time(j));
    acc += 0.5 * h * (upper + lower);
    upper = lower;
  }
  return acc;
}

}  // namespace stdb
