#include "stdb/time_grid.hpp"

#include "stdb/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace stdb {

TimeGrid::TimeGrid(double t_start, double t_end, std::size_t n_steps, double epsilon_clip)
    : t_start_(t_start), t_end_(t_end), n_steps_(n_steps), epsilon_clip_(epsilon_clip) {
  require(n_steps > 0, ErrorCode::InvalidArgument, "time grid needs at least one step");
  require(std::isfinite(t_start) && std::isfinite(t_end) && t_start >= 0.0 && t_end <= 1.0,
          ErrorCode::DomainError, "time grid must lie in [0, 1]");
  require(t_start < t_end, ErrorCode::DomainError, "time grid needs t_start < t_end");
  require(epsilon_clip >= 0.0 && epsilon_clip < 0.5, ErrorCode::DomainError,
          "epsilon_clip must lie in [0, 0.5)");
}

TimeGrid TimeGrid::pinned(std::size_t n_steps, double epsilon_clip) {
  return TimeGrid(0.0, 1.0 - epsilon_clip, n_steps, epsilon_clip);
}

TimeGrid TimeGrid::interior(std::size_t n_steps, double epsilon_clip) {
  return TimeGrid(epsilon_clip, 1.0 - epsilon_clip, n_steps, epsilon_clip);
}

double TimeGrid::time(std::size_t j) const noexcept {
  if (j >= n_steps_) return t_end_;
  return t_start_ + static_cast<double>(j) * step();
}

std::vector<double> TimeGrid::times() const {
  std::vector<double> out(size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = time(j);
  return out;
}

std::optional<std::size_t> TimeGrid::index_of(double t, double tol) const {
  const double pos = (t - t_start_) / step();
  const double nearest = std::round(pos);
  if (nearest < 0.0 || nearest > static_cast<double>(n_steps_)) return std::nullopt;
  if (std::abs(pos - nearest) > tol) return std::nullopt;
  return static_cast<std::size_t>(nearest);
}

std::size_t TimeGrid::node(double t) const {
  auto idx = index_of(t);
  if (!idx) {
    std::ostringstream msg;
    msg << "time " << t << " is not a node of the grid [" << t_start_ << ", " << t_end_ << "] with "
        << n_steps_ << " steps";
    fail(ErrorCode::DomainError, msg.str());
  }
  return *idx;
}

std::size_t TimeGrid::interval(double t) const {
  require(contains(t), ErrorCode::DomainError, "time outside grid");
  if (auto idx = index_of(t)) return std::min(*idx, n_steps_ - 1);
  const auto j = static_cast<std::size_t>(std::floor((t - t_start_) / step()));
  return std::min(j, n_steps_ - 1);
}

bool TimeGrid::contains(double t) const noexcept {
  const double slack = 1e-9 * step();
  return t >= t_start_ - slack && t <= t_end_ + slack;
}

void TimeGrid::require_clipped() const {
  require(epsilon_clip_ > 0.0, ErrorCode::DomainError,
          "schedule is singular at t = 1; grid needs epsilon_clip > 0");
  require(t_end_ <= 1.0 - epsilon_clip_ + 1e-12, ErrorCode::DomainError,
          "grid end must not exceed 1 - epsilon_clip");
}

}  // namespace stdb
