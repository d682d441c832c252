#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace stdb {

/// Uniform grid t_start = t_0 < t_1 < ... < t_n = t_end on [0, 1].
///
/// `epsilon_clip` is the distance kept from the singular endpoint t = 1 for
/// schedules that blow up like 1/(1 - t); `require_clipped` enforces it.
class TimeGrid {
 public:
  TimeGrid(double t_start, double t_end, std::size_t n_steps, double epsilon_clip = 0.0);

  // [0, 1 - eps], the grid bridge marginals are integrated on.
  static TimeGrid pinned(std::size_t n_steps, double epsilon_clip);
  // [eps, 1 - eps], the grid generative samplers step over.
  static TimeGrid interior(std::size_t n_steps, double epsilon_clip);

  double t_start() const noexcept { return t_start_; }
  double t_end() const noexcept { return t_end_; }
  std::size_t n_steps() const noexcept { return n_steps_; }
  std::size_t size() const noexcept { return n_steps_ + 1; }
  double epsilon_clip() const noexcept { return epsilon_clip_; }
  double step() const noexcept { return (t_end_ - t_start_) / static_cast<double>(n_steps_); }
  double time(std::size_t j) const noexcept;
  std::vector<double> times() const;

  // Index of the node equal to t within tol * step, if any.
  std::optional<std::size_t> index_of(double t, double tol = 1e-9) const;
  // Like index_of but throws DomainError.
  std::size_t node(double t) const;
  // j with t_j <= t < t_{j+1}; n_steps - 1 for t == t_end.
  std::size_t interval(double t) const;
  bool contains(double t) const noexcept;

  // Throws DomainError unless eps > 0 and t_end <= 1 - eps.
  void require_clipped() const;

 private:
  double t_start_;
  double t_end_;
  std::size_t n_steps_;
  double epsilon_clip_;
};

}  // namespace stdb
