#pragma once

#include "stdb/linalg.hpp"
#include "stdb/time_grid.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace stdb {

using MatrixFn = std::function<Mat(double)>;
using VectorFn = std::function<Vec(double)>;

/// Affine drift dx = (A(t) x + c(t)) dt + dW with E[dW dW^T] = kappa(t) dt.
///
/// The same type carries a basic-process drift and the restoring-rate matrix
/// of a pinned bridge; which one is meant is decided by the consumer.
struct DriftSchedule {
  std::string name;
  std::size_t dim = 0;
  MatrixFn drift;      // A(t), k x k
  VectorFn offset;     // c(t), k; zero when unset
  MatrixFn diffusion;  // kappa(t), k x k symmetric PSD
  bool singular_at_one = false;

  Mat drift_at(double t) const { return drift(t); }
  Vec offset_at(double t) const { return offset ? offset(t) : Vec::Zero(dim); }
  Mat diffusion_at(double t) const { return diffusion(t); }
  bool has_offset() const { return static_cast<bool>(offset); }
};

DriftSchedule make_constant_schedule(const Mat& drift, const Mat& diffusion, const Vec& offset = {});

// A = 0, kappa = scale * I.
DriftSchedule make_brownian_schedule(std::size_t dim, double diffusion_scale = 1.0);

/// Piecewise-linear interpolation of matrices given at increasing knot times.
DriftSchedule make_tabulated_schedule(std::vector<double> times, std::vector<Mat> drift,
                                      std::vector<Vec> offset, std::vector<Mat> diffusion);

/// Checks finiteness of A, c, kappa and PSD-ness of kappa at every node.
/// Throws SingularSchedule naming the first offending time, NotPSD for kappa.
void validate_schedule(const DriftSchedule& schedule, const TimeGrid& grid);

/// Custom schedule file:
///   {"dim": k, "times": [...], "drift": [[k*k row-major], ...],
///    "offset": [[k], ...] (optional), "diffusion": [[k*k], ...]}
DriftSchedule schedule_from_json(const nlohmann::json& doc);
DriftSchedule load_schedule_file(const std::string& path);
nlohmann::json schedule_to_json(const DriftSchedule& schedule, const TimeGrid& grid);

}  // namespace stdb
