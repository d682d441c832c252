#include "stdb/schedule.hpp"

#include "stdb/errors.hpp"

#include <algorithm>
#include <fstream>
#include <memory>
#include <sstream>

namespace stdb {

DriftSchedule make_constant_schedule(const Mat& drift, const Mat& diffusion, const Vec& offset) {
  require(drift.rows() == drift.cols() && diffusion.rows() == drift.rows() &&
              diffusion.cols() == drift.rows(),
          ErrorCode::DimensionMismatch, "constant schedule matrices must be k x k");
  DriftSchedule s;
  s.name = "constant";
  s.dim = static_cast<std::size_t>(drift.rows());
  s.drift = [drift](double) { return drift; };
  s.diffusion = [diffusion](double) { return diffusion; };
  if (offset.size() > 0) {
    require(offset.size() == drift.rows(), ErrorCode::DimensionMismatch, "offset must have length k");
    s.offset = [offset](double) { return offset; };
  }
  return s;
}

DriftSchedule make_brownian_schedule(std::size_t dim, double diffusion_scale) {
  const auto k = static_cast<Eigen::Index>(dim);
  DriftSchedule s = make_constant_schedule(Mat::Zero(k, k), diffusion_scale * Mat::Identity(k, k));
  s.name = "brownian";
  return s;
}

namespace {

template <typename T>
struct Table {
  std::vector<double> times;
  std::vector<T> values;

  T at(double t) const {
    if (t <= times.front()) return values.front();
    if (t >= times.back()) return values.back();
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const auto hi = static_cast<std::size_t>(it - times.begin());
    const auto lo = hi - 1;
    const double w = (t - times[lo]) / (times[hi] - times[lo]);
    return (1.0 - w) * values[lo] + w * values[hi];
  }
};

}  // namespace

DriftSchedule make_tabulated_schedule(std::vector<double> times, std::vector<Mat> drift,
                                      std::vector<Vec> offset, std::vector<Mat> diffusion) {
  require(times.size() >= 2, ErrorCode::InvalidArgument, "tabulated schedule needs >= 2 knots");
  require(drift.size() == times.size() && diffusion.size() == times.size() &&
              (offset.empty() || offset.size() == times.size()),
          ErrorCode::DimensionMismatch, "tabulated schedule tables must match the knot count");
  for (std::size_t i = 1; i < times.size(); ++i)
    require(times[i] > times[i - 1], ErrorCode::InvalidArgument, "knot times must increase");
  const auto k = drift.front().rows();
  for (std::size_t i = 0; i < times.size(); ++i) {
    require(drift[i].rows() == k && drift[i].cols() == k && diffusion[i].rows() == k &&
                diffusion[i].cols() == k && (offset.empty() || offset[i].size() == k),
            ErrorCode::DimensionMismatch, "tabulated schedule entries must be k x k / k");
  }
  DriftSchedule s;
  s.name = "custom-file";
  s.dim = static_cast<std::size_t>(k);
  auto a = std::make_shared<Table<Mat>>(Table<Mat>{times, std::move(drift)});
  auto d = std::make_shared<Table<Mat>>(Table<Mat>{times, std::move(diffusion)});
  s.drift = [a](double t) { return a->at(t); };
  s.diffusion = [d](double t) { return d->at(t); };
  if (!offset.empty()) {
    auto c = std::make_shared<Table<Vec>>(Table<Vec>{std::move(times), std::move(offset)});
    s.offset = [c](double t) { return c->at(t); };
  }
  return s;
}

void validate_schedule(const DriftSchedule& schedule, const TimeGrid& grid) {
  if (schedule.singular_at_one) grid.require_clipped();
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const double t = grid.time(j);
    const Mat a = schedule.drift_at(t);
    const Mat kappa = schedule.diffusion_at(t);
    const Vec c = schedule.offset_at(t);
    if (!a.allFinite() || !kappa.allFinite() || !c.allFinite()) {
      std::ostringstream msg;
      msg << "schedule '" << schedule.name << "' has non-finite entries at t = " << t;
      fail(ErrorCode::SingularSchedule, msg.str());
    }
    try {
      (void)jittered_cholesky(kappa);
    } catch (const Error&) {
      std::ostringstream msg;
      msg << "diffusion matrix of '" << schedule.name << "' is not PSD at t = " << t;
      fail(ErrorCode::NotPSD, msg.str());
    }
  }
}

namespace {

Mat read_square(const nlohmann::json& row, Eigen::Index k, const char* what) {
  require(row.is_array() && row.size() == static_cast<std::size_t>(k * k),
          ErrorCode::DimensionMismatch, std::string(what) + " entries must have k*k values");
  Mat m(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) m(i, j) = row.at(static_cast<std::size_t>(i * k + j)).get<double>();
  return m;
}

}  // namespace

DriftSchedule schedule_from_json(const nlohmann::json& doc) {
  require(doc.contains("dim") && doc.contains("times") && doc.contains("drift") &&
              doc.contains("diffusion"),
          ErrorCode::InvalidArgument, "schedule file needs dim, times, drift, diffusion");
  const auto k = doc.at("dim").get<Eigen::Index>();
  require(k > 0, ErrorCode::InvalidArgument, "schedule dim must be positive");
  std::vector<double> times = doc.at("times").get<std::vector<double>>();
  std::vector<Mat> drift, diffusion;
  std::vector<Vec> offset;
  for (const auto& row : doc.at("drift")) drift.push_back(read_square(row, k, "drift"));
  for (const auto& row : doc.at("diffusion")) diffusion.push_back(read_square(row, k, "diffusion"));
  if (doc.contains("offset")) {
    for (const auto& row : doc.at("offset")) {
      auto v = row.get<std::vector<double>>();
      require(v.size() == static_cast<std::size_t>(k), ErrorCode::DimensionMismatch,
              "offset entries must have k values");
      offset.push_back(Eigen::Map<const Vec>(v.data(), k));
    }
  }
  return make_tabulated_schedule(std::move(times), std::move(drift), std::move(offset),
                                 std::move(diffusion));
}

DriftSchedule load_schedule_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::Io, "cannot open schedule file " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidArgument, "schedule file " + path + ": " + e.what());
  }
  return schedule_from_json(doc);
}

nlohmann::json schedule_to_json(const DriftSchedule& schedule, const TimeGrid& grid) {
  nlohmann::json doc;
  doc["dim"] = schedule.dim;
  doc["times"] = grid.times();
  auto flat = [](const Mat& m) {
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) v.push_back(m(i, j));
    return v;
  };
  nlohmann::json drift = nlohmann::json::array(), diffusion = nlohmann::json::array(),
                 offset = nlohmann::json::array();
  for (double t : grid.times()) {
    drift.push_back(flat(schedule.drift_at(t)));
    diffusion.push_back(flat(schedule.diffusion_at(t)));
    const Vec c = schedule.offset_at(t);
    offset.push_back(std::vector<double>(c.data(), c.data() + c.size()));
  }
  doc["drift"] = std::move(drift);
  doc["diffusion"] = std::move(diffusion);
  if (schedule.has_offset()) doc["offset"] = std::move(offset);
  return doc;
}

}  // namespace stdb
