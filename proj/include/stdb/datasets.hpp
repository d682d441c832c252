#pragma once

#include "stdb/linalg.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace stdb {

/// S samples of dimension k stored as the columns of a k x S matrix.
struct SampleSet {
  Mat data;
  std::string label;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return static_cast<std::size_t>(data.cols()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(data.rows()); }
};

/// "gm2": equal-weight modes at (+-2, 0) with covariance 0.25 I.
/// "ring": radius-3 circle plus isotropic noise 0.1.
/// "grid8": 8 x 8 images of 1-3 random rectangles, pixel values in [0, 1].
SampleSet make_dataset(const std::string& name, std::size_t n_samples, std::uint64_t seed);
std::vector<std::string> dataset_names();
std::size_t dataset_dim(const std::string& name);

/// Product of independent per-coordinate normals N(mean_i, scale_i^2); the
/// isotropic case has equal scales.
struct InitialDistribution {
  Vec mean;
  Vec scale;

  static InitialDistribution isotropic(std::size_t dim, double mean, double scale);
  std::size_t dim() const noexcept { return static_cast<std::size_t>(mean.size()); }
  bool is_isotropic() const;
  Mat covariance() const { return scale.array().square().matrix().asDiagonal(); }
  void validate() const;
  // Sample s is drawn from stream (seed, s): prefixes of larger draws agree.
  Mat sample(std::size_t n, std::uint64_t seed) const;
  double logpdf(const Vec& x) const;
};

nlohmann::json initial_to_json(const InitialDistribution& p0);
InitialDistribution initial_from_json(const nlohmann::json& doc);

/// 2 E|X - Y| - E|X - X'| - E|Y - Y'| over all pairs (V-statistic, >= 0).
/// The evaluation order depends only on the contents, so d(a, b) == d(b, a).
double energy_distance(const Mat& a, const Mat& b);
inline double energy_distance(const SampleSet& a, const SampleSet& b) { return energy_distance(a.data, b.data); }

/// Exact W1 between two empirical distributions on the line.
double wasserstein1_1d(std::vector<double> a, std::vector<double> b);

/// Mean W1 over random unit projections; for k = 1 the single direction +1.
double sliced_wasserstein(const Mat& a, const Mat& b, std::size_t n_projections, std::uint64_t seed);
inline double sliced_wasserstein(const SampleSet& a, const SampleSet& b, std::size_t n_projections,
                                 std::uint64_t seed) {
  return sliced_wasserstein(a.data, b.data, n_projections, seed);
}

/// One sample per row, header "x0,...,x{k-1}".
void write_samples_csv(const Mat& samples, const std::string& path);
Mat read_samples_csv(const std::string& path);
/// 8-bit binary PGM of a rows x cols image with values clamped to [0, 1].
void write_pgm(const Vec& image, std::size_t rows, std::size_t cols, const std::string& path);

}  // namespace stdb
