#include "stdb/datasets.hpp"

#include "stdb/errors.hpp"
#include "stdb/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace stdb {

namespace {

void gm2_sample(CounterRng& rng, double* out) {
  const double centre = rng.uniform() < 0.5 ? -2.0 : 2.0;
  out[0] = centre + 0.5 * rng.normal();
  out[1] = 0.5 * rng.normal();
}

void ring_sample(CounterRng& rng, double* out) {
  const double angle = 2.0 * std::numbers::pi * rng.uniform();
  out[0] = 3.0 * std::cos(angle) + 0.1 * rng.normal();
  out[1] = 3.0 * std::sin(angle) + 0.1 * rng.normal();
}

void grid8_sample(CounterRng& rng, double* out) {
  std::fill(out, out + 64, 0.0);
  const auto count = 1 + rng.below(3);
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto top = rng.below(8), left = rng.below(8);
    const auto bottom = top + rng.below(8 - top), right = left + rng.below(8 - left);
    const double value = 0.3 + 0.7 * rng.uniform();
    for (auto i = top; i <= bottom; ++i)
      for (auto j = left; j <= right; ++j) out[i * 8 + j] = std::max(out[i * 8 + j], value);
  }
}

}  // namespace

std::vector<std::string> dataset_names() { return {"gm2", "ring", "grid8"}; }

std::size_t dataset_dim(const std::string& name) {
  if (name == "gm2" || name == "ring") return 2;
  if (name == "grid8") return 64;
  fail(ErrorCode::UnknownDataset, "unknown dataset '" + name + "' (known: gm2, ring, grid8)");
}

SampleSet make_dataset(const std::string& name, std::size_t n_samples, std::uint64_t seed) {
  const std::size_t k = dataset_dim(name);
  require(n_samples > 0, ErrorCode::InvalidArgument, "dataset size must be positive");
  SampleSet set;
  set.label = name;
  set.seed = seed;
  set.data.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n_samples));
  for (std::size_t s = 0; s < n_samples; ++s) {
    CounterRng rng(seed, RngDomain::Dataset, s);
    double* out = set.data.col(static_cast<Eigen::Index>(s)).data();
    if (name == "gm2")
      gm2_sample(rng, out);
    else if (name == "ring")
      ring_sample(rng, out);
    else
      grid8_sample(rng, out);
  }
  return set;
}

InitialDistribution InitialDistribution::isotropic(std::size_t dim, double mean, double scale) {
  InitialDistribution p;
  p.mean = Vec::Constant(static_cast<Eigen::Index>(dim), mean);
  p.scale = Vec::Constant(static_cast<Eigen::Index>(dim), scale);
  p.validate();
  return p;
}

bool InitialDistribution::is_isotropic() const {
  return scale.size() > 0 && (scale.array() == scale(0)).all();
}

void InitialDistribution::validate() const {
  require(mean.size() > 0 && mean.size() == scale.size(), ErrorCode::DimensionMismatch,
          "initial distribution needs matching mean and scale vectors");
  require(mean.allFinite() && (scale.array() > 0.0).all() && scale.allFinite(), ErrorCode::InvalidArgument,
          "initial distribution needs finite means and positive scales");
}

Mat InitialDistribution::sample(std::size_t n, std::uint64_t seed) const {
  validate();
  Mat out(mean.size(), static_cast<Eigen::Index>(n));
  for (std::size_t s = 0; s < n; ++s) {
    CounterRng rng(seed, RngDomain::Initial, s);
    for (Eigen::Index i = 0; i < mean.size(); ++i)
      out(i, static_cast<Eigen::Index>(s)) = mean(i) + scale(i) * rng.normal();
  }
  return out;
}

double InitialDistribution::logpdf(const Vec& x) const {
  require(x.size() == mean.size(), ErrorCode::DimensionMismatch, "point has wrong dimension");
  const Vec z = (x - mean).cwiseQuotient(scale);
  return -0.5 * z.squaredNorm() - scale.array().log().sum() -
         0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi);
}

nlohmann::json initial_to_json(const InitialDistribution& p0) {
  return {{"mean", std::vector<double>(p0.mean.data(), p0.mean.data() + p0.mean.size())},
          {"scale", std::vector<double>(p0.scale.data(), p0.scale.data() + p0.scale.size())}};
}

InitialDistribution initial_from_json(const nlohmann::json& doc) {
  const auto m = doc.at("mean").get<std::vector<double>>();
  const auto s = doc.at("scale").get<std::vector<double>>();
  InitialDistribution p;
  p.mean = Eigen::Map<const Vec>(m.data(), static_cast<Eigen::Index>(m.size()));
  p.scale = Eigen::Map<const Vec>(s.data(), static_cast<Eigen::Index>(s.size()));
  p.validate();
  return p;
}

namespace {

// Sum over all pairs of |x_i - y_j|, accumulated row by row in a fixed order.
double pair_sum(const Mat& x, const Mat& y) {
  const auto n = static_cast<std::size_t>(x.cols());
  std::vector<double> rows(n, 0.0);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto xi = x.col(static_cast<Eigen::Index>(i));
      double acc = 0.0;
      for (Eigen::Index j = 0; j < y.cols(); ++j) acc += (xi - y.col(j)).norm();
      rows[i] = acc;
    }
  });
  double total = 0.0;
  for (double r : rows) total += r;
  return total;
}

// Strict weak order on sample sets by (size, contents), used to fix the
// argument order of symmetric computations.
bool ordered_first(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) return a.cols() < b.cols();
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

}  // namespace

double energy_distance(const Mat& a_in, const Mat& b_in) {
  require(a_in.rows() == b_in.rows(), ErrorCode::DimensionMismatch, "energy distance needs equal dimensions");
  require(a_in.cols() > 0 && b_in.cols() > 0, ErrorCode::InvalidArgument, "energy distance needs samples");
  const bool swap = ordered_first(b_in, a_in);
  const Mat& a = swap ? b_in : a_in;
  const Mat& b = swap ? a_in : b_in;
  const double na = static_cast<double>(a.cols()), nb = static_cast<double>(b.cols());
  const double cross = pair_sum(a, b) / (na * nb);
  const double self_a = pair_sum(a, a) / (na * na);
  const double self_b = pair_sum(b, b) / (nb * nb);
  return std::max(0.0, 2.0 * cross - self_a - self_b);
}

double wasserstein1_1d(std::vector<double> a, std::vector<double> b) {
  require(!a.empty() && !b.empty(), ErrorCode::InvalidArgument, "W1 needs samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  // Integrate |F_a^{-1}(u) - F_b^{-1}(u)| over the merged quantile breakpoints.
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double u = 0.0, total = 0.0;
  while (i < a.size() && j < b.size()) {
    const double next_a = static_cast<double>(i + 1) / na;
    const double next_b = static_cast<double>(j + 1) / nb;
    const double next = std::min(next_a, next_b);
    total += (next - u) * std::abs(a[i] - b[j]);
    u = next;
    if (next_a <= next) ++i;
    if (next_b <= next) ++j;
  }
  return total;
}

double sliced_wasserstein(const Mat& a, const Mat& b, std::size_t n_projections, std::uint64_t seed) {
  require(a.rows() == b.rows(), ErrorCode::DimensionMismatch, "sliced Wasserstein needs equal dimensions");
  require(n_projections >= 1, ErrorCode::InvalidArgument, "need at least one projection");
  const auto k = a.rows();
  double total = 0.0;
  for (std::size_t p = 0; p < n_projections; ++p) {
    Vec dir(k);
    if (k == 1) {
      dir(0) = 1.0;
    } else {
      CounterRng rng(seed, RngDomain::Projection, p);
      do {
        rng.normals(dir.data(), static_cast<std::size_t>(k));
      } while (dir.norm() == 0.0);
      dir.normalize();
    }
    const Vec pa = a.transpose() * dir;
    const Vec pb = b.transpose() * dir;
    total += wasserstein1_1d({pa.data(), pa.data() + pa.size()}, {pb.data(), pb.data() + pb.size()});
  }
  return total / static_cast<double>(n_projections);
}

void write_samples_csv(const Mat& samples, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::Io, "cannot open '" + path + "' for writing");
  for (Eigen::Index i = 0; i < samples.rows(); ++i) out << (i ? "," : "") << 'x' << i;
  out << '\n' << std::setprecision(17);
  for (Eigen::Index s = 0; s < samples.cols(); ++s) {
    for (Eigen::Index i = 0; i < samples.rows(); ++i) out << (i ? "," : "") << samples(i, s);
    out << '\n';
  }
  require(out.good(), ErrorCode::Io, "failed writing '" + path + "'");
}

Mat read_samples_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::Io, "cannot open sample file '" + path + "'");
  std::string line;
  std::getline(in, line);
  const auto k = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') + 1);
  std::vector<double> values;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Eigen::Index count = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        fail(ErrorCode::Io, path + ":" + std::to_string(row) + ": not a number: '" + cell + "'");
      }
      ++count;
    }
    require(count == k, ErrorCode::DimensionMismatch,
            path + ":" + std::to_string(row) + ": expected " + std::to_string(k) + " columns");
  }
  require(!values.empty(), ErrorCode::Io, "sample file '" + path + "' has no rows");
  return Eigen::Map<const Mat>(values.data(), k, static_cast<Eigen::Index>(values.size()) / k);
}

void write_pgm(const Vec& image, std::size_t rows, std::size_t cols, const std::string& path) {
  require(static_cast<std::size_t>(image.size()) == rows * cols, ErrorCode::DimensionMismatch,
          "image size does not match rows x cols");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::Io, "cannot open '" + path + "' for writing");
  out << "P5\n" << cols << ' ' << rows << "\n255\n";
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image(i), 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
}

}  // namespace stdb
