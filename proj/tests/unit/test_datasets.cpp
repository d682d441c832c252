#include "doctest.h"

#include "stdb/datasets.hpp"
#include "stdb/errors.hpp"
#include "stdb/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

using namespace stdb;

namespace {

Mat normal_sample(std::size_t n, double mean, std::uint64_t seed) {
  Mat m(1, static_cast<Eigen::Index>(n));
  CounterRng rng(seed, RngDomain::Simulate, 0);
  for (Eigen::Index i = 0; i < m.cols(); ++i) m(0, i) = mean + rng.normal();
  return m;
}

// Sorting-based W1 on the line for equal sample sizes.
double w1_sorted(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

std::vector<double> row(const Mat& m) { return {m.data(), m.data() + m.size()}; }

}  // namespace

TEST_CASE("gm2 is symmetric about the origin") {
  const SampleSet s = make_dataset("gm2", 10000, 7);
  CHECK(s.dim() == 2);
  const Vec mean = s.data.rowwise().mean();
  // per-coordinate variances: 4 + 0.25 and 0.25
  CHECK(std::abs(mean[0]) < 3.0 * std::sqrt(4.25 / 1e4));
  CHECK(std::abs(mean[1]) < 3.0 * std::sqrt(0.25 / 1e4));
}

TEST_CASE("datasets are deterministic per seed") {
  for (const auto& name : dataset_names()) {
    CAPTURE(name);
    const SampleSet a = make_dataset(name, 300, 11), b = make_dataset(name, 300, 11);
    CHECK(a.data == b.data);
    CHECK(a.data != make_dataset(name, 300, 12).data);
    // prefixes agree across sizes
    CHECK(make_dataset(name, 100, 11).data == a.data.leftCols(100));
  }
}

TEST_CASE("grid8 pixels lie in [0, 1] and ring sits near radius 3") {
  const SampleSet g = make_dataset("grid8", 500, 3);
  CHECK(g.dim() == 64);
  CHECK(g.data.minCoeff() >= 0.0);
  CHECK(g.data.maxCoeff() <= 1.0);
  CHECK(g.data.maxCoeff() > 0.3);
  const SampleSet r = make_dataset("ring", 2000, 3);
  const double radius = r.data.colwise().norm().mean();
  CHECK(radius == doctest::Approx(3.0).epsilon(0.01));
}

TEST_CASE("unknown dataset name") {
  try {
    make_dataset("mnist", 10, 0);
    FAIL("expected UnknownDataset");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownDataset);
  }
}

TEST_CASE("initial distribution sampling and density") {
  const InitialDistribution p0 = InitialDistribution::isotropic(2, 1.0, 0.5);
  CHECK(p0.is_isotropic());
  const Mat x = p0.sample(20000, 5);
  CHECK(x.row(0).mean() == doctest::Approx(1.0).epsilon(0.02));
  const double sd = std::sqrt((x.row(1).array() - x.row(1).mean()).square().mean());
  CHECK(sd == doctest::Approx(0.5).epsilon(0.02));
  CHECK(p0.sample(10, 5) == x.leftCols(10));
  const Vec at_mean = Vec::Constant(2, 1.0);
  CHECK(p0.logpdf(at_mean) == doctest::Approx(-std::log(2.0 * M_PI * 0.25)));
  const InitialDistribution back = initial_from_json(initial_to_json(p0));
  CHECK(back.mean == p0.mean);
  CHECK(back.scale == p0.scale);
  InitialDistribution bad = p0;
  bad.scale[0] = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("energy distance basics") {
  const Mat a = make_dataset("gm2", 400, 1).data;
  const Mat b = make_dataset("gm2", 300, 2).data;
  CHECK(energy_distance(a, a) == 0.0);
  CHECK(energy_distance(a, b) == energy_distance(b, a));
  CHECK(energy_distance(a, b) >= 0.0);

  const Mat n0 = normal_sample(1000, 0.0, 1), n10 = normal_sample(1000, 10.0, 2);
  const double d = energy_distance(n0, n10);
  CHECK(d > 15.0);
  // 2 E|X - Y| - E|X - X'| - E|Y - Y'| with |X - Y| ~ 10 and E|X - X'| = 2/sqrt(pi)
  CHECK(d == doctest::Approx(20.0 - 4.0 / std::sqrt(M_PI)).epsilon(0.02));

  CHECK_THROWS_AS(energy_distance(a, n0), Error);
}

TEST_CASE("sliced Wasserstein basics") {
  const Mat a = make_dataset("gm2", 500, 1).data;
  const Mat b = make_dataset("gm2", 500, 2).data;
  CHECK(sliced_wasserstein(a, a, 16, 3) == 0.0);
  CHECK(sliced_wasserstein(a, b, 16, 3) == sliced_wasserstein(a, b, 16, 3));
  CHECK(sliced_wasserstein(a, b, 16, 3) == doctest::Approx(sliced_wasserstein(b, a, 16, 3)).epsilon(1e-12));
  CHECK(sliced_wasserstein(a, b, 16, 3) > 0.0);

  const Mat x = normal_sample(777, 0.0, 4);
  for (double c : {0.25, -3.0, 10.0}) {
    const Mat y = x.array() + c;
    CHECK(std::abs(sliced_wasserstein(x, y, 1, 0) - std::abs(c)) < 1e-12);
  }
  const Mat y = normal_sample(777, 0.3, 5);
  CHECK(std::abs(sliced_wasserstein(x, y, 1, 0) - w1_sorted(row(x), row(y))) < 1e-12);
  CHECK(std::abs(wasserstein1_1d(row(x), row(y)) - w1_sorted(row(x), row(y))) < 1e-12);
  // unequal sizes: {0, 1} vs {0.5} has W1 = 0.5
  CHECK(wasserstein1_1d({0.0, 1.0}, {0.5}) == doctest::Approx(0.5));
}

TEST_CASE("gm2 self-distance stays below the committed calibration threshold") {
  std::ifstream in(std::string(STDB_FIXTURE_DIR) + "/gm2_calibration.json");
  REQUIRE(in.good());
  const nlohmann::json fx = nlohmann::json::parse(in);
  const double threshold = fx.at("threshold").get<double>();
  const auto n = fx.at("subsample_size").get<std::size_t>();
  CHECK(threshold > 0.0);
  // a fresh draw outside the calibration seeds
  const SampleSet both = make_dataset("gm2", 2 * n, 424242);
  const auto cols = static_cast<Eigen::Index>(n);
  const Mat first = both.data.leftCols(cols), second = both.data.rightCols(cols);
  CHECK(energy_distance(first, second) < threshold);
  // a shifted copy is far beyond it
  const Mat shifted = second.array() + 0.5;
  CHECK(energy_distance(first, shifted) > threshold);
}

TEST_CASE("sample CSV and PGM round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "stdb_test_datasets";
  std::filesystem::create_directories(dir);
  const Mat a = make_dataset("ring", 25, 9).data;
  write_samples_csv(a, (dir / "s.csv").string());
  CHECK(read_samples_csv((dir / "s.csv").string()) == a);
  {
    std::ofstream bad(dir / "bad.csv");
    bad << "x0,x1\n1,2\n3\n";
  }
  CHECK_THROWS_AS(read_samples_csv((dir / "bad.csv").string()), Error);
  const Vec img = make_dataset("grid8", 1, 1).data.col(0);
  write_pgm(img, 8, 8, (dir / "i.pgm").string());
  std::ifstream pgm(dir / "i.pgm", std::ios::binary);
  std::string magic;
  pgm >> magic;
  CHECK(magic == "P5");
  CHECK(std::filesystem::file_size(dir / "i.pgm") > 64);
}
