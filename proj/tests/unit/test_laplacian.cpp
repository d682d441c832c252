#include "doctest.h"
#include "oracles.hpp"

#include "stdb/errors.hpp"
#include "stdb/laplacian.hpp"

#include <cmath>
#include <filesystem>

using namespace stdb;

TEST_CASE("small grids by hand") {
  const GridLaplacian edge = build_grid_laplacian(1, 2);
  Mat expected(2, 2);
  expected << 1, -1, -1, 1;
  CHECK(edge.matrix == expected);

  const GridLaplacian square = build_grid_laplacian(2, 2);
  Mat by_hand(4, 4);
  by_hand << 2, -1, -1, 0,
             -1, 2, 0, -1,
             -1, 0, 2, -1,
             0, -1, -1, 2;
  CHECK(square.matrix == by_hand);
}

TEST_CASE("structural invariants") {
  for (auto [r, c] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 3}, {4, 7}, {8, 8}}) {
    const GridLaplacian lap = build_grid_laplacian(r, c);
    CHECK(lap.matrix == lap.matrix.transpose());
    CHECK(lap.matrix.rowwise().sum().cwiseAbs().maxCoeff() <= 1e-12);
    const EigenBasis basis = eigendecompose(lap);
    CHECK(basis.values.minCoeff() >= -1e-10);
    CHECK(std::abs(basis.values(0)) < 1e-10);
    const Vec constant = Vec::Constant(static_cast<Eigen::Index>(lap.dim()), 1.0 / std::sqrt(double(lap.dim())));
    CHECK(std::abs(std::abs(basis.vectors.col(0).dot(constant)) - 1.0) < 1e-8);
    const auto k = static_cast<Eigen::Index>(lap.dim());
    CHECK((basis.vectors.transpose() * basis.vectors - Mat::Identity(k, k)).norm() < 1e-8);
    CHECK((basis.reconstruct() - lap.matrix).norm() <= 1e-8 * std::max(1.0, lap.matrix.norm()));
    for (Eigen::Index i = 1; i < k; ++i) CHECK(basis.values(i) >= basis.values(i - 1));
  }
}

TEST_CASE("spectra") {
  const EigenBasis edge = eigendecompose(build_grid_laplacian(1, 2));
  CHECK(std::abs(edge.values(0)) < 1e-12);
  CHECK(edge.values(1) == doctest::Approx(2.0));
  const double r = 1.0 / std::sqrt(2.0);
  CHECK(edge.vectors(0, 0) == doctest::Approx(r));
  CHECK(edge.vectors(1, 0) == doctest::Approx(r));
  CHECK(edge.vectors(0, 1) == doctest::Approx(r));
  CHECK(edge.vectors(1, 1) == doctest::Approx(-r));

  // Cartesian product of two single-edge paths: {0,2} + {0,2}.
  const EigenBasis square = eigendecompose(build_grid_laplacian(2, 2));
  const double expected[] = {0.0, 2.0, 2.0, 4.0};
  for (int i = 0; i < 4; ++i) CHECK(std::abs(square.values(i) - expected[i]) < 1e-10);

  // Gershgorin: max eigenvalue <= 2 * max degree.
  CHECK(eigendecompose(build_grid_laplacian(3, 3)).values.maxCoeff() <= 8.0);
}

TEST_CASE("sign convention is deterministic") {
  const EigenBasis basis = eigendecompose(build_grid_laplacian(3, 4));
  for (Eigen::Index j = 0; j < basis.vectors.cols(); ++j) {
    Eigen::Index i = 0;
    while (std::abs(basis.vectors(i, j)) <= 1e-12) ++i;
    CHECK(basis.vectors(i, j) > 0.0);
  }
}

TEST_CASE("dimension cap") {
  CHECK_THROWS_AS(build_grid_laplacian(65, 64), Error);
  CHECK_NOTHROW(build_grid_laplacian(2, 3, 6));
  try {
    build_grid_laplacian(3, 3, 8);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TooLarge);
  }
}

TEST_CASE("matrix power (1 - t)^L") {
  const EigenBasis edge = eigendecompose(build_grid_laplacian(1, 2));
  CHECK((matrix_power_one_minus_t(edge, 0.0) - Mat::Identity(2, 2)).norm() < 1e-14);

  EigenBasis unit{Mat::Identity(1, 1), Vec::Ones(1)};
  CHECK(matrix_power_one_minus_t(unit, 0.3)(0, 0) == doctest::Approx(0.7).epsilon(1e-14));

  const Mat half = matrix_power_one_minus_t(edge, 0.5);
  const Mat projected = edge.vectors.transpose() * half * edge.vectors;
  CHECK(projected(1, 1) == doctest::Approx(0.25).epsilon(1e-12));
  const Mat lap = build_grid_laplacian(1, 2).matrix;
  CHECK((half - oracle::expm(lap * std::log(0.5))).norm() < 1e-10);

  CHECK_THROWS_AS(matrix_power_one_minus_t(edge, 1.0), Error);
  CHECK_THROWS_AS(matrix_power_one_minus_t(edge, -0.1), Error);
}

TEST_CASE("matrix power properties on a 4x4 grid") {
  const GridLaplacian lap = build_grid_laplacian(4, 4);
  const EigenBasis basis = eigendecompose(lap);
  const Vec ones = Vec::Ones(16);
  Mat previous = Mat::Identity(16, 16);
  for (double t : {0.1, 0.4, 0.8, 0.999}) {
    const Mat m = matrix_power_one_minus_t(basis, t);
    CHECK((m * ones - ones).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((m * lap.matrix - lap.matrix * m).norm() < 1e-8);
    CHECK((m - m.transpose()).norm() < 1e-12);
    const Vec now = (basis.vectors.transpose() * m * basis.vectors).diagonal();
    const Vec before = (basis.vectors.transpose() * previous * basis.vectors).diagonal();
    CHECK((now.array() <= before.array() + 1e-12).all());
    CHECK((now.array() > 0.0).all());
    previous = m;
  }
}

TEST_CASE("export and import round trip") {
  const GridLaplacian lap = build_grid_laplacian(3, 5);
  const auto dir = std::filesystem::temp_directory_path() / "stdb_laplacian_io";
  std::filesystem::create_directories(dir);
  save_laplacian_json(lap, (dir / "lap.json").string());
  save_laplacian_binary(lap, (dir / "lap.bin").string());
  const GridLaplacian a = load_laplacian_json((dir / "lap.json").string());
  const GridLaplacian b = load_laplacian_binary((dir / "lap.bin").string());
  CHECK(a.rows == 3);
  CHECK(a.cols == 5);
  CHECK(a.matrix == lap.matrix);
  CHECK(b.matrix == lap.matrix);
  std::filesystem::remove_all(dir);
}
