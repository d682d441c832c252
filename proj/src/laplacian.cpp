#include "stdb/laplacian.hpp"

#include "stdb/binary_io.hpp"
#include "stdb/errors.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace stdb {

GridLaplacian build_grid_laplacian(std::size_t rows, std::size_t cols, std::size_t max_dim) {
  require(rows >= 1 && cols >= 1, ErrorCode::InvalidArgument, "grid needs rows, cols >= 1");
  if (rows * cols > max_dim) {
    std::ostringstream msg;
    msg << rows << "x" << cols << " grid exceeds the maximum dimension " << max_dim;
    fail(ErrorCode::TooLarge, msg.str());
  }
  GridLaplacian lap;
  lap.rows = rows;
  lap.cols = cols;
  const auto k = static_cast<Eigen::Index>(rows * cols);
  lap.matrix = Mat::Zero(k, k);
  auto link = [&](Eigen::Index a, Eigen::Index b) {
    lap.matrix(a, b) -= 1.0;
    lap.matrix(b, a) -= 1.0;
    lap.matrix(a, a) += 1.0;
    lap.matrix(b, b) += 1.0;
  };
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const auto i = static_cast<Eigen::Index>(r * cols + c);
      if (c + 1 < cols) link(i, i + 1);
      if (r + 1 < rows) link(i, i + static_cast<Eigen::Index>(cols));
    }
  }
  return lap;
}

EigenBasis eigendecompose(const Mat& symmetric) {
  require(symmetric.rows() == symmetric.cols(), ErrorCode::DimensionMismatch,
          "eigendecomposition needs a square matrix");
  Eigen::SelfAdjointEigenSolver<Mat> solver(symmetric);
  if (solver.info() != Eigen::Success) fail(ErrorCode::EigenFail, "symmetric eigensolver did not converge");
  EigenBasis basis{solver.eigenvectors(), solver.eigenvalues()};
  for (Eigen::Index j = 0; j < basis.vectors.cols(); ++j) {
    for (Eigen::Index i = 0; i < basis.vectors.rows(); ++i) {
      const double v = basis.vectors(i, j);
      if (std::abs(v) > 1e-12) {
        if (v < 0.0) basis.vectors.col(j) *= -1.0;
        break;
      }
    }
  }
  return basis;
}

Mat matrix_power_one_minus_t(const EigenBasis& basis, double t) {
  require(t >= 0.0 && t < 1.0, ErrorCode::DomainError, "(1 - t)^L needs t in [0, 1)");
  const double log_s = std::log1p(-t);
  const Vec channel = (basis.values.array() * log_s).exp().matrix();
  return basis.vectors * channel.asDiagonal() * basis.vectors.transpose();
}

void save_laplacian_json(const GridLaplacian& lap, const std::string& path) {
  nlohmann::json doc;
  doc["rows"] = lap.rows;
  doc["cols"] = lap.cols;
  doc["dim"] = lap.dim();
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(lap.matrix.size()));
  for (Eigen::Index i = 0; i < lap.matrix.rows(); ++i)
    for (Eigen::Index j = 0; j < lap.matrix.cols(); ++j) data.push_back(lap.matrix(i, j));
  doc["data"] = std::move(data);
  std::ofstream out(path);
  require(out.good(), ErrorCode::Io, "cannot write " + path);
  out << doc.dump() << '\n';
}

GridLaplacian load_laplacian_json(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::Io, "cannot open " + path);
  nlohmann::json doc;
  in >> doc;
  GridLaplacian lap;
  lap.rows = doc.at("rows").get<std::size_t>();
  lap.cols = doc.at("cols").get<std::size_t>();
  const auto k = static_cast<Eigen::Index>(lap.dim());
  const auto data = doc.at("data").get<std::vector<double>>();
  require(data.size() == static_cast<std::size_t>(k * k), ErrorCode::DimensionMismatch,
          "Laplacian data size does not match rows*cols squared");
  lap.matrix = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      data.data(), k, k);
  return lap;
}

void save_laplacian_binary(const GridLaplacian& lap, const std::string& path) {
  BinaryWriter out(path);
  out.magic("STDBLAP1");
  out.u64(lap.rows);
  out.u64(lap.cols);
  for (Eigen::Index i = 0; i < lap.matrix.rows(); ++i)
    for (Eigen::Index j = 0; j < lap.matrix.cols(); ++j) out.f64(lap.matrix(i, j));
}

GridLaplacian load_laplacian_binary(const std::string& path) {
  BinaryReader in(path);
  in.expect_magic("STDBLAP1");
  GridLaplacian lap;
  lap.rows = in.u64();
  lap.cols = in.u64();
  const auto k = static_cast<Eigen::Index>(lap.dim());
  lap.matrix.resize(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) lap.matrix(i, j) = in.f64();
  return lap;
}

}  // namespace stdb
