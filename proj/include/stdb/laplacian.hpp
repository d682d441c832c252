#pragma once

#include "stdb/linalg.hpp"

#include <cstddef>
#include <string>

namespace stdb {

inline constexpr std::size_t kDefaultMaxLaplacianDim = 4096;

/// L = D - J of the 4-neighbour grid graph (open boundary) on rows x cols
/// pixels, pixel (r, c) at index r * cols + c.
struct GridLaplacian {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Mat matrix;

  std::size_t dim() const noexcept { return rows * cols; }
};

/// Orthonormal eigenvectors (columns) with ascending eigenvalues.
struct EigenBasis {
  Mat vectors;
  Vec values;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(values.size()); }
  Mat reconstruct() const { return vectors * values.asDiagonal() * vectors.transpose(); }
};

GridLaplacian build_grid_laplacian(std::size_t rows, std::size_t cols,
                                   std::size_t max_dim = kDefaultMaxLaplacianDim);

/// Dense symmetric eigendecomposition. Each eigenvector's first component with
/// magnitude above 1e-12 is made positive. Throws EigenFail.
EigenBasis eigendecompose(const Mat& symmetric);
inline EigenBasis eigendecompose(const GridLaplacian& lap) { return eigendecompose(lap.matrix); }

/// P diag((1 - t)^lambda_i) P^T. Throws DomainError for t >= 1 or t < 0.
Mat matrix_power_one_minus_t(const EigenBasis& basis, double t);

/// Row-major dense export. JSON: {"rows", "cols", "dim", "data"}; binary:
/// "STDBLAP1", u64 rows, u64 cols, then dim*dim little-endian doubles.
void save_laplacian_json(const GridLaplacian& lap, const std::string& path);
GridLaplacian load_laplacian_json(const std::string& path);
void save_laplacian_binary(const GridLaplacian& lap, const std::string& path);
GridLaplacian load_laplacian_binary(const std::string& path);

}  // namespace stdb
