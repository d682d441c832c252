#pragma once

#include <array>
#include <cstdint>

namespace stdb {

/// Philox4x32-10 counter-based generator: the output depends only on
/// (key, counter), so any (seed, stream, step) can be drawn independently.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

// Separates the random streams of different consumers sharing one seed.
enum class RngDomain : std::uint32_t {
  Simulate = 1,
  BridgeSample = 2,
  Dataset = 3,
  Initial = 4,
  Training = 5,
  Init = 6,
  Elbo = 7,
  Projection = 8,
  Search = 9,
};

/// Sequential stream keyed by (seed, domain, stream, substream). Draws are
/// consumed four uniforms per Philox block.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, RngDomain domain, std::uint64_t stream, std::uint32_t substream = 0);

  double uniform();  // in (0, 1)
  double normal();
  std::uint64_t below(std::uint64_t n);  // uniform integer in [0, n)
  void normals(double* out, std::size_t n);

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace stdb
