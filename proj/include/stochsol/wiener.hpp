#pragma once

#include "stochsol/fft.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace stochsol {

// Dyadic grid s_j = j / 2^p on [0, 1], j = 0..2^p.
class SGrid {
 public:
  explicit SGrid(int p);
  int p() const { return p_; }
  std::size_t intervals() const { return std::size_t{1} << p_; }
  std::size_t size() const { return intervals() + 1; }
  double ds() const { return 1.0 / static_cast<double>(intervals()); }
  double s(std::size_t j) const { return static_cast<double>(j) * ds(); }
  // Index of a grid point; throws for points more than 1e-9 off the grid.
  std::size_t index_of(double s) const;
  std::size_t nearest(double s) const;
  bool operator==(const SGrid&) const = default;

 private:
  int p_;
};

struct BrownianPath {
  SGrid grid;
  std::vector<double> values;
};

struct ComplexBrownianPath {
  SGrid grid;
  std::vector<cplx> values;
};

struct SampledFunction {
  SGrid grid;
  std::vector<cplx> values;

  static SampledFunction from_function(const SGrid& grid, const std::function<cplx(double)>& f);
  // Left-endpoint quadrature of int_0^1 |psi|^2 ds.
  double norm2() const;
};

// Path i uses RngStream(seed, i): x(0) = 0 and N(0, ds) increments.
BrownianPath brownian_path(const SGrid& grid, std::uint64_t seed, std::size_t index);
std::vector<BrownianPath> sample_brownian(int p, std::size_t n_paths, std::uint64_t seed);

// z = (x + i y) / sqrt 2 with x, y from the independent seeds
// derive_seed(seed, 1) and derive_seed(seed, 2), same path index.
ComplexBrownianPath complex_path(const SGrid& grid, std::uint64_t seed, std::size_t index);
std::vector<ComplexBrownianPath> sample_complex(int p, std::size_t n_paths, std::uint64_t seed);

struct CovarianceEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
};

CovarianceEstimate covariance_estimate(std::span<const BrownianPath> paths, double s, double s_prime);

// Covariance at every pair of `points` (row-major), streaming the paths of
// sample_brownian(grid.p(), n_paths, seed) without storing them.
std::vector<CovarianceEstimate> covariance_surface(const SGrid& grid, std::span<const double> points,
                                                   std::size_t n_paths, std::uint64_t seed);

// Ito sum  sum_j psi(s_j) (z(s_{j+1}) - z(s_j)).
cplx stochastic_transform(const SampledFunction& psi, const ComplexBrownianPath& z);

struct UnitarityReport {
  double lhs = 0.0;        // int |psi|^2 ds
  double rhs = 0.0;        // mean |T(psi)|^2
  double std_error = 0.0;  // of rhs
  std::size_t n_paths = 0;
};

UnitarityReport unitarity_check(const SampledFunction& psi, std::size_t n_paths, std::uint64_t seed);
// Same paths for every function; paths are generated on the fly, never stored.
std::vector<UnitarityReport> unitarity_check(std::span<const SampledFunction> psis, std::size_t n_paths,
                                             std::uint64_t seed);

struct CrossMoment {
  cplx value;
  double std_error = 0.0;  // of each of the real and imaginary parts (the larger)
  std::size_t n = 0;
};

// E[T(psi1) conj T(psi2)].
CrossMoment cross_moment(const SampledFunction& psi1, const SampledFunction& psi2, std::size_t n_paths,
                         std::uint64_t seed);

// sum_{|m| <= band} c_m e^{2 pi i m s} with complex Gaussian c_m drawn from RngStream(seed, index).
SampledFunction random_band_limited(const SGrid& grid, int band, std::uint64_t seed, std::size_t index);

}  // namespace stochsol
