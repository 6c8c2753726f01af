#pragma once

#include "stochsol/grid.hpp"
#include "stochsol/soliton.hpp"
#include "stochsol/stats.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace stochsol {

// Piecewise-constant density on the cells [x_i, x_i + dx) of its grid.
class CenterDistribution {
 public:
  CenterDistribution(const Grid1D& grid, std::vector<double> density);

  template <class F>
  static CenterDistribution from_function(const Grid1D& grid, F&& f) {
    std::vector<double> d(grid.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = f(grid.x(i) + 0.5 * grid.dx());
    return CenterDistribution(grid, std::move(d));
  }

  const Grid1D& grid() const { return grid_; }
  const std::vector<double>& values() const { return density_; }

  double density(double x) const;
  double cdf(double x) const;
  double quantile(double u) const;
  double mass(double a, double b) const { return cdf(b) - cdf(a); }
  double mean() const { return mean_; }
  double variance() const { return variance_; }
  double max_density() const { return max_; }

 private:
  Grid1D grid_;
  std::vector<double> density_;
  std::vector<double> cum_;  // cum_[i] = mass of cells < i
  double mean_ = 0.0;
  double variance_ = 0.0;
  double max_ = 0.0;
};

CenterDistribution gaussian_distribution(const Grid1D& grid, double mean, double sd);
CenterDistribution double_gaussian_distribution(const Grid1D& grid, double separation_half, double sd);
CenterDistribution uniform_distribution(const Grid1D& grid, double lo, double hi);

struct Trial {
  std::vector<double> centers;
  std::vector<double> phases;
  bool operator==(const Trial&) const = default;
};

struct Ensemble {
  Etalon etalon;
  std::size_t n_particles = 1;
  std::vector<Trial> trials;
};

// Centers i.i.d. from the distribution, phases uniform on [0, 2 pi). Trial j
// draws from RngStream(seed, j). For several particles a trial is redrawn
// until all pairwise |phi| overlaps are below 1e-6 (at most 1000 attempts).
Ensemble sample_trials(const CenterDistribution& dist, const SolitonProfile& profile, std::size_t n_particles,
                       std::size_t n_trials, std::uint64_t seed);
Ensemble sample_trials(const CenterDistribution& dist, const Etalon& etalon, std::size_t n_particles,
                       std::size_t n_trials, std::uint64_t seed);

// Field pair of particle k in a trial, sampled on `grid` (phase and centre applied).
FieldPair particle_pair(const Ensemble& ensemble, std::size_t trial, std::size_t particle, const Grid1D& grid);

// Psi_N on the tensor grid grid^n, row-major with particle 0 slowest.
class StochasticWaveFunction {
 public:
  StochasticWaveFunction(const Grid1D& grid, std::size_t n_particles, std::size_t n_trials);

  const Grid1D& grid() const { return grid_; }
  std::size_t n_particles() const { return n_particles_; }
  std::size_t n_trials() const { return n_trials_; }
  std::vector<cplx>& values() { return values_; }
  const std::vector<cplx>& values() const { return values_; }
  std::size_t stride(std::size_t axis) const;
  // int |Psi|^2 d^n x
  double norm2() const;

 private:
  Grid1D grid_;
  std::size_t n_particles_;
  std::size_t n_trials_;
  std::vector<cplx> values_;
};

StochasticWaveFunction build_psi_n(const Ensemble& ensemble, const Grid1D& grid);

struct CoarseGrainSpec {
  double cell_size = 0.0;
  double v0 = 0.0;
};

struct CellDensity {
  double cell_size = 0.0;          // actual size, an integer number of grid steps
  std::size_t points_per_cell = 0;
  std::vector<double> lower;       // left edge of each full cell
  std::vector<double> density;     // rho_N per cell
};

// Diagonal cells cell^n; partial cells at the right edge are dropped.
CellDensity coarse_density(const StochasticWaveFunction& psi, const CoarseGrainSpec& spec);
// int over the product cell (cells[0] x ... x cells[n-1]) of |Psi|^2.
double cell_mass(const StochasticWaveFunction& psi, const CoarseGrainSpec& spec, std::span<const std::size_t> cells);

struct BornRow {
  double center;
  double rho_n;
  double target_rho;
  double chi2_contribution;
};

struct BornComparison {
  std::vector<BornRow> rows;  // one per merged bin
  TestReport report;
};

// Chi-square of N * (cell mass) against cell probabilities of `dist`, with
// adjacent cells merged until each bin expects at least 5 counts.
BornComparison born_comparison(const CellDensity& cells, const CenterDistribution& dist, std::size_t n_trials);

class ObservableGenerator {
 public:
  enum class Kind { position, momentum };
  explicit ObservableGenerator(Kind kind) : kind_(kind) {}
  Kind kind() const { return kind_; }
  // Position multiplies by x; momentum is -i d/dx by FFT on the periodic grid.
  std::vector<cplx> apply(const Grid1D& grid, std::span<const cplx> f) const;

 private:
  Kind kind_;
};

struct ExpectationEstimate {
  double value = 0.0;
  double std_error = 0.0;
  // Largest |Im <f, M f>| relative to ||f|| ||M f||.
  double max_imag = 0.0;
  std::size_t n = 0;
};

ExpectationEstimate expectation_field(const Ensemble& ensemble, const ObservableGenerator& generator);
ExpectationEstimate expectation_operator(const StochasticWaveFunction& psi, const ObservableGenerator& generator);

struct CltSamples {
  std::vector<double> probes;
  std::vector<std::vector<cplx>> values;  // [probe][replica]
};

CltSamples clt_replicas(const CenterDistribution& dist, const SolitonProfile& profile, std::size_t n_trials,
                        std::size_t replicas, std::span<const double> probes, std::uint64_t seed);

// int rho(c) |phi(x - c)|^2 dc on the distribution's cells.
double smeared_density(const CenterDistribution& dist, const Etalon& etalon, double x);

}  // namespace stochsol
