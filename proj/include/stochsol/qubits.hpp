#pragma once

#include "stochsol/ensemble.hpp"
#include "stochsol/fft.hpp"
#include "stochsol/grid.hpp"
#include "stochsol/soliton.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace stochsol {

struct MatchResult {
  double d_hat = 0.0;
  cplx overlap;
  double phase = 0.0;  // arg(overlap) in (-pi, pi]
};

// Phi wrapped into [0, 2 pi).
class RandomPhase {
 public:
  explicit RandomPhase(double phi);
  double value() const { return phi_; }

 private:
  double phi_;
};

// Variational centre matching against a fixed etalon on a fixed periodic
// grid: maximizes |int conj(e(x - d)) f(x) dx| over d.
class Matcher {
 public:
  Matcher(const Etalon& etalon, const Grid1D& grid);
  MatchResult match(std::span<const cplx> trial_field) const;
  // Overlap at an arbitrary shift, by spectral translation.
  cplx overlap(std::span<const cplx> trial_field, double d) const;
  const Grid1D& grid() const { return grid_; }

 private:
  Grid1D grid_;
  std::vector<cplx> etalon_spectrum_;
  std::vector<double> k_;
};

MatchResult match_center(std::span<const cplx> trial_field, const Etalon& etalon, const Grid1D& grid);

// Sum of matched per-particle phases of a trial, wrapped.
RandomPhase trial_phase(const Trial& trial, const Matcher& matcher, const Etalon& etalon);

int dichotomic_sample(RandomPhase phi, double theta);

struct DichotomicConfig {
  std::vector<double> thetas;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
};

struct CorrelationEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
};

// E(f1 f2) for the two channels of the config. Only the wrapped distance
// |theta1 - theta2| in [0, pi] matters, so channel 1 is evaluated at 0 and
// channel 2 at that distance.
CorrelationEstimate phase_correlation(const DichotomicConfig& config);
CorrelationEstimate phase_correlation(const DichotomicConfig& config, std::span<const RandomPhase> phases);

double wrapped_distance(double delta_theta);

double singlet_correlation(const std::array<double, 3>& a, const std::array<double, 3>& b);

struct CorrelationRow {
  double delta_theta;
  double estimate;
  double std_error;
  double eq35;  // 1 - 2 |dtheta| / pi
  double eq34;  // -cos dtheta
};

std::vector<CorrelationRow> correlation_curve(std::span<const double> delta_thetas, std::size_t n_samples,
                                              std::uint64_t seed);
std::vector<CorrelationRow> correlation_curve(std::span<const double> delta_thetas,
                                              std::span<const RandomPhase> phases);

// Phases from the full pipeline: sample trials, lay each particle's field on
// `grid`, match it against the etalon and sum the matched phases.
std::vector<RandomPhase> solitonic_phases(const CenterDistribution& dist, const Etalon& etalon,
                                          std::size_t n_particles, std::size_t n_trials, const Grid1D& grid,
                                          std::uint64_t seed);

}  // namespace stochsol
