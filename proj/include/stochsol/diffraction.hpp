#pragma once

#include "stochsol/fft.hpp"
#include "stochsol/grid.hpp"
#include "stochsol/stats.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace stochsol {

struct SlitSetup {
  double w = 1.0;
  double lambda = 1.0;
  double L = 1.0;
  double beam_extent = 1.0;
  std::size_t n_trials = 100000;
  std::size_t bins = 100;
  Grid1D grid{-1.0, 1.0, 64};

  double fresnel_number() const { return w * w / (lambda * L); }
  // lambda L / w: first Fraunhofer zero.
  double fringe_scale() const { return lambda * L / w; }
  // Slit plus both first-zero offsets.
  double spread() const { return w + 2.0 * fringe_scale(); }
  // Landings are histogrammed on +-(w/2 + 5 lambda L / w).
  double histogram_half_width() const { return 0.5 * w + 5.0 * fringe_scale(); }
};

// Grid with `points_across` (odd) cells over the slit, the slit edges on cell
// boundaries, and room for both the diffraction spread and the highest
// transverse wavenumber the grid can carry.
Grid1D slit_grid(double w, double lambda, double L, std::size_t points_across = 129);
SlitSetup make_setup(double w, double lambda, double L, std::size_t n_trials, std::size_t bins = 100,
                     std::size_t points_across = 129);
void validate_setup(const SlitSetup& setup);

struct TransverseField {
  Grid1D grid;
  std::vector<cplx> values;

  double norm2() const;
  std::vector<double> intensity() const;
};

struct ApertureField {
  TransverseField field;  // unit norm
  double w = 0.0;
  // Share of the incident power on the grid that passes the slit.
  double transmitted_fraction = 0.0;
};

// Incident amplitude on each grid cell, weighted by the square root of the
// fraction of the cell inside the slit, then normalized.
ApertureField truncate_at_slit(const std::function<cplx(double)>& incident, const SlitSetup& setup);

// Paraxial propagation: mode k gains the phase -k^2 distance lambda / (4 pi).
TransverseField propagate_field(const TransverseField& field, double distance, double lambda);
// Same, after checking that the grid resolves the slit and holds the spread.
TransverseField propagate_free(const ApertureField& field, double distance, const SlitSetup& setup);

// Monotone transport x_L = Q^-1(P(b)) between the aperture and screen
// intensities, both as piecewise-constant densities on grid cells.
class LandingMap {
 public:
  LandingMap(const ApertureField& aperture, const TransverseField& screen);
  double operator()(double b) const;
  double source_cdf(double b) const;
  double screen_cdf(double x) const;
  double screen_quantile(double u) const;

 private:
  Grid1D src_grid_, dst_grid_;
  double half_width_;
  std::vector<double> src_cum_, dst_cum_;
};

double transport_landing(const TransverseField& screen, const ApertureField& aperture, double b);

// Normalized sinc^2(pi w x / (lambda L)) on the setup grid (sum * dx = 1).
std::vector<double> fraunhofer_oracle(const SlitSetup& setup);
// Mass of the sinc^2 law on [a, b], unnormalized (total over the line = lambda L / w).
double fraunhofer_mass(const SlitSetup& setup, double a, double b);

// First Fraunhofer minimum from landings: |x| histogram over [0.7, 1.3] x0
// in 30 bins and a weighted cubic fit.
double estimate_first_minimum(std::span<const double> landings, double x0);

// Local maxima of the intensity within |x| < half_width whose prominence
// exceeds `rel_prominence` of the largest intensity there.
std::size_t count_fringe_maxima(const TransverseField& screen, double half_width, double rel_prominence = 0.01);

struct DiffractionResult {
  SlitSetup setup;
  std::vector<double> landings;
  Histogram histogram{-1.0, 1.0, 1};
  // Bin probabilities conditional on the histogram range.
  std::vector<double> predicted;
  std::vector<double> fraunhofer;
  TestReport vs_field;
  TestReport vs_fraunhofer;
  double first_minimum = 0.0;
  std::size_t fringe_maxima = 0;
};

// Plane-wave incidence, b uniform over the slit from RngStream(seed, block)
// in blocks of 4096 trials.
DiffractionResult run_experiment(const SlitSetup& setup, std::uint64_t seed);

}  // namespace stochsol
