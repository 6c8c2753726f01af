#pragma once

#include "stochsol/fft.hpp"
#include "stochsol/grid.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace stochsol {

// A * exp(-i omega t + i k x) on the mass shell omega^2 = k^2 + m^2.
class PlaneWaveParams {
 public:
  static PlaneWaveParams on_shell(cplx amplitude, double k, double m);

  cplx amplitude() const { return amplitude_; }
  double omega() const { return omega_; }
  double k() const { return k_; }
  double m() const { return m_; }
  cplx operator()(double t, double x) const;

 private:
  PlaneWaveParams(cplx a, double omega, double k, double m) : amplitude_(a), omega_(omega), k_(k), m_(m) {}
  cplx amplitude_;
  double omega_;
  double k_;
  double m_;
};

// Unconstrained least-squares plane wave; the mass shell is for the caller to check.
struct PlaneWaveFit {
  cplx amplitude;
  double omega = 0.0;
  double k = 0.0;
  double residual = 0.0;  // ||f - fit|| / ||f||

  // |omega^2 - k^2 - m^2| / m^2
  double dispersion_mismatch(double m) const;
};

// Complex samples on a tensor (t, x) grid, row-major in t.
struct SpaceTimeSamples {
  std::vector<double> times;
  std::vector<double> positions;
  std::vector<cplx> values;

  cplx& at(std::size_t it, std::size_t ix) { return values[it * positions.size() + ix]; }
  cplx at(std::size_t it, std::size_t ix) const { return values[it * positions.size() + ix]; }
};

// u(t,x) = int dk g(k) exp(-i(omega(k) t - k x)) with a unit-integral Gaussian g
// of width spectral_width centred on k0 = m gamma v. The integral is a fixed
// trapezoid over k0 +- 9 sigma.
class SolitonProfile {
 public:
  struct Node {
    double k;
    double omega;
    double weight;  // quadrature weight times g(k)
  };

  static constexpr std::size_t kNodes = 129;
  static constexpr double kSpan = 9.0;  // half-width of the k window, in units of sigma

  double mass() const { return m_; }
  double size() const { return 1.0 / m_; }
  double velocity() const { return v_; }
  double spectral_width() const { return sigma_; }
  double gamma() const;
  double carrier_k() const { return m_ * gamma() * v_; }
  double carrier_omega() const { return m_ * gamma(); }
  const Grid1D& grid() const { return grid_; }
  const std::vector<Node>& nodes() const { return nodes_; }

  double spectral_density(double k) const;
  // Envelope half-width beyond which the field is treated as exactly zero.
  double support_radius(double t) const;
  // Distance from the centre where |u| drops below 1e-10 of its peak at t = 0.
  double decay_radius() const;

  cplx field(double t, double x) const;
  cplx momentum(double t, double x) const;  // d/dt of field
  std::vector<cplx> sample_field(double t) const;
  std::vector<cplx> sample_momentum(double t) const;

  // Throws once the spreading packet would overlap its quadrature images.
  void check_time(double t) const;

 private:
  friend SolitonProfile make_profile(double, double, double, const Grid1D&);
  SolitonProfile() = default;

  double m_ = 1.0;
  double v_ = 0.0;
  double sigma_ = 0.1;
  double alias_period_ = 0.0;
  Grid1D grid_;
  std::vector<Node> nodes_;
};

SolitonProfile make_profile(double m, double v, double spectral_width, const Grid1D& grid);

struct FieldPair {
  std::vector<cplx> phi;
  std::vector<cplx> pi;
  double nu = 1.0;
  double dx = 1.0;

  // (nu phi + i pi / nu) / sqrt(2)
  std::vector<cplx> auxiliary() const;
  double auxiliary_norm() const;
};

// Picks nu so that int |nu phi + i pi/nu|^2 / 2 dx = 1, taking the larger
// root in nu^2 when two exist.
FieldPair normalize_pair(std::span<const cplx> phi, std::span<const cplx> pi, double dx);

// One-particle auxiliary function built from a profile at t = 0. The profile
// amplitude is scaled so the normalization quadratic has its double root,
// nu^4 = int|pi|^2 / int|phi|^2.
class Etalon {
 public:
  explicit Etalon(const SolitonProfile& profile);

  const SolitonProfile& profile() const { return profile_; }
  double nu() const { return nu_; }
  double amplitude_scale() const { return alpha_; }
  double support_radius() const { return radius_; }
  // Standard deviation of |phi|^2 about its centre.
  double position_spread() const { return spread_; }

  cplx evaluate(double t, double x) const;
  cplx operator()(double x) const { return evaluate(0.0, x); }

  // int |phi(x)| |phi(x - delta)| dx
  double abs_overlap(double delta) const;
  // Smallest separation whose abs_overlap falls below `threshold`.
  double min_separation(double threshold) const;

  // weight * phi(x_i - center) on the grid points within the support,
  // starting at grid index `first` (points off the grid are dropped).
  struct Stamp {
    std::size_t first = 0;
    std::vector<cplx> values;
  };
  Stamp stamp(const Grid1D& grid, double center, cplx weight) const;

  struct Mode {
    double k;
    double omega;
    cplx h;
  };
  const std::vector<Mode>& modes() const { return modes_; }

 private:
  SolitonProfile profile_;
  double alpha_ = 1.0;
  double nu_ = 1.0;
  double radius_ = 0.0;
  double spread_ = 0.0;
  std::vector<Mode> modes_;
};

// Lorentz-boosted chain: node j sits at proper spacing a in the soliton rest
// frame, i.e. the term is u(t + gamma v j a, x + gamma j a).
void validate_lattice(const SolitonProfile& profile, double a, std::size_t n_nodes, double window_extent);
cplx lattice_field(const SolitonProfile& profile, double a, std::size_t n_nodes, double t, double x);
std::vector<cplx> lattice_sum(const SolitonProfile& profile, double a, std::size_t n_nodes, double t,
                              const Grid1D& window);
SpaceTimeSamples lattice_samples(const SolitonProfile& profile, double a, std::size_t n_nodes,
                                 std::span<const double> times, std::span<const double> positions);
// Infinite-chain amplitude 2 pi gamma g(k0) / a.
cplx lattice_amplitude(const SolitonProfile& profile, double a);

// max |f - mean f| / |mean f|
double relative_ripple(std::span<const cplx> field);

PlaneWaveFit plane_wave_fit(const SpaceTimeSamples& samples);

}  // namespace stochsol
