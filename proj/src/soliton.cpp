#include "stochsol/soliton.hpp"

#include "stochsol/errors.hpp"
#include "stochsol/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

namespace stochsol {

namespace {

constexpr double kPi = std::numbers::pi;

bool finite_all(std::initializer_list<double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

double norm2(std::span<const cplx> f, double dx) {
  double s = 0.0;
  for (const auto& z : f) s += std::norm(z);
  return s * dx;
}

}  // namespace

PlaneWaveParams PlaneWaveParams::on_shell(cplx amplitude, double k, double m) {
  require(std::isfinite(k) && std::isfinite(m) && std::isfinite(amplitude.real()) && std::isfinite(amplitude.imag()),
          "plane wave parameters must be finite");
  require(m > 0.0, "plane wave mass must be positive");
  return PlaneWaveParams(amplitude, std::sqrt(k * k + m * m), k, m);
}

cplx PlaneWaveParams::operator()(double t, double x) const { return amplitude_ * std::polar(1.0, k_ * x - omega_ * t); }

double PlaneWaveFit::dispersion_mismatch(double m) const { return std::abs(omega * omega - k * k - m * m) / (m * m); }

// ---------------------------------------------------------------------------

double SolitonProfile::gamma() const { return 1.0 / std::sqrt(1.0 - v_ * v_); }

double SolitonProfile::spectral_density(double k) const {
  double z = (k - carrier_k()) / sigma_;
  return std::exp(-0.5 * z * z) / (sigma_ * std::sqrt(2.0 * kPi));
}

double SolitonProfile::support_radius(double t) const {
  double spread = sigma_ * std::abs(t) / m_;
  return kSpan * std::sqrt(1.0 / (sigma_ * sigma_) + spread * spread);
}

double SolitonProfile::decay_radius() const { return 7.0 / sigma_; }

void SolitonProfile::check_time(double t) const {
  if (support_radius(t) > 0.5 * alias_period_)
    throw NumericalError("profile evaluated too far from t = 0 for its spectral quadrature");
}

cplx SolitonProfile::field(double t, double x) const {
  if (std::abs(x - v_ * t) > support_radius(t)) return {0.0, 0.0};
  check_time(t);
  cplx s = 0.0;
  for (const auto& n : nodes_) s += n.weight * std::polar(1.0, n.k * x - n.omega * t);
  return s;
}

cplx SolitonProfile::momentum(double t, double x) const {
  if (std::abs(x - v_ * t) > support_radius(t)) return {0.0, 0.0};
  check_time(t);
  cplx s = 0.0;
  for (const auto& n : nodes_) s += n.weight * n.omega * std::polar(1.0, n.k * x - n.omega * t);
  return s * cplx(0.0, -1.0);
}

std::vector<cplx> SolitonProfile::sample_field(double t) const {
  std::vector<cplx> out(grid_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = field(t, grid_.x(i));
  return out;
}

std::vector<cplx> SolitonProfile::sample_momentum(double t) const {
  std::vector<cplx> out(grid_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = momentum(t, grid_.x(i));
  return out;
}

SolitonProfile make_profile(double m, double v, double spectral_width, const Grid1D& grid) {
  require(finite_all({m, v, spectral_width}), "profile parameters must be finite");
  require(m > 0.0, "profile mass must be positive");
  require(std::abs(v) < 1.0, "profile velocity must satisfy |v| < 1");
  require(spectral_width > 0.0, "spectral width must be positive");
  const double l0 = 1.0 / m;
  require(spectral_width < kPi / (20.0 * l0), "spectral width must be below pi/(20 l0)");

  SolitonProfile p;
  p.m_ = m;
  p.v_ = v;
  p.sigma_ = spectral_width;
  p.grid_ = grid;
  require(grid.extent() >= 20.0 * l0, "grid too small to hold 20 l0");
  require(grid.extent() >= 2.0 * p.decay_radius(), "grid too small to hold the soliton profile");

  const double k0 = p.carrier_k();
  const double h = 2.0 * SolitonProfile::kSpan * spectral_width / static_cast<double>(SolitonProfile::kNodes - 1);
  p.alias_period_ = 2.0 * kPi / h;
  p.nodes_.reserve(SolitonProfile::kNodes);
  for (std::size_t q = 0; q < SolitonProfile::kNodes; ++q) {
    double k = k0 - SolitonProfile::kSpan * spectral_width + h * static_cast<double>(q);
    double w = (q == 0 || q + 1 == SolitonProfile::kNodes) ? 0.5 * h : h;
    p.nodes_.push_back({k, std::sqrt(k * k + m * m), w * p.spectral_density(k)});
  }
  return p;
}

// ---------------------------------------------------------------------------

std::vector<cplx> FieldPair::auxiliary() const {
  std::vector<cplx> out(phi.size());
  const cplx i(0.0, 1.0);
  for (std::size_t j = 0; j < phi.size(); ++j) out[j] = (nu * phi[j] + i * pi[j] / nu) / std::numbers::sqrt2;
  return out;
}

double FieldPair::auxiliary_norm() const {
  auto a = auxiliary();
  return norm2(a, dx);
}

FieldPair normalize_pair(std::span<const cplx> phi, std::span<const cplx> pi, double dx) {
  require(phi.size() == pi.size(), "normalize_pair: phi and pi sizes differ");
  require(!phi.empty(), "normalize_pair: empty fields");
  require(std::isfinite(dx) && dx > 0.0, "normalize_pair: spacing must be positive");
  double P = 0.0, Q = 0.0, C = 0.0;
  const cplx i(0.0, 1.0);
  for (std::size_t j = 0; j < phi.size(); ++j) {
    P += std::norm(phi[j]);
    Q += std::norm(pi[j]);
    C += (i * std::conj(phi[j]) * pi[j]).real();
  }
  P *= dx;
  Q *= dx;
  C *= dx;
  require(std::isfinite(P) && std::isfinite(Q) && std::isfinite(C), "normalize_pair: fields are not square-integrable");
  if (P == 0.0 && Q == 0.0) throw PreconditionError("null field");

  // P y^2 + (2C - 2) y + Q = 0 with y = nu^2
  const double b = 2.0 * C - 2.0;
  double y = 0.0;
  if (P == 0.0) {
    if (b >= 0.0) throw NumericalError("normalize_pair: no positive normalization constant");
    y = -Q / b;
  } else {
    double disc = b * b - 4.0 * P * Q;
    if (disc < 0.0) {
      if (disc < -1e-10 * b * b) throw NumericalError("normalize_pair: fields too strong for unit normalization");
      disc = 0.0;
    }
    y = (-b + std::sqrt(disc)) / (2.0 * P);
  }
  if (!(y > 0.0)) throw NumericalError("normalize_pair: no positive normalization constant");

  FieldPair out;
  out.phi.assign(phi.begin(), phi.end());
  out.pi.assign(pi.begin(), pi.end());
  out.nu = std::sqrt(y);
  out.dx = dx;
  return out;
}

// ---------------------------------------------------------------------------

Etalon::Etalon(const SolitonProfile& profile) : profile_(profile) {
  const Grid1D& g = profile.grid();
  auto u = profile.sample_field(0.0);
  auto p = profile.sample_momentum(0.0);
  double P = norm2(u, g.dx()), Q = norm2(p, g.dx()), C = 0.0;
  const cplx i(0.0, 1.0);
  for (std::size_t j = 0; j < u.size(); ++j) C += (i * std::conj(u[j]) * p[j]).real();
  C *= g.dx();
  double scale = std::sqrt(P * Q) + C;
  if (!(scale > 0.0)) throw NumericalError("etalon: profile has no positive-frequency content on its grid");
  alpha_ = 1.0 / std::sqrt(scale);
  for (auto& z : u) z *= alpha_;
  for (auto& z : p) z *= alpha_;
  nu_ = normalize_pair(u, p, g.dx()).nu;

  for (const auto& n : profile.nodes()) {
    double h = alpha_ * n.weight * (nu_ + n.omega / nu_) / std::numbers::sqrt2;
    modes_.push_back({n.k, n.omega, cplx(h, 0.0)});
  }
  radius_ = profile.support_radius(0.0);

  double mass = 0.0, m1 = 0.0, m2 = 0.0;
  for (std::size_t j = 0; j < g.size(); ++j) {
    double w = std::norm(evaluate(0.0, g.x(j)));
    mass += w;
    m1 += w * g.x(j);
  }
  double mean = m1 / mass;
  for (std::size_t j = 0; j < g.size(); ++j) {
    double d = g.x(j) - mean;
    m2 += std::norm(evaluate(0.0, g.x(j))) * d * d;
  }
  spread_ = std::sqrt(m2 / mass);
}

cplx Etalon::evaluate(double t, double x) const {
  if (std::abs(x - profile_.velocity() * t) > profile_.support_radius(t)) return {0.0, 0.0};
  profile_.check_time(t);
  cplx s = 0.0;
  for (const auto& m : modes_) s += m.h * std::polar(1.0, m.k * x - m.omega * t);
  return s;
}

double Etalon::abs_overlap(double delta) const {
  // |phi| is smooth on the scale 1/sigma; 32 points per unit of that is ample.
  const double step = 1.0 / (32.0 * profile_.spectral_width());
  const double lo = std::min(0.0, delta) - radius_;
  const double hi = std::max(0.0, delta) + radius_;
  auto n = static_cast<std::size_t>(std::ceil((hi - lo) / step));
  double s = 0.0;
  for (std::size_t j = 0; j <= n; ++j) {
    double x = lo + step * static_cast<double>(j);
    s += std::abs(evaluate(0.0, x)) * std::abs(evaluate(0.0, x - delta));
  }
  return s * step;
}

double Etalon::min_separation(double threshold) const {
  require(threshold > 0.0, "overlap threshold must be positive");
  double lo = 0.0, hi = 2.0 * radius_;
  if (abs_overlap(lo) < threshold) return 0.0;
  for (int it = 0; it < 60; ++it) {
    double mid = 0.5 * (lo + hi);
    (abs_overlap(mid) < threshold ? hi : lo) = mid;
  }
  return hi;
}

Etalon::Stamp Etalon::stamp(const Grid1D& grid, double center, cplx weight) const {
  Stamp out;
  const double dx = grid.dx();
  double first = std::ceil((center - radius_ - grid.x_min()) / dx);
  double last = std::floor((center + radius_ - grid.x_min()) / dx);
  first = std::max(first, 0.0);
  last = std::min(last, static_cast<double>(grid.size()) - 1.0);
  if (last < first) return out;
  out.first = static_cast<std::size_t>(first);
  const std::size_t count = static_cast<std::size_t>(last) - out.first + 1;
  out.values.assign(count, cplx(0.0, 0.0));

  // Geometric recurrence along the grid, re-seeded every kBlock points so the
  // rounding error stays at a few ulps.
  constexpr std::size_t kBlock = 64;
  for (const auto& m : modes_) {
    const cplx step = std::polar(1.0, m.k * dx);
    for (std::size_t b0 = 0; b0 < count; b0 += kBlock) {
      double y = grid.x(out.first + b0) - center;
      cplx z = m.h * std::polar(1.0, m.k * y);
      const std::size_t b1 = std::min(count, b0 + kBlock);
      for (std::size_t j = b0; j < b1; ++j) {
        out.values[j] += z;
        z *= step;
      }
    }
  }
  for (auto& z : out.values) z *= weight;
  return out;
}

// ---------------------------------------------------------------------------

void validate_lattice(const SolitonProfile& profile, double a, std::size_t n_nodes, double window_extent) {
  require(std::isfinite(a) && std::isfinite(window_extent), "lattice parameters must be finite");
  if (a < 10.0 * profile.size()) throw PreconditionError("lattice spacing violates a >> l0");
  require(n_nodes % 2 == 1, "lattice node count must be odd");
  require(static_cast<double>(n_nodes) * a >= 4.0 * window_extent, "lattice must span at least 4 window extents");
  // Aliased images of the on-shell point sit 2 pi gamma / a away in k.
  require(SolitonProfile::kSpan * profile.spectral_width() < kPi * profile.gamma() / a,
          "profile spectrum does not fit inside the lattice Brillouin zone");
}

cplx lattice_field(const SolitonProfile& profile, double a, std::size_t n_nodes, double t, double x) {
  const long long half = static_cast<long long>(n_nodes / 2);
  const double g = profile.gamma(), v = profile.velocity();
  cplx s = 0.0;
  for (long long j = -half; j <= half; ++j) {
    double d = g * a * static_cast<double>(j);
    s += profile.field(t + v * d, x + d);
  }
  return s;
}

std::vector<cplx> lattice_sum(const SolitonProfile& profile, double a, std::size_t n_nodes, double t,
                              const Grid1D& window) {
  validate_lattice(profile, a, n_nodes, window.extent());
  std::vector<cplx> out(window.size());
  constexpr std::size_t kChunk = 16;
  parallel_for(block_count(out.size(), kChunk), [&](std::size_t b) {
    auto r = block_range(b, out.size(), kChunk);
    for (std::size_t i = r.begin; i < r.end; ++i) out[i] = lattice_field(profile, a, n_nodes, t, window.x(i));
  });
  return out;
}

SpaceTimeSamples lattice_samples(const SolitonProfile& profile, double a, std::size_t n_nodes,
                                 std::span<const double> times, std::span<const double> positions) {
  require(!times.empty() && !positions.empty(), "lattice samples need times and positions");
  auto [xlo, xhi] = std::minmax_element(positions.begin(), positions.end());
  validate_lattice(profile, a, n_nodes, *xhi - *xlo);
  SpaceTimeSamples s;
  s.times.assign(times.begin(), times.end());
  s.positions.assign(positions.begin(), positions.end());
  s.values.resize(times.size() * positions.size());
  const std::size_t n = s.values.size(), nx = positions.size();
  constexpr std::size_t kChunk = 16;
  parallel_for(block_count(n, kChunk), [&](std::size_t b) {
    auto r = block_range(b, n, kChunk);
    for (std::size_t i = r.begin; i < r.end; ++i)
      s.values[i] = lattice_field(profile, a, n_nodes, s.times[i / nx], s.positions[i % nx]);
  });
  return s;
}

cplx lattice_amplitude(const SolitonProfile& profile, double a) {
  return 2.0 * kPi * profile.gamma() * profile.spectral_density(profile.carrier_k()) / a;
}

double relative_ripple(std::span<const cplx> field) {
  require(!field.empty(), "ripple of an empty field");
  cplx mean = std::accumulate(field.begin(), field.end(), cplx(0.0, 0.0)) / static_cast<double>(field.size());
  require(std::abs(mean) > 0.0, "ripple undefined for zero-mean field");
  double worst = 0.0;
  for (const auto& z : field) worst = std::max(worst, std::abs(z - mean));
  return worst / std::abs(mean);
}

// ---------------------------------------------------------------------------

namespace {

struct Objective {
  double value;        // |S|^2
  std::array<double, 2> grad;
  std::array<std::array<double, 2>, 2> hess;
};

// S(w, k) = sum f exp(i(w tau - k xi)) over centred coordinates.
Objective objective(const SpaceTimeSamples& s, double t0, double x0, double w, double k) {
  cplx S = 0.0, Sw = 0.0, Sk = 0.0, Sww = 0.0, Skk = 0.0, Swk = 0.0;
  const cplx i(0.0, 1.0);
  for (std::size_t it = 0; it < s.times.size(); ++it) {
    double tau = s.times[it] - t0;
    for (std::size_t ix = 0; ix < s.positions.size(); ++ix) {
      double xi = s.positions[ix] - x0;
      cplx term = s.at(it, ix) * std::polar(1.0, w * tau - k * xi);
      S += term;
      Sw += i * tau * term;
      Sk += -i * xi * term;
      Sww += -tau * tau * term;
      Skk += -xi * xi * term;
      Swk += tau * xi * term;
    }
  }
  Objective o;
  o.value = std::norm(S);
  o.grad = {2.0 * (std::conj(S) * Sw).real(), 2.0 * (std::conj(S) * Sk).real()};
  o.hess[0][0] = 2.0 * (std::conj(Sw) * Sw + std::conj(S) * Sww).real();
  o.hess[1][1] = 2.0 * (std::conj(Sk) * Sk + std::conj(S) * Skk).real();
  o.hess[0][1] = o.hess[1][0] = 2.0 * (std::conj(Sk) * Sw + std::conj(S) * Swk).real();
  return o;
}

double mean_step(std::span<const double> xs) {
  return xs.size() < 2 ? 0.0 : (xs.back() - xs.front()) / static_cast<double>(xs.size() - 1);
}

}  // namespace

PlaneWaveFit plane_wave_fit(const SpaceTimeSamples& s) {
  require(s.values.size() == s.times.size() * s.positions.size(), "plane_wave_fit: sample shape mismatch");
  for (const auto& z : s.values)
    require(std::isfinite(z.real()) && std::isfinite(z.imag()), "plane_wave_fit: non-finite sample");
  std::size_t nonzero = 0;
  double energy = 0.0;
  for (const auto& z : s.values) {
    nonzero += std::norm(z) > 0.0;
    energy += std::norm(z);
  }
  if (nonzero == 0) throw PreconditionError("plane_wave_fit: cannot fit an all-zero field");
  require(nonzero >= 16, "plane_wave_fit: field must be nonzero on at least 16 samples");
  require(std::is_sorted(s.times.begin(), s.times.end()) && std::is_sorted(s.positions.begin(), s.positions.end()),
          "plane_wave_fit: sample coordinates must be increasing");

  const bool fit_w = s.times.size() > 1;
  const bool fit_k = s.positions.size() > 1;
  const double t0 = 0.5 * (s.times.front() + s.times.back());
  const double x0 = 0.5 * (s.positions.front() + s.positions.back());

  // Pulse-pair start: phase of lag-one autocorrelations along each axis.
  double w = 0.0, k = 0.0;
  if (fit_w) {
    cplx acc = 0.0;
    for (std::size_t it = 0; it + 1 < s.times.size(); ++it)
      for (std::size_t ix = 0; ix < s.positions.size(); ++ix) acc += s.at(it + 1, ix) * std::conj(s.at(it, ix));
    w = -std::arg(acc) / mean_step(s.times);
  }
  if (fit_k) {
    cplx acc = 0.0;
    for (std::size_t it = 0; it < s.times.size(); ++it)
      for (std::size_t ix = 0; ix + 1 < s.positions.size(); ++ix) acc += s.at(it, ix + 1) * std::conj(s.at(it, ix));
    k = std::arg(acc) / mean_step(s.positions);
  }

  // Variable projection: the best amplitude for fixed (w, k) is S/n, so the
  // fit maximizes |S|^2. Newton with a backtracking safeguard.
  const double tspan = fit_w ? s.times.back() - s.times.front() : 1.0;
  const double xspan = fit_k ? s.positions.back() - s.positions.front() : 1.0;
  Objective cur = objective(s, t0, x0, w, k);
  for (int iter = 0; iter < 100; ++iter) {
    double gw = fit_w ? cur.grad[0] : 0.0, gk = fit_k ? cur.grad[1] : 0.0;
    double hww = fit_w ? cur.hess[0][0] : -1.0, hkk = fit_k ? cur.hess[1][1] : -1.0;
    double hwk = (fit_w && fit_k) ? cur.hess[0][1] : 0.0;
    double det = hww * hkk - hwk * hwk;
    double dw, dk;
    if (hww < 0.0 && det > 0.0) {
      dw = -(hkk * gw - hwk * gk) / det;
      dk = -(-hwk * gw + hww * gk) / det;
    } else {
      // Gradient ascent scaled to the sampled span.
      double denom = cur.value + 1e-300;
      dw = 6.0 * gw / (denom * tspan * tspan);
      dk = 6.0 * gk / (denom * xspan * xspan);
    }
    if (std::abs(dw) * tspan < 1e-14 && std::abs(dk) * xspan < 1e-14) break;
    double lambda = 1.0;
    bool improved = false;
    for (int bt = 0; bt < 40; ++bt) {
      Objective trial = objective(s, t0, x0, w + lambda * dw, k + lambda * dk);
      if (trial.value >= cur.value) {
        w += lambda * dw;
        k += lambda * dk;
        cur = trial;
        improved = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!improved) break;
  }

  PlaneWaveFit fit;
  fit.omega = w;
  fit.k = k;
  cplx S = 0.0;
  for (std::size_t it = 0; it < s.times.size(); ++it)
    for (std::size_t ix = 0; ix < s.positions.size(); ++ix)
      S += s.at(it, ix) * std::polar(1.0, w * s.times[it] - k * s.positions[ix]);
  fit.amplitude = S / static_cast<double>(s.values.size());
  double res = 0.0;
  for (std::size_t it = 0; it < s.times.size(); ++it)
    for (std::size_t ix = 0; ix < s.positions.size(); ++ix)
      res += std::norm(s.at(it, ix) - fit.amplitude * std::polar(1.0, k * s.positions[ix] - w * s.times[it]));
  fit.residual = std::sqrt(res / energy);
  return fit;
}

}  // namespace stochsol
