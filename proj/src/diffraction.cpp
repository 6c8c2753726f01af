#include "stochsol/diffraction.hpp"

#include "stochsol/errors.hpp"
#include "stochsol/parallel.hpp"
#include "stochsol/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

namespace stochsol {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr std::size_t kTrialBlock = 4096;

double sinc2(double u) {
  if (std::abs(u) < 1e-8) return 1.0 - u * u / 3.0;
  double s = std::sin(u) / u;
  return s * s;
}

// Cumulative cell masses of a piecewise-constant density, normalized.
std::vector<double> cumulative(const std::vector<double>& mass) {
  std::vector<double> cum(mass.size() + 1, 0.0);
  for (std::size_t i = 0; i < mass.size(); ++i) cum[i + 1] = cum[i] + mass[i];
  const double total = cum.back();
  if (!(total > 0.0)) throw NumericalError("intensity has no mass");
  for (auto& c : cum) c /= total;
  cum.back() = 1.0;
  return cum;
}

double cdf_at(const Grid1D& g, const std::vector<double>& cum, double x) {
  const double t = (x - (g.x_min() - 0.5 * g.dx())) / g.dx();
  if (t <= 0.0) return 0.0;
  if (t >= static_cast<double>(g.size())) return 1.0;
  const auto i = static_cast<std::size_t>(t);
  return cum[i] + (t - static_cast<double>(i)) * (cum[i + 1] - cum[i]);
}

double quantile_at(const Grid1D& g, const std::vector<double>& cum, double u) {
  u = std::clamp(u, 0.0, 1.0);
  auto it = std::upper_bound(cum.begin(), cum.end(), u);
  std::size_t i = it == cum.begin() ? 0 : static_cast<std::size_t>(it - cum.begin()) - 1;
  if (i >= g.size()) {
    // u == 1: right edge of the last cell with mass.
    i = g.size() - 1;
    while (i > 0 && cum[i + 1] == cum[i]) --i;
    return g.x(i) + 0.5 * g.dx();
  }
  const double m = cum[i + 1] - cum[i];
  return g.x(i) - 0.5 * g.dx() + g.dx() * (u - cum[i]) / m;
}

// Solves the 4x4 system a x = b by partial pivoting.
std::array<double, 4> solve4(std::array<std::array<double, 4>, 4> a, std::array<double, 4> b) {
  for (int c = 0; c < 4; ++c) {
    int p = c;
    for (int r = c + 1; r < 4; ++r)
      if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
    std::swap(a[c], a[p]);
    std::swap(b[c], b[p]);
    if (a[c][c] == 0.0) throw NumericalError("singular fit");
    for (int r = c + 1; r < 4; ++r) {
      double f = a[r][c] / a[c][c];
      for (int k = c; k < 4; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  std::array<double, 4> x{};
  for (int r = 3; r >= 0; --r) {
    double s = b[r];
    for (int k = r + 1; k < 4; ++k) s -= a[r][k] * x[k];
    x[r] = s / a[r][r];
  }
  return x;
}

}  // namespace

Grid1D slit_grid(double w, double lambda, double L, std::size_t points_across) {
  require(w > 0 && lambda > 0 && L > 0 && std::isfinite(w * lambda * L), "slit parameters must be positive");
  require(points_across % 2 == 1 && points_across >= 17, "points across the slit must be odd and >= 17");
  const double dx = w / static_cast<double>(points_across);
  const double scale = lambda * L / w;
  const double spread = w + 2.0 * scale;
  const double extent = std::max({8.0 * spread, 1.05 * lambda * L / dx + spread, 4.0 * w});
  std::size_t n = 64;
  while (static_cast<double>(n) * dx < extent) {
    n *= 2;
    require(n <= (std::size_t{1} << 24), "slit grid would exceed 2^24 points");
  }
  const double half = 0.5 * static_cast<double>(n) * dx;
  return Grid1D(-half, half, n);
}

SlitSetup make_setup(double w, double lambda, double L, std::size_t n_trials, std::size_t bins,
                     std::size_t points_across) {
  SlitSetup s;
  s.w = w;
  s.lambda = lambda;
  s.L = L;
  s.beam_extent = w;
  s.n_trials = n_trials;
  s.bins = bins;
  s.grid = slit_grid(w, lambda, L, points_across);
  return s;
}

void validate_setup(const SlitSetup& s) {
  require(std::isfinite(s.w) && s.w > 0, "slit width must be positive");
  require(std::isfinite(s.lambda) && s.lambda > 0, "wavelength must be positive");
  require(std::isfinite(s.L) && s.L > 0, "screen distance must be positive");
  require(s.beam_extent >= s.w, "beam must be at least as wide as the slit");
  require(s.bins >= 2, "need at least 2 histogram bins");
  require(s.grid.x_min() < -0.5 * s.w && s.grid.x_max() > 0.5 * s.w, "slit does not fit on the grid");
}

double TransverseField::norm2() const {
  double s = 0.0;
  for (const auto& z : values) s += std::norm(z);
  return s * grid.dx();
}

std::vector<double> TransverseField::intensity() const {
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = std::norm(values[i]);
  return out;
}

ApertureField truncate_at_slit(const std::function<cplx(double)>& incident, const SlitSetup& setup) {
  validate_setup(setup);
  const Grid1D& g = setup.grid;
  const double lo = -0.5 * setup.w, hi = 0.5 * setup.w;
  ApertureField out{{g, std::vector<cplx>(g.size())}, setup.w, 0.0};
  double incoming = 0.0, passed = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const cplx v = incident(g.x(i));
    require(std::isfinite(v.real()) && std::isfinite(v.imag()), "incident profile must be finite");
    const double a = g.x(i) - 0.5 * g.dx(), b = g.x(i) + 0.5 * g.dx();
    double cover = std::clamp((std::min(b, hi) - std::max(a, lo)) / g.dx(), 0.0, 1.0);
    // Edges that fall on cell boundaries up to rounding count as exact.
    if (cover < 1e-9) cover = 0.0;
    if (cover > 1.0 - 1e-9) cover = 1.0;
    incoming += std::norm(v);
    passed += std::norm(v) * cover;
    out.field.values[i] = v * std::sqrt(cover);
  }
  if (!(passed > 0.0)) throw PreconditionError("beam misses slit");
  out.transmitted_fraction = passed / incoming;
  const double scale = 1.0 / std::sqrt(passed * g.dx());
  for (auto& z : out.field.values) z *= scale;
  return out;
}

TransverseField propagate_field(const TransverseField& field, double distance, double lambda) {
  require(std::isfinite(distance) && distance >= 0.0, "propagation distance must be >= 0");
  require(std::isfinite(lambda) && lambda > 0.0, "wavelength must be positive");
  const Grid1D& g = field.grid;
  require(field.values.size() == g.size(), "field does not match its grid");
  std::vector<cplx> spec(field.values);
  fft_forward(spec);
  const auto k = fft_wavenumbers(g.size(), g.dx());
  const double k_cut = 0.9 * kPi / g.dx();
  double total = 0.0, high = 0.0;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const double p = std::norm(spec[i]);
    total += p;
    if (std::abs(k[i]) > k_cut) high += p;
  }
  require(total > 0.0, "cannot propagate a zero field");
  if (high > 1e-2 * total) throw NumericalError("grid too coarse");
  if (distance == 0.0) return field;
  const double c = distance * lambda / (4.0 * kPi);
  const double inv_n = 1.0 / static_cast<double>(g.size());
  for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= std::polar(inv_n, -k[i] * k[i] * c);
  fft_backward(spec);
  return {g, std::move(spec)};
}

TransverseField propagate_free(const ApertureField& field, double distance, const SlitSetup& setup) {
  const Grid1D& g = field.field.grid;
  require(field.w / g.dx() >= 16.0, "grid must put at least 16 points across the slit");
  const double spread = field.w + 2.0 * setup.lambda * distance / field.w;
  require(g.extent() >= 8.0 * spread, "grid must span 8 diffraction spreads");
  return propagate_field(field.field, distance, setup.lambda);
}

LandingMap::LandingMap(const ApertureField& aperture, const TransverseField& screen)
    : src_grid_(aperture.field.grid), dst_grid_(screen.grid), half_width_(0.5 * aperture.w) {
  src_cum_ = cumulative(aperture.field.intensity());
  dst_cum_ = cumulative(screen.intensity());
}

double LandingMap::source_cdf(double b) const { return cdf_at(src_grid_, src_cum_, b); }
double LandingMap::screen_cdf(double x) const { return cdf_at(dst_grid_, dst_cum_, x); }
double LandingMap::screen_quantile(double u) const { return quantile_at(dst_grid_, dst_cum_, u); }

double LandingMap::operator()(double b) const {
  require(std::isfinite(b) && std::abs(b) <= half_width_ * (1.0 + 1e-12), "impact parameter outside the slit");
  return screen_quantile(source_cdf(b));
}

double transport_landing(const TransverseField& screen, const ApertureField& aperture, double b) {
  return LandingMap(aperture, screen)(b);
}

std::vector<double> fraunhofer_oracle(const SlitSetup& setup) {
  validate_setup(setup);
  const Grid1D& g = setup.grid;
  std::vector<double> out(g.size());
  const double c = kPi / setup.fringe_scale();
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) s += out[i] = sinc2(c * g.x(i));
  for (auto& v : out) v /= s * g.dx();
  return out;
}

double fraunhofer_mass(const SlitSetup& setup, double a, double b) {
  require(b >= a, "interval must be ordered");
  const double x0 = setup.fringe_scale();
  const double c = kPi / x0;
  // Simpson with at least 16 panels per fringe.
  std::size_t n = static_cast<std::size_t>(std::ceil(16.0 * (b - a) / x0));
  n = std::max<std::size_t>(32, n + (n % 2));
  const double h = (b - a) / static_cast<double>(n);
  double s = sinc2(c * a) + sinc2(c * b);
  for (std::size_t i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * sinc2(c * (a + static_cast<double>(i) * h));
  return s * h / 3.0;
}

double estimate_first_minimum(std::span<const double> landings, double x0) {
  require(x0 > 0.0, "fringe scale must be positive");
  Histogram h(0.7 * x0, 1.3 * x0, 30);
  for (double x : landings) h.add(std::abs(x));
  if (h.total_inside() < 30.0) return std::numeric_limits<double>::quiet_NaN();
  std::array<std::array<double, 4>, 4> a{};
  std::array<double, 4> rhs{};
  for (std::size_t i = 0; i < h.bins(); ++i) {
    const double e = (h.center(i) - x0) / x0;
    const double c = h.counts()[i];
    const double wgt = 1.0 / std::max(c, 1.0);
    const std::array<double, 4> basis{1.0, e, e * e, e * e * e};
    for (int r = 0; r < 4; ++r) {
      rhs[r] += wgt * basis[r] * c;
      for (int k = 0; k < 4; ++k) a[r][k] += wgt * basis[r] * basis[k];
    }
  }
  const auto p = solve4(a, rhs);
  auto value = [&](double e) { return p[0] + e * (p[1] + e * (p[2] + e * p[3])); };
  // Lowest stationary point or endpoint of the cubic on [-0.3, 0.3].
  std::vector<double> cand{-0.3, 0.3};
  const double qa = 3.0 * p[3], qb = 2.0 * p[2], qc = p[1];
  if (std::abs(qa) < 1e-14 * std::max(std::abs(qb), 1e-300)) {
    if (qb != 0.0) cand.push_back(-qc / qb);
  } else {
    const double disc = qb * qb - 4.0 * qa * qc;
    if (disc >= 0.0) {
      const double r = std::sqrt(disc);
      cand.push_back((-qb + r) / (2.0 * qa));
      cand.push_back((-qb - r) / (2.0 * qa));
    }
  }
  double best = cand.front();
  for (double e : cand)
    if (e >= -0.3 && e <= 0.3 && value(e) < value(best)) best = e;
  return x0 * (1.0 + best);
}

std::size_t count_fringe_maxima(const TransverseField& screen, double half_width, double rel_prominence) {
  const Grid1D& g = screen.grid;
  std::vector<double> v;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (std::abs(g.x(i)) < half_width) v.push_back(std::norm(screen.values[i]));
  if (v.size() < 3) return 0;
  const double top = *std::max_element(v.begin(), v.end());
  std::size_t count = 0;
  for (std::size_t i = 1; i + 1 < v.size(); ++i) {
    if (!(v[i] > v[i - 1] && v[i] >= v[i + 1])) continue;
    double left = v[i], right = v[i];
    for (std::size_t j = i; j-- > 0;) {
      if (v[j] > v[i]) break;
      left = std::min(left, v[j]);
    }
    for (std::size_t j = i + 1; j < v.size(); ++j) {
      if (v[j] > v[i]) break;
      right = std::min(right, v[j]);
    }
    if (v[i] - std::max(left, right) > rel_prominence * top) ++count;
  }
  return count;
}

DiffractionResult run_experiment(const SlitSetup& setup, std::uint64_t seed) {
  validate_setup(setup);
  require(setup.n_trials >= 10000, "diffraction run needs at least 10^4 trials");
  auto ap = truncate_at_slit([](double) { return cplx(1.0, 0.0); }, setup);
  auto screen = propagate_free(ap, setup.L, setup);
  LandingMap map(ap, screen);

  DiffractionResult r;
  r.setup = setup;
  r.landings.resize(setup.n_trials);
  parallel_for(block_count(setup.n_trials, kTrialBlock), [&](std::size_t blk) {
    auto range = block_range(blk, setup.n_trials, kTrialBlock);
    RngStream rng(seed, blk);
    for (std::size_t i = range.begin; i < range.end; ++i) r.landings[i] = map(setup.w * (rng.uniform() - 0.5));
  });

  const double R = setup.histogram_half_width();
  r.histogram = Histogram(-R, R, setup.bins);
  for (double x : r.landings) r.histogram.add(x);

  r.predicted.resize(setup.bins);
  r.fraunhofer.resize(setup.bins);
  double pf = 0.0, ff = 0.0;
  for (std::size_t i = 0; i < setup.bins; ++i) {
    const double a = r.histogram.edge(i), b = r.histogram.edge(i + 1);
    pf += r.predicted[i] = map.screen_cdf(b) - map.screen_cdf(a);
    ff += r.fraunhofer[i] = fraunhofer_mass(setup, a, b);
  }
  for (auto& v : r.predicted) v /= pf;
  for (auto& v : r.fraunhofer) v /= ff;
  r.vs_field = chi_square_gof(r.histogram.counts(), r.predicted);
  r.vs_fraunhofer = chi_square_gof(r.histogram.counts(), r.fraunhofer);
  r.first_minimum = estimate_first_minimum(r.landings, setup.fringe_scale());
  r.fringe_maxima = count_fringe_maxima(screen, 0.5 * setup.w);
  return r;
}

}  // namespace stochsol
