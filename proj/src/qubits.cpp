#include "stochsol/qubits.hpp"

#include "stochsol/errors.hpp"
#include "stochsol/parallel.hpp"
#include "stochsol/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace stochsol {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::size_t kSampleBlock = 4096;

double wrap_2pi(double x) {
  double r = std::fmod(x, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  if (r >= kTwoPi) r = 0.0;
  return r;
}

CorrelationEstimate finish(long long sum, std::size_t n) {
  CorrelationEstimate e;
  e.n = n;
  e.estimate = static_cast<double>(sum) / static_cast<double>(n);
  double var = (1.0 - e.estimate * e.estimate) * static_cast<double>(n) / static_cast<double>(n - 1);
  e.std_error = std::sqrt(std::max(0.0, var) / static_cast<double>(n));
  return e;
}

double channel_distance(const DichotomicConfig& c) {
  require(c.thetas.size() == 2, "phase correlation needs exactly two channels");
  require(c.n_samples >= 1000, "phase correlation needs at least 1000 samples");
  return wrapped_distance(c.thetas[0] - c.thetas[1]);
}

}  // namespace

RandomPhase::RandomPhase(double phi) : phi_(wrap_2pi(phi)) {
  require(std::isfinite(phi), "random phase must be finite");
}

Matcher::Matcher(const Etalon& etalon, const Grid1D& grid) : grid_(grid), k_(fft_wavenumbers(grid.size(), grid.dx())) {
  etalon_spectrum_.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) etalon_spectrum_[i] = etalon(grid.x(i));
  double e = 0.0;
  for (const auto& z : etalon_spectrum_) e += std::norm(z);
  require(e > 0.0, "matcher: etalon vanishes on the grid");
  fft_forward(etalon_spectrum_);
  for (auto& z : etalon_spectrum_) z = std::conj(z);
}

cplx Matcher::overlap(std::span<const cplx> trial_field, double d) const {
  require(trial_field.size() == grid_.size(), "matcher: trial field does not match grid");
  std::vector<cplx> f(trial_field.begin(), trial_field.end());
  fft_forward(f);
  cplx s = 0.0;
  for (std::size_t m = 0; m < f.size(); ++m) s += etalon_spectrum_[m] * f[m] * std::polar(1.0, k_[m] * d);
  return s * (grid_.dx() / static_cast<double>(f.size()));
}

MatchResult Matcher::match(std::span<const cplx> trial_field) const {
  const std::size_t n = grid_.size();
  require(trial_field.size() == n, "matcher: trial field does not match grid");
  std::vector<cplx> prod(trial_field.begin(), trial_field.end());
  double energy = 0.0;
  for (const auto& z : prod) energy += std::norm(z);
  require(energy > 0.0, "matcher: trial field is zero");
  fft_forward(prod);
  for (std::size_t m = 0; m < n; ++m) prod[m] *= etalon_spectrum_[m];

  // Grid search: correlation at every shift m dx in one inverse transform.
  std::vector<cplx> corr(prod);
  fft_backward(corr);
  const double norm = grid_.dx() / static_cast<double>(n);
  std::size_t best = 0;
  double hi = 0.0, lo = INFINITY;
  for (std::size_t m = 0; m < n; ++m) {
    double a = std::abs(corr[m]) * norm;
    if (a > hi) {
      hi = a;
      best = m;
    }
    lo = std::min(lo, a);
  }
  if (!(hi - lo > 1e-12 * std::max(hi, 1e-300)) || hi == 0.0) throw NumericalError("degenerate matching");

  // Keep only the modes that carry the product; the rest are rounding noise.
  double pmax = 0.0;
  for (const auto& z : prod) pmax = std::max(pmax, std::abs(z));
  std::vector<std::pair<double, cplx>> modes;
  for (std::size_t m = 0; m < n; ++m)
    if (std::abs(prod[m]) > 1e-18 * pmax) modes.emplace_back(k_[m], prod[m] * norm);
  auto at = [&](double d) {
    cplx s = 0.0;
    for (const auto& [k, p] : modes) s += p * std::polar(1.0, k * d);
    return s;
  };

  double d = (best <= n / 2 ? static_cast<double>(best) : static_cast<double>(best) - static_cast<double>(n)) *
             grid_.dx();
  // Successive parabolic refinement of |C|^2 with a shrinking stencil.
  double h = grid_.dx();
  for (int it = 0; it < 40 && h > 1e-5 * grid_.dx(); ++it) {
    double a = std::norm(at(d - h)), b = std::norm(at(d)), c = std::norm(at(d + h));
    double curv = a - 2.0 * b + c;
    double step = 0.0;
    if (curv < 0.0) step = std::clamp(0.5 * h * (a - c) / curv, -h, h);
    else step = (c > a ? h : (a > c ? -h : 0.0));
    d += step;
    h = std::max(std::abs(step), 0.25 * h) * 0.5;
  }
  MatchResult r;
  r.d_hat = d;
  r.overlap = at(d);
  r.phase = std::arg(r.overlap);
  return r;
}

MatchResult match_center(std::span<const cplx> trial_field, const Etalon& etalon, const Grid1D& grid) {
  return Matcher(etalon, grid).match(trial_field);
}

RandomPhase trial_phase(const Trial& trial, const Matcher& matcher, const Etalon& etalon) {
  const Grid1D& g = matcher.grid();
  double total = 0.0;
  std::vector<cplx> field(g.size());
  for (std::size_t k = 0; k < trial.centers.size(); ++k) {
    std::fill(field.begin(), field.end(), cplx(0.0, 0.0));
    auto st = etalon.stamp(g, trial.centers[k], std::polar(1.0, trial.phases[k]));
    std::copy(st.values.begin(), st.values.end(), field.begin() + static_cast<std::ptrdiff_t>(st.first));
    total += matcher.match(field).phase;
  }
  return RandomPhase(total);
}

int dichotomic_sample(RandomPhase phi, double theta) { return std::cos(phi.value() + theta) >= 0.0 ? 1 : -1; }

double wrapped_distance(double delta_theta) {
  require(std::isfinite(delta_theta), "angle must be finite");
  return std::abs(std::remainder(delta_theta, kTwoPi));
}

CorrelationEstimate phase_correlation(const DichotomicConfig& config) {
  const double d = channel_distance(config);
  const std::size_t n = config.n_samples;
  const std::size_t nb = block_count(n, kSampleBlock);
  std::vector<long long> sums(nb, 0);
  parallel_for(nb, [&](std::size_t b) {
    auto r = block_range(b, n, kSampleBlock);
    RngStream rng(config.seed, b);
    long long s = 0;
    for (std::size_t i = r.begin; i < r.end; ++i) {
      RandomPhase phi(kTwoPi * rng.uniform());
      s += dichotomic_sample(phi, 0.0) * dichotomic_sample(phi, d);
    }
    sums[b] = s;
  });
  long long total = 0;
  for (auto s : sums) total += s;
  return finish(total, n);
}

CorrelationEstimate phase_correlation(const DichotomicConfig& config, std::span<const RandomPhase> phases) {
  const double d = channel_distance(config);
  require(phases.size() >= config.n_samples, "phase correlation: fewer phases than requested samples");
  long long total = 0;
  for (std::size_t i = 0; i < config.n_samples; ++i)
    total += dichotomic_sample(phases[i], 0.0) * dichotomic_sample(phases[i], d);
  return finish(total, config.n_samples);
}

double singlet_correlation(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  auto norm = [](const std::array<double, 3>& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); };
  require(std::abs(norm(a) - 1.0) <= 1e-10 && std::abs(norm(b) - 1.0) <= 1e-10,
          "singlet correlation needs unit vectors");
  return -(a[0] * b[0] + a[1] * b[1] + a[2] * b[2]);
}

namespace {

CorrelationRow row(double dt, const CorrelationEstimate& e) {
  return {dt, e.estimate, e.std_error, 1.0 - 2.0 * wrapped_distance(dt) / kPi, -std::cos(dt)};
}

}  // namespace

std::vector<CorrelationRow> correlation_curve(std::span<const double> delta_thetas, std::size_t n_samples,
                                              std::uint64_t seed) {
  std::vector<CorrelationRow> out;
  for (double dt : delta_thetas) out.push_back(row(dt, phase_correlation({{0.0, dt}, n_samples, seed})));
  return out;
}

std::vector<CorrelationRow> correlation_curve(std::span<const double> delta_thetas,
                                              std::span<const RandomPhase> phases) {
  std::vector<CorrelationRow> out;
  for (double dt : delta_thetas) out.push_back(row(dt, phase_correlation({{0.0, dt}, phases.size(), 0}, phases)));
  return out;
}

std::vector<RandomPhase> solitonic_phases(const CenterDistribution& dist, const Etalon& etalon,
                                          std::size_t n_particles, std::size_t n_trials, const Grid1D& grid,
                                          std::uint64_t seed) {
  auto ens = sample_trials(dist, etalon, n_particles, n_trials, seed);
  Matcher matcher(etalon, grid);
  std::vector<RandomPhase> out(n_trials, RandomPhase(0.0));
  constexpr std::size_t kChunk = 64;
  parallel_for(block_count(n_trials, kChunk), [&](std::size_t b) {
    auto r = block_range(b, n_trials, kChunk);
    for (std::size_t j = r.begin; j < r.end; ++j) out[j] = trial_phase(ens.trials[j], matcher, etalon);
  });
  return out;
}

}  // namespace stochsol
