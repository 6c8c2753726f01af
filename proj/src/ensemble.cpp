#include "stochsol/ensemble.hpp"

#include "stochsol/errors.hpp"
#include "stochsol/fft.hpp"
#include "stochsol/parallel.hpp"
#include "stochsol/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace stochsol {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kOverlapThreshold = 1e-6;
constexpr int kMaxAttempts = 1000;

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Co-moving grid that holds the whole etalon support with room to spare, so
// spectral derivatives see a function that vanishes at the periodic seam.
Grid1D local_grid(const Etalon& e, double center) {
  const double half = 1.25 * e.support_radius();
  const auto& p = e.profile();
  double kmax = std::abs(p.carrier_k()) + SolitonProfile::kSpan * p.spectral_width();
  auto need = static_cast<std::size_t>(std::ceil(2.0 * half * kmax / std::numbers::pi * 2.0));
  return Grid1D(center - half, center + half, next_pow2(std::max<std::size_t>(128, need)));
}

std::vector<cplx> stamp_full(const Etalon& e, const Grid1D& g, double center, double phase) {
  std::vector<cplx> f(g.size(), cplx(0.0, 0.0));
  auto st = e.stamp(g, center, std::polar(1.0, phase));
  std::copy(st.values.begin(), st.values.end(), f.begin() + static_cast<std::ptrdiff_t>(st.first));
  return f;
}

Trial draw_trial(const CenterDistribution& dist, std::size_t n_particles, double min_sep, RngStream& rng) {
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Trial t;
    t.centers.resize(n_particles);
    t.phases.resize(n_particles);
    for (std::size_t k = 0; k < n_particles; ++k) {
      t.centers[k] = dist.quantile(rng.uniform());
      t.phases[k] = kTwoPi * rng.uniform();
    }
    bool disjoint = true;
    for (std::size_t a = 0; a < n_particles && disjoint; ++a)
      for (std::size_t b = a + 1; b < n_particles; ++b)
        if (std::abs(t.centers[a] - t.centers[b]) < min_sep) {
          disjoint = false;
          break;
        }
    if (disjoint) return t;
  }
  throw PreconditionError("density too concentrated for n particles");
}

}  // namespace

// ---------------------------------------------------------------------------

CenterDistribution::CenterDistribution(const Grid1D& grid, std::vector<double> density)
    : grid_(grid), density_(std::move(density)) {
  require(density_.size() == grid.size(), "center density must match its grid");
  double total = 0.0;
  for (double d : density_) {
    require(std::isfinite(d) && d >= 0.0, "center density must be finite and nonnegative");
    total += d;
  }
  require(total > 0.0, "center density integrates to zero");
  const double dx = grid.dx();
  for (double& d : density_) d /= total * dx;
  cum_.assign(density_.size() + 1, 0.0);
  for (std::size_t i = 0; i < density_.size(); ++i) cum_[i + 1] = cum_[i] + density_[i] * dx;
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < density_.size(); ++i) {
    double c = grid.x(i) + 0.5 * dx, w = density_[i] * dx;
    m1 += w * c;
    m2 += w * (c * c + dx * dx / 12.0);
    max_ = std::max(max_, density_[i]);
  }
  mean_ = m1;
  variance_ = m2 - m1 * m1;
}

double CenterDistribution::density(double x) const {
  if (!(x >= grid_.x_min() && x < grid_.x_max())) return 0.0;
  auto i = std::min(static_cast<std::size_t>((x - grid_.x_min()) / grid_.dx()), density_.size() - 1);
  return density_[i];
}

double CenterDistribution::cdf(double x) const {
  if (x <= grid_.x_min()) return 0.0;
  if (x >= grid_.x_max()) return 1.0;
  auto i = std::min(static_cast<std::size_t>((x - grid_.x_min()) / grid_.dx()), density_.size() - 1);
  return std::min(1.0, cum_[i] + density_[i] * (x - grid_.x(i)));
}

double CenterDistribution::quantile(double u) const {
  require(u >= 0.0 && u <= 1.0, "quantile argument must lie in [0, 1]");
  const double target = u * cum_.back();
  auto it = std::upper_bound(cum_.begin(), cum_.end(), target);
  std::size_t i = it == cum_.begin() ? 0 : static_cast<std::size_t>(it - cum_.begin()) - 1;
  i = std::min(i, density_.size() - 1);
  while (density_[i] == 0.0 && i + 1 < density_.size()) ++i;
  double x = grid_.x(i) + (target - cum_[i]) / density_[i];
  return std::clamp(x, grid_.x(i), grid_.x(i) + grid_.dx());
}

CenterDistribution gaussian_distribution(const Grid1D& grid, double mean, double sd) {
  require(sd > 0.0, "gaussian sd must be positive");
  std::vector<double> d(grid.size());
  for (std::size_t i = 0; i < d.size(); ++i)
    d[i] = normal_cdf(grid.x(i) + grid.dx(), mean, sd) - normal_cdf(grid.x(i), mean, sd);
  return CenterDistribution(grid, std::move(d));
}

CenterDistribution double_gaussian_distribution(const Grid1D& grid, double separation_half, double sd) {
  require(sd > 0.0, "gaussian sd must be positive");
  std::vector<double> d(grid.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    double a = grid.x(i), b = a + grid.dx();
    d[i] = normal_cdf(b, -separation_half, sd) - normal_cdf(a, -separation_half, sd) +
           normal_cdf(b, separation_half, sd) - normal_cdf(a, separation_half, sd);
  }
  return CenterDistribution(grid, std::move(d));
}

CenterDistribution uniform_distribution(const Grid1D& grid, double lo, double hi) {
  require(hi > lo, "uniform density needs hi > lo");
  std::vector<double> d(grid.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    double a = std::max(lo, grid.x(i)), b = std::min(hi, grid.x(i) + grid.dx());
    d[i] = std::max(0.0, b - a);
  }
  return CenterDistribution(grid, std::move(d));
}

// ---------------------------------------------------------------------------

Ensemble sample_trials(const CenterDistribution& dist, const SolitonProfile& profile, std::size_t n_particles,
                       std::size_t n_trials, std::uint64_t seed) {
  return sample_trials(dist, Etalon(profile), n_particles, n_trials, seed);
}

Ensemble sample_trials(const CenterDistribution& dist, const Etalon& etalon, std::size_t n_particles,
                       std::size_t n_trials, std::uint64_t seed) {
  require(n_particles >= 1, "sample_trials: need at least one particle");
  require(n_trials >= 1, "sample_trials: need at least one trial");
  const double min_sep = n_particles > 1 ? etalon.min_separation(kOverlapThreshold) : 0.0;
  Ensemble e{etalon, n_particles, std::vector<Trial>(n_trials)};
  constexpr std::size_t kChunk = 256;
  parallel_for(block_count(n_trials, kChunk), [&](std::size_t b) {
    auto r = block_range(b, n_trials, kChunk);
    for (std::size_t j = r.begin; j < r.end; ++j) {
      RngStream rng(seed, j);
      e.trials[j] = draw_trial(dist, n_particles, min_sep, rng);
    }
  });
  return e;
}

FieldPair particle_pair(const Ensemble& ensemble, std::size_t trial, std::size_t particle, const Grid1D& grid) {
  require(trial < ensemble.trials.size(), "particle_pair: trial index out of range");
  const Trial& t = ensemble.trials[trial];
  require(particle < t.centers.size(), "particle_pair: particle index out of range");
  const auto& e = ensemble.etalon;
  const auto& prof = e.profile();
  const cplx w = std::polar(e.amplitude_scale(), t.phases[particle]);
  FieldPair fp;
  fp.nu = e.nu();
  fp.dx = grid.dx();
  fp.phi.resize(grid.size());
  fp.pi.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double y = grid.x(i) - t.centers[particle];
    fp.phi[i] = w * prof.field(0.0, y);
    fp.pi[i] = w * prof.momentum(0.0, y);
  }
  return fp;
}

// ---------------------------------------------------------------------------

StochasticWaveFunction::StochasticWaveFunction(const Grid1D& grid, std::size_t n_particles, std::size_t n_trials)
    : grid_(grid), n_particles_(n_particles), n_trials_(n_trials) {
  require(n_particles >= 1 && n_particles <= 3, "configuration grids support 1 to 3 particles");
  std::size_t total = 1;
  for (std::size_t k = 0; k < n_particles; ++k) {
    require(total <= (std::size_t{1} << 28) / grid.size(), "configuration grid too large");
    total *= grid.size();
  }
  values_.assign(total, cplx(0.0, 0.0));
}

std::size_t StochasticWaveFunction::stride(std::size_t axis) const {
  std::size_t s = 1;
  for (std::size_t k = axis + 1; k < n_particles_; ++k) s *= grid_.size();
  return s;
}

double StochasticWaveFunction::norm2() const {
  double s = 0.0;
  for (const auto& z : values_) s += std::norm(z);
  return s * std::pow(grid_.dx(), static_cast<double>(n_particles_));
}

StochasticWaveFunction build_psi_n(const Ensemble& ensemble, const Grid1D& grid) {
  const auto& trials = ensemble.trials;
  if (trials.empty()) throw PreconditionError("build_psi_n: empty trial list");
  const std::size_t n = ensemble.n_particles;
  for (const auto& t : trials)
    require(t.centers.size() == n && t.phases.size() == n, "build_psi_n: trials disagree on particle count");
  StochasticWaveFunction psi(grid, n, trials.size());

  // Per-particle stamps are independent; compute them first.
  std::vector<std::vector<Etalon::Stamp>> stamps(trials.size());
  constexpr std::size_t kTrialChunk = 64;
  parallel_for(block_count(trials.size(), kTrialChunk), [&](std::size_t b) {
    auto r = block_range(b, trials.size(), kTrialChunk);
    for (std::size_t j = r.begin; j < r.end; ++j) {
      stamps[j].resize(n);
      for (std::size_t k = 0; k < n; ++k)
        stamps[j][k] = ensemble.etalon.stamp(grid, trials[j].centers[k], std::polar(1.0, trials[j].phases[k]));
    }
  });

  // Each block owns a range of the slowest axis and adds trials in index
  // order, so every grid value has the same summation order for any thread count.
  const std::size_t ng = grid.size();
  const std::size_t rows_per_block = n == 1 ? 4096 : 1;
  auto& out = psi.values();
  parallel_for(block_count(ng, rows_per_block), [&](std::size_t b) {
    auto rows = block_range(b, ng, rows_per_block);
    for (std::size_t j = 0; j < trials.size(); ++j) {
      const auto& s0 = stamps[j][0];
      if (s0.values.empty()) continue;
      std::size_t lo = std::max(rows.begin, s0.first);
      std::size_t hi = std::min(rows.end, s0.first + s0.values.size());
      for (std::size_t i0 = lo; i0 < hi; ++i0) {
        cplx v0 = s0.values[i0 - s0.first];
        if (n == 1) {
          out[i0] += v0;
          continue;
        }
        const auto& s1 = stamps[j][1];
        for (std::size_t q1 = 0; q1 < s1.values.size(); ++q1) {
          std::size_t i1 = s1.first + q1;
          cplx v01 = v0 * s1.values[q1];
          if (n == 2) {
            out[i0 * ng + i1] += v01;
            continue;
          }
          const auto& s2 = stamps[j][2];
          for (std::size_t q2 = 0; q2 < s2.values.size(); ++q2)
            out[(i0 * ng + i1) * ng + s2.first + q2] += v01 * s2.values[q2];
        }
      }
    }
  });
  const double scale = 1.0 / std::sqrt(static_cast<double>(trials.size()));
  for (auto& z : out) z *= scale;
  return psi;
}

// ---------------------------------------------------------------------------

namespace {

std::size_t cell_points(const Grid1D& g, const CoarseGrainSpec& spec) {
  require(std::isfinite(spec.cell_size) && spec.cell_size > 0.0, "cell size must be positive");
  require(std::isfinite(spec.v0) && spec.v0 > 0.0, "proper volume v0 must be positive");
  require(spec.cell_size >= 10.0 * spec.v0, "cell size must be at least 10 v0");
  auto pts = static_cast<std::size_t>(std::llround(spec.cell_size / g.dx()));
  require(pts >= 8, "coarse cell must contain at least 8 grid points");
  return pts;
}

}  // namespace

double cell_mass(const StochasticWaveFunction& psi, const CoarseGrainSpec& spec, std::span<const std::size_t> cells) {
  const Grid1D& g = psi.grid();
  const std::size_t pts = cell_points(g, spec);
  const std::size_t n = psi.n_particles();
  require(cells.size() == n, "cell_mass: one cell index per particle");
  for (auto c : cells) require((c + 1) * pts <= g.size(), "cell_mass: cell index out of range");
  const auto& v = psi.values();
  const std::size_t ng = g.size();
  double s = 0.0;
  for (std::size_t a = cells[0] * pts; a < (cells[0] + 1) * pts; ++a) {
    if (n == 1) {
      s += std::norm(v[a]);
      continue;
    }
    for (std::size_t b = cells[1] * pts; b < (cells[1] + 1) * pts; ++b) {
      if (n == 2) {
        s += std::norm(v[a * ng + b]);
        continue;
      }
      for (std::size_t c = cells[2] * pts; c < (cells[2] + 1) * pts; ++c) s += std::norm(v[(a * ng + b) * ng + c]);
    }
  }
  return s * std::pow(g.dx(), static_cast<double>(n));
}

CellDensity coarse_density(const StochasticWaveFunction& psi, const CoarseGrainSpec& spec) {
  const Grid1D& g = psi.grid();
  CellDensity out;
  out.points_per_cell = cell_points(g, spec);
  out.cell_size = static_cast<double>(out.points_per_cell) * g.dx();
  const std::size_t n_cells = g.size() / out.points_per_cell;
  const std::size_t n = psi.n_particles();
  out.lower.resize(n_cells);
  out.density.resize(n_cells);
  const double vol = std::pow(out.cell_size, static_cast<double>(n));
  constexpr std::size_t kChunk = 1024;
  parallel_for(block_count(n_cells, kChunk), [&](std::size_t b) {
    auto r = block_range(b, n_cells, kChunk);
    std::vector<std::size_t> idx(n);
    for (std::size_t c = r.begin; c < r.end; ++c) {
      std::fill(idx.begin(), idx.end(), c);
      out.lower[c] = g.x(c * out.points_per_cell);
      out.density[c] = cell_mass(psi, spec, idx) / vol;
    }
  });
  return out;
}

BornComparison born_comparison(const CellDensity& cells, const CenterDistribution& dist, std::size_t n_trials) {
  require(!cells.density.empty(), "born_comparison: no cells");
  const std::size_t nc = cells.density.size();
  const double n = static_cast<double>(n_trials);
  std::vector<double> observed(nc), prob(nc);
  double obs_total = 0.0, p_total = 0.0;
  for (std::size_t c = 0; c < nc; ++c) {
    observed[c] = n * cells.density[c] * cells.cell_size;
    prob[c] = dist.mass(cells.lower[c], cells.lower[c] + cells.cell_size);
    obs_total += observed[c];
    p_total += prob[c];
  }
  require(p_total > 0.0, "born_comparison: target density has no mass on the cells");
  std::vector<double> expected(nc);
  for (std::size_t c = 0; c < nc; ++c) expected[c] = prob[c] / p_total * obs_total;
  auto starts = merge_groups(expected, 5.0);
  require(starts.size() >= 2, "born_comparison: fewer than 2 bins after merging");

  BornComparison out;
  std::vector<double> og(starts.size(), 0.0), pg(starts.size(), 0.0);
  for (std::size_t gi = 0; gi < starts.size(); ++gi) {
    std::size_t end = gi + 1 < starts.size() ? starts[gi + 1] : nc;
    double e = 0.0;
    for (std::size_t c = starts[gi]; c < end; ++c) {
      og[gi] += observed[c];
      pg[gi] += prob[c];
      e += expected[c];
    }
    double lo = cells.lower[starts[gi]], hi = cells.lower[end - 1] + cells.cell_size;
    double width = hi - lo;
    out.rows.push_back({0.5 * (lo + hi), og[gi] / (n * width), pg[gi] / width, (og[gi] - e) * (og[gi] - e) / e});
  }
  out.report = chi_square_gof(og, pg);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<cplx> ObservableGenerator::apply(const Grid1D& grid, std::span<const cplx> f) const {
  require(f.size() == grid.size(), "observable: field does not match grid");
  std::vector<cplx> out(f.begin(), f.end());
  if (kind_ == Kind::position) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= grid.x(i);
    return out;
  }
  auto k = fft_wavenumbers(grid.size(), grid.dx());
  fft_forward(out);
  const double inv_n = 1.0 / static_cast<double>(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= k[i] * inv_n;
  fft_backward(out);
  return out;
}

ExpectationEstimate expectation_field(const Ensemble& ensemble, const ObservableGenerator& generator) {
  const auto& trials = ensemble.trials;
  require(!trials.empty(), "expectation_field: empty trial list");
  std::vector<double> a(trials.size());
  std::vector<double> imag(trials.size());
  constexpr std::size_t kChunk = 64;
  parallel_for(block_count(trials.size(), kChunk), [&](std::size_t b) {
    auto r = block_range(b, trials.size(), kChunk);
    for (std::size_t j = r.begin; j < r.end; ++j) {
      cplx acc = 0.0;
      double worst = 0.0;
      for (std::size_t k = 0; k < trials[j].centers.size(); ++k) {
        Grid1D g = local_grid(ensemble.etalon, trials[j].centers[k]);
        auto f = stamp_full(ensemble.etalon, g, trials[j].centers[k], trials[j].phases[k]);
        auto mf = generator.apply(g, f);
        cplx ip = 0.0;
        double nf = 0.0, nm = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) {
          ip += std::conj(f[i]) * mf[i];
          nf += std::norm(f[i]);
          nm += std::norm(mf[i]);
        }
        ip *= g.dx();
        double scale = std::sqrt(nf * nm) * g.dx();
        if (scale > 0.0) worst = std::max(worst, std::abs(ip.imag()) / scale);
        acc += ip;
      }
      a[j] = acc.real();
      imag[j] = worst;
    }
  });
  auto m = mean_estimate(a);
  ExpectationEstimate out;
  out.value = m.mean;
  out.std_error = m.std_error;
  out.n = m.n;
  out.max_imag = *std::max_element(imag.begin(), imag.end());
  return out;
}

ExpectationEstimate expectation_operator(const StochasticWaveFunction& psi, const ObservableGenerator& generator) {
  const Grid1D& g = psi.grid();
  const auto& v = psi.values();
  const std::size_t n = psi.n_particles(), ng = g.size();
  const std::size_t n_lines = v.size() / ng;
  double den = 0.0;
  for (const auto& z : v) den += std::norm(z);
  if (!(den > 0.0)) throw PreconditionError("expectation_operator: zero wave function");

  cplx num = 0.0;
  double mnorm = 0.0;
  std::vector<cplx> applied(v.size());
  for (std::size_t axis = 0; axis < n; ++axis) {
    const std::size_t stride = psi.stride(axis);
    // Lines along `axis`: fix every other index. Line l starts at
    // (l / stride) * stride * ng + (l % stride).
    constexpr std::size_t kChunk = 64;
    parallel_for(block_count(n_lines, kChunk), [&](std::size_t b) {
      auto r = block_range(b, n_lines, kChunk);
      std::vector<cplx> line(ng);
      for (std::size_t l = r.begin; l < r.end; ++l) {
        std::size_t base = (l / stride) * stride * ng + (l % stride);
        for (std::size_t i = 0; i < ng; ++i) line[i] = v[base + i * stride];
        auto out = generator.apply(g, line);
        for (std::size_t i = 0; i < ng; ++i) applied[base + i * stride] = out[i];
      }
    });
    // Fixed-block partial sums keep the reduction order independent of threads.
    constexpr std::size_t kSumChunk = 1 << 16;
    const std::size_t nb = block_count(v.size(), kSumChunk);
    std::vector<cplx> part(nb);
    std::vector<double> part_m(nb);
    parallel_for(nb, [&](std::size_t b) {
      auto r = block_range(b, v.size(), kSumChunk);
      cplx s = 0.0;
      double sm = 0.0;
      for (std::size_t i = r.begin; i < r.end; ++i) {
        s += std::conj(v[i]) * applied[i];
        sm += std::norm(applied[i]);
      }
      part[b] = s;
      part_m[b] = sm;
    });
    for (std::size_t b = 0; b < nb; ++b) {
      num += part[b];
      mnorm += part_m[b];
    }
  }
  ExpectationEstimate out;
  out.value = num.real() / den;
  out.max_imag = std::abs(num.imag()) / std::sqrt(den * mnorm);
  out.n = psi.n_trials();
  return out;
}

// ---------------------------------------------------------------------------

CltSamples clt_replicas(const CenterDistribution& dist, const SolitonProfile& profile, std::size_t n_trials,
                        std::size_t replicas, std::span<const double> probes, std::uint64_t seed) {
  require(replicas >= 500, "clt_replicas: need at least 500 replicas");
  require(n_trials >= 1, "clt_replicas: need at least one trial");
  require(!probes.empty(), "clt_replicas: no probe points");
  for (double x : probes)
    require(dist.density(x) > 0.01 * dist.max_density(), "clt_replicas: probe point outside the bulk of the density");
  Etalon etalon(profile);
  CltSamples out;
  out.probes.assign(probes.begin(), probes.end());
  out.values.assign(probes.size(), std::vector<cplx>(replicas));
  const double scale = 1.0 / std::sqrt(static_cast<double>(n_trials));
  const double radius = etalon.support_radius();
  constexpr std::size_t kChunk = 8;
  parallel_for(block_count(replicas, kChunk), [&](std::size_t b) {
    auto r = block_range(b, replicas, kChunk);
    for (std::size_t rep = r.begin; rep < r.end; ++rep) {
      const std::uint64_t rep_seed = derive_seed(seed, rep);
      std::vector<cplx> acc(probes.size(), cplx(0.0, 0.0));
      for (std::size_t j = 0; j < n_trials; ++j) {
        RngStream rng(rep_seed, j);
        Trial t = draw_trial(dist, 1, 0.0, rng);
        cplx w = std::polar(1.0, t.phases[0]);
        for (std::size_t p = 0; p < probes.size(); ++p) {
          double y = probes[p] - t.centers[0];
          if (std::abs(y) <= radius) acc[p] += w * etalon(y);
        }
      }
      for (std::size_t p = 0; p < probes.size(); ++p) out.values[p][rep] = acc[p] * scale;
    }
  });
  return out;
}

double smeared_density(const CenterDistribution& dist, const Etalon& etalon, double x) {
  const double r = etalon.support_radius();
  const double h = std::min(dist.grid().dx(), etalon.position_spread()) / 8.0;
  auto n = static_cast<std::size_t>(std::ceil(2.0 * r / h));
  double s = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    double c = x - r + h * static_cast<double>(i);
    s += dist.density(c) * std::norm(etalon(x - c));
  }
  return s * h;
}

}  // namespace stochsol
