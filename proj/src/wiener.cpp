#include "stochsol/wiener.hpp"

#include "stochsol/errors.hpp"
#include "stochsol/parallel.hpp"
#include "stochsol/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace stochsol {

namespace {

constexpr std::size_t kPathBlock = 256;

// Draws the increments of one complex path into dz (size 2^p).
void complex_increments(const SGrid& g, std::uint64_t seed_x, std::uint64_t seed_y, std::size_t index,
                        std::vector<cplx>& dz) {
  RngStream rx(seed_x, index), ry(seed_y, index);
  const double sd = std::sqrt(g.ds());
  const double r2 = 1.0 / std::numbers::sqrt2;
  dz.resize(g.intervals());
  for (auto& v : dz) v = cplx(rx.normal() * sd, 0.0);
  for (auto& v : dz) v = cplx(v.real(), ry.normal() * sd) * r2;
}

double std_error_of(double sum, double sum_sq, std::size_t n) {
  double nn = static_cast<double>(n);
  double mean = sum / nn;
  double var = (sum_sq - nn * mean * mean) / (nn - 1.0);
  return std::sqrt(std::max(0.0, var) / nn);
}

}  // namespace

SGrid::SGrid(int p) : p_(p) { require(p >= 6 && p <= 26, "s grid exponent must be in [6, 26]"); }

std::size_t SGrid::index_of(double s) const {
  require(std::isfinite(s) && s >= -1e-9 && s <= 1.0 + 1e-9, "s must lie in [0, 1]");
  std::size_t j = nearest(s);
  if (std::abs(this->s(j) - s) > 1e-9) throw PreconditionError("s is not a grid point");
  return j;
}

std::size_t SGrid::nearest(double s) const {
  double j = std::round(std::clamp(s, 0.0, 1.0) * static_cast<double>(intervals()));
  return static_cast<std::size_t>(j);
}

SampledFunction SampledFunction::from_function(const SGrid& grid, const std::function<cplx(double)>& f) {
  SampledFunction out{grid, std::vector<cplx>(grid.size())};
  for (std::size_t j = 0; j < grid.size(); ++j) {
    out.values[j] = f(grid.s(j));
    require(std::isfinite(out.values[j].real()) && std::isfinite(out.values[j].imag()),
            "sampled function must be finite");
  }
  return out;
}

double SampledFunction::norm2() const {
  double s = 0.0;
  for (std::size_t j = 0; j + 1 < values.size(); ++j) s += std::norm(values[j]);
  return s * grid.ds();
}

BrownianPath brownian_path(const SGrid& grid, std::uint64_t seed, std::size_t index) {
  RngStream rng(seed, index);
  const double sd = std::sqrt(grid.ds());
  BrownianPath b{grid, std::vector<double>(grid.size(), 0.0)};
  for (std::size_t j = 1; j < grid.size(); ++j) b.values[j] = b.values[j - 1] + rng.normal() * sd;
  return b;
}

std::vector<BrownianPath> sample_brownian(int p, std::size_t n_paths, std::uint64_t seed) {
  require(n_paths >= 1, "need at least one path");
  SGrid g(p);
  std::vector<BrownianPath> out(n_paths, BrownianPath{g, {}});
  parallel_for(block_count(n_paths, kPathBlock), [&](std::size_t b) {
    auto r = block_range(b, n_paths, kPathBlock);
    for (std::size_t i = r.begin; i < r.end; ++i) out[i] = brownian_path(g, seed, i);
  });
  return out;
}

ComplexBrownianPath complex_path(const SGrid& grid, std::uint64_t seed, std::size_t index) {
  auto x = brownian_path(grid, derive_seed(seed, 1), index);
  auto y = brownian_path(grid, derive_seed(seed, 2), index);
  ComplexBrownianPath z{grid, std::vector<cplx>(grid.size())};
  for (std::size_t j = 0; j < grid.size(); ++j) z.values[j] = cplx(x.values[j], y.values[j]) / std::numbers::sqrt2;
  return z;
}

std::vector<ComplexBrownianPath> sample_complex(int p, std::size_t n_paths, std::uint64_t seed) {
  require(n_paths >= 1, "need at least one path");
  SGrid g(p);
  std::vector<ComplexBrownianPath> out(n_paths, ComplexBrownianPath{g, {}});
  parallel_for(block_count(n_paths, kPathBlock), [&](std::size_t b) {
    auto r = block_range(b, n_paths, kPathBlock);
    for (std::size_t i = r.begin; i < r.end; ++i) out[i] = complex_path(g, seed, i);
  });
  return out;
}

CovarianceEstimate covariance_estimate(std::span<const BrownianPath> paths, double s, double s_prime) {
  require(paths.size() >= 100, "covariance estimate needs at least 100 paths");
  const SGrid& g = paths.front().grid;
  std::size_t i = g.index_of(s), j = g.index_of(s_prime);
  double sum = 0.0, sum_sq = 0.0;
  for (const auto& path : paths) {
    require(path.grid == g, "paths must share one grid");
    double v = path.values[i] * path.values[j];
    sum += v;
    sum_sq += v * v;
  }
  return {sum / static_cast<double>(paths.size()), std_error_of(sum, sum_sq, paths.size()), paths.size()};
}

std::vector<CovarianceEstimate> covariance_surface(const SGrid& grid, std::span<const double> points,
                                                   std::size_t n_paths, std::uint64_t seed) {
  require(n_paths >= 100, "covariance estimate needs at least 100 paths");
  std::vector<std::size_t> idx;
  for (double s : points) idx.push_back(grid.index_of(s));
  const std::size_t np = idx.size(), cells = np * np;
  const std::size_t nb = block_count(n_paths, kPathBlock);
  std::vector<double> acc(nb * cells * 2, 0.0);
  parallel_for(nb, [&](std::size_t b) {
    auto r = block_range(b, n_paths, kPathBlock);
    double* a = acc.data() + b * cells * 2;
    for (std::size_t i = r.begin; i < r.end; ++i) {
      auto path = brownian_path(grid, seed, i);
      for (std::size_t u = 0; u < np; ++u)
        for (std::size_t v = 0; v < np; ++v) {
          double x = path.values[idx[u]] * path.values[idx[v]];
          a[(u * np + v) * 2] += x;
          a[(u * np + v) * 2 + 1] += x * x;
        }
    }
  });
  std::vector<CovarianceEstimate> out(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    double s = 0.0, ss = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
      s += acc[(b * cells + c) * 2];
      ss += acc[(b * cells + c) * 2 + 1];
    }
    out[c] = {s / static_cast<double>(n_paths), std_error_of(s, ss, n_paths), n_paths};
  }
  return out;
}

cplx stochastic_transform(const SampledFunction& psi, const ComplexBrownianPath& z) {
  require(psi.grid == z.grid && psi.values.size() == z.values.size(), "function and path grids differ");
  cplx s = 0.0;
  for (std::size_t j = 0; j + 1 < z.values.size(); ++j) s += psi.values[j] * (z.values[j + 1] - z.values[j]);
  return s;
}

std::vector<UnitarityReport> unitarity_check(std::span<const SampledFunction> psis, std::size_t n_paths,
                                             std::uint64_t seed) {
  require(n_paths >= 1000, "unitarity check needs at least 1000 paths");
  require(!psis.empty(), "unitarity check needs a function");
  const SGrid g = psis.front().grid;
  for (const auto& f : psis) require(f.grid == g && f.values.size() == g.size(), "functions must share one grid");
  const std::size_t nf = psis.size();
  const std::uint64_t sx = derive_seed(seed, 1), sy = derive_seed(seed, 2);
  const std::size_t nb = block_count(n_paths, kPathBlock);
  // Per block: sum and sum of squares of |T|^2 for each function.
  std::vector<double> acc(nb * nf * 2, 0.0);
  parallel_for(nb, [&](std::size_t b) {
    auto r = block_range(b, n_paths, kPathBlock);
    std::vector<cplx> dz;
    for (std::size_t i = r.begin; i < r.end; ++i) {
      complex_increments(g, sx, sy, i, dz);
      for (std::size_t f = 0; f < nf; ++f) {
        cplx t = 0.0;
        const auto& v = psis[f].values;
        for (std::size_t j = 0; j < dz.size(); ++j) t += v[j] * dz[j];
        double a = std::norm(t);
        acc[(b * nf + f) * 2] += a;
        acc[(b * nf + f) * 2 + 1] += a * a;
      }
    }
  });
  std::vector<UnitarityReport> out(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    double s = 0.0, ss = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
      s += acc[(b * nf + f) * 2];
      ss += acc[(b * nf + f) * 2 + 1];
    }
    out[f] = {psis[f].norm2(), s / static_cast<double>(n_paths), std_error_of(s, ss, n_paths), n_paths};
  }
  return out;
}

UnitarityReport unitarity_check(const SampledFunction& psi, std::size_t n_paths, std::uint64_t seed) {
  return unitarity_check(std::span<const SampledFunction>(&psi, 1), n_paths, seed).front();
}

CrossMoment cross_moment(const SampledFunction& psi1, const SampledFunction& psi2, std::size_t n_paths,
                         std::uint64_t seed) {
  require(n_paths >= 1000, "cross moment needs at least 1000 paths");
  require(psi1.grid == psi2.grid, "functions must share one grid");
  const SGrid g = psi1.grid;
  const std::uint64_t sx = derive_seed(seed, 1), sy = derive_seed(seed, 2);
  const std::size_t nb = block_count(n_paths, kPathBlock);
  std::vector<std::array<double, 4>> acc(nb, {0, 0, 0, 0});
  parallel_for(nb, [&](std::size_t b) {
    auto r = block_range(b, n_paths, kPathBlock);
    std::vector<cplx> dz;
    for (std::size_t i = r.begin; i < r.end; ++i) {
      complex_increments(g, sx, sy, i, dz);
      cplx t1 = 0.0, t2 = 0.0;
      for (std::size_t j = 0; j < dz.size(); ++j) {
        t1 += psi1.values[j] * dz[j];
        t2 += psi2.values[j] * dz[j];
      }
      cplx c = t1 * std::conj(t2);
      acc[b][0] += c.real();
      acc[b][1] += c.real() * c.real();
      acc[b][2] += c.imag();
      acc[b][3] += c.imag() * c.imag();
    }
  });
  std::array<double, 4> tot{0, 0, 0, 0};
  for (const auto& a : acc)
    for (int k = 0; k < 4; ++k) tot[k] += a[k];
  const double n = static_cast<double>(n_paths);
  CrossMoment m;
  m.value = cplx(tot[0] / n, tot[2] / n);
  m.std_error = std::max(std_error_of(tot[0], tot[1], n_paths), std_error_of(tot[2], tot[3], n_paths));
  m.n = n_paths;
  return m;
}

SampledFunction random_band_limited(const SGrid& grid, int band, std::uint64_t seed, std::size_t index) {
  require(band >= 0, "band must be non-negative");
  RngStream rng(seed, index);
  std::vector<cplx> c(2 * static_cast<std::size_t>(band) + 1);
  for (auto& v : c) v = cplx(rng.normal(), rng.normal()) / std::numbers::sqrt2;
  return SampledFunction::from_function(grid, [&](double s) {
    cplx v = 0.0;
    for (int m = -band; m <= band; ++m)
      v += c[static_cast<std::size_t>(m + band)] * std::polar(1.0, 2.0 * std::numbers::pi * m * s);
    return v;
  });
}

}  // namespace stochsol
