#include "stochsol/errors.hpp"
#include "stochsol/grid.hpp"
#include "stochsol/parallel.hpp"
#include "stochsol/rng.hpp"
#include "stochsol/stats.hpp"

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <numbers>
#include <numeric>

namespace stochsol {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

Grid1D::Grid1D(double x_min, double x_max, std::size_t n_points)
    : x_min_(x_min), x_max_(x_max), n_(n_points) {
  require(std::isfinite(x_min) && std::isfinite(x_max), "grid bounds must be finite");
  require(x_max > x_min, "grid requires x_max > x_min");
  require(is_power_of_two(n_points), "grid size must be a power of two");
  require(n_points >= 64, "grid size must be at least 64 points");
  dx_ = (x_max - x_min) / static_cast<double>(n_points);
}

namespace {

std::atomic<unsigned> g_workers{1};

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

void set_worker_threads(unsigned n) { g_workers.store(n == 0 ? 1 : n); }
unsigned worker_threads() { return g_workers.load(); }

std::array<std::uint32_t, 4> RngStream::philox(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
  constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(M0, ctr[0], hi0, lo0);
    mulhilo(M1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += W0;
    key[1] += W1;
  }
  return ctr;
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

void RngStream::refill() {
  std::array<std::uint32_t, 4> ctr = {static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
                                      static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
  std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)};
  buf_ = philox(ctr, key);
  ++block_;
  pos_ = 0;
}

RngStream::result_type RngStream::operator()() {
  if (pos_ == 4) refill();
  return buf_[pos_++];
}

double RngStream::uniform() {
  std::uint64_t hi = (*this)();
  std::uint64_t lo = (*this)();
  std::uint64_t bits = ((hi << 32) | lo) >> 11;
  return static_cast<double>(bits) * 0x1.0p-53;
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double r = std::sqrt(-2.0 * std::log(uniform_open0()));
  double a = 2.0 * std::numbers::pi * uniform();
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(splitmix64(seed) ^ (tag * 0xD1B54A32D192ED03ull + 0x8CB92BA72F3D8DD7ull));
}

double chi_square_survival(double statistic, double dof) {
  if (statistic <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * dof, 0.5 * statistic);
}

std::vector<std::size_t> merge_groups(std::span<const double> expected, double min_expected) {
  std::vector<std::size_t> starts;
  std::size_t open = 0;
  double e = 0.0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    e += expected[i];
    if (e >= min_expected) {
      starts.push_back(open);
      open = i + 1;
      e = 0.0;
    }
  }
  if (open < expected.size() && starts.empty()) starts.push_back(0);
  return starts;
}

TestReport chi_square_gof(std::span<const double> observed, std::span<const double> expected_prob,
                          double min_expected) {
  require(observed.size() == expected_prob.size(), "chi-square: observed and expected sizes differ");
  require(!observed.empty(), "chi-square: no bins");
  double n_obs = 0.0, p_sum = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    require(std::isfinite(observed[i]) && observed[i] >= 0.0, "chi-square: observed counts must be finite and >= 0");
    require(std::isfinite(expected_prob[i]) && expected_prob[i] >= 0.0,
            "chi-square: expected probabilities must be finite and >= 0");
    n_obs += observed[i];
    p_sum += expected_prob[i];
  }
  require(n_obs > 0.0, "chi-square: no observations");
  require(p_sum > 0.0, "chi-square: expected probabilities sum to zero");

  std::vector<double> expected(observed.size());
  for (std::size_t i = 0; i < observed.size(); ++i) expected[i] = expected_prob[i] / p_sum * n_obs;
  auto starts = merge_groups(expected, min_expected);
  std::vector<double> obs_groups(starts.size(), 0.0), exp_groups(starts.size(), 0.0);
  for (std::size_t g = 0; g < starts.size(); ++g) {
    std::size_t end = g + 1 < starts.size() ? starts[g + 1] : observed.size();
    for (std::size_t i = starts[g]; i < end; ++i) {
      obs_groups[g] += observed[i];
      exp_groups[g] += expected[i];
    }
  }
  if (exp_groups.size() < 2) throw PreconditionError("chi-square: fewer than 2 bins after merging");

  double stat = 0.0;
  for (std::size_t i = 0; i < exp_groups.size(); ++i) {
    double d = obs_groups[i] - exp_groups[i];
    stat += d * d / exp_groups[i];
  }
  TestReport r;
  r.statistic = stat;
  r.dof = exp_groups.size() - 1;
  r.p_value = chi_square_survival(stat, static_cast<double>(r.dof));
  r.n = static_cast<std::size_t>(std::llround(n_obs));
  return r;
}

double kolmogorov_survival(double lambda) {
  if (lambda <= 0.0) return 1.0;
  // The alternating series converges slowly for small lambda; use the theta
  // function form of the CDF there.
  if (lambda < 1.18) {
    const double pi2 = std::numbers::pi * std::numbers::pi;
    double cdf = 0.0;
    for (int k = 1; k <= 50; ++k) {
      double j = 2.0 * k - 1.0;
      cdf += std::exp(-j * j * pi2 / (8.0 * lambda * lambda));
    }
    cdf *= std::sqrt(2.0 * std::numbers::pi) / lambda;
    return std::clamp(1.0 - cdf, 0.0, 1.0);
  }
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-300) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

TestReport ks_test(std::span<const double> samples, const std::function<double(double)>& cdf) {
  require(samples.size() >= 8, "ks test requires at least 8 samples");
  std::vector<double> xs(samples.begin(), samples.end());
  for (double x : xs)
    if (!std::isfinite(x)) throw PreconditionError("ks test: non-finite sample");
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double f = cdf(xs[i]);
    d = std::max(d, static_cast<double>(i + 1) / n - f);
    d = std::max(d, f - static_cast<double>(i) / n);
  }
  TestReport r;
  r.statistic = d;
  r.n = xs.size();
  r.p_value = kolmogorov_survival(std::sqrt(n) * d);
  return r;
}

MeanEstimate mean_estimate(std::span<const double> xs) {
  MeanEstimate m;
  m.n = xs.size();
  if (xs.empty()) return m;
  m.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) m.std_error = std::sqrt(sample_variance(xs) / static_cast<double>(xs.size()));
  return m;
}

double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(xs.size() - 1);
}

double pearson_correlation(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && a.size() >= 2, "correlation needs two equal-length samples");
  const double n = static_cast<double>(a.size());
  double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double normal_cdf(double x, double mean, double sd) {
  return 0.5 * std::erfc(-(x - mean) / (sd * std::numbers::sqrt2));
}

Histogram::Histogram(double lo, double hi, std::size_t bins) : lo_(lo), hi_(hi), counts_(bins, 0.0) {
  require(bins >= 1, "histogram needs at least one bin");
  require(std::isfinite(lo) && std::isfinite(hi) && hi > lo, "histogram range must be finite with hi > lo");
}

void Histogram::add(double x) {
  if (!(x >= lo_ && x < hi_)) {
    ++outside_;
    return;
  }
  auto i = static_cast<std::size_t>((x - lo_) / width());
  if (i >= counts_.size()) i = counts_.size() - 1;
  counts_[i] += 1.0;
}

void Histogram::merge(const Histogram& other) {
  require(other.counts_.size() == counts_.size() && other.lo_ == lo_ && other.hi_ == hi_,
          "histogram merge: layouts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  outside_ += other.outside_;
}

double Histogram::total_inside() const { return std::accumulate(counts_.begin(), counts_.end(), 0.0); }

}  // namespace stochsol
