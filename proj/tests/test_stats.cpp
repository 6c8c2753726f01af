#include <doctest.h>

#include "stochsol/errors.hpp"
#include "stochsol/grid.hpp"
#include "stochsol/parallel.hpp"
#include "stochsol/rng.hpp"
#include "stochsol/stats.hpp"

#include <cmath>
#include <vector>

using namespace stochsol;

TEST_CASE("philox known-answer vectors") {
  auto a = RngStream::philox({0, 0, 0, 0}, {0, 0});
  CHECK(a[0] == 0x6627e8d5u);
  CHECK(a[1] == 0xe169c58du);
  CHECK(a[2] == 0xbc57ac4cu);
  CHECK(a[3] == 0x9b00dbd8u);
  auto b = RngStream::philox({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  CHECK(b[0] == 0x408f276du);
  CHECK(b[1] == 0x41c83b0eu);
  CHECK(b[2] == 0xa20bc7c6u);
  CHECK(b[3] == 0x6d5451fdu);
  auto c = RngStream::philox({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  CHECK(c[0] == 0xd16cfe09u);
  CHECK(c[1] == 0x94fdccebu);
  CHECK(c[2] == 0x5001e420u);
  CHECK(c[3] == 0x24126ea1u);
}

TEST_CASE("rng streams are reproducible and distinct") {
  RngStream a(42, 7), b(42, 7), c(42, 8), d(43, 7);
  bool differ_stream = false, differ_seed = false;
  for (int i = 0; i < 1000; ++i) {
    double x = a.uniform();
    CHECK(x == b.uniform());
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    differ_stream |= (x != c.uniform());
    differ_seed |= (x != d.uniform());
  }
  CHECK(differ_stream);
  CHECK(differ_seed);
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}

TEST_CASE("stream independence: lag-0 cross-correlation") {
  const std::size_t n = 1000000;
  RngStream s1(2024, 0), s2(2024, 1);
  std::vector<double> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = s1.uniform();
    b[i] = s2.uniform();
  }
  CHECK(std::abs(pearson_correlation(a, b)) < 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("normal variates have unit variance") {
  RngStream s(5, 0);
  std::vector<double> xs(200000);
  for (auto& x : xs) x = s.normal();
  auto m = mean_estimate(xs);
  CHECK(std::abs(m.mean) < 4.0 * m.std_error);
  CHECK(sample_variance(xs) == doctest::Approx(1.0).epsilon(0.02));
  auto r = ks_test(xs, [](double x) { return normal_cdf(x); });
  CHECK(r.p_value > 1e-4);
}

TEST_CASE("chi-square: proportional observations") {
  std::vector<double> obs = {10, 20, 30, 40};
  std::vector<double> p = {0.1, 0.2, 0.3, 0.4};
  auto r = chi_square_gof(obs, p);
  CHECK(r.statistic == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(r.p_value == doctest::Approx(1.0));
  CHECK(r.dof == 3);
}

TEST_CASE("chi-square: two-bin hand computation") {
  std::vector<double> obs = {60, 40};
  std::vector<double> p = {0.5, 0.5};
  auto r = chi_square_gof(obs, p);
  CHECK(r.statistic == doctest::Approx(4.0));
  // chi^2_1 tail at 4 is erfc(sqrt(2)).
  CHECK(r.p_value == doctest::Approx(std::erfc(std::sqrt(2.0))).epsilon(1e-12));
  CHECK(r.p_value == doctest::Approx(0.0455).epsilon(0.01));
}

TEST_CASE("chi-square: a sparse tail bin is merged") {
  std::vector<double> obs = {30, 30, 39, 1};
  std::vector<double> p = {0.3, 0.3, 0.39, 0.01};
  auto r = chi_square_gof(obs, p);
  CHECK(r.dof == 2);
  std::vector<double> tiny_obs = {100, 0};
  std::vector<double> tiny_p = {0.99, 0.01};
  CHECK_THROWS_AS(chi_square_gof(tiny_obs, tiny_p), PreconditionError);
}

TEST_CASE("ks: null calibration") {
  int passes = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    RngStream s(seed, 3);
    std::vector<double> xs(10000);
    for (auto& x : xs) x = s.uniform();
    auto r = ks_test(xs, [](double x) { return std::clamp(x, 0.0, 1.0); });
    passes += r.p_value > 0.01;
  }
  CHECK(passes >= 98);
}

TEST_CASE("ks: power against a one-sd shift") {
  RngStream s(11, 0);
  std::vector<double> xs(10000);
  for (auto& x : xs) x = s.normal() + 1.0;
  auto r = ks_test(xs, [](double x) { return normal_cdf(x); });
  CHECK(r.p_value < 1e-6);
}

TEST_CASE("ks: single mass point") {
  std::vector<double> xs(50, 0.3);
  auto cdf = [](double x) { return normal_cdf(x); };
  auto r = ks_test(xs, cdf);
  CHECK(r.statistic == doctest::Approx(std::max(cdf(0.3), 1.0 - cdf(0.3))));
  std::vector<double> bad = {0, 1, 2, 3, 4, 5, 6, NAN};
  CHECK_THROWS_AS(ks_test(bad, cdf), PreconditionError);
  std::vector<double> few = {1, 2, 3};
  CHECK_THROWS_AS(ks_test(few, cdf), PreconditionError);
}

TEST_CASE("kolmogorov survival matches both series forms") {
  // Reference values of the Kolmogorov distribution.
  CHECK(kolmogorov_survival(1.36) == doctest::Approx(0.0494).epsilon(0.01));
  CHECK(kolmogorov_survival(1.63) == doctest::Approx(0.0098).epsilon(0.02));
  CHECK(kolmogorov_survival(0.5) == doctest::Approx(0.9639).epsilon(1e-3));
  // Continuity across the switch between the two series.
  CHECK(kolmogorov_survival(1.18 - 1e-12) == doctest::Approx(kolmogorov_survival(1.18)).epsilon(1e-9));
}

TEST_CASE("grid invariants") {
  Grid1D g(-1.0, 1.0, 64);
  CHECK(g.dx() == doctest::Approx(2.0 / 64));
  CHECK(g.x(0) == -1.0);
  CHECK_THROWS_AS(Grid1D(0.0, 1.0, 100), PreconditionError);
  CHECK_THROWS_AS(Grid1D(0.0, 1.0, 32), PreconditionError);
  CHECK_THROWS_AS(Grid1D(1.0, 0.0, 64), PreconditionError);
}

TEST_CASE("parallel_for is independent of worker count") {
  auto run = [](unsigned threads) {
    set_worker_threads(threads);
    std::vector<double> partial(97);
    parallel_for(partial.size(), [&](std::size_t b) {
      RngStream s(9, b);
      double acc = 0.0;
      for (int i = 0; i < 1000; ++i) acc += s.normal();
      partial[b] = acc;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
  };
  double one = run(1);
  CHECK(one == run(4));
  CHECK(one == run(3));
  set_worker_threads(1);
}

TEST_CASE("histogram bookkeeping") {
  Histogram h(0.0, 1.0, 4);
  h.add(0.1);
  h.add(0.99);
  h.add(1.0);
  h.add(-0.5);
  CHECK(h.counts()[0] == 1);
  CHECK(h.counts()[3] == 1);
  CHECK(h.outside() == 2);
  CHECK(h.center(0) == doctest::Approx(0.125));
}
