#include <doctest.h>

#include "stochsol/errors.hpp"
#include "stochsol/qubits.hpp"
#include "stochsol/rng.hpp"
#include "stochsol/stats.hpp"

#include <cmath>
#include <numbers>
#include <vector>

using namespace stochsol;

namespace {

constexpr double kPi = std::numbers::pi;

Etalon small_etalon() {
  double l0 = 0.05, m = 1.0 / l0;
  return Etalon(make_profile(m, 0.0, 0.155 * m, Grid1D(-5, 5, 1024)));
}

std::vector<cplx> laid_out(const Etalon& e, const Grid1D& g, double center, cplx w) {
  std::vector<cplx> f(g.size());
  auto st = e.stamp(g, center, w);
  std::copy(st.values.begin(), st.values.end(), f.begin() + static_cast<std::ptrdiff_t>(st.first));
  return f;
}

// Direct quadrature of the overlap at shift d.
cplx direct_overlap(const Etalon& e, const Grid1D& g, const std::vector<cplx>& f, double d) {
  cplx s = 0;
  for (std::size_t i = 0; i < g.size(); ++i) s += std::conj(e(g.x(i) - d)) * f[i];
  return s * g.dx();
}

}  // namespace

TEST_CASE("matcher recovers centre and phase of a clean etalon") {
  auto e = small_etalon();
  Grid1D g(-16, 16, 512);
  Matcher mt(e, g);
  for (double d0 : {1.7, -3.21, 0.0, 7.03}) {
    for (double delta : {0.0, 0.9, -2.5}) {
      auto r = mt.match(laid_out(e, g, d0, std::polar(1.0, delta)));
      CHECK(std::abs(r.d_hat - d0) < 1e-3 * g.dx());
      CHECK(std::abs(std::remainder(r.phase - delta, 2 * kPi)) < 1e-6);
    }
  }
}

TEST_CASE("matcher overlap agrees with direct quadrature") {
  auto e = small_etalon();
  Grid1D g(-16, 16, 512);
  Matcher mt(e, g);
  auto f = laid_out(e, g, 0.4, cplx(0.3, -0.8));
  for (double d : {0.4, 0.43, 0.1, -1.0}) {
    cplx a = mt.overlap(f, d), b = direct_overlap(e, g, f, d);
    CHECK(std::abs(a - b) < 1e-9 * std::abs(mt.overlap(f, 0.4)));
  }
}

TEST_CASE("matcher under noise matches a brute-force search") {
  auto e = small_etalon();
  Grid1D g(-16, 16, 512);
  Matcher mt(e, g);
  RngStream rng(11, 0);
  for (int rep = 0; rep < 5; ++rep) {
    double d0 = -4.0 + 8.0 * rng.uniform();
    auto f = laid_out(e, g, d0, std::polar(1.0, 2 * kPi * rng.uniform()));
    double peak = 0;
    for (auto z : f) peak = std::max(peak, std::abs(z));
    for (auto& z : f) z += 0.05 * peak * cplx(rng.normal(), rng.normal());
    auto r = mt.match(f);
    // Dense scan of |overlap| by direct quadrature around the prior centre.
    double best_d = 0, best = -1;
    for (double d = d0 - 0.2; d <= d0 + 0.2; d += 1e-4) {
      double a = std::abs(direct_overlap(e, g, f, d));
      if (a > best) best = a, best_d = d;
    }
    CHECK(std::abs(r.d_hat - best_d) < 2e-4);
    CHECK(std::abs(r.overlap) >= best * (1 - 1e-9));
    // No grid shift beats the refined optimum.
    for (int j = -3; j <= 3; ++j) CHECK(std::abs(mt.overlap(f, r.d_hat + j * g.dx())) <= std::abs(r.overlap) * (1 + 1e-12));
  }
}

TEST_CASE("matcher is translation equivariant") {
  auto e = small_etalon();
  Grid1D g(-16, 16, 512);
  Matcher mt(e, g);
  RngStream rng(3, 1);
  std::vector<cplx> f(g.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    if (std::abs(g.x(i)) < 8) f[i] = cplx(rng.normal(), rng.normal());
  auto base = mt.match(f);
  for (std::size_t s : {1u, 7u, 40u}) {
    std::vector<cplx> h(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) h[(i + s) % g.size()] = f[i];
    auto r = mt.match(h);
    CHECK(std::abs(r.d_hat - base.d_hat - s * g.dx()) < 1e-4 * g.dx());
    CHECK(std::abs(std::remainder(r.phase - base.phase, 2 * kPi)) < 1e-6);
  }
}

TEST_CASE("matcher rejects zero and flat fields") {
  auto e = small_etalon();
  Grid1D g(-16, 16, 512);
  Matcher mt(e, g);
  std::vector<cplx> zero(g.size());
  CHECK_THROWS_AS(mt.match(zero), PreconditionError);
  std::vector<cplx> flat(g.size(), cplx(1.0, 0.0));
  CHECK_THROWS_WITH_AS(mt.match(flat), "degenerate matching", NumericalError);
  std::vector<cplx> wrong(64, 1.0);
  CHECK_THROWS_AS(mt.match(wrong), PreconditionError);
}

TEST_CASE("trial phase sums matched phases and wraps") {
  auto e = small_etalon();
  Grid1D g(-16, 16, 512);
  Matcher mt(e, g);
  Trial t{{-3.0, 4.0}, {2.0, 5.0}};
  auto p = trial_phase(t, mt, e);
  CHECK(p.value() == doctest::Approx(7.0 - 2 * kPi).epsilon(1e-6));
  CHECK(RandomPhase(-0.5).value() == doctest::Approx(2 * kPi - 0.5));
  CHECK(RandomPhase(2 * kPi).value() == 0.0);
}

TEST_CASE("dichotomic samples and wrapped distance") {
  CHECK(dichotomic_sample(RandomPhase(0.0), 0.0) == 1);
  CHECK(dichotomic_sample(RandomPhase(kPi), 0.0) == -1);
  CHECK(dichotomic_sample(RandomPhase(kPi / 2), 0.0) == 1);  // cos = 6e-17 >= 0
  CHECK(dichotomic_sample(RandomPhase(1.0), kPi / 2) == -1);
  CHECK(wrapped_distance(3 * kPi / 2) == doctest::Approx(kPi / 2));
  CHECK(wrapped_distance(-0.3) == doctest::Approx(0.3));
  CHECK(wrapped_distance(2 * kPi + 0.1) == doctest::Approx(0.1));
}

TEST_CASE("correlation of uniform phases follows the sawtooth") {
  constexpr std::size_t n = 1000000;
  auto c0 = phase_correlation({{0.0, 0.0}, n, 5});
  CHECK(c0.estimate == 1.0);
  CHECK(c0.std_error == 0.0);
  auto cpi = phase_correlation({{0.0, kPi}, n, 5});
  CHECK(cpi.estimate == -1.0);
  auto c2 = phase_correlation({{0.0, kPi / 2}, n, 5});
  CHECK(std::abs(c2.estimate) < 0.003);
  auto c4 = phase_correlation({{0.0, kPi / 4}, n, 5});
  CHECK(std::abs(c4.estimate - 0.5) < 0.003);
  CHECK(c4.std_error == doctest::Approx(std::sqrt(0.75 / n)).epsilon(0.01));

  // Only |theta1 - theta2| matters, and the same seed gives the same answer.
  auto a = phase_correlation({{0.3, 1.1}, 100000, 9});
  auto b = phase_correlation({{1.1, 0.3}, 100000, 9});
  auto c = phase_correlation({{0.0, 0.8}, 100000, 9});
  CHECK(a.estimate == b.estimate);
  CHECK(a.estimate == c.estimate);

  std::vector<double> dts;
  for (int i = 0; i <= 8; ++i) dts.push_back(kPi * i / 8);
  auto rows = correlation_curve(dts, 200000, 21);
  for (auto& r : rows) {
    CHECK(std::abs(r.estimate - r.eq35) < 4 * r.std_error + 1e-12);
    CHECK(r.eq34 == doctest::Approx(-std::cos(r.delta_theta)));
  }
  // Linear in the distance: fitted slope is -2/pi.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (auto& r : rows) sx += r.delta_theta, sy += r.estimate, sxx += r.delta_theta * r.delta_theta, sxy += r.delta_theta * r.estimate;
  double k = static_cast<double>(rows.size());
  double slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
  CHECK(std::abs(slope + 2 / kPi) < 0.01);
}

TEST_CASE("phase correlation preconditions") {
  CHECK_THROWS_AS(phase_correlation({{0.0}, 1000, 1}), PreconditionError);
  CHECK_THROWS_AS(phase_correlation({{0.0, 1.0, 2.0}, 1000, 1}), PreconditionError);
  CHECK_THROWS_AS(phase_correlation({{0.0, 1.0}, 999, 1}), PreconditionError);
  std::vector<RandomPhase> few(500, RandomPhase(0.0));
  CHECK_THROWS_AS(phase_correlation({{0.0, 1.0}, 1000, 1}, few), PreconditionError);
}

TEST_CASE("singlet correlation") {
  CHECK(singlet_correlation({0, 0, 1}, {0, 0, 1}) == -1.0);
  CHECK(singlet_correlation({0, 0, 1}, {1, 0, 0}) == 0.0);
  double s = std::sqrt(0.5);
  CHECK(singlet_correlation({0, 0, 1}, {s, 0, s}) == doctest::Approx(-s));
  CHECK_THROWS_AS(singlet_correlation({0, 0, 2}, {0, 0, 1}), PreconditionError);
}

TEST_CASE("solitonic phases are uniform and reproduce the sawtooth") {
  Grid1D dg(-8, 8, 1024);
  auto dist = uniform_distribution(dg, -8, 8);
  auto e = small_etalon();
  Grid1D g(-16, 16, 512);
  auto phases = solitonic_phases(dist, e, 2, 10000, g, 42);
  REQUIRE(phases.size() == 10000);
  std::vector<double> v;
  for (auto p : phases) v.push_back(p.value());
  auto ks = ks_test(v, [](double x) { return std::clamp(x / (2 * kPi), 0.0, 1.0); });
  CHECK(ks.p_value > 0.001);

  auto again = solitonic_phases(dist, e, 2, 200, g, 42);
  for (std::size_t i = 0; i < again.size(); ++i) CHECK(again[i].value() == phases[i].value());

  auto r = phase_correlation({{0.0, kPi / 4}, phases.size(), 0}, phases);
  CHECK(std::abs(r.estimate - 0.5) < 4 * r.std_error);
}
