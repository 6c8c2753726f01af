#include "stochsol/cli.hpp"

#include "stochsol/diffraction.hpp"
#include "stochsol/ensemble.hpp"
#include "stochsol/errors.hpp"
#include "stochsol/output.hpp"
#include "stochsol/parallel.hpp"
#include "stochsol/qubits.hpp"
#include "stochsol/rng.hpp"
#include "stochsol/soliton.hpp"
#include "stochsol/stats.hpp"
#include "stochsol/wiener.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>

namespace stochsol {

using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

// ---------------------------------------------------------------------------
// Parameter schema

enum class Kind { number, integer, list, text };

struct KeySpec {
  std::string name;
  Kind kind;
  json def;
  // Returns the violated constraint, or "" when the value is acceptable.
  std::function<std::string(const json&)> check;
};

std::string kind_name(Kind k) {
  switch (k) {
    case Kind::number: return "a number";
    case Kind::integer: return "a non-negative integer";
    case Kind::list: return "a list of numbers";
    case Kind::text: return "a string";
  }
  return "";
}

auto positive() {
  return [](const json& v) { return v.get<double>() > 0.0 ? "" : std::string("must be > 0"); };
}
auto at_least(double lo) {
  return [lo](const json& v) {
    return v.get<double>() >= lo ? std::string() : "must be >= " + format_double(lo);
  };
}
auto in_range(double lo, double hi) {
  return [lo, hi](const json& v) {
    double x = v.get<double>();
    return x >= lo && x <= hi ? std::string() : "must lie in [" + format_double(lo) + ", " + format_double(hi) + "]";
  };
}
auto one_of(std::vector<std::string> options) {
  return [options](const json& v) {
    for (const auto& o : options)
      if (v.get<std::string>() == o) return std::string();
    std::string msg = "must be one of";
    for (const auto& o : options) msg += " " + o;
    return msg;
  };
}
auto power_of_two() {
  return [](const json& v) {
    auto n = v.get<std::uint64_t>();
    return n >= 64 && is_power_of_two(n) ? std::string() : std::string("must be a power of two >= 64");
  };
}
auto odd_at_least(std::uint64_t lo) {
  return [lo](const json& v) {
    auto n = v.get<std::uint64_t>();
    return n >= lo && n % 2 == 1 ? std::string() : "must be odd and >= " + std::to_string(lo);
  };
}
auto nonempty() {
  return [](const json& v) { return v.empty() ? std::string("must not be empty") : std::string(); };
}
auto interval() {
  return [](const json& v) {
    return v.size() == 2 && v[0].get<double>() < v[1].get<double>() ? std::string()
                                                                     : std::string("must be [lo, hi] with lo < hi");
  };
}
auto all_positive() {
  return [](const json& v) {
    if (v.empty()) return std::string("must not be empty");
    for (const auto& x : v)
      if (!(x.get<double>() > 0.0)) return std::string("entries must be > 0");
    return std::string();
  };
}
auto unit_points() {
  return [](const json& v) {
    if (v.empty()) return std::string("must not be empty");
    for (const auto& x : v)
      if (x.get<double>() < 0.0 || x.get<double>() > 1.0) return std::string("entries must lie in [0, 1]");
    return std::string();
  };
}
std::function<std::string(const json&)> any() {
  return [](const json&) { return std::string(); };
}

std::vector<KeySpec> density_keys(const std::string& kind, double mean, double sd, json domain) {
  return {
      {"density", Kind::text, kind, one_of({"gaussian", "double_gaussian", "uniform"})},
      {"mean", Kind::number, mean, any()},
      {"sd", Kind::number, sd, positive()},
      {"half_separation", Kind::number, 3.0, positive()},
      {"lo", Kind::number, -1.0, any()},
      {"hi", Kind::number, 1.0, any()},
      {"domain", Kind::list, std::move(domain), interval()},
      {"density_points", Kind::integer, 16384, power_of_two()},
  };
}

std::vector<KeySpec> schema(const std::string& sub) {
  std::vector<KeySpec> k;
  auto add = [&](std::vector<KeySpec> more) { k.insert(k.end(), more.begin(), more.end()); };
  if (sub == "qubit-corr") {
    json thetas = json::array();
    for (int i = 0; i <= 8; ++i) thetas.push_back(kPi * i / 8.0);
    add({{"n_samples", Kind::integer, 1000000, at_least(1000)},
         {"delta_thetas", Kind::list, thetas, nonempty()},
         {"source", Kind::text, "uniform", one_of({"uniform", "solitonic"})},
         {"n_trials", Kind::integer, 10000, at_least(1000)},
         {"n_particles", Kind::integer, 2, in_range(1, 8)},
         {"l0", Kind::number, 0.05, positive()},
         {"center_half_width", Kind::number, 8.0, positive()},
         {"match_points", Kind::integer, 512, power_of_two()}});
  } else if (sub == "born") {
    add({{"l0_cells", Kind::number, 0.8, positive()},
         {"cell_factor", Kind::number, 10.0, at_least(10.0)},
         {"n_trials", Kind::integer, 10000, at_least(1)},
         {"grid_points", Kind::integer, 1 << 24, power_of_two()}});
    add(density_keys("double_gaussian", 0.0, 0.5, json::array({-6.0, 6.0})));
  } else if (sub == "clt") {
    add({{"l0", Kind::number, 0.05, positive()},
         {"n_trials", Kind::integer, 200, at_least(1)},
         {"replicas", Kind::integer, 2000, at_least(500)},
         {"probes", Kind::list, json::array({-1.0, 0.0, 1.0}), nonempty()}});
    add(density_keys("gaussian", 0.0, 1.0, json::array({-8.0, 8.0})));
  } else if (sub == "observable") {
    add({{"l0s", Kind::list, json::array({0.2, 0.1, 0.05}), all_positive()},
         {"n_trials", Kind::integer, 100, at_least(2)},
         {"replicas", Kind::integer, 400, at_least(2)}});
    add(density_keys("gaussian", 2.0, 1.0, json::array({-20.0, 24.0})));
  } else if (sub == "wiener") {
    add({{"p", Kind::integer, 10, in_range(6, 20)},
         {"n_paths", Kind::integer, 100000, at_least(1000)},
         {"n_functions", Kind::integer, 20, at_least(1)},
         {"band", Kind::integer, 4, in_range(0, 64)},
         {"covariance_points", Kind::list, json::array({0.1, 0.3, 0.5, 0.7, 0.9}), unit_points()},
         {"covariance_paths", Kind::integer, 100000, at_least(100)}});
  } else if (sub == "diffraction") {
    add({{"w", Kind::number, 1.0, positive()},
         {"lambda", Kind::number, 1.0, positive()},
         {"L", Kind::number, 20.0, positive()},
         {"n_trials", Kind::integer, 100000, at_least(10000)},
         {"bins", Kind::integer, 100, at_least(2)},
         {"points_across", Kind::integer, 129, odd_at_least(17)}});
  } else if (sub == "lattice") {
    add({{"mass", Kind::number, 1.0, positive()},
         {"velocity", Kind::number, 0.0, in_range(-0.99, 0.99)},
         {"spectral_width", Kind::number, 0.0035, positive()},
         {"spacing", Kind::number, 20.0, positive()},
         {"n_nodes", Kind::integer, 25, odd_at_least(3)},
         {"doublings", Kind::integer, 3, in_range(0, 8)},
         {"window_half_width", Kind::number, 62.5, positive()},
         {"window_points", Kind::integer, 64, power_of_two()},
         {"fit_nodes", Kind::integer, 401, odd_at_least(3)},
         {"time_slices", Kind::integer, 32, at_least(4)},
         {"fit_points", Kind::integer, 64, at_least(4)}});
  } else {
    std::string msg = "subcommand: unknown value '" + sub + "', expected one of";
    for (const auto& s : subcommands()) msg += " " + s;
    throw ConfigError(msg);
  }
  return k;
}

// Coerces `v` to the key's kind; throws ConfigError on a type mismatch.
json coerce(const KeySpec& spec, const json& v) {
  auto fail = [&] { throw ConfigError(spec.name + ": expected " + kind_name(spec.kind)); };
  auto number = [&](const json& x) {
    if (!x.is_number()) fail();
    double d = x.get<double>();
    if (!std::isfinite(d)) fail();
    return d;
  };
  switch (spec.kind) {
    case Kind::number: return number(v);
    case Kind::integer: {
      if (v.is_number_unsigned()) return v.get<std::uint64_t>();
      if (v.is_number_integer()) {
        if (v.get<std::int64_t>() < 0) fail();
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
      }
      double d = number(v);
      if (d < 0 || d != std::floor(d) || d > 9.007199254740992e15) fail();
      return static_cast<std::uint64_t>(d);
    }
    case Kind::list: {
      if (!v.is_array()) fail();
      json out = json::array();
      for (const auto& x : v) out.push_back(number(x));
      return out;
    }
    case Kind::text:
      if (!v.is_string()) fail();
      return v;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Shared builders

SolitonProfile compact_profile(double l0) {
  const double m = 1.0 / l0;
  return make_profile(m, 0.0, 0.155 * m, Grid1D(-100.0 * l0, 100.0 * l0, 1024));
}

Grid1D domain_grid(const json& p, const char* points_key) {
  return Grid1D(p["domain"][0].get<double>(), p["domain"][1].get<double>(), p[points_key].get<std::size_t>());
}

CenterDistribution make_density(const json& p) {
  Grid1D g = domain_grid(p, "density_points");
  const std::string kind = p["density"];
  if (kind == "gaussian") return gaussian_distribution(g, p["mean"].get<double>(), p["sd"].get<double>());
  if (kind == "double_gaussian")
    return double_gaussian_distribution(g, p["half_separation"].get<double>(), p["sd"].get<double>());
  return uniform_distribution(g, p["lo"].get<double>(), p["hi"].get<double>());
}

std::vector<double> doubles(const json& v) { return v.get<std::vector<double>>(); }

std::size_t u(const json& v) { return v.get<std::size_t>(); }

// Smallest power-of-two grid over the density domain with dx <= l0 / 2.
Grid1D observable_grid(const json& p, double l0) {
  const double lo = p["domain"][0], hi = p["domain"][1];
  std::size_t n = 64;
  while ((hi - lo) / static_cast<double>(n) > 0.5 * l0) n *= 2;
  return Grid1D(lo, hi, n);
}

double lattice_profile_half_width(const json& p) {
  return std::max(10.0 / p["spectral_width"].get<double>(), 20.0 / p["mass"].get<double>());
}

SolitonProfile lattice_profile(const json& p) {
  const double H = lattice_profile_half_width(p);
  return make_profile(p["mass"], p["velocity"], p["spectral_width"], Grid1D(-H, H, 4096));
}

std::vector<double> snapped_points(const SGrid& g, const json& pts) {
  std::vector<double> out;
  for (const auto& x : pts) out.push_back(g.s(g.nearest(x.get<double>())));
  return out;
}

// Module preconditions that can be checked without running anything.
void dry_run(const std::string& sub, const json& p) {
  if (sub == "qubit-corr") {
    if (p["source"] == "solitonic") {
      const double c = p["center_half_width"], l0 = p["l0"];
      Etalon e(compact_profile(l0));
      Grid1D g(-2.0 * c, 2.0 * c, u(p["match_points"]));
      require(c + e.support_radius() < 2.0 * c, "center_half_width too small for the soliton support");
      require(u(p["n_trials"]) >= 1000, "solitonic source needs at least 1000 trials");
    }
  } else if (sub == "born") {
    Grid1D g = domain_grid(p, "grid_points");
    make_density(p);
    const double l0 = p["l0_cells"].get<double>() * g.dx();
    compact_profile(l0);
    require(p["cell_factor"].get<double>() * p["l0_cells"].get<double>() >= 8.0 - 1e-9,
            "cell_factor * l0_cells must give at least 8 grid points per cell");
  } else if (sub == "clt" || sub == "observable") {
    make_density(p);
    if (sub == "clt") compact_profile(p["l0"]);
    else
      for (const auto& l0 : p["l0s"]) {
        compact_profile(l0);
        observable_grid(p, l0);
      }
  } else if (sub == "wiener") {
    SGrid g(static_cast<int>(p["p"].get<std::size_t>()));
    (void)g;
  } else if (sub == "diffraction") {
    validate_setup(make_setup(p["w"], p["lambda"], p["L"], u(p["n_trials"]), u(p["bins"]), u(p["points_across"])));
  } else if (sub == "lattice") {
    const double mass = p["mass"], a = p["spacing"];
    if (a < 10.0 / mass) throw ConfigError("spacing: lattice spacing violates a >> l0");
    auto prof = lattice_profile(p);
    const double hw = p["window_half_width"];
    const std::size_t n0 = u(p["n_nodes"]);
    validate_lattice(prof, a, n0, 2.0 * hw);
    validate_lattice(prof, a, u(p["fit_nodes"]), 2.0 * hw);
  }
}

// ---------------------------------------------------------------------------
// Runners

struct Context {
  const RunConfig& cfg;
  std::filesystem::path dir;
  std::vector<std::string> files;

  void csv(const std::string& name, const CsvTable& t) {
    t.write(dir / name);
    files.push_back(name);
  }
  void svg(const std::string& name, const std::string& text) {
    if (!cfg.svg) return;
    write_text(dir / name, text);
    files.push_back(name);
  }
};

json run_qubit_corr(Context& ctx) {
  const json& p = ctx.cfg.params;
  const auto thetas = doubles(p["delta_thetas"]);
  std::vector<CorrelationRow> rows;
  json summary;
  if (p["source"] == "uniform") {
    rows = correlation_curve(thetas, u(p["n_samples"]), ctx.cfg.seed);
  } else {
    const double l0 = p["l0"], c = p["center_half_width"];
    Etalon e(compact_profile(l0));
    auto dist = uniform_distribution(Grid1D(-c, c, 1024), -c, c);
    auto phases = solitonic_phases(dist, e, u(p["n_particles"]), u(p["n_trials"]),
                                   Grid1D(-2.0 * c, 2.0 * c, u(p["match_points"])), ctx.cfg.seed);
    rows = correlation_curve(thetas, phases);
    CsvTable ph({"trial", "phase"});
    for (std::size_t i = 0; i < phases.size(); ++i) ph.row({cell(i), cell(phases[i].value())});
    ctx.csv("qubit_phases.csv", ph);
    std::vector<double> v;
    for (auto x : phases) v.push_back(x.value());
    auto ks = ks_test(v, [](double x) { return std::clamp(x / (2.0 * kPi), 0.0, 1.0); });
    summary["phase_uniformity_ks_p"] = ks.p_value;
  }
  CsvTable t({"delta_theta", "estimate", "stderr", "eq35", "eq34"});
  double max_dev = 0.0, max_z = 0.0;
  json jr = json::array();
  for (const auto& r : rows) {
    t.row({cell(r.delta_theta), cell(r.estimate), cell(r.std_error), cell(r.eq35), cell(r.eq34)});
    const double dev = std::abs(r.estimate - r.eq35);
    max_dev = std::max(max_dev, dev);
    if (r.std_error > 0) max_z = std::max(max_z, dev / r.std_error);
    else if (dev > 0) max_z = INFINITY;
    jr.push_back({{"delta_theta", r.delta_theta}, {"estimate", r.estimate}, {"stderr", r.std_error}, {"eq35", r.eq35}});
  }
  ctx.csv("qubit_corr.csv", t);
  summary["rows"] = jr;
  summary["max_abs_deviation"] = max_dev;
  summary["max_z"] = max_z;

  PlotSeries est{"estimate", {}, {}, "#d62728"}, saw{"1 - 2|dtheta|/pi", {}, {}, "#1f77b4"},
      cosl{"-cos dtheta", {}, {}, "#2ca02c"};
  for (const auto& r : rows) {
    est.x.push_back(r.delta_theta), est.y.push_back(r.estimate);
    saw.x.push_back(r.delta_theta), saw.y.push_back(r.eq35);
    cosl.x.push_back(r.delta_theta), cosl.y.push_back(r.eq34);
  }
  ctx.svg("qubit_corr.svg", svg_plot("Dichotomic phase correlation", "delta theta", "E(f1 f2)", {est, saw, cosl}));
  return summary;
}

json run_born(Context& ctx) {
  const json& p = ctx.cfg.params;
  Grid1D g = domain_grid(p, "grid_points");
  const double l0 = p["l0_cells"].get<double>() * g.dx();
  Etalon e(compact_profile(l0));
  auto dist = make_density(p);
  const std::size_t n = u(p["n_trials"]);
  auto ens = sample_trials(dist, e, 1, n, ctx.cfg.seed);
  CellDensity cells;
  {
    auto psi = build_psi_n(ens, g);
    cells = coarse_density(psi, {p["cell_factor"].get<double>() * l0, l0});
  }
  auto cmp = born_comparison(cells, dist, n);
  CsvTable t({"center", "rho_n", "target_rho", "chi2_contribution"});
  PlotSeries got{"rho_N", {}, {}, "#d62728", true}, want{"target", {}, {}, "#1f77b4"};
  for (const auto& r : cmp.rows) {
    t.row({cell(r.center), cell(r.rho_n), cell(r.target_rho), cell(r.chi2_contribution)});
    got.x.push_back(r.center), got.y.push_back(r.rho_n);
    want.x.push_back(r.center), want.y.push_back(r.target_rho);
  }
  ctx.csv("born.csv", t);
  ctx.svg("born.svg", svg_plot("Coarse-grained density vs target", "x", "density", {got, want}));
  return {{"statistic", cmp.report.statistic}, {"p_value", cmp.report.p_value}, {"dof", cmp.report.dof},
          {"n_trials", n},                     {"l0", l0},                       {"cell_size", cells.cell_size}};
}

json run_clt(Context& ctx) {
  const json& p = ctx.cfg.params;
  const double l0 = p["l0"];
  auto prof = compact_profile(l0);
  Etalon e(prof);
  auto dist = make_density(p);
  const auto probes = doubles(p["probes"]);
  const std::size_t R = u(p["replicas"]);
  auto s = clt_replicas(dist, prof, u(p["n_trials"]), R, probes, ctx.cfg.seed);

  CsvTable raw({"probe", "replica", "re", "im"});
  for (std::size_t i = 0; i < probes.size(); ++i)
    for (std::size_t r = 0; r < R; ++r)
      raw.row({cell(probes[i]), cell(r), cell(s.values[i][r].real()), cell(s.values[i][r].imag())});
  ctx.csv("clt.csv", raw);

  CsvTable t({"probe", "part", "ks_statistic", "ks_p_value", "mean_abs2", "oracle"});
  json rows = json::array();
  std::size_t passing = 0;
  double worst_intensity = 0.0;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    double m2 = 0.0;
    for (auto z : s.values[i]) m2 += std::norm(z);
    m2 /= static_cast<double>(R);
    const double oracle = smeared_density(dist, e, probes[i]);
    worst_intensity = std::max(worst_intensity, std::abs(m2 / oracle - 1.0));
    for (int part = 0; part < 2; ++part) {
      std::vector<double> v;
      for (auto z : s.values[i]) v.push_back(part == 0 ? z.real() : z.imag());
      const double mean = mean_estimate(v).mean, sd = std::sqrt(sample_variance(v));
      auto ks = ks_test(v, [&](double x) { return normal_cdf(x, mean, sd); });
      if (ks.p_value > 0.01) ++passing;
      const char* name = part == 0 ? "re" : "im";
      t.row({cell(probes[i]), name, cell(ks.statistic), cell(ks.p_value), cell(m2), cell(oracle)});
      rows.push_back({{"probe", probes[i]}, {"part", name}, {"ks_p_value", ks.p_value}, {"mean_abs2", m2},
                      {"oracle", oracle}});
    }
  }
  ctx.csv("clt_summary.csv", t);

  if (ctx.cfg.svg && !probes.empty()) {
    // Histogram of Re Psi at the first probe against the fitted normal.
    std::vector<double> v;
    for (auto z : s.values[0]) v.push_back(z.real());
    const double mean = mean_estimate(v).mean, sd = std::sqrt(sample_variance(v));
    Histogram h(mean - 4 * sd, mean + 4 * sd, 40);
    for (double x : v) h.add(x);
    PlotSeries hist{"Re Psi_N", {}, {}, "#d62728", true}, fit{"normal fit", {}, {}, "#1f77b4"};
    for (std::size_t b = 0; b < h.bins(); ++b) {
      hist.x.push_back(h.center(b));
      hist.y.push_back(h.counts()[b] / (static_cast<double>(R) * h.width()));
      const double z = (h.center(b) - mean) / sd;
      fit.x.push_back(h.center(b));
      fit.y.push_back(std::exp(-0.5 * z * z) / (sd * std::sqrt(2 * kPi)));
    }
    ctx.svg("clt.svg", svg_plot("Psi_N at x = " + format_double(probes[0]), "Re Psi_N", "density", {hist, fit}));
  }
  return {{"rows", rows},
          {"passing", passing},
          {"combinations", 2 * probes.size()},
          {"max_intensity_rel_error", worst_intensity}};
}

json run_observable(Context& ctx) {
  const json& p = ctx.cfg.params;
  auto dist = make_density(p);
  const std::size_t n = u(p["n_trials"]), R = u(p["replicas"]);
  ObservableGenerator pos(ObservableGenerator::Kind::position);
  CsvTable raw({"l0", "replica", "field", "field_stderr", "operator", "gap"});
  CsvTable sum({"l0", "mean_gap", "gap_stderr", "rms_gap", "mean_field", "mean_operator"});
  json rows = json::array();
  const auto l0s = doubles(p["l0s"]);
  for (std::size_t li = 0; li < l0s.size(); ++li) {
    const double l0 = l0s[li];
    Etalon e(compact_profile(l0));
    Grid1D g = observable_grid(p, l0);
    std::vector<double> gaps, fields, ops;
    for (std::size_t r = 0; r < R; ++r) {
      auto ens = sample_trials(dist, e, 1, n, derive_seed(derive_seed(ctx.cfg.seed, li), r));
      auto fl = expectation_field(ens, pos);
      auto op = expectation_operator(build_psi_n(ens, g), pos);
      gaps.push_back(op.value - fl.value);
      fields.push_back(fl.value);
      ops.push_back(op.value);
      raw.row({cell(l0), cell(r), cell(fl.value), cell(fl.std_error), cell(op.value), cell(gaps.back())});
    }
    auto m = mean_estimate(gaps);
    double ss = 0.0;
    for (double x : gaps) ss += x * x;
    const double rms = std::sqrt(ss / static_cast<double>(gaps.size()));
    const double mf = mean_estimate(fields).mean, mo = mean_estimate(ops).mean;
    sum.row({cell(l0), cell(m.mean), cell(m.std_error), cell(rms), cell(mf), cell(mo)});
    rows.push_back({{"l0", l0}, {"mean_gap", m.mean}, {"gap_stderr", m.std_error}, {"rms_gap", rms}});
  }
  ctx.csv("observable.csv", raw);
  ctx.csv("observable_summary.csv", sum);
  if (ctx.cfg.svg) {
    PlotSeries s{"rms gap", {}, {}, "#d62728"};
    for (const auto& r : rows) s.x.push_back(r["l0"]), s.y.push_back(r["rms_gap"]);
    ctx.svg("observable.svg", svg_plot("Operator minus field expectation", "l0", "rms gap", {s}));
  }
  return {{"rows", rows}};
}

json run_wiener(Context& ctx) {
  const json& p = ctx.cfg.params;
  SGrid g(static_cast<int>(u(p["p"])));
  std::vector<SampledFunction> fs;
  for (std::size_t i = 0; i < u(p["n_functions"]); ++i)
    fs.push_back(random_band_limited(g, static_cast<int>(u(p["band"])), derive_seed(ctx.cfg.seed, 10), i));
  auto reps = unitarity_check(fs, u(p["n_paths"]), ctx.cfg.seed);
  CsvTable t({"function_id", "lhs", "rhs", "stderr", "n_paths", "p"});
  double max_z = 0.0;
  for (std::size_t i = 0; i < reps.size(); ++i) {
    t.row({cell(i), cell(reps[i].lhs), cell(reps[i].rhs), cell(reps[i].std_error), cell(reps[i].n_paths),
           cell(static_cast<std::size_t>(g.p()))});
    max_z = std::max(max_z, std::abs(reps[i].rhs - reps[i].lhs) / reps[i].std_error);
  }
  ctx.csv("wiener.csv", t);

  auto pts = snapped_points(g, p["covariance_points"]);
  auto cov = covariance_surface(g, pts, u(p["covariance_paths"]), derive_seed(ctx.cfg.seed, 20));
  CsvTable c({"s", "s_prime", "estimate", "stderr", "exact"});
  double cov_z = 0.0;
  for (std::size_t a = 0; a < pts.size(); ++a)
    for (std::size_t b = 0; b < pts.size(); ++b) {
      const auto& e = cov[a * pts.size() + b];
      const double exact = std::min(pts[a], pts[b]);
      c.row({cell(pts[a]), cell(pts[b]), cell(e.value), cell(e.std_error), cell(exact)});
      if (e.std_error > 0) cov_z = std::max(cov_z, std::abs(e.value - exact) / e.std_error);
    }
  ctx.csv("wiener_covariance.csv", c);
  if (ctx.cfg.svg) {
    PlotSeries lhs{"quadrature", {}, {}, "#1f77b4"}, rhs{"Monte Carlo", {}, {}, "#d62728"};
    for (std::size_t i = 0; i < reps.size(); ++i) {
      lhs.x.push_back(static_cast<double>(i)), lhs.y.push_back(reps[i].lhs);
      rhs.x.push_back(static_cast<double>(i)), rhs.y.push_back(reps[i].rhs);
    }
    ctx.svg("wiener.svg", svg_plot("Unitarity of the stochastic transform", "function", "norm", {lhs, rhs}));
  }
  return {{"max_unitarity_z", max_z}, {"max_covariance_z", cov_z}, {"functions", reps.size()}};
}

json run_diffraction(Context& ctx) {
  const json& p = ctx.cfg.params;
  auto setup = make_setup(p["w"], p["lambda"], p["L"], u(p["n_trials"]), u(p["bins"]), u(p["points_across"]));
  auto r = run_experiment(setup, ctx.cfg.seed);
  const double inside = r.histogram.total_inside();
  CsvTable t({"bin_center", "count", "predicted", "fraunhofer"});
  PlotSeries hist{"landings", {}, {}, "#d62728", true}, pred{"propagated |psi|^2", {}, {}, "#1f77b4"},
      fr{"sinc^2", {}, {}, "#2ca02c"};
  for (std::size_t b = 0; b < setup.bins; ++b) {
    const double x = r.histogram.center(b);
    t.row({cell(x), cell(r.histogram.counts()[b]), cell(r.predicted[b] * inside), cell(r.fraunhofer[b] * inside)});
    hist.x.push_back(x), hist.y.push_back(r.histogram.counts()[b]);
    pred.x.push_back(x), pred.y.push_back(r.predicted[b] * inside);
    fr.x.push_back(x), fr.y.push_back(r.fraunhofer[b] * inside);
  }
  ctx.csv("diffraction.csv", t);
  ctx.svg("diffraction.svg", svg_plot("Single slit, F = " + format_double(setup.fresnel_number()), "x", "count",
                                      {hist, pred, fr}));
  return {{"fresnel_number", setup.fresnel_number()},
          {"p_field", r.vs_field.p_value},
          {"p_fraunhofer", r.vs_fraunhofer.p_value},
          {"first_minimum", r.first_minimum},
          {"fringe_scale", setup.fringe_scale()},
          {"fringe_maxima", r.fringe_maxima},
          {"outside", r.histogram.outside()},
          {"grid_points", setup.grid.size()}};
}

json run_lattice(Context& ctx) {
  const json& p = ctx.cfg.params;
  auto prof = lattice_profile(p);
  const double a = p["spacing"], hw = p["window_half_width"];
  const double k0 = prof.carrier_k(), w0 = prof.carrier_omega();
  Grid1D window(-hw, hw, u(p["window_points"]));

  CsvTable t({"n_nodes", "ripple", "ratio"});
  json ripples = json::array();
  double prev = NAN;
  bool halving = true;
  std::size_t n = u(p["n_nodes"]);
  for (std::size_t d = 0; d <= u(p["doublings"]); ++d) {
    auto f = lattice_sum(prof, a, n, 0.0, window);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] *= std::polar(1.0, -k0 * window.x(i));
    const double r = relative_ripple(f);
    const double ratio = r / prev;
    if (d > 0 && !(ratio <= 0.5)) halving = false;
    t.row({cell(n), cell(r), cell(ratio)});
    ripples.push_back({{"n_nodes", n}, {"ripple", r}});
    prev = r;
    n = 2 * n - 1;
  }
  ctx.csv("lattice.csv", t);

  std::vector<double> times, xs;
  const std::size_t nt = u(p["time_slices"]), nx = u(p["fit_points"]);
  for (std::size_t i = 0; i < nt; ++i) times.push_back(2.0 * kPi / w0 * static_cast<double>(i) / static_cast<double>(nt));
  const double span = k0 == 0.0 ? 2.0 * hw : 2.0 * 2.0 * kPi / std::abs(k0);
  for (std::size_t i = 0; i < nx; ++i) xs.push_back(-0.5 * span + span * static_cast<double>(i) / static_cast<double>(nx));
  validate_lattice(prof, a, u(p["fit_nodes"]), span);
  auto fit = plane_wave_fit(lattice_samples(prof, a, u(p["fit_nodes"]), times, xs));
  const double amp = std::abs(lattice_amplitude(prof, a));
  CsvTable ft({"velocity", "omega_fit", "omega_expected", "k_fit", "k_expected", "amplitude_fit",
               "amplitude_expected", "residual", "dispersion_mismatch"});
  ft.row({cell(prof.velocity()), cell(fit.omega), cell(w0), cell(fit.k), cell(k0), cell(std::abs(fit.amplitude)),
          cell(amp), cell(fit.residual), cell(fit.dispersion_mismatch(prof.mass()))});
  ctx.csv("lattice_fit.csv", ft);
  if (ctx.cfg.svg) {
    PlotSeries s{"ripple", {}, {}, "#d62728"};
    for (const auto& r : ripples) s.x.push_back(std::log2(r["n_nodes"].get<double>())), s.y.push_back(r["ripple"]);
    ctx.svg("lattice.svg", svg_plot("Lattice sum ripple", "log2 n_nodes", "relative ripple", {s}));
  }
  return {{"ripples", ripples},
          {"halving", halving},
          {"omega_fit", fit.omega},
          {"omega_expected", w0},
          {"k_fit", fit.k},
          {"k_expected", k0},
          {"omega_rel_error", std::abs(fit.omega - w0) / w0},
          {"k_error_over_mass_gamma", std::abs(fit.k - k0) / w0},
          {"residual", fit.residual}};
}

const std::map<std::string, std::function<json(Context&)>>& runners() {
  static const std::map<std::string, std::function<json(Context&)>> m = {
      {"qubit-corr", run_qubit_corr}, {"born", run_born},       {"clt", run_clt},
      {"observable", run_observable}, {"wiener", run_wiener},   {"diffraction", run_diffraction},
      {"lattice", run_lattice}};
  return m;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("config: cannot read " + path);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

}  // namespace

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> s = {"lattice", "born",   "clt",        "observable",
                                             "qubit-corr", "wiener", "diffraction"};
  return s;
}

json default_params(const std::string& subcommand) {
  json out = json::object();
  for (const auto& k : schema(subcommand)) out[k.name] = k.def;
  return out;
}

RunConfig parse_config(std::string_view text, const std::string& subcommand) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");

  RunConfig cfg;
  cfg.subcommand = subcommand;
  if (doc.contains("subcommand")) {
    if (!doc["subcommand"].is_string()) throw ConfigError("subcommand: expected a string");
    const std::string named = doc["subcommand"];
    if (!subcommand.empty() && named != subcommand)
      throw ConfigError("subcommand: config names '" + named + "' but '" + subcommand + "' was requested");
    cfg.subcommand = named;
  }
  if (cfg.subcommand.empty()) throw ConfigError("subcommand: missing");
  const auto spec = schema(cfg.subcommand);

  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string& key = it.key();
    const json& v = it.value();
    if (key == "subcommand") continue;
    if (key == "seed") {
      cfg.seed = coerce({"seed", Kind::integer, 0, any()}, v).get<std::uint64_t>();
    } else if (key == "out") {
      if (!v.is_string() || v.get<std::string>().empty()) throw ConfigError("out: expected a non-empty path");
      cfg.out_dir = v;
    } else if (key == "threads") {
      auto n = coerce({"threads", Kind::integer, 1, any()}, v).get<std::uint64_t>();
      if (n < 1 || n > 1024) throw ConfigError("threads: must lie in [1, 1024]");
      cfg.threads = static_cast<unsigned>(n);
    } else if (key == "svg") {
      if (!v.is_boolean()) throw ConfigError("svg: expected true or false");
      cfg.svg = v;
    } else {
      auto k = std::find_if(spec.begin(), spec.end(), [&](const KeySpec& s) { return s.name == key; });
      if (k == spec.end()) throw ConfigError(key + ": unknown key for subcommand " + cfg.subcommand);
      json value = coerce(*k, v);
      if (auto msg = k->check(value); !msg.empty()) throw ConfigError(key + ": " + msg);
      cfg.params[key] = value;
    }
  }
  for (const auto& k : spec)
    if (!cfg.params.contains(k.name)) cfg.params[k.name] = k.def;

  try {
    dry_run(cfg.subcommand, cfg.params);
  } catch (const PreconditionError& e) {
    throw ConfigError(cfg.subcommand + ": " + e.what());
  }
  return cfg;
}

RunConfig default_config(const std::string& subcommand) { return parse_config("{}", subcommand); }

void apply_overrides(RunConfig& config, const CliOverrides& o) {
  if (o.seed) config.seed = *o.seed;
  if (o.out_dir) config.out_dir = *o.out_dir;
  if (o.threads) {
    if (*o.threads < 1 || *o.threads > 1024) throw ConfigError("threads: must lie in [1, 1024]");
    config.threads = *o.threads;
  }
  if (o.svg) config.svg = *o.svg;
}

RunResult run(const RunConfig& config) {
  auto it = runners().find(config.subcommand);
  if (it == runners().end()) throw ConfigError("subcommand: unknown value '" + config.subcommand + "'");
  const auto start = std::chrono::steady_clock::now();
  const unsigned saved = worker_threads();
  set_worker_threads(config.threads);
  Context ctx{config, config.out_dir, {}};
  json summary;
  try {
    std::filesystem::create_directories(ctx.dir);
    summary = it->second(ctx);
  } catch (const PreconditionError& e) {
    set_worker_threads(saved);
    throw PreconditionError(config.subcommand + ": " + e.what());
  } catch (const NumericalError& e) {
    set_worker_threads(saved);
    throw NumericalError(config.subcommand + ": " + e.what());
  } catch (...) {
    set_worker_threads(saved);
    throw;
  }
  set_worker_threads(saved);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  json manifest = {{"subcommand", config.subcommand},
                   {"seed", config.seed},
                   {"threads", config.threads},
                   {"svg", config.svg},
                   {"out", config.out_dir},
                   {"params", config.params},
                   {"version", STOCHSOL_VERSION},
                   {"wall_time_s", wall},
                   {"files", ctx.files},
                   {"summary", summary}};
  write_text(ctx.dir / "manifest.json", manifest.dump(2) + "\n");
  ctx.files.push_back("manifest.json");
  return {summary, ctx.files};
}

int main_entry(int argc, char** argv) {
  CLI::App app{"Stochastic-soliton Monte Carlo experiments", "stochsol"};
  std::string sub, config_path;
  std::uint64_t seed = 0;
  std::string out;
  unsigned threads = 1;
  bool svg = false, show_defaults = false;
  app.add_option("subcommand", sub, "Experiment to run")->check(CLI::IsMember(subcommands()));
  auto* o_config = app.add_option("--config", config_path, "JSON config file");
  auto* o_seed = app.add_option("--seed", seed, "Master seed (overrides the config)");
  auto* o_out = app.add_option("--out", out, "Output directory (overrides the config)");
  auto* o_threads = app.add_option("--threads", threads, "Worker threads; outputs do not depend on it");
  auto* o_svg = app.add_option("--svg", svg, "Also write SVG plots (true/false)");
  app.add_flag("--defaults", show_defaults, "Print the default parameters of the subcommand and exit");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    if (show_defaults) {
      if (sub.empty()) throw ConfigError("subcommand: missing");
      std::cout << default_params(sub).dump(2) << "\n";
      return 0;
    }
    RunConfig cfg = parse_config(o_config->count() ? read_file(config_path) : std::string("{}"), sub);
    CliOverrides ov;
    if (o_seed->count()) ov.seed = seed;
    if (o_out->count()) ov.out_dir = out;
    if (o_threads->count()) ov.threads = threads;
    if (o_svg->count()) ov.svg = svg;
    apply_overrides(cfg, ov);
    auto result = run(cfg);
    std::cout << result.summary.dump(2) << "\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "stochsol: config error: " << e.what() << "\n";
    return 2;
  } catch (const PreconditionError& e) {
    std::cerr << "stochsol: error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "stochsol: numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "stochsol: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace stochsol
