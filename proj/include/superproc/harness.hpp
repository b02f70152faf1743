#pragma once

// End-to-end experiments over a Config, their verdicts, and result persistence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "superproc/config.hpp"
#include "superproc/expression.hpp"
#include "superproc/loglaplace.hpp"
#include "superproc/particles.hpp"
#include "superproc/scenario.hpp"
#include "superproc/stats.hpp"
#include "superproc/transform.hpp"

namespace superproc {

inline constexpr double kZThreshold = 4.0;

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct Verdict {
  std::string name;
  bool pass = false;
  double statistic = 0.0;
  double threshold = 0.0;
  std::string detail;
};

struct RunResult {
  std::string command;
  std::string scenario;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<Table> tables;
  std::vector<Verdict> verdicts;
  json extra = json::object();

  bool all_pass() const {
    return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.pass; });
  }
  const Table& table(const std::string& name) const {
    for (const auto& t : tables)
      if (t.name == name) return t;
    throw InvalidStateError("no table '" + name + "'");
  }
  const Verdict& verdict(const std::string& name) const {
    for (const auto& v : verdicts)
      if (v.name == name) return v;
    throw InvalidStateError("no verdict '" + name + "'");
  }
};

struct TightnessReport {
  struct Exceedance {
    double beta, level;
    Estimate frequency;
  };
  struct Increment {
    double beta, lag;
    Estimate gamma;
  };
  std::vector<Exceedance> exceedances;
  std::vector<Increment> increments;
};

// ---------------------------------------------------------------------------------------

/// splitmix64 of (seed, tag): independent master seeds for sub-experiments.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline double pair_with(const GridFunction& v, const AtomicMeasure& mu) {
  double s = 0.0;
  for (const auto& a : mu.atoms) s += a.weight * v.interpolate_r(a.position[0]);
  return s;
}

/// Scale at which the scenario's particle system exists: the stability index for
/// stable mechanisms, else `fallback`.
inline double natural_beta(const Scenario& sc, double fallback = 1.0) {
  return sc.mechanism.kind == "stable" ? sc.mechanism.beta : fallback;
}

namespace detail {

inline RunResult start_result(const std::string& command, const Config& cfg) {
  RunResult res;
  res.command = command;
  res.scenario = cfg.scenario.name;
  res.config_hash = config_hash(cfg);
  res.seed = cfg.run.seed;
  return res;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

inline SpaceTimeFn linear_coefficient_fn(const BranchingMechanism& mech) {
  return [mech](double s, const Point& x) { return mech.linear_coefficient(s, x); };
}

} // namespace detail

// ---------------------------------------------------------------------------------------

/// Solver values at r: v for the limit and v_beta per configured beta.
inline RunResult run_solve(const Config& cfg) {
  RunResult res = detail::start_result("solve", cfg);
  const SystemSpec sys = cfg.scenario.system();
  const SpaceFn f = Expression::parse(cfg.run.f).as_space();
  const SpaceTimeGrid grid = cfg.grid.build(cfg.run.r, cfg.run.t);
  const SolveOptions so = cfg.solver.build();
  const GridFunction v = solve_v(f, sys.mechanism, sys.K, sys.motion, grid, so);
  std::vector<GridFunction> vb;
  Table t{"solution", {"x", "v"}, {}};
  for (double b : cfg.run.beta) {
    vb.push_back(solve_vbeta(f, offspring_family(sys.mechanism, b), sys.K, sys.motion, grid, so));
    t.columns.push_back("v_beta=" + detail::fmt(b));
  }
  for (std::size_t i = 0; i < v.grid.nx; ++i) {
    const double x = v.grid.x(i);
    std::vector<double> row{x, v.at_r()[i]};
    for (const auto& w : vb) row.push_back(w.interpolate_r(x));
    t.rows.push_back(std::move(row));
  }
  res.tables.push_back(std::move(t));
  const AtomicMeasure mu = cfg.scenario.initial.build();
  res.extra["pairing_v"] = pair_with(v, mu);
  res.extra["refinements"] = v.refinements;
  res.extra["refinement_change"] = v.refinement_change;
  res.extra["final_nx"] = v.grid.nx;
  res.extra["final_nt"] = v.grid.nt;
  return res;
}

/// Replica means of the total mass and <f, beta X> at the output times, first beta only.
inline RunResult run_simulate(const Config& cfg, unsigned workers) {
  RunResult res = detail::start_result("simulate", cfg);
  const double beta = cfg.run.beta.front();
  const ParticleSystem ps = cfg.scenario.particles(beta, cfg.run.simulation());
  const AtomicMeasure mu = cfg.scenario.initial.build();
  const SpaceFn f = Expression::parse(cfg.run.f).as_space();
  std::vector<double> times = cfg.run.output_times;
  if (times.empty()) times = {cfg.run.t};
  std::sort(times.begin(), times.end());
  const auto runs = replicate_pairings(ps, mu, {[](const Point&) { return 1.0; }, f}, cfg.run.r, times,
                                       cfg.run.reps, cfg.run.seed, workers);
  Table t{"trajectory", {"t", "mass", "mass_se", "pairing_f", "pairing_f_se"}, {}};
  std::uint64_t particles = 0, branchings = 0;
  for (std::size_t j = 0; j < times.size(); ++j) {
    Accumulator m, g;
    for (const auto& run : runs) {
      m.add(run.values[0][j]);
      g.add(run.values[1][j]);
    }
    t.rows.push_back({times[j], m.mean(), m.std_error(), g.mean(), g.std_error()});
  }
  for (const auto& run : runs) {
    particles += run.stats.particles;
    branchings += run.stats.branchings;
  }
  res.tables.push_back(std::move(t));
  res.extra["beta"] = beta;
  res.extra["particles"] = particles;
  res.extra["branchings"] = branchings;
  return res;
}

/// Laplace functional estimates along the beta schedule against the finite-beta solver
/// value, and the distance of -log L to the limit.
inline RunResult run_convergence(const Config& cfg, unsigned workers) {
  RunResult res = detail::start_result("convergence", cfg);
  const auto& betas = cfg.run.beta;
  for (std::size_t k = 1; k < betas.size(); ++k)
    if (!(betas[k] < betas[k - 1])) throw DomainError("beta schedule must be decreasing");
  const SystemSpec sys = cfg.scenario.system();
  const AtomicMeasure mu = cfg.scenario.initial.build();
  const SpaceFn f = Expression::parse(cfg.run.f).as_space();
  const SpaceTimeGrid grid = cfg.grid.build(cfg.run.r, cfg.run.t);
  const SolveOptions so = cfg.solver.build();
  const double limit = pair_with(solve_v(f, sys.mechanism, sys.K, sys.motion, grid, so), mu);
  res.extra["limit"] = limit;

  Table t{"convergence",
          {"beta", "laplace", "laplace_se", "neg_log", "neg_log_se", "solver", "z", "limit_error"},
          {}};
  std::vector<double> bs, errs;
  for (std::size_t k = 0; k < betas.size(); ++k) {
    const double beta = betas[k];
    const RescaledFamily fam = offspring_family(sys.mechanism, beta);
    const double ref = pair_with(solve_vbeta(f, fam, sys.K, sys.motion, grid, so), mu);
    Estimate L;
    try {
      L = laplace_mc(cfg.scenario.particles(beta, cfg.run.simulation()), mu, f, cfg.run.r, cfg.run.t,
                     cfg.run.reps, derive_seed(cfg.run.seed, k), workers);
    } catch (const ResourceError& e) {
      res.verdicts.push_back({"z[beta=" + detail::fmt(beta) + "]", false, NAN, kZThreshold,
                              std::string("aborted: ") + e.what()});
      res.extra["aborted_at_beta"] = beta;
      break;
    }
    const double y = L.value > 0.0 ? -std::log(L.value) : INFINITY;
    const double se = L.value > 0.0 ? L.std_error / L.value : INFINITY;
    const double z = z_score(y, ref, se);
    const double err = std::abs(y - limit);
    t.rows.push_back({beta, L.value, L.std_error, y, se, ref, z, err});
    res.verdicts.push_back({"z[beta=" + detail::fmt(beta) + "]", std::abs(z) <= kZThreshold, z, kZThreshold,
                            "-log L = " + detail::fmt(y) + " +- " + detail::fmt(se) + ", solver " + detail::fmt(ref)});
    bs.push_back(beta);
    errs.push_back(err);
  }
  res.tables.push_back(std::move(t));
  if (bs.size() >= 2) {
    const double tau = kendall_tau(errs, bs);
    res.verdicts.push_back({"trend", tau >= 0.0, tau, 0.0, "Kendall tau of |-log L - limit| against beta"});
  }
  return res;
}

/// Replica mean of <f, beta X_t> against <w_f(r, .), mu> from the moment solver.
inline RunResult run_moment_check(const Config& cfg, unsigned workers) {
  RunResult res = detail::start_result("moments", cfg);
  const SystemSpec sys = cfg.scenario.system();
  const AtomicMeasure mu = cfg.scenario.initial.build();
  const SpaceFn f = Expression::parse(cfg.run.f).as_space();
  const SpaceTimeGrid grid = cfg.grid.build(cfg.run.r, cfg.run.t);
  const GridFunction w = solve_moment(f, detail::linear_coefficient_fn(sys.mechanism), sys.K, sys.motion, grid,
                                      cfg.solver.build());
  const double expected = pair_with(w, mu);
  Table t{"moments", {"beta", "mean", "mean_se", "solver", "z"}, {}};
  for (std::size_t k = 0; k < cfg.run.beta.size(); ++k) {
    const double beta = cfg.run.beta[k];
    const auto runs = replicate_pairings(cfg.scenario.particles(beta, cfg.run.simulation()), mu, {f}, cfg.run.r,
                                         {cfg.run.t}, cfg.run.reps, derive_seed(cfg.run.seed, k), workers);
    Accumulator acc;
    for (const auto& run : runs) acc.add(run.values[0][0]);
    const double z = z_score(acc.mean(), expected, acc.std_error());
    t.rows.push_back({beta, acc.mean(), acc.std_error(), expected, z});
    res.verdicts.push_back({"z[beta=" + detail::fmt(beta) + "]", std::abs(z) <= kZThreshold, z, kZThreshold,
                            "mean " + detail::fmt(acc.mean()) + " +- " + detail::fmt(acc.std_error()) + ", solver " +
                                detail::fmt(expected)});
  }
  res.tables.push_back(std::move(t));
  return res;
}

/// Mean total mass of a killed-BM scenario against m erf(x0 / sqrt(2 (t - r))) over a
/// grid of durations, and its decay in t.
inline RunResult run_extinction_check(const Config& cfg, unsigned workers) {
  RunResult res = detail::start_result("extinction", cfg);
  if (cfg.scenario.motion.kind != "killed_brownian")
    throw DomainError("extinction check needs a killed Brownian scenario");
  const AtomicMeasure mu = cfg.scenario.initial.build();
  if (mu.atoms.size() != 1) throw DomainError("extinction check needs a single-atom initial measure");
  const double x0 = mu.atoms[0].position[0];
  const double m = mu.atoms[0].weight;
  std::vector<double> durations = cfg.run.t_grid;
  if (durations.empty()) durations = {cfg.run.t - cfg.run.r};
  std::sort(durations.begin(), durations.end());
  std::vector<double> times;
  for (double d : durations) {
    if (!(d > 0.0)) throw DomainError("extinction durations must be positive");
    times.push_back(cfg.run.r + d);
  }
  const double beta = natural_beta(cfg.scenario, cfg.run.beta.front());
  const auto runs = replicate_pairings(cfg.scenario.particles(beta, cfg.run.simulation()), mu,
                                       {[](const Point&) { return 1.0; }}, cfg.run.r, times, cfg.run.reps,
                                       cfg.run.seed, workers);
  Table t{"extinction", {"duration", "mean_mass", "mean_mass_se", "oracle", "z"}, {}};
  std::vector<Estimate> means;
  for (std::size_t j = 0; j < times.size(); ++j) {
    Accumulator acc;
    for (const auto& run : runs) acc.add(run.values[0][j]);
    const double oracle = m * std::erf(x0 / std::sqrt(2.0 * durations[j]));
    const double z = z_score(acc.mean(), oracle, acc.std_error());
    t.rows.push_back({durations[j], acc.mean(), acc.std_error(), oracle, z});
    res.verdicts.push_back({"z[t-r=" + detail::fmt(durations[j]) + "]", std::abs(z) <= kZThreshold, z, kZThreshold,
                            "mean mass " + detail::fmt(acc.mean()) + " +- " + detail::fmt(acc.std_error()) +
                                ", erf oracle " + detail::fmt(oracle)});
    means.push_back(acc.estimate());
  }
  double worst = -INFINITY;
  for (std::size_t j = 1; j < means.size(); ++j) {
    const double se = std::hypot(means[j].std_error, means[j - 1].std_error);
    worst = std::max(worst, se > 0.0 ? (means[j].value - means[j - 1].value) / se
                                     : (means[j].value > means[j - 1].value ? INFINITY : 0.0));
  }
  if (means.size() >= 2)
    res.verdicts.push_back({"monotone_decay", worst <= kZThreshold, worst, kZThreshold,
                            "largest standardized increase of the mean mass along the t-grid"});
  res.tables.push_back(std::move(t));
  res.extra["beta"] = beta;
  return res;
}

/// Empirical mass-exceedance frequencies and mean squared increments of Z_t = <f, beta X_t>
/// on [r, t], per beta.
inline TightnessReport tightness_report(const Config& cfg, unsigned workers) {
  std::vector<double> lags = cfg.run.lags;
  if (lags.empty()) lags = {0.4, 0.2, 0.1, 0.05};
  std::vector<double> levels = cfg.run.levels;
  if (levels.empty()) levels = {0.5, 2.0, 4.0};
  const double span = cfg.run.t - cfg.run.r;
  const double dmin = *std::min_element(lags.begin(), lags.end());
  if (!(dmin > 0.0)) throw DomainError("tightness lags must be positive");
  const auto n = static_cast<std::size_t>(std::llround(span / dmin));
  if (n < 1) throw DomainError("tightness window shorter than the smallest lag");
  std::vector<std::size_t> steps;
  for (double lag : lags) {
    const double q = lag / dmin;
    if (std::abs(q - std::round(q)) > 1e-9) throw DomainError("tightness lags must be multiples of the smallest lag");
    const auto m = static_cast<std::size_t>(std::llround(q));
    if (m > n) throw DomainError("tightness lag longer than the time window");
    steps.push_back(m);
  }
  std::vector<double> times(n + 1);
  for (std::size_t k = 0; k <= n; ++k) times[k] = cfg.run.r + span * static_cast<double>(k) / static_cast<double>(n);

  const AtomicMeasure mu = cfg.scenario.initial.build();
  const SpaceFn f = Expression::parse(cfg.run.f).as_space();
  TightnessReport rep;
  for (std::size_t b = 0; b < cfg.run.beta.size(); ++b) {
    const double beta = cfg.run.beta[b];
    const auto runs = replicate_pairings(cfg.scenario.particles(beta, cfg.run.simulation()), mu, {f}, cfg.run.r,
                                         times, cfg.run.reps, derive_seed(cfg.run.seed, b), workers);
    for (double L : levels) {
      Accumulator acc;
      for (const auto& run : runs) {
        const auto& z = run.values[0];
        acc.add(*std::max_element(z.begin(), z.end()) > L ? 1.0 : 0.0);
      }
      rep.exceedances.push_back({beta, L, acc.estimate()});
    }
    for (std::size_t l = 0; l < lags.size(); ++l) {
      const std::size_t m = steps[l];
      Accumulator acc;
      for (const auto& run : runs) {
        const auto& z = run.values[0];
        double s = 0.0;
        for (std::size_t k = 0; k + m <= n; ++k) s += (z[k + m] - z[k]) * (z[k + m] - z[k]);
        acc.add(s / static_cast<double>(n - m + 1));
      }
      rep.increments.push_back({beta, lags[l], acc.estimate()});
    }
  }
  return rep;
}

inline RunResult run_tightness_diagnostic(const Config& cfg, unsigned workers) {
  RunResult res = detail::start_result("tightness", cfg);
  const TightnessReport rep = tightness_report(cfg, workers);
  Table ex{"exceedance", {"beta", "level", "frequency", "frequency_se"}, {}};
  for (const auto& e : rep.exceedances) ex.rows.push_back({e.beta, e.level, e.frequency.value, e.frequency.std_error});
  Table inc{"increments", {"beta", "lag", "gamma", "gamma_se"}, {}};
  for (const auto& i : rep.increments) inc.rows.push_back({i.beta, i.lag, i.gamma.value, i.gamma.std_error});
  // gamma(delta) nonincreasing as delta decreases, within 2 sigma, for every beta
  for (double beta : cfg.run.beta) {
    std::vector<TightnessReport::Increment> rows;
    for (const auto& i : rep.increments)
      if (i.beta == beta) rows.push_back(i);
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.lag > b.lag; });
    double worst = -INFINITY;
    for (std::size_t k = 1; k < rows.size(); ++k) {
      const double se = std::hypot(rows[k].gamma.std_error, rows[k - 1].gamma.std_error);
      const double rise = rows[k].gamma.value - rows[k - 1].gamma.value;
      worst = std::max(worst, se > 0.0 ? rise / se : (rise > 0.0 ? INFINITY : 0.0));
    }
    if (rows.size() >= 2)
      res.verdicts.push_back({"gamma_monotone[beta=" + detail::fmt(beta) + "]", worst <= 2.0, worst, 2.0,
                              "largest standardized rise of gamma as the lag shrinks"});
  }
  res.tables.push_back(std::move(ex));
  res.tables.push_back(std::move(inc));
  return res;
}

// ---------------------------------------------------------------------------------------

/// Three readings of the hyperbolic clock: the raw density |x|^-sigma, the split clock with
/// weight |x|, and the split clock after the h-transform with h = |x| (Bessel(3) motion).
inline RunResult run_admissibility(const Config& cfg) {
  RunResult res = detail::start_result("admissibility", cfg);
  const Scenario& sc = cfg.scenario;
  if (sc.preset != "hyperbolic") throw DomainError("admissibility runner needs the hyperbolic scenario");
  const double beta = sc.params.at("beta");
  const double sigma = sc.params.at("sigma");
  std::vector<double> probes = cfg.run.probe_x;
  if (probes.empty()) probes = {0.02, 0.05, 0.1, 0.2, 0.5};
  std::vector<double> widths = cfg.run.windows;
  if (widths.empty()) widths = {0.2, 0.1, 0.05};
  std::vector<Point> grid;
  for (double x : probes) grid.push_back(point1(x));
  std::vector<std::pair<double, double>> windows;
  for (double w : widths) windows.emplace_back(cfg.run.r, cfg.run.r + w);
  AdmissibilityOptions opts;
  opts.threshold = cfg.run.threshold;
  opts.dt = std::min(cfg.run.dt, 1e-3);

  const MotionModel killed = MotionModel::killed_brownian();
  const AdditiveFunctional split = hyperbolic_split_clock(beta, sigma);
  const HFunction h = HFunction::abs_x(cfg.run.r + widths.front() + 1.0);
  const TransformedSystem ts = transformed_system({killed, sc.mechanism.build(), split}, h);
  const SpaceFn rho = WeightFunction::abs_x().as_function();

  struct Reading {
    std::string name;
    AdmissibilityReport report;
  };
  std::vector<Reading> readings;
  {
    RandomStream rng(cfg.run.seed, 0);
    readings.push_back({"raw", check_admissibility(sc.clock.build(), killed, std::nullopt, windows, grid,
                                                   cfg.run.reps, rng, opts)});
  }
  {
    RandomStream rng(cfg.run.seed, 1);
    readings.push_back({"split_weighted", check_admissibility(split, killed, rho, windows, grid, cfg.run.reps, rng, opts)});
  }
  {
    RandomStream rng(cfg.run.seed, 2);
    readings.push_back({"transformed", check_admissibility(ts.system.K, ts.system.motion, std::nullopt, windows, grid,
                                                           cfg.run.reps, rng, opts)});
  }
  Table t{"admissibility", {"reading", "width", "sup_plain", "sup_plain_se", "sup_weighted", "sup_weighted_se"}, {}};
  for (std::size_t i = 0; i < readings.size(); ++i) {
    const auto& rep = readings[i].report;
    for (const auto& w : rep.windows)
      t.rows.push_back({static_cast<double>(i), w.t - w.r, w.sup_plain.value, w.sup_plain.std_error,
                        w.sup_weighted ? w.sup_weighted->value : NAN, w.sup_weighted ? w.sup_weighted->std_error : NAN});
    json j{{"plain", to_string(rep.plain_verdict)}, {"verdict", to_string(rep.verdict)}, {"k_modulus", rep.k_modulus}};
    if (rep.weighted_verdict) j["weighted"] = to_string(*rep.weighted_verdict);
    res.extra[readings[i].name] = j;
  }
  res.extra["readings"] = {"raw", "split_weighted", "transformed"};
  res.tables.push_back(std::move(t));

  const auto& raw = readings[0].report;
  const auto& weighted = readings[1].report;
  const auto& transformed = readings[2].report;
  // The raw density is not integrable at the killing boundary only when sigma >= 2.
  if (sigma >= 2.0)
    res.verdicts.push_back({"raw_fails_plain", raw.plain_verdict == AdmissibilityVerdict::Violated, raw.k_modulus,
                            opts.threshold, "raw clock: " + to_string(raw.plain_verdict)});
  res.verdicts.push_back({"split_passes_weighted", weighted.weighted_verdict == AdmissibilityVerdict::AdmissibleEvidence,
                          weighted.k_modulus_weighted.value_or(NAN), opts.threshold,
                          "split clock, weight |x|: " + to_string(weighted.weighted_verdict.value_or(
                                                            AdmissibilityVerdict::Inconclusive))});
  res.verdicts.push_back({"transformed_passes_plain", transformed.plain_verdict == AdmissibilityVerdict::AdmissibleEvidence,
                          transformed.k_modulus, opts.threshold,
                          "K/h under Bessel(3): " + to_string(transformed.plain_verdict)});
  return res;
}

// ---------------------------------------------------------------------------------------

/// Monte Carlo estimate of Pi_{r,x}[tau <= t] for U = {y >= level}; Brownian steps use the
/// bridge maximum to catch crossings between grid points.
inline Estimate hitting_probability_mc(const MotionModel& motion, double level, double r, const Point& x, double t,
                                       std::size_t reps, RandomStream& rng, double dt) {
  if (!(dt > 0.0) || !(t > r)) throw DomainError("hitting_probability_mc: bad dt or window");
  const bool gaussian = motion.kind() == MotionKind::BrownianMotion && motion.dim() == 1;
  const bool killed = motion.kind() == MotionKind::KilledBrownianMotion1d;
  Accumulator acc;
  for (std::size_t i = 0; i < reps; ++i) {
    ParticleState st{x, true, {}};
    bool hit = x[0] >= level;
    double s = r;
    while (!hit && st.alive && s < t) {
      const double len = std::min(dt, t - s);
      const double prev = st.position[0];
      st = step(motion, s, st, len, rng);
      s += len;
      if (!st.alive) break;
      const double cur = st.position[0];
      if (cur >= level) hit = true;
      else if (gaussian || killed) hit = rng.uniform() < std::exp(-2.0 * (level - prev) * (level - cur) / len);
    }
    acc.add(hit ? 1.0 : 0.0);
  }
  return acc.estimate();
}

struct LemmaOptions {
  std::vector<double> thresholds{1.0, 2.0};
  double level_offset = 1.0;  // U = {y >= max atom + offset}
  std::size_t reps_per_atom_min = 200;
};

/// Mean-mass domination and the maximal inequality for the particle system at its natural
/// scale, started from Poisson(mu / beta).
inline RunResult run_lemma_checks(const Config& cfg, unsigned workers, const LemmaOptions& lo = {}) {
  RunResult res = detail::start_result("lemmas", cfg);
  const Scenario& sc = cfg.scenario;
  const double beta = natural_beta(sc, 1.0);
  const ParticleSystem ps = sc.particles(beta, cfg.run.simulation());
  const AtomicMeasure mu = sc.initial.build();
  const SpaceFn f = Expression::parse(cfg.run.f).as_space();
  const double r = cfg.run.r, t = cfg.run.t;
  const std::size_t reps = cfg.run.reps;

  // domination: E<f, beta X_t> <= Pi_mu[f(xi_t)]
  const auto runs = replicate_pairings(ps, mu, {f}, r, {t}, reps, derive_seed(cfg.run.seed, 0), workers);
  Accumulator lhs;
  for (const auto& run : runs) lhs.add(run.values[0][0]);
  const std::size_t per_atom = std::max(lo.reps_per_atom_min, reps / std::max<std::size_t>(mu.atoms.size(), 1));
  double rhs = 0.0, rhs_var = 0.0;
  double level = -INFINITY;
  for (const auto& a : mu.atoms) level = std::max(level, a.position[0]);
  level += lo.level_offset;
  double hit = 0.0, hit_var = 0.0;
  {
    const auto per = parallel_map<std::pair<Estimate, Estimate>>(mu.atoms.size(), workers, [&](std::size_t i) {
      RandomStream rng(derive_seed(cfg.run.seed, 1), i);
      const Point& x = mu.atoms[i].position;
      Estimate a = semigroup_mc(ps.motion, f, r, x, t, per_atom, rng, 0.0, ps.motion.kind() == MotionKind::AlphaStable ? cfg.run.dt : 0.0);
      Estimate b = hitting_probability_mc(ps.motion, level, r, x, t, per_atom, rng, cfg.run.dt);
      return std::pair{a, b};
    });
    for (std::size_t i = 0; i < mu.atoms.size(); ++i) {
      const double w = mu.atoms[i].weight;
      rhs += w * per[i].first.value;
      rhs_var += w * w * per[i].first.std_error * per[i].first.std_error;
      hit += w * per[i].second.value;
      hit_var += w * w * per[i].second.std_error * per[i].second.std_error;
    }
  }
  const double zd = z_score(lhs.mean(), rhs, lhs.std_error(), std::sqrt(rhs_var));
  res.verdicts.push_back({"domination", zd <= kZThreshold, zd, kZThreshold,
                          "E<f, beta X_t> = " + detail::fmt(lhs.mean()) + " vs Pi[f(xi_t)] = " + detail::fmt(rhs)});
  Table dom{"domination", {"beta", "mean", "mean_se", "motion", "motion_se", "z"}, {}};
  dom.rows.push_back({beta, lhs.mean(), lhs.std_error(), rhs, std::sqrt(rhs_var), zd});

  // maximal inequality: P[sup_s beta X_s(U) >= c] <= Pi_mu[tau_U <= t] / c
  const std::size_t nc = lo.thresholds.size();
  auto U = [level](double, const Point& x) { return x[0] >= level; };
  SimulationOptions sim = ps.options;
  sim.exact_constant_clock = false;
  const auto flags = parallel_map<std::vector<double>>(reps, workers, [&](std::size_t i) {
    RandomStream rng(derive_seed(cfg.run.seed, 2), i);
    const Population pop = init_poisson(mu, beta, rng, sim.caps);
    EventLog log;
    log.weight = beta;
    EventLogObserver obs{&log, {}};
    const auto stats = simulate(pop, r, t, ps.motion, ps.K, ps.family, {}, rng, obs, sim);
    if (stats.truncated) throw ResourceError("population cap exceeded in the maximal-inequality check");
    std::vector<double> out(nc);
    for (std::size_t c = 0; c < nc; ++c) out[c] = max_occupation(log, U, lo.thresholds[c]) ? 1.0 : 0.0;
    return out;
  });
  Table mx{"maximal", {"c", "frequency", "frequency_se", "bound", "bound_se", "z"}, {}};
  for (std::size_t c = 0; c < nc; ++c) {
    Accumulator acc;
    for (const auto& fl : flags) acc.add(fl[c]);
    const double cval = lo.thresholds[c];
    const double bound = hit / cval;
    const double bse = std::sqrt(hit_var) / cval;
    const double z = z_score(acc.mean(), bound, acc.std_error(), bse);
    mx.rows.push_back({cval, acc.mean(), acc.std_error(), bound, bse, z});
    res.verdicts.push_back({"maximal[c=" + detail::fmt(cval) + "]", z <= kZThreshold, z, kZThreshold,
                            "P[sup X_s(U) >= c] = " + detail::fmt(acc.mean()) + " vs " + detail::fmt(bound)});
  }
  res.tables.push_back(std::move(dom));
  res.tables.push_back(std::move(mx));
  res.extra["beta"] = beta;
  res.extra["U_level"] = level;
  return res;
}

// ---------------------------------------------------------------------------------------

/// Solve v on the configured grid and on the grid with (h, tau) halved; the r-slice change
/// relative to max(1, |v|) must stay below 4 tol.
inline RunResult run_grid_convergence(const Config& cfg) {
  RunResult res = detail::start_result("grid_convergence", cfg);
  const SystemSpec sys = cfg.scenario.system();
  const SpaceFn f = Expression::parse(cfg.run.f).as_space();
  const SpaceTimeGrid grid = cfg.grid.build(cfg.run.r, cfg.run.t);
  const SolveOptions so = cfg.solver.build();
  const GridFunction a = solve_v(f, sys.mechanism, sys.K, sys.motion, grid, so);
  const GridFunction b = solve_v(f, sys.mechanism, sys.K, sys.motion, grid.refined(), so);
  double diff = 0.0, scale = 1.0;
  for (std::size_t i = 0; i < a.grid.nx; ++i) {
    const double x = a.grid.x(i);
    diff = std::max(diff, std::abs(a.at_r()[i] - b.interpolate_r(x)));
    scale = std::max(scale, std::abs(a.at_r()[i]));
  }
  const double change = diff / scale;
  res.tables.push_back({"grid_convergence", {"nx", "nt", "change", "tol"},
                        {{static_cast<double>(a.grid.nx), static_cast<double>(a.grid.nt), change, so.tol}}});
  res.verdicts.push_back({"halving", change < 4.0 * so.tol, change, 4.0 * so.tol, "r-slice change after halving (h, tau)"});
  return res;
}

// ---------------------------------------------------------------------------------------

inline json to_json(const RunResult& r) {
  json j;
  j["command"] = r.command;
  j["scenario"] = r.scenario;
  j["config_hash"] = r.config_hash;
  j["seed"] = r.seed;
  j["all_pass"] = r.all_pass();
  json vs = json::array();
  for (const auto& v : r.verdicts)
    vs.push_back({{"name", v.name}, {"pass", v.pass}, {"statistic", v.statistic}, {"threshold", v.threshold},
                  {"detail", v.detail}});
  j["verdicts"] = vs;
  json ts = json::array();
  for (const auto& t : r.tables) ts.push_back({{"name", t.name}, {"columns", t.columns}, {"rows", t.rows}});
  j["tables"] = ts;
  j["extra"] = r.extra;
  return j;
}

inline std::string result_json_text(const RunResult& r) { return to_json(r).dump(2) + "\n"; }

inline std::string table_csv(const Table& t) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << t.columns[i];
  os << "\n";
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << "\n";
  }
  return os.str();
}

enum class OutputFormat { csv, json };

/// result.json (always), timing.json, and table_<name>.csv when the format is csv.
inline void write_outputs(const RunResult& r, const std::filesystem::path& dir, OutputFormat format,
                          double seconds, unsigned workers) {
  std::filesystem::create_directories(dir);
  auto put = [&](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + p.string() + "'");
    out << text;
  };
  put(dir / "result.json", result_json_text(r));
  put(dir / "timing.json", json{{"seconds", seconds}, {"workers", workers}}.dump(2) + "\n");
  if (format == OutputFormat::csv)
    for (const auto& t : r.tables) put(dir / ("table_" + t.name + ".csv"), table_csv(t));
}

} // namespace superproc
