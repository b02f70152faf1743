#pragma once

// Weight functions, the space-time harmonic h(r, x) = Pi_{r,x}[rho(xi_T)], and the
// h-transformed system (xi^h, psi_h, K^h).

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "superproc/additive_functional.hpp"
#include "superproc/branching.hpp"
#include "superproc/common.hpp"
#include "superproc/errors.hpp"
#include "superproc/loglaplace.hpp"
#include "superproc/motion.hpp"
#include "superproc/parallel.hpp"
#include "superproc/particles.hpp"
#include "superproc/rng.hpp"
#include "superproc/stats.hpp"

namespace superproc {

enum class WeightKind { one, abs_x, phi_p };

class WeightFunction {
public:
  static WeightFunction one() { return WeightFunction(WeightKind::one, 0.0); }
  static WeightFunction abs_x() { return WeightFunction(WeightKind::abs_x, 0.0); }
  static WeightFunction phi_p(double p) {
    if (!(p > 0.0)) throw DomainError("phi_p needs p > 0");
    return WeightFunction(WeightKind::phi_p, p);
  }

  WeightKind kind() const { return kind_; }
  double p() const { return p_; }

  double operator()(const Point& x) const {
    switch (kind_) {
    case WeightKind::one: return 1.0;
    case WeightKind::abs_x: return norm(x);
    case WeightKind::phi_p: return std::pow(1.0 + x[0] * x[0] + x[1] * x[1] + x[2] * x[2], -0.5 * p_);
    }
    return 0.0;
  }

  bool vanishes_at(const Point& x) const { return (*this)(x) == 0.0; }

  std::string zero_set() const { return kind_ == WeightKind::abs_x ? "{0}" : "empty"; }

  std::string name() const {
    switch (kind_) {
    case WeightKind::one: return "one";
    case WeightKind::abs_x: return "abs_x";
    case WeightKind::phi_p: return "phi_p(" + std::to_string(p_) + ")";
    }
    return "?";
  }

  SpaceFn as_function() const {
    auto self = *this;
    return [self](const Point& x) { return self(x); };
  }

private:
  WeightFunction(WeightKind k, double p) : kind_(k), p_(p) {}
  WeightKind kind_;
  double p_;
};

struct WeightRatioCell {
  double duration = 0.0;  // t - r
  Point x{};
  Estimate ratio;         // Pi_{r,x}[rho(xi_t)] / rho(x)
};

struct WeightConstantReport {
  double c_T = 1.0;       // max(sup ratio, sup 1/ratio) of the point estimates
  double c_T_upper = 1.0; // same with each ratio moved 4 standard errors outwards
  std::vector<WeightRatioCell> table;
};

/// Monte Carlo two-sided comparison constant c_T of rho on a probe grid.
inline WeightConstantReport estimate_weight_constant(const WeightFunction& rho, const MotionModel& motion, double T,
                                                     const std::vector<Point>& x_grid,
                                                     const std::vector<double>& durations, std::size_t reps,
                                                     RandomStream& rng, double dt = 0.0) {
  WeightConstantReport rep;
  rep.c_T = 1.0;
  rep.c_T_upper = 1.0;
  const SpaceFn f = rho.as_function();
  for (double d : durations) {
    if (!(d >= 0.0) || d > T) throw DomainError("weight-constant durations must lie in [0, T]");
    for (const auto& x : x_grid) {
      const double rx = rho(x);
      if (!(rx > 0.0)) throw DomainError("probe grid must avoid the zero set of the weight");
      Estimate ratio{1.0, 0.0, reps};
      if (!(rho.kind() == WeightKind::one && motion.conservative()) && d > 0.0) {
        const Estimate e = semigroup_mc(motion, f, 0.0, x, d, reps, rng, 0.0, dt);
        ratio = {e.value / rx, e.std_error / rx, e.n};
      }
      rep.table.push_back({d, x, ratio});
      if (ratio.value > 0.0) rep.c_T = std::max({rep.c_T, ratio.value, 1.0 / ratio.value});
      const double hi = ratio.value + 4.0 * ratio.std_error;
      const double lo = ratio.value - 4.0 * ratio.std_error;
      rep.c_T_upper = std::max({rep.c_T_upper, hi, lo > 0.0 ? 1.0 / lo : std::numeric_limits<double>::infinity()});
    }
  }
  return rep;
}

enum class HMethod { closed_form, grid, mc };

inline std::string to_string(HMethod m) {
  switch (m) {
  case HMethod::closed_form: return "closed_form";
  case HMethod::grid: return "grid";
  case HMethod::mc: return "mc";
  }
  return "?";
}

/// h(r, x) on r <= T. Closed forms are exact; grid and mc tables interpolate linearly.
class HFunction {
public:
  enum class Representation { closed_form, grid, mc_table };

  static HFunction constant(double c, double T) {
    if (!(c > 0.0)) throw DomainError("constant h must be positive");
    HFunction h(Representation::closed_form, T);
    h.fn_ = [c](double, const Point&) { return c; };
    h.description_ = "constant";
    h.zero_at_origin_ = false;
    return h;
  }

  static HFunction abs_x(double T) {
    HFunction h(Representation::closed_form, T);
    h.fn_ = [](double, const Point& x) { return norm(x); };
    h.description_ = "|x|";
    h.zero_at_origin_ = true;
    return h;
  }

  static HFunction from_grid(GridFunction g, double T, bool zero_at_origin) {
    HFunction h(Representation::grid, T);
    auto shared = std::make_shared<GridFunction>(std::move(g));
    h.fn_ = [shared](double s, const Point& x) { return std::max(0.0, shared->interpolate(s, x[0])); };
    h.grid_ = shared;
    h.description_ = "grid";
    h.zero_at_origin_ = zero_at_origin;
    h.time_dependent_ = true;
    return h;
  }

  static HFunction from_table(std::vector<double> times, std::vector<double> xs, std::vector<std::vector<double>> values,
                              double T, bool zero_at_origin) {
    HFunction h(Representation::mc_table, T);
    auto t = std::make_shared<std::vector<double>>(std::move(times));
    auto x = std::make_shared<std::vector<double>>(std::move(xs));
    auto v = std::make_shared<std::vector<std::vector<double>>>(std::move(values));
    h.fn_ = [t, x, v](double s, const Point& p) {
      auto locate = [](const std::vector<double>& g, double q) {
        if (q <= g.front()) return std::pair<std::size_t, double>{0, 0.0};
        if (q >= g.back()) return std::pair<std::size_t, double>{g.size() - 2, 1.0};
        const auto k = static_cast<std::size_t>(std::upper_bound(g.begin(), g.end(), q) - g.begin()) - 1;
        return std::pair<std::size_t, double>{k, (q - g[k]) / (g[k + 1] - g[k])};
      };
      const auto [i, wi] = locate(*t, s);
      const auto [j, wj] = locate(*x, p[0]);
      const auto& V = *v;
      const double a = (1 - wj) * V[i][j] + wj * V[i][j + 1];
      const double b = (1 - wj) * V[i + 1][j] + wj * V[i + 1][j + 1];
      return std::max(0.0, (1 - wi) * a + wi * b);
    };
    h.description_ = "mc_table";
    h.zero_at_origin_ = zero_at_origin;
    h.time_dependent_ = true;
    return h;
  }

  double operator()(double s, const Point& x) const {
    if (s > T_ + 1e-12) throw DomainError("h is only defined up to its horizon T");
    return fn_(s, x);
  }

  SpaceTimeFn as_function() const { return fn_; }
  Representation representation() const { return rep_; }
  double horizon() const { return T_; }
  bool zero_at_origin() const { return zero_at_origin_; }
  bool time_dependent() const { return time_dependent_; }
  const std::string& description() const { return description_; }
  bool is_identity() const { return description_ == "constant" && fn_(0.0, Point{}) == 1.0; }

  /// d/dx log h, by central differences for tabulated representations.
  double log_gradient(double s, double x) const {
    if (description_ == "|x|") return 1.0 / x;
    if (description_ == "constant") return 0.0;
    const double d = 1e-4 * std::max(1.0, std::abs(x));
    const double hp = fn_(s, point1(x + d));
    const double hm = fn_(s, point1(x - d));
    const double h0 = fn_(s, point1(x));
    if (!(h0 > 0.0)) return 0.0;
    return (hp - hm) / (2.0 * d * h0);
  }

private:
  HFunction(Representation rep, double T) : rep_(rep), T_(T) {}
  Representation rep_;
  double T_;
  SpaceTimeFn fn_;
  std::shared_ptr<GridFunction> grid_;
  std::string description_;
  bool zero_at_origin_ = false;
  bool time_dependent_ = false;
};

struct BuildHOptions {
  SpaceTimeGrid grid{};          // for method grid (r..T taken from here)
  SolveOptions solve{};
  std::vector<double> x_table{}; // for method mc
  std::size_t t_points = 11;
  std::size_t reps = 4000;
  std::uint64_t seed = 1;
  double dt = 0.0;
};

inline HFunction build_h(const WeightFunction& rho, const MotionModel& motion, double T, HMethod method,
                         const BuildHOptions& opts = {}) {
  switch (method) {
  case HMethod::closed_form:
    if (rho.kind() == WeightKind::one && motion.conservative()) return HFunction::constant(1.0, T);
    if (rho.kind() == WeightKind::abs_x && motion.kind() == MotionKind::KilledBrownianMotion1d)
      return HFunction::abs_x(T);
    throw UnsupportedError("no closed-form h for weight " + rho.name() + " and motion " + motion.name());
  case HMethod::grid: {
    SpaceTimeGrid g = opts.grid;
    g.t = T;
    SolveOptions so = opts.solve;
    so.history = true;
    GridFunction sol = solve_moment(rho.as_function(), {}, AdditiveFunctional::lebesgue(0.0), motion, g, so);
    return HFunction::from_grid(std::move(sol), T, rho.kind() == WeightKind::abs_x);
  }
  case HMethod::mc: {
    if (opts.x_table.size() < 2) throw DomainError("mc h needs at least two table abscissae");
    const std::size_t nt = std::max<std::size_t>(opts.t_points, 2);
    std::vector<double> times(nt);
    const double r0 = opts.grid.r;
    for (std::size_t i = 0; i < nt; ++i) times[i] = r0 + (T - r0) * static_cast<double>(i) / static_cast<double>(nt - 1);
    std::vector<std::vector<double>> values(nt, std::vector<double>(opts.x_table.size()));
    const SpaceFn f = rho.as_function();
    for (std::size_t i = 0; i < nt; ++i)
      for (std::size_t j = 0; j < opts.x_table.size(); ++j) {
        const Point x = point1(opts.x_table[j]);
        if (i + 1 == nt) {
          values[i][j] = rho(x);
          continue;
        }
        RandomStream rng(opts.seed, i * opts.x_table.size() + j);
        values[i][j] = semigroup_mc(motion, f, times[i], x, T, opts.reps, rng, 0.0, opts.dt).value;
      }
    return HFunction::from_table(std::move(times), opts.x_table, std::move(values), T, rho.kind() == WeightKind::abs_x);
  }
  }
  throw UnsupportedError("unknown h method");
}

/// A (motion, psi, K) triple with an optional weight.
struct SystemSpec {
  MotionModel motion = MotionModel::brownian();
  BranchingMechanism mechanism = BranchingMechanism::quadratic(1.0);
  AdditiveFunctional K = AdditiveFunctional::lebesgue();
};

struct TransformedSystem {
  SystemSpec system;          // (xi^h, psi_h, K^h); motion is the raw motion unless `exact`
  HFunction h;
  bool exact = false;         // xi^h sampled exactly (Bessel(3) for killed BM with |x|)
  bool identity = false;
  std::optional<GridDrift> drift;  // generator drift of xi^h on grids when not exact
  std::string weighting;           // how paths of xi^h are produced by the simulator
};

/// The transformed system of a raw system and its h.
inline TransformedSystem transformed_system(const SystemSpec& raw, const HFunction& h) {
  TransformedSystem out{raw, h, false, false, std::nullopt, ""};
  if (h.is_identity()) {
    out.identity = true;
    out.exact = true;
    out.weighting = "identity";
    return out;
  }
  const SpaceTimeFn hf = h.as_function();
  std::vector<Point> sing;
  if (h.zero_at_origin()) sing.push_back(point1(0.0));
  out.system.K = raw.K.scaled_by(
      [hf](double s, const Point& x) {
        const double v = hf(s, x);
        if (!(v > 0.0)) throw DegenerateTransformError("h vanishes on the support of K");
        return 1.0 / v;
      },
      sing, "1/h", h.time_dependent());
  out.system.mechanism = raw.mechanism.with_inner_scale(hf);
  if (raw.motion.kind() == MotionKind::KilledBrownianMotion1d && h.description() == "|x|") {
    out.system.motion = MotionModel::bessel3();
    out.exact = true;
    out.weighting = "exact: Bessel(3) paths";
  } else {
    auto hh = h;
    out.drift = GridDrift{[hh](double s, double x) { return hh.log_gradient(s, x); }, h.zero_at_origin()};
    out.weighting = "importance: raw paths, atom weight h(t, x_t) / h(r, x_root); first moments only";
  }
  return out;
}

enum class MeasureMap { divide, multiply };

/// Reweight atoms by h(t, x)^{-1} (divide) or h(t, x) (multiply).
inline AtomicMeasure map_measure(const AtomicMeasure& mu, const HFunction& h, double t, MeasureMap direction) {
  AtomicMeasure out;
  double hmax = 0.0;
  for (const auto& a : mu.atoms) hmax = std::max(hmax, h(t, a.position));
  const double eps = 1e-12 * hmax;
  for (const auto& a : mu.atoms) {
    const double hv = h(t, a.position);
    if (direction == MeasureMap::divide) {
      if (!(hv > eps)) throw DegenerateTransformError("atom at a zero of h cannot be divided");
      out.add(a.position, a.weight / hv);
    } else {
      if (!(hv > 0.0)) continue;  // mass on {h = 0} is invisible to the transformed process
      out.add(a.position, a.weight * hv);
    }
  }
  return out;
}

struct IdentityReport {
  double discrepancy = 0.0;  // ||v - h v_h|| / ||v|| on the r-slice
  double tolerance = 0.0;    // 5 * grid tolerance
  bool pass = false;
  GridFunction raw;
  GridFunction transformed;
};

/// Solve the raw equation and the transformed one with terminal data f / h(t, .), and
/// compare v with h v_h at time r.
inline IdentityReport verify_identity(const SystemSpec& raw, const HFunction& h, const SpaceFn& f,
                                      const SpaceTimeGrid& grid, const SolveOptions& opts = {}) {
  if (h.horizon() < grid.t - 1e-12) throw DomainError("h horizon must cover the solve window");
  IdentityReport rep;
  rep.raw = solve_v(f, raw.mechanism, raw.K, raw.motion, grid, opts);
  const TransformedSystem ts = transformed_system(raw, h);
  SolveOptions to = opts;
  to.drift = ts.exact ? std::nullopt : ts.drift;
  to.coefficients_time_dependent = opts.coefficients_time_dependent || h.time_dependent();
  const double t = grid.t;
  auto F = [f, h, t](const Point& x) {
    const double hv = h(t, x);
    return hv > 0.0 ? f(x) / hv : std::numeric_limits<double>::quiet_NaN();
  };
  // f / h at zeros of h by linear extrapolation from the right
  SpaceFn terminal = [F](const Point& x) {
    const double v = F(x);
    if (!std::isnan(v)) return v;
    const double d = 1e-6 * (1.0 + std::abs(x[0]));
    return std::max(0.0, 2.0 * F(point1(x[0] + d)) - F(point1(x[0] + 2.0 * d)));
  };
  rep.transformed = solve_v(terminal, ts.system.mechanism, ts.system.K, ts.system.motion, grid, to);
  const GridFunction& a = rep.raw.grid.nx <= rep.transformed.grid.nx ? rep.raw : rep.transformed;
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < a.grid.nx; ++i) {
    const double x = a.grid.x(i);
    const double v = rep.raw.interpolate_r(x);
    const double hv = h(grid.r, point1(x)) * rep.transformed.interpolate_r(x);
    diff = std::max(diff, std::abs(v - hv));
    scale = std::max(scale, std::abs(v));
  }
  rep.discrepancy = scale > 0.0 ? diff / scale : diff;
  rep.tolerance = 5.0 * opts.tol;
  rep.pass = rep.discrepancy < rep.tolerance;
  return rep;
}

/// Clock for simulating a transformed power mechanism psi_h = c (h z)^p with clock K^h:
/// the offspring law sees the homogeneous c z^p and the clock density k h^{p-1}.
inline AdditiveFunctional combined_clock(const AdditiveFunctional& K, const HFunction& h, double power) {
  const SpaceTimeFn hf = h.as_function();
  std::vector<Point> sing;
  return K.scaled_by([hf, power](double s, const Point& x) { return std::pow(hf(s, x), power - 1.0); }, sing,
                     "h^(p-1)", h.time_dependent());
}

/// E^h_{r, pi_{mu/beta}}[<g, beta X^h_t>] for the transformed system, from particles of the
/// raw motion with the combined clock. Each atom carries h(t, x_t) / h(r, x_root) unless
/// the transform is exact.
inline Estimate transformed_mean_mc(const TransformedSystem& ts, const SystemSpec& raw, const RescaledFamily& family,
                                    const AtomicMeasure& mu, const SpaceFn& g, double r, double t, std::size_t reps,
                                    std::uint64_t seed, unsigned workers = 1, const SimulationOptions& sim = {}) {
  double power = 2.0;
  if (const auto* st = std::get_if<StableBranching>(&raw.mechanism.variant())) power = 1.0 + st->beta;
  else if (const auto* q = std::get_if<QuadraticBranching>(&raw.mechanism.variant()); q && q->a != 0.0)
    throw UnsupportedError("transformed simulation needs a pure power mechanism");
  const MotionModel motion = ts.exact ? ts.system.motion : raw.motion;
  const AdditiveFunctional clock = ts.identity ? raw.K : combined_clock(ts.system.K, ts.h, power);
  const HFunction h = ts.h;
  const bool weighted = !ts.exact;
  auto values = parallel_map<double>(reps, workers, [&](std::size_t i) {
    RandomStream rng(seed, i);
    const Population pop = init_poisson(mu, family.beta, rng, sim.caps);
    double total = 0.0;
    for (const auto& p : pop.live) {
      Population one;
      one.beta = family.beta;
      one.live = {p};
      one.next_id = p.id + 1;
      const double h0 = weighted ? h(r, p.state.position) : 1.0;
      if (weighted && !(h0 > 0.0)) continue;
      struct Obs {
        double beta, h0, t;
        bool weighted;
        const HFunction* h;
        const SpaceFn* g;
        double sum = 0.0;
        void record(std::size_t, const Point& x) {
          sum += beta * (*g)(x) * (weighted ? (*h)(t, x) / h0 : 1.0);
        }
      } obs{family.beta, h0, t, weighted, &h, &g};
      const auto stats = simulate(one, r, t, motion, clock, family, {t}, rng, obs, sim);
      if (stats.truncated) throw ResourceError("population cap exceeded in transformed simulation");
      total += obs.sum;
    }
    return total;
  });
  Accumulator acc;
  for (double v : values) acc.add(v);
  return acc.estimate();
}

} // namespace superproc
