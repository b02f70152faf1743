#pragma once

// Declarative scenario specs and the shipped presets.

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "superproc/additive_functional.hpp"
#include "superproc/branching.hpp"
#include "superproc/errors.hpp"
#include "superproc/expression.hpp"
#include "superproc/motion.hpp"
#include "superproc/particles.hpp"
#include "superproc/transform.hpp"

namespace superproc {

struct MotionSpec {
  std::string kind = "brownian";  // brownian | killed_brownian | alpha_stable | bessel3
  int dim = 1;
  double alpha = 2.0;

  MotionModel build() const {
    if (kind == "brownian") return MotionModel::brownian(dim);
    if (kind == "killed_brownian") return MotionModel::killed_brownian();
    if (kind == "alpha_stable") return MotionModel::alpha_stable(alpha, dim);
    if (kind == "bessel3") return MotionModel::bessel3();
    throw ConfigError("unknown motion kind '" + kind + "'");
  }
  bool operator==(const MotionSpec&) const = default;
};

struct MechanismSpec {
  std::string kind = "quadratic";  // quadratic | stable
  double a = 0.0;
  double b = 1.0;
  double beta = 1.0;
  double scale = 1.0;

  BranchingMechanism build() const {
    if (kind == "quadratic") return BranchingMechanism::quadratic(b, a);
    if (kind == "stable") return BranchingMechanism::stable(beta, scale);
    throw ConfigError("unknown mechanism kind '" + kind + "'");
  }
  bool operator==(const MechanismSpec&) const = default;
};

struct ClockSpec {
  std::string kind = "lebesgue";  // lebesgue | power_law | phi_p_power | custom_expression
  double rate = 1.0;
  double sigma = 0.0;
  std::optional<double> cap;
  double p = 0.0;
  double beta = 1.0;
  std::string expression;
  std::vector<double> singularities;

  AdditiveFunctional build() const {
    if (kind == "lebesgue") return AdditiveFunctional::lebesgue(rate);
    if (kind == "power_law") return AdditiveFunctional::power_law(sigma, cap);
    if (kind == "phi_p_power") return AdditiveFunctional::phi_p_power(p, beta);
    if (kind == "custom_expression") {
      const Expression e = Expression::parse(expression);
      std::vector<Point> sing;
      for (double s : singularities) sing.push_back(point1(s));
      return AdditiveFunctional::from_function(e.as_space_time(), sing, "expr:" + expression, e.uses_time());
    }
    throw ConfigError("unknown clock kind '" + kind + "'");
  }
  bool operator==(const ClockSpec&) const = default;
};

struct WeightSpec {
  std::string kind = "one";  // one | abs_x | phi_p
  double p = 0.0;

  WeightFunction build() const {
    if (kind == "one") return WeightFunction::one();
    if (kind == "abs_x") return WeightFunction::abs_x();
    if (kind == "phi_p") return WeightFunction::phi_p(p);
    throw ConfigError("unknown weight kind '" + kind + "'");
  }
  bool operator==(const WeightSpec&) const = default;
};

struct InitialSpec {
  struct Atom {
    std::vector<double> x{0.0};
    double w = 1.0;
    bool operator==(const Atom&) const = default;
  };
  struct Interval {
    double a = 0.0;
    double b = 1.0;
    std::size_t n_atoms = 100;
    double density = 1.0;
    bool operator==(const Interval&) const = default;
  };
  std::vector<Atom> atoms{Atom{}};
  std::optional<Interval> lebesgue;

  AtomicMeasure build() const {
    if (lebesgue) return discretize_lebesgue(lebesgue->a, lebesgue->b, lebesgue->n_atoms, lebesgue->density);
    AtomicMeasure mu;
    for (const auto& a : atoms) {
      if (a.x.empty() || a.x.size() > static_cast<std::size_t>(kMaxDim))
        throw ConfigError("atom positions need 1 to 3 coordinates");
      Point p{};
      for (std::size_t i = 0; i < a.x.size(); ++i) p[i] = a.x[i];
      mu.add(p, a.w);
    }
    if (mu.empty()) throw ConfigError("initial measure has no atoms");
    return mu;
  }
  bool operator==(const InitialSpec&) const = default;
};

struct Scenario {
  std::string name = "custom";
  std::string preset;                    // empty for hand-written scenarios
  std::map<std::string, double> params;  // preset parameters
  MotionSpec motion;
  MechanismSpec mechanism;
  ClockSpec clock;
  std::optional<WeightSpec> weight;
  InitialSpec initial;
  std::string notes;

  bool operator==(const Scenario&) const = default;

  SystemSpec system() const { return {motion.build(), mechanism.build(), clock.build()}; }

  /// The particle system at scale beta.
  ParticleSystem particles(double beta, const SimulationOptions& sim = {}, const FamilyOptions& fam = {}) const {
    ParticleSystem ps;
    ps.motion = motion.build();
    ps.K = clock.build();
    ps.family = offspring_family(mechanism.build(), beta, fam);
    ps.options = sim;
    return ps;
  }
};

/// Free BM, psi(z) = z^2, K = ds, mu = delta_0.
inline Scenario dawson_watanabe() {
  Scenario s;
  s.name = "dawson_watanabe";
  s.preset = "dawson_watanabe";
  s.motion = {"brownian", 1, 2.0};
  s.mechanism = {"quadratic", 0.0, 1.0, 1.0, 1.0};
  s.clock = ClockSpec{};
  s.initial = InitialSpec{};
  s.notes = "free Brownian motion with binary branching at rate ds";
  return s;
}

/// Killed BM with psi(z) = z^{1+beta} and clock |x|^{-sigma} ds (the product form of the
/// split psi K pair), weight |x|, mu = delta_1.
inline Scenario hyperbolic(double beta, double sigma) {
  if (!(beta > 0.0 && beta <= 1.0)) throw DomainError("hyperbolic needs 0 < beta <= 1");
  if (!(sigma > 0.0)) throw DomainError("hyperbolic needs sigma > 0");
  Scenario s;
  s.name = "hyperbolic";
  s.preset = "hyperbolic";
  s.params = {{"beta", beta}, {"sigma", sigma}};
  s.motion = {"killed_brownian", 1, 2.0};
  if (beta == 1.0) s.mechanism = {"quadratic", 0.0, 1.0, 1.0, 1.0};
  else s.mechanism = {"stable", 0.0, 1.0, beta, 1.0};
  s.clock.kind = "power_law";
  s.clock.sigma = sigma;
  s.weight = WeightSpec{"abs_x", 0.0};
  s.initial.atoms = {InitialSpec::Atom{{1.0}, 1.0}};
  s.notes = (sigma >= 1.0 && sigma <= 1.0 + beta) ? "killed BM, branching rate |x|^-sigma"
                                                   : "killed BM, branching rate |x|^-sigma; sigma outside [1, 1+beta]";
  return s;
}

/// The split clock 1 v |x|^{1+beta-sigma} (killed at 0) that pairs with
/// psi = (z / (|x|^{sigma/(1+beta)} v |x|))^{1+beta}.
inline AdditiveFunctional hyperbolic_split_clock(double beta, double sigma) {
  const double e = 1.0 + beta - sigma;
  return AdditiveFunctional::from_function(
      [e](double, const Point& x) { return std::max(1.0, std::pow(norm(x), e)); }, e < 0.0 ? std::vector<Point>{point1(0.0)} : std::vector<Point>{},
      "1 v |x|^(1+beta-sigma)", false);
}

/// Super-alpha-stable (alpha = 2: Brownian) with psi(z) = z^{1+beta} and K = ds; the
/// product form of psi = (z / phi_p)^{1+beta}, K = phi_p^{1+beta} ds. mu is Lebesgue on
/// [-5, 5] cut into 100 atoms.
inline Scenario iscoe(double alpha, double p, double beta) {
  if (!(alpha > 0.0 && alpha <= 2.0)) throw DomainError("iscoe needs 0 < alpha <= 2");
  if (!(beta > 0.0 && beta <= 1.0)) throw DomainError("iscoe needs 0 < beta <= 1");
  const int d = 1;
  if (alpha == 2.0 && !(p > d)) throw DomainError("phi_p is a weight for Brownian motion only when p > d");
  if (alpha < 2.0 && !(p < d + alpha)) throw DomainError("phi_p is a weight for alpha-stable motion only when p < d + alpha");
  Scenario s;
  s.name = "iscoe";
  s.preset = "iscoe";
  s.params = {{"alpha", alpha}, {"p", p}, {"beta", beta}};
  s.motion = alpha == 2.0 ? MotionSpec{"brownian", 1, 2.0} : MotionSpec{"alpha_stable", 1, alpha};
  if (beta == 1.0) s.mechanism = {"quadratic", 0.0, 1.0, 1.0, 1.0};
  else s.mechanism = {"stable", 0.0, 1.0, beta, 1.0};
  s.clock = ClockSpec{};
  s.weight = WeightSpec{"phi_p", p};
  s.initial.atoms.clear();
  s.initial.lebesgue = InitialSpec::Interval{-5.0, 5.0, 100, 1.0};
  s.notes = "infinite-measure superprocess restricted to a finite window of Lebesgue measure";
  return s;
}

inline std::vector<std::string> scenario_names() { return {"dawson_watanabe", "hyperbolic", "iscoe"}; }

inline Scenario make_preset(const std::string& name, const std::map<std::string, double>& params) {
  auto get = [&](const char* key, double fallback) {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  };
  for (const auto& [k, v] : params) {
    (void)v;
    const bool ok = (name == "hyperbolic" && (k == "beta" || k == "sigma")) ||
                    (name == "iscoe" && (k == "alpha" || k == "p" || k == "beta"));
    if (!ok) throw ConfigError("preset '" + name + "' has no parameter '" + k + "'");
  }
  if (name == "dawson_watanabe") return dawson_watanabe();
  if (name == "hyperbolic") return hyperbolic(get("beta", 1.0), get("sigma", 1.5));
  if (name == "iscoe") return iscoe(get("alpha", 2.0), get("p", 3.0), get("beta", 1.0));
  throw ConfigError("unknown scenario preset '" + name + "'");
}

} // namespace superproc
