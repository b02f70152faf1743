#pragma once

// One-particle motions: free and killed Brownian motion, symmetric alpha-stable
// motion and the Bessel(3) process (the h-transform of killed BM with h(x) = |x|).

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "superproc/common.hpp"
#include "superproc/errors.hpp"
#include "superproc/rng.hpp"
#include "superproc/stats.hpp"

namespace superproc {

enum class MotionKind { BrownianMotion, KilledBrownianMotion1d, AlphaStable, Bessel3 };

class MotionModel {
public:
  static MotionModel brownian(int dim = 1) { return MotionModel(MotionKind::BrownianMotion, dim, 2.0); }
  static MotionModel killed_brownian() { return MotionModel(MotionKind::KilledBrownianMotion1d, 1, 2.0); }
  static MotionModel alpha_stable(double alpha, int dim = 1) {
    if (!(alpha > 0.0 && alpha < 2.0)) throw DomainError("alpha-stable motion needs 0 < alpha < 2");
    return MotionModel(MotionKind::AlphaStable, dim, alpha);
  }
  static MotionModel bessel3() { return MotionModel(MotionKind::Bessel3, 1, 2.0); }

  MotionKind kind() const { return kind_; }
  int dim() const { return dim_; }
  double alpha() const { return alpha_; }

  /// False only for motions that can be absorbed in a cemetery.
  bool conservative() const { return kind_ != MotionKind::KilledBrownianMotion1d; }

  /// Kinds whose transition law is Gaussian or built from Gaussians, with analytic
  /// expectations for the functionals used in the test-suite.
  bool closed_form_semigroup() const { return kind_ != MotionKind::AlphaStable; }

  std::string name() const {
    switch (kind_) {
    case MotionKind::BrownianMotion: return "brownian";
    case MotionKind::KilledBrownianMotion1d: return "killed_brownian";
    case MotionKind::AlphaStable: return "alpha_stable";
    case MotionKind::Bessel3: return "bessel3";
    }
    return "?";
  }

  bool operator==(const MotionModel&) const = default;

private:
  MotionModel(MotionKind kind, int dim, double alpha) : kind_(kind), dim_(dim), alpha_(alpha) {
    if (dim < 1 || dim > kMaxDim) throw DomainError("motion dimension must be in [1, 3]");
    if ((kind == MotionKind::KilledBrownianMotion1d || kind == MotionKind::Bessel3) && dim != 1)
      throw DomainError("killed BM and Bessel(3) are one-dimensional");
  }

  MotionKind kind_;
  int dim_;
  double alpha_;
};

struct ParticleState {
  Point position{};
  bool alive = true;
  std::optional<double> kill_time;
};

/// A sampled path on [birth, end]; times strictly increasing.
struct Path {
  std::vector<double> times;
  std::vector<Point> states;
  std::optional<double> kill_time;

  double birth() const { return times.front(); }
  double end() const { return times.back(); }
};

/// P(Brownian bridge from x1 to x2 over dt stays positive).
inline double bridge_survival(double x1, double x2, double dt) {
  if (!(x1 > 0.0) || !(x2 > 0.0) || !(dt > 0.0))
    throw DomainError("bridge_survival needs positive endpoints and duration");
  return -std::expm1(-2.0 * x1 * x2 / dt);
}

namespace detail {

// Standard symmetric alpha-stable variate, E exp(i t S) = exp(-|t|^alpha)
// (Chambers-Mallows-Stuck).
inline double symmetric_stable(double alpha, RandomStream& rng) {
  const double v = std::numbers::pi * (rng.uniform_open() - 0.5);
  const double w = rng.exponential();
  if (alpha == 1.0) return std::tan(v);
  return std::sin(alpha * v) / std::pow(std::cos(v), 1.0 / alpha) *
         std::pow(std::cos(v - alpha * v) / w, (1.0 - alpha) / alpha);
}

// Positive a-stable variate with E exp(-s A) = exp(-s^a), 0 < a < 1 (Kanter).
inline double positive_stable(double a, RandomStream& rng) {
  const double u = std::numbers::pi * rng.uniform_open();
  const double e = rng.exponential();
  return std::sin(a * u) / std::pow(std::sin(u), 1.0 / a) *
         std::pow(std::sin((1.0 - a) * u) / e, (1.0 - a) / a);
}

} // namespace detail

/// Sample the motion over [s, s + dt] starting from a live state.
inline ParticleState step(const MotionModel& motion, double s, const ParticleState& x, double dt,
                          RandomStream& rng) {
  if (!x.alive) throw DomainError("step: particle is not alive");
  if (!(dt > 0.0)) throw DomainError("step: dt must be positive");
  if (!all_finite(x.position)) throw InvalidStateError("step: non-finite position");
  ParticleState out = x;
  const double sd = std::sqrt(dt);
  switch (motion.kind()) {
  case MotionKind::BrownianMotion:
    for (int i = 0; i < motion.dim(); ++i) out.position[i] += sd * rng.normal();
    break;
  case MotionKind::KilledBrownianMotion1d: {
    const double x1 = x.position[0];
    if (!(x1 > 0.0)) throw InvalidStateError("step: killed BM alive at a non-positive point");
    const double x2 = x1 + sd * rng.normal();
    const double u = rng.uniform();
    if (x2 <= 0.0 || u >= bridge_survival(x1, x2, dt)) {
      out.alive = false;
      out.kill_time = s + dt * rng.uniform_open();
      out.position = point1(0.0);
    } else {
      out.position[0] = x2;
    }
    break;
  }
  case MotionKind::AlphaStable: {
    const double scale = std::pow(dt, 1.0 / motion.alpha());
    if (motion.dim() == 1) {
      out.position[0] += scale * detail::symmetric_stable(motion.alpha(), rng);
    } else {
      // isotropic: Brownian motion subordinated by a positive alpha/2-stable clock
      const double a = detail::positive_stable(0.5 * motion.alpha(), rng);
      const double sub = std::sqrt(2.0 * a) * scale;
      for (int i = 0; i < motion.dim(); ++i) out.position[i] += sub * rng.normal();
    }
    break;
  }
  case MotionKind::Bessel3: {
    // |3-d Brownian motion| started at (|x|, 0, 0)
    const double a = std::abs(x.position[0]) + sd * rng.normal();
    const double b = sd * rng.normal();
    const double c = sd * rng.normal();
    out.position = point1(std::sqrt(a * a + b * b + c * c));
    break;
  }
  }
  if (!all_finite(out.position)) throw InvalidStateError("step: non-finite position");
  return out;
}

/// Sample a path on [r, t]; `dt_at(s, position)` gives the local step size.
template <class StepSize>
Path sample_path(const MotionModel& motion, double r, const Point& x, double t, StepSize&& dt_at,
                 RandomStream& rng) {
  Path path;
  path.times.push_back(r);
  path.states.push_back(x);
  ParticleState state{x, true, {}};
  double s = r;
  while (s < t) {
    double dt = std::min(static_cast<double>(dt_at(s, state.position)), t - s);
    const double s_next = (t - s - dt <= 1e-14 * std::max(1.0, std::abs(t))) ? t : s + dt;
    state = step(motion, s, state, s_next - s, rng);
    if (!state.alive) {
      path.kill_time = state.kill_time;
      path.times.push_back(*state.kill_time);
      path.states.push_back(state.position);
      break;
    }
    s = s_next;
    path.times.push_back(s);
    path.states.push_back(state.position);
  }
  return path;
}

/// Monte Carlo estimate of T_t^r f(x) = Pi_{r,x}[f(xi_t)]. Killed paths contribute
/// `cemetery` when given, 0 otherwise.
inline Estimate semigroup_mc(const MotionModel& motion, const SpaceFn& f, double r, const Point& x,
                             double t, std::size_t reps, RandomStream& rng,
                             std::optional<double> cemetery = {}, double dt = 0.0) {
  if (!(r <= t)) throw DomainError("semigroup_mc needs r <= t");
  if (reps < 1) throw DomainError("semigroup_mc needs reps >= 1");
  Accumulator acc;
  const double h = dt > 0.0 ? dt : std::max(t - r, 1e-300);
  for (std::size_t i = 0; i < reps; ++i) {
    ParticleState state{x, true, {}};
    if (motion.kind() == MotionKind::KilledBrownianMotion1d && !(x[0] > 0.0)) {
      state.alive = false;
      state.kill_time = r;
    }
    double s = r;
    while (state.alive && s < t) {
      const double len = std::min(h, t - s);
      const double s_next = (t - s - len <= 1e-14 * std::max(1.0, std::abs(t))) ? t : s + len;
      state = step(motion, s, state, s_next - s, rng);
      s = s_next;
    }
    acc.add(state.alive ? f(state.position) : cemetery.value_or(0.0));
  }
  return acc.estimate();
}

/// A closed space-time set V given by a membership predicate. When V is a half-line
/// {y <= level} or {y >= level} in the first coordinate, the barrier lets Brownian
/// motions detect crossings between grid points.
struct SpaceTimeSet {
  std::function<bool(double, const Point&)> contains;
  struct Barrier {
    double level = 0.0;
    bool below = true;  // V = {y <= level} if true, {y >= level} otherwise
  };
  std::optional<Barrier> barrier;

  static SpaceTimeSet half_line_below(double level) {
    return {[level](double, const Point& p) { return p[0] <= level; }, Barrier{level, true}};
  }
  static SpaceTimeSet half_line_above(double level) {
    return {[level](double, const Point& p) { return p[0] >= level; }, Barrier{level, false}};
  }
};

struct HittingEstimate {
  Estimate estimate;
  double tail_bound = 0.0;  // exp(k (r - H)): largest possible contribution of unfinished paths
  bool truncation_warning = false;
};

/// Estimate f_{V,k}(r, x) = Pi_{r,x}[exp(k (r - tau_{r,V}))] by simulating until the
/// first entry into V or the truncation horizon H.
inline HittingEstimate hitting_exp_functional(const MotionModel& motion, const SpaceTimeSet& V, int k,
                                              double r, const Point& x, std::size_t reps,
                                              RandomStream& rng, double horizon, double dt,
                                              double tol = 1e-3) {
  if (k < 1) throw DomainError("hitting_exp_functional needs k >= 1");
  if (!(dt > 0.0) || !(horizon > r)) throw DomainError("hitting_exp_functional: bad dt or horizon");
  HittingEstimate out;
  out.tail_bound = std::exp(static_cast<double>(k) * (r - horizon));
  out.truncation_warning = out.tail_bound > tol;
  if (V.contains(r, x)) {
    out.estimate = {1.0, 0.0, reps};
    return out;
  }
  const bool gaussian = motion.kind() == MotionKind::BrownianMotion ||
                        motion.kind() == MotionKind::KilledBrownianMotion1d;
  Accumulator acc;
  for (std::size_t i = 0; i < reps; ++i) {
    ParticleState state{x, true, {}};
    double s = r;
    std::optional<double> tau;
    while (s < horizon) {
      const double len = std::min(dt, horizon - s);
      const ParticleState next = step(motion, s, state, len, rng);
      const double s_next = s + len;
      if (V.barrier && gaussian) {
        const double d1 = V.barrier->below ? state.position[0] - V.barrier->level
                                           : V.barrier->level - state.position[0];
        const double d2 = V.barrier->below ? next.position[0] - V.barrier->level
                                           : V.barrier->level - next.position[0];
        if (next.alive && d2 > 0.0 && d1 > 0.0 && rng.uniform() >= bridge_survival(d1, d2, len)) {
          tau = s + len * d1 / (d1 + d2);
          break;
        }
      }
      if (!next.alive) break;
      if (V.contains(s_next, next.position)) {
        if (V.barrier && gaussian) {
          const double d1 = std::abs(state.position[0] - V.barrier->level);
          const double d2 = std::abs(next.position[0] - V.barrier->level);
          tau = s + len * d1 / std::max(d1 + d2, 1e-300);
        } else {
          tau = s_next;
        }
        break;
      }
      state = next;
      s = s_next;
    }
    acc.add(tau ? std::exp(static_cast<double>(k) * (r - *tau)) : 0.0);
  }
  out.estimate = acc.estimate();
  return out;
}

} // namespace superproc
