#pragma once

// Grid solvers for the log-Laplace equations and the first-moment equation: backward
// operator splitting of a Crank-Nicolson diffusion step and a pointwise implicit reaction.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "superproc/additive_functional.hpp"
#include "superproc/branching.hpp"
#include "superproc/common.hpp"
#include "superproc/errors.hpp"
#include "superproc/motion.hpp"

namespace superproc {

enum class Boundary { absorbing_at_zero, free, truncated_with_decay };
enum class Splitting { Lie, Strang };

inline std::string to_string(Boundary b) {
  switch (b) {
  case Boundary::absorbing_at_zero: return "absorbing_at_zero";
  case Boundary::free: return "free";
  case Boundary::truncated_with_decay: return "truncated_with_decay";
  }
  return "?";
}

inline std::string to_string(Splitting s) { return s == Splitting::Lie ? "lie" : "strang"; }

/// Uniform grid on [x_min, x_max] x [r, t]; nx == 1 is the spatially homogeneous sentinel
/// with its single node at x_min.
struct SpaceTimeGrid {
  double x_min = 0.0;
  double x_max = 0.0;
  std::size_t nx = 1;
  double r = 0.0;
  double t = 1.0;
  std::size_t nt = 100;
  Boundary boundary = Boundary::free;

  static SpaceTimeGrid homogeneous(double r, double t, std::size_t nt, double x0 = 0.0) {
    SpaceTimeGrid g{x0, x0, 1, r, t, nt, Boundary::free};
    g.validate();
    return g;
  }

  static SpaceTimeGrid uniform(double x_min, double x_max, std::size_t nx, double r, double t, std::size_t nt,
                               Boundary boundary) {
    SpaceTimeGrid g{x_min, x_max, nx, r, t, nt, boundary};
    g.validate();
    return g;
  }

  void validate() const {
    if (!(t > r)) throw DomainError("grid needs r < t");
    if (nt < 1) throw DomainError("grid needs at least one time step");
    if (nx == 0) throw DomainError("grid needs at least one node");
    if (nx > 1) {
      if (nx < 3 || !(x_max > x_min)) throw DomainError("spatial grid needs x_min < x_max and nx >= 3");
      if (boundary == Boundary::absorbing_at_zero && x_min != 0.0)
        throw DomainError("absorbing boundary requires x_min = 0");
    }
  }

  bool is_homogeneous() const { return nx == 1; }
  double h() const { return nx > 1 ? (x_max - x_min) / static_cast<double>(nx - 1) : 0.0; }
  double tau() const { return (t - r) / static_cast<double>(nt); }
  double x(std::size_t i) const { return nx > 1 ? x_min + h() * static_cast<double>(i) : x_min; }
  double time(std::size_t n) const { return n == nt ? t : r + tau() * static_cast<double>(n); }

  /// Halve h (unless homogeneous) and tau; old nodes stay nodes.
  SpaceTimeGrid refined() const {
    SpaceTimeGrid g = *this;
    if (nx > 1) g.nx = 2 * nx - 1;
    g.nt = 2 * nt;
    return g;
  }
};

/// Values on a grid. Row n holds time grid.time(n); without history only rows 0 (r) and nt
/// (terminal) are kept.
struct GridFunction {
  SpaceTimeGrid grid;
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> row_index;  // time index of each stored row
  double refinement_change = std::numeric_limits<double>::quiet_NaN();
  int refinements = 0;

  const std::vector<double>& at_r() const { return rows.front(); }
  const std::vector<double>& terminal() const { return rows.back(); }
  bool has_history() const { return rows.size() == grid.nt + 1; }

  const std::vector<double>& row(std::size_t n) const {
    if (has_history()) return rows.at(n);
    if (n == 0) return rows.front();
    if (n == grid.nt) return rows.back();
    throw InvalidStateError("grid function kept no history for intermediate times");
  }

  /// Linear interpolation in x of row n; constant extension outside the grid.
  double interpolate_row(std::size_t n, double x) const {
    const auto& v = row(n);
    if (grid.is_homogeneous()) return v[0];
    const double u = (x - grid.x_min) / grid.h();
    if (u <= 0.0) return v.front();
    if (u >= static_cast<double>(grid.nx - 1)) return v.back();
    const auto i = static_cast<std::size_t>(u);
    const double w = u - static_cast<double>(i);
    return (1.0 - w) * v[i] + w * v[std::min(i + 1, grid.nx - 1)];
  }

  double interpolate_r(double x) const { return interpolate_row(0, x); }

  /// Bilinear interpolation in (s, x); needs history.
  double interpolate(double s, double x) const {
    if (!has_history()) throw InvalidStateError("interpolate(s, x) needs a solve with history");
    const double u = std::clamp((s - grid.r) / grid.tau(), 0.0, static_cast<double>(grid.nt));
    const auto n = std::min(static_cast<std::size_t>(u), grid.nt - 1);
    const double w = u - static_cast<double>(n);
    return (1.0 - w) * interpolate_row(n, x) + w * interpolate_row(n + 1, x);
  }
};

/// Extra drift b(s, x) for the generator 1/2 d^2/dx^2 + b d/dx (used by the h-transform).
struct GridDrift {
  std::function<double(double, double)> b;
  bool entrance_at_left = false;  // left end is an entrance boundary (drift ~ 1/x there)
};

struct SolveOptions {
  double tol = 1e-3;
  Splitting splitting = Splitting::Lie;
  int max_refinements = 6;
  bool history = false;
  bool coefficients_time_dependent = false;
  int rannacher_steps = 2;  // implicit-Euler startup steps against rough terminal data
  std::optional<GridDrift> drift;
};

namespace detail {

inline constexpr std::array<double, 8> kGaussNodes{-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                                   -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                                   0.7966664774136267,  0.9602898564975363};
inline constexpr std::array<double, 8> kGaussWeights{0.1012285362903763, 0.2223810344533745, 0.3137066661224659,
                                                     0.3626837833783620, 0.3626837833783620, 0.3137066661224659,
                                                     0.2223810344533745, 0.1012285362903763};

/// Quadrature nodes and weights (weights sum to 1) for the average over [lo, hi]. A
/// singular endpoint is resolved by the substitution x = end +- (hi - lo) u^2.
struct CellRule {
  std::vector<double> x;
  std::vector<double> w;
};

inline void append_rule(CellRule& rule, double lo, double hi, bool sing_lo, bool sing_hi, double total) {
  const double len = hi - lo;
  if (!(len > 0.0)) return;
  for (std::size_t q = 0; q < kGaussNodes.size(); ++q) {
    const double u = 0.5 * (kGaussNodes[q] + 1.0);
    const double wq = 0.5 * kGaussWeights[q];
    if (sing_lo && !sing_hi) {
      rule.x.push_back(lo + len * u * u);
      rule.w.push_back(wq * 2.0 * u * len / total);
    } else if (sing_hi && !sing_lo) {
      rule.x.push_back(hi - len * u * u);
      rule.w.push_back(wq * 2.0 * u * len / total);
    } else if (sing_lo && sing_hi) {
      // split at the midpoint so each half sees one singular end
      rule.x.push_back(lo + 0.5 * len * u * u);
      rule.w.push_back(wq * u * len / total);
      rule.x.push_back(hi - 0.5 * len * u * u);
      rule.w.push_back(wq * u * len / total);
    } else {
      rule.x.push_back(lo + len * u);
      rule.w.push_back(wq * len / total);
    }
  }
}

inline CellRule cell_rule(const SpaceTimeGrid& g, std::size_t i, const std::vector<double>& singular) {
  CellRule rule;
  if (g.is_homogeneous()) {
    rule.x.push_back(g.x_min);
    rule.w.push_back(1.0);
    return rule;
  }
  const double lo = std::max(g.x_min, g.x(i) - 0.5 * g.h());
  const double hi = std::min(g.x_max, g.x(i) + 0.5 * g.h());
  std::vector<double> cuts{lo};
  for (double p : singular)
    if (p > lo && p < hi) cuts.push_back(p);
  cuts.push_back(hi);
  std::sort(cuts.begin(), cuts.end());
  auto is_sing = [&](double p) {
    return std::any_of(singular.begin(), singular.end(), [&](double q) { return std::abs(q - p) <= 1e-14 * (1.0 + std::abs(p)); });
  };
  for (std::size_t c = 0; c + 1 < cuts.size(); ++c)
    append_rule(rule, cuts[c], cuts[c + 1], is_sing(cuts[c]), is_sing(cuts[c + 1]), hi - lo);
  return rule;
}

/// Solve g(y) = 0 for increasing g on [lo, hi] with g(lo) <= 0 <= g(hi).
template <class G>
double safeguarded_newton(G&& g, double lo, double hi, double y, const char* what, double s, double x) {
  auto [glo, dlo] = g(lo);
  if (glo >= 0.0) return lo;
  auto [ghi, dhi] = g(hi);
  if (ghi <= 0.0) return hi;
  (void)dlo;
  (void)dhi;
  y = std::clamp(y, lo, hi);
  for (int it = 0; it < 200; ++it) {
    const auto [gy, dy] = g(y);
    if (gy == 0.0) return y;
    if (gy < 0.0) lo = y;
    else hi = y;
    double next = dy > 0.0 && std::isfinite(dy) ? y - gy / dy : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - y) <= 1e-15 * std::max(1.0, std::abs(y)) || hi - lo <= 1e-15 * std::max(1.0, std::abs(hi)))
      return next;
    y = next;
  }
  throw SolverError(std::string("reaction solve did not converge (") + what + ") at s=" + std::to_string(s) +
                    ", x=" + std::to_string(x));
}

/// The reaction part of one equation, prepared per time level.
class Reaction {
public:
  virtual ~Reaction() = default;
  virtual void prepare(const SpaceTimeGrid& g, double s) = 0;
  /// Backward-Euler step of length tau at node i from value v.
  virtual double implicit_step(std::size_t i, double tau, double v) const = 0;
  /// Trapezoid step; falls back to backward Euler when the explicit half leaves the domain.
  virtual double trapezoid_step(std::size_t i, double tau, double v) const { return implicit_step(i, tau, v); }
};

/// Decay reaction y' = -R_i(y) with R_i(y) = sum over cell quadrature of k psi, R_i >= 0
/// increasing; implicit step solves y + tau R_i(y) = v on [0, v].
class DecayReaction : public Reaction {
public:
  using Eval = std::function<std::pair<double, double>(std::size_t, double)>;

  void prepare(const SpaceTimeGrid& g, double s) override {
    s_ = s;
    grid_ = g;
    prepare_impl(g, s);
  }

  double implicit_step(std::size_t i, double tau, double v) const override {
    if (v <= 0.0) return 0.0;
    auto g = [&](double y) {
      const auto [rv, dr] = eval(i, y);
      return std::pair<double, double>{y + tau * rv - v, 1.0 + tau * dr};
    };
    return detail::safeguarded_newton(g, 0.0, v, v, "decay", s_, grid_.x(i));
  }

  double trapezoid_step(std::size_t i, double tau, double v) const override {
    if (v <= 0.0) return 0.0;
    const double rhs = v - 0.5 * tau * eval(i, v).first;
    if (!(rhs >= 0.0)) return implicit_step(i, tau, v);
    auto g = [&](double y) {
      const auto [rv, dr] = eval(i, y);
      return std::pair<double, double>{y + 0.5 * tau * rv - rhs, 1.0 + 0.5 * tau * dr};
    };
    return detail::safeguarded_newton(g, 0.0, v, rhs, "decay", s_, grid_.x(i));
  }

  virtual std::pair<double, double> eval(std::size_t i, double y) const = 0;

protected:
  virtual void prepare_impl(const SpaceTimeGrid& g, double s) = 0;
  double s_ = 0.0;
  SpaceTimeGrid grid_{};
};

inline std::vector<double> singular_points_1d(const AdditiveFunctional& K) {
  std::vector<double> out;
  for (const auto& p : K.singularities()) out.push_back(p[0]);
  return out;
}

/// k psi for a quadratic or stable mechanism, with cell-averaged power-form coefficients
/// k F I^p; general mechanisms average k psi itself over the cell quadrature.
class MechanismReaction : public DecayReaction {
public:
  MechanismReaction(const BranchingMechanism& mech, const AdditiveFunctional& K, std::vector<double> extra_sing = {})
      : mech_(mech), K_(K), sing_(singular_points_1d(K)) {
    for (double p : extra_sing) sing_.push_back(p);
  }

  std::pair<double, double> eval(std::size_t i, double y) const override {
    if (general_) {
      double v = 0.0;
      double dv = 0.0;
      const auto& rule = rules_[i];
      for (std::size_t q = 0; q < rule.x.size(); ++q) {
        const double k = K_.density(s_, point1(rule.x[q]));
        if (k == 0.0) continue;
        const auto [pv, pd] = mech_.eval_with_derivative(s_, point1(rule.x[q]), y);
        v += rule.w[q] * k * pv;
        dv += rule.w[q] * k * pd;
      }
      return {v, dv};
    }
    const double c1 = c1_[i];
    const double cp = cp_[i];
    if (y <= 0.0) return {0.0, c1};
    const double yp1 = std::pow(y, power_ - 1.0);
    return {c1 * y + cp * yp1 * y, c1 + power_ * cp * yp1};
  }

private:
  void prepare_impl(const SpaceTimeGrid& g, double s) override {
    if (rules_.empty()) {
      rules_.resize(g.nx);
      for (std::size_t i = 0; i < g.nx; ++i) rules_[i] = detail::cell_rule(g, i, sing_);
    }
    if (std::holds_alternative<GeneralBranching>(mech_.variant())) {
      general_ = true;
      return;
    }
    double a = 0.0;
    double c = 0.0;
    if (const auto* q = std::get_if<QuadraticBranching>(&mech_.variant())) {
      a = q->a;
      c = q->b;
      power_ = 2.0;
    } else {
      const auto& st = std::get<StableBranching>(mech_.variant());
      c = st.scale;
      power_ = 1.0 + st.beta;
    }
    c1_.assign(g.nx, 0.0);
    cp_.assign(g.nx, 0.0);
    for (std::size_t i = 0; i < g.nx; ++i) {
      const auto& rule = rules_[i];
      double s1 = 0.0;
      double sp = 0.0;
      for (std::size_t q = 0; q < rule.x.size(); ++q) {
        const Point x = point1(rule.x[q]);
        const double k = K_.density(s, x);
        if (k == 0.0) continue;
        const double f = mech_.factor(s, x);
        const double in = mech_.inner(s, x);
        s1 += rule.w[q] * k * f * in;
        sp += rule.w[q] * k * f * std::pow(in, power_);
      }
      c1_[i] = a * s1;
      cp_[i] = c * sp;
    }
  }

  BranchingMechanism mech_;
  AdditiveFunctional K_;
  std::vector<double> sing_;
  std::vector<detail::CellRule> rules_;
  bool general_ = false;
  double power_ = 2.0;
  std::vector<double> c1_;
  std::vector<double> cp_;
};

/// avg(k) * g(y) for a spatially homogeneous nonlinearity g.
class ScalarDecayReaction : public DecayReaction {
public:
  using Fn = std::function<std::pair<double, double>(double)>;
  ScalarDecayReaction(Fn g, const AdditiveFunctional& K) : g_(std::move(g)), K_(K), sing_(singular_points_1d(K)) {}

  std::pair<double, double> eval(std::size_t i, double y) const override {
    const auto [v, d] = g_(y);
    return {kbar_[i] * v, kbar_[i] * d};
  }

  double kbar(std::size_t i) const { return kbar_[i]; }

private:
  void prepare_impl(const SpaceTimeGrid& g, double s) override {
    if (rules_.empty()) {
      rules_.resize(g.nx);
      for (std::size_t i = 0; i < g.nx; ++i) rules_[i] = detail::cell_rule(g, i, sing_);
    }
    kbar_.assign(g.nx, 0.0);
    for (std::size_t i = 0; i < g.nx; ++i)
      for (std::size_t q = 0; q < rules_[i].x.size(); ++q) kbar_[i] += rules_[i].w[q] * K_.density(s, point1(rules_[i].x[q]));
  }

  Fn g_;
  AdditiveFunctional K_;
  std::vector<double> sing_;
  std::vector<detail::CellRule> rules_;
  std::vector<double> kbar_;
};

/// Growth reaction of the u equation: y' = -kbar (phi(y) - y) backwards, y in [v, 1].
class OffspringReaction : public Reaction {
public:
  OffspringReaction(OffspringLaw law, double rate, const AdditiveFunctional& K)
      : law_(std::move(law)), rate_(rate), K_(K), sing_(singular_points_1d(K)) {}

  void prepare(const SpaceTimeGrid& g, double s) override {
    s_ = s;
    grid_ = g;
    if (rules_.empty()) {
      rules_.resize(g.nx);
      for (std::size_t i = 0; i < g.nx; ++i) rules_[i] = detail::cell_rule(g, i, sing_);
    }
    kbar_.assign(g.nx, 0.0);
    for (std::size_t i = 0; i < g.nx; ++i)
      for (std::size_t q = 0; q < rules_[i].x.size(); ++q)
        kbar_[i] += rate_ * rules_[i].w[q] * K_.density(s, point1(rules_[i].x[q]));
  }

  double implicit_step(std::size_t i, double tau, double v) const override {
    const double c = kbar_[i];
    if (c == 0.0 || v >= 1.0) return std::min(v, 1.0);
    auto g = [&](double y) {
      const double ph = law_.pgf(y);
      const double dph = law_.pgf_derivative(y);
      return std::pair<double, double>{y - tau * c * (ph - y) - v, 1.0 - tau * c * (dph - 1.0)};
    };
    return detail::safeguarded_newton(g, std::max(v, 0.0), 1.0, v, "offspring", s_, grid_.x(i));
  }

  double trapezoid_step(std::size_t i, double tau, double v) const override {
    const double c = kbar_[i];
    if (c == 0.0 || v >= 1.0) return std::min(v, 1.0);
    const double rhs = v + 0.5 * tau * c * (law_.pgf(v) - v);
    if (!(rhs <= 1.0)) return implicit_step(i, tau, v);
    auto g = [&](double y) {
      const double ph = law_.pgf(y);
      const double dph = law_.pgf_derivative(y);
      return std::pair<double, double>{y - 0.5 * tau * c * (ph - y) - rhs, 1.0 - 0.5 * tau * c * (dph - 1.0)};
    };
    return detail::safeguarded_newton(g, std::max(v, 0.0), 1.0, rhs, "offspring", s_, grid_.x(i));
  }

private:
  OffspringLaw law_;
  double rate_;
  AdditiveFunctional K_;
  std::vector<double> sing_;
  std::vector<detail::CellRule> rules_;
  std::vector<double> kbar_;
  double s_ = 0.0;
  SpaceTimeGrid grid_{};
};

/// Linear decay y' = -c_i y backwards, solved exactly.
class LinearReaction : public Reaction {
public:
  LinearReaction(SpaceTimeFn a, const AdditiveFunctional& K) : a_(std::move(a)), K_(K), sing_(singular_points_1d(K)) {}

  void prepare(const SpaceTimeGrid& g, double s) override {
    if (rules_.empty()) {
      rules_.resize(g.nx);
      for (std::size_t i = 0; i < g.nx; ++i) rules_[i] = detail::cell_rule(g, i, sing_);
    }
    c_.assign(g.nx, 0.0);
    for (std::size_t i = 0; i < g.nx; ++i)
      for (std::size_t q = 0; q < rules_[i].x.size(); ++q) {
        const Point x = point1(rules_[i].x[q]);
        const double k = K_.density(s, x);
        if (k != 0.0) c_[i] += rules_[i].w[q] * k * a_(s, x);
      }
  }

  double implicit_step(std::size_t i, double tau, double v) const override { return v * std::exp(-tau * c_[i]); }

private:
  SpaceTimeFn a_;
  AdditiveFunctional K_;
  std::vector<double> sing_;
  std::vector<detail::CellRule> rules_;
  std::vector<double> c_;
};

enum class LeftRule { Neumann, Dirichlet, Entrance };
enum class RightRule { Neumann, Dirichlet, Frozen };

/// The motion's generator on the grid.
struct GridOperator {
  bool identity = false;
  LeftRule left = LeftRule::Neumann;
  RightRule right = RightRule::Neumann;
  std::function<double(double, double)> drift;  // empty: none
};

inline GridOperator grid_operator(const MotionModel& motion, const SpaceTimeGrid& g,
                                  const std::optional<GridDrift>& extra = {}) {
  GridOperator op;
  if (g.is_homogeneous()) {
    if (motion.kind() == MotionKind::KilledBrownianMotion1d || motion.kind() == MotionKind::Bessel3)
      throw UnsupportedError("the homogeneous sentinel needs a translation-invariant motion");
    op.identity = true;
    return op;
  }
  if (motion.dim() != 1) throw UnsupportedError("grid solvers are one-dimensional");
  switch (motion.kind()) {
  case MotionKind::AlphaStable:
    throw UnsupportedError("alpha-stable motion has no grid generator; use the homogeneous sentinel or Monte Carlo");
  case MotionKind::BrownianMotion:
    if (g.boundary == Boundary::absorbing_at_zero) {
      if (!extra) throw UnsupportedError("absorbing boundary needs killed BM, Bessel(3) or an h-drift");
      op.left = extra->entrance_at_left ? LeftRule::Entrance : LeftRule::Dirichlet;
      op.right = RightRule::Frozen;
    } else if (g.boundary == Boundary::truncated_with_decay) {
      op.left = LeftRule::Dirichlet;
      op.right = RightRule::Dirichlet;
    }
    break;
  case MotionKind::KilledBrownianMotion1d:
    if (g.x_min != 0.0) throw DomainError("killed BM grids start at x = 0");
    if (g.boundary == Boundary::free) throw DomainError("killed BM needs an absorbing or truncated boundary");
    op.left = (extra && extra->entrance_at_left) ? LeftRule::Entrance : LeftRule::Dirichlet;
    op.right = g.boundary == Boundary::truncated_with_decay ? RightRule::Dirichlet : RightRule::Frozen;
    break;
  case MotionKind::Bessel3:
    if (g.x_min != 0.0) throw DomainError("Bessel(3) grids start at x = 0");
    op.left = LeftRule::Entrance;
    op.right = g.boundary == Boundary::truncated_with_decay ? RightRule::Dirichlet : RightRule::Frozen;
    op.drift = [](double, double x) { return 1.0 / x; };
    break;
  }
  if (extra) {
    if (op.drift) {
      auto d0 = op.drift;
      auto d1 = extra->b;
      op.drift = [d0, d1](double s, double x) { return d0(s, x) + d1(s, x); };
    } else {
      op.drift = extra->b;
    }
  }
  return op;
}

/// Tridiagonal system a_i y_{i-1} + b_i y_i + c_i y_{i+1} = d_i (Thomas algorithm).
inline void solve_tridiagonal(std::vector<double>& a, std::vector<double>& b, std::vector<double>& c,
                              std::vector<double>& d) {
  const std::size_t n = b.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double m = a[i] / b[i - 1];
    b[i] -= m * c[i - 1];
    d[i] -= m * d[i - 1];
  }
  d[n - 1] /= b[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) d[i] = (d[i] - c[i] * d[i + 1]) / b[i];
}

/// One backward diffusion step v <- (I - theta tau L)^{-1} (I + (1 - theta) tau L) v.
inline void diffusion_step(const GridOperator& op, const SpaceTimeGrid& g, double s_mid, double tau, double theta,
                           std::vector<double>& v) {
  if (op.identity) return;
  const std::size_t n = g.nx;
  const double h = g.h();
  const double ih2 = 1.0 / (h * h);
  // L as lower/diag/upper coefficients per row
  std::vector<double> lo(n, 0.0), di(n, 0.0), up(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    double l = 0.5 * ih2;
    double u = 0.5 * ih2;
    double d = -ih2;
    if (op.drift) {
      const double b = op.drift(s_mid, g.x(i));
      if (std::abs(b) * h <= 1.0) {
        l -= 0.5 * b / h;
        u += 0.5 * b / h;
      } else if (b > 0.0) {
        u += b / h;
        d -= b / h;
      } else {
        l -= b / h;
        d += b / h;
      }
    }
    lo[i] = l;
    di[i] = d;
    up[i] = u;
  }
  bool fixed_left = false;
  bool fixed_right = false;
  switch (op.left) {
  case LeftRule::Neumann: di[0] = -ih2; up[0] = ih2; break;
  case LeftRule::Entrance: di[0] = -3.0 * ih2; up[0] = 3.0 * ih2; break;
  case LeftRule::Dirichlet: fixed_left = true; break;
  }
  switch (op.right) {
  case RightRule::Neumann: di[n - 1] = -ih2; lo[n - 1] = ih2; break;
  case RightRule::Frozen: break;
  case RightRule::Dirichlet: fixed_right = true; break;
  }
  std::vector<double> rhs(n);
  for (std::size_t i = 0; i < n; ++i) {
    double lv = di[i] * v[i];
    if (i > 0) lv += lo[i] * v[i - 1];
    if (i + 1 < n) lv += up[i] * v[i + 1];
    rhs[i] = v[i] + (1.0 - theta) * tau * lv;
  }
  std::vector<double> a(n), b(n), c(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = -theta * tau * lo[i];
    b[i] = 1.0 - theta * tau * di[i];
    c[i] = -theta * tau * up[i];
  }
  if (fixed_left) {
    a[0] = 0.0; b[0] = 1.0; c[0] = 0.0; rhs[0] = 0.0;
  }
  if (fixed_right) {
    a[n - 1] = 0.0; b[n - 1] = 1.0; c[n - 1] = 0.0; rhs[n - 1] = 0.0;
  }
  solve_tridiagonal(a, b, c, rhs);
  v.swap(rhs);
}

enum class Clamp { NonNegative, UnitInterval, None };

/// One backward sweep from t to r on a fixed grid.
inline GridFunction sweep(const SpaceTimeGrid& g, const SpaceFn& terminal, Reaction& reaction,
                          const GridOperator& op, const SolveOptions& opts, Clamp clamp,
                          const std::function<double(double)>& terminal_map = {}) {
  GridFunction out;
  out.grid = g;
  std::vector<double> v(g.nx);
  for (std::size_t i = 0; i < g.nx; ++i) {
    double f = terminal(point1(g.x(i)));
    if (!std::isfinite(f)) throw DomainError("terminal data is not finite at x=" + std::to_string(g.x(i)));
    if (clamp != Clamp::None && f < 0.0) throw DomainError("terminal data must be nonnegative");
    v[i] = terminal_map ? terminal_map(f) : f;
  }
  std::vector<std::vector<double>> rows;
  if (opts.history) rows.assign(g.nt + 1, {});
  std::vector<double> terminal_row = v;
  if (opts.history) rows[g.nt] = v;
  const double tau = g.tau();
  bool prepared = false;
  const bool strang = opts.splitting == Splitting::Strang;
  const double clamp_tol = opts.tol;
  for (std::size_t n = g.nt; n-- > 0;) {
    const double s0 = g.time(n);
    const double s1 = g.time(n + 1);
    const bool startup = static_cast<int>(g.nt - 1 - n) < opts.rannacher_steps;
    const double theta = startup ? 1.0 : 0.5;
    if (strang) {
      if (opts.coefficients_time_dependent || !prepared) reaction.prepare(g, s1);
      prepared = true;
      for (std::size_t i = 0; i < g.nx; ++i) v[i] = reaction.trapezoid_step(i, 0.5 * tau, v[i]);
      if (startup) {
        diffusion_step(op, g, 0.5 * (s0 + s1), 0.5 * tau, 1.0, v);
        diffusion_step(op, g, 0.5 * (s0 + s1), 0.5 * tau, 1.0, v);
      } else {
        diffusion_step(op, g, 0.5 * (s0 + s1), tau, theta, v);
      }
      if (opts.coefficients_time_dependent) reaction.prepare(g, s0);
      for (std::size_t i = 0; i < g.nx; ++i) v[i] = reaction.trapezoid_step(i, 0.5 * tau, v[i]);
    } else {
      diffusion_step(op, g, 0.5 * (s0 + s1), tau, theta, v);
      if (opts.coefficients_time_dependent || !prepared) reaction.prepare(g, s0);
      prepared = true;
      for (std::size_t i = 0; i < g.nx; ++i) v[i] = reaction.implicit_step(i, tau, v[i]);
    }
    for (std::size_t i = 0; i < g.nx; ++i) {
      if (!std::isfinite(v[i]))
        throw SolverError("non-finite value at s=" + std::to_string(s0) + ", x=" + std::to_string(g.x(i)));
      if (clamp == Clamp::None) continue;
      if (v[i] < -clamp_tol)
        throw SolverError("negative undershoot " + std::to_string(v[i]) + " at s=" + std::to_string(s0) +
                          ", x=" + std::to_string(g.x(i)));
      v[i] = std::max(v[i], 0.0);
      if (clamp == Clamp::UnitInterval) {
        if (v[i] > 1.0 + clamp_tol) throw SolverError("u left [0, 1] at x=" + std::to_string(g.x(i)));
        v[i] = std::min(v[i], 1.0);
      }
    }
    if (opts.history) rows[n] = v;
  }
  if (opts.history) {
    out.rows = std::move(rows);
    out.row_index.resize(g.nt + 1);
    for (std::size_t n = 0; n <= g.nt; ++n) out.row_index[n] = n;
  } else {
    out.rows = {v, terminal_row};
    out.row_index = {0, g.nt};
  }
  return out;
}

/// max_i |a(r, x_i) - b(r, x_i)| over the nodes of the coarser grid a, divided by max(1, |b|).
inline double refinement_distance(const GridFunction& coarse, const GridFunction& fine) {
  double diff = 0.0;
  double scale = 1.0;
  for (std::size_t i = 0; i < coarse.grid.nx; ++i) {
    const double x = coarse.grid.x(i);
    const double b = fine.interpolate_r(x);
    diff = std::max(diff, std::abs(coarse.at_r()[i] - b));
    scale = std::max(scale, std::abs(b));
  }
  return diff / scale;
}

/// Solve on g, then on successive halvings until the r-slice change is below tol.
template <class MakeReaction>
GridFunction solve_refined(const SpaceTimeGrid& grid, const SpaceFn& terminal, MakeReaction&& make_reaction,
                           const MotionModel& motion, const SolveOptions& opts, Clamp clamp,
                           const std::function<double(double)>& terminal_map = {}) {
  if (!(opts.tol > 0.0)) throw DomainError("solver tolerance must be positive");
  grid.validate();
  SpaceTimeGrid g = grid;
  auto run = [&](const SpaceTimeGrid& gg) {
    auto reaction = make_reaction();
    const GridOperator op = grid_operator(motion, gg, opts.drift);
    return sweep(gg, terminal, *reaction, op, opts, clamp, terminal_map);
  };
  GridFunction prev = run(g);
  for (int level = 1; level <= opts.max_refinements; ++level) {
    g = g.refined();
    GridFunction next = run(g);
    const double change = refinement_distance(prev, next);
    next.refinement_change = change;
    next.refinements = level;
    if (change < opts.tol) return next;
    prev = std::move(next);
  }
  throw RefinementError("no grid convergence after " + std::to_string(opts.max_refinements) +
                        " refinements; last change " + std::to_string(prev.refinement_change));
}

} // namespace detail

using detail::GridOperator;

/// v(r, x) = Pi_{r,x}[f(xi_t) - int_r^t psi(v) dK]; killed motions give the Pi^0 variant.
inline GridFunction solve_v(const SpaceFn& f, const BranchingMechanism& mech, const AdditiveFunctional& K,
                            const MotionModel& motion, const SpaceTimeGrid& grid, const SolveOptions& opts = {}) {
  SolveOptions o = opts;
  o.coefficients_time_dependent = o.coefficients_time_dependent || K.time_dependent();
  std::vector<double> extra;
  if (o.drift && o.drift->entrance_at_left) extra.push_back(grid.x_min);
  return detail::solve_refined(
      grid, f, [&] { return std::make_unique<detail::MechanismReaction>(mech, K, extra); }, motion, o,
      detail::Clamp::NonNegative);
}

/// u(r, x) = Pi_{r,x}[e^{-f(xi_t)} + int_r^t (lambda/beta) (phi(u) - u) dK].
inline GridFunction solve_u(const SpaceFn& f, const OffspringLaw& law, double rate, const AdditiveFunctional& K,
                            const MotionModel& motion, const SpaceTimeGrid& grid, const SolveOptions& opts = {}) {
  if (!(rate >= 0.0)) throw DomainError("solve_u needs a nonnegative rate");
  SolveOptions o = opts;
  o.coefficients_time_dependent = o.coefficients_time_dependent || K.time_dependent();
  return detail::solve_refined(
      grid, f, [&] { return std::make_unique<detail::OffspringReaction>(law, rate, K); }, motion, o,
      detail::Clamp::UnitInterval, [](double x) { return std::exp(-x); });
}

/// v_beta with terminal data (1 - e^{-beta f}) / beta and reaction -psi_beta(v_beta).
inline GridFunction solve_vbeta(const SpaceFn& f, const RescaledFamily& family, const AdditiveFunctional& K,
                                const MotionModel& motion, const SpaceTimeGrid& grid,
                                const SolveOptions& opts = {}) {
  SolveOptions o = opts;
  o.coefficients_time_dependent = o.coefficients_time_dependent || K.time_dependent();
  const double beta = family.beta;
  auto g = [family](double y) {
    return std::pair<double, double>{psi_beta_eval(family, y), psi_beta_derivative(family, y)};
  };
  return detail::solve_refined(
      grid, f, [&] { return std::make_unique<detail::ScalarDecayReaction>(g, K); }, motion, o,
      detail::Clamp::NonNegative, [beta](double x) { return -std::expm1(-beta * x) / beta; });
}

/// w_f(r, x) = Pi_{r,x}[f(xi_t) - int_r^t w_f a dK].
inline GridFunction solve_moment(const SpaceFn& f, const SpaceTimeFn& a, const AdditiveFunctional& K,
                                 const MotionModel& motion, const SpaceTimeGrid& grid, const SolveOptions& opts = {}) {
  SolveOptions o = opts;
  o.coefficients_time_dependent = o.coefficients_time_dependent || K.time_dependent();
  SpaceTimeFn coef = a ? a : SpaceTimeFn([](double, const Point&) { return 0.0; });
  return detail::solve_refined(
      grid, f, [&] { return std::make_unique<detail::LinearReaction>(coef, K); }, motion, o, detail::Clamp::None);
}

} // namespace superproc
