#pragma once

// Branching mechanisms psi^s(x, z) = a z + b z^2 + \int (e^{-zu} - 1 + zu) l(du),
// offspring laws q_beta and the rescaled families whose psi_beta reproduces psi.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "superproc/common.hpp"
#include "superproc/errors.hpp"
#include "superproc/rng.hpp"

namespace superproc {

/// Finite atomic approximation of the Levy measure l(du).
struct SpectralMeasure {
  struct Atom {
    double u = 1.0;
    double mass = 0.0;
  };
  std::vector<Atom> atoms;

  void validate() const {
    for (const auto& a : atoms) {
      if (!(a.u > 0.0) || !(a.mass >= 0.0) || !std::isfinite(a.u) || !std::isfinite(a.mass))
        throw DomainError("spectral measure atoms need u > 0 and finite mass >= 0");
    }
  }

  /// \int u ^ u^2 l(du)
  double moment() const {
    double m = 0.0;
    for (const auto& a : atoms) m += a.mass * std::min(a.u, a.u * a.u);
    return m;
  }
};

struct QuadraticBranching {
  double a = 0.0;  // linear (subcritical) part
  double b = 1.0;
};

struct StableBranching {
  double beta = 1.0;  // psi(z) = scale * z^{1 + beta}
  double scale = 1.0;
};

struct GeneralBranching {
  SpaceTimeFn a;  // empty means 0
  SpaceTimeFn b;
  SpectralMeasure ell;
};

/// psi^s(x, z) = factor(s, x) * base(s, x, inner(s, x) * z). The factor and the inner
/// scaling default to 1; the h-transform sets inner = h.
class BranchingMechanism {
public:
  using Variant = std::variant<QuadraticBranching, StableBranching, GeneralBranching>;

  static BranchingMechanism quadratic(double b, double a = 0.0) {
    if (!(b >= 0.0) || !(a >= 0.0)) throw DomainError("quadratic branching needs a, b >= 0");
    return BranchingMechanism(QuadraticBranching{a, b});
  }
  static BranchingMechanism stable(double beta, double scale = 1.0) {
    if (!(beta > 0.0 && beta <= 1.0)) throw DomainError("stable branching needs 0 < beta <= 1");
    if (!(scale >= 0.0)) throw DomainError("stable branching needs scale >= 0");
    return BranchingMechanism(StableBranching{beta, scale});
  }
  static BranchingMechanism general(SpaceTimeFn a, SpaceTimeFn b, SpectralMeasure ell) {
    ell.validate();
    return BranchingMechanism(GeneralBranching{std::move(a), std::move(b), std::move(ell)});
  }

  const Variant& variant() const { return variant_; }
  bool spatially_homogeneous() const {
    return !factor_ && !inner_ && !std::holds_alternative<GeneralBranching>(variant_);
  }
  bool has_factor() const { return static_cast<bool>(factor_); }
  bool has_inner() const { return static_cast<bool>(inner_); }

  /// Multiply psi by a space-time factor.
  BranchingMechanism with_factor(SpaceTimeFn factor) const {
    BranchingMechanism out = *this;
    if (factor_) {
      auto prev = factor_;
      out.factor_ = [prev, factor](double s, const Point& x) { return prev(s, x) * factor(s, x); };
    } else {
      out.factor_ = std::move(factor);
    }
    return out;
  }

  /// psi_h(s, x, z) := psi(s, x, h(s, x) z).
  BranchingMechanism with_inner_scale(SpaceTimeFn h) const {
    BranchingMechanism out = *this;
    if (inner_) {
      auto prev = inner_;
      out.inner_ = [prev, h](double s, const Point& x) { return prev(s, x) * h(s, x); };
    } else {
      out.inner_ = std::move(h);
    }
    return out;
  }

  double factor(double s, const Point& x) const { return factor_ ? factor_(s, x) : 1.0; }
  double inner(double s, const Point& x) const { return inner_ ? inner_(s, x) : 1.0; }

  /// psi^s(x, z) and d/dz psi^s(x, z).
  std::pair<double, double> eval_with_derivative(double s, const Point& x, double z) const {
    if (!(z >= 0.0)) throw DomainError("psi is defined for z >= 0");
    const double c = inner(s, x);
    const double f = factor(s, x);
    const auto [v, dv] = base(s, x, c * z);
    return {f * v, f * c * dv};
  }

  double operator()(double s, const Point& x, double z) const {
    return eval_with_derivative(s, x, z).first;
  }

  /// The linear part a^s(x) of the representation, after factor and inner scaling.
  double linear_coefficient(double s, const Point& x) const {
    double a = 0.0;
    if (const auto* q = std::get_if<QuadraticBranching>(&variant_)) a = q->a;
    if (const auto* g = std::get_if<GeneralBranching>(&variant_)) a = g->a ? g->a(s, x) : 0.0;
    return factor(s, x) * inner(s, x) * a;
  }

  std::string describe() const {
    std::string out;
    if (const auto* q = std::get_if<QuadraticBranching>(&variant_)) {
      out = "quadratic(a=" + std::to_string(q->a) + ", b=" + std::to_string(q->b) + ")";
    } else if (const auto* st = std::get_if<StableBranching>(&variant_)) {
      out = "stable(beta=" + std::to_string(st->beta) + ", scale=" + std::to_string(st->scale) + ")";
    } else {
      out = "general";
    }
    if (factor_) out += " * factor(s,x)";
    if (inner_) out += " o inner(s,x)";
    return out;
  }

private:
  explicit BranchingMechanism(Variant v) : variant_(std::move(v)) {}

  std::pair<double, double> base(double s, const Point& x, double y) const {
    if (const auto* q = std::get_if<QuadraticBranching>(&variant_)) {
      return {q->a * y + q->b * y * y, q->a + 2.0 * q->b * y};
    }
    if (const auto* st = std::get_if<StableBranching>(&variant_)) {
      if (y == 0.0) return {0.0, 0.0};
      const double yb = std::pow(y, st->beta);
      return {st->scale * yb * y, st->scale * (1.0 + st->beta) * yb};
    }
    const auto& g = std::get<GeneralBranching>(variant_);
    const double a = g.a ? g.a(s, x) : 0.0;
    const double b = g.b ? g.b(s, x) : 0.0;
    double v = a * y + b * y * y;
    double dv = a + 2.0 * b * y;
    for (const auto& atom : g.ell.atoms) {
      const double w = y * atom.u;
      // e^{-w} - 1 + w, kept accurate for small w
      const double term = w < 1e-4 ? w * w * (0.5 - w / 6.0 + w * w / 24.0) : std::expm1(-w) + w;
      v += atom.mass * term;
      dv += atom.mass * atom.u * (-std::expm1(-w));
    }
    return {v, dv};
  }

  Variant variant_;
  SpaceTimeFn factor_;
  SpaceTimeFn inner_;
};

inline double psi_eval(const BranchingMechanism& mech, double s, const Point& x, double z) {
  return mech(s, x, z);
}

/// Probability law on {0, 1, 2, ...}: dense coefficients up to n_max plus optional
/// sparse atoms beyond it (used to keep the mean exact after truncation).
class OffspringLaw {
public:
  struct Pgf {
    std::function<double(double)> value;
    std::function<double(double)> derivative;
  };

  OffspringLaw(std::vector<double> coeffs, std::vector<std::pair<std::uint64_t, double>> tail_atoms = {},
               std::optional<Pgf> closed_form = {}, double truncated_mass = 0.0)
      : coeffs_(std::move(coeffs)), tail_atoms_(std::move(tail_atoms)),
        closed_form_(std::move(closed_form)), truncated_mass_(truncated_mass) {
    double total = 0.0;
    mean_ = 0.0;
    for (std::size_t n = 0; n < coeffs_.size(); ++n) {
      if (!(coeffs_[n] >= 0.0)) throw DomainError("offspring coefficients must be nonnegative");
      total += coeffs_[n];
      mean_ += static_cast<double>(n) * coeffs_[n];
    }
    for (const auto& [n, p] : tail_atoms_) {
      if (!(p >= 0.0) || n < coeffs_.size()) throw DomainError("invalid offspring tail atom");
      total += p;
      mean_ += static_cast<double>(n) * p;
    }
    if (std::abs(total - 1.0) > 1e-12) throw DomainError("offspring law must sum to 1");
    if (mean_ > 1.0 + 1e-12) throw DomainError("offspring law must have mean <= 1");
    cumulative_.reserve(coeffs_.size() + tail_atoms_.size());
    double c = 0.0;
    for (double p : coeffs_) cumulative_.push_back(c += p);
    for (const auto& [n, p] : tail_atoms_) cumulative_.push_back(c += p);
  }

  static OffspringLaw critical_binary() { return OffspringLaw({0.5, 0.0, 0.5}); }
  static OffspringLaw degenerate_one() { return OffspringLaw({0.0, 1.0}); }

  const std::vector<double>& coeffs() const { return coeffs_; }
  const std::vector<std::pair<std::uint64_t, double>>& tail_atoms() const { return tail_atoms_; }
  double mean() const { return mean_; }
  /// alpha = mean - 1 <= 0
  double alpha() const { return mean_ - 1.0; }
  /// Probability mass of the exact law beyond the dense truncation that was re-placed.
  double truncated_mass() const { return truncated_mass_; }
  bool has_closed_form() const { return closed_form_.has_value(); }

  double probability(std::uint64_t n) const {
    if (n < coeffs_.size()) return coeffs_[n];
    for (const auto& [m, p] : tail_atoms_)
      if (m == n) return p;
    return 0.0;
  }

  /// phi(z) = sum_n q_n z^n from the stored (truncated) coefficients.
  double series_pgf(double z) const {
    double v = 0.0;
    for (std::size_t n = coeffs_.size(); n-- > 0;) v = v * z + coeffs_[n];
    for (const auto& [n, p] : tail_atoms_) v += p * std::pow(z, static_cast<double>(n));
    return v;
  }

  double series_pgf_derivative(double z) const {
    double v = 0.0;
    for (std::size_t n = coeffs_.size(); n-- > 1;) v = v * z + static_cast<double>(n) * coeffs_[n];
    for (const auto& [n, p] : tail_atoms_)
      v += static_cast<double>(n) * p * std::pow(z, static_cast<double>(n) - 1.0);
    return v;
  }

  /// The generating function of the target law (closed form when known).
  double pgf(double z) const { return closed_form_ ? closed_form_->value(z) : series_pgf(z); }
  double pgf_derivative(double z) const {
    return closed_form_ ? closed_form_->derivative(z) : series_pgf_derivative(z);
  }

  std::uint64_t sample(RandomStream& rng) const {
    const double u = rng.uniform() * cumulative_.back();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    std::size_t idx = static_cast<std::size_t>(it - cumulative_.begin());
    if (idx >= cumulative_.size()) idx = cumulative_.size() - 1;
    if (idx < coeffs_.size()) return idx;
    return tail_atoms_[idx - coeffs_.size()].first;
  }

private:
  std::vector<double> coeffs_;
  std::vector<std::pair<std::uint64_t, double>> tail_atoms_;
  std::optional<Pgf> closed_form_;
  double truncated_mass_ = 0.0;
  double mean_ = 0.0;
  std::vector<double> cumulative_;
};

inline std::uint64_t sample_offspring(const OffspringLaw& law, RandomStream& rng) {
  return law.sample(rng);
}

/// Offspring law q_beta with the multiplier lambda_beta applied to the branching clock;
/// the particle clock runs at (lambda_beta / beta) K.
struct RescaledFamily {
  double beta = 1.0;
  OffspringLaw law = OffspringLaw::critical_binary();
  double rate_multiplier = 1.0;

  bool branches() const { return !(law.coeffs().size() == 2 && law.coeffs()[1] == 1.0); }
};

enum class TailPolicy {
  PreserveMean,  // re-place the truncated tail on two adjacent counts with the exact tail mean
  FoldIntoZero,  // add the truncated tail to q(0); lowers the mean
};

struct FamilyOptions {
  std::size_t n_max = 10000;
  TailPolicy tail = TailPolicy::PreserveMean;
};

/// pgf phi(z) = z + (1 - z)^{1+beta} / (1 + beta) of the critical stable offspring law.
inline OffspringLaw stable_offspring_law(double beta, const FamilyOptions& opts = {}) {
  if (!(beta > 0.0 && beta < 1.0)) throw DomainError("stable offspring law needs 0 < beta < 1");
  const std::size_t n_max = std::max<std::size_t>(opts.n_max, 2);
  std::vector<double> q(n_max + 1, 0.0);
  q[0] = 1.0 / (1.0 + beta);
  q[2] = 0.5 * beta;
  for (std::size_t n = 2; n < n_max; ++n)
    q[n + 1] = q[n] * (static_cast<double>(n) - 1.0 - beta) / (static_cast<double>(n) + 1.0);
  double mass = 0.0;
  double mean = 0.0;
  for (std::size_t n = 0; n <= n_max; ++n) {
    if (q[n] < 0.0) throw Error("internal: negative stable offspring coefficient");
    mass += q[n];
    mean += static_cast<double>(n) * q[n];
  }
  const double tail_mass = 1.0 - mass;
  const double tail_mean = 1.0 - mean;
  if (tail_mass < -1e-15 || tail_mean < -1e-12) throw Error("internal: negative truncation residue");
  std::vector<std::pair<std::uint64_t, double>> tail_atoms;
  if (tail_mass > 0.0) {
    if (opts.tail == TailPolicy::FoldIntoZero || !(tail_mean > 0.0)) {
      q[0] += tail_mass;
    } else {
      const double target = tail_mean / tail_mass;
      auto lo = static_cast<std::uint64_t>(std::floor(target));
      lo = std::max<std::uint64_t>(lo, n_max + 1);
      double p_hi = tail_mean - tail_mass * static_cast<double>(lo);
      p_hi = std::clamp(p_hi, 0.0, tail_mass);
      double p_lo = tail_mass - p_hi;
      tail_atoms.emplace_back(lo, p_lo);
      tail_atoms.emplace_back(lo + 1, p_hi);
      // guard the mean against rounding above 1
      double m = 0.0;
      for (std::size_t n = 0; n <= n_max; ++n) m += static_cast<double>(n) * q[n];
      m += static_cast<double>(lo) * p_lo + static_cast<double>(lo + 1) * p_hi;
      if (m > 1.0) {
        const double excess = (m - 1.0) / static_cast<double>(lo + 1);
        tail_atoms[1].second = std::max(0.0, p_hi - excess);
        q[0] += p_hi - tail_atoms[1].second;
      }
    }
  }
  // renormalise rounding so that the law sums to one within 1e-12
  double total = 0.0;
  for (double p : q) total += p;
  for (const auto& [n, p] : tail_atoms) total += p;
  q[0] += 1.0 - total;
  OffspringLaw::Pgf pgf{
      [beta](double z) { return z + std::pow(1.0 - z, 1.0 + beta) / (1.0 + beta); },
      [beta](double z) { return 1.0 - std::pow(1.0 - z, beta); }};
  return OffspringLaw(std::move(q), std::move(tail_atoms), std::move(pgf), std::max(tail_mass, 0.0));
}

/// Offspring family whose psi_beta equals the mechanism's psi for every beta.
inline RescaledFamily offspring_family(const BranchingMechanism& mech, double beta,
                                       const FamilyOptions& opts = {}) {
  if (!(beta > 0.0 && beta <= 1.0)) throw DomainError("family beta must be in (0, 1]");
  if (mech.has_factor() || mech.has_inner())
    throw UnsupportedError("offspring families need a spatially homogeneous mechanism");
  if (const auto* q = std::get_if<QuadraticBranching>(&mech.variant())) {
    const double lambda = q->a * beta + 2.0 * q->b;
    if (lambda == 0.0) return {beta, OffspringLaw::degenerate_one(), 1.0};
    const double q2 = q->b / lambda;
    return {beta, OffspringLaw({1.0 - q2, 0.0, q2}), lambda};
  }
  if (const auto* st = std::get_if<StableBranching>(&mech.variant())) {
    if (std::abs(st->beta - beta) > 1e-12)
      throw MismatchError("stable mechanism index differs from the requested family beta");
    if (st->scale == 0.0) return {beta, OffspringLaw::degenerate_one(), 1.0};
    if (beta == 1.0) return {beta, OffspringLaw::critical_binary(), 2.0 * st->scale};
    const double lambda = st->scale * (1.0 + beta) * std::pow(beta, 1.0 - beta);
    return {beta, stable_offspring_law(beta, opts), lambda};
  }
  throw UnsupportedError("offspring families are only built for quadratic and stable mechanisms");
}

/// psi_beta(z) = lambda / beta^2 * (phi(1 - beta z) - 1 + beta z), 0 <= z <= 1/beta.
inline double psi_beta_eval(const RescaledFamily& family, double z) {
  const double beta = family.beta;
  if (!(z >= 0.0) || z > 1.0 / beta * (1.0 + 1e-12))
    throw DomainError("psi_beta needs 0 <= z <= 1/beta");
  const double w = std::min(beta * z, 1.0);
  return family.rate_multiplier / (beta * beta) * (family.law.pgf(1.0 - w) - 1.0 + w);
}

inline double psi_beta_derivative(const RescaledFamily& family, double z) {
  const double beta = family.beta;
  const double w = std::clamp(beta * z, 0.0, 1.0);
  return family.rate_multiplier / beta * (1.0 - family.law.pgf_derivative(1.0 - w));
}

} // namespace superproc
