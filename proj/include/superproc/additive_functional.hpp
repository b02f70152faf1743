#pragma once

// The branching clock K(ds) = k(s, xi_s) ds: path integrals, death-time sampling and
// Monte Carlo admissibility diagnostics.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "superproc/common.hpp"
#include "superproc/errors.hpp"
#include "superproc/motion.hpp"
#include "superproc/rng.hpp"
#include "superproc/stats.hpp"

namespace superproc {

class AdditiveFunctional {
public:
  static AdditiveFunctional lebesgue(double rate = 1.0) {
    if (!(rate >= 0.0)) throw DomainError("clock rate must be nonnegative");
    AdditiveFunctional k([rate](double, const Point&) { return rate; }, {}, "lebesgue");
    k.constant_ = rate;
    return k;
  }

  /// k(x) = |x|^{-sigma}, or max(cap, |x|^{-sigma}) when a cap is given. Singular at 0
  /// when sigma > 0.
  static AdditiveFunctional power_law(double sigma, std::optional<double> cap = {}) {
    std::vector<Point> sing;
    if (sigma > 0.0) sing.push_back(point1(0.0));
    const double c = cap.value_or(0.0);
    return AdditiveFunctional(
        [sigma, c](double, const Point& x) {
          const double r = norm(x);
          if (r == 0.0) return sigma > 0.0 ? std::numeric_limits<double>::infinity() : std::max(c, sigma == 0.0 ? 1.0 : 0.0);
          return std::max(c, std::pow(r, -sigma));
        },
        std::move(sing), "power_law");
  }

  /// k(x) = phi_p(x)^{1+beta}, phi_p(x) = (1 + |x|^2)^{-p/2}.
  static AdditiveFunctional phi_p_power(double p, double beta) {
    return AdditiveFunctional(
        [p, beta](double, const Point& x) {
          const double r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
          return std::pow(1.0 + r2, -0.5 * p * (1.0 + beta));
        },
        {}, "phi_p_power");
  }

  static AdditiveFunctional from_function(SpaceTimeFn density, std::vector<Point> singularities = {},
                                          std::string description = "custom", bool time_dependent = true) {
    AdditiveFunctional k(std::move(density), std::move(singularities), std::move(description));
    k.time_dependent_ = time_dependent;
    return k;
  }

  double density(double s, const Point& x) const { return density_(s, x); }
  const SpaceTimeFn& density_fn() const { return density_; }
  const std::vector<Point>& singularities() const { return singularities_; }
  const std::string& description() const { return description_; }
  bool is_constant() const { return constant_.has_value(); }
  double constant_value() const { return constant_.value_or(0.0); }
  bool identically_zero() const { return constant_ && *constant_ == 0.0; }
  bool time_dependent() const { return time_dependent_; }

  double distance_to_singularity(const Point& x) const {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& p : singularities_) {
      const Point diff{x[0] - p[0], x[1] - p[1], x[2] - p[2]};
      d = std::min(d, norm(diff));
    }
    return d;
  }

  /// Density multiplied by a space-time factor g (e.g. 1/h for K^h).
  AdditiveFunctional scaled_by(SpaceTimeFn g, std::vector<Point> extra_singularities = {},
                               std::string suffix = "scaled", bool g_time_dependent = false) const {
    auto base = density_;
    auto sing = singularities_;
    for (auto& p : extra_singularities) sing.push_back(p);
    AdditiveFunctional out(
        [base, g](double s, const Point& x) {
          const double k = base(s, x);
          if (k == 0.0) return 0.0;
          return k * g(s, x);
        },
        std::move(sing), description_ + "*" + suffix);
    out.time_dependent_ = time_dependent_ || g_time_dependent;
    return out;
  }

private:
  AdditiveFunctional(SpaceTimeFn density, std::vector<Point> singularities, std::string description)
      : density_(std::move(density)), singularities_(std::move(singularities)),
        description_(std::move(description)) {}

  SpaceTimeFn density_;
  std::vector<Point> singularities_;
  std::string description_;
  std::optional<double> constant_;
  bool time_dependent_ = false;
};

/// Adaptive time stepping for clock-driven simulation.
struct ClockStepping {
  double max_increment = 0.1;        // per-step clock increment bound
  double dt_min = 1e-10;             // floor for the adaptive step
  double singular_fraction = 0.2;    // sqrt(dt) <= fraction * distance to a singularity
};

/// Local step size at (s, x): the base step shrunk so that rate * k * dt <= max_increment
/// and, near flagged singularities, so that one step cannot cross most of the distance.
inline double adaptive_dt(const AdditiveFunctional& K, double rate, double s, const Point& x, double base,
                          const ClockStepping& opts = {}) {
  double dt = base;
  if (!K.is_constant()) {
    const double k = rate * K.density(s, x);
    if (k > 0.0) dt = std::min(dt, opts.max_increment / k);
    if (!K.singularities().empty()) {
      const double d = opts.singular_fraction * K.distance_to_singularity(x);
      dt = std::min(dt, d * d);
    }
  }
  return std::max(dt, opts.dt_min);
}

/// K[r, t] along a sampled path: trapezoid rule over [r, t ^ kill_time]. The segment that
/// ends in the cemetery uses its left endpoint only.
inline double integrate_k(const AdditiveFunctional& K, const Path& path, double r, double t,
                          double max_segment_increment = std::numeric_limits<double>::infinity()) {
  if (path.times.empty() || path.times.size() != path.states.size())
    throw DomainError("integrate_k: malformed path");
  const double end = path.kill_time ? std::min(t, *path.kill_time) : t;
  if (path.times.front() > r + 1e-12 || path.times.back() < end - 1e-12)
    throw DomainError("integrate_k: path does not cover the requested window");
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < path.times.size(); ++i) {
    const double a = std::max(path.times[i], r);
    const double b = std::min(path.times[i + 1], end);
    if (b <= a) continue;
    const double t0 = path.times[i];
    const double t1 = path.times[i + 1];
    const bool killed_segment = path.kill_time && i + 2 == path.times.size();
    const double k0 = K.density(t0, path.states[i]);
    double inc;
    if (killed_segment) {
      inc = k0 * (b - a);
    } else {
      const double k1 = K.density(t1, path.states[i + 1]);
      if (!std::isfinite(k0) || !std::isfinite(k1))
        throw RefinementError("integrate_k: path node on a clock singularity");
      // linear interpolation of the integrand, clipped to [a, b]
      const double span = t1 - t0;
      const double ka = k0 + (k1 - k0) * (a - t0) / span;
      const double kb = k0 + (k1 - k0) * (b - t0) / span;
      inc = 0.5 * (ka + kb) * (b - a);
    }
    if (!std::isfinite(inc))
      throw RefinementError("integrate_k: non-finite clock increment");
    if (!K.singularities().empty() && inc > max_segment_increment)
      throw RefinementError("integrate_k: path too coarse near a clock singularity");
    total += inc;
  }
  return total;
}

/// Within one segment with linearly interpolated density k0 -> k1 over `span`, find u with
/// k0 u + (k1 - k0) u^2 / (2 span) = target by bisection.
inline double locate_clock_crossing(double k0, double k1, double span, double target) {
  auto clock = [&](double u) { return k0 * u + (k1 - k0) * u * u / (2.0 * span); };
  double lo = 0.0;
  double hi = span;
  for (int it = 0; it < 80 && hi - lo > 1e-15 * span; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (clock(mid) < target) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

/// First time s >= r with rate * K[r, s] >= E, E ~ Exp(1); none if the path ends first.
inline std::optional<double> sample_death_time(const AdditiveFunctional& K, double rate, const Path& path,
                                               double r, RandomStream& rng) {
  if (!(rate > 0.0)) throw DomainError("sample_death_time needs a positive rate multiplier");
  const double e = rng.exponential();
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < path.times.size(); ++i) {
    const double t0 = std::max(path.times[i], r);
    const double t1 = path.times[i + 1];
    if (t1 <= t0) continue;
    const bool killed_segment = path.kill_time && i + 2 == path.times.size();
    const double k0 = rate * K.density(t0, path.states[i]);
    const double k1 = killed_segment ? k0 : rate * K.density(t1, path.states[i + 1]);
    const double inc = 0.5 * (k0 + k1) * (t1 - t0);
    if (acc + inc >= e) return t0 + locate_clock_crossing(k0, k1, t1 - t0, e - acc);
    acc += inc;
  }
  return std::nullopt;
}

enum class AdmissibilityVerdict { AdmissibleEvidence, RhoAdmissibleEvidence, Inconclusive, Violated };

inline std::string to_string(AdmissibilityVerdict v) {
  switch (v) {
  case AdmissibilityVerdict::AdmissibleEvidence: return "admissible-evidence";
  case AdmissibilityVerdict::RhoAdmissibleEvidence: return "rho-admissible-evidence";
  case AdmissibilityVerdict::Inconclusive: return "inconclusive";
  case AdmissibilityVerdict::Violated: return "violated";
  }
  return "?";
}

struct AdmissibilityCell {
  double s = 0.0;  // start time of the estimate (r or an interior point of the window)
  double t = 0.0;
  Point x{};
  Estimate plain;
  std::optional<Estimate> weighted;
};

struct AdmissibilityWindow {
  double r = 0.0;
  double t = 0.0;
  Estimate sup_plain;                    // k(r, t) estimated over the probe grid
  std::optional<Estimate> sup_weighted;  // sup_x Pi[K]/rho(x)
};

struct AdmissibilityReport {
  std::vector<AdmissibilityCell> cells;
  std::vector<AdmissibilityWindow> windows;  // sorted by decreasing width
  double threshold = 0.0;
  double k_modulus = 0.0;                    // plain sup estimate on the narrowest window
  std::optional<double> k_modulus_weighted;
  AdmissibilityVerdict plain_verdict = AdmissibilityVerdict::Inconclusive;
  std::optional<AdmissibilityVerdict> weighted_verdict;
  AdmissibilityVerdict verdict = AdmissibilityVerdict::Inconclusive;
  std::string note = "diagnostic only: sup over x is a max over the probe grid";
};

struct AdmissibilityOptions {
  double threshold = 0.5;   // declared bound for the narrowest window
  double z = 4.0;           // confidence multiplier
  double dt = 1e-3;         // base path step
  int start_points = 2;     // start times per window for sup_{r<=s<=t}
  ClockStepping stepping{};
};

namespace detail {

inline AdmissibilityVerdict reading_verdict(const std::vector<Estimate>& sups, double threshold, double z) {
  const Estimate& last = sups.back();
  if (last.value - z * last.std_error > threshold) return AdmissibilityVerdict::Violated;
  bool decreasing = true;
  for (std::size_t i = 1; i < sups.size(); ++i) {
    const double se = std::hypot(sups[i].std_error, sups[i - 1].std_error);
    if (sups[i].value > sups[i - 1].value + z * se) decreasing = false;
  }
  if (decreasing && last.value + z * last.std_error < threshold) return AdmissibilityVerdict::AdmissibleEvidence;
  return AdmissibilityVerdict::Inconclusive;
}

} // namespace detail

/// Monte Carlo evidence for (1.1)-type admissibility of K on a probe grid, plain and
/// rho-weighted.
inline AdmissibilityReport check_admissibility(const AdditiveFunctional& K, const MotionModel& motion,
                                               const std::optional<SpaceFn>& rho,
                                               std::vector<std::pair<double, double>> windows,
                                               const std::vector<Point>& x_grid, std::size_t reps,
                                               RandomStream& rng, const AdmissibilityOptions& opts = {}) {
  if (x_grid.empty()) throw DomainError("check_admissibility needs a nonempty probe grid");
  if (windows.empty()) throw DomainError("check_admissibility needs at least one window");
  std::sort(windows.begin(), windows.end(),
            [](const auto& a, const auto& b) { return (a.second - a.first) > (b.second - b.first); });
  AdmissibilityReport report;
  report.threshold = opts.threshold;
  std::vector<Estimate> plain_sups;
  std::vector<Estimate> weighted_sups;
  for (const auto& [r, t] : windows) {
    if (!(r < t)) throw DomainError("admissibility windows need r < t");
    AdmissibilityWindow w{r, t, {}, {}};
    if (rho) w.sup_weighted = Estimate{-1.0, 0.0, 0};
    w.sup_plain.value = -1.0;
    const int starts = std::max(1, opts.start_points);
    for (int j = 0; j < starts; ++j) {
      const double s = r + (t - r) * static_cast<double>(j) / static_cast<double>(starts);
      for (const auto& x : x_grid) {
        Accumulator acc;
        auto dt_at = [&](double u, const Point& y) { return adaptive_dt(K, 1.0, u, y, opts.dt, opts.stepping); };
        for (std::size_t i = 0; i < reps; ++i) {
          const Path path = sample_path(motion, s, x, t, dt_at, rng);
          acc.add(integrate_k(K, path, s, t));
        }
        AdmissibilityCell cell{s, t, x, acc.estimate(), {}};
        if (cell.plain.value > w.sup_plain.value) w.sup_plain = cell.plain;
        if (rho) {
          const double rx = (*rho)(x);
          if (!(rx > 0.0)) throw DomainError("probe grid must avoid the zero set of rho");
          cell.weighted = Estimate{cell.plain.value / rx, cell.plain.std_error / rx, cell.plain.n};
          if (cell.weighted->value > w.sup_weighted->value) w.sup_weighted = cell.weighted;
        }
        report.cells.push_back(cell);
      }
    }
    plain_sups.push_back(w.sup_plain);
    if (w.sup_weighted) weighted_sups.push_back(*w.sup_weighted);
    report.windows.push_back(w);
  }
  report.k_modulus = plain_sups.back().value;
  report.plain_verdict = detail::reading_verdict(plain_sups, opts.threshold, opts.z);
  if (rho) {
    report.k_modulus_weighted = weighted_sups.back().value;
    report.weighted_verdict = detail::reading_verdict(weighted_sups, opts.threshold, opts.z);
  }
  if (report.plain_verdict == AdmissibilityVerdict::AdmissibleEvidence) {
    report.verdict = AdmissibilityVerdict::AdmissibleEvidence;
  } else if (report.weighted_verdict == AdmissibilityVerdict::AdmissibleEvidence) {
    report.verdict = AdmissibilityVerdict::RhoAdmissibleEvidence;
  } else if (report.plain_verdict == AdmissibilityVerdict::Violated) {
    report.verdict = AdmissibilityVerdict::Violated;
  } else {
    report.verdict = AdmissibilityVerdict::Inconclusive;
  }
  return report;
}

} // namespace superproc
