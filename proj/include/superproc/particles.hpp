#pragma once

// Branching particle systems: Poisson initialization, per-particle depth-first simulation
// with clock-driven deaths and offspring, and measure-valued observables.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "superproc/additive_functional.hpp"
#include "superproc/branching.hpp"
#include "superproc/common.hpp"
#include "superproc/errors.hpp"
#include "superproc/motion.hpp"
#include "superproc/parallel.hpp"
#include "superproc/rng.hpp"
#include "superproc/stats.hpp"

namespace superproc {

struct WeightedAtom {
  Point position{};
  double weight = 0.0;
};

struct AtomicMeasure {
  std::vector<WeightedAtom> atoms;

  static AtomicMeasure dirac(const Point& x, double mass = 1.0) {
    AtomicMeasure mu;
    mu.add(x, mass);
    return mu;
  }

  void add(const Point& x, double weight) {
    if (!(weight > 0.0) || !std::isfinite(weight)) throw DomainError("atom weights must be positive and finite");
    atoms.push_back({x, weight});
  }

  double total_mass() const {
    double m = 0.0;
    for (const auto& a : atoms) m += a.weight;
    return m;
  }

  template <class F>
  double pairing(F&& f) const {
    double s = 0.0;
    for (const auto& a : atoms) s += a.weight * f(a.position);
    return s;
  }

  bool empty() const { return atoms.empty(); }
};

/// n equal-weight atoms at the cell centres of [a, b], total mass `density * (b - a)`.
inline AtomicMeasure discretize_lebesgue(double a, double b, std::size_t n, double density = 1.0) {
  if (!(b > a) || n == 0 || !(density > 0.0)) throw DomainError("discretize_lebesgue: bad interval or count");
  AtomicMeasure mu;
  const double w = (b - a) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) mu.add(point1(a + (static_cast<double>(i) + 0.5) * w), density * w);
  return mu;
}

struct Particle {
  std::uint64_t id = 0;
  std::optional<std::uint64_t> parent_id;
  double birth_time = 0.0;
  ParticleState state{};
};

struct Population {
  std::vector<Particle> live;
  double clock_time = 0.0;
  double beta = 1.0;
  std::uint64_t next_id = 0;

  /// beta X: weight beta per live particle.
  AtomicMeasure rescaled() const {
    AtomicMeasure mu;
    for (const auto& p : live) mu.add(p.state.position, beta);
    return mu;
  }
};

struct Caps {
  std::uint64_t max_particles = 10'000'000;  // particles created per replica
  std::uint64_t max_generation = 100'000;
  double max_expected_initial = 10'000'000.0;
};

struct SimulationOptions {
  double dt = 0.01;            // base motion step
  ClockStepping stepping{};
  Caps caps{};
  bool exact_constant_clock = true;  // jump straight to the next event when k is constant
};

/// Per-atom Poisson(w / beta) unit particles.
inline Population init_poisson(const AtomicMeasure& mu, double beta, RandomStream& rng, const Caps& caps = {}) {
  if (!(beta > 0.0 && beta <= 1.0)) throw DomainError("init_poisson needs beta in (0, 1]");
  const double mass = mu.total_mass();
  if (!(mass > 0.0)) throw DomainError("init_poisson needs positive total mass");
  if (mass / beta > caps.max_expected_initial)
    throw ResourceError("init_poisson: expected particle count " + std::to_string(mass / beta) +
                        " exceeds the cap " + std::to_string(caps.max_expected_initial));
  Population pop;
  pop.beta = beta;
  for (const auto& a : mu.atoms) {
    const std::uint64_t n = rng.poisson(a.weight / beta);
    for (std::uint64_t i = 0; i < n; ++i) pop.live.push_back({pop.next_id++, std::nullopt, 0.0, {a.position, true, {}}});
  }
  return pop;
}

/// Deterministic start: `count` particles at x.
inline Population init_deterministic(const Point& x, std::uint64_t count, double beta = 1.0) {
  Population pop;
  pop.beta = beta;
  for (std::uint64_t i = 0; i < count; ++i) pop.live.push_back({pop.next_id++, std::nullopt, 0.0, {x, true, {}}});
  return pop;
}

struct SimulationStats {
  std::uint64_t particles = 0;
  std::uint64_t branchings = 0;
  std::uint64_t kills = 0;
  std::uint64_t steps = 0;
  bool truncated = false;
};

/// Observer hooks, all optional:
///   record(j, x)                         particle alive at output_times[j]
///   on_birth(id, parent, t, x)
///   on_step(id, t0, x0, t1, x1)          motion step (enables base-dt stepping)
///   on_end(id, t, x, killed, children)
template <class Obs>
concept TrackObserver = requires(Obs o, std::uint64_t id, double t, const Point& x) { o.on_step(id, t, x, t, x); };

namespace detail {

struct Frame {
  std::uint64_t id;
  std::optional<std::uint64_t> parent;
  double birth;
  Point position;
  std::uint64_t generation;
};

} // namespace detail

/// Evolve every particle of `pop` from its birth time to `horizon`. Particles alive at
/// output_times[j] are reported as observer.record(j, x); births and deaths through the
/// remaining hooks. Children are simulated depth-first from the parent's death point.
template <class Observer>
SimulationStats simulate(const Population& pop, double r, double horizon, const MotionModel& motion,
                         const AdditiveFunctional& K, const RescaledFamily& family,
                         const std::vector<double>& output_times, RandomStream& rng, Observer& obs,
                         const SimulationOptions& opts = {}) {
  if (!(horizon >= r)) throw DomainError("simulate needs horizon >= r");
  if (!(opts.dt > 0.0)) throw DomainError("simulate needs a positive base step");
  for (std::size_t j = 0; j < output_times.size(); ++j) {
    if (output_times[j] < r || output_times[j] > horizon)
      throw DomainError("output times must lie in [r, horizon]");
    if (j > 0 && !(output_times[j] > output_times[j - 1])) throw DomainError("output times must increase");
  }
  const double rate = family.rate_multiplier / family.beta;
  const bool fast = opts.exact_constant_clock && K.is_constant() && !TrackObserver<Observer>;
  const double k_const = K.is_constant() ? rate * K.constant_value() : 0.0;
  constexpr double inf = std::numeric_limits<double>::infinity();

  SimulationStats stats;
  std::uint64_t next_id = pop.next_id;
  std::vector<detail::Frame> stack;
  for (auto it = pop.live.rbegin(); it != pop.live.rend(); ++it) {
    if (!it->state.alive) throw DomainError("simulate: population contains a dead particle");
    stack.push_back({it->id, it->parent_id, std::max(it->birth_time, r), it->state.position, 0});
  }
  stats.particles = stack.size();

  while (!stack.empty()) {
    const detail::Frame fr = stack.back();
    stack.pop_back();
    if constexpr (requires { obs.on_birth(fr.id, fr.parent, fr.birth, fr.position); })
      obs.on_birth(fr.id, fr.parent, fr.birth, fr.position);
    std::size_t j = static_cast<std::size_t>(
        std::lower_bound(output_times.begin(), output_times.end(), fr.birth) - output_times.begin());
    double s = fr.birth;
    ParticleState state{fr.position, true, {}};
    if (motion.kind() == MotionKind::KilledBrownianMotion1d && !(state.position[0] > 0.0)) {
      // born in the cemetery
      ++stats.kills;
      if constexpr (requires { obs.on_end(fr.id, s, state.position, true, std::uint64_t{0}); })
        obs.on_end(fr.id, s, state.position, true, std::uint64_t{0});
      continue;
    }
    const double threshold = rng.exponential();
    double acc = 0.0;
    bool done = false;
    while (!done) {
      while (j < output_times.size() && output_times[j] <= s) {
        obs.record(j, state.position);
        ++j;
      }
      if (s >= horizon) break;
      const double stop = j < output_times.size() ? output_times[j] : horizon;
      double s1;
      if (fast) {
        const double death = k_const > 0.0 ? s + (threshold - acc) / k_const : inf;
        s1 = std::min(death, stop);
      } else {
        s1 = std::min(s + adaptive_dt(K, rate, s, state.position, opts.dt, opts.stepping), stop);
      }
      if (stop - s1 <= 1e-13 * std::max(1.0, std::abs(stop))) s1 = stop;
      if (!(s1 > s)) s1 = std::nextafter(s, inf);
      const double len = s1 - s;
      ParticleState next = step(motion, s, state, len, rng);
      ++stats.steps;

      double death_len = -1.0;  // offset of the branching time within the step, if any
      if (fast) {
        if (next.alive) {
          if (k_const > 0.0 && (s1 < stop || acc + k_const * len >= threshold)) death_len = len;
          else acc += k_const * len;
        }
      } else {
        const double k0 = rate * K.density(s, state.position);
        if (!next.alive) {
          const double kl = k0 * (*next.kill_time - s);
          if (acc + kl >= threshold) death_len = (threshold - acc) / k0;
          else acc += kl;
        } else {
          const double k1 = rate * K.density(s1, next.position);
          const double inc = 0.5 * (k0 + k1) * len;
          if (!std::isfinite(inc)) throw RefinementError("simulate: non-finite clock increment");
          if (acc + inc >= threshold) death_len = locate_clock_crossing(k0, k1, len, threshold - acc);
          else acc += inc;
        }
      }

      if (death_len >= 0.0) {
        // branching inside the step: re-sample the motion from the step start
        double d = s + death_len;
        ParticleState at_death = next;
        if (death_len < len) at_death = death_len > 0.0 ? step(motion, s, state, death_len, rng) : state;
        if (!at_death.alive) {
          ++stats.kills;
          if constexpr (TrackObserver<Observer>) obs.on_step(fr.id, s, state.position, *at_death.kill_time, at_death.position);
          if constexpr (requires { obs.on_end(fr.id, d, state.position, true, std::uint64_t{0}); })
            obs.on_end(fr.id, *at_death.kill_time, at_death.position, true, std::uint64_t{0});
          done = true;
          break;
        }
        if constexpr (TrackObserver<Observer>) obs.on_step(fr.id, s, state.position, d, at_death.position);
        const std::uint64_t n = family.law.sample(rng);
        ++stats.branchings;
        if (n > 0) {
          if (fr.generation + 1 > opts.caps.max_generation)
            throw ResourceError("simulate: generation cap " + std::to_string(opts.caps.max_generation) + " exceeded");
          if (stats.particles + n > opts.caps.max_particles) {
            stats.truncated = true;
            return stats;
          }
          stats.particles += n;
          for (std::uint64_t c = 0; c < n; ++c)
            stack.push_back({next_id++, fr.id, d, at_death.position, fr.generation + 1});
        }
        if constexpr (requires { obs.on_end(fr.id, d, state.position, false, n); })
          obs.on_end(fr.id, d, at_death.position, false, n);
        done = true;
        break;
      }
      if (!next.alive) {
        ++stats.kills;
        if constexpr (TrackObserver<Observer>) obs.on_step(fr.id, s, state.position, *next.kill_time, next.position);
        if constexpr (requires { obs.on_end(fr.id, s, state.position, true, std::uint64_t{0}); })
          obs.on_end(fr.id, *next.kill_time, next.position, true, std::uint64_t{0});
        done = true;
        break;
      }
      if constexpr (TrackObserver<Observer>) obs.on_step(fr.id, s, state.position, s1, next.position);
      s = s1;
      state = next;
    }
    if (!done) {
      if constexpr (requires { obs.on_end(fr.id, s, state.position, false, std::uint64_t{1}); })
        obs.on_end(fr.id, s, state.position, false, std::uint64_t{1});
    }
  }
  return stats;
}

/// beta X at each output time.
struct Trajectory {
  std::vector<double> output_times;
  std::vector<AtomicMeasure> measures;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  bool truncated = false;
  SimulationStats stats;
};

struct TrajectoryObserver {
  double beta = 1.0;
  std::vector<AtomicMeasure>* measures = nullptr;
  void record(std::size_t j, const Point& x) { (*measures)[j].add(x, beta); }
};

/// Accumulates <f_i, beta X_{t_j}> for a fixed list of test functions.
struct PairingObserver {
  double beta = 1.0;
  std::vector<SpaceFn> fs;
  std::vector<std::vector<double>> sums;  // sums[i][j]

  PairingObserver(double b, std::vector<SpaceFn> functions, std::size_t n_times)
      : beta(b), fs(std::move(functions)), sums(fs.size(), std::vector<double>(n_times, 0.0)) {}

  void record(std::size_t j, const Point& x) {
    for (std::size_t i = 0; i < fs.size(); ++i) sums[i][j] += beta * fs[i](x);
  }
};

/// Per-particle space-time tracks.
struct EventLog {
  struct Track {
    std::uint64_t id = 0;
    std::optional<std::uint64_t> parent;
    std::vector<double> times;
    std::vector<Point> positions;
    bool killed = false;
    std::uint64_t children = 0;
  };
  std::vector<Track> tracks;
  double weight = 1.0;  // mass carried by one particle
};

struct EventLogObserver {
  EventLog* log = nullptr;
  std::vector<std::size_t> open;  // index into log->tracks for the particle being simulated

  void record(std::size_t, const Point&) {}
  void on_birth(std::uint64_t id, std::optional<std::uint64_t> parent, double t, const Point& x) {
    EventLog::Track tr;
    tr.id = id;
    tr.parent = parent;
    tr.times.push_back(t);
    tr.positions.push_back(x);
    log->tracks.push_back(std::move(tr));
  }
  void on_step(std::uint64_t, double, const Point&, double t1, const Point& x1) {
    auto& tr = log->tracks.back();
    tr.times.push_back(t1);
    tr.positions.push_back(x1);
  }
  void on_end(std::uint64_t, double, const Point&, bool killed, std::uint64_t children) {
    auto& tr = log->tracks.back();
    tr.killed = killed;
    tr.children = killed ? 0 : children;
  }
};

inline Trajectory simulate_trajectory(const Population& pop, double r, double horizon, const MotionModel& motion,
                                      const AdditiveFunctional& K, const RescaledFamily& family,
                                      const std::vector<double>& output_times, std::uint64_t seed,
                                      std::uint64_t stream, const SimulationOptions& opts = {}) {
  Trajectory traj;
  traj.output_times = output_times;
  traj.measures.resize(output_times.size());
  traj.seed = seed;
  traj.stream = stream;
  RandomStream rng(seed, stream);
  TrajectoryObserver obs{pop.beta, &traj.measures};
  traj.stats = simulate(pop, r, horizon, motion, K, family, output_times, rng, obs, opts);
  traj.truncated = traj.stats.truncated;
  return traj;
}

/// Everything needed to run replicas of the rescaled system.
struct ParticleSystem {
  MotionModel motion = MotionModel::brownian();
  AdditiveFunctional K = AdditiveFunctional::lebesgue();
  RescaledFamily family{};
  SimulationOptions options{};
};

/// Per-replica pairings <f_i, beta X_{t_j}> with a fresh Poisson(mu / beta) start.
struct ReplicaPairings {
  std::vector<std::vector<double>> values;  // [i][j]
  SimulationStats stats;
};

inline ReplicaPairings run_replica_pairings(const ParticleSystem& sys, const AtomicMeasure& mu,
                                            const std::vector<SpaceFn>& fs, double r,
                                            const std::vector<double>& times, RandomStream& rng) {
  const Population pop = init_poisson(mu, sys.family.beta, rng, sys.options.caps);
  PairingObserver obs(sys.family.beta, fs, times.size());
  ReplicaPairings out;
  out.stats = simulate(pop, r, times.empty() ? r : times.back(), sys.motion, sys.K, sys.family, times, rng, obs,
                       sys.options);
  if (out.stats.truncated)
    throw ResourceError("population cap " + std::to_string(sys.options.caps.max_particles) + " exceeded");
  out.values = std::move(obs.sums);
  return out;
}

/// All replicas in index order; replica i uses the stream (seed, i).
inline std::vector<ReplicaPairings> replicate_pairings(const ParticleSystem& sys, const AtomicMeasure& mu,
                                                       const std::vector<SpaceFn>& fs, double r,
                                                       const std::vector<double>& times, std::size_t reps,
                                                       std::uint64_t seed, unsigned workers = 1) {
  return parallel_map<ReplicaPairings>(reps, workers, [&](std::size_t i) {
    RandomStream rng(seed, i);
    return run_replica_pairings(sys, mu, fs, r, times, rng);
  });
}

/// Sample mean and standard error of exp(-<f, beta X_t>) over independent replicas.
inline Estimate laplace_mc(const ParticleSystem& sys, const AtomicMeasure& mu, const SpaceFn& f, double r,
                           double t, std::size_t reps, std::uint64_t seed, unsigned workers = 1) {
  if (reps < 2) throw DomainError("laplace_mc needs reps >= 2");
  const auto runs = replicate_pairings(sys, mu, {f}, r, {t}, reps, seed, workers);
  Accumulator acc;
  for (const auto& run : runs) acc.add(std::exp(-run.values[0][0]));
  return acc.estimate();
}

/// Whether sup_s (weighted count of particles with (s, x_s) in U) >= c, evaluated at the
/// track nodes. A particle occupies U on [t_i, t_{i+1}) when its node i lies in U.
inline bool max_occupation(const EventLog& log, const std::function<bool(double, const Point&)>& U, double c) {
  std::vector<std::pair<double, double>> events;  // (time, +-weight)
  for (const auto& tr : log.tracks) {
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
      if (!U(tr.times[i], tr.positions[i])) continue;
      const bool last = i + 1 == tr.times.size();
      const double t_end = last ? std::nextafter(tr.times[i], std::numeric_limits<double>::infinity())
                                : tr.times[i + 1];
      if (last && tr.killed) continue;  // the cemetery point is not in E
      events.emplace_back(tr.times[i], log.weight);
      events.emplace_back(t_end, -log.weight);
    }
  }
  std::sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
    return a.first < b.first || (a.first == b.first && a.second < b.second);
  });
  double level = 0.0;
  for (const auto& [t, w] : events) {
    level += w;
    if (level >= c - 1e-12) return true;
  }
  return false;
}

/// Optional-log overload mirroring the error contract.
inline bool max_occupation(const std::optional<EventLog>& log, const std::function<bool(double, const Point&)>& U,
                           double c) {
  if (!log) throw UnsupportedError("max_occupation needs a retained event log");
  return max_occupation(*log, U, c);
}

} // namespace superproc
