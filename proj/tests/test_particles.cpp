#include <catch_amalgamated.hpp>

#include <cmath>

#include "superproc/particles.hpp"

using namespace superproc;
using Catch::Approx;

namespace {

const SpaceFn one = [](const Point&) { return 1.0; };

ParticleSystem binary_bm(double beta, double rate = 1.0) {
  ParticleSystem ps;
  ps.motion = MotionModel::brownian();
  ps.K = AdditiveFunctional::lebesgue(rate);
  ps.family = offspring_family(BranchingMechanism::quadratic(1.0), beta);
  return ps;
}

ParticleSystem no_branching(MotionModel m = MotionModel::brownian()) {
  ParticleSystem ps;
  ps.motion = m;
  ps.K = AdditiveFunctional::lebesgue(1.0);
  ps.family = {1.0, OffspringLaw::degenerate_one(), 1.0};
  return ps;
}

} // namespace

TEST_CASE("Poisson initialisation counts") {
  SECTION("mass 3 at beta 1") {
    RandomStream rng(41, 0);
    Accumulator acc;
    for (int i = 0; i < 20000; ++i) acc.add(double(init_poisson(AtomicMeasure::dirac(Point{}, 3.0), 1.0, rng).live.size()));
    CHECK(std::abs(z_score(acc.mean(), 3.0, acc.std_error())) < 4.0);
  }
  SECTION("mass 1 at beta 0.01") {
    RandomStream rng(42, 0);
    Accumulator acc;
    for (int i = 0; i < 5000; ++i) acc.add(double(init_poisson(AtomicMeasure::dirac(Point{}), 0.01, rng).live.size()));
    CHECK(std::abs(z_score(acc.mean(), 100.0, acc.std_error())) < 4.0);
    CHECK(acc.variance() == Approx(100.0).epsilon(0.08));
  }
  SECTION("two atoms are independent") {
    RandomStream rng(43, 0);
    AtomicMeasure mu;
    mu.add(point1(0.0), 2.0);
    mu.add(point1(1.0), 2.0);
    const int N = 20000;
    Accumulator prod, a, b;
    for (int i = 0; i < N; ++i) {
      const auto pop = init_poisson(mu, 1.0, rng);
      double na = 0, nb = 0;
      for (const auto& p : pop.live) (p.state.position[0] == 0.0 ? na : nb) += 1.0;
      prod.add(na * nb);
      a.add(na);
      b.add(nb);
    }
    const double cov = prod.mean() - a.mean() * b.mean();
    // sd of the covariance estimate ~ sqrt(var(na) var(nb) / N)
    CHECK(std::abs(cov) / std::sqrt(4.0 / N) < 4.0);
  }
  SECTION("errors") {
    RandomStream rng(44, 0);
    Caps caps;
    caps.max_expected_initial = 50;
    CHECK_THROWS_AS(init_poisson(AtomicMeasure::dirac(Point{}), 0.01, rng, caps), ResourceError);
    CHECK_THROWS_AS(init_poisson(AtomicMeasure::dirac(Point{}), 1.5, rng), DomainError);
    CHECK_THROWS_AS(AtomicMeasure::dirac(Point{}, 0.0), DomainError);
  }
}

TEST_CASE("Lebesgue discretisation") {
  const auto mu = discretize_lebesgue(-5.0, 5.0, 100);
  CHECK(mu.atoms.size() == 100);
  CHECK(mu.total_mass() == Approx(10.0));
  CHECK(mu.atoms.front().position[0] == Approx(-4.95));
}

TEST_CASE("no branching keeps the population and transports it") {
  const auto ps = no_branching();
  RandomStream rng(45, 0);
  const auto pop = init_deterministic(Point{}, 5);
  Trajectory tr = simulate_trajectory(pop, 0.0, 1.0, ps.motion, ps.K, ps.family, {0.5, 1.0}, 1, 0);
  CHECK(tr.measures[0].atoms.size() == 5);
  CHECK(tr.measures[1].atoms.size() == 5);
  bool moved = false;
  for (const auto& a : tr.measures[1].atoms) moved = moved || a.position[0] != 0.0;
  CHECK(moved);
}

TEST_CASE("critical binary branching preserves the mean mass") {
  const auto ps = binary_bm(1.0);
  const auto runs = replicate_pairings(ps, AtomicMeasure::dirac(Point{}), {one}, 0.0, {0.5, 1.0}, 10000, 7, 2);
  for (std::size_t j = 0; j < 2; ++j) {
    Accumulator acc;
    for (const auto& r : runs) acc.add(r.values[0][j]);
    CHECK(std::abs(z_score(acc.mean(), 1.0, acc.std_error())) < 4.0);
  }
}

TEST_CASE("Laplace functional of f = 0 is exactly one") {
  const auto e = laplace_mc(binary_bm(0.5), AtomicMeasure::dirac(Point{}), [](const Point&) { return 0.0; }, 0.0, 1.0,
                            100, 3);
  CHECK(e.value == 1.0);
  CHECK(e.std_error == 0.0);
}

TEST_CASE("no-branching Laplace functional equals the motion expectation") {
  // q(1) = 1 at beta = 1 with mu = delta_x, m = 1: E exp(-N f(xi)) with N ~ Poisson(1)
  // equals exp(-(1 - E e^{-f(xi_t)})).
  const auto ps = no_branching();
  const SpaceFn f = [](const Point& x) { return x[0] * x[0]; };
  const auto e = laplace_mc(ps, AtomicMeasure::dirac(Point{}), f, 0.0, 1.0, 20000, 4);
  const double motion = 1.0 / std::sqrt(3.0);  // E exp(-B_1^2)
  CHECK(std::abs(z_score(e.value, std::exp(-(1.0 - motion)), e.std_error)) < 4.0);
}

TEST_CASE("killed motion with rate |x|^-1.5 keeps the erf mean mass") {
  ParticleSystem ps;
  ps.motion = MotionModel::killed_brownian();
  ps.K = AdditiveFunctional::power_law(1.5);
  ps.family = offspring_family(BranchingMechanism::quadratic(1.0), 1.0);
  const auto runs = replicate_pairings(ps, AtomicMeasure::dirac(point1(1.0)), {one}, 0.0, {1.0}, 4000, 9, 2);
  Accumulator acc;
  for (const auto& r : runs) acc.add(r.values[0][0]);
  CHECK(std::abs(z_score(acc.mean(), std::erf(1.0 / std::sqrt(2.0)), acc.std_error())) < 4.0);
}

TEST_CASE("replicas are identical across worker counts") {
  const auto ps = binary_bm(0.3);
  const auto a = replicate_pairings(ps, AtomicMeasure::dirac(Point{}), {one}, 0.0, {1.0}, 64, 5, 1);
  const auto b = replicate_pairings(ps, AtomicMeasure::dirac(Point{}), {one}, 0.0, {1.0}, 64, 5, 4);
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i].values == b[i].values);
}

TEST_CASE("population cap raises a resource error") {
  auto ps = binary_bm(0.01);
  ps.options.caps.max_particles = 50;
  CHECK_THROWS_AS(laplace_mc(ps, AtomicMeasure::dirac(Point{}), one, 0.0, 1.0, 4, 1), ResourceError);
}

TEST_CASE("simulate validates output times") {
  const auto ps = binary_bm(1.0);
  RandomStream rng(1, 0);
  TrajectoryObserver obs;
  std::vector<AtomicMeasure> ms(2);
  obs.measures = &ms;
  const auto pop = init_deterministic(Point{}, 1);
  CHECK_THROWS_AS(simulate(pop, 0.0, 1.0, ps.motion, ps.K, ps.family, {0.5, 0.2}, rng, obs), DomainError);
  CHECK_THROWS_AS(simulate(pop, 0.0, 1.0, ps.motion, ps.K, ps.family, {2.0}, rng, obs), DomainError);
}

TEST_CASE("event logs record tracks and occupation") {
  const auto ps = binary_bm(1.0);
  RandomStream rng(46, 0);
  EventLog log;
  EventLogObserver obs{&log, {}};
  const auto pop = init_deterministic(Point{}, 2);
  simulate(pop, 0.0, 1.0, ps.motion, ps.K, ps.family, {}, rng, obs);
  REQUIRE(log.tracks.size() >= 2);
  for (const auto& tr : log.tracks) {
    REQUIRE(tr.times.size() == tr.positions.size());
    for (std::size_t i = 1; i < tr.times.size(); ++i) REQUIRE(tr.times[i] >= tr.times[i - 1]);
  }
  SECTION("empty set") { CHECK_FALSE(max_occupation(log, [](double, const Point&) { return false; }, 1.0)); }
  SECTION("whole space") {
    CHECK(max_occupation(log, [](double, const Point&) { return true; }, 1.0));
    CHECK(max_occupation(log, [](double, const Point&) { return true; }, 2.0));
  }
  SECTION("missing log") {
    CHECK_THROWS_AS(max_occupation(std::optional<EventLog>{}, [](double, const Point&) { return true; }, 1.0),
                    UnsupportedError);
  }
}

TEST_CASE("children are born at the death point and time") {
  const auto ps = binary_bm(1.0, 3.0);
  RandomStream rng(47, 0);
  EventLog log;
  EventLogObserver obs{&log, {}};
  simulate(init_deterministic(Point{}, 1), 0.0, 1.0, ps.motion, ps.K, ps.family, {}, rng, obs);
  for (const auto& child : log.tracks) {
    if (!child.parent) continue;
    const auto it = std::find_if(log.tracks.begin(), log.tracks.end(), [&](const auto& t) { return t.id == *child.parent; });
    REQUIRE(it != log.tracks.end());
    CHECK(child.times.front() == it->times.back());
    CHECK(child.positions.front()[0] == it->positions.back()[0]);
  }
}
