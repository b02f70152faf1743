#include <catch_amalgamated.hpp>

#include <cmath>

#include "superproc/scenario.hpp"
#include "superproc/transform.hpp"

using namespace superproc;
using Catch::Approx;

TEST_CASE("weight functions") {
  CHECK(WeightFunction::abs_x()(point1(-2.0)) == 2.0);
  CHECK(WeightFunction::phi_p(2.0)(point1(1.0)) == Approx(0.5));
  CHECK(WeightFunction::abs_x().zero_set() == "{0}");
  CHECK_THROWS_AS(WeightFunction::phi_p(0.0), DomainError);
}

TEST_CASE("|x| is harmonic for killed BM") {
  // Pi^0_x[|xi_t|] = x, so the weight constant is one
  RandomStream rng(51, 0);
  const auto rep = estimate_weight_constant(WeightFunction::abs_x(), MotionModel::killed_brownian(), 1.0,
                                            {point1(0.3), point1(1.0)}, {0.5, 1.0}, 20000, rng, 0.01);
  for (const auto& c : rep.table) CHECK(std::abs(z_score(c.ratio.value, 1.0, c.ratio.std_error)) < 4.0);
  CHECK(rep.c_T_upper >= 1.0);
}

TEST_CASE("phi_p weight constant for BM is finite") {
  RandomStream rng(52, 0);
  const auto rep = estimate_weight_constant(WeightFunction::phi_p(3.0), MotionModel::brownian(), 1.0,
                                            {point1(0.0), point1(3.0)}, {1.0}, 5000, rng);
  CHECK(std::isfinite(rep.c_T_upper));
  CHECK(rep.c_T < 10.0);
}

TEST_CASE("h from the grid reproduces |x| for killed BM") {
  BuildHOptions o;
  o.grid = SpaceTimeGrid::uniform(0.0, 10.0, 101, 0.0, 1.0, 50, Boundary::absorbing_at_zero);
  o.solve.tol = 1e-4;
  const auto h = build_h(WeightFunction::abs_x(), MotionModel::killed_brownian(), 1.0, HMethod::grid, o);
  for (double x : {0.5, 1.0, 3.0}) CHECK(h(0.0, point1(x)) == Approx(x).margin(2e-3));
  CHECK(h.zero_at_origin());
}

TEST_CASE("h from Monte Carlo tables") {
  BuildHOptions o;
  o.grid.r = 0.0;
  o.x_table = {0.0, 0.5, 1.0, 2.0};
  o.t_points = 3;
  o.reps = 4000;
  o.dt = 0.02;
  const auto h = build_h(WeightFunction::abs_x(), MotionModel::killed_brownian(), 1.0, HMethod::mc, o);
  CHECK(h(0.0, point1(1.0)) == Approx(1.0).margin(0.08));
  CHECK(h(1.0, point1(2.0)) == Approx(2.0));
}

TEST_CASE("closed-form h") {
  CHECK(build_h(WeightFunction::one(), MotionModel::brownian(), 1.0, HMethod::closed_form).is_identity());
  CHECK(build_h(WeightFunction::abs_x(), MotionModel::killed_brownian(), 1.0, HMethod::closed_form)(0.0, point1(2.0)) == 2.0);
  CHECK_THROWS_AS(build_h(WeightFunction::phi_p(3.0), MotionModel::brownian(), 1.0, HMethod::closed_form), UnsupportedError);
  CHECK_THROWS_AS(HFunction::abs_x(1.0)(2.0, point1(1.0)), DomainError);
}

TEST_CASE("killed BM with |x| transforms to Bessel(3)") {
  const SystemSpec raw{MotionModel::killed_brownian(), BranchingMechanism::quadratic(1.0), AdditiveFunctional::power_law(1.5)};
  const auto ts = transformed_system(raw, HFunction::abs_x(1.0));
  CHECK(ts.exact);
  CHECK(ts.system.motion.kind() == MotionKind::Bessel3);
  // K^h = K / h and psi_h(z) = psi(h z)
  CHECK(ts.system.K.density(0.0, point1(2.0)) == Approx(std::pow(2.0, -1.5) / 2.0));
  CHECK(ts.system.mechanism(0.0, point1(2.0), 1.5) == Approx(9.0));
}

TEST_CASE("other pairs carry a drift") {
  const SystemSpec raw{MotionModel::brownian(), BranchingMechanism::quadratic(1.0), AdditiveFunctional::lebesgue()};
  BuildHOptions o;
  o.grid = SpaceTimeGrid::uniform(-10.0, 10.0, 201, 0.0, 1.0, 40, Boundary::free);
  const auto h = build_h(WeightFunction::phi_p(2.0), MotionModel::brownian(), 1.0, HMethod::grid, o);
  const auto ts = transformed_system(raw, h);
  CHECK_FALSE(ts.exact);
  REQUIRE(ts.drift.has_value());
  CHECK(ts.drift->b(0.0, 1.0) < 0.0);
}

TEST_CASE("measure mapping") {
  const auto h = HFunction::abs_x(1.0);
  AtomicMeasure mu;
  mu.add(point1(2.0), 1.0);
  mu.add(point1(0.5), 3.0);
  const auto down = map_measure(mu, h, 0.0, MeasureMap::divide);
  CHECK(down.atoms[0].weight == Approx(0.5));
  const auto back = map_measure(down, h, 0.0, MeasureMap::multiply);
  for (std::size_t i = 0; i < mu.atoms.size(); ++i) CHECK(back.atoms[i].weight == Approx(mu.atoms[i].weight));
  AtomicMeasure at_zero;
  at_zero.add(point1(0.0), 1.0);
  at_zero.add(point1(1.0), 1.0);
  CHECK_THROWS_AS(map_measure(at_zero, h, 0.0, MeasureMap::divide), DegenerateTransformError);
  CHECK(map_measure(at_zero, h, 0.0, MeasureMap::multiply).atoms.size() == 1);
}

TEST_CASE("v = h v_h on the hyperbolic system") {
  const auto sc = hyperbolic(1.0, 1.5);
  const auto grid = SpaceTimeGrid::uniform(0.0, 8.0, 81, 0.0, 1.0, 50, Boundary::absorbing_at_zero);
  SolveOptions o;
  o.tol = 1e-3;
  const auto rep = verify_identity(sc.system(), HFunction::abs_x(1.0), [](const Point& x) { return std::min(std::abs(x[0]), 1.0); },
                                   grid, o);
  CHECK(rep.pass);
  CHECK(rep.discrepancy < rep.tolerance);
}

TEST_CASE("transformed first moment by exact Bessel(3) particles") {
  // critical branching over a conservative motion: E^h <1, beta X^h_t> = <1, mu^h> = 1
  const auto sc = hyperbolic(1.0, 1.5);
  const SystemSpec raw = sc.system();
  const auto h = HFunction::abs_x(1.0);
  const auto ts = transformed_system(raw, h);
  const auto fam = offspring_family(raw.mechanism, 1.0);
  const auto muh = map_measure(AtomicMeasure::dirac(point1(1.0)), h, 0.0, MeasureMap::divide);
  const auto e = transformed_mean_mc(ts, raw, fam, muh, [](const Point&) { return 1.0; }, 0.0, 1.0, 4000, 3, 1);
  CHECK(std::abs(z_score(e.value, 1.0, e.std_error)) < 4.0);
}
