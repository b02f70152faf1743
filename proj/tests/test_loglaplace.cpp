#include <catch_amalgamated.hpp>

#include <cmath>

#include "superproc/loglaplace.hpp"

using namespace superproc;
using Catch::Approx;

namespace {

const SpaceFn one = [](const Point&) { return 1.0; };

SolveOptions tight(double tol = 1e-6) {
  SolveOptions o;
  o.tol = tol;
  o.splitting = Splitting::Strang;
  o.max_refinements = 10;
  return o;
}

} // namespace

TEST_CASE("Riccati closed form for psi = z^2") {
  // v' = -v^2 backwards from v(t) = c: v(r) = c / (1 + c (t - r))
  for (double c : {1.0, 0.3, 4.0}) {
    const auto v = solve_v([c](const Point&) { return c; }, BranchingMechanism::quadratic(1.0),
                           AdditiveFunctional::lebesgue(), MotionModel::brownian(), SpaceTimeGrid::homogeneous(0, 1, 16),
                           tight());
    CHECK(v.at_r()[0] == Approx(c / (1 + c)).epsilon(1e-5));
  }
}

TEST_CASE("stable closed form for psi = z^1.5") {
  // v(r) = (1 + beta (t - r))^{-1/beta} with f = 1
  for (double beta : {0.5, 0.2}) {
    const auto v = solve_v(one, BranchingMechanism::stable(beta), AdditiveFunctional::lebesgue(),
                           MotionModel::brownian(), SpaceTimeGrid::homogeneous(0, 1, 16), tight());
    CHECK(v.at_r()[0] == Approx(std::pow(1 + beta, -1 / beta)).epsilon(1e-5));
  }
}

TEST_CASE("v_beta for the quadratic family matches its scalar ODE") {
  // psi_beta = psi: dv/ds = v^2 from (1 - e^{-beta}) / beta
  for (double beta : {1.0, 0.1}) {
    const auto fam = offspring_family(BranchingMechanism::quadratic(1.0), beta);
    const auto v = solve_vbeta(one, fam, AdditiveFunctional::lebesgue(), MotionModel::brownian(),
                               SpaceTimeGrid::homogeneous(0, 1, 16), tight());
    const double g = -std::expm1(-beta) / beta;
    CHECK(v.at_r()[0] == Approx(g / (1 + g)).epsilon(1e-5));
  }
}

TEST_CASE("u and v_beta describe the same functional") {
  // u = 1 - beta v_beta at beta = 1
  const auto fam = offspring_family(BranchingMechanism::quadratic(1.0), 1.0);
  const auto grid = SpaceTimeGrid::homogeneous(0, 1, 16);
  const auto u = solve_u(one, fam.law, fam.rate_multiplier, AdditiveFunctional::lebesgue(), MotionModel::brownian(),
                         grid, tight());
  const auto v = solve_vbeta(one, fam, AdditiveFunctional::lebesgue(), MotionModel::brownian(), grid, tight());
  CHECK(u.at_r()[0] == Approx(1.0 - v.at_r()[0]).epsilon(1e-5));
}

TEST_CASE("subcritical linear moment decays exponentially") {
  const auto w = solve_moment(one, [](double, const Point&) { return 1.0; }, AdditiveFunctional::lebesgue(),
                              MotionModel::brownian(), SpaceTimeGrid::homogeneous(0, 2, 16), tight());
  CHECK(w.at_r()[0] == Approx(std::exp(-2.0)).epsilon(1e-5));
}

TEST_CASE("killed BM moment is the reflection-principle survival") {
  SolveOptions o;
  o.tol = 1e-4;
  const auto grid = SpaceTimeGrid::uniform(0.0, 8.0, 81, 0.0, 1.0, 50, Boundary::absorbing_at_zero);
  const auto w = solve_moment(one, {}, AdditiveFunctional::lebesgue(), MotionModel::killed_brownian(), grid, o);
  for (double x : {0.5, 1.0, 2.0}) CHECK(w.interpolate_r(x) == Approx(std::erf(x / std::sqrt(2.0))).margin(1e-3));
}

TEST_CASE("free BM heat semigroup of a Gaussian") {
  // Pi_x[exp(-xi_t^2)] = exp(-x^2 / (1 + 2t)) / sqrt(1 + 2t)
  SolveOptions o;
  o.tol = 1e-4;
  const auto grid = SpaceTimeGrid::uniform(-8.0, 8.0, 161, 0.0, 1.0, 50, Boundary::free);
  const auto w = solve_moment([](const Point& x) { return std::exp(-x[0] * x[0]); }, {}, AdditiveFunctional::lebesgue(),
                              MotionModel::brownian(), grid, o);
  for (double x : {0.0, 0.7, 1.5}) CHECK(w.interpolate_r(x) == Approx(std::exp(-x * x / 3) / std::sqrt(3.0)).margin(1e-3));
}

TEST_CASE("solution is dominated by the linear semigroup") {
  SolveOptions o;
  o.tol = 1e-3;
  const auto grid = SpaceTimeGrid::uniform(-6.0, 6.0, 121, 0.0, 1.0, 50, Boundary::free);
  const SpaceFn f = [](const Point& x) { return 2.0 * std::exp(-x[0] * x[0]); };
  const auto v = solve_v(f, BranchingMechanism::quadratic(1.0), AdditiveFunctional::lebesgue(), MotionModel::brownian(),
                         grid, o);
  const auto w = solve_moment(f, {}, AdditiveFunctional::lebesgue(), MotionModel::brownian(), grid, o);
  for (std::size_t i = 0; i < v.grid.nx; ++i) {
    REQUIRE(v.at_r()[i] >= 0.0);
    REQUIRE(v.at_r()[i] <= w.interpolate_r(v.grid.x(i)) + o.tol);
  }
}

TEST_CASE("zero initial data stays zero and v is monotone in f") {
  const auto grid = SpaceTimeGrid::homogeneous(0, 1, 8);
  const auto z = solve_v([](const Point&) { return 0.0; }, BranchingMechanism::quadratic(1.0),
                         AdditiveFunctional::lebesgue(), MotionModel::brownian(), grid);
  CHECK(z.at_r()[0] == 0.0);
  const auto a = solve_v(one, BranchingMechanism::quadratic(1.0), AdditiveFunctional::lebesgue(), MotionModel::brownian(), grid);
  const auto b = solve_v([](const Point&) { return 2.0; }, BranchingMechanism::quadratic(1.0),
                         AdditiveFunctional::lebesgue(), MotionModel::brownian(), grid);
  CHECK(a.at_r()[0] < b.at_r()[0]);
}

TEST_CASE("singular clock on killed BM stays bounded by the heat flow") {
  SolveOptions o;
  o.tol = 1e-3;
  const auto grid = SpaceTimeGrid::uniform(0.0, 8.0, 81, 0.0, 1.0, 50, Boundary::absorbing_at_zero);
  const SpaceFn f = [](const Point& x) { return std::min(std::abs(x[0]), 1.0); };
  const auto v = solve_v(f, BranchingMechanism::quadratic(1.0), AdditiveFunctional::power_law(1.5),
                         MotionModel::killed_brownian(), grid, o);
  const auto w = solve_moment(f, {}, AdditiveFunctional::lebesgue(), MotionModel::killed_brownian(), grid, o);
  CHECK(v.at_r()[0] == 0.0);
  for (std::size_t i = 0; i < v.grid.nx; ++i) REQUIRE(v.at_r()[i] <= w.interpolate_r(v.grid.x(i)) + o.tol);
}

TEST_CASE("history and interpolation") {
  SolveOptions o;
  o.history = true;
  const auto v = solve_v(one, BranchingMechanism::quadratic(1.0), AdditiveFunctional::lebesgue(), MotionModel::brownian(),
                         SpaceTimeGrid::homogeneous(0, 1, 32), o);
  CHECK(v.has_history());
  CHECK(v.interpolate(0.5, 0.0) == Approx(1.0 / 1.5).epsilon(2e-3));
  const auto nohist = solve_v(one, BranchingMechanism::quadratic(1.0), AdditiveFunctional::lebesgue(),
                              MotionModel::brownian(), SpaceTimeGrid::homogeneous(0, 1, 32));
  CHECK_THROWS_AS(nohist.interpolate(0.5, 0.0), InvalidStateError);
}

TEST_CASE("grid and motion preconditions") {
  CHECK_THROWS_AS(SpaceTimeGrid::uniform(1.0, 2.0, 11, 0, 1, 10, Boundary::absorbing_at_zero), DomainError);
  CHECK_THROWS_AS(SpaceTimeGrid::uniform(0.0, 1.0, 2, 0, 1, 10, Boundary::free), DomainError);
  CHECK_THROWS_AS(SpaceTimeGrid::homogeneous(1, 1, 10), DomainError);
  const auto grid = SpaceTimeGrid::uniform(-1.0, 1.0, 21, 0, 1, 10, Boundary::free);
  CHECK_THROWS_AS(solve_v(one, BranchingMechanism::quadratic(1.0), AdditiveFunctional::lebesgue(),
                          MotionModel::alpha_stable(1.5), grid),
                  UnsupportedError);
}

TEST_CASE("refinement halves both steps") {
  const auto g = SpaceTimeGrid::uniform(0.0, 1.0, 11, 0, 1, 10, Boundary::free);
  const auto f = g.refined();
  CHECK(f.nx == 21);
  CHECK(f.nt == 20);
  CHECK(f.h() == Approx(g.h() / 2));
}
