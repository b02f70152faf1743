#include <catch_amalgamated.hpp>

#include <cmath>

#include "superproc/branching.hpp"
#include "superproc/stats.hpp"

using namespace superproc;
using Catch::Approx;

namespace {

double max_psi_gap(const BranchingMechanism& mech, const RescaledFamily& fam) {
  double worst = 0.0;
  const double zmax = 1.0 / fam.beta;
  for (int i = 0; i <= 400; ++i) {
    const double z = zmax * i / 400.0;
    worst = std::max(worst, std::abs(psi_beta_eval(fam, z) - mech(0.0, Point{}, z)));
  }
  return worst;
}

} // namespace

TEST_CASE("mechanism values and derivatives") {
  const auto q = BranchingMechanism::quadratic(2.0, 0.5);
  auto [v, dv] = q.eval_with_derivative(0.0, Point{}, 3.0);
  CHECK(v == Approx(0.5 * 3 + 2 * 9));
  CHECK(dv == Approx(0.5 + 12));
  const auto st = BranchingMechanism::stable(0.5, 2.0);
  std::tie(v, dv) = st.eval_with_derivative(0.0, Point{}, 4.0);
  CHECK(v == Approx(2.0 * 8.0));
  CHECK(dv == Approx(2.0 * 1.5 * 2.0));
  CHECK(q.linear_coefficient(0.0, Point{}) == Approx(0.5));
  CHECK(st.linear_coefficient(0.0, Point{}) == 0.0);
}

TEST_CASE("general mechanism with a spectral atom") {
  SpectralMeasure ell{{{2.0, 0.5}}};
  const auto g = BranchingMechanism::general({}, [](double, const Point&) { return 1.0; }, ell);
  const double z = 0.7;
  CHECK(g(0.0, Point{}, z) == Approx(z * z + 0.5 * (std::exp(-2.0 * z) - 1.0 + 2.0 * z)));
  // tiny arguments keep relative accuracy
  CHECK(g(0.0, Point{}, 1e-7) == Approx(1e-14 + 0.5 * 2e-14).epsilon(1e-6));
}

TEST_CASE("inner scaling and factor") {
  const auto q = BranchingMechanism::quadratic(1.0);
  const auto h = q.with_inner_scale([](double, const Point& x) { return x[0]; });
  CHECK(h(0.0, point1(3.0), 2.0) == Approx(36.0));
  const auto f = q.with_factor([](double, const Point&) { return 0.5; });
  CHECK(f(0.0, Point{}, 2.0) == Approx(2.0));
}

TEST_CASE("mechanism preconditions") {
  CHECK_THROWS_AS(BranchingMechanism::quadratic(-1.0), DomainError);
  CHECK_THROWS_AS(BranchingMechanism::stable(1.5), DomainError);
  CHECK_THROWS_AS(BranchingMechanism::quadratic(1.0)(0.0, Point{}, -1.0), DomainError);
  CHECK_THROWS_AS(BranchingMechanism::general({}, {}, SpectralMeasure{{{-1.0, 1.0}}}), DomainError);
}

TEST_CASE("quadratic family reproduces psi for every beta") {
  for (double a : {0.0, 0.7}) {
    const auto mech = BranchingMechanism::quadratic(1.3, a);
    for (double beta : {1.0, 0.5, 0.1, 0.01}) {
      const auto fam = offspring_family(mech, beta);
      CHECK(max_psi_gap(mech, fam) <= 1e-8);
      CHECK(fam.law.mean() <= 1.0 + 1e-12);
      CHECK(fam.rate_multiplier == Approx(a * beta + 2.6));
    }
  }
}

TEST_CASE("stable family reproduces psi and is critical") {
  for (double beta : {0.5, 0.1, 0.01}) {
    const auto mech = BranchingMechanism::stable(beta);
    const auto fam = offspring_family(mech, beta);
    CHECK(max_psi_gap(mech, fam) <= 1e-8);
    CHECK(fam.law.mean() <= 1.0 + 1e-12);
    CHECK(fam.law.mean() == Approx(1.0).margin(1e-9));
    CHECK(fam.law.probability(0) == Approx(1.0 / (1.0 + beta)).margin(1e-6));
    CHECK(fam.law.probability(1) == 0.0);
    CHECK(fam.law.probability(2) == Approx(beta / 2.0));
    for (double p : fam.law.coeffs()) REQUIRE(p >= 0.0);
  }
}

TEST_CASE("stable family rejects a mismatched scale") {
  CHECK_THROWS_AS(offspring_family(BranchingMechanism::stable(0.5), 0.3), MismatchError);
}

TEST_CASE("series pgf agrees with the closed form away from the truncation") {
  const auto law = stable_offspring_law(0.5);
  for (double z : {0.0, 0.3, 0.6, 0.9})
    CHECK(law.series_pgf(z) == Approx(law.pgf(z)).margin(1e-6));
  for (double z = 0.0; z <= 1.0; z += 0.05) REQUIRE(law.series_pgf(z) >= 0.0);
}

TEST_CASE("offspring sampling matches the law") {
  const auto law = stable_offspring_law(0.5);
  RandomStream rng(21, 0);
  const int N = 100000;
  std::array<int, 4> counts{};
  for (int i = 0; i < N; ++i) {
    const auto n = law.sample(rng);
    if (n < counts.size()) ++counts[n];
  }
  for (std::size_t n = 0; n < counts.size(); ++n) {
    const double p = law.probability(n);
    const double se = std::sqrt(p * (1 - p) / N);
    if (p == 0.0) CHECK(counts[n] == 0);
    else CHECK(std::abs((counts[n] / double(N) - p) / se) < 4.0);
  }
}

TEST_CASE("fold-into-zero tail lowers the mean") {
  FamilyOptions opts;
  opts.n_max = 50;
  opts.tail = TailPolicy::FoldIntoZero;
  const auto folded = stable_offspring_law(0.3, opts);
  CHECK(folded.mean() < 1.0);
  opts.tail = TailPolicy::PreserveMean;
  const auto kept = stable_offspring_law(0.3, opts);
  CHECK(kept.mean() == Approx(1.0).margin(1e-9));
  CHECK(kept.truncated_mass() > 0.0);
}

TEST_CASE("offspring law validation") {
  CHECK_THROWS_AS(OffspringLaw({0.2, 0.2}), DomainError);
  CHECK_THROWS_AS(OffspringLaw({0.0, 0.0, 0.0, 1.0}), DomainError);
  CHECK_THROWS_AS(OffspringLaw({-0.1, 1.1}), DomainError);
  CHECK(OffspringLaw::critical_binary().alpha() == 0.0);
}
