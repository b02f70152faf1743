#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "superproc/parallel.hpp"
#include "superproc/rng.hpp"
#include "superproc/stats.hpp"

using namespace superproc;
using Catch::Approx;

TEST_CASE("streams are reproducible and keyed by (seed, stream)") {
  RandomStream a(42, 7), b(42, 7), c(42, 8), d(43, 7);
  bool differ_c = false, differ_d = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    REQUIRE(x == b.next_u64());
    differ_c = differ_c || x != c.next_u64();
    differ_d = differ_d || x != d.next_u64();
  }
  CHECK(differ_c);
  CHECK(differ_d);
}

TEST_CASE("uniform and normal moments") {
  RandomStream rng(1, 0);
  Accumulator u, n, n2;
  const int N = 200000;
  for (int i = 0; i < N; ++i) {
    const double x = rng.uniform();
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
    u.add(x);
    const double z = rng.normal();
    n.add(z);
    n2.add(z * z);
  }
  CHECK(std::abs(z_score(u.mean(), 0.5, u.std_error())) < 4.0);
  CHECK(std::abs(z_score(n.mean(), 0.0, n.std_error())) < 4.0);
  CHECK(std::abs(z_score(n2.mean(), 1.0, n2.std_error())) < 4.0);
}

TEST_CASE("normal sample passes Kolmogorov-Smirnov") {
  RandomStream rng(3, 0);
  std::vector<double> xs(5000);
  for (auto& x : xs) x = rng.normal();
  const double d = ks_statistic(xs, [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); });
  CHECK(d < ks_critical(1e-4, xs.size()));
}

TEST_CASE("exponential KS") {
  RandomStream rng(4, 0);
  std::vector<double> xs(5000);
  for (auto& x : xs) x = rng.exponential();
  CHECK(ks_statistic(xs, [](double x) { return x > 0 ? 1.0 - std::exp(-x) : 0.0; }) < ks_critical(1e-4, xs.size()));
}

TEST_CASE("poisson mean and variance in both regimes") {
  for (double mean : {0.3, 3.0, 100.0}) {
    RandomStream rng(5, static_cast<std::uint64_t>(mean * 10));
    Accumulator acc;
    for (int i = 0; i < 40000; ++i) acc.add(static_cast<double>(rng.poisson(mean)));
    CHECK(std::abs(z_score(acc.mean(), mean, acc.std_error())) < 4.0);
    // variance within 5%
    CHECK(acc.variance() == Approx(mean).epsilon(0.05));
  }
  RandomStream rng(6, 0);
  CHECK(rng.poisson(0.0) == 0);
}

TEST_CASE("z-score conventions") {
  CHECK(z_score(1.0, 1.0, 0.0) == 0.0);
  CHECK(std::isinf(z_score(1.1, 1.0, 0.0)));
  CHECK(z_score(2.0, 1.0, 0.3, 0.4) == Approx(2.0));
}

TEST_CASE("kendall tau on monotone and reversed sequences") {
  std::vector<double> a{1, 2, 3, 4}, b{10, 20, 30, 40}, c{4, 3, 2, 1};
  CHECK(kendall_tau(a, b) == Approx(1.0));
  CHECK(kendall_tau(a, c) == Approx(-1.0));
}

TEST_CASE("parallel_map output does not depend on worker count") {
  auto task = [](std::size_t i) {
    RandomStream rng(9, i);
    return rng.normal();
  };
  const auto one = parallel_map<double>(257, 1, task);
  const auto four = parallel_map<double>(257, 4, task);
  const auto eight = parallel_map<double>(257, 8, task);
  CHECK(one == four);
  CHECK(one == eight);
}

TEST_CASE("parallel_map propagates exceptions") {
  CHECK_THROWS_AS(parallel_map<int>(10, 3,
                                    [](std::size_t i) -> int {
                                      if (i == 5) throw std::runtime_error("boom");
                                      return 0;
                                    }),
                  std::runtime_error);
}
