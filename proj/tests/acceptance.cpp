// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//   acceptance [--workers N]

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "superproc/harness.hpp"

using namespace superproc;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

const SpaceFn one = [](const Point&) { return 1.0; };

SolveOptions tight() {
  SolveOptions o;
  o.tol = 1e-6;
  o.splitting = Splitting::Strang;
  o.max_refinements = 10;
  return o;
}

template <class F>
double seconds_of(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string failed_verdicts(const RunResult& r) {
  std::string s;
  for (const auto& v : r.verdicts)
    if (!v.pass) s += " " + v.name + "=" + num(v.statistic);
  return s;
}

// ---------------------------------------------------------------------------------------

Outcome homogeneous_oracle(const BranchingMechanism& mech, double exact) {
  GridFunction v;
  const double sec = seconds_of([&] {
    v = solve_v(one, mech, AdditiveFunctional::lebesgue(), MotionModel::brownian(), SpaceTimeGrid::homogeneous(0, 1, 16),
                tight());
  });
  const double rel = std::abs(v.at_r()[0] - exact) / exact;
  return {rel <= 1e-4 && sec < 1.0,
          "v(r) = " + num(v.at_r()[0]) + ", rel err " + num(rel) + ", " + num(sec) + " s"};
}

Outcome riccati(unsigned) { return homogeneous_oracle(BranchingMechanism::quadratic(1.0), 0.5); }

Outcome stable_oracle(unsigned) { return homogeneous_oracle(BranchingMechanism::stable(0.5), 4.0 / 9.0); }

Outcome convergence(unsigned workers) {
  const Config cfg = load_config(SUPERPROC_CONFIG_DIR "/dawson_watanabe_convergence.json");
  RunResult r;
  const double sec = seconds_of([&] { r = run_convergence(cfg, workers); });
  std::string zs;
  for (const auto& row : r.table("convergence").rows) zs += " " + num(row[6]);
  const auto& trend = r.verdict("trend");
  return {r.all_pass() && sec < 300.0,
          "z:" + zs + ", trend " + num(trend.statistic) + ", " + num(sec) + " s" + failed_verdicts(r)};
}

Outcome hyperbolic_mass(unsigned workers) {
  bool pass = true;
  std::string detail;
  double total = 0.0;
  std::uint64_t tag = 0;
  for (double beta : {1.0, 0.5}) {
    for (double sigma : {1.0, 1.5, 2.0}) {
      Config cfg;
      cfg.scenario = hyperbolic(beta, sigma);
      cfg.run.reps = 10000;
      cfg.run.t_grid = {1.0};
      cfg.run.seed = derive_seed(4, tag++);
      RunResult r;
      total += seconds_of([&] { r = run_extinction_check(cfg, workers); });
      const double z = r.table("extinction").rows[0][4];
      pass = pass && r.all_pass();
      detail += " (" + num(beta) + "," + num(sigma) + ") z=" + num(z);
    }
  }
  return {pass && total < 300.0, "oracle erf(1/sqrt 2);" + detail + ", " + num(total) + " s"};
}

Outcome transform_identity(unsigned) {
  const auto grid = SpaceTimeGrid::uniform(0.0, 8.0, 81, 0.0, 1.0, 50, Boundary::absorbing_at_zero);
  SolveOptions o;
  o.tol = 1e-4;
  o.splitting = Splitting::Strang;
  const auto rep = verify_identity(hyperbolic(1.0, 1.5).system(), HFunction::abs_x(1.0),
                                   [](const Point& x) { return std::min(std::abs(x[0]), 1.0); }, grid, o);
  return {rep.pass, "discrepancy " + num(rep.discrepancy) + " < " + num(rep.tolerance)};
}

Outcome offspring_exactness(unsigned) {
  bool pass = true;
  double worst = 0.0;
  double worst_mean = 0.0;
  for (double beta : {1.0, 0.5, 0.1, 0.01}) {
    for (const auto& mech : {BranchingMechanism::quadratic(1.0), BranchingMechanism::quadratic(1.0, 0.3),
                             BranchingMechanism::stable(beta)}) {
      const RescaledFamily fam = offspring_family(mech, beta);
      const int n = 2000;
      for (int k = 0; k <= n; ++k) {
        const double z = (1.0 / beta) * k / n;
        const double psi = mech(0.0, Point{}, z);
        const double gap = std::abs(psi_beta_eval(fam, z) - psi);
        worst = std::max(worst, gap);
      }
      for (double q : fam.law.coeffs()) pass = pass && q >= 0.0;
      for (const auto& [m, q] : fam.law.tail_atoms()) pass = pass && q >= 0.0;
      pass = pass && fam.law.mean() <= 1.0 + 1e-12;
      worst_mean = std::max(worst_mean, fam.law.mean());
    }
  }
  return {pass && worst <= 1e-8, "max |psi_beta - psi| " + num(worst) + ", max mean " + num(worst_mean)};
}

Outcome lemma_suite(unsigned workers) {
  std::vector<std::pair<std::string, Scenario>> scenarios{{"dawson_watanabe", dawson_watanabe()},
                                                          {"hyperbolic(1,1.5)", hyperbolic(1.0, 1.5)},
                                                          {"hyperbolic(0.5,1.5)", hyperbolic(0.5, 1.5)},
                                                          {"iscoe(2,3,1)", iscoe(2.0, 3.0, 1.0)}};
  bool pass = true;
  std::string detail;
  std::uint64_t tag = 0;
  for (const auto& [name, sc] : scenarios) {
    Config cfg;
    cfg.scenario = sc;
    cfg.run.reps = 10000;
    cfg.run.seed = derive_seed(7, tag++);
    const RunResult r = run_lemma_checks(cfg, workers);
    double zmax = -INFINITY;
    for (const auto& v : r.verdicts) zmax = std::max(zmax, v.statistic);
    pass = pass && r.all_pass();
    detail += " " + name + " max z " + num(zmax) + failed_verdicts(r) + ";";
  }
  return {pass, detail};
}

Outcome admissibility(unsigned) {
  const Config cfg = load_config(SUPERPROC_CONFIG_DIR "/hyperbolic_admissibility.json");
  const RunResult r = run_admissibility(cfg);
  std::string detail;
  for (const auto& v : r.verdicts) detail += " " + v.name + (v.pass ? " ok" : " FAILED") + " (" + num(v.statistic) + ")";
  return {r.all_pass() && r.verdicts.size() == 3, detail};
}

Outcome determinism(unsigned) {
  Config conv = load_config(SUPERPROC_CONFIG_DIR "/dawson_watanabe_convergence.json");
  conv.run.reps = 1000;
  conv.run.beta = {1.0, 0.3};
  Config ext = load_config(SUPERPROC_CONFIG_DIR "/hyperbolic_extinction.json");
  ext.run.reps = 1000;
  bool pass = true;
  std::string ref_c, ref_e;
  for (unsigned w : {1u, 4u, 8u}) {
    const std::string c = result_json_text(run_convergence(conv, w));
    const std::string e = result_json_text(run_extinction_check(ext, w));
    if (w == 1) {
      ref_c = c;
      ref_e = e;
    } else {
      pass = pass && c == ref_c && e == ref_e;
    }
  }
  return {pass, pass ? "result.json identical for 1, 4, 8 workers" : "result.json differs across worker counts"};
}

Outcome grid_convergence(unsigned) {
  std::vector<std::pair<std::string, Config>> cases;
  {
    Config c = load_config(SUPERPROC_CONFIG_DIR "/dawson_watanabe_convergence.json");
    cases.emplace_back("dawson_watanabe", c);
    c.scenario.mechanism = {"stable", 0.0, 1.0, 0.5, 1.0};
    c.scenario.name = "stable";
    cases.emplace_back("stable(0.5)", c);
  }
  for (double beta : {1.0, 0.5}) {
    Config c = load_config(SUPERPROC_CONFIG_DIR "/hyperbolic_moments.json");
    c.scenario = hyperbolic(beta, 1.5);
    cases.emplace_back("hyperbolic(" + num(beta) + ",1.5)", c);
  }
  for (double beta : {1.0, 0.5}) {
    Config c = load_config(SUPERPROC_CONFIG_DIR "/iscoe_solve.json");
    c.scenario = iscoe(2.0, 3.0, beta);
    cases.emplace_back("iscoe(2,3," + num(beta) + ")", c);
  }
  bool pass = true;
  std::string detail;
  for (const auto& [name, c] : cases) {
    const auto r = run_grid_convergence(c);
    const auto& v = r.verdict("halving");
    pass = pass && v.pass;
    detail += " " + name + " " + num(v.statistic) + "/" + num(v.threshold) + ";";
  }
  return {pass, detail};
}

} // namespace

int main(int argc, char** argv) {
  unsigned workers = 8;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--workers") == 0 && i + 1 < argc) {
      workers = static_cast<unsigned>(std::strtoul(argv[++i], nullptr, 10));
    } else {
      std::cerr << "usage: acceptance [--workers N]\n";
      return 1;
    }
  }
  if (workers == 0) workers = 1;

  const std::vector<std::pair<std::string, std::function<Outcome(unsigned)>>> criteria{
      {"riccati oracle", riccati},
      {"stable branching oracle", stable_oracle},
      {"convergence to the superprocess", convergence},
      {"hyperbolic mean mass", hyperbolic_mass},
      {"transform identity", transform_identity},
      {"offspring exactness", offspring_exactness},
      {"domination and maximal inequality", lemma_suite},
      {"admissibility diagnostics", admissibility},
      {"determinism across workers", determinism},
      {"grid convergence", grid_convergence}};

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second(workers);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS " : "FAIL ") << i + 1 << " " << criteria[i].first << ":" << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
