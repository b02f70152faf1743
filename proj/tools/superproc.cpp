// superproc: command-line front end for the experiment harness.
//
// Exit codes: 0 all verdicts pass, 2 some statistical verdict failed, 1 execution error.

#include <chrono>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "superproc/harness.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  unsigned workers = 1;
  std::string format = "csv";
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "master seed (overrides run.seed)");
  sub->add_option("--out", c.out, "output directory");
  sub->add_option("--workers", c.workers, "worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--format", c.format, "table format")->check(CLI::IsMember({"csv", "json"}));
}

} // namespace

int main(int argc, char** argv) {
  using namespace superproc;
  CLI::App app{"Branching particle systems and superprocess log-Laplace solvers"};
  app.require_subcommand(1);
  Common common;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"simulate", "replica means of the rescaled particle system"},
      {"solve", "grid solution of the log-Laplace equations"},
      {"convergence", "Laplace functionals along a beta schedule vs. solvers"},
      {"moments", "first moment vs. the moment solver"},
      {"extinction", "mean mass decay of a killed-BM scenario"},
      {"admissibility", "small-window diagnostics of the hyperbolic clock"},
      {"tightness", "mass exceedance and squared-increment diagnostics"},
      {"lemmas", "mean domination and maximal inequality checks"},
      {"grid", "solver change under halving (h, tau)"}};
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, common);
    subs.push_back(sub);
  }
  auto* scenarios = app.add_subcommand("scenarios", "scenario presets");
  scenarios->add_subcommand("list", "print preset names")->final_callback([] {
    for (const auto& n : scenario_names()) std::cout << n << "\n";
  });
  scenarios->require_subcommand(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  if (scenarios->parsed()) return 0;

  try {
    Config cfg = common.config.empty() ? Config{} : load_config(common.config);
    if (common.seed) cfg.run.seed = *common.seed;
    const auto t0 = std::chrono::steady_clock::now();
    RunResult res;
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "simulate") res = run_simulate(cfg, common.workers);
    else if (cmd == "solve") res = run_solve(cfg);
    else if (cmd == "convergence") res = run_convergence(cfg, common.workers);
    else if (cmd == "moments") res = run_moment_check(cfg, common.workers);
    else if (cmd == "extinction") res = run_extinction_check(cfg, common.workers);
    else if (cmd == "admissibility") res = run_admissibility(cfg);
    else if (cmd == "tightness") res = run_tightness_diagnostic(cfg, common.workers);
    else if (cmd == "lemmas") res = run_lemma_checks(cfg, common.workers);
    else res = run_grid_convergence(cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_outputs(res, common.out, common.format == "csv" ? OutputFormat::csv : OutputFormat::json, secs,
                  common.workers);
    for (const auto& v : res.verdicts)
      std::cout << (v.pass ? "PASS " : "FAIL ") << v.name << "  stat=" << v.statistic << "  " << v.detail << "\n";
    std::cout << "wrote " << common.out << "/result.json (" << secs << " s)\n";
    return res.all_pass() ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
