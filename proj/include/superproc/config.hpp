#pragma once

// JSON run configuration: sections {scenario, grid, solver, run, weight, transform}.
// Unknown keys are rejected everywhere.

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "superproc/errors.hpp"
#include "superproc/loglaplace.hpp"
#include "superproc/particles.hpp"
#include "superproc/scenario.hpp"
#include "superproc/transform.hpp"

namespace superproc {

using json = nlohmann::json;

struct GridConfig {
  double x_min = 0.0;
  double x_max = 0.0;
  std::size_t nx = 1;
  std::size_t nt = 100;
  Boundary boundary = Boundary::free;

  SpaceTimeGrid build(double r, double t) const {
    if (nx <= 1) return SpaceTimeGrid::homogeneous(r, t, nt, x_min);
    return SpaceTimeGrid::uniform(x_min, x_max, nx, r, t, nt, boundary);
  }
  bool operator==(const GridConfig&) const = default;
};

struct SolverConfig {
  double tol = 1e-3;
  Splitting splitting = Splitting::Lie;
  int max_refinements = 6;

  SolveOptions build() const {
    SolveOptions o;
    o.tol = tol;
    o.splitting = splitting;
    o.max_refinements = max_refinements;
    return o;
  }
  bool operator==(const SolverConfig&) const = default;
};

struct RunConfig {
  std::vector<double> beta{1.0};
  std::size_t reps = 1000;
  double r = 0.0;
  double t = 1.0;
  std::vector<double> output_times;
  double dt = 0.01;
  std::uint64_t seed = 1;
  std::uint64_t max_particles = 10'000'000;
  std::uint64_t max_generation = 100'000;
  std::string f = "1";                 // test function of x
  std::vector<double> lags;            // tightness
  std::vector<double> levels;          // tightness
  std::vector<double> probe_x;         // admissibility
  std::vector<double> windows;         // admissibility: window widths
  double threshold = 0.5;              // admissibility
  std::vector<double> t_grid;          // extinction: durations t - r

  SimulationOptions simulation() const {
    SimulationOptions o;
    o.dt = dt;
    o.caps.max_particles = max_particles;
    o.caps.max_generation = max_generation;
    return o;
  }
  bool operator==(const RunConfig&) const = default;
};

struct TransformConfig {
  HMethod h_method = HMethod::closed_form;
  double horizon = 1.0;
  bool operator==(const TransformConfig&) const = default;
};

struct Config {
  Scenario scenario = dawson_watanabe();
  GridConfig grid;
  SolverConfig solver;
  RunConfig run;
  std::optional<WeightSpec> weight;
  TransformConfig transform;
  bool operator==(const Config&) const = default;

  /// Explicit weight section, else the scenario's own weight, else rho = 1.
  WeightSpec effective_weight() const { return weight ? *weight : scenario.weight.value_or(WeightSpec{}); }
};

namespace detail {

inline void check_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string("section '") + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string("unknown key '") + key + "' in section '" + section + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

inline void read_number_or_list(const json& j, const char* key, std::vector<double>& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (v.is_number()) out = {v.get<double>()};
  else read(j, key, out);
}

inline Boundary boundary_from(const std::string& s) {
  if (s == "absorbing_at_zero") return Boundary::absorbing_at_zero;
  if (s == "free") return Boundary::free;
  if (s == "truncated_with_decay") return Boundary::truncated_with_decay;
  throw ConfigError("unknown boundary '" + s + "'");
}

inline Splitting splitting_from(const std::string& s) {
  if (s == "lie") return Splitting::Lie;
  if (s == "strang") return Splitting::Strang;
  throw ConfigError("unknown splitting '" + s + "'");
}

inline HMethod hmethod_from(const std::string& s) {
  if (s == "closed_form") return HMethod::closed_form;
  if (s == "grid") return HMethod::grid;
  if (s == "mc") return HMethod::mc;
  throw ConfigError("unknown h_method '" + s + "'");
}

inline json to_json(const MotionSpec& m) { return {{"kind", m.kind}, {"dim", m.dim}, {"alpha", m.alpha}}; }
inline MotionSpec motion_from(const json& j) {
  check_keys(j, "scenario.motion", {"kind", "dim", "alpha"});
  MotionSpec m;
  read(j, "kind", m.kind);
  read(j, "dim", m.dim);
  read(j, "alpha", m.alpha);
  return m;
}

inline json to_json(const MechanismSpec& m) {
  return {{"kind", m.kind}, {"a", m.a}, {"b", m.b}, {"beta", m.beta}, {"scale", m.scale}};
}
inline MechanismSpec mechanism_from(const json& j) {
  check_keys(j, "scenario.mechanism", {"kind", "a", "b", "beta", "scale"});
  MechanismSpec m;
  read(j, "kind", m.kind);
  read(j, "a", m.a);
  read(j, "b", m.b);
  read(j, "beta", m.beta);
  read(j, "scale", m.scale);
  return m;
}

inline json to_json(const ClockSpec& c) {
  json j{{"kind", c.kind}, {"rate", c.rate}, {"sigma", c.sigma}, {"p", c.p}, {"beta", c.beta},
         {"expression", c.expression}, {"singularities", c.singularities}};
  j["cap"] = c.cap ? json(*c.cap) : json(nullptr);
  return j;
}
inline ClockSpec clock_from(const json& j) {
  check_keys(j, "scenario.clock", {"kind", "rate", "sigma", "cap", "p", "beta", "expression", "singularities"});
  ClockSpec c;
  read(j, "kind", c.kind);
  read(j, "rate", c.rate);
  read(j, "sigma", c.sigma);
  if (j.contains("cap") && !j.at("cap").is_null()) c.cap = j.at("cap").get<double>();
  read(j, "p", c.p);
  read(j, "beta", c.beta);
  read(j, "expression", c.expression);
  read(j, "singularities", c.singularities);
  return c;
}

inline json to_json(const WeightSpec& w) { return {{"kind", w.kind}, {"p", w.p}}; }
inline WeightSpec weight_from(const json& j, const char* section) {
  check_keys(j, section, {"kind", "p"});
  WeightSpec w;
  read(j, "kind", w.kind);
  read(j, "p", w.p);
  w.build();
  return w;
}

inline json to_json(const InitialSpec& in) {
  json atoms = json::array();
  for (const auto& a : in.atoms) atoms.push_back({{"x", a.x}, {"w", a.w}});
  json j{{"atoms", atoms}};
  if (in.lebesgue)
    j["lebesgue"] = {{"a", in.lebesgue->a}, {"b", in.lebesgue->b}, {"n_atoms", in.lebesgue->n_atoms},
                     {"density", in.lebesgue->density}};
  else
    j["lebesgue"] = nullptr;
  return j;
}
inline InitialSpec initial_from(const json& j) {
  check_keys(j, "scenario.initial", {"atoms", "lebesgue"});
  InitialSpec in;
  if (j.contains("atoms")) {
    in.atoms.clear();
    for (const auto& a : j.at("atoms")) {
      check_keys(a, "scenario.initial.atoms[]", {"x", "w"});
      InitialSpec::Atom atom;
      if (a.contains("x") && a.at("x").is_number()) atom.x = {a.at("x").get<double>()};
      else read(a, "x", atom.x);
      read(a, "w", atom.w);
      in.atoms.push_back(atom);
    }
  }
  if (j.contains("lebesgue") && !j.at("lebesgue").is_null()) {
    const auto& l = j.at("lebesgue");
    check_keys(l, "scenario.initial.lebesgue", {"a", "b", "n_atoms", "density"});
    InitialSpec::Interval iv;
    read(l, "a", iv.a);
    read(l, "b", iv.b);
    read(l, "n_atoms", iv.n_atoms);
    read(l, "density", iv.density);
    in.lebesgue = iv;
    if (!j.contains("atoms")) in.atoms.clear();
  }
  return in;
}

} // namespace detail

inline json scenario_to_json(const Scenario& s) {
  json j{{"name", s.name},
         {"preset", s.preset},
         {"params", s.params},
         {"motion", detail::to_json(s.motion)},
         {"mechanism", detail::to_json(s.mechanism)},
         {"clock", detail::to_json(s.clock)},
         {"initial", detail::to_json(s.initial)},
         {"notes", s.notes}};
  j["weight"] = s.weight ? detail::to_json(*s.weight) : json(nullptr);
  return j;
}

/// A preset name plus optional explicit overrides, or a fully explicit scenario.
inline Scenario scenario_from_json(const json& j) {
  detail::check_keys(j, "scenario",
                     {"name", "preset", "params", "motion", "mechanism", "clock", "weight", "initial", "notes"});
  Scenario s;
  std::string preset;
  detail::read(j, "preset", preset);
  std::map<std::string, double> params;
  detail::read(j, "params", params);
  if (!preset.empty()) s = make_preset(preset, params);
  else s.params = params;
  detail::read(j, "name", s.name);
  if (j.contains("motion")) s.motion = detail::motion_from(j.at("motion"));
  if (j.contains("mechanism")) s.mechanism = detail::mechanism_from(j.at("mechanism"));
  if (j.contains("clock")) s.clock = detail::clock_from(j.at("clock"));
  if (j.contains("weight")) {
    if (j.at("weight").is_null()) s.weight.reset();
    else s.weight = detail::weight_from(j.at("weight"), "scenario.weight");
  }
  if (j.contains("initial")) s.initial = detail::initial_from(j.at("initial"));
  detail::read(j, "notes", s.notes);
  // validate every component
  s.motion.build();
  s.mechanism.build();
  s.clock.build();
  s.initial.build();
  return s;
}

inline json config_to_json(const Config& c) {
  json j;
  j["scenario"] = scenario_to_json(c.scenario);
  j["grid"] = {{"x_min", c.grid.x_min}, {"x_max", c.grid.x_max}, {"nx", c.grid.nx}, {"nt", c.grid.nt},
               {"boundary", to_string(c.grid.boundary)}};
  j["solver"] = {{"tol", c.solver.tol}, {"splitting", to_string(c.solver.splitting)},
                 {"max_refinements", c.solver.max_refinements}};
  const auto& r = c.run;
  j["run"] = {{"beta", r.beta},         {"reps", r.reps},
              {"r", r.r},               {"t", r.t},
              {"output_times", r.output_times}, {"dt", r.dt},
              {"seed", r.seed},         {"caps", {{"max_particles", r.max_particles}, {"max_generation", r.max_generation}}},
              {"f", r.f},               {"lags", r.lags},
              {"levels", r.levels},     {"probe_x", r.probe_x},
              {"windows", r.windows},   {"threshold", r.threshold},
              {"t_grid", r.t_grid}};
  j["weight"] = c.weight ? detail::to_json(*c.weight) : json(nullptr);
  j["transform"] = {{"h_method", to_string(c.transform.h_method)}, {"horizon", c.transform.horizon}};
  return j;
}

inline Config config_from_json(const json& j) {
  detail::check_keys(j, "root", {"scenario", "grid", "solver", "run", "weight", "transform"});
  Config c;
  if (j.contains("scenario")) c.scenario = scenario_from_json(j.at("scenario"));
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    detail::check_keys(g, "grid", {"x_min", "x_max", "nx", "nt", "boundary"});
    detail::read(g, "x_min", c.grid.x_min);
    detail::read(g, "x_max", c.grid.x_max);
    detail::read(g, "nx", c.grid.nx);
    detail::read(g, "nt", c.grid.nt);
    if (g.contains("boundary")) c.grid.boundary = detail::boundary_from(g.at("boundary").get<std::string>());
  }
  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    detail::check_keys(s, "solver", {"tol", "splitting", "max_refinements"});
    detail::read(s, "tol", c.solver.tol);
    if (s.contains("splitting")) c.solver.splitting = detail::splitting_from(s.at("splitting").get<std::string>());
    detail::read(s, "max_refinements", c.solver.max_refinements);
  }
  if (j.contains("run")) {
    const auto& r = j.at("run");
    detail::check_keys(r, "run", {"beta", "reps", "r", "t", "output_times", "dt", "seed", "caps", "f", "lags",
                                  "levels", "probe_x", "windows", "threshold", "t_grid"});
    detail::read_number_or_list(r, "beta", c.run.beta);
    detail::read(r, "reps", c.run.reps);
    detail::read(r, "r", c.run.r);
    detail::read(r, "t", c.run.t);
    detail::read(r, "output_times", c.run.output_times);
    detail::read(r, "dt", c.run.dt);
    detail::read(r, "seed", c.run.seed);
    if (r.contains("caps")) {
      const auto& caps = r.at("caps");
      detail::check_keys(caps, "run.caps", {"max_particles", "max_generation"});
      detail::read(caps, "max_particles", c.run.max_particles);
      detail::read(caps, "max_generation", c.run.max_generation);
    }
    detail::read(r, "f", c.run.f);
    Expression::parse(c.run.f);
    detail::read_number_or_list(r, "lags", c.run.lags);
    detail::read_number_or_list(r, "levels", c.run.levels);
    detail::read_number_or_list(r, "probe_x", c.run.probe_x);
    detail::read_number_or_list(r, "windows", c.run.windows);
    detail::read(r, "threshold", c.run.threshold);
    detail::read_number_or_list(r, "t_grid", c.run.t_grid);
    for (double b : c.run.beta)
      if (!(b > 0.0 && b <= 1.0)) throw ConfigError("run.beta values must lie in (0, 1]");
    if (!(c.run.t > c.run.r)) throw ConfigError("run needs r < t");
  }
  if (j.contains("weight") && !j.at("weight").is_null()) c.weight = detail::weight_from(j.at("weight"), "weight");
  if (j.contains("transform")) {
    const auto& t = j.at("transform");
    detail::check_keys(t, "transform", {"h_method", "horizon"});
    if (t.contains("h_method")) c.transform.h_method = detail::hmethod_from(t.at("h_method").get<std::string>());
    detail::read(t, "horizon", c.transform.horizon);
  }
  return c;
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

/// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
inline std::string config_hash(const Config& c) {
  const std::string text = config_to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

} // namespace superproc
