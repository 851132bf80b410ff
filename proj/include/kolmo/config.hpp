// Experiment configuration: TOML ingestion, strict validation (unknown keys
// are rejected by name), defaults recorded so the manifest can echo every
// resolved value.
#ifndef KOLMO_CONFIG_HPP
#define KOLMO_CONFIG_HPP

#include <kolmo/measures.hpp>
#include <kolmo/toml.hpp>

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

namespace kolmo {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  // [operator] — both the compiled spec and the raw text (for the manifest).
  OperatorSpec op;
  std::vector<std::string> q_text, b_text;
  std::vector<std::vector<std::string>> B_text;
  Params params;

  Grid grid;

  // [solver]
  EvolveOptions solver;
  double horizon = 1.0;

  // [audit]
  std::vector<double> p0{2.0};
  std::string phi_text = "1+x^2";
  Expr phi;
  double gamma = 3.0;

  std::string experiment = "all";

  // [evolve]
  std::vector<std::string> f0_text;      // defaults to cos/sin per component
  std::vector<std::string> exact_text;   // empty: no error report
  double evolve_tol = 1e-3;

  // [invariant]
  ExtractOptions extract;
  double mass_tol = 1e-3;

  // [ode]
  std::vector<double> rho0;    // initial values at the window center, or
  std::vector<double> target;  // target masses (mutually exclusive)
  double ode_tol = 1e-11;

  // [estimates]
  std::vector<std::string> est_f_text;
  std::vector<double> est_times{0.5, 1.0};
  double est_p = 0.0;  // 0: use p0[0]
  double est_horizon = 10.0;
  double est_dt = 1e-3;

  // [asymptotics]
  std::vector<std::string> asym_f_text;
  std::vector<std::vector<double>> probes;
  double asym_T = 10.0;
  double asym_tol = 1e-2;
  std::string bundle_source = "ode";  // or "extract"

  std::string outdir = "out";
  std::int64_t seed = 0;

  std::vector<std::string> defaults_applied;  // "section.key = value" per filled default
  std::vector<std::string> overrides;         // command-line overrides, same format
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// One config section: typed getters that record defaults and remember which
// keys were consumed so leftovers can be rejected by name.
class Section {
 public:
  Section(const toml::Table* t, std::string name, std::vector<std::string>* defaults)
      : t_(t), name_(std::move(name)), defaults_(defaults) {}

  bool present() const { return t_ != nullptr; }

  const toml::Value* find(const std::string& key) {
    if (!t_) return nullptr;
    seen_.insert(key);
    auto it = t_->find(key);
    return it == t_->end() ? nullptr : &it->second;
  }

  double number(const std::string& key, std::optional<double> fallback = {}) {
    const toml::Value* v = find(key);
    if (!v) return defaulted(key, fallback, fallback ? fmt_double(*fallback) : "");
    if (!v->is_number()) type_error(key, "a number", *v);
    return v->as_number();
  }

  std::int64_t integer(const std::string& key, std::optional<std::int64_t> fallback = {}) {
    const toml::Value* v = find(key);
    if (!v) return defaulted(key, fallback, fallback ? std::to_string(*fallback) : "");
    if (!v->is_integer()) type_error(key, "an integer", *v);
    return v->as_integer();
  }

  bool boolean(const std::string& key, std::optional<bool> fallback = {}) {
    const toml::Value* v = find(key);
    if (!v) return defaulted(key, fallback, fallback && *fallback ? "true" : "false");
    if (!v->is_bool()) type_error(key, "a boolean", *v);
    return v->as_bool();
  }

  std::string string(const std::string& key, std::optional<std::string> fallback = {}) {
    const toml::Value* v = find(key);
    if (!v) return defaulted(key, fallback, fallback ? "\"" + *fallback + "\"" : "");
    if (!v->is_string()) type_error(key, "a string", *v);
    return v->as_string();
  }

  std::vector<std::string> string_list(const std::string& key) {
    const toml::Value* v = find(key);
    if (!v) return {};
    std::vector<std::string> out;
    for (const toml::Value& e : array_of(key, *v)) {
      if (!e.is_string()) type_error(key, "an array of strings", e);
      out.push_back(e.as_string());
    }
    return out;
  }

  std::vector<double> number_list(const std::string& key) {
    const toml::Value* v = find(key);
    if (!v) return {};
    std::vector<double> out;
    for (const toml::Value& e : array_of(key, *v)) {
      if (!e.is_number()) type_error(key, "an array of numbers", e);
      out.push_back(e.as_number());
    }
    return out;
  }

  std::vector<std::vector<std::string>> string_matrix(const std::string& key) {
    const toml::Value* v = find(key);
    if (!v) return {};
    std::vector<std::vector<std::string>> out;
    for (const toml::Value& row : array_of(key, *v)) {
      if (!row.is_array()) type_error(key, "an array of arrays", row);
      std::vector<std::string> r;
      for (const toml::Value& e : row.as_array()) {
        if (!e.is_string()) type_error(key, "an array of string arrays", e);
        r.push_back(e.as_string());
      }
      out.push_back(std::move(r));
    }
    return out;
  }

  const toml::Table* table(const std::string& key) {
    const toml::Value* v = find(key);
    if (!v) return nullptr;
    if (!v->is_table()) type_error(key, "a table", *v);
    return &v->as_table();
  }

  // Any key we never asked about is unknown.
  void reject_unknown() const {
    if (!t_) return;
    for (const auto& [key, value] : *t_)
      if (!seen_.count(key))
        throw ConfigError("unknown key '" + (name_.empty() ? key : name_ + "." + key) + "'");
  }

  [[noreturn]] void missing(const std::string& key) const {
    throw ConfigError("missing required key '" + qualify(key) + "'");
  }

 private:
  const toml::Table* t_;
  std::string name_;
  std::vector<std::string>* defaults_;
  std::set<std::string> seen_;

  std::string qualify(const std::string& key) const {
    return name_.empty() ? key : name_ + "." + key;
  }

  template <class T>
  T defaulted(const std::string& key, std::optional<T> fallback, const std::string& shown) {
    if (!fallback) missing(key);
    defaults_->push_back(qualify(key) + " = " + shown);
    return *fallback;
  }

  const toml::Array& array_of(const std::string& key, const toml::Value& v) const {
    if (!v.is_array()) type_error(key, "an array", v);
    return v.as_array();
  }

  [[noreturn]] void type_error(const std::string& key, const char* want,
                               const toml::Value& got) const {
    throw ConfigError("key '" + qualify(key) + "' must be " + want + " (got " + got.type_name() +
                      ")");
  }
};

inline Expr parse_expr_at(const std::string& text, const std::string& where) {
  try {
    return parse_expr(text);
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline void record(std::vector<std::string>* defaults, const std::string& line) {
  defaults->push_back(line);
}

}  // namespace detail

inline ExperimentConfig load_config_from_table(const toml::Table& root) {
  ExperimentConfig cfg;
  auto* defs = &cfg.defaults_applied;

  detail::Section top(&root, "", defs);

  // ----- [operator] -----
  const toml::Table* op_tab = top.table("operator");
  if (!op_tab) throw ConfigError("missing required table [operator]");
  detail::Section op(op_tab, "operator", defs);
  cfg.op.d = static_cast<int>(op.integer("d", 1));
  cfg.op.m = static_cast<int>(op.integer("m", 1));
  cfg.q_text = op.string_list("q");
  cfg.b_text = op.string_list("b");
  cfg.B_text = op.string_matrix("B");
  if (cfg.q_text.empty()) op.missing("q");
  if (cfg.b_text.empty()) op.missing("b");
  if (cfg.B_text.empty()) op.missing("B");
  if (const toml::Table* pt = op.table("params")) {
    detail::Section params(pt, "operator.params", defs);
    for (const auto& [key, value] : *pt) cfg.params[key] = params.number(key);
    params.reject_unknown();
  }
  op.reject_unknown();

  cfg.op.params = cfg.params;
  for (std::size_t i = 0; i < cfg.q_text.size(); ++i)
    cfg.op.q.push_back(detail::parse_expr_at(cfg.q_text[i], "operator.q[" + std::to_string(i) + "]"));
  for (std::size_t i = 0; i < cfg.b_text.size(); ++i)
    cfg.op.b.push_back(detail::parse_expr_at(cfg.b_text[i], "operator.b[" + std::to_string(i) + "]"));
  // B holds one m x m coupling matrix per coordinate, written as d stacked
  // blocks of m rows (for d = 1 this is just the m x m matrix).
  {
    const std::size_t want = static_cast<std::size_t>(cfg.op.d) * static_cast<std::size_t>(cfg.op.m);
    if (cfg.B_text.size() != want)
      throw ConfigError("key 'operator.B' must hold d*m rows of m entries (got " +
                        std::to_string(cfg.B_text.size()) + " rows, want " + std::to_string(want) + ")");
    for (int k = 0; k < cfg.op.d; ++k) {
      std::vector<Expr> flat;
      for (int r = 0; r < cfg.op.m; ++r) {
        const std::size_t row = static_cast<std::size_t>(k * cfg.op.m + r);
        if (cfg.B_text[row].size() != static_cast<std::size_t>(cfg.op.m))
          throw ConfigError("key 'operator.B' row " + std::to_string(row) + " must hold m = " +
                            std::to_string(cfg.op.m) + " entries");
        for (std::size_t c = 0; c < cfg.B_text[row].size(); ++c)
          flat.push_back(detail::parse_expr_at(
              cfg.B_text[row][c],
              "operator.B[" + std::to_string(row) + "][" + std::to_string(c) + "]"));
      }
      cfg.op.B.push_back(std::move(flat));
    }
  }
  try {
    cfg.op.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("operator: ") + e.what());
  }

  // ----- [grid] -----
  detail::Section grid(top.table("grid"), "grid", defs);
  cfg.grid.d = cfg.op.d;
  cfg.grid.L = grid.number("L", 8.0);
  cfg.grid.N = static_cast<int>(grid.integer("N", 512));
  const std::string bc = grid.string("bc", std::string("neumann"));
  if (bc == "neumann")
    cfg.grid.bc = BC::Neumann;
  else if (bc == "dirichlet")
    cfg.grid.bc = BC::Dirichlet;
  else if (bc == "periodic")
    cfg.grid.bc = BC::Periodic;
  else
    throw ConfigError("key 'grid.bc' must be one of neumann|dirichlet|periodic (got \"" + bc +
                      "\")");
  cfg.grid.center = grid.number("center", 0.0);
  grid.reject_unknown();
  if (cfg.grid.N < 9)
    throw ConfigError("grid too coarse: N must be at least 9 (got " +
                      std::to_string(cfg.grid.N) + ")");
  if (!(cfg.grid.L > 0.0)) throw ConfigError("key 'grid.L' must be positive");

  // ----- [solver] -----
  detail::Section solver(top.table("solver"), "solver", defs);
  const std::string scheme = solver.string("scheme", std::string("crank-nicolson"));
  if (scheme == "crank-nicolson")
    cfg.solver.scheme = Scheme::CrankNicolson;
  else if (scheme == "implicit-euler")
    cfg.solver.scheme = Scheme::ImplicitEuler;
  else
    throw ConfigError("key 'solver.scheme' must be crank-nicolson|implicit-euler (got \"" +
                      scheme + "\")");
  cfg.solver.dt = solver.number("dt", 1e-2);
  cfg.solver.snapshot_every = static_cast<int>(solver.integer("snapshot_every", 10));
  cfg.solver.rannacher = solver.boolean("rannacher", false);
  cfg.solver.solver_tol = solver.number("tol", 1e-10);
  cfg.horizon = solver.number("horizon", 1.0);
  solver.reject_unknown();
  if (!(cfg.solver.dt > 0.0)) throw ConfigError("key 'solver.dt' must be positive");
  if (!(cfg.horizon > 0.0)) throw ConfigError("key 'solver.horizon' must be positive");

  // ----- [audit] -----
  detail::Section audit(top.table("audit"), "audit", defs);
  std::vector<double> p0 = audit.number_list("p0");
  if (!p0.empty())
    cfg.p0 = std::move(p0);
  else
    detail::record(defs, "audit.p0 = [2]");
  cfg.phi_text = audit.string("phi", std::string("1+x^2"));
  cfg.gamma = audit.number("gamma", 3.0);
  audit.reject_unknown();
  cfg.phi = detail::parse_expr_at(cfg.phi_text, "audit.phi");
  for (double p : cfg.p0)
    if (!(p > 1.0)) throw ConfigError("key 'audit.p0' entries must exceed 1");
  if (!(cfg.gamma > 2.0)) throw ConfigError("key 'audit.gamma' must exceed 2");

  // ----- [evolve] -----
  detail::Section evolve(top.table("evolve"), "evolve", defs);
  cfg.f0_text = evolve.string_list("f0");
  cfg.exact_text = evolve.string_list("exact");
  cfg.evolve_tol = evolve.number("tol", 1e-3);
  evolve.reject_unknown();
  if (cfg.f0_text.empty()) {
    for (int j = 0; j < cfg.op.m; ++j) cfg.f0_text.push_back(j % 2 == 0 ? "cos(x)" : "sin(x)");
    detail::record(defs, "evolve.f0 = [alternating cos(x)/sin(x)]");
  }
  if (static_cast<int>(cfg.f0_text.size()) != cfg.op.m)
    throw ConfigError("key 'evolve.f0' must list exactly m expressions");
  if (!cfg.exact_text.empty() && static_cast<int>(cfg.exact_text.size()) != cfg.op.m)
    throw ConfigError("key 'evolve.exact' must list exactly m expressions");

  // ----- [invariant] -----
  detail::Section inv(top.table("invariant"), "invariant", defs);
  cfg.extract.T = inv.number("T", 20.0);
  cfg.extract.dt = inv.number("dt", cfg.solver.dt);
  cfg.extract.snapshot_every = static_cast<int>(inv.integer("snapshot_every", 10));
  cfg.extract.tail_tol = inv.number("tail_tol", cfg.extract.tail_tol);
  cfg.extract.inner_fraction = inv.number("inner_fraction", 0.75);
  cfg.mass_tol = inv.number("mass_tol", 1e-3);
  inv.reject_unknown();
  if (!(cfg.extract.T > 0.0)) throw ConfigError("key 'invariant.T' must be positive");

  // ----- [ode] -----
  detail::Section ode(top.table("ode"), "ode", defs);
  cfg.rho0 = ode.number_list("rho0");
  cfg.target = ode.number_list("target");
  cfg.ode_tol = ode.number("tol", 1e-11);
  ode.reject_unknown();
  if (!cfg.rho0.empty() && !cfg.target.empty())
    throw ConfigError("keys 'ode.rho0' and 'ode.target' are mutually exclusive");
  if (cfg.rho0.empty() && cfg.target.empty()) {
    cfg.target.assign(static_cast<std::size_t>(cfg.op.m), 0.0);
    cfg.target[0] = 1.0;
    detail::record(defs, "ode.target = [1, 0, ...]");
  }
  for (const auto& [vec, key] :
       {std::pair{&cfg.rho0, "ode.rho0"}, std::pair{&cfg.target, "ode.target"}})
    if (!vec->empty() && static_cast<int>(vec->size()) != cfg.op.m)
      throw ConfigError(std::string("key '") + key + "' must list exactly m values");

  // ----- [estimates] -----
  detail::Section est(top.table("estimates"), "estimates", defs);
  cfg.est_f_text = est.string_list("f");
  std::vector<double> times = est.number_list("times");
  if (!times.empty())
    cfg.est_times = std::move(times);
  else
    detail::record(defs, "estimates.times = [0.5, 1]");
  cfg.est_p = est.number("p", 0.0);
  cfg.est_horizon = est.number("horizon", 10.0);
  cfg.est_dt = est.number("dt", 1e-3);
  est.reject_unknown();
  if (cfg.est_p != 0.0 && !(cfg.est_p > 1.0))
    throw ConfigError("key 'estimates.p' must exceed 1");
  if (cfg.est_f_text.empty()) {
    for (int j = 0; j < cfg.op.m; ++j) cfg.est_f_text.push_back(j % 2 == 0 ? "cos(x)" : "sin(x)");
    detail::record(defs, "estimates.f = [alternating cos(x)/sin(x)]");
  }
  if (static_cast<int>(cfg.est_f_text.size()) != cfg.op.m)
    throw ConfigError("key 'estimates.f' must list exactly m expressions");

  // ----- [asymptotics] -----
  detail::Section asym(top.table("asymptotics"), "asymptotics", defs);
  cfg.asym_f_text = asym.string_list("f");
  if (const toml::Value* pv = asym.find("probes")) {
    for (const toml::Value& e : pv->as_array()) {
      if (e.is_number()) {
        cfg.probes.push_back({e.as_number()});
      } else if (e.is_array()) {
        std::vector<double> pt;
        for (const toml::Value& c : e.as_array()) {
          if (!c.is_number())
            throw ConfigError("key 'asymptotics.probes' must hold numbers or number arrays");
          pt.push_back(c.as_number());
        }
        cfg.probes.push_back(std::move(pt));
      } else {
        throw ConfigError("key 'asymptotics.probes' must hold numbers or number arrays");
      }
    }
  }
  cfg.asym_T = asym.number("T", 10.0);
  cfg.asym_tol = asym.number("tol", 1e-2);
  cfg.bundle_source = asym.string("bundle", std::string("ode"));
  asym.reject_unknown();
  if (cfg.asym_f_text.empty()) {
    for (int j = 0; j < cfg.op.m; ++j) cfg.asym_f_text.push_back(j == 0 ? "cos(x)" : "0");
    detail::record(defs, "asymptotics.f = [cos(x), 0, ...]");
  }
  if (static_cast<int>(cfg.asym_f_text.size()) != cfg.op.m)
    throw ConfigError("key 'asymptotics.f' must list exactly m expressions");
  if (cfg.probes.empty()) {
    cfg.probes.push_back(std::vector<double>(static_cast<std::size_t>(cfg.op.d), 0.0));
    detail::record(defs, "asymptotics.probes = [0]");
  }
  for (const auto& p : cfg.probes)
    if (static_cast<int>(p.size()) != cfg.op.d)
      throw ConfigError("key 'asymptotics.probes' entries must have d coordinates");
  if (cfg.bundle_source != "ode" && cfg.bundle_source != "extract")
    throw ConfigError("key 'asymptotics.bundle' must be ode|extract (got \"" +
                      cfg.bundle_source + "\")");
  if (!(cfg.asym_T > 0.0)) throw ConfigError("key 'asymptotics.T' must be positive");

  // ----- top-level scalars -----
  cfg.experiment = top.string("experiment", std::string("all"));
  static const std::set<std::string> kExperiments{
      "audit", "evolve", "estimates", "invariant", "ode-densities", "asymptotics", "all"};
  if (!kExperiments.count(cfg.experiment))
    throw ConfigError("key 'experiment' must name an experiment (got \"" + cfg.experiment +
                      "\")");
  cfg.outdir = top.string("outdir", std::string("out"));
  cfg.seed = top.integer("seed", 0);
  top.reject_unknown();

  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  return load_config_from_table(toml::parse_file(path));
}

}  // namespace kolmo

#endif  // KOLMO_CONFIG_HPP
