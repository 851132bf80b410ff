// Report emission: JSON with lexicographically ordered keys (nlohmann's
// default map storage), CSV with a header row, %.17g values, '.' decimals and
// LF terminators.  Manifests carry an FNV-1a hash of the resolved config and
// no timestamps, so identical configs reproduce identical bytes.
#ifndef KOLMO_REPORT_HPP
#define KOLMO_REPORT_HPP

#include <kolmo/config.hpp>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace kolmo {

using json = nlohmann::json;

inline void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

inline void write_csv(const Csv& csv, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t c = 0; c < csv.header.size(); ++c)
    out << (c ? "," : "") << csv.header[c];
  out << '\n';
  char buf[32];
  for (const auto& row : csv.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", row[c]);
      out << (c ? "," : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Full echo of the resolved configuration; every default that was filled in
// appears both here (resolved) and in defaults_applied (as applied).
inline json config_to_json(const ExperimentConfig& cfg) {
  json op;
  op["d"] = cfg.op.d;
  op["m"] = cfg.op.m;
  op["q"] = cfg.q_text;
  op["b"] = cfg.b_text;
  op["B"] = cfg.B_text;
  op["params"] = json::object();
  for (const auto& [k, v] : cfg.params) op["params"][k] = v;

  json j;
  j["operator"] = op;
  j["grid"] = {{"L", cfg.grid.L},
               {"N", cfg.grid.N},
               {"bc", to_string(cfg.grid.bc)},
               {"center", cfg.grid.center}};
  j["solver"] = {{"scheme", to_string(cfg.solver.scheme)},
                 {"dt", cfg.solver.dt},
                 {"snapshot_every", cfg.solver.snapshot_every},
                 {"rannacher", cfg.solver.rannacher},
                 {"tol", cfg.solver.solver_tol},
                 {"horizon", cfg.horizon}};
  j["audit"] = {{"p0", cfg.p0}, {"phi", cfg.phi_text}, {"gamma", cfg.gamma}};
  j["evolve"] = {{"f0", cfg.f0_text}, {"exact", cfg.exact_text}, {"tol", cfg.evolve_tol}};
  j["invariant"] = {{"T", cfg.extract.T},
                    {"dt", cfg.extract.dt},
                    {"snapshot_every", cfg.extract.snapshot_every},
                    {"tail_tol", cfg.extract.tail_tol},
                    {"inner_fraction", cfg.extract.inner_fraction},
                    {"mass_tol", cfg.mass_tol}};
  j["ode"] = {{"rho0", cfg.rho0}, {"target", cfg.target}, {"tol", cfg.ode_tol}};
  j["estimates"] = {{"f", cfg.est_f_text},
                    {"times", cfg.est_times},
                    {"p", cfg.est_p},
                    {"horizon", cfg.est_horizon},
                    {"dt", cfg.est_dt}};
  j["asymptotics"] = {{"f", cfg.asym_f_text},
                      {"probes", cfg.probes},
                      {"T", cfg.asym_T},
                      {"tol", cfg.asym_tol},
                      {"bundle", cfg.bundle_source}};
  // The output directory is deliberately not echoed: it does not affect the
  // numbers, and leaving it out keeps reports byte-identical under relocation.
  j["experiment"] = cfg.experiment;
  j["seed"] = cfg.seed;
  return j;
}

inline json make_manifest(const ExperimentConfig& cfg) {
  json m;
  m["schema"] = "kolmo-manifest-v1";
  m["config"] = config_to_json(cfg);
  m["config_hash"] = hex64(fnv1a64(m["config"].dump()));
  m["defaults_applied"] = cfg.defaults_applied;
  m["overrides"] = cfg.overrides;
  return m;
}

// Reports share a tiny envelope so even an empty one is a valid object with
// metadata.
inline json make_report(const std::string& experiment) {
  json r;
  r["schema"] = "kolmo-report-v1";
  r["experiment"] = experiment;
  return r;
}

}  // namespace kolmo

#endif  // KOLMO_REPORT_HPP
