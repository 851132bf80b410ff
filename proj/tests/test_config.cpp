#include <catch2/catch_amalgamated.hpp>

#include <kolmo/runner.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace kolmo;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig config_from(const std::string& text) {
  return load_config_from_table(toml::parse(text));
}

const std::string kMinimal = R"(
[operator]
d = 1
m = 2
q = ["1"]
b = ["-x"]
B = [["0", "-1"], ["-1", "0"]]
)";

std::filesystem::path fresh_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("kolmo_test_" + tag);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("toml subset covers the shapes the configs use") {
  const std::string text = R"(# leading comment
title = "demo \"quoted\"\n"
count = 42
ratio = -6.25e-2
flag = true

[operator]          # trailing comment
q = ["1", "1+x^2"]
B = [
  ["0", "-1"],      # rows may span lines
  ["-1", "0"],
]

[operator.params]
b0 = 3.0
)";
  toml::Table root = toml::parse(text);
  REQUIRE(root.at("title").as_string() == "demo \"quoted\"\n");
  REQUIRE(root.at("count").as_integer() == 42);
  REQUIRE(root.at("count").as_number() == 42.0);
  REQUIRE(root.at("ratio").as_number() == -6.25e-2);
  REQUIRE(root.at("flag").as_bool());

  const toml::Table& op = root.at("operator").as_table();
  REQUIRE(op.at("q").as_array().size() == 2);
  REQUIRE(op.at("q").as_array()[1].as_string() == "1+x^2");
  const toml::Array& B = op.at("B").as_array();
  REQUIRE(B.size() == 2);
  REQUIRE(B[1].as_array()[0].as_string() == "-1");
  REQUIRE(op.at("params").as_table().at("b0").as_number() == 3.0);

  REQUIRE(toml::parse("").empty());
  REQUIRE(toml::parse("xs = []\n").at("xs").as_array().empty());
}

TEST_CASE("toml errors carry line and column") {
  try {
    toml::parse("a = 1\nb 2\n");
    FAIL("expected a parse error");
  } catch (const toml::ParseError& e) {
    REQUIRE(e.line() == 2);
    REQUIRE(e.column() == 3);
    REQUIRE_THAT(e.what(), ContainsSubstring("line 2, column 3"));
    REQUIRE_THAT(e.what(), ContainsSubstring("expected '='"));
  }

  REQUIRE_THROWS_MATCHES(toml::parse("a = \"oops\n\""), toml::ParseError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("unterminated string")));
  REQUIRE_THROWS_MATCHES(toml::parse("a = 1\na = 2\n"), toml::ParseError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("duplicate key 'a'")));
  REQUIRE_THROWS_MATCHES(toml::parse("a = [1, 2\n"), toml::ParseError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("unterminated array")));
  REQUIRE_THROWS_MATCHES(toml::parse("a = 1 junk\n"), toml::ParseError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("end of line")));
  REQUIRE_THROWS_MATCHES(toml::parse("[t]\nx = 1\n[t]\n"), toml::ParseError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("defined twice")));
  REQUIRE_THROWS_MATCHES(toml::parse("t = 1\n[t.u]\n"), toml::ParseError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("already holds a value")));
  REQUIRE_THROWS_MATCHES(toml::parse("a = \"\\q\"\n"), toml::ParseError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("escape")));
  REQUIRE_THROWS_MATCHES(toml::parse("a = @\n"), toml::ParseError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("expected a value")));
}

TEST_CASE("bundled configs resolve to the benchmark operators") {
  ExperimentConfig cfg = load_config(KOLMO_CONFIG_DIR "/case1.toml");
  REQUIRE(cfg.op.d == 1);
  REQUIRE(cfg.op.m == 2);
  REQUIRE(cfg.q_text == std::vector<std::string>{"1"});
  REQUIRE(cfg.b_text == std::vector<std::string>{"-x"});
  REQUIRE(cfg.B_text ==
          std::vector<std::vector<std::string>>{{"0", "-1"}, {"-1", "0"}});
  REQUIRE(cfg.op.b[0].eval1(2.0) == -2.0);
  REQUIRE(cfg.op.B_at(0, 0, 1).eval1(5.0) == -1.0);
  REQUIRE(cfg.op.B_at(0, 1, 0).eval1(5.0) == -1.0);
  REQUIRE(cfg.grid.L == 8.0);
  REQUIRE(cfg.grid.N == 512);
  REQUIRE(cfg.grid.bc == BC::Neumann);
  REQUIRE(cfg.extract.T == 20.0);
  REQUIRE(cfg.target == std::vector<double>{1.0, 0.0});
  REQUIRE(cfg.experiment == "all");

  // Defaults that the file does not set are filled and recorded.
  auto recorded = [&](const std::string& needle) {
    for (const std::string& line : cfg.defaults_applied)
      if (line.find(needle) != std::string::npos) return true;
    return false;
  };
  REQUIRE(recorded("grid.center"));
  REQUIRE(recorded("evolve.tol"));
  REQUIRE(recorded("asymptotics.tol"));
  REQUIRE_FALSE(recorded("grid.N"));

  ExperimentConfig r25 = load_config(KOLMO_CONFIG_DIR "/remark25.toml");
  REQUIRE(r25.grid.bc == BC::Periodic);
  REQUIRE(r25.exact_text.size() == 2);
  REQUIRE_THAT(r25.grid.L, WithinAbs(3.14159265358979312, 1e-16));

  ExperimentConfig c2 = load_config(KOLMO_CONFIG_DIR "/case2.toml");
  REQUIRE(c2.op.q[0].eval1(2.0) == 5.0);
  REQUIRE(c2.rho0 == std::vector<double>{1.0, 0.5});
  REQUIRE(c2.target.empty());

  ExperimentConfig ou = load_config(KOLMO_CONFIG_DIR "/decoupled_ou.toml");
  REQUIRE(ou.probes == std::vector<std::vector<double>>{{0.0}, {1.0}});
}

TEST_CASE("config validation rejects offenders by name") {
  REQUIRE_THROWS_MATCHES(config_from(kMinimal + "[grid]\nN = 4\n"), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("grid too coarse")));
  REQUIRE_THROWS_MATCHES(config_from(kMinimal + "[solvr]\ndt = 0.1\n"), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("unknown key 'solvr'")));
  REQUIRE_THROWS_MATCHES(
      config_from(kMinimal + "[solver]\ndtt = 0.1\n"), ConfigError,
      Catch::Matchers::MessageMatches(ContainsSubstring("unknown key 'solver.dtt'")));
  REQUIRE_THROWS_MATCHES(
      config_from(kMinimal + "[ode]\nrho0 = [1.0, 0.0]\ntarget = [1.0, 0.0]\n"), ConfigError,
      Catch::Matchers::MessageMatches(ContainsSubstring("mutually exclusive")));
  REQUIRE_THROWS_MATCHES(config_from(kMinimal + "[grid]\nbc = \"open\"\n"), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("grid.bc")));
  REQUIRE_THROWS_MATCHES(config_from("experiment = \"fit\"\n" + kMinimal), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("experiment")));
  REQUIRE_THROWS_MATCHES(config_from(kMinimal + "[evolve]\nf0 = [\"cos(x)\"]\n"), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("exactly m")));
  REQUIRE_THROWS_MATCHES(config_from(kMinimal + "[solver]\ndt = -1.0\n"), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("solver.dt")));
  REQUIRE_THROWS_MATCHES(config_from("[operator]\nd = 1\nm = 1\nq = [\"1\"]\nb = [\"-x\"]\n"),
                         ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("'operator.B'")));
  REQUIRE_THROWS_MATCHES(config_from("[grid]\nN = 64\n"), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("[operator]")));
  REQUIRE_THROWS_MATCHES(
      config_from(kMinimal + "[operator.params]\nname = \"x\"\n"), ConfigError,
      Catch::Matchers::MessageMatches(ContainsSubstring("operator.params.name")));

  // Expression errors point at the offending entry.
  const std::string bad_expr = R"(
[operator]
d = 1
m = 1
q = ["1"]
b = ["-x"]
B = [["1 +"]]
)";
  REQUIRE_THROWS_MATCHES(config_from(bad_expr), ConfigError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("operator.B[0][0]")));

  REQUIRE_THROWS_WITH(load_config("/nonexistent/kolmo.toml"),
                      ContainsSubstring("cannot open config file"));
}

TEST_CASE("reports and CSV serialize with pinned formats") {
  json r = make_report("demo");
  REQUIRE(r.at("schema") == "kolmo-report-v1");
  std::string dumped = r.dump();
  REQUIRE(dumped.find("\"experiment\"") < dumped.find("\"schema\""));  // sorted keys

  auto dir = fresh_dir("csv");
  std::filesystem::create_directories(dir);
  Csv csv;
  csv.header = {"x", "y"};
  csv.rows = {{0.1, 2.0}, {-1.5, 3.25}};
  write_csv(csv, dir / "t.csv");
  REQUIRE(slurp(dir / "t.csv") == "x,y\n0.10000000000000001,2\n-1.5,3.25\n");

  // FNV-1a reference vectors.
  REQUIRE(fnv1a64("") == 14695981039346656037ull);
  REQUIRE(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  REQUIRE(hex64(0xaf63dc4c8601ec8cull) == "af63dc4c8601ec8c");
}

TEST_CASE("manifest echoes the resolved configuration") {
  ExperimentConfig cfg = load_config(KOLMO_CONFIG_DIR "/case1.toml");
  cfg.overrides.push_back("outdir = \"/tmp/x\"");
  json m = make_manifest(cfg);
  REQUIRE(m.at("schema") == "kolmo-manifest-v1");
  REQUIRE(m.at("config").at("grid").at("N") == 512);
  REQUIRE(m.at("config").at("operator").at("B")[0][1] == "-1");
  REQUIRE(m.at("config").at("solver").at("scheme") == "crank-nicolson");
  REQUIRE(m.at("config_hash") == hex64(fnv1a64(m.at("config").dump())));
  REQUIRE(m.at("defaults_applied").size() == cfg.defaults_applied.size());
  REQUIRE(m.at("overrides")[0] == "outdir = \"/tmp/x\"");
}

TEST_CASE("density experiment writes profiles deterministically") {
  ExperimentConfig cfg = config_from(kMinimal + R"(
[grid]
N = 129
[ode]
target = [1.0, 0.0]
)");
  cfg.experiment = "ode-densities";

  auto a = fresh_dir("ode_a");
  auto b = fresh_dir("ode_b");
  cfg.outdir = a.string();
  REQUIRE(run_experiment(cfg) == 0);
  cfg.outdir = b.string();
  REQUIRE(run_experiment(cfg) == 0);

  REQUIRE(slurp(a / "ode_profiles.csv") == slurp(b / "ode_profiles.csv"));
  REQUIRE(slurp(a / "manifest.json") == slurp(b / "manifest.json"));

  json rep = json::parse(slurp(a / "ode-densities.json"));
  REQUIRE(rep.at("pass").get<bool>());
  REQUIRE(rep.at("integrable").get<bool>());
  REQUIRE(rep.at("conservation_residual").get<double>() <= 1e-6);
  REQUIRE_THAT(rep.at("masses")[0].get<double>(), WithinAbs(1.0, 1e-9));
  REQUIRE_THAT(rep.at("masses")[1].get<double>(), WithinAbs(0.0, 1e-9));

  // CSV sanity: header shape and the center value of the first density.
  std::istringstream csv(slurp(a / "ode_profiles.csv"));
  std::string header;
  std::getline(csv, header);
  REQUIRE(header == "x,rho_mu,rho_1,rho_2");
  double rho1_at_zero = 0.0;
  for (std::string line; std::getline(csv, line);) {
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    double x, rmu, r1, r2;
    row >> x >> rmu >> r1 >> r2;
    if (std::abs(x) < 1e-12) rho1_at_zero = r1;
  }
  REQUIRE_THAT(rho1_at_zero, WithinAbs(std::exp(-0.5), 1e-3));
}

TEST_CASE("invariant experiment reports the identity mass matrix") {
  ExperimentConfig cfg = config_from(R"(
[operator]
d = 1
m = 2
q = ["1"]
b = ["-x"]
B = [["0", "0"], ["0", "0"]]
[grid]
N = 129
[invariant]
T = 10.0
)");
  cfg.experiment = "invariant";
  auto dir = fresh_dir("inv");
  cfg.outdir = dir.string();
  REQUIRE(run_experiment(cfg) == 0);

  json rep = json::parse(slurp(dir / "invariant.json"));
  REQUIRE(rep.at("pass").get<bool>());
  REQUIRE(rep.at("converged").get<bool>());
  REQUIRE(rep.at("mass_identity_defect").get<double>() <= 1e-3);
  REQUIRE(rep.at("provenance") == "extracted");

  std::istringstream csv(slurp(dir / "invariant_masses.csv"));
  std::string header;
  std::getline(csv, header);
  REQUIRE(header == "mass_1,mass_2");
  int rows = 0;
  for (std::string line; std::getline(csv, line); ++rows) REQUIRE_FALSE(line.empty());
  REQUIRE(rows == 2);

  REQUIRE(std::filesystem::exists(dir / "invariant_densities.csv"));
}

TEST_CASE("evolve experiment matches the periodic closed form") {
  ExperimentConfig cfg = load_config(KOLMO_CONFIG_DIR "/remark25.toml");
  auto dir = fresh_dir("evolve");
  cfg.outdir = dir.string();
  cfg.experiment = "evolve";
  REQUIRE(run_experiment(cfg) == 0);

  json rep = json::parse(slurp(dir / "evolve.json"));
  REQUIRE(rep.at("pass").get<bool>());
  REQUIRE(rep.at("error_rel_sup").get<double>() <= 1e-3);
  REQUIRE(std::filesystem::exists(dir / "evolve_trajectory.csv"));
}

TEST_CASE("asymptotics experiment hits the predicted limit") {
  ExperimentConfig cfg = load_config(KOLMO_CONFIG_DIR "/case1.toml");
  auto dir = fresh_dir("asym");
  cfg.outdir = dir.string();
  cfg.experiment = "asymptotics";
  REQUIRE(run_experiment(cfg) == 0);

  json rep = json::parse(slurp(dir / "asymptotics.json"));
  REQUIRE(rep.at("pass").get<bool>());
  REQUIRE(rep.at("bundle") == "ode");
  REQUIRE_THAT(rep.at("limits")[0].get<double>(),
               WithinAbs(std::exp(-0.5) * std::cos(1.0), 1e-6));
  REQUIRE_THAT(rep.at("limits")[1].get<double>(), WithinAbs(0.0, 1e-6));
  REQUIRE(rep.at("worst_err_full").get<double>() <= 1e-2);
}
