#include <kolmo/runner.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <string>

namespace {

struct Cli {
  std::string config;
  std::string outdir;
  long long seed = -1;
  bool seed_set = false;
};

void add_common(CLI::App* sub, Cli& cli) {
  sub->add_option("-c,--config", cli.config, "experiment configuration (TOML)")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("-o,--outdir", cli.outdir, "output directory (overrides the config)");
  sub->add_option("--seed", cli.seed, "RNG seed (overrides the config)")
      ->each([&cli](const std::string&) { cli.seed_set = true; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical toolkit for weakly coupled Kolmogorov systems"};
  app.require_subcommand(1);

  Cli cli;
  static const char* kExperiments[] = {"audit",     "evolve",        "estimates", "invariant",
                                       "ode-densities", "asymptotics", "all"};
  static const char* kDescriptions[] = {
      "check the standing coefficient hypotheses",
      "integrate the Cauchy problem and compare against exact data",
      "run the semigroup estimate suites",
      "extract the canonical systems of invariant measures",
      "solve the stationary density equations",
      "verify the long-time limits predicted by a bundle",
      "run every experiment"};
  for (std::size_t k = 0; k < std::size(kExperiments); ++k)
    add_common(app.add_subcommand(kExperiments[k], kDescriptions[k]), cli);

  CLI11_PARSE(app, argc, argv);

  try {
    kolmo::ExperimentConfig cfg = kolmo::load_config(cli.config);
    const std::string chosen = app.get_subcommands().front()->get_name();
    if (chosen != cfg.experiment)
      cfg.overrides.push_back("experiment = \"" + chosen + "\"");
    cfg.experiment = chosen;
    if (!cli.outdir.empty()) {
      cfg.outdir = cli.outdir;
      cfg.overrides.push_back("outdir = \"" + cli.outdir + "\"");
    }
    if (cli.seed_set) {
      cfg.seed = cli.seed;
      cfg.overrides.push_back("seed = " + std::to_string(cli.seed));
    }
    return kolmo::run_experiment(cfg);
  } catch (const kolmo::toml::ParseError& e) {
    std::fprintf(stderr, "%s: %s\n", cli.config.c_str(), e.what());
    return 65;
  } catch (const kolmo::ConfigError& e) {
    std::fprintf(stderr, "%s: %s\n", cli.config.c_str(), e.what());
    return 65;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 70;
  }
}
