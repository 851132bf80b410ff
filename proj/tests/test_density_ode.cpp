#include <catch2/catch_amalgamated.hpp>

#include <kolmo/density_ode.hpp>

#include <cmath>
#include <random>

using namespace kolmo;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

OperatorSpec make_spec(int d, int m, std::vector<std::string> q, std::vector<std::string> b,
                       std::vector<std::vector<std::string>> B, Params params = {}) {
  OperatorSpec spec;
  spec.d = d;
  spec.m = m;
  spec.params = std::move(params);
  for (auto& s : q) spec.q.push_back(parse_expr(s));
  for (auto& s : b) spec.b.push_back(parse_expr(s));
  for (auto& mat : B) {
    std::vector<Expr> entries;
    for (auto& s : mat) entries.push_back(parse_expr(s));
    spec.B.push_back(std::move(entries));
  }
  spec.validate();
  return spec;
}

OperatorSpec case1_spec() {
  return make_spec(1, 2, {"1"}, {"-x"}, {{"0", "-1", "-1", "0"}});
}

// Rational diffusion with cubic inward drift and linear coupling B_ij = b_ij x.
// b22 is forced by the equal-row-sum requirement b11 + b12 = b21 + b22.
OperatorSpec case2_spec(double b0, double b11, double b12, double b21) {
  const double b22 = b11 + b12 - b21;
  return make_spec(1, 2, {"1+x^2"}, {"-b0*x*(1+x^2)"},
                   {{"b11*x", "b12*x", "b21*x", "b22*x"}},
                   {{"b0", b0}, {"b11", b11}, {"b12", b12}, {"b21", b21}, {"b22", b22}});
}

// Smallest drift strength the benchmark family admits for these couplings,
// with a little headroom.
double admissible_b0(double b11, double b12, double b21) {
  const double b22 = b11 + b12 - b21;
  const double frob = std::sqrt(b11 * b11 + b12 * b12 + b21 * b21 + b22 * b22);
  const double peak = std::max({std::abs(b11), std::abs(b12), std::abs(b21), std::abs(b22)});
  return frob + (peak + 1.0) * (peak + 1.0) + 0.5;
}

Grid line_grid(int N, double L) {
  Grid g;
  g.d = 1;
  g.N = N;
  g.L = L;
  return g;
}

double window_mass(const DensityProfile& p) {
  double s = 0.0;
  for (std::size_t n = 0; n < p.grid.size(); ++n) s += p.grid.quad_weight(n) * p.rho_mu[n];
  return s;
}

double sup_rho_diff(const DensityProfile& a, const DensityProfile& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.rho.size(); ++i)
    for (std::size_t n = 0; n < a.grid.size(); ++n)
      worst = std::max(worst, std::abs(a.rho[i][n] - b.rho[i][n]));
  return worst;
}

}  // namespace

TEST_CASE("scalar invariant density recovers the Gaussian law") {
  Grid g = line_grid(1025, 8.0);
  DensityProfile p = scalar_invariant_density(case1_spec(), g);

  REQUIRE(p.integrable);
  REQUIRE(p.tail_ratio >= 0.0);
  REQUIRE(p.tail_ratio <= 1e-12);
  REQUIRE_THAT(window_mass(p), WithinAbs(1.0, 1e-12));

  const double inv_sqrt_2pi = 0.39894228040143268;
  double worst = 0.0, worst_phi = 0.0;
  for (std::size_t n = 0; n < g.size(); ++n) {
    REQUIRE(p.rho_mu[n] > 0.0);
    const double x = g.point(n)[0];
    worst = std::max(worst, std::abs(p.rho_mu[n] - inv_sqrt_2pi * std::exp(-0.5 * x * x)));
    worst_phi = std::max(worst_phi, std::abs(p.phi[n] - 0.5 * x * x));
  }
  REQUIRE(worst <= 1e-6);
  REQUIRE(worst_phi <= 1e-10);
}

TEST_CASE("scalar invariant density matches the rational-weight closed form") {
  Grid g = line_grid(1025, 8.0);
  DensityProfile p = scalar_invariant_density(case2_spec(3.0, 0.1, 0.1, -0.1), g);
  REQUIRE(p.integrable);

  // Shape: rho_mu proportional to (1+x^2)^{-1} exp(-3 x^2 / 2), anchored at 0.
  const int n0 = static_cast<int>(g.size() / 2);
  double worst = 0.0;
  for (std::size_t n = 0; n < g.size(); ++n) {
    const double x = g.point(n)[0];
    const double shape = std::exp(-1.5 * x * x) / (1.0 + x * x);
    const double ratio = p.rho_mu[n] / p.rho_mu[static_cast<std::size_t>(n0)];
    worst = std::max(worst, std::abs(ratio - shape) / shape);
  }
  REQUIRE(worst <= 1e-9);

  // Normalization: int (1+x^2)^{-1} e^{-a x^2} dx = pi e^a erfc(sqrt(a)), a = b0/2.
  const double closed = 1.0 / (M_PI * std::exp(1.5) * std::erfc(std::sqrt(1.5)));
  REQUIRE_THAT(p.c, WithinRel(closed, 1e-8));
}

TEST_CASE("flat drift weight is flagged non-integrable") {
  Grid g = line_grid(257, 8.0);
  DensityProfile p = scalar_invariant_density(make_spec(1, 1, {"1"}, {"0"}, {{"0"}}), g);
  REQUIRE_FALSE(p.integrable);
  REQUIRE_THAT(p.tail_ratio, WithinAbs(1.0, 1e-12));
  REQUIRE_THAT(window_mass(p), WithinAbs(1.0, 1e-12));
  for (std::size_t n = 0; n < g.size(); ++n)
    REQUIRE_THAT(p.rho_mu[n], WithinAbs(1.0 / 16.0, 1e-15));
}

TEST_CASE("density preconditions are enforced") {
  Grid g = line_grid(257, 8.0);
  auto planar = make_spec(2, 1, {"1", "0", "0", "1"}, {"-x1", "-x2"}, {{"0"}, {"0"}});
  REQUIRE_THROWS_WITH(scalar_invariant_density(planar, g),
                      ContainsSubstring("one-dimensional"));
  REQUIRE_THROWS_WITH(
      scalar_invariant_density(make_spec(1, 1, {"x"}, {"-x"}, {{"0"}}), g),
      ContainsSubstring("positive"));
  REQUIRE_THROWS_WITH(solve_density_system(case1_spec(), {1.0}, g),
                      ContainsSubstring("one entry per system component"));
  REQUIRE_THROWS_WITH(normalize_to_mass(case1_spec(), g, {1.0}),
                      ContainsSubstring("one mass per system component"));
}

TEST_CASE("system solve reproduces the hyperbolic closed form") {
  const double a1 = 0.3, a2 = -0.7;
  Grid g = line_grid(193, 6.0);
  DensityProfile p = solve_density_system(case1_spec(), {a1 + a2, a2 - a1}, g);
  ClosedFormParams prm;
  prm.a1 = a1;
  prm.a2 = a2;
  DensityProfile o = closed_form_oracle(DensityCase::Case1, prm, g);
  REQUIRE(sup_rho_diff(p, o) <= 1e-8);

  // Stored masses are exactly the trapezoid quadrature of the stored fields.
  for (std::size_t i = 0; i < 2; ++i) {
    double acc = 0.0;
    for (std::size_t n = 0; n < g.size(); ++n)
      acc += g.quad_weight(n) * p.rho[i][n] * p.rho_mu[n];
    REQUIRE(p.masses[i] == acc);
  }
}

TEST_CASE("sign changes of signed densities are located") {
  Grid g = line_grid(193, 6.0);
  // rho2 = -0.35 e^x + 0.65 e^-x crosses zero once, at log(13/7)/2.
  DensityProfile p = solve_density_system(case1_spec(), {1.0, 0.3}, g);
  REQUIRE(p.sign_changes[0].empty());
  REQUIRE(p.sign_changes[1].size() == 1);
  REQUIRE_THAT(p.sign_changes[1][0], WithinAbs(0.5 * std::log(13.0 / 7.0), 1e-3));
}

TEST_CASE("decoupled systems stay constant") {
  Grid g = line_grid(257, 8.0);
  auto spec = make_spec(1, 2, {"1+x^2"}, {"-x"}, {{"0", "0", "0", "0"}});
  DensityProfile p = solve_density_system(spec, {0.8, -0.25}, g);
  for (std::size_t n = 0; n < g.size(); ++n) {
    REQUIRE(p.rho[0][n] == 0.8);
    REQUIRE(p.rho[1][n] == -0.25);
  }
  REQUIRE_THAT(p.masses[0], WithinAbs(0.8, 1e-12));
  REQUIRE_THAT(p.masses[1], WithinAbs(-0.25, 1e-12));
}

TEST_CASE("solve is linear in the center data") {
  Grid g = line_grid(193, 6.0);
  auto spec = case2_spec(admissible_b0(0.2, 0.15, 0.1), 0.2, 0.15, 0.1);
  DensityProfile u = solve_density_system(spec, {0.6, -0.2}, g, 1e-12);
  DensityProfile v = solve_density_system(spec, {-0.1, 0.9}, g, 1e-12);
  DensityProfile w = solve_density_system(
      spec, {1.3 * 0.6 - 0.6 * -0.1, 1.3 * -0.2 - 0.6 * 0.9}, g, 1e-12);
  double worst = 0.0;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t n = 0; n < g.size(); ++n)
      worst = std::max(worst,
                       std::abs(w.rho[i][n] - (1.3 * u.rho[i][n] - 0.6 * v.rho[i][n])));
  REQUIRE(worst <= 1e-9);
}

TEST_CASE("blow-up is reported with its location") {
  Grid g = line_grid(257, 8.0);
  auto spec = make_spec(1, 1, {"1"}, {"-x"}, {{"80*x"}});
  REQUIRE_THROWS_AS(solve_density_system(spec, {1.0}, g), OdeBlowup);
  try {
    solve_density_system(spec, {1.0}, g);
    FAIL("expected blow-up");
  } catch (const OdeBlowup& e) {
    REQUIRE_THAT(std::string(e.what()), ContainsSubstring("overflow"));
    REQUIRE(std::abs(e.location()) >= 2.8);
    REQUIRE(std::abs(e.location()) <= 3.2);
  }
}

TEST_CASE("twenty admissible draws match the closed forms") {
  Grid g = line_grid(193, 6.0);
  std::mt19937 rng(20240814u);
  std::uniform_real_distribution<double> coef(0.05, 0.25), amp(-1.0, 1.0);
  int draws = 0;

  for (int k = 0; k < 6; ++k) {
    ClosedFormParams prm;
    prm.a1 = amp(rng);
    prm.a2 = amp(rng);
    DensityProfile p =
        solve_density_system(case1_spec(), {prm.a1 + prm.a2, prm.a2 - prm.a1}, g);
    DensityProfile o = closed_form_oracle(DensityCase::Case1, prm, g);
    REQUIRE(sup_rho_diff(p, o) <= 1e-7);
    ++draws;
  }

  for (int k = 0; k < 7; ++k) {
    ClosedFormParams prm;
    prm.b11 = coef(rng);
    prm.b21 = coef(rng);
    prm.b12 = -prm.b21;
    prm.b22 = prm.b11 + prm.b12 - prm.b21;
    prm.b0 = admissible_b0(prm.b11, prm.b12, prm.b21);
    prm.c1 = amp(rng);
    prm.c2 = amp(rng);
    auto spec = case2_spec(prm.b0, prm.b11, prm.b12, prm.b21);
    DensityProfile p = solve_density_system(spec, {prm.c2, prm.c1 - prm.c2}, g);
    DensityProfile o = closed_form_oracle(DensityCase::Case2Antisymmetric, prm, g);
    REQUIRE(sup_rho_diff(p, o) <= 1e-7);
    ++draws;
  }

  for (int k = 0; k < 7; ++k) {
    ClosedFormParams prm;
    prm.b11 = coef(rng);
    prm.b12 = coef(rng);
    prm.b21 = coef(rng);
    prm.b22 = prm.b11 + prm.b12 - prm.b21;
    prm.b0 = admissible_b0(prm.b11, prm.b12, prm.b21);
    prm.c1 = amp(rng);
    prm.c2 = amp(rng);
    auto spec = case2_spec(prm.b0, prm.b11, prm.b12, prm.b21);
    DensityProfile p = solve_density_system(spec, {prm.c2, prm.c1 - prm.c2}, g);
    DensityProfile o = closed_form_oracle(DensityCase::Case2General, prm, g);
    REQUIRE(sup_rho_diff(p, o) <= 1e-7);
    ++draws;
  }
  REQUIRE(draws == 20);
}

TEST_CASE("conservation surrogate holds along solutions") {
  Grid g = line_grid(193, 6.0);
  DensityProfile p1 = solve_density_system(case1_spec(), {1.0, 0.3}, g, 1e-12);
  REQUIRE(conservation_residual(case1_spec(), p1) <= 1e-9);

  auto anti = case2_spec(admissible_b0(0.2, -0.1, 0.1), 0.2, -0.1, 0.1);
  DensityProfile p2 = solve_density_system(anti, {0.5, -0.25}, g, 1e-12);
  REQUIRE(conservation_residual(anti, p2) <= 1e-9);

  auto gen = case2_spec(admissible_b0(0.2, 0.15, 0.1), 0.2, 0.15, 0.1);
  DensityProfile p3 = solve_density_system(gen, {0.5, -0.25}, g, 1e-12);
  REQUIRE(conservation_residual(gen, p3) <= 1e-9);

  // Negative control: unequal row sums break the scalar surrogate equation.
  auto skew = make_spec(1, 2, {"1"}, {"-x"}, {{"0", "-1", "-2", "0"}});
  DensityProfile p4 = solve_density_system(skew, {1.0, 0.5}, g, 1e-12);
  REQUIRE(conservation_residual(skew, p4) > 1e-3);
}

TEST_CASE("normalize to mass hits exponential-moment targets") {
  Grid g = line_grid(257, 8.0);
  const double r = std::exp(-0.5);

  DensityProfile p = normalize_to_mass(case1_spec(), g, {1.0, 0.0});
  REQUIRE(p.target == std::vector<double>{1.0, 0.0});
  REQUIRE_THAT(p.masses[0], WithinAbs(1.0, 1e-9));
  REQUIRE_THAT(p.masses[1], WithinAbs(0.0, 1e-9));
  double worst = 0.0;
  for (std::size_t n = 0; n < g.size(); ++n) {
    const double x = g.point(n)[0];
    worst = std::max(worst, std::abs(p.rho[0][n] - r * std::cosh(x)));
    worst = std::max(worst, std::abs(p.rho[1][n] + r * std::sinh(x)));
  }
  REQUIRE(worst <= 1e-6);

  DensityProfile q = normalize_to_mass(case1_spec(), g, {0.0, 1.0});
  worst = 0.0;
  for (std::size_t n = 0; n < g.size(); ++n) {
    const double x = g.point(n)[0];
    worst = std::max(worst, std::abs(q.rho[0][n] + r * std::sinh(x)));
    worst = std::max(worst, std::abs(q.rho[1][n] - r * std::cosh(x)));
  }
  REQUIRE(worst <= 1e-6);

  DensityProfile z = normalize_to_mass(case1_spec(), g, {0.0, 0.0});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t n = 0; n < g.size(); ++n) REQUIRE(z.rho[i][n] == 0.0);
}

TEST_CASE("mass-target solver rejects singular families") {
  Eigen::MatrixXd singular(2, 2);
  singular << 1.0, 2.0, 2.0, 4.0;
  Eigen::VectorXd t(2);
  t << 1.0, 0.0;
  REQUIRE_THROWS_WITH(detail::solve_mass_targets(singular, t), ContainsSubstring("singular"));

  Eigen::MatrixXd diag(2, 2);
  diag << 2.0, 0.0, 0.0, 3.0;
  t << 4.0, 9.0;
  Eigen::VectorXd a = detail::solve_mass_targets(diag, t);
  REQUIRE(a(0) == 2.0);
  REQUIRE(a(1) == 3.0);
}

TEST_CASE("closed-form oracle pins the benchmark families") {
  Grid g = line_grid(193, 6.0);

  ClosedFormParams one;
  one.a1 = 1.0;
  one.a2 = 0.0;
  DensityProfile p = closed_form_oracle(DensityCase::Case1, one, g);
  for (std::size_t n = 0; n < g.size(); ++n) {
    const double x = g.point(n)[0];
    REQUIRE(p.rho[0][n] == std::exp(x));
    REQUIRE(p.rho[1][n] == -std::exp(x));
  }

  ClosedFormParams anti;
  anti.b0 = 3.0;
  anti.b11 = 0.3;
  anti.b21 = 0.1;
  anti.b12 = -0.1;
  anti.b22 = 0.1;
  anti.c1 = 0.0;
  anti.c2 = 1.0;
  DensityProfile q = closed_form_oracle(DensityCase::Case2Antisymmetric, anti, g);
  const double ex = 0.5 * (anti.b11 - anti.b21);  // same rounding as the oracle
  for (std::size_t n = 0; n < g.size(); ++n) {
    const double x = g.point(n)[0];
    REQUIRE(q.rho[0][n] == std::pow(1.0 + x * x, ex));
    REQUIRE(q.rho[1][n] == -q.rho[0][n]);
  }

  ClosedFormParams gen;
  gen.b0 = 3.0;
  gen.b11 = 0.2;
  gen.b12 = 0.15;
  gen.b21 = 0.1;
  gen.b22 = 0.25;
  gen.c1 = 0.7;
  gen.c2 = -0.4;
  DensityProfile w = closed_form_oracle(DensityCase::Case2General, gen, g);
  const std::size_t n0 = g.size() / 2;
  REQUIRE(g.point(n0)[0] == 0.0);
  REQUIRE(w.rho[0][n0] == gen.c2);
  REQUIRE_THAT(w.rho[1][n0], WithinAbs(gen.c1 - gen.c2, 1e-14));

  ClosedFormParams bad = gen;
  bad.b22 = 0.5;
  REQUIRE_THROWS_WITH(closed_form_oracle(DensityCase::Case2General, bad, g),
                      ContainsSubstring("row sums"));
  REQUIRE_THROWS_WITH(closed_form_oracle(DensityCase::Case2Antisymmetric, gen, g),
                      ContainsSubstring("b12 = -b21"));
  REQUIRE_THROWS_WITH(closed_form_oracle(DensityCase::Case2General, anti, g),
                      ContainsSubstring("b12 + b21"));
}
