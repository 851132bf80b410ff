// One-dimensional invariant densities.
//
// For d = 1 the invariant measure of the scalar operator q u'' + b u' has the
// explicit Lebesgue density  rho_mu(x) = (c/q(x)) exp(int_0^x b/q),  and the
// (generally signed) densities rho_i of the system measures with respect to mu
// solve the first-order linear system  q rho' = B^T rho.  This header computes
// both, normalizes a solution family to prescribed masses, and evaluates the
// closed-form solutions available for two benchmark coefficient families.

#ifndef KOLMO_DENSITY_ODE_HPP
#define KOLMO_DENSITY_ODE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/numeric/odeint.hpp>
#include <Eigen/Dense>

#include <kolmo/operator_model.hpp>

namespace kolmo {

// A family of densities over a 1-d grid window.
//
//  rho_mu : Lebesgue density of the scalar invariant measure, normalized to
//           unit mass over the window (trapezoid quadrature).
//  phi    : potential with rho_mu proportional to exp(-phi), phi = log q - int b/q.
//  c      : normalization constant actually applied, rho_mu = c exp(-phi).
//  rho    : m signed densities with respect to mu (d mu_i = rho_i d mu).
//  masses : quadrature of rho_i against rho_mu, i.e. mu_i of the window.
//
// tail_ratio is the relative mass gained when the window is doubled at fixed
// spacing; a large value flags a non-integrable weight (integrable == false),
// in which case rho_mu is only a window-normalized profile, not a density.
struct DensityProfile {
  Grid grid;
  std::vector<double> rho_mu;
  std::vector<double> phi;
  double c = 1.0;
  double tail_ratio = 0.0;
  bool integrable = true;
  std::vector<std::vector<double>> rho;
  std::vector<double> masses;
  std::vector<double> target;
  // Per component: abscissae where the signed density crosses zero
  // (linear interpolation between nodes of opposite sign).
  std::vector<std::vector<double>> sign_changes;
};

// Thrown when the density system leaves the representable range; location()
// reports the abscissa nearest the blow-up.
class OdeBlowup : public std::runtime_error {
 public:
  OdeBlowup(const std::string& what, double x) : std::runtime_error(what), location_(x) {}
  double location() const { return location_; }

 private:
  double location_ = 0.0;
};

namespace detail {

inline void require_line(const OperatorSpec& spec) {
  if (spec.d != 1)
    throw std::invalid_argument("density profiles require a one-dimensional operator");
}

// q at every node, validated positive.
inline std::vector<double> eval_q_line(const OperatorSpec& spec, const Grid& g) {
  const int N = static_cast<int>(g.size());
  std::vector<double> q(g.size());
  for (int n = 0; n < N; ++n) {
    q[static_cast<std::size_t>(n)] = spec.q_at(0, 0).eval1(g.point(n)[0], spec.params);
    if (!(q[static_cast<std::size_t>(n)] > 0.0))
      throw std::invalid_argument("diffusion coefficient must be positive on the grid");
  }
  return q;
}

inline int center_node(const Grid& g) {
  const int N = static_cast<int>(g.size());
  int n0 = 0;
  for (int n = 1; n < N; ++n)
    if (std::abs(g.point(n)[0] - g.center) < std::abs(g.point(n0)[0] - g.center)) n0 = n;
  return n0;
}

// Cumulative trapezoid of b/q from the window center along the node sequence.
inline std::vector<double> cumulative_drift_integral(const OperatorSpec& spec, const Grid& g,
                                                     const std::vector<double>& q) {
  const int N = static_cast<int>(g.size());
  std::vector<double> f(q.size()), I(q.size());
  for (int n = 0; n < N; ++n)
    f[static_cast<std::size_t>(n)] =
        spec.b_at(0).eval1(g.point(n)[0], spec.params) / q[static_cast<std::size_t>(n)];
  const int n0 = center_node(g);
  // Offset from the exact center to the nearest node (zero when they coincide).
  const double x0 = g.point(n0)[0];
  const double f_c = spec.b_at(0).eval1(g.center, spec.params) /
                     spec.q_at(0, 0).eval1(g.center, spec.params);
  I[static_cast<std::size_t>(n0)] = 0.5 * (x0 - g.center) * (f_c + f[static_cast<std::size_t>(n0)]);
  for (int n = n0 + 1; n < N; ++n)
    I[static_cast<std::size_t>(n)] = I[static_cast<std::size_t>(n - 1)] +
        0.5 * g.dx() * (f[static_cast<std::size_t>(n - 1)] + f[static_cast<std::size_t>(n)]);
  for (int n = n0 - 1; n >= 0; --n)
    I[static_cast<std::size_t>(n)] = I[static_cast<std::size_t>(n + 1)] -
        0.5 * g.dx() * (f[static_cast<std::size_t>(n)] + f[static_cast<std::size_t>(n + 1)]);
  return I;
}

inline double window_mass(const Grid& g, const std::vector<double>& w) {
  double s = 0.0;
  for (std::size_t n = 0; n < g.size(); ++n) s += g.quad_weight(n) * w[n];
  return s;
}

// Fills masses and sign_changes from rho and rho_mu.
inline void finalize_profile(DensityProfile& p) {
  const std::size_t N = p.grid.size();
  p.masses.assign(p.rho.size(), 0.0);
  p.sign_changes.assign(p.rho.size(), {});
  for (std::size_t i = 0; i < p.rho.size(); ++i) {
    for (std::size_t n = 0; n < N; ++n)
      p.masses[i] += p.grid.quad_weight(n) * p.rho[i][n] * p.rho_mu[n];
    for (std::size_t n = 0; n + 1 < N; ++n) {
      const double a = p.rho[i][n], b = p.rho[i][n + 1];
      if (a * b < 0.0)
        p.sign_changes[i].push_back(p.grid.point(n)[0] + p.grid.dx() * a / (a - b));
    }
  }
}

}  // namespace detail

// Invariant density of the scalar part: rho_mu = (c/q) exp(int_center^x b/q),
// trapezoid-normalized to unit window mass.  Integrability is probed by a
// doubling study: the window is doubled at fixed spacing and the relative mass
// gained becomes tail_ratio; above 5% the profile is flagged non-integrable.
inline DensityProfile scalar_invariant_density(const OperatorSpec& spec, const Grid& grid) {
  detail::require_line(spec);
  spec.validate();
  DensityProfile p;
  p.grid = grid;

  auto unnormalized = [&spec](const Grid& g) {
    const auto q = detail::eval_q_line(spec, g);
    const auto I = detail::cumulative_drift_integral(spec, g, q);
    std::vector<double> w(g.size());
    for (std::size_t n = 0; n < g.size(); ++n) w[n] = std::exp(I[n]) / q[n];
    return w;
  };

  const auto q = detail::eval_q_line(spec, grid);
  const auto I = detail::cumulative_drift_integral(spec, grid, q);
  p.phi.resize(grid.size());
  std::vector<double> w(grid.size());
  for (std::size_t n = 0; n < grid.size(); ++n) {
    p.phi[n] = std::log(q[n]) - I[n];
    w[n] = std::exp(-p.phi[n]);
  }
  const double mass = detail::window_mass(grid, w);
  if (!(mass > 0.0) || !std::isfinite(mass))
    throw std::runtime_error("invariant weight is not normalizable on the window");

  Grid wide = grid;
  wide.N = 2 * grid.N - 1;
  wide.L = 2.0 * grid.L;
  const double wide_mass = detail::window_mass(wide, unnormalized(wide));
  p.tail_ratio = (wide_mass - mass) / mass;
  p.integrable = std::isfinite(wide_mass) && p.tail_ratio <= 0.05;

  p.c = 1.0 / mass;
  p.rho_mu.resize(grid.size());
  for (std::size_t n = 0; n < grid.size(); ++n) p.rho_mu[n] = p.c * w[n];
  return p;
}

// Integrates q rho' = B^T rho outward from the window center with an adaptive
// Dormand-Prince 4(5) pair (absolute and relative tolerance `tol`), recording
// the solution at every node.  Throws OdeBlowup if any component leaves
// [-1e150, 1e150].  rho0 prescribes rho at the center.
inline DensityProfile solve_density_system(const OperatorSpec& spec,
                                           const std::vector<double>& rho0, const Grid& grid,
                                           double tol = 1e-11) {
  detail::require_line(spec);
  spec.validate();
  const int m = spec.m;
  if (static_cast<int>(rho0.size()) != m)
    throw std::invalid_argument("rho0 must have one entry per system component");

  DensityProfile p = scalar_invariant_density(spec, grid);
  const int N = static_cast<int>(grid.size());
  p.rho.assign(static_cast<std::size_t>(m), std::vector<double>(grid.size(), 0.0));

  using state_t = std::vector<double>;
  auto rhs = [&spec, m](const state_t& y, state_t& dy, double x) {
    const double qv = spec.q_at(0, 0).eval1(x, spec.params);
    for (int i = 0; i < m; ++i) {
      double acc = 0.0;
      for (int j = 0; j < m; ++j)
        acc += spec.B_at(0, j, i).eval1(x, spec.params) * y[static_cast<std::size_t>(j)];
      dy[static_cast<std::size_t>(i)] = acc / qv;
    }
  };

  const int n0 = detail::center_node(grid);
  auto sweep = [&](int first, int last, int step) {
    namespace ode = boost::numeric::odeint;
    auto stepper = ode::make_controlled(tol, tol, ode::runge_kutta_dopri5<state_t>());
    state_t y = rho0;
    double x_prev = grid.center;
    for (int n = first; n != last; n += step) {
      const double x = grid.point(n)[0];
      if (x != x_prev)
        ode::integrate_adaptive(stepper, rhs, y, x_prev, x,
                                (x > x_prev ? 1.0 : -1.0) * grid.dx() / 8.0);
      x_prev = x;
      for (int i = 0; i < m; ++i) {
        const double v = y[static_cast<std::size_t>(i)];
        if (!std::isfinite(v) || std::abs(v) > 1e150)
          throw OdeBlowup("density system overflow near x = " + std::to_string(x), x);
        p.rho[static_cast<std::size_t>(i)][static_cast<std::size_t>(n)] = v;
      }
    }
  };
  sweep(n0, N, 1);
  sweep(n0, -1, -1);  // re-covers n0 (zero-length move), then walks left

  detail::finalize_profile(p);
  return p;
}

namespace detail {

// Solves M a = target for the center values of a solution family; throws when
// the mass matrix is rank deficient.
inline Eigen::VectorXd solve_mass_targets(const Eigen::MatrixXd& M, const Eigen::VectorXd& t) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
  if (!lu.isInvertible())
    throw std::runtime_error(
        "mass matrix is singular: the solution family cannot reach the requested masses");
  return lu.solve(t);
}

}  // namespace detail

// Picks the member of the m-parameter solution family rho(.; rho0) whose
// masses equal `target`: the map rho0 -> masses is linear, so this solves one
// m-by-m system (built column by column from unit center values) and re-solves
// with the resulting rho0.
inline DensityProfile normalize_to_mass(const OperatorSpec& spec, const Grid& grid,
                                        const std::vector<double>& target, double tol = 1e-11) {
  detail::require_line(spec);
  const int m = spec.m;
  if (static_cast<int>(target.size()) != m)
    throw std::invalid_argument("target must have one mass per system component");

  Eigen::MatrixXd M(m, m);
  for (int k = 0; k < m; ++k) {
    std::vector<double> e(static_cast<std::size_t>(m), 0.0);
    e[static_cast<std::size_t>(k)] = 1.0;
    const DensityProfile basis = solve_density_system(spec, e, grid, tol);
    for (int i = 0; i < m; ++i) M(i, k) = basis.masses[static_cast<std::size_t>(i)];
  }
  Eigen::VectorXd t(m);
  for (int i = 0; i < m; ++i) t(i) = target[static_cast<std::size_t>(i)];
  const Eigen::VectorXd a = detail::solve_mass_targets(M, t);

  DensityProfile p =
      solve_density_system(spec, std::vector<double>(a.data(), a.data() + m), grid, tol);
  p.target = target;
  return p;
}

// Residual of the solved row sum s = sum_i rho_i against its scalar equation
// s' = (beta/q) s, beta = first-row sum of B.  The reference s is
// re-integrated with a substep trapezoid rule sharpened by one Richardson
// level (fourth-order); the result is sup |s - s_ref| / (1 + |s_ref|).
// Meaningful when the rows of B share a common sum (otherwise no such scalar
// equation holds).
inline double conservation_residual(const OperatorSpec& spec, const DensityProfile& p,
                                    int substeps = 64) {
  detail::require_line(spec);
  const Grid& g = p.grid;
  const int N = static_cast<int>(g.size());
  const int m = spec.m;
  auto beta_over_q = [&](double x) {
    double s = 0.0;
    for (int j = 0; j < m; ++j) s += spec.B_at(0, 0, j).eval1(x, spec.params);
    return s / spec.q_at(0, 0).eval1(x, spec.params);
  };

  const int n0 = detail::center_node(g);
  double s0 = 0.0;
  for (int i = 0; i < m; ++i) s0 += p.rho[static_cast<std::size_t>(i)][static_cast<std::size_t>(n0)];

  auto trapezoid = [&](double a, double b, int parts) {
    double acc = 0.0;
    const double h = (b - a) / parts;
    double f_prev = beta_over_q(a);
    for (int k = 1; k <= parts; ++k) {
      const double f_next = beta_over_q(a + k * h);
      acc += 0.5 * h * (f_prev + f_next);
      f_prev = f_next;
    }
    return acc;
  };
  auto segment = [&](double a, double b) {
    const double coarse = trapezoid(a, b, substeps);
    const double fine = trapezoid(a, b, 2 * substeps);
    return fine + (fine - coarse) / 3.0;
  };

  std::vector<double> I(g.size());
  I[static_cast<std::size_t>(n0)] = 0.0;
  for (int n = n0 + 1; n < N; ++n)
    I[static_cast<std::size_t>(n)] =
        I[static_cast<std::size_t>(n - 1)] + segment(g.point(n - 1)[0], g.point(n)[0]);
  for (int n = n0 - 1; n >= 0; --n)
    I[static_cast<std::size_t>(n)] =
        I[static_cast<std::size_t>(n + 1)] + segment(g.point(n + 1)[0], g.point(n)[0]);

  double worst = 0.0;
  for (int n = 0; n < N; ++n) {
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += p.rho[static_cast<std::size_t>(i)][static_cast<std::size_t>(n)];
    const double ref = s0 * std::exp(I[static_cast<std::size_t>(n)]);
    worst = std::max(worst, std::abs(s - ref) / (1.0 + std::abs(ref)));
  }
  return worst;
}

// The two benchmark coefficient families with closed-form system densities.
enum class DensityCase { Case1, Case2Antisymmetric, Case2General };

// Case1:  q = 1, b = -x, B = [[0,-1],[-1,0]]; parameters a1, a2 select the
//         member rho1 = a1 e^x + a2 e^-x, rho2 = -a1 e^x + a2 e^-x.
// Case2*: q = 1+x^2, b = -b0 x (1+x^2), B_ij = b_ij x with equal row sums;
//         parameters b0, b_ij, c1, c2.  The antisymmetric branch additionally
//         requires b12 = -b21, the general branch b12 + b21 != 0.
struct ClosedFormParams {
  double a1 = 0.0, a2 = 0.0;
  double b0 = 0.0;
  double b11 = 0.0, b12 = 0.0, b21 = 0.0, b22 = 0.0;
  double c1 = 0.0, c2 = 0.0;
};

inline DensityProfile closed_form_oracle(DensityCase which, const ClosedFormParams& prm,
                                         const Grid& grid) {
  if (grid.d != 1)
    throw std::invalid_argument("density profiles require a one-dimensional grid");
  const std::size_t N = grid.size();
  DensityProfile p;
  p.grid = grid;
  p.rho.assign(2, std::vector<double>(N, 0.0));
  p.phi.resize(N);
  p.rho_mu.resize(N);

  if (which == DensityCase::Case1) {
    for (std::size_t n = 0; n < N; ++n) {
      const double x = grid.point(n)[0];
      p.phi[n] = 0.5 * x * x;
      p.rho[0][n] = prm.a1 * std::exp(x) + prm.a2 * std::exp(-x);
      p.rho[1][n] = -prm.a1 * std::exp(x) + prm.a2 * std::exp(-x);
    }
  } else {
    const double scale = std::max({std::abs(prm.b11), std::abs(prm.b12), std::abs(prm.b21),
                                   std::abs(prm.b22), 1.0});
    if (std::abs(prm.b11 + prm.b12 - prm.b21 - prm.b22) > 1e-12 * scale)
      throw std::invalid_argument("closed forms require equal row sums of the coupling matrix");
    if (which == DensityCase::Case2Antisymmetric && std::abs(prm.b12 + prm.b21) > 1e-12 * scale)
      throw std::invalid_argument("antisymmetric branch requires b12 = -b21");
    if (which == DensityCase::Case2General && std::abs(prm.b12 + prm.b21) <= 1e-12 * scale)
      throw std::invalid_argument("general branch requires b12 + b21 != 0");
    const double e = 0.5 * (prm.b11 - prm.b21);
    const double s = prm.b12 + prm.b21;
    for (std::size_t n = 0; n < N; ++n) {
      const double x = grid.point(n)[0];
      const double z = 1.0 + x * x;
      p.phi[n] = std::log(z) + 0.5 * prm.b0 * x * x;
      const double front = std::pow(z, e);
      if (which == DensityCase::Case2Antisymmetric) {
        const double l = std::log(z);
        p.rho[0][n] = front * (prm.c2 + 0.5 * prm.c1 * prm.b21 * l);
        p.rho[1][n] = front * (prm.c1 - prm.c2 + 0.5 * prm.c1 * prm.b12 * l);
      } else {
        const double grow = std::pow(z, 0.5 * s);
        p.rho[0][n] = front * (prm.c2 + prm.c1 * prm.b21 / s * (grow - 1.0));
        p.rho[1][n] = front * (-prm.c2 + prm.c1 / s * (prm.b12 * grow + prm.b21));
      }
    }
  }

  std::vector<double> w(N);
  for (std::size_t n = 0; n < N; ++n) w[n] = std::exp(-p.phi[n]);
  const double mass = detail::window_mass(grid, w);
  p.c = 1.0 / mass;
  for (std::size_t n = 0; n < N; ++n) p.rho_mu[n] = p.c * w[n];
  detail::finalize_profile(p);
  return p;
}

}  // namespace kolmo

#endif  // KOLMO_DENSITY_ODE_HPP
