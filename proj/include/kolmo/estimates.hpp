#ifndef KOLMO_ESTIMATES_HPP
#define KOLMO_ESTIMATES_HPP

// Inequality checks between computed fields:
//   |u(t,x)|^2        <= e^{2 beta t} T(t)|f|^2          (squared-norm bound)
//   |J u(t,x)|^p      <= e^{p sigma t} T(t)|Jf|^p        (smooth-data gradient)
//   |J u(t,x)|^p      <= C_p e^{p sigma t}(1 v t^{-p/2}) T(t)|f|^p
//   |u(t,x)|          <= C0 ||f||_inf phi(x)^{1/gamma}   (growth envelope, C0 empirical)
//   T(t)phi           <= a*/c* + phi                     (Lyapunov supersolution)
// where u = coupled evolution of f and T(t) the scalar semigroup with the same
// diffusion and drift. Margins are signed (lhs - rhs, negative = satisfied with
// slack), taken over inner-domain nodes only to keep truncation effects out of
// the verdict, and asserted up to a discretization slack calibrated from a
// coarse-grid rerun.

#include <kolmo/audit.hpp>
#include <kolmo/solver.hpp>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace kolmo {

struct EstimateSlice {
  double t = 0.0;
  std::vector<double> lhs, rhs; // one scalar value per grid node
};

struct EstimateReport {
  std::string id;
  std::vector<double> times;
  std::vector<EstimateSlice> slices;    // both sides, per sampled time
  std::vector<double> margin_by_time;   // max over inner nodes of lhs - rhs

  double worst_margin = 0.0;
  double worst_time = 0.0;
  std::size_t worst_node = 0;
  SamplePoint worst_at{};

  int N = 0;
  double dx = 0.0;
  double inner_exclusion = 0.0;         // distance from the boundary left out
  double eps_disc = 0.0;                // allowed discretization slack
  bool pass = false;
  bool hypothesis_warning = false;      // sigma >= 0: checked anyway, flagged
  std::string note;

  // Constants entering the inequality (NaN when not applicable).
  double beta = std::numeric_limits<double>::quiet_NaN();
  double sigma = std::numeric_limits<double>::quiet_NaN();
  double k_p = std::numeric_limits<double>::quiet_NaN();
  double C_p = std::numeric_limits<double>::quiet_NaN();
  double p = std::numeric_limits<double>::quiet_NaN();

  // Growth-envelope extras.
  double rho_half = std::numeric_limits<double>::quiet_NaN();
  double rho_full = std::numeric_limits<double>::quiet_NaN();
  double growth_rel = std::numeric_limits<double>::quiet_NaN();
};

struct EstimateOptions {
  double dt = 1e-3;
  bool rannacher = false;
  double solver_tol = 1e-10;
  double tol_floor = 1e-9;      // minimum slack even on matching grids
  bool refine = true;           // calibrate eps_disc from a half-resolution rerun
  double growth_tol = 1e-3;     // relative stabilization for the growth envelope
  double snapshot_interval = 0.1;
};

namespace detail {

inline std::vector<char> inner_mask(const Grid& g, double exclusion) {
  std::vector<char> mask(g.size(), 1);
  if (g.bc == BC::Periodic) return mask;
  for (std::size_t n = 0; n < g.size(); ++n) {
    auto x = g.point(n);
    for (int a = 0; a < g.d; ++a) {
      double xa = x[static_cast<std::size_t>(a)];
      double dist = std::min(xa - (g.center - g.L), (g.center + g.L) - xa);
      if (dist < exclusion - 1e-12) {
        mask[n] = 0;
        break;
      }
    }
  }
  return mask;
}

inline std::vector<double> squared_norm_field(const VectorField& u) {
  std::vector<double> out(u.grid.size(), 0.0);
  for (const auto& c : u.comp)
    for (std::size_t n = 0; n < out.size(); ++n) out[n] += c[n] * c[n];
  return out;
}

// Frobenius norm of the central-difference Jacobian, raised to the power p.
// Nodes without a two-sided stencil on some axis get 0 (they sit in the
// excluded boundary collar anyway).
inline std::vector<double> jacobian_frob_pow(const VectorField& u, double p) {
  const Grid& g = u.grid;
  std::vector<double> out(g.size(), 0.0);
  for (std::size_t n = 0; n < g.size(); ++n) {
    double s2 = 0.0;
    bool ok = true;
    for (int a = 0; a < g.d && ok; ++a) {
      if (g.edge(n, a) != 0) {
        ok = false;
        break;
      }
      for (const auto& c : u.comp) {
        double der = (c[g.neighbor(n, a, +1)] - c[g.neighbor(n, a, -1)]) / (2.0 * g.dx());
        s2 += der * der;
      }
    }
    if (ok) out[n] = p == 2.0 ? s2 : std::pow(s2, 0.5 * p);
  }
  return out;
}

inline VectorField evolve_to(const DiscreteOperator& op, const VectorField& f0, double t,
                             const EstimateOptions& o) {
  EvolveOptions eo;
  eo.dt = o.dt;
  eo.snapshot_every = std::numeric_limits<int>::max();
  eo.rannacher = o.rannacher;
  eo.solver_tol = o.solver_tol;
  return evolve(op, f0, t, eo).snaps.back();
}

struct MarginScan {
  double margin = -std::numeric_limits<double>::infinity();
  std::size_t node = 0;
};

inline MarginScan scan_margin(const std::vector<double>& lhs, const std::vector<double>& rhs,
                              const std::vector<char>& mask) {
  MarginScan s;
  for (std::size_t n = 0; n < lhs.size(); ++n) {
    if (!mask[n]) continue;
    double m = lhs[n] - rhs[n];
    if (m > s.margin) {
      s.margin = m;
      s.node = n;
    }
  }
  return s;
}

// Runs the margin computation on the user grid (filling the report) and once
// more at half resolution to size the discretization slack C*dx^2; second-order
// stencils make |margin_h - margin_2h| ~ 3 C h^2.
template <class Fn>
inline void finalize_margins(EstimateReport& rep, const Grid& grid, const EstimateOptions& o,
                             Fn&& run) {
  rep.worst_margin = run(grid, &rep);
  rep.N = grid.N;
  rep.dx = grid.dx();
  rep.eps_disc = o.tol_floor;
  if (o.refine && grid.N >= 33 && (grid.N - 1) % 2 == 0) {
    Grid coarse = grid;
    coarse.N = (grid.N - 1) / 2 + 1;
    double coarse_margin = run(coarse, static_cast<EstimateReport*>(nullptr));
    rep.eps_disc = std::max(o.tol_floor, std::abs(rep.worst_margin - coarse_margin) / 3.0);
  }
  rep.pass = rep.worst_margin <= rep.eps_disc;
}

} // namespace detail

inline EstimateReport check_pointwise_bound(const OperatorSpec& spec, const Grid& grid,
                                            const std::vector<Expr>& f,
                                            std::optional<double> beta,
                                            std::vector<double> times,
                                            const EstimateOptions& opts = {}) {
  spec.validate();
  if (!beta) throw std::invalid_argument("missing beta: run the coefficient audit first");
  if (times.empty()) throw std::invalid_argument("at least one sample time is required");

  EstimateReport rep;
  rep.id = "pointwise-square";
  rep.beta = *beta;
  rep.times = times;
  rep.inner_exclusion = grid.L / 4.0;

  auto run = [&](const Grid& g, EstimateReport* out) {
    DiscreteOperator op = assemble(spec, g);
    DiscreteOperator op_s = assemble(scalar_part(spec), g);
    VectorField f0 = sample_vector_field(g, f, spec.params);
    VectorField g0 = VectorField::zeros(g, 1);
    g0.comp[0] = detail::squared_norm_field(f0);
    auto mask = detail::inner_mask(g, rep.inner_exclusion);

    double worst = -std::numeric_limits<double>::infinity();
    for (double t : times) {
      VectorField U = detail::evolve_to(op, f0, t, opts);
      VectorField S = detail::evolve_to(op_s, g0, t, opts);
      std::vector<double> lhs = detail::squared_norm_field(U);
      std::vector<double> rhs(g.size());
      double amp = std::exp(2.0 * *beta * t);
      for (std::size_t n = 0; n < rhs.size(); ++n) rhs[n] = amp * S.comp[0][n];

      detail::MarginScan s = detail::scan_margin(lhs, rhs, mask);
      if (out) {
        out->slices.push_back({t, lhs, rhs});
        out->margin_by_time.push_back(s.margin);
        if (s.margin > worst) {
          out->worst_time = t;
          out->worst_node = s.node;
          out->worst_at = g.point(s.node);
        }
      }
      worst = std::max(worst, s.margin);
    }
    return worst;
  };
  detail::finalize_margins(rep, grid, opts, run);
  return rep;
}

inline EstimateReport check_gradient_estimate_smooth(const OperatorSpec& spec, const Grid& grid,
                                                     const std::vector<Expr>& f, double p,
                                                     double sigma, std::vector<double> times,
                                                     const EstimateOptions& opts = {}) {
  spec.validate();
  if (!(p > 1.0)) throw std::invalid_argument("p must exceed 1 (and be at least the audited p0)");
  if (times.empty()) throw std::invalid_argument("at least one sample time is required");

  EstimateReport rep;
  rep.id = "gradient-smooth";
  rep.sigma = sigma;
  rep.p = p;
  rep.times = times;
  rep.inner_exclusion = grid.L / 4.0;
  if (sigma >= -1e-9) {
    rep.hypothesis_warning = true;
    rep.note = "dissipativity not strictly satisfied (sigma >= 0); estimate checked anyway";
  }

  // |Jf|^p for the initial datum from exact derivatives of the expressions.
  std::vector<Expr> df;
  for (const auto& fj : f)
    for (int a = 0; a < spec.d; ++a) df.push_back(fj.diff(a));

  auto run = [&](const Grid& g, EstimateReport* out) {
    DiscreteOperator op = assemble(spec, g);
    DiscreteOperator op_s = assemble(scalar_part(spec), g);
    VectorField f0 = sample_vector_field(g, f, spec.params);
    VectorField jf = sample_vector_field(g, df, spec.params);
    VectorField g0 = VectorField::zeros(g, 1);
    {
      std::vector<double> s2 = detail::squared_norm_field(jf);
      for (std::size_t n = 0; n < s2.size(); ++n)
        g0.comp[0][n] = p == 2.0 ? s2[n] : std::pow(s2[n], 0.5 * p);
    }
    auto mask = detail::inner_mask(g, rep.inner_exclusion);

    double worst = -std::numeric_limits<double>::infinity();
    for (double t : times) {
      VectorField U = detail::evolve_to(op, f0, t, opts);
      VectorField S = detail::evolve_to(op_s, g0, t, opts);
      std::vector<double> lhs = detail::jacobian_frob_pow(U, p);
      std::vector<double> rhs(g.size());
      double amp = std::exp(p * sigma * t);
      for (std::size_t n = 0; n < rhs.size(); ++n) rhs[n] = amp * S.comp[0][n];

      detail::MarginScan s = detail::scan_margin(lhs, rhs, mask);
      if (out) {
        out->slices.push_back({t, lhs, rhs});
        out->margin_by_time.push_back(s.margin);
        if (s.margin > worst) {
          out->worst_time = t;
          out->worst_node = s.node;
          out->worst_at = g.point(s.node);
        }
      }
      worst = std::max(worst, s.margin);
    }
    return worst;
  };
  detail::finalize_margins(rep, grid, opts, run);
  return rep;
}

inline EstimateReport check_gradient_estimate_rough(const OperatorSpec& spec, const Grid& grid,
                                                    const std::vector<Expr>& f, double p,
                                                    double sigma, double xi,
                                                    std::vector<double> times,
                                                    const EstimateOptions& opts = {}) {
  spec.validate();
  if (!(p > 1.0)) throw std::invalid_argument("p must exceed 1 (and be at least the audited p0)");
  if (xi <= 0.0)
    throw std::invalid_argument(
        "the rough-data constant k_p is proportional to xi^2 and degenerates without coupling");
  for (double t : times)
    if (t <= 0.0) throw std::invalid_argument("the rough-data bound needs t > 0");
  if (times.empty()) throw std::invalid_argument("at least one sample time is required");

  EstimateReport rep;
  rep.id = "gradient-rough";
  rep.sigma = sigma;
  rep.p = p;
  rep.times = times;
  rep.inner_exclusion = grid.L / 4.0;
  rep.k_p = 0.5 * p * spec.d * spec.m * spec.m * xi * xi / (std::min(p, 2.0) - 1.0);
  rep.C_p = rep.k_p * std::exp(p * std::abs(sigma));
  if (sigma >= -1e-9) {
    rep.hypothesis_warning = true;
    rep.note = "dissipativity not strictly satisfied (sigma >= 0); estimate checked anyway";
  }

  auto run = [&](const Grid& g, EstimateReport* out) {
    DiscreteOperator op = assemble(spec, g);
    DiscreteOperator op_s = assemble(scalar_part(spec), g);
    VectorField f0 = sample_vector_field(g, f, spec.params);
    VectorField g0 = VectorField::zeros(g, 1);
    {
      std::vector<double> s2 = detail::squared_norm_field(f0);
      for (std::size_t n = 0; n < s2.size(); ++n)
        g0.comp[0][n] = p == 2.0 ? s2[n] : std::pow(s2[n], 0.5 * p);
    }
    auto mask = detail::inner_mask(g, rep.inner_exclusion);

    double worst = -std::numeric_limits<double>::infinity();
    for (double t : times) {
      VectorField U = detail::evolve_to(op, f0, t, opts);
      VectorField S = detail::evolve_to(op_s, g0, t, opts);
      std::vector<double> lhs = detail::jacobian_frob_pow(U, p);
      std::vector<double> rhs(g.size());
      double amp =
          rep.C_p * std::exp(p * sigma * t) * std::max(1.0, std::pow(t, -0.5 * p));
      for (std::size_t n = 0; n < rhs.size(); ++n) rhs[n] = amp * S.comp[0][n];

      detail::MarginScan s = detail::scan_margin(lhs, rhs, mask);
      if (out) {
        out->slices.push_back({t, lhs, rhs});
        out->margin_by_time.push_back(s.margin);
        if (s.margin > worst) {
          out->worst_time = t;
          out->worst_node = s.node;
          out->worst_at = g.point(s.node);
        }
      }
      worst = std::max(worst, s.margin);
    }
    return worst;
  };
  detail::finalize_margins(rep, grid, opts, run);
  return rep;
}

// sqrt(t) * sup_inner |grad T(t) f| for each requested time; the rough-data
// bound encodes exactly this t^{-1/2} blow-up rate, so the returned ratios
// should stay bounded as t -> 0+.
inline std::vector<double> small_time_gradient_ratio(const OperatorSpec& spec, const Grid& grid,
                                                     const std::vector<Expr>& f,
                                                     std::vector<double> times,
                                                     const EstimateOptions& opts = {}) {
  spec.validate();
  DiscreteOperator op = assemble(spec, grid);
  VectorField f0 = sample_vector_field(grid, f, spec.params);
  auto mask = detail::inner_mask(grid, grid.L / 4.0);
  std::vector<double> out;
  for (double t : times) {
    if (t <= 0.0) throw std::invalid_argument("small-time study needs t > 0");
    VectorField U = detail::evolve_to(op, f0, t, opts);
    std::vector<double> j2 = detail::jacobian_frob_pow(U, 2.0);
    double sup = 0.0;
    for (std::size_t n = 0; n < j2.size(); ++n)
      if (mask[n]) sup = std::max(sup, j2[n]);
    out.push_back(std::sqrt(t) * std::sqrt(sup));
  }
  return out;
}

inline EstimateReport check_global_bound(const OperatorSpec& spec, const Grid& grid,
                                         const std::vector<Expr>& f, const Expr& phi,
                                         double gamma, double horizon,
                                         const EstimateOptions& opts = {}) {
  spec.validate();
  if (!(gamma > 2.0)) throw std::invalid_argument("gamma must exceed 2");
  if (horizon <= 0.0) throw std::invalid_argument("horizon must be positive");

  EstimateReport rep;
  rep.id = "growth-envelope";
  rep.times = {0.5 * horizon, horizon};
  rep.inner_exclusion = grid.L / 4.0;
  rep.N = grid.N;
  rep.dx = grid.dx();
  rep.eps_disc = opts.tol_floor;
  rep.note = "the envelope constant is non-constructive; the empirical ratio and its "
             "stabilization between the half and full horizon are reported instead";

  DiscreteOperator op = assemble(spec, grid);
  VectorField f0 = sample_vector_field(grid, f, spec.params);
  auto mask = detail::inner_mask(grid, rep.inner_exclusion);

  double fnorm = 0.0;
  {
    std::vector<double> n2 = detail::squared_norm_field(f0);
    for (double v : n2) fnorm = std::max(fnorm, v);
    fnorm = std::sqrt(fnorm);
  }
  if (fnorm == 0.0) throw std::invalid_argument("initial datum is identically zero");

  std::vector<double> rhs(grid.size());
  for (std::size_t n = 0; n < grid.size(); ++n) {
    auto x = grid.point(n);
    std::span<const double> pt(x.data(), static_cast<std::size_t>(grid.d));
    double phi_v = phi.eval(pt, spec.params);
    if (phi_v < 1.0)
      throw std::invalid_argument("Lyapunov candidate drops below 1 at a grid node");
    rhs[n] = fnorm * std::pow(phi_v, 1.0 / gamma);
  }

  EvolveOptions eo;
  eo.dt = opts.dt;
  eo.rannacher = opts.rannacher;
  eo.solver_tol = opts.solver_tol;
  eo.snapshot_every =
      std::max(1, static_cast<int>(std::lround(opts.snapshot_interval / opts.dt)));

  std::vector<double> sup_field(grid.size(), 0.0);
  auto absorb = [&](const Trajectory& traj) {
    for (const auto& snap : traj.snaps) {
      std::vector<double> n2 = detail::squared_norm_field(snap);
      for (std::size_t n = 0; n < sup_field.size(); ++n)
        sup_field[n] = std::max(sup_field[n], std::sqrt(n2[n]));
    }
  };
  auto rho_of = [&]() {
    double r = 0.0;
    for (std::size_t n = 0; n < sup_field.size(); ++n)
      if (mask[n]) r = std::max(r, sup_field[n] / rhs[n]);
    return r;
  };

  Trajectory first = evolve(op, f0, 0.5 * horizon, eo);
  absorb(first);
  rep.rho_half = rho_of();
  {
    detail::MarginScan s = detail::scan_margin(sup_field, rhs, mask);
    rep.slices.push_back({0.5 * horizon, sup_field, rhs});
    rep.margin_by_time.push_back(s.margin);
  }

  Trajectory second = evolve(op, first.snaps.back(), 0.5 * horizon, eo);
  absorb(second);
  rep.rho_full = rho_of();
  {
    detail::MarginScan s = detail::scan_margin(sup_field, rhs, mask);
    rep.slices.push_back({horizon, sup_field, rhs});
    rep.margin_by_time.push_back(s.margin);
    rep.worst_margin = s.margin;
    rep.worst_time = horizon;
    rep.worst_node = s.node;
    rep.worst_at = grid.point(s.node);
  }

  rep.growth_rel = rep.rho_half > 0.0 ? (rep.rho_full - rep.rho_half) / rep.rho_half : 0.0;
  rep.pass = std::isfinite(rep.rho_full) && rep.growth_rel <= opts.growth_tol;
  return rep;
}

inline EstimateReport check_lyapunov_semigroup_bound(const OperatorSpec& spec, const Grid& grid,
                                                     const Expr& phi, double a_star,
                                                     double c_star, std::vector<double> times,
                                                     const EstimateOptions& opts = {}) {
  spec.validate();
  if (spec.m != 1)
    throw std::invalid_argument("the Lyapunov supersolution bound applies to the scalar part");
  if (c_star <= 0.0) throw std::invalid_argument("c* must be positive");
  if (times.empty()) throw std::invalid_argument("at least one sample time is required");

  EstimateReport rep;
  rep.id = "lyapunov-supersolution";
  rep.times = times;
  // phi is unbounded, so it is evolved with the boundary capped (Dirichlet) and
  // judged on the inner half-domain only.
  rep.inner_exclusion = grid.L / 2.0;
  rep.note = "boundary values capped to zero; capping only lowers the evolved field, so the "
             "one-sided check remains valid";

  auto run = [&](const Grid& g, EstimateReport* out) {
    Grid gd = g;
    gd.bc = BC::Dirichlet;
    DiscreteOperator op = assemble(spec, gd);
    VectorField f0 = sample_vector_field(gd, {phi}, spec.params);
    auto mask = detail::inner_mask(gd, rep.inner_exclusion);

    std::vector<double> rhs(gd.size());
    for (std::size_t n = 0; n < gd.size(); ++n) {
      auto x = gd.point(n);
      std::span<const double> pt(x.data(), static_cast<std::size_t>(gd.d));
      rhs[n] = a_star / c_star + phi.eval(pt, spec.params);
    }

    double worst = -std::numeric_limits<double>::infinity();
    for (double t : times) {
      VectorField U = detail::evolve_to(op, f0, t, opts);
      detail::MarginScan s = detail::scan_margin(U.comp[0], rhs, mask);
      if (out) {
        out->slices.push_back({t, U.comp[0], rhs});
        out->margin_by_time.push_back(s.margin);
        if (s.margin > worst) {
          out->worst_time = t;
          out->worst_node = s.node;
          out->worst_at = gd.point(s.node);
        }
      }
      worst = std::max(worst, s.margin);
    }
    return worst;
  };
  detail::finalize_margins(rep, grid, opts, run);
  return rep;
}

} // namespace kolmo

#endif
