#ifndef KOLMO_AUDIT_HPP
#define KOLMO_AUDIT_HPP

// Numerical audits of the standing assumptions on the coefficients:
//   (i)   uniform ellipticity        lambda0 = inf lambda_Q > 0
//   (ii)  coupling envelope          xi = sup psi / sqrt(lambda_Q),
//                                    psi = max |B entries|
//   (iii) Lyapunov domination        A phi <= a* - c* phi
//   (iv)  dissipativity              sigma_{p0} < 0 (strictly)
//   (v)   envelope vs Lyapunov       psi^gamma <= c_gamma phi
// plus the polynomially-growing coefficient class shortcut and the
// symmetrizing-measure conditions (gradient drift, integrable weight, and the
// mixed quadratic-form inequality in (x, xi, S)).
//
// Everything is a supremum/infimum over a finite sample set: the user grid
// padded with log-spaced far-field rays out to 10x the half-width. Reported
// extrema always carry the sample that attains them, so every number in a
// report can be reproduced by re-evaluating the defining expression there.

#include <kolmo/expr.hpp>
#include <kolmo/grid.hpp>
#include <kolmo/operator_model.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace kolmo {

using SamplePoint = std::array<double, 3>;

struct Attained {
  double value = 0.0;
  SamplePoint at{};
};

struct SampleSet {
  std::vector<SamplePoint> points;
  std::string description;
};

inline SampleSet make_audit_samples(const Grid& grid, double far_factor = 10.0,
                                    int per_direction = 24) {
  SampleSet set;
  for (std::size_t n = 0; n < grid.size(); ++n) set.points.push_back(grid.point(n));
  // Log-spaced rays from L to far_factor*L along each coordinate direction.
  for (int a = 0; a < grid.d; ++a)
    for (int sgn : {-1, +1})
      for (int k = 1; k <= per_direction; ++k) {
        double r = grid.L * std::pow(far_factor, static_cast<double>(k) / per_direction);
        SamplePoint x{grid.center, grid.center, grid.center};
        for (int aa = grid.d; aa < 3; ++aa) x[static_cast<std::size_t>(aa)] = 0.0;
        x[static_cast<std::size_t>(a)] = grid.center + sgn * r;
        set.points.push_back(x);
      }
  set.description = std::to_string(grid.N) + "^" + std::to_string(grid.d) + " grid on [" +
                    std::to_string(grid.center - grid.L) + ", " +
                    std::to_string(grid.center + grid.L) + "] plus " +
                    std::to_string(2 * grid.d) + " log-spaced far-field rays to " +
                    std::to_string(far_factor) + "x the half-width (" +
                    std::to_string(per_direction) + " points each); suprema are over this " +
                    "finite set, not over the whole space";
  return set;
}

namespace detail {

inline Eigen::MatrixXd eval_Q(const OperatorSpec& spec, const SamplePoint& x) {
  std::span<const double> pt(x.data(), static_cast<std::size_t>(spec.d));
  Eigen::MatrixXd Q(spec.d, spec.d);
  for (int h = 0; h < spec.d; ++h)
    for (int k = 0; k < spec.d; ++k) Q(h, k) = spec.q_at(h, k).eval(pt, spec.params);
  double scale = 1.0 + Q.cwiseAbs().maxCoeff();
  for (int h = 0; h < spec.d; ++h)
    for (int k = h + 1; k < spec.d; ++k)
      if (std::abs(Q(h, k) - Q(k, h)) > 1e-10 * scale)
        throw std::invalid_argument("Q is not symmetric at a sample point");
  return Q;
}

inline double min_eigenvalue(const Eigen::MatrixXd& M) {
  const int d = static_cast<int>(M.rows());
  if (d == 1) return M(0, 0);
  if (d == 2) {
    double tr2 = 0.5 * (M(0, 0) + M(1, 1));
    double det = M(0, 0) * M(1, 1) - M(0, 1) * M(1, 0);
    double disc = std::sqrt(std::max(0.0, tr2 * tr2 - det));
    return tr2 - disc;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  return es.eigenvalues().minCoeff();
}

inline double max_eigenvalue(const Eigen::MatrixXd& M) { return -min_eigenvalue(-M); }

inline double eval_psi(const OperatorSpec& spec, const SamplePoint& x) {
  std::span<const double> pt(x.data(), static_cast<std::size_t>(spec.d));
  double psi = 0.0;
  for (int k = 0; k < spec.d; ++k)
    for (int j = 0; j < spec.m; ++j)
      for (int i = 0; i < spec.m; ++i)
        psi = std::max(psi, std::abs(spec.B_at(k, j, i).eval(pt, spec.params)));
  return psi;
}

// Pre-differentiated coefficient bundles reused across samples.
struct AuditSymbols {
  std::vector<Expr> dq;       // D_h q_ij, laid out (h*d + i)*d + j
  std::vector<Expr> jac_b;    // D_j b_i, laid out i*d + j
  std::vector<Expr> dB;       // D_j (B_i)_{ab}, laid out ((i*d + j)*m + a)*m + b
};

inline AuditSymbols make_audit_symbols(const OperatorSpec& spec) {
  AuditSymbols s;
  for (int h = 0; h < spec.d; ++h)
    for (int i = 0; i < spec.d; ++i)
      for (int j = 0; j < spec.d; ++j) s.dq.push_back(spec.q_at(i, j).diff(h));
  for (int i = 0; i < spec.d; ++i)
    for (int j = 0; j < spec.d; ++j) s.jac_b.push_back(spec.b_at(i).diff(j));
  for (int i = 0; i < spec.d; ++i)
    for (int j = 0; j < spec.d; ++j)
      for (int a = 0; a < spec.m; ++a)
        for (int b = 0; b < spec.m; ++b) s.dB.push_back(spec.B_at(i, a, b).diff(j));
  return s;
}

} // namespace detail

inline std::pair<double, SamplePoint> check_ellipticity(const OperatorSpec& spec,
                                                        const std::vector<SamplePoint>& samples) {
  if (samples.empty()) throw std::invalid_argument("sample set is empty");
  double best = std::numeric_limits<double>::infinity();
  SamplePoint argmin{};
  for (const auto& x : samples) {
    double lam = detail::min_eigenvalue(detail::eval_Q(spec, x));
    if (!std::isfinite(lam)) throw std::invalid_argument("non-finite diffusion entry at a sample");
    if (lam < best) {
      best = lam;
      argmin = x;
    }
  }
  return {best, argmin};
}

inline Attained compute_xi(const OperatorSpec& spec, const std::vector<SamplePoint>& samples) {
  Attained xi;
  xi.value = 0.0;
  for (const auto& x : samples) {
    double lam = detail::min_eigenvalue(detail::eval_Q(spec, x));
    double v = detail::eval_psi(spec, x) / std::sqrt(lam);
    if (v >= xi.value) {
      xi.value = v;
      xi.at = x;
    }
  }
  return xi;
}

struct LyapunovResult {
  double a_star = 0.0;
  double c_star = 1.0;
  bool fitted = false;       // constants derived from the samples, not supplied
  Attained worst;            // max of A phi - a* + c* phi (<= 0 means pass)
  bool pass = false;
};

inline double apply_generator_symbolic(const OperatorSpec& spec, const Expr& phi,
                                       const SamplePoint& x) {
  std::span<const double> pt(x.data(), static_cast<std::size_t>(spec.d));
  double acc = 0.0;
  for (int h = 0; h < spec.d; ++h)
    for (int k = 0; k < spec.d; ++k)
      acc += spec.q_at(h, k).eval(pt, spec.params) * phi.diff(h).diff(k).eval(pt, spec.params);
  for (int k = 0; k < spec.d; ++k)
    acc += spec.b_at(k).eval(pt, spec.params) * phi.diff(k).eval(pt, spec.params);
  return acc;
}

inline LyapunovResult check_lyapunov(const OperatorSpec& spec, const Expr& phi,
                                     const std::vector<SamplePoint>& samples,
                                     std::optional<std::pair<double, double>> constants = {}) {
  LyapunovResult res;
  std::vector<Expr> dphi, ddphi;
  for (int k = 0; k < spec.d; ++k) dphi.push_back(phi.diff(k));
  for (int h = 0; h < spec.d; ++h)
    for (int k = 0; k < spec.d; ++k) ddphi.push_back(dphi[static_cast<std::size_t>(h)].diff(k));

  auto a_phi = [&](const SamplePoint& x) {
    std::span<const double> pt(x.data(), static_cast<std::size_t>(spec.d));
    double acc = 0.0;
    for (int h = 0; h < spec.d; ++h)
      for (int k = 0; k < spec.d; ++k)
        acc += spec.q_at(h, k).eval(pt, spec.params) *
               ddphi[static_cast<std::size_t>(h * spec.d + k)].eval(pt, spec.params);
    for (int k = 0; k < spec.d; ++k)
      acc += spec.b_at(k).eval(pt, spec.params) *
             dphi[static_cast<std::size_t>(k)].eval(pt, spec.params);
    return acc;
  };
  auto phi_val = [&](const SamplePoint& x) {
    std::span<const double> pt(x.data(), static_cast<std::size_t>(spec.d));
    double v = phi.eval(pt, spec.params);
    if (v < 1.0)
      throw std::invalid_argument("Lyapunov candidate drops below 1 at a sample point");
    return v;
  };

  if (constants) {
    res.a_star = constants->first;
    res.c_star = constants->second;
    if (res.c_star <= 0.0) throw std::invalid_argument("c* must be positive");
  } else {
    // Fit with c* = 1: a* is the sampled sup of A phi + phi.
    res.fitted = true;
    res.c_star = 1.0;
    double a = -std::numeric_limits<double>::infinity();
    for (const auto& x : samples) a = std::max(a, a_phi(x) + phi_val(x));
    res.a_star = a;
  }

  res.worst.value = -std::numeric_limits<double>::infinity();
  for (const auto& x : samples) {
    double viol = a_phi(x) - res.a_star + res.c_star * phi_val(x);
    if (viol > res.worst.value) {
      res.worst.value = viol;
      res.worst.at = x;
    }
  }
  res.pass = res.worst.value <= (res.fitted ? 1e-12 : 0.0);
  return res;
}

struct SigmaResult {
  double p0 = 2.0;
  Attained sigma;
  bool pass = false;      // sigma < -1e-9 (strict negativity with margin)
  bool marginal = false;  // sigma in [-1e-9, 0]
};

// The dissipativity functional at one sample, given the global xi.
inline double sigma_expression(const OperatorSpec& spec, const detail::AuditSymbols& sym,
                               double p0, double xi, const SamplePoint& x) {
  std::span<const double> pt(x.data(), static_cast<std::size_t>(spec.d));
  const int d = spec.d, m = spec.m;

  Eigen::MatrixXd J(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      J(i, j) = sym.jac_b[static_cast<std::size_t>(i * d + j)].eval(pt, spec.params);
  Eigen::MatrixXd Jsym = 0.5 * (J + J.transpose());
  double lambda_jb = detail::max_eigenvalue(Jsym);

  double frob2 = 0.0;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b) {
          double v = sym.dB[static_cast<std::size_t>(((i * d + j) * m + a) * m + b)].eval(
              pt, spec.params);
          frob2 += v * v;
        }

  double kx = 0.0;
  for (std::size_t idx = 0; idx < sym.dq.size(); ++idx)
    kx = std::max(kx, std::abs(sym.dq[idx].eval(pt, spec.params)));

  double lamQ = detail::min_eigenvalue(detail::eval_Q(spec, x));
  double denom = 4.0 * std::min(1.0, p0 - 1.0);
  double third = d * std::pow(m * xi + d * kx / std::sqrt(lamQ), 2.0) / denom;
  return lambda_jb + std::sqrt(frob2) + third;
}

inline SigmaResult compute_sigma(const OperatorSpec& spec, double p0,
                                 const std::vector<SamplePoint>& samples,
                                 std::optional<double> xi_known = {}) {
  if (!(p0 > 1.0 && p0 <= 2.0)) throw std::invalid_argument("p0 must lie in (1, 2]");
  detail::AuditSymbols sym = detail::make_audit_symbols(spec);
  double xi = xi_known ? *xi_known : compute_xi(spec, samples).value;

  SigmaResult res;
  res.p0 = p0;
  res.sigma.value = -std::numeric_limits<double>::infinity();
  for (const auto& x : samples) {
    double v = sigma_expression(spec, sym, p0, xi, x);
    if (v > res.sigma.value) {
      res.sigma.value = v;
      res.sigma.at = x;
    }
  }
  res.marginal = res.sigma.value >= -1e-9 && res.sigma.value <= 0.0;
  res.pass = res.sigma.value < -1e-9;
  return res;
}

struct GammaResult {
  double gamma = 3.0;
  Attained c_gamma; // minimal admissible constant: sup psi^gamma / phi
};

inline GammaResult check_gamma_domination(const OperatorSpec& spec, const Expr& phi, double gamma,
                                          const std::vector<SamplePoint>& samples) {
  if (!(gamma > 2.0)) throw std::invalid_argument("gamma must exceed 2");
  GammaResult res;
  res.gamma = gamma;
  res.c_gamma.value = 0.0;
  for (const auto& x : samples) {
    std::span<const double> pt(x.data(), static_cast<std::size_t>(spec.d));
    double phi_v = phi.eval(pt, spec.params);
    if (phi_v < 1.0)
      throw std::invalid_argument("Lyapunov candidate drops below 1 at a sample point");
    double ratio = std::pow(detail::eval_psi(spec, x), gamma) / phi_v;
    if (ratio >= res.c_gamma.value) {
      res.c_gamma.value = ratio;
      res.c_gamma.at = x;
    }
  }
  return res;
}

// ---- Polynomially growing coefficient class ---------------------------------
// Q = (1+|x|^2)^p Q0, b = -b0 x (1+|x|^2)^r, B_i = (1+|x|^2)^{s_i} B_i^0 with
// bounded Q0, B_i^0. Sufficient conditions: s_max <= p/2, r > max{p, s_max} and
//   (sum_{i,j} (2 s_i ||B_i^0|| + ||D_j B_i^0||)^2)^{1/2}
//     + d (m xi0 + d c0 / sqrt(lambda1))^2 / (4 min{1, p0-1}) < b0,
// where lambda1 = inf min-eigenvalue of Q0, c0 bounds k(x)/(1+|x|^2)^p and
// xi0 = max_i ||B_i^0|| / sqrt(lambda1) dominates xi (the envelope
// (1+|x|^2)^{s_max - p/2} is <= 1 precisely because s_max <= p/2).
struct PolynomialClassInput {
  int d = 1, m = 1;
  double p = 0.0, r = 0.0;
  std::vector<double> s;            // d exponents s_i
  double b0 = 0.0;
  std::vector<double> B0_norms;     // ||B_i^0||_inf per axis i
  std::vector<double> dB0_norms;    // ||D_j B_i^0||_inf, laid out i*d + j
  double lambda1 = 1.0;
  double c0 = 0.0;
  double p0 = 2.0;
};

struct PolynomialClassReport {
  bool exponents_ok = false;   // s_max <= p/2 and r > max{p, s_max}
  double exponent_margin = 0.0;
  double lhs = 0.0;            // left side of the closed-form inequality
  double margin = 0.0;         // b0 - lhs (> 0 required)
  bool pass = false;
};

inline PolynomialClassReport check_polynomial_class(const PolynomialClassInput& in) {
  if (in.p < 0 || in.r < 0) throw std::invalid_argument("p and r must be nonnegative");
  if (static_cast<int>(in.s.size()) != in.d ||
      static_cast<int>(in.B0_norms.size()) != in.d ||
      static_cast<int>(in.dB0_norms.size()) != in.d * in.d)
    throw std::invalid_argument("polynomial class input sizes do not match d");
  if (!(in.p0 > 1.0 && in.p0 <= 2.0)) throw std::invalid_argument("p0 must lie in (1, 2]");
  if (in.lambda1 <= 0.0) throw std::invalid_argument("lambda1 must be positive");
  for (double s : in.s)
    if (s < 0) throw std::invalid_argument("s_i must be nonnegative");

  PolynomialClassReport rep;
  double s_max = *std::max_element(in.s.begin(), in.s.end());
  rep.exponent_margin = std::min(in.p / 2.0 - s_max, in.r - std::max(in.p, s_max));
  rep.exponents_ok = s_max <= in.p / 2.0 && in.r > std::max(in.p, s_max);

  double sum2 = 0.0;
  for (int i = 0; i < in.d; ++i)
    for (int j = 0; j < in.d; ++j) {
      double term = 2.0 * in.s[static_cast<std::size_t>(i)] *
                        in.B0_norms[static_cast<std::size_t>(i)] +
                    in.dB0_norms[static_cast<std::size_t>(i * in.d + j)];
      sum2 += term * term;
    }
  double xi0 = *std::max_element(in.B0_norms.begin(), in.B0_norms.end()) / std::sqrt(in.lambda1);
  rep.lhs = std::sqrt(sum2) +
            in.d * std::pow(in.m * xi0 + in.d * in.c0 / std::sqrt(in.lambda1), 2.0) /
                (4.0 * std::min(1.0, in.p0 - 1.0));
  rep.margin = in.b0 - rep.lhs;
  rep.pass = rep.exponents_ok && rep.margin > 0.0;
  return rep;
}

// ---- Symmetrizing measure conditions ----------------------------------------

struct SymmetrizingReport {
  bool gradient_ok = false;     // Q^{-1}(div Q - b) has a symmetric Jacobian
  double curl_residual = 0.0;   // worst antisymmetry of that Jacobian
  double integral_half = 0.0;   // int e^{-Phi} over [-L, L]^d
  double integral_full = 0.0;   // same over [-2L, 2L]^d
  double tail_ratio = 0.0;      // added mass when doubling, relative
  bool integrable = false;
  double k1 = 0.0, k2 = 0.0;    // fitted constants of the quadratic-form bound
  double worst_violation = 0.0; // on held-out triples, <= 0 means satisfied
  bool quadratic_ok = false;
  bool pass = false;
};

namespace detail {

// F = Q^{-1} (div Q - b), the candidate gradient field.
inline Eigen::VectorXd eval_F(const OperatorSpec& spec, const AuditSymbols& sym,
                              const SamplePoint& x) {
  std::span<const double> pt(x.data(), static_cast<std::size_t>(spec.d));
  const int d = spec.d;
  Eigen::VectorXd rhs(d);
  for (int j = 0; j < d; ++j) {
    double divq = 0.0;
    for (int i = 0; i < d; ++i)
      divq += sym.dq[static_cast<std::size_t>((i * d + i) * d + j)].eval(pt, spec.params);
    rhs(j) = divq - spec.b_at(j).eval(pt, spec.params);
  }
  return eval_Q(spec, x).ldlt().solve(rhs);
}

} // namespace detail

inline SymmetrizingReport check_symmetrizing(const OperatorSpec& spec, const Grid& grid,
                                             int trials = 400, unsigned seed = 902) {
  detail::AuditSymbols sym = detail::make_audit_symbols(spec);
  SymmetrizingReport rep;
  const int d = spec.d;

  // (i) gradient condition. Exact in one dimension; otherwise test symmetry of
  // the Jacobian of F by central differences at grid samples.
  if (d == 1) {
    rep.gradient_ok = true;
    rep.curl_residual = 0.0;
  } else {
    double worst = 0.0;
    const double h = 1e-5;
    for (std::size_t n = 0; n < grid.size(); n += std::max<std::size_t>(1, grid.size() / 64)) {
      SamplePoint x = grid.point(n);
      Eigen::MatrixXd JF(d, d);
      for (int j = 0; j < d; ++j) {
        SamplePoint xp = x, xm = x;
        xp[static_cast<std::size_t>(j)] += h;
        xm[static_cast<std::size_t>(j)] -= h;
        Eigen::VectorXd Fp = detail::eval_F(spec, sym, xp);
        Eigen::VectorXd Fm = detail::eval_F(spec, sym, xm);
        JF.col(j) = (Fp - Fm) / (2.0 * h);
      }
      worst = std::max(worst, (JF - JF.transpose()).cwiseAbs().maxCoeff());
    }
    rep.curl_residual = worst;
    rep.gradient_ok = worst <= 1e-6;
  }

  // (ii) integrability of e^{-Phi} via a doubling study. Phi is the line
  // integral of F from the grid center (any antiderivative works).
  auto weight_integral = [&](double halfwidth, int nodes) {
    if (d == 1) {
      // Cumulative trapezoid of F along the axis.
      double dx = 2.0 * halfwidth / (nodes - 1);
      SamplePoint x{grid.center, 0.0, 0.0};
      double f_prev = detail::eval_F(spec, sym, x)(0);
      // integrate to the right
      double right = 0.5 * std::exp(0.0);
      double phi_r = 0.0;
      for (int k = 1; k <= (nodes - 1) / 2; ++k) {
        SamplePoint xx{grid.center + k * dx, 0.0, 0.0};
        double f = detail::eval_F(spec, sym, xx)(0);
        phi_r += 0.5 * dx * (f_prev + f);
        f_prev = f;
        right += (k == (nodes - 1) / 2 ? 0.5 : 1.0) * std::exp(-phi_r);
      }
      double left = 0.5 * std::exp(0.0);
      double phi_l = 0.0;
      f_prev = detail::eval_F(spec, sym, x)(0);
      for (int k = 1; k <= (nodes - 1) / 2; ++k) {
        SamplePoint xx{grid.center - k * dx, 0.0, 0.0};
        double f = detail::eval_F(spec, sym, xx)(0);
        phi_l += 0.5 * dx * (-1.0) * (f_prev + f);
        f_prev = f;
        left += (k == (nodes - 1) / 2 ? 0.5 : 1.0) * std::exp(-phi_l);
      }
      return dx * (left + right);
    }
    // d >= 2: radial line integral Phi(x) = int_0^1 <F(c + t(x-c)), x-c> dt.
    int per_axis = d == 2 ? 65 : 21;
    double dx = 2.0 * halfwidth / (per_axis - 1);
    double total = 0.0;
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    const int tsteps = 32;
    for (;;) {
      SamplePoint x{grid.center, grid.center, grid.center};
      double w = 1.0;
      for (int a = 0; a < d; ++a) {
        x[static_cast<std::size_t>(a)] =
            grid.center - halfwidth + idx[static_cast<std::size_t>(a)] * dx;
        w *= (idx[static_cast<std::size_t>(a)] == 0 ||
              idx[static_cast<std::size_t>(a)] == per_axis - 1)
                 ? 0.5
                 : 1.0;
      }
      double phi = 0.0;
      for (int tk = 0; tk <= tsteps; ++tk) {
        double t = static_cast<double>(tk) / tsteps;
        SamplePoint xt{grid.center, grid.center, grid.center};
        for (int a = 0; a < d; ++a)
          xt[static_cast<std::size_t>(a)] =
              grid.center + t * (x[static_cast<std::size_t>(a)] - grid.center);
        Eigen::VectorXd F = detail::eval_F(spec, sym, xt);
        double dot = 0.0;
        for (int a = 0; a < d; ++a)
          dot += F(a) * (x[static_cast<std::size_t>(a)] - grid.center);
        phi += (tk == 0 || tk == tsteps ? 0.5 : 1.0) * dot / tsteps;
      }
      total += w * std::exp(-phi);
      int a = 0;
      while (a < d && ++idx[static_cast<std::size_t>(a)] == per_axis) {
        idx[static_cast<std::size_t>(a)] = 0;
        ++a;
      }
      if (a == d) break;
    }
    for (int a = 0; a < d; ++a) total *= dx;
    return total;
  };

  int base_nodes = d == 1 ? 2049 : 65;
  rep.integral_half = weight_integral(grid.L, base_nodes);
  rep.integral_full = weight_integral(2.0 * grid.L, 2 * base_nodes - 1);
  rep.tail_ratio = (rep.integral_full - rep.integral_half) / rep.integral_half;
  rep.integrable = rep.tail_ratio <= 0.05;

  // (iii) the quadratic-form inequality over random (x, xi, S) triples: fit
  // (k1, k2) on even-indexed draws, verify on odd-indexed ones.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  struct Triple {
    double lhs, a, b;
  };
  std::vector<Triple> draws;
  draws.reserve(static_cast<std::size_t>(trials));
  for (int t = 0; t < trials; ++t) {
    SamplePoint x{grid.center, grid.center, grid.center};
    for (int a = 0; a < d; ++a)
      x[static_cast<std::size_t>(a)] = grid.center + grid.L * unif(rng);
    std::span<const double> pt(x.data(), static_cast<std::size_t>(d));

    Eigen::VectorXd xi(d);
    for (int a = 0; a < d; ++a) xi(a) = unif(rng);
    Eigen::MatrixXd S(d, d);
    for (int a = 0; a < d; ++a)
      for (int b = a; b < d; ++b) S(a, b) = S(b, a) = unif(rng);

    Eigen::MatrixXd Q = detail::eval_Q(spec, x);
    Eigen::MatrixXd J(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        J(i, j) = sym.jac_b[static_cast<std::size_t>(i * d + j)].eval(pt, spec.params);

    // grad Tr(QS) and the Jacobian of x -> Q(x) xi, from the symbolic D_h q_ij.
    Eigen::VectorXd gradTr = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd GQxi = Eigen::MatrixXd::Zero(d, d);
    for (int h = 0; h < d; ++h)
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
          gradTr(h) += sym.dq[static_cast<std::size_t>((h * d + i) * d + j)].eval(pt, spec.params) *
                       S(j, i);
    for (int i = 0; i < d; ++i)
      for (int h = 0; h < d; ++h) {
        double acc = 0.0;
        for (int k = 0; k < d; ++k)
          acc += sym.dq[static_cast<std::size_t>((h * d + i) * d + k)].eval(pt, spec.params) *
                 xi(k);
        GQxi(i, h) = acc;
      }

    double term1 = (Q * J.transpose() * xi).dot(xi);
    double term2 = (Q * xi).dot(gradTr);
    double term3 = (GQxi * Q * S).trace();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q);
    Eigen::MatrixXd sqrtQ = es.operatorSqrt();
    double a_val = xi.dot(Q * xi);
    Eigen::MatrixXd M = sqrtQ * S * sqrtQ;
    double b_val = M.squaredNorm();

    draws.push_back({term1 + term2 - term3, a_val, b_val});
  }

  double best_k1 = std::numeric_limits<double>::infinity(), best_k2 = 0.5;
  for (int g = 1; g <= 19; ++g) {
    double k2 = 0.05 * g;
    double k1 = 0.0;
    for (std::size_t t = 0; t < draws.size(); t += 2)
      if (draws[t].a > 1e-12) k1 = std::max(k1, (draws[t].lhs - k2 * draws[t].b) / draws[t].a);
    if (k1 < best_k1) {
      best_k1 = k1;
      best_k2 = k2;
    }
  }
  rep.k1 = std::max(best_k1 * 1.0001 + 1e-9, 1e-9); // strictly positive with slack
  rep.k2 = best_k2;
  rep.worst_violation = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 1; t < draws.size(); t += 2)
    rep.worst_violation =
        std::max(rep.worst_violation, draws[t].lhs - rep.k1 * draws[t].a - rep.k2 * draws[t].b);
  rep.quadratic_ok = rep.worst_violation <= 1e-9;

  rep.pass = rep.gradient_ok && rep.integrable && rep.quadratic_ok;
  return rep;
}

// ---- Aggregate report --------------------------------------------------------

struct AuditReport {
  Attained lambda0;
  Attained xi;
  LyapunovResult lyapunov;
  std::vector<SigmaResult> sigma;    // one per requested p0
  GammaResult gamma;
  double gamma0 = 0.0;               // min{1 - 1/gamma, 1/p0} for the first p0
  double beta = 0.0;                 // m^2 d xi^2 / 4
  bool ellipticity_pass = false;
  bool sigma_all_pass = false;
  bool any_marginal = false;
  std::string samples_description;
  std::size_t sample_count = 0;
};

struct AuditOptions {
  Expr phi;                                          // Lyapunov candidate
  double gamma = 3.0;
  std::vector<double> p0{2.0};
  std::optional<std::pair<double, double>> lyapunov_constants;
  double far_factor = 10.0;
  int far_per_direction = 24;
};

inline AuditReport run_audit(const OperatorSpec& spec, const Grid& grid,
                             const AuditOptions& opts) {
  spec.validate();
  if (!opts.phi.valid()) throw std::invalid_argument("audit requires a Lyapunov candidate");
  if (opts.p0.empty()) throw std::invalid_argument("audit requires at least one p0");
  SampleSet samples = make_audit_samples(grid, opts.far_factor, opts.far_per_direction);

  AuditReport rep;
  rep.samples_description = samples.description;
  rep.sample_count = samples.points.size();

  auto [lam0, argmin] = check_ellipticity(spec, samples.points);
  rep.lambda0.value = lam0;
  rep.lambda0.at = argmin;
  rep.ellipticity_pass = lam0 > 0.0;

  rep.xi = compute_xi(spec, samples.points);
  rep.beta = 0.25 * spec.m * spec.m * spec.d * rep.xi.value * rep.xi.value;

  rep.lyapunov = check_lyapunov(spec, opts.phi, samples.points, opts.lyapunov_constants);
  rep.gamma = check_gamma_domination(spec, opts.phi, opts.gamma, samples.points);

  rep.sigma_all_pass = true;
  for (double p0 : opts.p0) {
    SigmaResult s = compute_sigma(spec, p0, samples.points, rep.xi.value);
    rep.sigma_all_pass = rep.sigma_all_pass && s.pass;
    rep.any_marginal = rep.any_marginal || s.marginal;
    rep.sigma.push_back(std::move(s));
  }
  rep.gamma0 = std::min(1.0 - 1.0 / opts.gamma, 1.0 / opts.p0.front());
  return rep;
}

} // namespace kolmo

#endif
