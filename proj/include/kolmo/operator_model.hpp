#ifndef KOLMO_OPERATOR_MODEL_HPP
#define KOLMO_OPERATOR_MODEL_HPP

// Weakly coupled elliptic systems
//   (A u)_j = sum_{h,k} q_{hk} D_{hk} u_j + sum_k b_k D_k u_j
//             + sum_k sum_i (B_k)_{ji} D_k u_i
// together with their scalar part (B dropped) and the formal adjoint
//   (A* v)_i = sum_{h,k} D_{hk}(q_{hk} v_i) - sum_k D_k(b_k v_i)
//              - sum_k D_k( sum_j (B_k)_{ji} v_j ),
// which drives the forward (kernel/measure) evolution. Coefficients are
// expression trees; their derivatives are taken symbolically, the fields are
// differenced on the grid (second-order central stencils).

#include <kolmo/expr.hpp>
#include <kolmo/grid.hpp>

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kolmo {

struct OperatorSpec {
  int d = 1;
  int m = 1;
  std::vector<Expr> q;                // d*d, row-major, symmetric
  std::vector<Expr> b;                // d
  std::vector<std::vector<Expr>> B;   // d matrices, each m*m row-major
  Params params;

  const Expr& q_at(int h, int k) const { return q[static_cast<std::size_t>(h * d + k)]; }
  const Expr& b_at(int k) const { return b[static_cast<std::size_t>(k)]; }
  // (B_k)_{ji}: row j, column i of the k-th coupling matrix.
  const Expr& B_at(int k, int j, int i) const {
    return B[static_cast<std::size_t>(k)][static_cast<std::size_t>(j * m + i)];
  }

  bool has_coupling() const {
    for (const auto& mat : B)
      for (const auto& e : mat)
        if (!e.is_constant(0.0)) return true;
    return false;
  }

  void validate() const {
    if (d < 1 || d > 3) throw std::invalid_argument("operator dimension d must be 1..3");
    if (m < 1) throw std::invalid_argument("system size m must be >= 1");
    if (q.size() != static_cast<std::size_t>(d * d))
      throw std::invalid_argument("q must hold d*d entries");
    if (b.size() != static_cast<std::size_t>(d))
      throw std::invalid_argument("b must hold d entries");
    if (B.size() != static_cast<std::size_t>(d))
      throw std::invalid_argument("B must hold one m*m matrix per axis");
    for (const auto& mat : B)
      if (mat.size() != static_cast<std::size_t>(m * m))
        throw std::invalid_argument("each B_k must be m*m");
    for (int h = 0; h < d; ++h)
      for (int k = h + 1; k < d; ++k)
        if (!structurally_equal(q_at(h, k), q_at(k, h)))
          throw std::invalid_argument("q must be structurally symmetric: q[" +
                                      std::to_string(h) + "][" + std::to_string(k) +
                                      "] != q[" + std::to_string(k) + "][" + std::to_string(h) + "]");
    auto check = [&](const Expr& e, const char* what) {
      if (e.dimension() > d)
        throw std::invalid_argument(std::string(what) + " references x" +
                                    std::to_string(e.dimension()) + " but d=" + std::to_string(d));
      std::map<std::string, int> names;
      e.parameters(names);
      for (const auto& [name, cnt] : names)
        if (!params.count(name))
          throw std::invalid_argument(std::string(what) + " references undeclared parameter '" +
                                      name + "'");
    };
    for (const auto& e : q) check(e, "q entry");
    for (const auto& e : b) check(e, "b entry");
    for (const auto& mat : B)
      for (const auto& e : mat) check(e, "B entry");
  }
};

struct VectorField {
  Grid grid;
  std::vector<std::vector<double>> comp; // m components over grid nodes

  static VectorField zeros(const Grid& g, int m) {
    VectorField f;
    f.grid = g;
    f.comp.assign(static_cast<std::size_t>(m), std::vector<double>(g.size(), 0.0));
    return f;
  }
  int components() const { return static_cast<int>(comp.size()); }
};

inline VectorField sample_vector_field(const Grid& g, const std::vector<Expr>& f,
                                       const Params& params = {}) {
  VectorField out = VectorField::zeros(g, static_cast<int>(f.size()));
  for (std::size_t j = 0; j < f.size(); ++j)
    for (std::size_t n = 0; n < g.size(); ++n) {
      auto x = g.point(n);
      std::span<const double> pt(x.data(), static_cast<std::size_t>(g.d));
      out.comp[j][n] = f[j].eval(pt, params);
    }
  return out;
}

// Diagonal scalar part: same diffusion and drift, coupling dropped.
inline OperatorSpec scalar_part(const OperatorSpec& spec) {
  OperatorSpec s = spec;
  s.m = 1;
  s.B.assign(static_cast<std::size_t>(spec.d), {Expr::constant(0.0)});
  return s;
}

namespace detail {

inline void check_field(const OperatorSpec& spec, const VectorField& u, int expected_m) {
  u.grid.require_stencil_support();
  if (spec.d != u.grid.d) throw std::invalid_argument("operator and grid dimension differ");
  if (u.components() != expected_m)
    throw std::invalid_argument("field has " + std::to_string(u.components()) +
                                " components, expected " + std::to_string(expected_m));
  for (const auto& c : u.comp)
    if (c.size() != u.grid.size())
      throw std::invalid_argument("field component length does not match the grid");
}

inline double gather_d1(const Grid& g, std::span<const double> w, std::size_t n, int a) {
  double acc = 0.0;
  d1_stencil(g, n, a, [&](std::size_t col, double wt) { acc += wt * w[col]; });
  return acc;
}
inline double gather_d2(const Grid& g, std::span<const double> w, std::size_t n, int a) {
  double acc = 0.0;
  d2_stencil(g, n, a, [&](std::size_t col, double wt) { acc += wt * w[col]; });
  return acc;
}
inline double gather_dm(const Grid& g, std::span<const double> w, std::size_t n, int a1, int a2) {
  double acc = 0.0;
  dmixed_stencil(g, n, a1, a2, [&](std::size_t col, double wt) { acc += wt * w[col]; });
  return acc;
}

} // namespace detail

// Pointwise tables of the coefficients over a grid; shared by operator
// application, sparse assembly and the hypothesis audits.
struct CoeffTables {
  int d = 1, m = 1;
  std::vector<double> q; // node-major, then h*d+k
  std::vector<double> b; // node-major, then k
  std::vector<double> B; // node-major, then k*m*m + j*m + i

  double q_at(std::size_t n, int h, int k) const {
    return q[n * static_cast<std::size_t>(d * d) + static_cast<std::size_t>(h * d + k)];
  }
  double b_at(std::size_t n, int k) const {
    return b[n * static_cast<std::size_t>(d) + static_cast<std::size_t>(k)];
  }
  double B_at(std::size_t n, int k, int j, int i) const {
    return B[n * static_cast<std::size_t>(d * m * m) +
             static_cast<std::size_t>((k * m + j) * m + i)];
  }
};

inline CoeffTables tabulate_coefficients(const OperatorSpec& spec, const Grid& g) {
  CoeffTables t;
  t.d = spec.d;
  t.m = spec.m;
  const std::size_t sz = g.size();
  t.q.resize(sz * static_cast<std::size_t>(spec.d * spec.d));
  t.b.resize(sz * static_cast<std::size_t>(spec.d));
  t.B.resize(sz * static_cast<std::size_t>(spec.d * spec.m * spec.m));
  for (std::size_t n = 0; n < sz; ++n) {
    auto x = g.point(n);
    std::span<const double> pt(x.data(), static_cast<std::size_t>(g.d));
    for (int h = 0; h < spec.d; ++h)
      for (int k = 0; k < spec.d; ++k)
        t.q[n * static_cast<std::size_t>(spec.d * spec.d) +
            static_cast<std::size_t>(h * spec.d + k)] = spec.q_at(h, k).eval(pt, spec.params);
    for (int k = 0; k < spec.d; ++k)
      t.b[n * static_cast<std::size_t>(spec.d) + static_cast<std::size_t>(k)] =
          spec.b_at(k).eval(pt, spec.params);
    for (int k = 0; k < spec.d; ++k)
      for (int j = 0; j < spec.m; ++j)
        for (int i = 0; i < spec.m; ++i)
          t.B[n * static_cast<std::size_t>(spec.d * spec.m * spec.m) +
              static_cast<std::size_t>((k * spec.m + j) * spec.m + i)] =
              spec.B_at(k, j, i).eval(pt, spec.params);
  }
  return t;
}

// Cell Peclet numbers dx*|b_k| / (2 q_kk), maximized over axes per node. Values
// above 1 mark nodes where centered convection loses monotonicity and the
// assembler switches to upwind differencing.
inline std::vector<double> peclet_numbers(const OperatorSpec& spec, const Grid& g) {
  std::vector<double> pe(g.size(), 0.0);
  const double h = g.dx();
  for (std::size_t n = 0; n < g.size(); ++n) {
    auto x = g.point(n);
    std::span<const double> pt(x.data(), static_cast<std::size_t>(g.d));
    double worst = 0.0;
    for (int k = 0; k < spec.d; ++k) {
      double qkk = spec.q_at(k, k).eval(pt, spec.params);
      double bk = spec.b_at(k).eval(pt, spec.params);
      if (qkk <= 0.0) throw std::domain_error("q_kk must be positive on the grid");
      worst = std::max(worst, h * std::abs(bk) / (2.0 * qkk));
    }
    pe[n] = worst;
  }
  return pe;
}

inline VectorField apply_vector_operator(const OperatorSpec& spec, const VectorField& u) {
  detail::check_field(spec, u, spec.m);
  const Grid& g = u.grid;
  CoeffTables t = tabulate_coefficients(spec, g);
  VectorField out = VectorField::zeros(g, spec.m);
  const bool coupled = spec.has_coupling();
  for (std::size_t n = 0; n < g.size(); ++n) {
    if (g.bc == BC::Dirichlet && g.on_boundary(n)) continue; // eliminated row
    for (int j = 0; j < spec.m; ++j) {
      std::span<const double> w(u.comp[static_cast<std::size_t>(j)]);
      double acc = 0.0;
      for (int h = 0; h < spec.d; ++h) {
        acc += t.q_at(n, h, h) * detail::gather_d2(g, w, n, h);
        for (int k = h + 1; k < spec.d; ++k)
          acc += 2.0 * t.q_at(n, h, k) * detail::gather_dm(g, w, n, h, k);
      }
      for (int k = 0; k < spec.d; ++k) {
        double bk = t.b_at(n, k);
        if (bk != 0.0) acc += bk * detail::gather_d1(g, w, n, k);
        if (coupled)
          for (int i = 0; i < spec.m; ++i) {
            double Bji = t.B_at(n, k, j, i);
            if (Bji != 0.0)
              acc += Bji * detail::gather_d1(g, std::span<const double>(
                                                    u.comp[static_cast<std::size_t>(i)]),
                                             n, k);
          }
      }
      out.comp[static_cast<std::size_t>(j)][n] = acc;
    }
  }
  return out;
}

inline std::vector<double> apply_scalar_operator(const OperatorSpec& spec,
                                                 const Grid& g,
                                                 std::span<const double> u) {
  VectorField f;
  f.grid = g;
  f.comp.assign(1, std::vector<double>(u.begin(), u.end()));
  OperatorSpec scalar = spec;
  scalar.m = 1;
  scalar.B.assign(static_cast<std::size_t>(spec.d), {Expr::constant(0.0)});
  return apply_vector_operator(scalar, f).comp[0];
}

// Symbolic expansion of the adjoint. The field derivatives are differenced on
// the grid; all coefficient derivatives are exact.
struct AdjointCoeffs {
  // (A* v)_i = sum_{hk} q_{hk} D_{hk} v_i + sum_k a1_k D_k v_i + c0 v_i
  //            - sum_k sum_j (B_k)_{ji} D_k v_j - sum_k sum_j dB_{k,ji} v_j
  std::vector<Expr> a1;  // d entries: 2 (div Q)_k - b_k
  Expr c0;               // sum_{hk} D_{hk} q_{hk} - div b
  std::vector<std::vector<Expr>> dB; // d matrices: D_k (B_k)_{ji}
};

inline AdjointCoeffs adjoint_coefficients(const OperatorSpec& spec) {
  AdjointCoeffs ac;
  ac.a1.reserve(static_cast<std::size_t>(spec.d));
  for (int k = 0; k < spec.d; ++k) {
    Expr divQ_k = Expr::constant(0.0);
    for (int h = 0; h < spec.d; ++h) divQ_k = divQ_k + spec.q_at(h, k).diff(h);
    ac.a1.push_back(Expr::constant(2.0) * divQ_k - spec.b_at(k));
  }
  Expr c0 = Expr::constant(0.0);
  for (int h = 0; h < spec.d; ++h)
    for (int k = 0; k < spec.d; ++k) c0 = c0 + spec.q_at(h, k).diff(k).diff(h);
  for (int k = 0; k < spec.d; ++k) c0 = c0 - spec.b_at(k).diff(k);
  ac.c0 = c0;
  ac.dB.resize(static_cast<std::size_t>(spec.d));
  for (int k = 0; k < spec.d; ++k) {
    auto& mat = ac.dB[static_cast<std::size_t>(k)];
    mat.reserve(static_cast<std::size_t>(spec.m * spec.m));
    for (int j = 0; j < spec.m; ++j)
      for (int i = 0; i < spec.m; ++i) mat.push_back(spec.B_at(k, j, i).diff(k));
  }
  return ac;
}

inline VectorField apply_formal_adjoint(const OperatorSpec& spec, const VectorField& v) {
  detail::check_field(spec, v, spec.m);
  const Grid& g = v.grid;
  CoeffTables t = tabulate_coefficients(spec, g);
  AdjointCoeffs ac = adjoint_coefficients(spec);
  VectorField out = VectorField::zeros(g, spec.m);
  for (std::size_t n = 0; n < g.size(); ++n) {
    if (g.bc == BC::Dirichlet && g.on_boundary(n)) continue;
    auto xp = g.point(n);
    std::span<const double> pt(xp.data(), static_cast<std::size_t>(g.d));
    double c0 = ac.c0.eval(pt, spec.params);
    for (int i = 0; i < spec.m; ++i) {
      std::span<const double> w(v.comp[static_cast<std::size_t>(i)]);
      double acc = c0 * w[n];
      for (int h = 0; h < spec.d; ++h) {
        acc += t.q_at(n, h, h) * detail::gather_d2(g, w, n, h);
        for (int k = h + 1; k < spec.d; ++k)
          acc += 2.0 * t.q_at(n, h, k) * detail::gather_dm(g, w, n, h, k);
      }
      for (int k = 0; k < spec.d; ++k) {
        double a1 = ac.a1[static_cast<std::size_t>(k)].eval(pt, spec.params);
        if (a1 != 0.0) acc += a1 * detail::gather_d1(g, w, n, k);
        for (int j = 0; j < spec.m; ++j) {
          double Bji = t.B_at(n, k, j, i);
          std::span<const double> wj(v.comp[static_cast<std::size_t>(j)]);
          if (Bji != 0.0) acc -= Bji * detail::gather_d1(g, wj, n, k);
          double dB = ac.dB[static_cast<std::size_t>(k)][static_cast<std::size_t>(j * spec.m + i)]
                          .eval(pt, spec.params);
          if (dB != 0.0) acc -= dB * wj[n];
        }
      }
      out.comp[static_cast<std::size_t>(i)][n] = acc;
    }
  }
  return out;
}

} // namespace kolmo

#endif
