#ifndef KOLMO_GRID_HPP
#define KOLMO_GRID_HPP

// Uniform tensor grids on the cube [center-L, center+L]^d (d <= 3) and the
// second-order finite-difference stencils used both for matrix-free operator
// application and for sparse assembly. Boundary handling:
//   Neumann   - reflected ghost nodes; first and mixed derivatives vanish on
//               the relevant edge, pure second derivatives fold onto the
//               interior neighbour. Every emitted row keeps a zero weight sum.
//   Dirichlet - boundary rows are eliminated by the caller (the emitters are
//               only invoked on active rows); boundary data is pinned to zero.
//   Periodic  - wraparound indexing, spacing 2L/N instead of 2L/(N-1).

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace kolmo {

enum class BC { Neumann, Dirichlet, Periodic };

inline const char* to_string(BC bc) {
  switch (bc) {
    case BC::Neumann: return "neumann";
    case BC::Dirichlet: return "dirichlet";
    case BC::Periodic: return "periodic";
  }
  return "?";
}

struct Grid {
  int d = 1;
  int N = 9;          // nodes per axis
  double L = 1.0;     // half-width per axis
  BC bc = BC::Neumann;
  double center = 0.0;

  double dx() const { return bc == BC::Periodic ? 2.0 * L / N : 2.0 * L / (N - 1); }

  std::size_t size() const {
    std::size_t s = 1;
    for (int a = 0; a < d; ++a) s *= static_cast<std::size_t>(N);
    return s;
  }

  std::size_t stride(int axis) const {
    std::size_t s = 1;
    for (int a = 0; a < axis; ++a) s *= static_cast<std::size_t>(N);
    return s;
  }

  int axis_index(std::size_t n, int axis) const {
    return static_cast<int>((n / stride(axis)) % static_cast<std::size_t>(N));
  }

  // -1 left edge, +1 right edge, 0 otherwise (always 0 on periodic grids).
  int edge(std::size_t n, int axis) const {
    if (bc == BC::Periodic) return 0;
    int i = axis_index(n, axis);
    if (i == 0) return -1;
    if (i == N - 1) return +1;
    return 0;
  }

  bool on_boundary(std::size_t n) const {
    for (int a = 0; a < d; ++a)
      if (edge(n, a) != 0) return true;
    return false;
  }

  std::size_t neighbor(std::size_t n, int axis, int step) const {
    int i = axis_index(n, axis);
    int j = i + step;
    if (bc == BC::Periodic) j = (j % N + N) % N;
    return n + static_cast<std::size_t>(j - i) * stride(axis);
  }

  std::array<double, 3> point(std::size_t n) const {
    std::array<double, 3> x{0.0, 0.0, 0.0};
    for (int a = 0; a < d; ++a)
      x[static_cast<std::size_t>(a)] = center - L + axis_index(n, a) * dx();
    return x;
  }

  // Trapezoid weight times dx^d (uniform on periodic grids, where the rule is
  // exact for periodic integrands).
  double quad_weight(std::size_t n) const {
    double w = 1.0;
    for (int a = 0; a < d; ++a) {
      w *= dx();
      if (bc != BC::Periodic && edge(n, a) != 0) w *= 0.5;
    }
    return w;
  }

  int interior_per_axis() const { return bc == BC::Periodic ? N : N - 2; }

  void require_stencil_support() const {
    if (d < 1 || d > 3) throw std::invalid_argument("grid dimension must be 1..3");
    if (interior_per_axis() < 5)
      throw std::invalid_argument("grid too coarse: need at least 5 interior nodes per axis, have " +
                                  std::to_string(interior_per_axis()));
  }
};

// ---- Stencil emitters -------------------------------------------------------
// Each emitter reports a row of the named derivative at node n as
// (column, weight) pairs via emit(std::size_t, double). Callers must not invoke
// them on eliminated rows (Dirichlet boundary nodes). All rows have zero weight
// sum, so constants are annihilated exactly and, after transposition, total
// mass is conserved.

template <class F>
inline void d1_stencil(const Grid& g, std::size_t n, int axis, F&& emit) {
  const double c = 1.0 / (2.0 * g.dx());
  if (g.edge(n, axis) != 0) return; // Neumann edge: reflected ghost gives 0
  emit(g.neighbor(n, axis, +1), c);
  emit(g.neighbor(n, axis, -1), -c);
}

// First-order one-sided difference on the side the drift points to; used by the
// assembler when the cell Peclet number exceeds 1. drift > 0 differences
// forward, drift < 0 backward, so the off-diagonal convection weight is always
// nonnegative.
template <class F>
inline void d1_upwind_stencil(const Grid& g, std::size_t n, int axis, double drift, F&& emit) {
  const double c = 1.0 / g.dx();
  int e = g.edge(n, axis);
  if (drift > 0.0) {
    if (e == +1) return; // Neumann edge: derivative vanishes
    emit(g.neighbor(n, axis, +1), c);
    emit(n, -c);
  } else if (drift < 0.0) {
    if (e == -1) return;
    emit(n, c);
    emit(g.neighbor(n, axis, -1), -c);
  }
}

template <class F>
inline void d2_stencil(const Grid& g, std::size_t n, int axis, F&& emit) {
  const double c = 1.0 / (g.dx() * g.dx());
  int e = g.edge(n, axis);
  if (e == 0) {
    emit(g.neighbor(n, axis, +1), c);
    emit(n, -2.0 * c);
    emit(g.neighbor(n, axis, -1), c);
  } else {
    // Reflected ghost: u(ghost) = u(inner neighbour).
    emit(g.neighbor(n, axis, e == -1 ? +1 : -1), 2.0 * c);
    emit(n, -2.0 * c);
  }
}

// Mixed second derivative via the 4-point cross; vanishes on Neumann edges
// because the reflected ghosts cancel pairwise.
template <class F>
inline void dmixed_stencil(const Grid& g, std::size_t n, int a1, int a2, F&& emit) {
  if (g.edge(n, a1) != 0 || g.edge(n, a2) != 0) return;
  const double c = 1.0 / (4.0 * g.dx() * g.dx());
  std::size_t pp = g.neighbor(g.neighbor(n, a1, +1), a2, +1);
  std::size_t pm = g.neighbor(g.neighbor(n, a1, +1), a2, -1);
  std::size_t mp = g.neighbor(g.neighbor(n, a1, -1), a2, +1);
  std::size_t mm = g.neighbor(g.neighbor(n, a1, -1), a2, -1);
  emit(pp, c);
  emit(pm, -c);
  emit(mp, -c);
  emit(mm, c);
}

} // namespace kolmo

#endif
