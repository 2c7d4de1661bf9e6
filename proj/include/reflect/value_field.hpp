#pragma once

#include <utility>
#include <vector>

#include "reflect/grid.hpp"

namespace reflect {

// Converged value function on a grid together with the difference-quotient
// derivative fields downstream consumers need (region extraction, games,
// simulation audits). Derivative fields are always rebuilt from V with the
// shared stencils so every consumer sees the same discrete derivatives.
struct ValueField {
  Grid2D grid;
  ScalarField V, Vx1, Vx2, Vx1x1, Vx2x2, Vx1x2;
  double eps_final = 0.0;      // last penalty level used to produce V (0 = exact)
  double newton_residual = 0.0;
  int iterations = 0;

  static ValueField from_values(const Grid2D& g, std::vector<double> values,
                                double eps_final = 0.0) {
    ValueField f;
    f.grid = g;
    f.V = ScalarField(g);
    f.V.a = std::move(values);
    f.eps_final = eps_final;
    f.rebuild_derivatives();
    return f;
  }

  void rebuild_derivatives() {
    Vx1 = d1(V);
    Vx2 = d2(V);
    Vx1x1 = d11(V);
    Vx2x2 = d22(V);
    Vx1x2 = d2(Vx1);
  }

  // Smallest raw second difference along either axis over the whole grid;
  // a convex field keeps this above a small negative tolerance.
  double min_second_difference() const {
    const Grid2D& g = grid;
    double m = 0.0;
    bool first = true;
    for (int j = 0; j < g.n2; ++j)
      for (int i = 1; i < g.n1 - 1; ++i) {
        double s = V(i + 1, j) - 2.0 * V(i, j) + V(i - 1, j);
        if (first || s < m) m = s, first = false;
      }
    for (int i = 0; i < g.n1; ++i)
      for (int j = 1; j < g.n2 - 1; ++j) {
        double s = V(i, j + 1) - 2.0 * V(i, j) + V(i, j - 1);
        if (s < m) m = s;
      }
    return m;
  }
};

// Sup over nodes at least `margin` cells away from every box face.
inline double sup_interior(const ScalarField& f, int margin = 2) {
  const Grid2D& g = f.grid;
  double m = 0.0;
  for (int j = margin; j < g.n2 - margin; ++j)
    for (int i = margin; i < g.n1 - margin; ++i) m = std::max(m, std::abs(f(i, j)));
  return m;
}

}  // namespace reflect
