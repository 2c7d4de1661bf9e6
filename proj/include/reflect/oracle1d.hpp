#pragma once

#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "reflect/model.hpp"
#include "reflect/value_field.hpp"

namespace reflect {

struct OracleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NotSeparableError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// One-dimensional reference solutions on dense grids. These are independent
// of the 2D machinery: the controlled problem is solved through the
// double-obstacle problem satisfied by V', with V recovered algebraically,
// so agreement with the 2D solver is a genuine cross-check.
// ---------------------------------------------------------------------------

struct Oracle1DControlled {
  std::vector<double> x, V, Vp, Vpp;
  std::vector<int> state;  // 0 free, -1 at lower gradient bound, +1 at upper
  double left_boundary = 0.0, right_boundary = 0.0;
  int sweeps = 0;
};

namespace o1d {

inline void thomas_solve(std::vector<double>& lo, std::vector<double>& di,
                         std::vector<double>& up, std::vector<double>& rhs,
                         std::vector<double>& out) {
  const int n = static_cast<int>(di.size());
  for (int i = 1; i < n; ++i) {
    double w = lo[i] / di[i - 1];
    di[i] -= w * up[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  out.resize(n);
  out[n - 1] = rhs[n - 1] / di[n - 1];
  for (int i = n - 2; i >= 0; --i) out[i] = (rhs[i] - up[i] * out[i + 1]) / di[i];
}

}  // namespace o1d

// Controls act additively on a scalar diffusion dX = (a1+b11*X)dt + sbar(X)dW
// at marginal costs kappa_plus (up) and kappa_minus (down); the discounted
// running cost is h1. V' solves a double-obstacle problem on
// [-kappa_plus, kappa_minus], handled by active-set policy iteration.
inline Oracle1DControlled solve_1d_controlled(double a1, double b11, SigmaKind sigma_kind,
                                              double sigma, double rho, const Curve1D& h1,
                                              double kappa_plus, double kappa_minus,
                                              double x_min, double x_max, int n) {
  if (n < 257) throw OracleError("1d oracle grid too coarse (need n >= 257)");
  if (sigma_kind == SigmaKind::Degenerate)
    throw OracleError("1d controlled oracle needs a nondegenerate diffusion");
  if (sigma_kind == SigmaKind::Linear && x_min <= 0.0)
    throw OracleError("linear volatility oracle needs x_min > 0");
  if (!(rho - b11 > 0.0)) throw OracleError("need rho - b11 > 0");

  Oracle1DControlled out;
  const double h = (x_max - x_min) / (n - 1);
  out.x.resize(n);
  for (int i = 0; i < n; ++i) out.x[i] = x_min + i * h;

  // Coefficients of the derivative equation
  //   (rho - b11) u - (b + Sig'/2) u' - Sig/2 u'' = h1'
  auto Sig = [&](double x) {
    return sigma_kind == SigmaKind::Constant ? sigma * sigma : sigma * sigma * x * x;
  };
  auto ceff = [&](double x) {
    return (a1 + b11 * x) + (sigma_kind == SigmaKind::Constant ? 0.0 : sigma * sigma * x);
  };
  const double rho_hat = rho - b11;

  // -1 lower clamp, +1 upper clamp, 0 free. Ends stay clamped (gradient
  // saturates in the far field).
  std::vector<int> st(n, 0);
  st[0] = -1;
  st[n - 1] = +1;
  std::vector<double> u(n, 0.0);

  std::vector<double> lo(n), di(n), up(n), rhs(n);
  std::vector<double> alo(n), adi(n), aup(n), arhs(n);
  auto assemble_row = [&](int i, double& l, double& d, double& r, double& b) {
    double x = out.x[i];
    double s = 0.5 * Sig(x);
    double c = ceff(x);
    l = -s / (h * h);
    r = -s / (h * h);
    d = rho_hat + 2.0 * s / (h * h);
    if (std::abs(c) * h <= 2.0 * s) {
      l += c / (2.0 * h);
      r += -c / (2.0 * h);
    } else if (c > 0.0) {
      r += -c / h;
      d += c / h;
    } else {
      l += c / h;
      d += -c / h;
    }
    b = h1.d(x);
  };
  for (int i = 1; i < n - 1; ++i) assemble_row(i, alo[i], adi[i], aup[i], arhs[i]);

  const double scale = std::max(1.0, std::abs(h1.d(x_min))) + std::abs(h1.d(x_max));
  bool changed = true;
  int sweep = 0;
  for (; sweep < 300 && changed; ++sweep) {
    for (int i = 0; i < n; ++i) {
      if (st[i] != 0) {
        lo[i] = 0.0;
        di[i] = 1.0;
        up[i] = 0.0;
        rhs[i] = st[i] < 0 ? -kappa_plus : kappa_minus;
      } else {
        lo[i] = alo[i];
        di[i] = adi[i];
        up[i] = aup[i];
        rhs[i] = arhs[i];
      }
    }
    std::vector<double> l2 = lo, d2v = di, u2 = up, r2 = rhs;
    o1d::thomas_solve(l2, d2v, u2, r2, u);

    changed = false;
    for (int i = 1; i < n - 1; ++i) {
      if (st[i] == 0) {
        if (u[i] < -kappa_plus) {
          st[i] = -1;
          changed = true;
        } else if (u[i] > kappa_minus) {
          st[i] = +1;
          changed = true;
        }
      } else {
        // Residual of the free equation at a clamped node decides release:
        // the lower clamp needs residual >= 0, the upper needs <= 0.
        double res = alo[i] * u[i - 1] + adi[i] * u[i] + aup[i] * u[i + 1] - arhs[i];
        if (st[i] < 0 && res < -1e-12 * scale) {
          st[i] = 0;
          changed = true;
        } else if (st[i] > 0 && res > 1e-12 * scale) {
          st[i] = 0;
          changed = true;
        }
      }
    }
  }
  if (changed) throw OracleError("1d active-set iteration did not settle");
  out.sweeps = sweep;
  for (int i = 0; i < n; ++i)
    if (st[i] != 0) u[i] = st[i] < 0 ? -kappa_plus : kappa_minus;

  int l_idx = -1, r_idx = -1;
  for (int i = 0; i < n; ++i)
    if (st[i] == 0) {
      if (l_idx < 0) l_idx = i;
      r_idx = i;
    }
  if (l_idx < 0) throw OracleError("waiting interval is empty on the oracle grid");
  for (int i = l_idx; i <= r_idx; ++i)
    if (st[i] != 0) throw OracleError("free set is not an interval");
  out.left_boundary = out.x[std::max(0, l_idx - 1)];
  out.right_boundary = out.x[std::min(n - 1, r_idx + 1)];

  // du/dx, then V from the equation inside the free band and linear
  // extension with saturated slope outside it.
  std::vector<double> upr(n);
  upr[0] = (u[1] - u[0]) / h;
  for (int i = 1; i < n - 1; ++i) upr[i] = (u[i + 1] - u[i - 1]) / (2.0 * h);
  upr[n - 1] = (u[n - 1] - u[n - 2]) / h;

  out.V.assign(n, 0.0);
  for (int i = l_idx; i <= r_idx; ++i) {
    double x = out.x[i];
    out.V[i] = (h1.eval(x) + (a1 + b11 * x) * u[i] + 0.5 * Sig(x) * upr[i]) / rho;
  }
  for (int i = l_idx - 1; i >= 0; --i) out.V[i] = out.V[l_idx] + kappa_plus * (out.x[l_idx] - out.x[i]);
  for (int i = r_idx + 1; i < n; ++i) out.V[i] = out.V[r_idx] + kappa_minus * (out.x[i] - out.x[r_idx]);

  out.Vp = std::move(u);
  out.Vpp = std::move(upr);
  // Outside the free band V is exactly linear.
  for (int i = 0; i < l_idx - 1; ++i) out.Vpp[i] = 0.0;
  for (int i = r_idx + 2; i < n; ++i) out.Vpp[i] = 0.0;
  out.state = std::move(st);
  return out;
}

struct Oracle1DUncontrolled {
  std::vector<double> x, V, Vp, Vpp;
};

// rho W - (a + b*y) W' - sbar(y)^2/2 W'' = h2(y) with quadratic-extension
// (vanishing third difference) far-field closures.
inline Oracle1DUncontrolled solve_1d_uncontrolled(double a, double b, SigmaKind sigma_kind,
                                                  double sigma, double rho, const Curve1D& h2,
                                                  double y_min, double y_max, int n) {
  if (n < 257) throw OracleError("1d oracle grid too coarse (need n >= 257)");
  if (sigma_kind == SigmaKind::Linear && y_min <= 0.0)
    throw OracleError("linear volatility oracle needs y_min > 0");
  Oracle1DUncontrolled out;
  const double h = (y_max - y_min) / (n - 1);
  out.x.resize(n);
  for (int i = 0; i < n; ++i) out.x[i] = y_min + i * h;

  auto Sig = [&](double y) {
    switch (sigma_kind) {
      case SigmaKind::Constant: return sigma * sigma;
      case SigmaKind::Linear: return sigma * sigma * y * y;
      case SigmaKind::Degenerate: return sigma * sigma;  // x2 row keeps its noise
    }
    return 0.0;
  };

  using T = Eigen::Triplet<double>;
  std::vector<T> trip;
  Eigen::VectorXd rhs(n);
  trip.reserve(4 * n);
  for (int i = 0; i < n; ++i) {
    if (i == 0) {
      trip.emplace_back(0, 0, 1.0);
      trip.emplace_back(0, 1, -3.0);
      trip.emplace_back(0, 2, 3.0);
      trip.emplace_back(0, 3, -1.0);
      rhs(0) = 0.0;
      continue;
    }
    if (i == n - 1) {
      trip.emplace_back(i, i, 1.0);
      trip.emplace_back(i, i - 1, -3.0);
      trip.emplace_back(i, i - 2, 3.0);
      trip.emplace_back(i, i - 3, -1.0);
      rhs(i) = 0.0;
      continue;
    }
    double y = out.x[i];
    double s = 0.5 * Sig(y);
    double c = a + b * y;
    double l = -s / (h * h), r = -s / (h * h), d = rho + 2.0 * s / (h * h);
    if (std::abs(c) * h <= 2.0 * s) {
      l += c / (2.0 * h);
      r += -c / (2.0 * h);
    } else if (c > 0.0) {
      r += -c / h;
      d += c / h;
    } else {
      l += c / h;
      d += -c / h;
    }
    trip.emplace_back(i, i - 1, l);
    trip.emplace_back(i, i, d);
    trip.emplace_back(i, i + 1, r);
    rhs(i) = h2.eval(y);
  }
  Eigen::SparseMatrix<double> A(n, n);
  A.setFromTriplets(trip.begin(), trip.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(A);
  if (lu.info() != Eigen::Success) throw OracleError("1d uncontrolled solve failed");
  Eigen::VectorXd w = lu.solve(rhs);

  out.V.assign(w.data(), w.data() + n);
  out.Vp.resize(n);
  out.Vpp.resize(n);
  out.Vp[0] = (-3.0 * out.V[0] + 4.0 * out.V[1] - out.V[2]) / (2.0 * h);
  out.Vpp[0] = (2.0 * out.V[0] - 5.0 * out.V[1] + 4.0 * out.V[2] - out.V[3]) / (h * h);
  for (int i = 1; i < n - 1; ++i) {
    out.Vp[i] = (out.V[i + 1] - out.V[i - 1]) / (2.0 * h);
    out.Vpp[i] = (out.V[i + 1] - 2.0 * out.V[i] + out.V[i - 1]) / (h * h);
  }
  out.Vp[n - 1] = (3.0 * out.V[n - 1] - 4.0 * out.V[n - 2] + out.V[n - 3]) / (2.0 * h);
  out.Vpp[n - 1] =
      (2.0 * out.V[n - 1] - 5.0 * out.V[n - 2] + 4.0 * out.V[n - 3] - out.V[n - 4]) / (h * h);
  return out;
}

struct ComposedSeparable {
  ValueField field;
  Oracle1DControlled controlled;
  Oracle1DUncontrolled uncontrolled;
};

namespace o1d {

// The x1 cost component as a curve, when the problem separates.
inline Curve1D separable_h1(const ProblemSpec& s) {
  Curve1D k;
  switch (s.cost.kind) {
    case CostKind::SumSquares:
      k.c0 = 0.0; k.c1 = 0.0; k.c2 = 1.0;
      return k;
    case CostKind::TargetPlusConvex:
      k.c0 = s.cost.x1_target * s.cost.x1_target;
      k.c1 = -2.0 * s.cost.x1_target;
      k.c2 = 1.0;
      return k;
    case CostKind::Separable: return s.cost.h1;
    default: throw NotSeparableError("cost does not separate across coordinates");
  }
}

inline Curve1D separable_h2(const ProblemSpec& s) {
  Curve1D k;
  switch (s.cost.kind) {
    case CostKind::SumSquares:
      k.c0 = 0.0; k.c1 = 0.0; k.c2 = 1.0;
      return k;
    case CostKind::TargetPlusConvex: return s.cost.f2;
    case CostKind::Separable: return s.cost.h2;
    default: throw NotSeparableError("cost does not separate across coordinates");
  }
}

}  // namespace o1d

// Solves the two 1D problems on refined grids aligned with `g` and assembles
// V(x1,x2) = V1(x1) + V2(x2) with the standard derivative fields. Requires a
// spec with no cross-coordinate coupling.
inline ComposedSeparable compose_separable(const ProblemSpec& s, const Grid2D& g,
                                           int refine = 16) {
  if (!s.drift2.affine || s.drift2.b12 != 0.0)
    throw NotSeparableError("drift couples x1 into x2");
  if (s.sigma_kind == SigmaKind::Degenerate)
    throw NotSeparableError("degenerate dynamics never separate");
  if (s.mode != ControlMode::BoundedVariation)
    throw NotSeparableError("separable oracle covers the two-sided control mode only");
  Curve1D h1 = o1d::separable_h1(s);
  Curve1D h2 = o1d::separable_h2(s);

  const int n1o = refine * (g.n1 - 1) + 1;
  const int n2o = refine * (g.n2 - 1) + 1;
  ComposedSeparable out;
  out.controlled = solve_1d_controlled(s.a1, s.b11, s.sigma_kind, s.sigma, s.rho, h1,
                                       s.kappa_plus, s.kappa_minus, g.x1_min, g.x1_max, n1o);
  out.uncontrolled = solve_1d_uncontrolled(s.drift2.a2, s.drift2.b22, s.sigma_kind, s.sigma,
                                           s.rho, h2, g.x2_min, g.x2_max, n2o);

  std::vector<double> vals(static_cast<size_t>(g.size()));
  for (int j = 0; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i)
      vals[g.idx(i, j)] = out.controlled.V[static_cast<size_t>(i) * refine] +
                          out.uncontrolled.V[static_cast<size_t>(j) * refine];
  out.field = ValueField::from_values(g, std::move(vals), 0.0);
  return out;
}

}  // namespace reflect
