#pragma once

#include <Eigen/Sparse>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "reflect/model.hpp"
#include "reflect/value_field.hpp"

namespace reflect {

struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IllPosedError : SolverError {
  using SolverError::SolverError;
};

struct NonConvergenceError : SolverError {
  double residual;
  int iterations;
  NonConvergenceError(double r, int it)
      : SolverError("penalized solve did not converge (residual " + std::to_string(r) +
                    " after " + std::to_string(it) + " Newton steps)"),
        residual(r),
        iterations(it) {}
};

// Penalty bridge: zero for r <= 0, r^2 on (0,1), linear 2r-1 beyond; C^1 with
// convex nondecreasing profile.
inline double beta(double r) {
  if (r <= 0.0) return 0.0;
  if (r < 1.0) return r * r;
  return 2.0 * r - 1.0;
}

inline double beta_prime(double r) {
  if (r <= 0.0) return 0.0;
  if (r < 1.0) return 2.0 * r;
  return 2.0;
}

inline std::vector<double> default_eps_schedule() { return {1e-1, 3e-2, 1e-2, 3e-3, 1e-3}; }
inline std::vector<double> default_eta_schedule() { return {1e-1, 3e-2, 1e-2}; }

// Default {1,3}-decade continuation extended down to eps_final.
inline std::vector<double> eps_schedule_down_to(double eps_final) {
  std::vector<double> s;
  double v = 1e-1;
  bool three = false;
  while (v > eps_final * (1.0 + 1e-12)) {
    s.push_back(v);
    v = three ? v / 3.0 : v * 0.3;
    three = !three;
    // keep the {1e-k, 3e-k-1} ladder exact
    double lg = std::log10(v);
    double dec = std::floor(lg);
    double mant = v / std::pow(10.0, dec);
    v = (mant > 2.0 ? 3.0 : 1.0) * std::pow(10.0, dec);
  }
  s.push_back(eps_final);
  return s;
}

struct HjbOptions {
  std::vector<double> eps_schedule = default_eps_schedule();
  std::vector<double> eta_schedule = default_eta_schedule();  // degenerate kind only
  int max_newton = 500;
  int max_halvings = 8;
  int picard_sweeps = 50;
  double tol_scale = 1e-9;
  // After the continuation, solve the discrete complementarity system itself
  // (the grid-exact limit of the schedule) by policy iteration. Removes the
  // O(sqrt(eps)) value bias the quadratic penalty bridge leaves in the
  // saturated regions.
  bool exact_limit = true;
  int max_policy_iters = 60;
};

struct HjbStats {
  int newton_iterations = 0;
  int picard_rounds = 0;
  int policy_iterations = 0;
  double final_residual = 0.0;
  std::vector<double> eps_used;
  std::vector<double> eta_used;
  double seconds = 0.0;
};

namespace hjbdet {

// Gradient penalty in the running HJB; shape depends on the control mode and
// on whether the marginal costs are the symmetric unit pair.
struct Penalty {
  ControlMode mode;
  double kp, km;
  bool unit;  // symmetric unit costs use the quadratic-argument bridge

  static Penalty from(const ProblemSpec& s) {
    return {s.mode, s.kappa_plus, s.kappa_minus,
            s.mode == ControlMode::BoundedVariation && s.kappa_plus == 1.0 &&
                s.kappa_minus == 1.0};
  }

  double eval(double p) const {
    if (mode == ControlMode::MonotoneIncreasing) return beta(-p - kp);
    if (unit) return beta(p * p - 1.0);
    return beta(-p - kp) + beta(p - km);
  }
  double deriv(double p) const {
    if (mode == ControlMode::MonotoneIncreasing) return -beta_prime(-p - kp);
    if (unit) return 2.0 * p * beta_prime(p * p - 1.0);
    return -beta_prime(-p - kp) + beta_prime(p - km);
  }

  // One-sided variant fed by the backward and forward differences: the upper
  // constraint reads the backward slope, the lower constraint the forward
  // slope, so the derivative lands on the matrix diagonal with positive sign
  // (monotone scheme). Used where the first coordinate carries no diffusion.
  double eval2(double pb, double pf) const {
    if (mode == ControlMode::MonotoneIncreasing) return beta(-pf - kp);
    if (unit) {
      double up = std::max(pb, 0.0), dn = std::min(pf, 0.0);
      return beta(up * up + dn * dn - 1.0);
    }
    return beta(-pf - kp) + beta(pb - km);
  }
  double d_pb(double pb, double pf) const {
    if (mode == ControlMode::MonotoneIncreasing) return 0.0;
    if (unit) {
      double up = std::max(pb, 0.0), dn = std::min(pf, 0.0);
      return 2.0 * up * beta_prime(up * up + dn * dn - 1.0);
    }
    return beta_prime(pb - km);
  }
  double d_pf(double pb, double pf) const {
    if (mode == ControlMode::MonotoneIncreasing) return -beta_prime(-pf - kp);
    if (unit) {
      double up = std::max(pb, 0.0), dn = std::min(pf, 0.0);
      return 2.0 * dn * beta_prime(up * up + dn * dn - 1.0);
    }
    return -beta_prime(-pf - kp);
  }
};

// Discrete operator rho*I - L_h for a fixed (spec, grid, viscosity) triple.
// Interior rows use central second differences and central first differences
// wherever the diffusion dominates the cell drift (keeping the scheme
// monotone), falling back to one-sided differences by drift sign otherwise.
// Boundary rows encode the gradient saturation / quadratic-extension
// closures. The sparsity pattern is independent of the solution, so the LU
// symbolic analysis is reused across Newton steps.
class Assembly {
 public:
  Assembly(const ProblemSpec& s, const Grid2D& g, double eta_visc)
      : spec_(s), g_(g), pen_(Penalty::from(s)),
        one_sided_(s.sigma_kind == SigmaKind::Degenerate) {
    if (s.positive_domain() && (g.x1_min <= 0.0 || g.x2_min <= 0.0))
      throw IllPosedError("linear volatility requires a box inside the positive quadrant");
    if (!(s.rho > 0.0)) throw IllPosedError("rho must be positive");
    const int N = g.size();
    cd_.assign(N, 0.0);
    cl_.assign(N, 0.0);
    cr_.assign(N, 0.0);
    cb_.assign(N, 0.0);
    ct_.assign(N, 0.0);
    rhs_.assign(N, 0.0);
    kind_.assign(N, Row::Interior);
    sup_h_ = 0.0;

    for (int j = 0; j < g.n2; ++j) {
      for (int i = 0; i < g.n1; ++i) {
        const int k = g.idx(i, j);
        const double x1 = g.x1(i), x2 = g.x2(j);
        if (i == 0) {
          kind_[k] = Row::NeumannLeft;
          rhs_[k] = -s.kappa_plus;
          continue;
        }
        if (i == g.n1 - 1) {
          if (s.mode == ControlMode::MonotoneIncreasing) {
            kind_[k] = Row::ThirdDiffRight;
            rhs_[k] = 0.0;
          } else {
            kind_[k] = Row::NeumannRight;
            rhs_[k] = s.kappa_minus;
          }
          continue;
        }
        if (j == 0) {
          kind_[k] = Row::ThirdDiffBottom;
          rhs_[k] = 0.0;
          continue;
        }
        if (j == g.n2 - 1) {
          kind_[k] = Row::ThirdDiffTop;
          rhs_[k] = 0.0;
          continue;
        }
        auto sig = s.sigma_row(x1, x2);
        double s1 = 0.5 * (sig[0] * sig[0] + eta_visc * eta_visc);
        double s2 = 0.5 * sig[1] * sig[1];
        double b1 = s.drift1(x1);
        double b2 = s.drift2_eval(x1, x2);
        double cd = s.rho + 2.0 * s1 / (g.h1 * g.h1) + 2.0 * s2 / (g.h2 * g.h2);
        double cl = -s1 / (g.h1 * g.h1), cr = cl;
        double cb = -s2 / (g.h2 * g.h2), ct = cb;
        if (std::abs(b1) * g.h1 <= 2.0 * s1) {
          cl += b1 / (2.0 * g.h1);
          cr += -b1 / (2.0 * g.h1);
        } else if (b1 > 0.0) {
          cr += -b1 / g.h1;
          cd += b1 / g.h1;
        } else {
          cl += b1 / g.h1;
          cd += -b1 / g.h1;
        }
        if (std::abs(b2) * g.h2 <= 2.0 * s2) {
          cb += b2 / (2.0 * g.h2);
          ct += -b2 / (2.0 * g.h2);
        } else if (b2 > 0.0) {
          ct += -b2 / g.h2;
          cd += b2 / g.h2;
        } else {
          cb += b2 / g.h2;
          cd += -b2 / g.h2;
        }
        if (!(cd > 0.0)) throw IllPosedError("operator lost diagonal dominance");
        cd_[k] = cd;
        cl_[k] = cl;
        cr_[k] = cr;
        cb_[k] = cb;
        ct_[k] = ct;
        rhs_[k] = s.h(x1, x2);
        sup_h_ = std::max(sup_h_, std::abs(rhs_[k]));
      }
    }
  }

  const Grid2D& grid() const { return g_; }
  double sup_h() const { return sup_h_; }
  const Penalty& penalty() const { return pen_; }

  // F(u) = (rho I - L_h) u + (1/eps) P(D1c u) - h, with closure rows in place
  // of the PDE on the box faces.
  void residual(const std::vector<double>& u, double inv_eps, std::vector<double>& F) const {
    const Grid2D& g = g_;
    F.resize(u.size());
    for (int j = 0; j < g.n2; ++j) {
      for (int i = 0; i < g.n1; ++i) {
        const int k = g.idx(i, j);
        switch (kind_[k]) {
          case Row::Interior: {
            double pen;
            if (one_sided_) {
              double pb = (u[k] - u[k - 1]) / g.h1;
              double pf = (u[k + 1] - u[k]) / g.h1;
              pen = pen_.eval2(pb, pf);
            } else {
              pen = pen_.eval((u[k + 1] - u[k - 1]) / (2.0 * g.h1));
            }
            F[k] = cd_[k] * u[k] + cl_[k] * u[k - 1] + cr_[k] * u[k + 1] +
                   cb_[k] * u[k - g.n1] + ct_[k] * u[k + g.n1] + inv_eps * pen - rhs_[k];
            break;
          }
          case Row::NeumannLeft:
            F[k] = (-3.0 * u[k] + 4.0 * u[k + 1] - u[k + 2]) / (2.0 * g.h1) - rhs_[k];
            break;
          case Row::NeumannRight:
            F[k] = (3.0 * u[k] - 4.0 * u[k - 1] + u[k - 2]) / (2.0 * g.h1) - rhs_[k];
            break;
          case Row::ThirdDiffRight:
            F[k] = u[k] - 3.0 * u[k - 1] + 3.0 * u[k - 2] - u[k - 3];
            break;
          case Row::ThirdDiffBottom:
            F[k] = u[k] - 3.0 * u[k + g.n1] + 3.0 * u[k + 2 * g.n1] - u[k + 3 * g.n1];
            break;
          case Row::ThirdDiffTop:
            F[k] = u[k] - 3.0 * u[k - g.n1] + 3.0 * u[k - 2 * g.n1] - u[k - 3 * g.n1];
            break;
        }
      }
    }
  }

  void jacobian(const std::vector<double>& u, double inv_eps,
                Eigen::SparseMatrix<double>& J) const {
    const Grid2D& g = g_;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<size_t>(g.size()) * 5);
    for (int j = 0; j < g.n2; ++j) {
      for (int i = 0; i < g.n1; ++i) {
        const int k = g.idx(i, j);
        switch (kind_[k]) {
          case Row::Interior: {
            if (one_sided_) {
              double pb = (u[k] - u[k - 1]) / g.h1;
              double pf = (u[k + 1] - u[k]) / g.h1;
              double db = inv_eps * pen_.d_pb(pb, pf) / g.h1;
              double df = inv_eps * pen_.d_pf(pb, pf) / g.h1;
              trip.emplace_back(k, k, cd_[k] + db - df);
              trip.emplace_back(k, k - 1, cl_[k] - db);
              trip.emplace_back(k, k + 1, cr_[k] + df);
            } else {
              double p = (u[k + 1] - u[k - 1]) / (2.0 * g.h1);
              double dp = inv_eps * pen_.deriv(p) / (2.0 * g.h1);
              trip.emplace_back(k, k, cd_[k]);
              trip.emplace_back(k, k - 1, cl_[k] - dp);
              trip.emplace_back(k, k + 1, cr_[k] + dp);
            }
            trip.emplace_back(k, k - g.n1, cb_[k]);
            trip.emplace_back(k, k + g.n1, ct_[k]);
            break;
          }
          case Row::NeumannLeft:
            trip.emplace_back(k, k, -3.0 / (2.0 * g.h1));
            trip.emplace_back(k, k + 1, 4.0 / (2.0 * g.h1));
            trip.emplace_back(k, k + 2, -1.0 / (2.0 * g.h1));
            break;
          case Row::NeumannRight:
            trip.emplace_back(k, k, 3.0 / (2.0 * g.h1));
            trip.emplace_back(k, k - 1, -4.0 / (2.0 * g.h1));
            trip.emplace_back(k, k - 2, 1.0 / (2.0 * g.h1));
            break;
          case Row::ThirdDiffRight:
            trip.emplace_back(k, k, 1.0);
            trip.emplace_back(k, k - 1, -3.0);
            trip.emplace_back(k, k - 2, 3.0);
            trip.emplace_back(k, k - 3, -1.0);
            break;
          case Row::ThirdDiffBottom:
            trip.emplace_back(k, k, 1.0);
            trip.emplace_back(k, k + g.n1, -3.0);
            trip.emplace_back(k, k + 2 * g.n1, 3.0);
            trip.emplace_back(k, k + 3 * g.n1, -1.0);
            break;
          case Row::ThirdDiffTop:
            trip.emplace_back(k, k, 1.0);
            trip.emplace_back(k, k - g.n1, -3.0);
            trip.emplace_back(k, k - 2 * g.n1, 3.0);
            trip.emplace_back(k, k - 3 * g.n1, -1.0);
            break;
        }
      }
    }
    J.resize(g.size(), g.size());
    J.setFromTriplets(trip.begin(), trip.end());
  }

  // Exact discrete limit of the continuation: policy iteration on the
  // complementarity system max{(rho I - L_h)u - h, constraint(D1c u)} = 0.
  // Each node is either a PDE row or a saturated-gradient row; the policy is
  // re-derived from the residuals until it stabilizes. Warm-starting from the
  // last penalized solve keeps the iteration count small. Returns the number
  // of policy sweeps; throws NonConvergence if the policy cycles.
  int exact_limit_polish(std::vector<double>& u, double tol, int max_iters) const {
    const Grid2D& g = g_;
    const int N = g.size();
    const bool two_sided = pen_.mode != ControlMode::MonotoneIncreasing;
    enum : unsigned char { PDE, LO, HI };
    std::vector<unsigned char> pol(static_cast<size_t>(N), PDE);
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::SparseMatrix<double> M(N, N);
    Eigen::VectorXd rhs(N);
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;

    auto pde_apply = [&](const std::vector<double>& v, int k) {
      return cd_[k] * v[k] + cl_[k] * v[k - 1] + cr_[k] * v[k + 1] + cb_[k] * v[k - g.n1] +
             ct_[k] * v[k + g.n1] - rhs_[k];
    };

    bool evaluated = false;
    for (int it = 0; it < max_iters; ++it) {
      // policy improvement
      bool changed = false;
      double res = 0.0;
      for (int j = 1; j < g.n2 - 1; ++j) {
        for (int i = 1; i < g.n1 - 1; ++i) {
          const int k = g.idx(i, j);
          double p = (u[k + 1] - u[k - 1]) / (2.0 * g.h1);
          double a = pde_apply(u, k);
          double lo = -p - pen_.kp;
          double hi = two_sided ? p - pen_.km : -std::numeric_limits<double>::infinity();
          double phi = std::max(lo, hi);
          res = std::max(res, std::abs(std::max(a, phi)));
          unsigned char want = a >= phi ? PDE : (lo >= hi ? LO : HI);
          if (want != pol[k]) {
            pol[k] = want;
            changed = true;
          }
        }
      }
      if (res <= tol) return it;
      if (!changed && evaluated) break;  // fixed point of the iteration, above tol

      // policy evaluation
      trip.clear();
      for (int j = 0; j < g.n2; ++j) {
        for (int i = 0; i < g.n1; ++i) {
          const int k = g.idx(i, j);
          switch (kind_[k]) {
            case Row::Interior:
              if (pol[k] == PDE) {
                trip.emplace_back(k, k, cd_[k]);
                trip.emplace_back(k, k - 1, cl_[k]);
                trip.emplace_back(k, k + 1, cr_[k]);
                trip.emplace_back(k, k - g.n1, cb_[k]);
                trip.emplace_back(k, k + g.n1, ct_[k]);
                rhs[k] = rhs_[k];
              } else if (pol[k] == LO) {
                trip.emplace_back(k, k - 1, 1.0 / (2.0 * g.h1));
                trip.emplace_back(k, k + 1, -1.0 / (2.0 * g.h1));
                rhs[k] = pen_.kp;
              } else {
                trip.emplace_back(k, k + 1, 1.0 / (2.0 * g.h1));
                trip.emplace_back(k, k - 1, -1.0 / (2.0 * g.h1));
                rhs[k] = pen_.km;
              }
              break;
            case Row::NeumannLeft:
              trip.emplace_back(k, k, -3.0 / (2.0 * g.h1));
              trip.emplace_back(k, k + 1, 4.0 / (2.0 * g.h1));
              trip.emplace_back(k, k + 2, -1.0 / (2.0 * g.h1));
              rhs[k] = rhs_[k];
              break;
            case Row::NeumannRight:
              trip.emplace_back(k, k, 3.0 / (2.0 * g.h1));
              trip.emplace_back(k, k - 1, -4.0 / (2.0 * g.h1));
              trip.emplace_back(k, k - 2, 1.0 / (2.0 * g.h1));
              rhs[k] = rhs_[k];
              break;
            case Row::ThirdDiffRight:
              trip.emplace_back(k, k, 1.0);
              trip.emplace_back(k, k - 1, -3.0);
              trip.emplace_back(k, k - 2, 3.0);
              trip.emplace_back(k, k - 3, -1.0);
              rhs[k] = 0.0;
              break;
            case Row::ThirdDiffBottom:
              trip.emplace_back(k, k, 1.0);
              trip.emplace_back(k, k + g.n1, -3.0);
              trip.emplace_back(k, k + 2 * g.n1, 3.0);
              trip.emplace_back(k, k + 3 * g.n1, -1.0);
              rhs[k] = 0.0;
              break;
            case Row::ThirdDiffTop:
              trip.emplace_back(k, k, 1.0);
              trip.emplace_back(k, k - g.n1, -3.0);
              trip.emplace_back(k, k - 2 * g.n1, 3.0);
              trip.emplace_back(k, k - 3 * g.n1, -1.0);
              rhs[k] = 0.0;
              break;
          }
        }
      }
      M.setFromTriplets(trip.begin(), trip.end());
      lu.compute(M);
      if (lu.info() != Eigen::Success)
        throw NonConvergenceError(std::numeric_limits<double>::quiet_NaN(), it);
      Eigen::VectorXd sol = lu.solve(rhs);
      for (int k = 0; k < N; ++k) u[static_cast<size_t>(k)] = sol[k];
      evaluated = true;
    }
    // final residual check
    double res = 0.0;
    for (int j = 1; j < g.n2 - 1; ++j)
      for (int i = 1; i < g.n1 - 1; ++i) {
        const int k = g.idx(i, j);
        double p = (u[k + 1] - u[k - 1]) / (2.0 * g.h1);
        double lo = -p - pen_.kp;
        double hi = two_sided ? p - pen_.km : -std::numeric_limits<double>::infinity();
        res = std::max(res, std::abs(std::max(pde_apply(u, k), std::max(lo, hi))));
      }
    if (res > tol) throw NonConvergenceError(res, max_iters);
    return max_iters;
  }

 private:
  enum class Row { Interior, NeumannLeft, NeumannRight, ThirdDiffRight, ThirdDiffBottom, ThirdDiffTop };

  const ProblemSpec spec_;
  Grid2D g_;
  Penalty pen_;
  bool one_sided_;
  std::vector<double> cd_, cl_, cr_, cb_, ct_, rhs_;
  std::vector<Row> kind_;
  double sup_h_;
};

// Sup norm that reports divergence honestly: any non-finite entry yields
// +infinity instead of being silently dropped by max().
inline double sup_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) {
    if (!std::isfinite(x)) return std::numeric_limits<double>::infinity();
    m = std::max(m, std::abs(x));
  }
  return m;
}

// Root-mean-square norm with the same honest divergence reporting.
inline double rms_norm(const std::vector<double>& v) {
  double ss = 0.0;
  for (double x : v) {
    if (!std::isfinite(x)) return std::numeric_limits<double>::infinity();
    ss += x * x;
  }
  return std::sqrt(ss / static_cast<double>(v.size()));
}

// Damped Newton on the penalized system at a single eps level. The line
// search descends on the smooth RMS merit (the sup norm only gates the
// convergence test, since its argmax hops across the switching set between
// iterations). A failed search recomputes the direction under increasing
// diagonal shifts; if the whole ladder fails, monotone under-relaxed
// lagged-penalty sweeps take over before Newton resumes.
inline int newton_solve(const Assembly& A, double eps, const HjbOptions& opt,
                        std::vector<double>& u, double* out_res, int* picard_rounds) {
  const double inv_eps = 1.0 / eps;
  const double tol = opt.tol_scale * (1.0 + A.sup_h());
  std::vector<double> F, F_try, u_try;
  Eigen::SparseMatrix<double> J, J_shift;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  bool analyzed = false;

  A.residual(u, inv_eps, F);
  double supF = sup_norm(F);
  double rmsF = rms_norm(F);
  int iters = 0;
  while (supF > tol) {
    if (iters >= opt.max_newton) throw NonConvergenceError(supF, iters);
    A.jacobian(u, inv_eps, J);
    if (!analyzed) {
      lu.analyzePattern(J);
      analyzed = true;
    }
    const double diag_scale = J.diagonal().cwiseAbs().mean();
    ++iters;

    bool accepted = false;
    double mu = 0.0;
    for (int attempt = 0; attempt < 7 && !accepted; ++attempt) {
      if (attempt == 0) {
        lu.factorize(J);
      } else {
        J_shift = J;
        for (int k = 0; k < J_shift.rows(); ++k) J_shift.coeffRef(k, k) += mu * diag_scale;
        lu.factorize(J_shift);
      }
      if (lu.info() != Eigen::Success) {
        mu = (mu == 0.0) ? 1e-4 : mu * 16.0;
        continue;
      }
      Eigen::Map<const Eigen::VectorXd> Fv(F.data(), static_cast<Eigen::Index>(F.size()));
      Eigen::VectorXd d = lu.solve(-Fv);

      double lambda = 1.0;
      for (int halv = 0; halv <= opt.max_halvings; ++halv) {
        u_try.resize(u.size());
        for (size_t k = 0; k < u.size(); ++k)
          u_try[k] = u[k] + lambda * d[static_cast<Eigen::Index>(k)];
        A.residual(u_try, inv_eps, F_try);
        double rms_try = rms_norm(F_try);
        double sup_try = sup_norm(F_try);
        if (rms_try < rmsF * (1.0 - 1e-4 * lambda) || sup_try <= tol) {
          u.swap(u_try);
          F.swap(F_try);
          rmsF = rms_try;
          supF = sup_try;
          accepted = true;
          break;
        }
        lambda *= 0.5;
      }
      if (!accepted) mu = (mu == 0.0) ? 1e-4 : mu * 16.0;
    }
    if (accepted) continue;

    // Lagged-penalty relaxation: freeze the penalty source, solve the linear
    // part, mix monotonically. Uses the penalty-free Jacobian (constant in u).
    ++(*picard_rounds);
    if (*picard_rounds > 6) throw NonConvergenceError(supF, iters);
    A.jacobian(u, 0.0, J);
    lu.factorize(J);
    if (lu.info() != Eigen::Success) throw NonConvergenceError(supF, iters);
    double mix = 0.5;
    for (int sweep = 0; sweep < opt.picard_sweeps; ++sweep) {
      A.residual(u, inv_eps, F);
      Eigen::Map<const Eigen::VectorXd> Fv2(F.data(), static_cast<Eigen::Index>(F.size()));
      Eigen::VectorXd d2 = lu.solve(-Fv2);
      u_try.resize(u.size());
      for (size_t k = 0; k < u.size(); ++k)
        u_try[k] = u[k] + mix * d2[static_cast<Eigen::Index>(k)];
      A.residual(u_try, inv_eps, F_try);
      double rms_try = rms_norm(F_try);
      if (rms_try < rmsF) {
        u.swap(u_try);
        rmsF = rms_try;
      } else {
        mix *= 0.5;
        if (mix < 1.0 / 1024.0) break;
      }
    }
    A.residual(u, inv_eps, F);
    supF = sup_norm(F);
    rmsF = rms_norm(F);
  }
  if (out_res) *out_res = supF;
  return iters;
}

}  // namespace hjbdet

// Single penalized solve at a fixed eps (no continuation); mainly a building
// block and a test seam.
inline ValueField solve_penalized(const ProblemSpec& spec, const Grid2D& grid, double eps,
                                  const HjbOptions& opt = {},
                                  const std::vector<double>* warm_start = nullptr,
                                  double eta_visc = 0.0) {
  if (!(eps > 0.0)) throw SolverError("eps must be positive");
  hjbdet::Assembly A(spec, grid, eta_visc);
  std::vector<double> u =
      warm_start ? *warm_start : std::vector<double>(static_cast<size_t>(grid.size()), 0.0);
  double res = 0.0;
  int picard = 0;
  int iters = hjbdet::newton_solve(A, eps, opt, u, &res, &picard);
  ValueField f = ValueField::from_values(grid, std::move(u), eps);
  f.newton_residual = res;
  f.iterations = iters;
  return f;
}

namespace hjbdet {

inline void check_schedule(const std::vector<double>& s, const char* what) {
  if (s.empty()) throw SolverError(std::string(what) + " schedule is empty");
  for (size_t i = 0; i < s.size(); ++i) {
    if (!(s[i] > 0.0)) throw SolverError(std::string(what) + " schedule has a nonpositive entry");
    if (i > 0 && !(s[i] < s[i - 1]))
      throw SolverError(std::string(what) + " schedule must decrease strictly");
  }
}

inline std::vector<double> continuation(const ProblemSpec& spec, const Grid2D& grid,
                                        const HjbOptions& opt, double eta_visc,
                                        std::vector<double> u, HjbStats* stats) {
  Assembly A(spec, grid, eta_visc);
  for (double eps : opt.eps_schedule) {
    double res = 0.0;
    int picard = 0;
    int it = newton_solve(A, eps, opt, u, &res, &picard);
    if (stats) {
      stats->newton_iterations += it;
      stats->picard_rounds += picard;
      stats->final_residual = res;
      stats->eps_used.push_back(eps);
    }
  }
  if (opt.exact_limit) {
    int it = A.exact_limit_polish(u, opt.tol_scale * (1.0 + A.sup_h()), opt.max_policy_iters);
    if (stats) stats->policy_iterations += it;
  }
  return u;
}

}  // namespace hjbdet

// Penalty continuation down the eps schedule with warm starts. The
// degenerate kind additionally sweeps a vanishing-viscosity schedule in the
// first coordinate and extrapolates node values linearly in eta^2.
inline ValueField solve_hjb(const ProblemSpec& spec, const Grid2D& grid,
                            const HjbOptions& opt = {}, HjbStats* stats = nullptr) {
  auto t0 = std::chrono::steady_clock::now();
  hjbdet::check_schedule(opt.eps_schedule, "eps");
  std::vector<double> u(static_cast<size_t>(grid.size()), 0.0);
  ValueField out;

  if (spec.sigma_kind == SigmaKind::Degenerate) {
    hjbdet::check_schedule(opt.eta_schedule, "eta");
    // Each viscosity leg runs the eps schedule on the smooth penalized
    // problem; the exact-limit polish is applied to a copy per leg so the
    // warm start handed to the next leg stays penalized and smooth.
    HjbOptions leg_opt = opt;
    leg_opt.exact_limit = false;
    std::vector<std::vector<double>> sols;
    for (double eta : opt.eta_schedule) {
      u = hjbdet::continuation(spec, grid, leg_opt, eta, std::move(u), stats);
      std::vector<double> leg = u;
      if (opt.exact_limit) {
        hjbdet::Assembly A(spec, grid, eta);
        int it = A.exact_limit_polish(leg, opt.tol_scale * (1.0 + A.sup_h()),
                                      opt.max_policy_iters);
        if (stats) stats->policy_iterations += it;
      }
      sols.push_back(std::move(leg));
      if (stats) stats->eta_used.push_back(eta);
    }
    std::vector<double> v0 = sols.back();
    if (sols.size() >= 2) {
      double e1 = opt.eta_schedule[opt.eta_schedule.size() - 2];
      double e2 = opt.eta_schedule.back();
      double w = e2 * e2 / (e1 * e1 - e2 * e2);
      const auto& p = sols[sols.size() - 2];
      for (size_t k = 0; k < v0.size(); ++k) v0[k] += w * (v0[k] - p[k]);
    }
    out = ValueField::from_values(grid, std::move(v0), opt.eps_schedule.back());
  } else {
    u = hjbdet::continuation(spec, grid, opt, 0.0, std::move(u), stats);
    out = ValueField::from_values(grid, std::move(u), opt.eps_schedule.back());
  }
  if (stats) {
    out.newton_residual = stats->final_residual;
    out.iterations = stats->newton_iterations;
    stats->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return out;
}

// Pointwise complementarity defect of the variational inequality: both the
// PDE part and the gradient constraint must be nonpositive, and at least one
// of them must bind. The reported field is |max(pde, constraint)| evaluated
// with the shared central stencils.
inline ScalarField vi_residual(const ProblemSpec& spec, const ValueField& f) {
  const Grid2D& g = f.grid;
  ScalarField r(g);
  for (int j = 0; j < g.n2; ++j) {
    for (int i = 0; i < g.n1; ++i) {
      double x1 = g.x1(i), x2 = g.x2(j);
      auto sig = spec.sigma_row(x1, x2);
      double s1 = spec.sigma_kind == SigmaKind::Degenerate ? 0.0 : 0.5 * sig[0] * sig[0];
      double s2 = 0.5 * sig[1] * sig[1];
      double pde = spec.rho * f.V(i, j) -
                   (spec.drift1(x1) * f.Vx1(i, j) + spec.drift2_eval(x1, x2) * f.Vx2(i, j) +
                    s1 * f.Vx1x1(i, j) + s2 * f.Vx2x2(i, j)) -
                   spec.h(x1, x2);
      double p = f.Vx1(i, j);
      double grad;
      if (spec.mode == ControlMode::MonotoneIncreasing)
        grad = -p - spec.kappa_plus;
      else
        grad = std::max(-p - spec.kappa_plus, p - spec.kappa_minus);
      r(i, j) = std::abs(std::max(pde, grad));
    }
  }
  return r;
}

}  // namespace reflect
