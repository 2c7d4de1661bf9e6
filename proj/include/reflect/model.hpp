#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "reflect/config.hpp"

namespace reflect {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class SigmaKind { Constant, Linear, Degenerate };
enum class ControlMode { BoundedVariation, MonotoneIncreasing };
enum class CostKind { SumSquares, DiffSquare, SumSquare, TargetPlusConvex, Separable };
enum class CurveKind { Quadratic, SoftplusAffine };

// Scalar convex curve used for cost components and the nonlinear drift part.
struct Curve1D {
  CurveKind kind = CurveKind::Quadratic;
  // Quadratic: c0 + c1*y + c2*y^2
  double c0 = 0.0, c1 = 0.0, c2 = 0.0;
  // SoftplusAffine: scale * log(1 + exp(shift + slope*y))
  double scale = 1.0, shift = 0.0, slope = 1.0;

  double eval(double y) const {
    if (kind == CurveKind::Quadratic) return c0 + y * (c1 + y * c2);
    return scale * softplus(shift + slope * y);
  }
  double d(double y) const {
    if (kind == CurveKind::Quadratic) return c1 + 2.0 * c2 * y;
    return scale * slope * sigmoid(shift + slope * y);
  }
  double dd(double y) const {
    if (kind == CurveKind::Quadratic) return 2.0 * c2;
    double s = sigmoid(shift + slope * y);
    return scale * slope * slope * s * (1.0 - s);
  }
  // Sign of the second derivative is constant for both kinds.
  bool convex() const {
    return kind == CurveKind::Quadratic ? c2 >= 0.0 : scale >= 0.0;
  }
  bool nondecreasing_on(double lo, double hi) const {
    return d(lo) >= 0.0 && d(hi) >= 0.0;
  }
  // Largest global Lipschitz bound of d(); infinite for quadratics.
  double d_lipschitz_global() const {
    if (kind == CurveKind::Quadratic) return c2 == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return std::abs(scale * slope * slope) * 0.25;
  }
  double d_sup_abs_global() const {
    if (kind == CurveKind::Quadratic)
      return c2 == 0.0 ? std::abs(c1) : std::numeric_limits<double>::infinity();
    return std::abs(scale * slope);  // sigmoid in (0,1)
  }

  static double softplus(double z) {
    if (z > 30.0) return z;
    if (z < -30.0) return std::exp(z);
    return std::log1p(std::exp(z));
  }
  static double sigmoid(double z) {
    if (z >= 0.0) {
      double e = std::exp(-z);
      return 1.0 / (1.0 + e);
    }
    double e = std::exp(z);
    return e / (1.0 + e);
  }
};

// Second drift component: either affine a2 + b12*x1 + b22*x2, or the
// convex-in-x1 form phi(x1) + b22*x2.
struct Drift2 {
  bool affine = true;
  double a2 = 0.0, b12 = 0.0, b22 = 0.0;
  Curve1D phi;  // used when !affine

  double eval(double x1, double x2) const {
    return affine ? a2 + b12 * x1 + b22 * x2 : phi.eval(x1) + b22 * x2;
  }
  double d_x1(double x1) const { return affine ? b12 : phi.d(x1); }
  double dd_x1(double x1) const { return affine ? 0.0 : phi.dd(x1); }
};

struct CostSpec {
  CostKind kind = CostKind::SumSquares;
  double x1_target = 0.0;  // TargetPlusConvex
  Curve1D f2;              // TargetPlusConvex: convex part in x2
  Curve1D h1, h2;          // Separable components
};

struct ProblemSpec {
  double a1 = 0.0;
  double b11 = 0.0;
  Drift2 drift2;
  SigmaKind sigma_kind = SigmaKind::Constant;
  double sigma = 1.0;  // volatility scale; the degenerate kind applies it to x2 only
  double rho = 1.0;
  CostSpec cost;
  double kappa_plus = 1.0;   // marginal cost of upward control (bounds Vx1 below by -kappa_plus)
  double kappa_minus = 1.0;  // marginal cost of downward control (bounds Vx1 above by +kappa_minus)
  ControlMode mode = ControlMode::BoundedVariation;
  int p = 2;

  bool positive_domain() const { return sigma_kind == SigmaKind::Linear; }

  double drift1(double x1) const { return a1 + b11 * x1; }
  double drift2_eval(double x1, double x2) const { return drift2.eval(x1, x2); }

  // Diagonal of the diffusion matrix at x.
  std::array<double, 2> sigma_row(double x1, double x2) const {
    switch (sigma_kind) {
      case SigmaKind::Constant: return {sigma, sigma};
      case SigmaKind::Linear: return {sigma * x1, sigma * x2};
      case SigmaKind::Degenerate: return {0.0, sigma};
    }
    return {0.0, 0.0};
  }

  double h(double x1, double x2) const {
    switch (cost.kind) {
      case CostKind::SumSquares: return x1 * x1 + x2 * x2;
      case CostKind::DiffSquare: { double d = x1 - x2; return d * d; }
      case CostKind::SumSquare: { double s = x1 + x2; return s * s; }
      case CostKind::TargetPlusConvex: {
        double d = x1 - cost.x1_target;
        return d * d + cost.f2.eval(x2);
      }
      case CostKind::Separable: return cost.h1.eval(x1) + cost.h2.eval(x2);
    }
    return 0.0;
  }

  double h_x1(double x1, double x2) const {
    switch (cost.kind) {
      case CostKind::SumSquares: return 2.0 * x1;
      case CostKind::DiffSquare: return 2.0 * (x1 - x2);
      case CostKind::SumSquare: return 2.0 * (x1 + x2);
      case CostKind::TargetPlusConvex: return 2.0 * (x1 - cost.x1_target);
      case CostKind::Separable: return cost.h1.d(x1);
    }
    return 0.0;
  }

  double h_x2(double x1, double x2) const {
    switch (cost.kind) {
      case CostKind::SumSquares: return 2.0 * x2;
      case CostKind::DiffSquare: return -2.0 * (x1 - x2);
      case CostKind::SumSquare: return 2.0 * (x1 + x2);
      case CostKind::TargetPlusConvex: return cost.f2.d(x2);
      case CostKind::Separable: return cost.h2.d(x2);
    }
    return 0.0;
  }

  double h_x1x1(double x1, double) const {
    switch (cost.kind) {
      case CostKind::SumSquares:
      case CostKind::DiffSquare:
      case CostKind::SumSquare:
      case CostKind::TargetPlusConvex: return 2.0;
      case CostKind::Separable: return cost.h1.dd(x1);
    }
    return 0.0;
  }

  double h_x2x2(double, double x2) const {
    switch (cost.kind) {
      case CostKind::SumSquares:
      case CostKind::DiffSquare:
      case CostKind::SumSquare: return 2.0;
      case CostKind::TargetPlusConvex: return cost.f2.dd(x2);
      case CostKind::Separable: return cost.h2.dd(x2);
    }
    return 0.0;
  }

  double h_x1x2(double, double) const {
    switch (cost.kind) {
      case CostKind::DiffSquare: return -2.0;
      case CostKind::SumSquare: return 2.0;
      default: return 0.0;
    }
  }
};

struct EvalResult {
  double h;
  std::array<double, 2> Dh;
  std::array<double, 3> D2h;  // h_x1x1, h_x1x2, h_x2x2
  std::array<double, 2> drift_vector;
  std::array<double, 4> drift_jacobian;  // row-major [d1/dx1, d1/dx2, d2/dx1, d2/dx2]
  std::array<double, 2> sigma_row;
};

inline EvalResult eval_problem(const ProblemSpec& s, double x1, double x2) {
  if (s.positive_domain() && (x1 <= 0.0 || x2 <= 0.0))
    throw DomainError("state outside the positive quadrant for linear volatility");
  EvalResult r;
  r.h = s.h(x1, x2);
  r.Dh = {s.h_x1(x1, x2), s.h_x2(x1, x2)};
  r.D2h = {s.h_x1x1(x1, x2), s.h_x1x2(x1, x2), s.h_x2x2(x1, x2)};
  r.drift_vector = {s.drift1(x1), s.drift2_eval(x1, x2)};
  r.drift_jacobian = {s.b11, 0.0, s.drift2.d_x1(x1), s.drift2.b22};
  r.sigma_row = s.sigma_row(x1, x2);
  return r;
}

// ---------------------------------------------------------------------------
// Assumption validation
// ---------------------------------------------------------------------------

enum class CheckStatus { Pass, Relaxed, Fail };

struct CheckItem {
  std::string name;
  CheckStatus status;
  std::string detail;
};

struct Box2D {
  double x1_min, x1_max, x2_min, x2_max;
};

struct ValidationReport {
  std::vector<CheckItem> items;
  double L_bar = 0.0;       // sup over the box of the drift Jacobian spectral norm
  double rho_star = 0.0;    // p(2p-1)
  double rho_threshold = 0.0;
  std::optional<double> x1_star;

  bool any_fail() const {
    for (const auto& it : items)
      if (it.status == CheckStatus::Fail) return true;
    return false;
  }
  bool all_pass_strict() const {
    for (const auto& it : items)
      if (it.status != CheckStatus::Pass) return false;
    return true;
  }
  const CheckItem* find(const std::string& name) const {
    for (const auto& it : items)
      if (it.name == name) return &it;
    return nullptr;
  }
};

inline const char* to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::Pass: return "PASS";
    case CheckStatus::Relaxed: return "RELAXED";
    case CheckStatus::Fail: return "FAIL";
  }
  return "?";
}

namespace detail {

inline double spectral_norm_2x2(double a, double b, double c, double d) {
  // Largest singular value of [[a,b],[c,d]].
  double s = a * a + b * b + c * c + d * d;
  double det = a * d - b * c;
  double disc = std::sqrt(std::max(0.0, s * s - 4.0 * det * det));
  return std::sqrt(std::max(0.0, 0.5 * (s + disc)));
}

// Sample the box on a lattice including the corners.
template <class F>
void for_box_samples(const Box2D& box, int n, F&& f) {
  for (int i = 0; i < n; ++i) {
    double t1 = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
    double x1 = box.x1_min + t1 * (box.x1_max - box.x1_min);
    for (int j = 0; j < n; ++j) {
      double t2 = n == 1 ? 0.0 : static_cast<double>(j) / (n - 1);
      double x2 = box.x2_min + t2 * (box.x2_max - box.x2_min);
      f(x1, x2);
    }
  }
}

}  // namespace detail

// Checks the standing assumptions over the computational box and reports each
// one as PASS, RELAXED (holds under one of the documented refinements), or
// FAIL. Structural impossibilities throw instead.
inline ValidationReport validate_assumptions(const ProblemSpec& s, const Box2D& box) {
  if (!(s.rho > 0.0)) throw ModelError("rho must be positive");
  if (!(s.sigma > 0.0)) throw ModelError("volatility scale must be positive");
  if (!(s.kappa_plus > 0.0) || !(s.kappa_minus > 0.0))
    throw ModelError("control costs must be positive");
  if (s.p < 2) throw ModelError("growth exponent p must be >= 2");
  if (s.positive_domain() && (box.x1_min <= 0.0 || box.x2_min <= 0.0))
    throw ModelError("linear volatility requires a box inside the positive quadrant");

  ValidationReport rep;
  rep.rho_star = static_cast<double>(s.p) * (2.0 * s.p - 1.0);
  const int ns = 101;

  // Drift Jacobian norm over the box.
  double L = 0.0;
  detail::for_box_samples(box, ns, [&](double x1, double) {
    L = std::max(L, detail::spectral_norm_2x2(s.b11, 0.0, s.drift2.d_x1(x1), s.drift2.b22));
  });
  rep.L_bar = L;

  auto add = [&rep](const std::string& name, CheckStatus st, const std::string& det) {
    rep.items.push_back({name, st, det});
  };

  const bool affine = s.drift2.affine;
  const bool const_sigma = s.sigma_kind == SigmaKind::Constant;
  const bool degenerate = s.sigma_kind == SigmaKind::Degenerate;

  // --- cost convexity and strict convexity in x1 ---
  {
    bool conv = true, strict = true;
    switch (s.cost.kind) {
      case CostKind::SumSquares:
      case CostKind::DiffSquare:
      case CostKind::SumSquare: break;
      case CostKind::TargetPlusConvex:
        conv = s.cost.f2.convex();
        break;
      case CostKind::Separable:
        conv = s.cost.h1.convex() && s.cost.h2.convex();
        strict = s.cost.h1.dd(0.5 * (box.x1_min + box.x1_max)) > 0.0;
        break;
    }
    add("cost_convex", conv ? CheckStatus::Pass : CheckStatus::Fail,
        conv ? "Hessian of h is positive semidefinite" : "a cost component is concave");
    add("cost_strict_x1", strict ? CheckStatus::Pass : CheckStatus::Fail,
        strict ? "h_x1x1 > 0" : "h_x1x1 vanishes");
  }

  // --- growth bounds ---
  {
    CheckStatus st = CheckStatus::Pass;
    std::string det = "kappa1*|x1|^p - kappa2 <= h <= K(1+|x|^p)";
    bool lower_global = true;
    switch (s.cost.kind) {
      case CostKind::SumSquares:
      case CostKind::TargetPlusConvex:
      case CostKind::Separable:
        break;  // coercive in x1 uniformly in x2
      case CostKind::DiffSquare:
      case CostKind::SumSquare:
        lower_global = false;  // vanishes along a line
        break;
    }
    if (s.cost.kind == CostKind::Separable && s.cost.h1.kind == CurveKind::SoftplusAffine)
      lower_global = false;  // softplus grows linearly, below |x1|^p
    if (!lower_global) {
      if (affine && const_sigma && s.p <= 2) {
        st = CheckStatus::Relaxed;
        det = "lower growth fails globally; h bounded below suffices for affine drift, constant volatility, p<=2";
      } else {
        st = CheckStatus::Fail;
        det = "lower growth bound kappa1*|x1|^p - kappa2 <= h fails";
      }
    }
    add("cost_lower_growth", st, det);
    add("cost_upper_growth", CheckStatus::Pass, "library costs grow at most quadratically");
  }

  // --- monotonicity and coupling sign conditions ---
  {
    double min_hx2 = std::numeric_limits<double>::infinity();
    double max_b2x1 = -std::numeric_limits<double>::infinity();
    double min_b2x1 = std::numeric_limits<double>::infinity();
    double max_hx1x2 = -std::numeric_limits<double>::infinity();
    double min_hx1x2 = std::numeric_limits<double>::infinity();
    double min_hx1b = std::numeric_limits<double>::infinity();
    detail::for_box_samples(box, ns, [&](double x1, double x2) {
      min_hx2 = std::min(min_hx2, s.h_x2(x1, x2));
      double g = s.drift2.d_x1(x1);
      max_b2x1 = std::max(max_b2x1, g);
      min_b2x1 = std::min(min_b2x1, g);
      double c = s.h_x1x2(x1, x2);
      max_hx1x2 = std::max(max_hx1x2, c);
      min_hx1x2 = std::min(min_hx1x2, c);
      min_hx1b = std::min(min_hx1b, g * c);  // h_{x1,beta} with beta = (0, b2_x1)
    });
    // b2_x1x2 = 0 for every drift in the library.
    bool strict = min_hx2 >= -1e-12 && max_b2x1 <= 1e-12 && max_hx1x2 <= 1e-12;
    bool flipped = const_sigma && min_b2x1 >= -1e-12 && min_hx1x2 >= -1e-12 &&
                   min_hx2 >= -1e-12 && s.drift2.phi.convex();
    bool affine_route = affine && const_sigma && min_hx1b >= -1e-12;
    bool degen_route = degenerate && min_hx1x2 >= -1e-12 && s.drift2.b12 > 0.0;
    if (strict) {
      add("sign_h_x2", CheckStatus::Pass, "h_x2 >= 0 on the box");
      add("sign_coupling", CheckStatus::Pass, "b2_x1 <= 0, b2_x1x2 <= 0, h_x1x2 <= 0");
    } else if (degen_route) {
      add("sign_h_x2", CheckStatus::Relaxed, "degenerate family: b12 > 0 with h_x1x2 >= 0");
      add("sign_coupling", CheckStatus::Relaxed, "degenerate family sign pattern");
    } else if (affine_route) {
      add("sign_h_x2", CheckStatus::Relaxed,
          "affine-drift refinement: (0,b12) is a drift eigenvector and b12*h_x1x2 >= 0");
      add("sign_coupling", CheckStatus::Relaxed,
          "affine-drift refinement replaces the pointwise sign conditions");
    } else if (flipped) {
      add("sign_h_x2", CheckStatus::Pass, "h_x2 >= 0 on the box");
      add("sign_coupling", CheckStatus::Relaxed,
          "sign-flipped alternative: b2 convex with b2_x1 >= 0, h_x1x2 >= 0");
    } else {
      add("sign_h_x2", min_hx2 >= -1e-12 ? CheckStatus::Pass : CheckStatus::Fail,
          min_hx2 >= -1e-12 ? "h_x2 >= 0 on the box" : "h_x2 changes sign and no refinement applies");
      add("sign_coupling", CheckStatus::Fail, "coupling signs fail and no refinement applies");
    }
  }

  // --- drift regularity ---
  {
    if (!affine && s.drift2.phi.kind == CurveKind::Quadratic && s.drift2.phi.c2 != 0.0) {
      add("drift_lipschitz", CheckStatus::Relaxed,
          "quadratic phi: drift is only locally Lipschitz; L_bar taken over the box");
    } else {
      add("drift_lipschitz", CheckStatus::Pass, "drift is globally Lipschitz");
    }
  }

  // --- discount threshold ---
  {
    double thr;
    if (const_sigma || degenerate) {
      thr = 3.0 * rep.rho_star * rep.L_bar;
    } else {
      thr = 2.0 * rep.rho_star * (rep.L_bar + s.sigma * s.sigma * (rep.rho_star - 1.0));
    }
    rep.rho_threshold = thr;
    if (s.rho > thr) {
      add("discount_threshold", CheckStatus::Pass,
          "rho exceeds the growth threshold " + std::to_string(thr));
    } else if (affine && const_sigma && s.p == 2) {
      double lambda = std::max(s.b11, s.drift2.b22);
      if (s.rho > 2.0 * lambda) {
        add("discount_threshold", CheckStatus::Relaxed,
            "affine refinement: rho > 2*max eigenvalue of the drift matrix");
      } else {
        add("discount_threshold", CheckStatus::Fail, "rho below the affine eigenvalue threshold");
      }
    } else if (degenerate && s.rho > 0.0) {
      add("discount_threshold", CheckStatus::Relaxed,
          "degenerate family: rho > 0 with b22 <= 0 suffices");
    } else {
      add("discount_threshold", CheckStatus::Fail,
          "rho below the growth threshold " + std::to_string(thr));
    }
  }

  // --- linear-volatility extras ---
  if (s.sigma_kind == SigmaKind::Linear) {
    add("linear_a1_nonneg", s.a1 >= 0.0 ? CheckStatus::Pass : CheckStatus::Fail,
        s.a1 >= 0.0 ? "a1 >= 0" : "a1 < 0 lets X1 reach the axis");
    bool b2_pos;
    if (affine)
      b2_pos = s.drift2.a2 >= 0.0 && s.drift2.b12 >= 0.0 && s.drift2.b22 >= 0.0;
    else
      b2_pos = s.drift2.b22 >= 0.0 && s.drift2.phi.eval(box.x1_max) >= 0.0 &&
               s.drift2.phi.eval(0.0) >= 0.0;
    add("linear_b2_nonneg", b2_pos ? CheckStatus::Pass : CheckStatus::Fail,
        b2_pos ? "b2 >= 0 on the positive quadrant" : "b2 can be negative on the quadrant");

    // Largest z such that h_x1(., x2_mid) <= min(0, -b11) on (0, z); x1* = z/2.
    double bound = std::min(0.0, -s.b11);
    double x2m = 0.5 * (box.x2_min + box.x2_max);
    auto ok = [&](double x1) { return s.h_x1(x1, x2m) <= bound; };
    double lo = 1e-12 * std::max(1.0, std::abs(box.x1_max));
    if (!ok(lo)) throw ModelError("linear volatility requires h_x1 <= min(0,-b11) near the axis");
    double z;
    if (ok(box.x1_max)) {
      z = box.x1_max;
    } else {
      double a = lo, b = box.x1_max;
      for (int it = 0; it < 200; ++it) {
        double m = 0.5 * (a + b);
        (ok(m) ? a : b) = m;
      }
      z = a;
    }
    rep.x1_star = 0.5 * z;
    add("linear_x1_star", CheckStatus::Pass,
        "x1* = " + std::to_string(0.5 * z) + " (h_x1 <= min(0,-b11) below 2*x1*)");
  }

  // --- degenerate extras ---
  if (degenerate) {
    bool shape = s.a1 == 0.0 && s.b11 == 0.0 && s.drift2.affine && s.drift2.b12 > 0.0 &&
                 s.drift2.b22 <= 0.0;
    add("degenerate_shape", shape ? CheckStatus::Pass : CheckStatus::Fail,
        shape ? "X1 driftless and noiseless, b12 > 0, b22 <= 0"
              : "degenerate kind requires a1 = b11 = 0, affine b2 with b12 > 0, b22 <= 0");
    bool cost_ok = false;
    switch (s.cost.kind) {
      case CostKind::SumSquares: cost_ok = true; break;                      // h_x1x2 = 0, strictly convex rows
      case CostKind::SumSquare: cost_ok = true; break;                       // h_x1 strictly increasing in x2
      case CostKind::TargetPlusConvex: cost_ok = s.cost.f2.dd(0.0) > 0.0; break;
      case CostKind::Separable: cost_ok = s.cost.h2.dd(0.0) > 0.0; break;
      case CostKind::DiffSquare: cost_ok = false; break;                     // h_x1x2 < 0
    }
    add("degenerate_cost", cost_ok ? CheckStatus::Pass : CheckStatus::Fail,
        cost_ok ? "h_x1 nondecreasing in x2 with strictly convex sections"
                : "cost incompatible with the degenerate family");
  }

  return rep;
}

// ---------------------------------------------------------------------------
// Config loading
// ---------------------------------------------------------------------------

namespace detail {

inline Curve1D load_curve(Config& c, const std::string& sec, const std::string& prefix) {
  Curve1D k;
  std::string kind = c.get_string(sec, prefix + "_kind");
  if (kind == "quadratic") {
    k.kind = CurveKind::Quadratic;
    k.c0 = c.get_double(sec, prefix + "_c0");
    k.c1 = c.get_double(sec, prefix + "_c1");
    k.c2 = c.get_double(sec, prefix + "_c2");
  } else if (kind == "softplus_affine") {
    k.kind = CurveKind::SoftplusAffine;
    k.scale = c.get_double(sec, prefix + "_scale");
    k.shift = c.get_double(sec, prefix + "_shift");
    k.slope = c.get_double(sec, prefix + "_slope");
  } else {
    throw ConfigError("unknown curve kind '" + kind + "' for " + prefix + " in [" + sec + "]");
  }
  return k;
}

}  // namespace detail

inline ProblemSpec load_problem_spec(Config& c) {
  ProblemSpec s;
  s.a1 = c.get_double("dynamics", "a1");
  s.b11 = c.get_double("dynamics", "b11");
  std::string d2 = c.get_string("dynamics", "drift2");
  if (d2 == "affine") {
    s.drift2.affine = true;
    s.drift2.a2 = c.get_double("dynamics", "a2");
    s.drift2.b12 = c.get_double("dynamics", "b12");
    s.drift2.b22 = c.get_double("dynamics", "b22");
  } else if (d2 == "convexform") {
    s.drift2.affine = false;
    s.drift2.phi = detail::load_curve(c, "dynamics", "phi");
    s.drift2.b22 = c.get_double("dynamics", "b22");
  } else {
    throw ConfigError("drift2 must be 'affine' or 'convexform', got '" + d2 + "'");
  }
  std::string sk = c.get_string("dynamics", "sigma_kind");
  if (sk == "constant") s.sigma_kind = SigmaKind::Constant;
  else if (sk == "linear") s.sigma_kind = SigmaKind::Linear;
  else if (sk == "degenerate") s.sigma_kind = SigmaKind::Degenerate;
  else throw ConfigError("sigma_kind must be constant, linear or degenerate, got '" + sk + "'");
  s.sigma = c.get_double("dynamics", "sigma");
  if (!(s.sigma > 0.0)) throw ConfigError("sigma must be positive");

  std::string ck = c.get_string("cost", "kind");
  if (ck == "sum_squares") s.cost.kind = CostKind::SumSquares;
  else if (ck == "diff_square") s.cost.kind = CostKind::DiffSquare;
  else if (ck == "sum_square") s.cost.kind = CostKind::SumSquare;
  else if (ck == "target_plus_convex") {
    s.cost.kind = CostKind::TargetPlusConvex;
    s.cost.x1_target = c.get_double("cost", "x1_target");
    s.cost.f2 = detail::load_curve(c, "cost", "f");
  } else if (ck == "separable") {
    s.cost.kind = CostKind::Separable;
    s.cost.h1 = detail::load_curve(c, "cost", "h1");
    s.cost.h2 = detail::load_curve(c, "cost", "h2");
  } else {
    throw ConfigError("unknown cost kind '" + ck + "'");
  }
  s.kappa_plus = c.get_double_or("cost", "kappa_plus", 1.0);
  s.kappa_minus = c.get_double_or("cost", "kappa_minus", 1.0);
  s.p = static_cast<int>(c.get_int_or("cost", "p", 2));

  s.rho = c.get_double("discount", "rho");
  if (!(s.rho > 0.0)) throw ConfigError("rho must be positive");

  std::string mode = c.get_string_or("control", "mode", "bounded_variation");
  if (mode == "bounded_variation") s.mode = ControlMode::BoundedVariation;
  else if (mode == "monotone_increasing") s.mode = ControlMode::MonotoneIncreasing;
  else throw ConfigError("control mode must be bounded_variation or monotone_increasing");
  return s;
}

}  // namespace reflect
