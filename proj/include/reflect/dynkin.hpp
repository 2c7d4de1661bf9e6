#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "reflect/cost_eval.hpp"
#include "reflect/model.hpp"
#include "reflect/rng.hpp"
#include "reflect/threads.hpp"
#include "reflect/value_field.hpp"

namespace reflect {

struct DynkinError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Value of the stopping game played on the uncontrolled dynamics; coincides
// with the saturating gradient of the control value. Obstacles are the unit
// levels, so the solve applies to the symmetric-unit control mode.
struct GameField {
  Grid2D grid;
  ScalarField U;
  ScalarField Ux1;  // d1(U), used by the crossing detectors
  ScalarField hat_h;
  std::vector<std::int8_t> clamp;  // -1 lower obstacle, 0 free, +1 upper
  double rho_hat = 0.0;
  double delta_stop = 0.0;
  int sweeps = 0;

  bool in_minus(int i, int j) const { return clamp[static_cast<size_t>(grid.idx(i, j))] < 0; }
  bool in_plus(int i, int j) const { return clamp[static_cast<size_t>(grid.idx(i, j))] > 0; }
};

// Effective running payoff of the game: the x1-derivative of h plus the
// coupling of the second drift component through the solved Vx2.
inline ScalarField hat_h_field(const ProblemSpec& spec, const ValueField& vf) {
  const Grid2D& g = vf.grid;
  ScalarField out(g);
  for (int j = 0; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i)
      out(i, j) = spec.h_x1(g.x1(i), g.x2(j)) + spec.drift2.d_x1(g.x1(i)) * vf.Vx2(i, j);
  return out;
}

// Two-obstacle problem (rho_hat - L)U = hat_h with U clamped to [-1, 1],
// solved by projected Gauss-Seidel sweeps with over-relaxation. Interior rows
// reuse the hybrid central/upwind stencil and the x1 faces hold the saturated
// values -1 / +1. The x2 faces either anchor to the clamped edge_anchor rows
// (the solved gradient) or, without an anchor, close with a one-sided row
// that keeps the sweep matrix monotone; either way the face rows sit outside
// the margin the interior checks use.
inline GameField solve_two_obstacle(const ProblemSpec& spec, const ScalarField& hat_h,
                                    const Grid2D& g, const ScalarField* edge_anchor = nullptr,
                                    int max_sweeps = 50000) {
  if (spec.mode != ControlMode::BoundedVariation || spec.kappa_plus != 1.0 ||
      spec.kappa_minus != 1.0)
    throw DynkinError("two-obstacle game requires the symmetric unit mode");
  const double rho_hat = spec.rho - spec.b11;
  if (!(rho_hat > 0.0)) throw DynkinError("rho - b11 must be positive");

  const int N = g.size();
  std::vector<double> cd(N, 1.0), cl(N, 0.0), cr(N, 0.0), cb(N, 0.0), ct(N, 0.0), rhs(N, 0.0);
  std::vector<std::uint8_t> fixed(static_cast<size_t>(N), 0);
  for (int j = 0; j < g.n2; ++j) {
    for (int i = 0; i < g.n1; ++i) {
      const int k = g.idx(i, j);
      if (i == 0) {
        rhs[k] = -1.0;
        fixed[static_cast<size_t>(k)] = 1;
        continue;
      }
      if (i == g.n1 - 1) {
        rhs[k] = 1.0;
        fixed[static_cast<size_t>(k)] = 1;
        continue;
      }
      const bool face_b = (j == 0), face_t = (j == g.n2 - 1);
      if ((face_b || face_t) && edge_anchor != nullptr) {
        rhs[k] = std::clamp((*edge_anchor)(i, j), -1.0, 1.0);
        fixed[static_cast<size_t>(k)] = 1;
        continue;
      }
      const double x1 = g.x1(i), x2 = g.x2(j);
      auto sig = spec.sigma_row(x1, x2);
      double s1 = 0.5 * sig[0] * sig[0];
      double s2 = 0.5 * sig[1] * sig[1];
      double b1 = spec.drift1(x1);
      double b2 = spec.drift2_eval(x1, x2);
      double d = rho_hat + 2.0 * s1 / (g.h1 * g.h1);
      double l = -s1 / (g.h1 * g.h1), r = l;
      double b = 0.0, t = 0.0;
      if (std::abs(b1) * g.h1 <= 2.0 * s1) {
        l += b1 / (2.0 * g.h1);
        r += -b1 / (2.0 * g.h1);
      } else if (b1 > 0.0) {
        r += -b1 / g.h1;
        d += b1 / g.h1;
      } else {
        l += b1 / g.h1;
        d += -b1 / g.h1;
      }
      if (face_b || face_t) {
        // one-sided closure: drop the x2 diffusion, keep the drift only when
        // it points into the domain (inflow), so the row stays monotone
        if (face_b && b2 > 0.0) {
          t = -b2 / g.h2;
          d += b2 / g.h2;
        } else if (face_t && b2 < 0.0) {
          b = b2 / g.h2;
          d += -b2 / g.h2;
        }
      } else {
        d += 2.0 * s2 / (g.h2 * g.h2);
        b = -s2 / (g.h2 * g.h2);
        t = b;
        if (std::abs(b2) * g.h2 <= 2.0 * s2) {
          b += b2 / (2.0 * g.h2);
          t += -b2 / (2.0 * g.h2);
        } else if (b2 > 0.0) {
          t += -b2 / g.h2;
          d += b2 / g.h2;
        } else {
          b += b2 / g.h2;
          d += -b2 / g.h2;
        }
      }
      if (!(d > 0.0)) throw DynkinError("game operator lost diagonal dominance");
      cd[k] = d;
      cl[k] = l;
      cr[k] = r;
      cb[k] = b;
      ct[k] = t;
      rhs[k] = hat_h(i, j);
    }
  }

  GameField out;
  out.grid = g;
  out.rho_hat = rho_hat;
  out.U = ScalarField(g);
  std::vector<double>& u = out.U.a;
  for (int j = 0; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i)
      if (fixed[static_cast<size_t>(g.idx(i, j))]) u[static_cast<size_t>(g.idx(i, j))] =
          std::clamp(rhs[g.idx(i, j)], -1.0, 1.0);

  // Over-relaxation tuned for the grid, with a deterministic back-off: the
  // operator is nonsymmetric (upwinded advection, variable volatility), so a
  // factor near 2 can oscillate. When the sweep change stops improving, the
  // factor decays toward plain projected Gauss-Seidel, which is convergent
  // for these M-matrix two-obstacle problems.
  double omega =
      std::min(1.95, 2.0 / (1.0 + std::sin(3.14159265358979323846 / std::max(g.n1, g.n2))));
  const double stop = 1e-11;
  double best_change = std::numeric_limits<double>::infinity();
  int since_best = 0;
  int sweep = 0;
  for (; sweep < max_sweeps; ++sweep) {
    double change = 0.0;
    for (int j = 0; j < g.n2; ++j) {
      for (int i = 1; i < g.n1 - 1; ++i) {
        const int k = g.idx(i, j);
        if (fixed[static_cast<size_t>(k)]) continue;
        double gs = rhs[k] - cl[k] * u[k - 1] - cr[k] * u[k + 1];
        if (cb[k] != 0.0) gs -= cb[k] * u[k - g.n1];
        if (ct[k] != 0.0) gs -= ct[k] * u[k + g.n1];
        gs /= cd[k];
        double cand = std::clamp(u[k] + omega * (gs - u[k]), -1.0, 1.0);
        change = std::max(change, std::abs(cand - u[k]));
        u[k] = cand;
      }
    }
    if (change < stop) break;
    if (change < 0.999 * best_change) {
      best_change = change;
      since_best = 0;
    } else if (++since_best >= 50 && omega > 1.0) {
      omega = 1.0 + 0.5 * (omega - 1.0);
      if (omega < 1.05) omega = 1.0;
      best_change = change;
      since_best = 0;
    }
  }
  if (sweep >= max_sweeps)
    throw DynkinError("projected sweeps did not converge within " + std::to_string(max_sweeps));
  out.sweeps = sweep + 1;

  out.Ux1 = d1(out.U);
  out.hat_h = hat_h;
  out.clamp.assign(static_cast<size_t>(N), 0);
  const double band = 1e-9;
  for (int k = 0; k < N; ++k) {
    if (u[static_cast<size_t>(k)] <= -1.0 + band) out.clamp[static_cast<size_t>(k)] = -1;
    else if (u[static_cast<size_t>(k)] >= 1.0 - band) out.clamp[static_cast<size_t>(k)] = +1;
  }
  // crossing detection works half a cell inside the saturated region: enough
  // to clear interpolation noise while keeping the systematic stop shift small
  out.delta_stop = std::max(1e-6, 0.5 * g.h1 * out.Ux1.sup_abs());
  return out;
}

// Deterministic spread of points strictly between the stopping regions: deep
// nodes (small |U|), away from the box faces, pairwise separated.
inline std::vector<std::array<double, 2>> interior_test_points(const GameField& game,
                                                               int n_points) {
  const Grid2D& g = game.grid;
  const double level = 1.0 - game.delta_stop;
  struct Cand {
    double score, x1, x2;
  };
  std::vector<Cand> cands;
  int m1 = std::max(3, g.n1 / 10), m2 = std::max(3, g.n2 / 10);
  for (int j = m2; j < g.n2 - m2; ++j)
    for (int i = m1; i < g.n1 - m1; ++i)
      if (std::abs(game.U(i, j)) < 0.3 * level)
        cands.push_back({std::abs(game.U(i, j)), g.x1(i), g.x2(j)});
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score < b.score;
    if (a.x1 != b.x1) return a.x1 < b.x1;
    return a.x2 < b.x2;
  });
  const double min_sep = std::min(g.span1(), g.span2()) / 6.0;
  std::vector<std::array<double, 2>> out;
  for (const Cand& c : cands) {
    bool ok = true;
    for (const auto& p : out)
      if (std::hypot(c.x1 - p[0], c.x2 - p[1]) < min_sep) {
        ok = false;
        break;
      }
    if (ok) out.push_back({c.x1, c.x2});
    if (static_cast<int>(out.size()) >= n_points) break;
  }
  if (static_cast<int>(out.size()) < n_points)
    throw DynkinError("could not find enough interior test points between the stopping regions");
  return out;
}

struct ConsistencyReport {
  double sup_diff_interior = 0.0;
  double l2_diff = 0.0;
};

// Cross-check of the two solution routes: game value vs differentiated
// control value, away from the box faces.
inline ConsistencyReport consistency_check(const GameField& game, const ValueField& vf,
                                           int margin = 3) {
  if (!game.grid.same_layout(vf.grid)) throw DynkinError("grids differ");
  const Grid2D& g = game.grid;
  ConsistencyReport r;
  double ss = 0.0;
  std::int64_t n = 0;
  for (int j = margin; j < g.n2 - margin; ++j) {
    for (int i = margin; i < g.n1 - margin; ++i) {
      double d = game.U(i, j) - vf.Vx1(i, j);
      r.sup_diff_interior = std::max(r.sup_diff_interior, std::abs(d));
      ss += d * d;
      ++n;
    }
  }
  r.l2_diff = n > 0 ? std::sqrt(ss / static_cast<double>(n)) : 0.0;
  return r;
}

struct GameMcResult {
  double g_hat = 0.0, se = 0.0;
  // deviations: stopper 1 resp. 2 leaves one cell early; paired differences
  double dev1_minus_ghat = 0.0, se_dev1 = 0.0;
  double dev2_minus_ghat = 0.0, se_dev2 = 0.0;
  double frac_no_stop = 0.0;
  double trunc_bias = 0.0;
  std::int64_t n_paths = 0;
};

namespace dyndet {

inline double interp_clamped(const ScalarField& f, double x, double y) {
  const Grid2D& g = f.grid;
  return interp_bilinear(f, std::clamp(x, g.x1_min, g.x1_max), std::clamp(y, g.x2_min, g.x2_max));
}

}  // namespace dyndet

// Saddle evaluation on the uncontrolled dynamics. One pass per path records
// the first crossing times of four stopping rules (each side, at its level
// and one cell early), then assembles the game payoff for the saddle pair and
// both one-sided deviations with shared noise.
inline GameMcResult mc_game_value(const ProblemSpec& spec, const GameField& game,
                                  std::array<double, 2> x, std::int64_t n_paths, double horizon,
                                  double dt, std::uint64_t seed) {
  const double level = 1.0 - game.delta_stop;
  {
    double u0 = dyndet::interp_clamped(game.U, x[0], x[1]);
    if (!(std::abs(u0) < level)) throw DynkinError("test point is not strictly between the stopping regions");
  }
  const std::int64_t n_steps = static_cast<std::int64_t>(std::ceil(horizon / dt - 1e-9));
  const double sqrt_dt = std::sqrt(dt);
  std::vector<double> disc(static_cast<size_t>(n_steps) + 1);
  for (std::int64_t k = 0; k <= n_steps; ++k)
    disc[static_cast<size_t>(k)] = std::exp(-game.rho_hat * dt * k);

  struct PathOut {
    double g = 0.0, d1 = 0.0, d2 = 0.0;
    bool stopped = false;
  };
  std::vector<PathOut> outs(static_cast<size_t>(n_paths));

  parallel_for_index(n_paths, [&](std::int64_t p) {
    double x1 = x[0], x2 = x[1];
    // rules: 0 = lower normal, 1 = lower early, 2 = upper normal, 3 = upper early
    double tau[4], integ[4], dsc[4];
    bool hit[4] = {false, false, false, false};
    double I = 0.0;
    double g_prev = dyndet::interp_clamped(game.hat_h, x1, x2);  // times disc[0] = 1
    int remaining = 4;
    for (std::int64_t k = 1; k <= n_steps && remaining > 0; ++k) {
      NormalPair z = normal_pair(seed, static_cast<std::uint64_t>(p),
                                 static_cast<std::uint64_t>(k));
      auto sig = spec.sigma_row(x1, x2);
      double n1 = x1 + spec.drift1(x1) * dt + sig[0] * sqrt_dt * z.z1;
      double n2 = x2 + spec.drift2_eval(x1, x2) * dt + sig[1] * sqrt_dt * z.z2;
      if (spec.positive_domain() && (n1 <= 0.0 || n2 <= 0.0)) {
        n1 = x1;
        n2 = x2;
      }
      x1 = n1;
      x2 = n2;
      double gk = disc[static_cast<size_t>(k)] * dyndet::interp_clamped(game.hat_h, x1, x2);
      I += 0.5 * (g_prev + gk) * dt;
      g_prev = gk;
      double u = dyndet::interp_clamped(game.U, x1, x2);
      double cell = game.grid.h1 * std::abs(dyndet::interp_clamped(game.Ux1, x1, x2));
      double t_now = k * dt;
      double d_now = disc[static_cast<size_t>(k)];
      auto trigger = [&](int rule, bool cond) {
        if (!hit[rule] && cond) {
          hit[rule] = true;
          tau[rule] = t_now;
          integ[rule] = I;
          dsc[rule] = d_now;
          --remaining;
        }
      };
      trigger(0, u <= -level);
      trigger(1, u <= -(level - cell));
      trigger(2, u >= level);
      trigger(3, u >= level - cell);
    }
    auto payoff = [&](int lower_rule, int upper_rule) {
      bool h1v = hit[lower_rule], h2v = hit[upper_rule];
      if (h1v && (!h2v || tau[lower_rule] <= tau[upper_rule]))
        return integ[lower_rule] - dsc[lower_rule];
      if (h2v) return integ[upper_rule] + dsc[upper_rule];
      return I;  // truncated: no stop before the horizon
    };
    PathOut o;
    o.g = payoff(0, 2);
    o.d1 = payoff(1, 2);
    o.d2 = payoff(0, 3);
    o.stopped = hit[0] || hit[2];
    outs[static_cast<size_t>(p)] = o;
  });

  GameMcResult r;
  r.n_paths = n_paths;
  r.trunc_bias = std::exp(-game.rho_hat * horizon);
  double n = static_cast<double>(n_paths);
  double sg = 0.0, s1 = 0.0, s2 = 0.0;
  std::int64_t stopped = 0;
  for (const auto& o : outs) {
    sg += o.g;
    s1 += o.d1 - o.g;
    s2 += o.d2 - o.g;
    if (o.stopped) ++stopped;
  }
  r.g_hat = sg / n;
  r.dev1_minus_ghat = s1 / n;
  r.dev2_minus_ghat = s2 / n;
  double vg = 0.0, v1 = 0.0, v2 = 0.0;
  for (const auto& o : outs) {
    vg += (o.g - r.g_hat) * (o.g - r.g_hat);
    v1 += (o.d1 - o.g - r.dev1_minus_ghat) * (o.d1 - o.g - r.dev1_minus_ghat);
    v2 += (o.d2 - o.g - r.dev2_minus_ghat) * (o.d2 - o.g - r.dev2_minus_ghat);
  }
  r.se = n_paths > 1 ? std::sqrt(vg / (n * (n - 1.0))) : 0.0;
  r.se_dev1 = n_paths > 1 ? std::sqrt(v1 / (n * (n - 1.0))) : 0.0;
  r.se_dev2 = n_paths > 1 ? std::sqrt(v2 / (n * (n - 1.0))) : 0.0;
  r.frac_no_stop = 1.0 - static_cast<double>(stopped) / n;
  if (r.frac_no_stop > 0.05)
    throw HorizonTooShortError("more than 5% of game paths never stopped (" +
                               std::to_string(100.0 * r.frac_no_stop) + "%)");
  return r;
}

struct VxxMcResult {
  double mean = 0.0, se = 0.0;
  double frac_no_stop = 0.0;
  std::int64_t n_paths = 0;
};

// Explicit second-derivative representation for the degenerate example:
// discounted integral of hat_h_x1 + hat_h_x2 * b12 (e^{b22 t} - 1)/b22 along
// the uncontrolled path, stopped at the first saturation crossing.
inline VxxMcResult mc_vxx_degenerate(const ProblemSpec& spec, const GameField& game,
                                     const ValueField& vf, std::array<double, 2> x,
                                     std::int64_t n_paths, double horizon, double dt,
                                     std::uint64_t seed) {
  if (spec.sigma_kind != SigmaKind::Degenerate)
    throw DynkinError("explicit second-derivative route applies to the degenerate kind");
  if (!spec.drift2.affine) throw DynkinError("explicit route requires the affine drift form");
  const Grid2D& g = vf.grid;
  ScalarField hh1(g), hh2(g);  // partials of hat_h, coupling through the solved fields
  for (int j = 0; j < g.n2; ++j) {
    for (int i = 0; i < g.n1; ++i) {
      double x1 = g.x1(i), x2 = g.x2(j);
      hh1(i, j) = spec.h_x1x1(x1, x2) + spec.drift2.b12 * vf.Vx1x2(i, j);
      hh2(i, j) = spec.h_x1x2(x1, x2) + spec.drift2.b12 * vf.Vx2x2(i, j);
    }
  }
  const double level = 1.0 - game.delta_stop;
  const std::int64_t n_steps = static_cast<std::int64_t>(std::ceil(horizon / dt - 1e-9));
  const double sqrt_dt = std::sqrt(dt);
  std::vector<double> disc(static_cast<size_t>(n_steps) + 1),
      tw(static_cast<size_t>(n_steps) + 1);
  const double b22 = spec.drift2.b22;
  for (std::int64_t k = 0; k <= n_steps; ++k) {
    double t = dt * k;
    disc[static_cast<size_t>(k)] = std::exp(-spec.rho * t);
    tw[static_cast<size_t>(k)] =
        spec.drift2.b12 * (std::abs(b22) > 1e-14 ? (std::exp(b22 * t) - 1.0) / b22 : t);
  }

  std::vector<double> vals(static_cast<size_t>(n_paths));
  std::vector<std::uint8_t> stopped(static_cast<size_t>(n_paths), 0);
  parallel_for_index(n_paths, [&](std::int64_t p) {
    double x1 = x[0], x2 = x[1];
    double I = 0.0;
    double g_prev = dyndet::interp_clamped(hh1, x1, x2) +
                    tw[0] * dyndet::interp_clamped(hh2, x1, x2);
    for (std::int64_t k = 1; k <= n_steps; ++k) {
      NormalPair z = normal_pair(seed, static_cast<std::uint64_t>(p),
                                 static_cast<std::uint64_t>(k));
      auto sig = spec.sigma_row(x1, x2);
      x1 += spec.drift1(x1) * dt;  // no diffusion in x1 for the degenerate kind
      x2 += spec.drift2_eval(x1, x2) * dt + sig[1] * sqrt_dt * z.z2;
      double gk = disc[static_cast<size_t>(k)] *
                  (dyndet::interp_clamped(hh1, x1, x2) +
                   tw[static_cast<size_t>(k)] * dyndet::interp_clamped(hh2, x1, x2));
      I += 0.5 * (g_prev + gk) * dt;
      g_prev = gk;
      double u = dyndet::interp_clamped(game.U, x1, x2);
      if (u <= -level || u >= level) {
        stopped[static_cast<size_t>(p)] = 1;
        break;
      }
    }
    vals[static_cast<size_t>(p)] = I;
  });

  VxxMcResult r;
  r.n_paths = n_paths;
  double n = static_cast<double>(n_paths);
  double s = 0.0;
  std::int64_t st = 0;
  for (std::int64_t p = 0; p < n_paths; ++p) {
    s += vals[static_cast<size_t>(p)];
    if (stopped[static_cast<size_t>(p)]) ++st;
  }
  r.mean = s / n;
  double v = 0.0;
  for (std::int64_t p = 0; p < n_paths; ++p) {
    double d = vals[static_cast<size_t>(p)] - r.mean;
    v += d * d;
  }
  r.se = n_paths > 1 ? std::sqrt(v / (n * (n - 1.0))) : 0.0;
  r.frac_no_stop = 1.0 - static_cast<double>(st) / n;
  return r;
}

}  // namespace reflect
