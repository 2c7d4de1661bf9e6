#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "reflect/model.hpp"
#include "reflect/region.hpp"
#include "reflect/rng.hpp"
#include "reflect/value_field.hpp"

namespace reflect {

struct SdeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StabilityViolationError : SdeError {
  using SdeError::SdeError;
};

struct Jump {
  double t;
  double from_x1, to_x1;
  double x2;
};

struct PathSample {
  double dt = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t path_index = 0;
  std::vector<double> times, x1, x2;
  std::vector<double> v, xi, xi_plus, xi_minus;  // cumulative; v = xi_plus - xi_minus
  std::vector<Jump> jumps;                       // pushes larger than two cells, after t=0
  double initial_jump = 0.0;                     // signed t=0 projection displacement
  std::array<double, 2> x0_requested{0.0, 0.0};
  std::int64_t rejected_steps = 0;
  std::int64_t steps = 0;
};

struct ProjectResult {
  std::array<double, 2> y;
  double jump;  // signed displacement y1 - x0_1
};

// Metric projection of the start point onto the row interval, along e1.
inline ProjectResult project_initial(const WaitingRegion& w, std::array<double, 2> x0) {
  auto iv = w.interval_at(x0[1]);
  double y1 = std::clamp(x0[0], iv[0], iv[1]);
  return {{y1, x0[1]}, y1 - x0[0]};
}

// Largest volatility entry over the grid box, for the dt stability bound.
inline double sigma_max_on_box(const ProblemSpec& spec, const Grid2D& g) {
  switch (spec.sigma_kind) {
    case SigmaKind::Constant:
      return std::abs(spec.sigma);
    case SigmaKind::Linear:
      return std::abs(spec.sigma) *
             std::max({std::abs(g.x1_min), std::abs(g.x1_max), std::abs(g.x2_min),
                       std::abs(g.x2_max)});
    case SigmaKind::Degenerate:
      return std::abs(spec.sigma);
  }
  return std::abs(spec.sigma);
}

namespace sdedet {

// One projected Euler path, streamed to a visitor. The visitor sees each
// committed step:
//   visit(k, t, pre1, pre2, x1, x2, push, jumped)
// where (pre1, pre2) is the pre-push proposal, (x1, x2) the committed state
// and push the signed e1-correction applied (zero off the boundary). k = 0
// reports the initial projection with pre = the requested start point.
template <class Visitor>
inline std::int64_t run_reflected(const ProblemSpec& spec, const WaitingRegion& w,
                                  std::array<double, 2> x0, double horizon, double dt,
                                  std::uint64_t seed, std::uint64_t path_index, Visitor&& visit) {
  if (!(dt > 0.0) || !(horizon > 0.0)) throw SdeError("horizon and dt must be positive");
  const double bound = w.grid.h1 * w.grid.h1 /
                       (2.0 * std::max(1e-300, sigma_max_on_box(spec, w.grid) *
                                                   sigma_max_on_box(spec, w.grid)));
  if (dt > bound * (1.0 + 1e-12))
    throw SdeError("dt exceeds the stability bound h1^2 / (2 sigma_max^2)");

  const std::int64_t n_steps = static_cast<std::int64_t>(std::ceil(horizon / dt - 1e-9));
  const double sqrt_dt = std::sqrt(dt);
  const bool positive = spec.positive_domain();

  ProjectResult p0 = project_initial(w, x0);
  double x1 = p0.y[0], x2 = p0.y[1];
  visit(static_cast<std::int64_t>(0), 0.0, x0[0], x0[1], x1, x2, p0.jump, false);

  std::int64_t rejected = 0;
  for (std::int64_t k = 1; k <= n_steps; ++k) {
    NormalPair z = normal_pair(seed, path_index, static_cast<std::uint64_t>(k));
    auto sig = spec.sigma_row(x1, x2);
    double p1 = x1 + spec.drift1(x1) * dt + sig[0] * sqrt_dt * z.z1;
    double p2 = x2 + spec.drift2_eval(x1, x2) * dt + sig[1] * sqrt_dt * z.z2;
    if (positive && (p1 <= 0.0 || p2 <= 0.0)) {
      ++rejected;
      p1 = x1;
      p2 = x2;
    }
    // The uncontrolled coordinate may rarely wander past the last tabulated
    // row; extend the region constantly beyond the edge rows so long-horizon
    // Monte Carlo runs stay defined (the state itself is not clamped).
    auto iv = w.interval_at(std::clamp(p2, w.grid.x2_min, w.grid.x2_max));
    double push = 0.0;
    double c1 = p1;
    if (p1 < iv[0]) {
      push = iv[0] - p1;
      c1 = iv[0];
    } else if (p1 > iv[1]) {
      push = iv[1] - p1;
      c1 = iv[1];
    }
    bool jumped = std::abs(push) > 2.0 * w.grid.h1;
    x1 = c1;
    x2 = p2;
    visit(k, k * dt, p1, p2, x1, x2, push, jumped);
  }
  if (rejected > 0 &&
      static_cast<double>(rejected) > 0.01 * static_cast<double>(n_steps))
    throw StabilityViolationError("axis-crossing rejections exceeded 1% of steps (" +
                                  std::to_string(rejected) + " of " + std::to_string(n_steps) +
                                  ")");
  return rejected;
}

}  // namespace sdedet

// Full path recording, per the splitting scheme: Euler proposal, then
// projection onto the row interval at the proposed x2.
inline PathSample simulate_reflected(const ProblemSpec& spec, const WaitingRegion& w,
                                     std::array<double, 2> x0, double horizon, double dt,
                                     std::uint64_t seed, std::uint64_t path_index = 0) {
  if (!(dt > 0.0) || !(horizon > 0.0)) throw SdeError("horizon and dt must be positive");
  PathSample s;
  s.dt = dt;
  s.seed = seed;
  s.path_index = path_index;
  s.x0_requested = x0;
  const std::int64_t n_steps = static_cast<std::int64_t>(std::ceil(horizon / dt - 1e-9));
  s.times.reserve(static_cast<size_t>(n_steps) + 1);
  s.x1.reserve(static_cast<size_t>(n_steps) + 1);
  s.x2.reserve(static_cast<size_t>(n_steps) + 1);
  s.v.reserve(static_cast<size_t>(n_steps) + 1);
  s.xi.reserve(static_cast<size_t>(n_steps) + 1);
  s.xi_plus.reserve(static_cast<size_t>(n_steps) + 1);
  s.xi_minus.reserve(static_cast<size_t>(n_steps) + 1);

  double v = 0.0, xi = 0.0, xp = 0.0, xm = 0.0;
  s.rejected_steps = sdedet::run_reflected(
      spec, w, x0, horizon, dt, seed, path_index,
      [&](std::int64_t k, double t, double pre1, double /*pre2*/, double cx1, double cx2,
          double push, bool jumped) {
        v += push;
        xi += std::abs(push);
        if (push > 0.0) xp += push;
        if (push < 0.0) xm -= push;
        if (k == 0) {
          s.initial_jump = push;
        } else if (jumped) {
          s.jumps.push_back({t, pre1, cx1, cx2});
        }
        s.times.push_back(t);
        s.x1.push_back(cx1);
        s.x2.push_back(cx2);
        s.v.push_back(v);
        s.xi.push_back(xi);
        s.xi_plus.push_back(xp);
        s.xi_minus.push_back(xm);
      });
  s.steps = n_steps;
  return s;
}

struct AuditCounts {
  std::int64_t states_in = 0, states_total = 0;
  double mass_ok = 0.0, mass_total = 0.0;
  std::int64_t jumps_ok = 0, jumps_total = 0;

  void merge(const AuditCounts& o) {
    states_in += o.states_in;
    states_total += o.states_total;
    mass_ok += o.mass_ok;
    mass_total += o.mass_total;
    jumps_ok += o.jumps_ok;
    jumps_total += o.jumps_total;
  }
};

struct AuditReport {
  double containment = 0.0;       // fraction of committed states inside the closed region
  double boundary_support = 0.0;  // |v|-mass fraction with pre-push state on the boundary band
                                  // and push sign opposite to the gradient sign
  double jump_fraction = 0.0;     // fraction of jumps with both endpoints near the boundary
  AuditCounts counts;

  static constexpr double kContainmentThreshold = 0.999;
  static constexpr double kBoundarySupportThreshold = 0.98;
  static constexpr double kJumpThreshold = 1.0;

  bool pass() const {
    return containment >= kContainmentThreshold &&
           boundary_support >= kBoundarySupportThreshold && jump_fraction >= kJumpThreshold;
  }
};

namespace sdedet {

// Distance from a point to the region's boundary polylines (both sides).
inline double boundary_distance(const WaitingRegion& w, double x1, double x2) {
  auto seg_dist = [](double px, double py, double ax, double ay, double bx, double by) {
    double vx = bx - ax, vy = by - ay;
    double L2 = vx * vx + vy * vy;
    double t = L2 > 0.0 ? std::clamp(((px - ax) * vx + (py - ay) * vy) / L2, 0.0, 1.0) : 0.0;
    double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    return std::sqrt(dx * dx + dy * dy);
  };
  double best = std::numeric_limits<double>::infinity();
  const auto& rows = w.rows;
  for (size_t j = 0; j + 1 < rows.size(); ++j) {
    const RegionRow &a = rows[j], &b = rows[j + 1];
    if (a.degenerate || b.degenerate) continue;
    best = std::min(best, seg_dist(x1, x2, a.l, a.x2, b.l, b.x2));
    best = std::min(best, seg_dist(x1, x2, a.r, a.x2, b.r, b.x2));
  }
  return best;
}

inline double clamped_vx1(const ValueField& vf, double x1, double x2) {
  const Grid2D& g = vf.grid;
  double cx = std::clamp(x1, g.x1_min, g.x1_max);
  double cy = std::clamp(x2, g.x2_min, g.x2_max);
  return interp_bilinear(vf.Vx1, cx, cy);
}

}  // namespace sdedet

// Pathwise audit of the three reflection conditions: containment of the
// committed states, boundary support of the variation measure (with the push
// sign opposing the gradient sign), and jump endpoints on the boundary. The
// pre-push state of step k is reconstructed exactly from the stored sample:
// the push was applied along e1 after the Euler proposal.
inline AuditCounts skorokhod_counts(const PathSample& s, const WaitingRegion& w,
                                    const ValueField& vf) {
  AuditCounts c;
  const double tol = 1e-9 * (1.0 + w.grid.span1());
  const double cell = w.grid.h1;
  const double diag = std::sqrt(w.grid.h1 * w.grid.h1 + w.grid.h2 * w.grid.h2);
  for (size_t k = 0; k < s.x1.size(); ++k) {
    ++c.states_total;
    // Same constant extension beyond the edge rows as the simulator uses.
    auto iv = w.interval_at(std::clamp(s.x2[k], w.grid.x2_min, w.grid.x2_max));
    if (s.x1[k] >= iv[0] - tol && s.x1[k] <= iv[1] + tol) ++c.states_in;
    if (k == 0) continue;  // the t=0 projection is audited separately
    double dv = s.v[k] - s.v[k - 1];
    if (dv == 0.0) continue;
    double mass = std::abs(dv);
    c.mass_total += mass;
    double pre1 = s.x1[k] - dv;  // pre-push proposal; x2 unchanged by the push
    double pre2 = s.x2[k];
    double dist = dv > 0.0 ? std::abs(pre1 - iv[0]) : std::abs(pre1 - iv[1]);
    bool near = dist <= cell;
    bool sign_ok = dv * sdedet::clamped_vx1(vf, pre1, pre2) < 0.0;
    if (near && sign_ok) c.mass_ok += mass;
  }
  for (const Jump& j : s.jumps) {
    ++c.jumps_total;
    double d_from = sdedet::boundary_distance(w, j.from_x1, j.x2);
    double d_to = sdedet::boundary_distance(w, j.to_x1, j.x2);
    if (d_from <= diag && d_to <= diag) ++c.jumps_ok;
  }
  return c;
}

inline AuditReport make_audit_report(const AuditCounts& c) {
  AuditReport r;
  r.counts = c;
  r.containment = c.states_total > 0
                      ? static_cast<double>(c.states_in) / static_cast<double>(c.states_total)
                      : 1.0;
  r.boundary_support = c.mass_total > 0.0 ? c.mass_ok / c.mass_total : 1.0;
  r.jump_fraction = c.jumps_total > 0
                        ? static_cast<double>(c.jumps_ok) / static_cast<double>(c.jumps_total)
                        : 1.0;
  return r;
}

inline AuditReport verify_skorokhod_conditions(const PathSample& s, const WaitingRegion& w,
                                               const ValueField& vf) {
  return make_audit_report(skorokhod_counts(s, w, vf));
}

}  // namespace reflect
