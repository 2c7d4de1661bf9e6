#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "reflect/model.hpp"
#include "reflect/value_field.hpp"

namespace reflect {

struct RegionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyRowError : RegionError {
  double x2;
  explicit EmptyRowError(double y)
      : RegionError("no waiting interval on row x2 = " + std::to_string(y)), x2(y) {}
};
struct OverlappingRegionsError : RegionError {
  using RegionError::RegionError;
};
struct RegionLookupOutOfRange : RegionError {
  using RegionError::RegionError;
};
struct NotApplicableError : RegionError {
  using RegionError::RegionError;
};

struct RegionRow {
  double x2 = 0.0;
  double l = 0.0, r = 0.0;
  double eps_max = 0.0;   // largest shrink level for which this row stays nonempty
  bool degenerate = false;  // interval empty at the requested shrink level
  bool hits_left_edge = false, hits_right_edge = false;
};

// Waiting region as per-row intervals [l(x2), r(x2)]; rows between grid
// lines interpolate linearly. The region boundary is pushed along +/-e1 only.
struct WaitingRegion {
  double eps = 0.0;
  Grid2D grid;
  std::vector<RegionRow> rows;
  static constexpr int reflection_sign_left = +1;
  static constexpr int reflection_sign_right = -1;

  const RegionRow& row(int j) const { return rows[static_cast<size_t>(j)]; }

  // Interval at arbitrary x2 by linear interpolation between rows.
  std::array<double, 2> interval_at(double x2) const {
    if (!(x2 >= grid.x2_min && x2 <= grid.x2_max))
      throw RegionLookupOutOfRange("x2 = " + std::to_string(x2) + " outside the grid rows");
    double s = (x2 - grid.x2_min) / grid.h2;
    int j = std::min(static_cast<int>(s), grid.n2 - 2);
    double t = s - j;
    const RegionRow& a = rows[static_cast<size_t>(j)];
    const RegionRow& b = rows[static_cast<size_t>(j + 1)];
    if (a.degenerate || b.degenerate)
      throw RegionError("interval lookup on a degenerate (empty) row");
    return {a.l + t * (b.l - a.l), a.r + t * (b.r - a.r)};
  }

  std::vector<std::array<double, 2>> left_polyline() const {
    std::vector<std::array<double, 2>> p;
    for (const auto& r : rows)
      if (!r.degenerate) p.push_back({r.l, r.x2});
    return p;
  }
  std::vector<std::array<double, 2>> right_polyline() const {
    std::vector<std::array<double, 2>> p;
    for (const auto& r : rows)
      if (!r.degenerate) p.push_back({r.r, r.x2});
    return p;
  }
};

namespace regdet {

// Crossing of the scaled squared gradient (g/kappa)^2 through level inside
// the cell [xa, xb] with values ga, gb; linear inverse interpolation in the
// squared variable.
inline double cross(double xa, double xb, double sa, double sb, double level) {
  double t = (sa - level) / (sa - sb);
  t = std::clamp(t, 0.0, 1.0);
  return xa + t * (xb - xa);
}

}  // namespace regdet

// Shrunken waiting region {x : scaled Vx1^2 < 1 - eps}, located row by row by
// inverse interpolation of the squared-gradient level crossing. The
// monotone-increasing mode has no upper gradient bound, so every row extends
// to the right box edge.
inline WaitingRegion extract_region(const ProblemSpec& spec, const ValueField& vf, double eps) {
  if (!(eps >= 0.0 && eps < 1.0)) throw RegionError("eps must lie in [0,1)");
  const Grid2D& g = vf.grid;
  // Stability floor: exactly-solved fields hold |Vx1| = kappa on saturated
  // nodes up to rounding, so a strict cut at 1.0 would flip on 1-ulp noise
  // and spill the row scan into the saturated set. The floor displaces a
  // smooth-fit boundary by only O(sqrt(floor)), far below grid resolution.
  constexpr double kLevelFloor = 1e-9;
  const double level = 1.0 - std::max(eps, kLevelFloor);
  const bool one_sided = spec.mode == ControlMode::MonotoneIncreasing;
  WaitingRegion w;
  w.eps = eps;
  w.grid = g;
  w.rows.resize(static_cast<size_t>(g.n2));

  for (int j = 0; j < g.n2; ++j) {
    RegionRow& row = w.rows[static_cast<size_t>(j)];
    row.x2 = g.x2(j);
    // scaled squared gradient per side: below the interval the lower bound
    // is the binding one, above it the upper bound
    auto s_of = [&](int i) {
      double p = vf.Vx1(i, j);
      double kp = spec.kappa_plus, km = spec.kappa_minus;
      double sl = (p / kp) * (p / kp);
      if (one_sided) return p < 0.0 ? sl : 0.0;
      double su = (p / km) * (p / km);
      return p < 0.0 ? sl : su;
    };
    // longest contiguous run of strictly inside nodes
    int best_a = -1, best_b = -2;
    int a = -1;
    double smin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < g.n1; ++i) {
      double s = s_of(i);
      smin = std::min(smin, s);
      if (s < level) {
        if (a < 0) a = i;
        if (i - a > best_b - best_a) {
          best_a = a;
          best_b = i;
        }
      } else {
        a = -1;
      }
    }
    row.eps_max = 1.0 - smin;
    if (best_a < 0) {
      if (eps == 0.0) throw EmptyRowError(row.x2);
      row.degenerate = true;
      // collapse point: the least-saturated node
      int imin = 0;
      for (int i = 1; i < g.n1; ++i)
        if (s_of(i) < s_of(imin)) imin = i;
      row.l = row.r = g.x1(imin);
      continue;
    }
    if (best_a == 0) {
      row.l = g.x1_min;
      row.hits_left_edge = true;
    } else {
      row.l = regdet::cross(g.x1(best_a - 1), g.x1(best_a), s_of(best_a - 1), s_of(best_a), level);
    }
    if (best_b == g.n1 - 1 || one_sided) {
      row.r = g.x1_max;
      row.hits_right_edge = true;
    } else {
      row.r = regdet::cross(g.x1(best_b), g.x1(best_b + 1), s_of(best_b), s_of(best_b + 1), level);
    }
  }
  return w;
}

struct StopRegions {
  Grid2D grid;
  std::vector<std::uint8_t> i_minus, i_plus;  // node masks
  double delta_stop = 0.0;

  bool in_minus(int i, int j) const { return i_minus[static_cast<size_t>(grid.idx(i, j))] != 0; }
  bool in_plus(int i, int j) const { return i_plus[static_cast<size_t>(grid.idx(i, j))] != 0; }
};

// Saturated-gradient node masks. The threshold widens with both the final
// penalty level and the discrete curvature band: on the grid the |Vx1| = kappa
// set is a band of width ~ h1 * |Vx1x1|, not a curve.
inline StopRegions extract_stop_regions(const ProblemSpec& spec, const ValueField& vf) {
  const Grid2D& g = vf.grid;
  StopRegions s;
  s.grid = g;
  s.delta_stop = std::max(2.0 * vf.eps_final, 3.0 * g.h1 * vf.Vx1x1.sup_abs());
  s.i_minus.assign(static_cast<size_t>(g.size()), 0);
  s.i_plus.assign(static_cast<size_t>(g.size()), 0);
  const bool one_sided = spec.mode == ControlMode::MonotoneIncreasing;
  for (int j = 0; j < g.n2; ++j) {
    for (int i = 0; i < g.n1; ++i) {
      double p = vf.Vx1(i, j);
      bool lo = p <= -spec.kappa_plus + s.delta_stop;
      bool hi = !one_sided && p >= spec.kappa_minus - s.delta_stop;
      if (lo && hi)
        throw OverlappingRegionsError("saturation masks overlap at node (" + std::to_string(i) +
                                      "," + std::to_string(j) + ")");
      s.i_minus[static_cast<size_t>(g.idx(i, j))] = lo ? 1 : 0;
      s.i_plus[static_cast<size_t>(g.idx(i, j))] = hi ? 1 : 0;
    }
  }
  return s;
}

// Push direction on the region boundary: +e1 on the left polyline (gradient
// saturated at -kappa), -e1 on the right.
inline std::array<double, 2> reflection_direction(const WaitingRegion& w, double x1, double x2,
                                                  double tol = -1.0) {
  if (tol < 0.0) tol = 0.5 * w.grid.h1;
  auto iv = w.interval_at(x2);
  double dl = std::abs(x1 - iv[0]), dr = std::abs(x1 - iv[1]);
  if (dl <= tol && dl <= dr) return {+1.0, 0.0};
  if (dr <= tol) return {-1.0, 0.0};
  throw RegionError("point is not on the region boundary");
}

struct FreeBoundaries {
  std::vector<double> x1;      // per column
  std::vector<double> g1, g2;  // NaN where the column misses the mask
  double viol_fraction_g1 = 0.0, viol_fraction_g2 = 0.0;
  double max_overlap = 0.0;  // max over columns of g1 - g2 (<= 0 when disjoint)
};

// Degenerate-diffusion free boundaries: per column, the top of the lower
// saturated set and the bottom of the upper one, located by inverse
// interpolation of Vx1 through the mask thresholds.
inline FreeBoundaries fit_free_boundaries(const ProblemSpec& spec, const ValueField& vf) {
  if (spec.sigma_kind != SigmaKind::Degenerate)
    throw NotApplicableError("free-boundary curves apply to the degenerate kind only");
  const Grid2D& g = vf.grid;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  StopRegions masks = extract_stop_regions(spec, vf);
  const double lo_level = -spec.kappa_plus + masks.delta_stop;
  const double hi_level = spec.kappa_minus - masks.delta_stop;

  FreeBoundaries fb;
  fb.x1.resize(static_cast<size_t>(g.n1));
  fb.g1.assign(static_cast<size_t>(g.n1), nan);
  fb.g2.assign(static_cast<size_t>(g.n1), nan);
  for (int i = 0; i < g.n1; ++i) {
    fb.x1[static_cast<size_t>(i)] = g.x1(i);
    int top_minus = -1, bot_plus = -1;
    for (int j = 0; j < g.n2; ++j) {
      if (masks.in_minus(i, j)) top_minus = j;
      if (masks.in_plus(i, j) && bot_plus < 0) bot_plus = j;
    }
    if (top_minus >= 0) {
      if (top_minus == g.n2 - 1) {
        fb.g1[static_cast<size_t>(i)] = g.x2(g.n2 - 1);
      } else {
        double pa = vf.Vx1(i, top_minus), pb = vf.Vx1(i, top_minus + 1);
        double t = pb == pa ? 0.0 : std::clamp((lo_level - pa) / (pb - pa), 0.0, 1.0);
        fb.g1[static_cast<size_t>(i)] = g.x2(top_minus) + t * g.h2;
      }
    }
    if (bot_plus >= 0) {
      if (bot_plus == 0) {
        fb.g2[static_cast<size_t>(i)] = g.x2(0);
      } else {
        double pa = vf.Vx1(i, bot_plus - 1), pb = vf.Vx1(i, bot_plus);
        double t = pb == pa ? 1.0 : std::clamp((hi_level - pa) / (pb - pa), 0.0, 1.0);
        fb.g2[static_cast<size_t>(i)] = g.x2(bot_plus - 1) + t * g.h2;
      }
    }
  }

  auto viol_fraction = [&](const std::vector<double>& c) {
    int pairs = 0, viol = 0;
    for (size_t i = 0; i + 1 < c.size(); ++i) {
      if (std::isnan(c[i]) || std::isnan(c[i + 1])) continue;
      ++pairs;
      if (c[i + 1] - c[i] > g.h2) ++viol;  // nonincreasing, one-cell slack
    }
    return pairs > 0 ? static_cast<double>(viol) / pairs : 0.0;
  };
  fb.viol_fraction_g1 = viol_fraction(fb.g1);
  fb.viol_fraction_g2 = viol_fraction(fb.g2);
  double mo = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < fb.g1.size(); ++i)
    if (!std::isnan(fb.g1[i]) && !std::isnan(fb.g2[i])) mo = std::max(mo, fb.g1[i] - fb.g2[i]);
  fb.max_overlap = std::isfinite(mo) ? mo : 0.0;
  return fb;
}

}  // namespace reflect
