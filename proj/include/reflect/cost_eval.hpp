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
#include "reflect/sde.hpp"
#include "reflect/threads.hpp"
#include "reflect/value_field.hpp"

namespace reflect {

struct CostError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct HorizonTooShortError : CostError {
  using CostError::CostError;
};

struct McConfig {
  std::int64_t n_paths = 10000;
  double dt = 1e-3;
  double horizon = 6.0;
  std::uint64_t seed = 1;
};

struct CostEstimate {
  double mean = 0.0;
  double stderr_mean = 0.0;
  double tail_bound = 0.0;
  double mean_running = 0.0;
  double mean_variation = 0.0;
  std::int64_t n_paths = 0;
};

namespace costdet {

inline double sup_h_on_grid(const ProblemSpec& spec, const Grid2D& g) {
  double m = 0.0;
  for (int j = 0; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i) m = std::max(m, std::abs(spec.h(g.x1(i), g.x2(j))));
  return m;
}

inline std::vector<double> discount_table(double rho, double dt, std::int64_t n_steps) {
  std::vector<double> d(static_cast<size_t>(n_steps) + 1);
  for (std::int64_t k = 0; k <= n_steps; ++k) d[static_cast<size_t>(k)] = std::exp(-rho * dt * k);
  return d;
}

struct PathCost {
  double running = 0.0;
  double variation = 0.0;
  double total() const { return running + variation; }
};

// Fold per-path totals into mean / stderr. Always serial and in path order,
// so parallel generation cannot change the result.
inline CostEstimate fold(const std::vector<PathCost>& costs, double tail_bound) {
  CostEstimate e;
  e.n_paths = static_cast<std::int64_t>(costs.size());
  if (costs.empty()) return e;
  double sum = 0.0, sum_r = 0.0, sum_v = 0.0;
  for (const auto& c : costs) {
    sum += c.total();
    sum_r += c.running;
    sum_v += c.variation;
  }
  const double n = static_cast<double>(costs.size());
  e.mean = sum / n;
  e.mean_running = sum_r / n;
  e.mean_variation = sum_v / n;
  double ss = 0.0;
  for (const auto& c : costs) {
    double d = c.total() - e.mean;
    ss += d * d;
  }
  e.stderr_mean = costs.size() > 1 ? std::sqrt(ss / (n * (n - 1.0))) : 0.0;
  e.tail_bound = tail_bound;
  if (e.tail_bound > 0.01 * std::max(std::abs(e.mean), 1e-300))
    throw HorizonTooShortError("discount tail bound " + std::to_string(e.tail_bound) +
                               " exceeds 1% of the estimate " + std::to_string(e.mean));
  return e;
}

}  // namespace costdet

// Discounted cost of one recorded path: trapezoid on e^{-rho t} h(X_t) plus
// the variation charges. Increments are discounted at the left endpoint of
// their step (cadlag convention: charged when they occur), with the t=0
// projection at full weight.
inline costdet::PathCost path_cost(const ProblemSpec& spec, const PathSample& s) {
  costdet::PathCost c;
  if (s.x1.empty()) return c;
  const double dt = s.dt;
  double d_prev = 1.0, h_prev = spec.h(s.x1[0], s.x2[0]);
  c.variation += (s.xi_plus[0] * spec.kappa_plus + s.xi_minus[0] * spec.kappa_minus);
  for (size_t k = 1; k < s.x1.size(); ++k) {
    double d_k = std::exp(-spec.rho * s.times[k]);
    double h_k = spec.h(s.x1[k], s.x2[k]);
    c.running += 0.5 * (d_prev * h_prev + d_k * h_k) * dt;
    double dp = s.xi_plus[k] - s.xi_plus[k - 1];
    double dm = s.xi_minus[k] - s.xi_minus[k - 1];
    c.variation += d_prev * (spec.kappa_plus * dp + spec.kappa_minus * dm);
    d_prev = d_k;
    h_prev = h_k;
  }
  return c;
}

// Contract form: aggregate recorded paths.
inline CostEstimate estimate_J(const ProblemSpec& spec, const std::vector<PathSample>& paths,
                               const Grid2D& grid) {
  std::vector<costdet::PathCost> costs(paths.size());
  for (size_t i = 0; i < paths.size(); ++i) costs[i] = path_cost(spec, paths[i]);
  double horizon = paths.empty() ? 0.0 : paths.front().times.back();
  double tail =
      std::exp(-spec.rho * horizon) * costdet::sup_h_on_grid(spec, grid) / spec.rho;
  return costdet::fold(costs, tail);
}

// Production form: streams paths without storing them. Draws depend only on
// (seed, path index, step index), so runs with equal configs share noise
// across different regions (common random numbers).
inline CostEstimate estimate_J_mc(const ProblemSpec& spec, const WaitingRegion& w,
                                  std::array<double, 2> x0, const McConfig& mc) {
  const std::int64_t n_steps = static_cast<std::int64_t>(std::ceil(mc.horizon / mc.dt - 1e-9));
  const std::vector<double> disc = costdet::discount_table(spec.rho, mc.dt, n_steps);
  std::vector<costdet::PathCost> costs(static_cast<size_t>(mc.n_paths));

  parallel_for_index(mc.n_paths, [&](std::int64_t p) {
    costdet::PathCost c;
    double d_prev = 1.0, h_prev = 0.0;
    sdedet::run_reflected(
        spec, w, x0, mc.horizon, mc.dt, mc.seed, static_cast<std::uint64_t>(p),
        [&](std::int64_t k, double /*t*/, double /*pre1*/, double /*pre2*/, double cx1,
            double cx2, double push, bool /*jumped*/) {
          double d_k = disc[static_cast<size_t>(k)];
          double h_k = spec.h(cx1, cx2);
          if (k == 0) {
            c.variation += std::abs(push) * (push > 0.0 ? spec.kappa_plus : spec.kappa_minus);
          } else {
            c.running += 0.5 * (d_prev * h_prev + d_k * h_k) * mc.dt;
            c.variation +=
                d_prev * std::abs(push) * (push > 0.0 ? spec.kappa_plus : spec.kappa_minus);
          }
          d_prev = d_k;
          h_prev = h_k;
        });
    costs[static_cast<size_t>(p)] = c;
  });
  double tail =
      std::exp(-spec.rho * mc.horizon) * costdet::sup_h_on_grid(spec, w.grid) / spec.rho;
  return costdet::fold(costs, tail);
}

struct EpsGapRow {
  double eps = 0.0;
  double J = 0.0;
  double stderr_mean = 0.0;
  double gap = 0.0;
  double V0 = 0.0;
};

// Reflects at the shrunken region for each eps in the family and reports the
// Monte Carlo cost against the solved value at x0. Same seeds across eps.
inline std::vector<EpsGapRow> eps_gap_study(const ProblemSpec& spec, const ValueField& vf,
                                            const std::vector<double>& eps_family,
                                            std::array<double, 2> x0, const McConfig& mc) {
  if (eps_family.empty()) throw CostError("eps family is empty");
  double eps_max = *std::max_element(eps_family.begin(), eps_family.end());
  WaitingRegion w_max = extract_region(spec, vf, eps_max);
  auto iv = w_max.interval_at(x0[1]);
  if (!(x0[0] > iv[0] && x0[0] < iv[1]))
    throw CostError("start point is outside the most-shrunken waiting region");

  const double v0 = interp_bilinear(vf.V, x0[0], x0[1]);
  std::vector<EpsGapRow> rows;
  rows.reserve(eps_family.size());
  for (double eps : eps_family) {
    WaitingRegion w = extract_region(spec, vf, eps);
    CostEstimate e = estimate_J_mc(spec, w, x0, mc);
    rows.push_back({eps, e.mean, e.stderr_mean, e.mean - v0, v0});
  }
  return rows;
}

}  // namespace reflect
