// End-to-end acceptance gate. Runs the full pipeline on the benchmark model
// suite and prints one PASS/FAIL line per release criterion; exits nonzero if
// any line fails. Criteria cover: gradient-band respect and solve time (1),
// residual scaling under refinement (2), agreement with the separable
// reference (3), the cross-derivative sign structure (4), convexity inside
// the band (5), simulated-cost gaps against the solved value (6), agreement
// between the game route and the differentiated value (7), Monte Carlo saddle
// checks (8), pathwise reflection audits (9), degenerate free-boundary
// structure and curvature (10), asymmetric/one-sided band limits (11), and
// byte-identical reruns (12).

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "reflect/config.hpp"
#include "reflect/cost_eval.hpp"
#include "reflect/dynkin.hpp"
#include "reflect/grid.hpp"
#include "reflect/hjb.hpp"
#include "reflect/model.hpp"
#include "reflect/oracle1d.hpp"
#include "reflect/region.hpp"
#include "reflect/run_config.hpp"
#include "reflect/sde.hpp"
#include "reflect/value_field.hpp"

using namespace reflect;
namespace fs = std::filesystem;

namespace {

struct Bench {
  std::string name;
  ProblemSpec spec;
  Grid2D grid;
  ValueField vf;
  double solve_seconds = 0.0;
};

std::vector<std::pair<std::string, bool>> g_results;

void record(const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] %-12s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  g_results.push_back({name, pass});
}

template <class Fn>
void criterion(const std::string& name, Fn&& fn) {
  try {
    auto [pass, detail] = fn();
    record(name, pass, detail);
  } catch (const std::exception& e) {
    record(name, false, std::string("exception: ") + e.what());
  }
}

std::string num(double v, int prec = 4) {
  std::ostringstream ss;
  ss.precision(prec);
  ss << v;
  return ss.str();
}

double grad_excess(const ProblemSpec& s, const ValueField& vf) {
  double m = 0.0;
  for (int j = 0; j < vf.grid.n2; ++j)
    for (int i = 0; i < vf.grid.n1; ++i) {
      double p = vf.Vx1(i, j);
      m = std::max(m, -p - s.kappa_plus);
      if (s.mode == ControlMode::BoundedVariation) m = std::max(m, p - s.kappa_minus);
    }
  return m;
}

const std::vector<std::string>& model_names() {
  static const std::vector<std::string> n = {"separable", "lq_radial", "lq_diff",
                                             "lq_sum",    "convexform", "geometric",
                                             "degenerate", "asym",      "monotone"};
  return n;
}

std::string config_path(const std::string& name) {
  return std::string(REFLECT_CONFIGS) + "/" + name + ".ini";
}

std::pair<ProblemSpec, Grid2D> load_model(const std::string& name) {
  Config cfg = Config::parse_file(config_path(name));
  ProblemSpec spec = load_problem_spec(cfg);
  Grid2D grid = load_grid(cfg);
  return {spec, grid};
}

Grid2D regrid(const Grid2D& g, int n) {
  return Grid2D::make(n, n, g.x1_min, g.x1_max, g.x2_min, g.x2_max);
}

}  // namespace

int main() {
  std::map<std::string, Bench> suite;
  std::map<std::string, std::string> solve_errors;

  // Shared stage: solve every benchmark once on its declared grid.
  for (const std::string& name : model_names()) {
    try {
      auto [spec, grid] = load_model(name);
      Bench b;
      b.name = name;
      b.spec = spec;
      b.grid = grid;
      auto t0 = std::chrono::steady_clock::now();
      b.vf = solve_hjb(spec, grid);
      b.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      suite.emplace(name, std::move(b));
    } catch (const std::exception& e) {
      solve_errors[name] = e.what();
    }
  }

  // C1: the solved gradient respects the marginal-cost band on every
  // benchmark, within max(10 eps_final, 5 h1), and each solve stays under 60s.
  criterion("C1-band", [&]() -> std::pair<bool, std::string> {
    if (!solve_errors.empty()) {
      std::string d = "solver failed on:";
      for (auto& [n, e] : solve_errors) d += " " + n + " (" + e + ")";
      return {false, d};
    }
    bool ok = true;
    double worst = 0.0;
    std::string worst_name = "-";
    double slowest = 0.0;
    for (const auto& [name, b] : suite) {
      double tol = std::max(10.0 * b.vf.eps_final, 5.0 * b.grid.h1);
      double e = grad_excess(b.spec, b.vf);
      if (e > worst) {
        worst = e;
        worst_name = name;
      }
      slowest = std::max(slowest, b.solve_seconds);
      if (e > tol || b.solve_seconds > 60.0) ok = false;
    }
    return {ok, "max band excess " + num(worst) + " (" + worst_name + "), slowest solve " +
                    num(slowest, 3) + "s"};
  });

  // C2: the interior defect of the penalized stage (eps tied to h1^2) drops
  // by at least 1.5x per halving on the reference model; the constant C in
  // the envelope defect <= C * (h1^2 + eps) is calibrated on that refinement
  // series and must then cover every benchmark at its working resolution.
  // (The sup-norm defect carries an O(h1) truncation term from the cells
  // straddling the gradient-saturation interface, so C absorbs one factor
  // of 1/h at desk scales; the per-halving ratio is the rate content.)
  criterion("C2-residual", [&]() -> std::pair<bool, std::string> {
    auto penalized = [&](const ProblemSpec& spec, const Grid2D& g) {
      double eps = 0.256 * g.h1 * g.h1;
      HjbOptions opt;
      opt.eps_schedule = eps_schedule_down_to(eps);
      opt.exact_limit = false;
      ValueField vf = solve_hjb(spec, g, opt);
      return std::pair<double, double>(sup_interior(vi_residual(spec, vf), 2),
                                       g.h1 * g.h1 + eps);
    };
    auto [spec, grid0] = load_model("separable");
    auto [r65, s65] = penalized(spec, regrid(grid0, 65));
    auto [r129, s129] = penalized(spec, regrid(grid0, 129));
    auto [r257, s257] = penalized(spec, regrid(grid0, 257));
    // 1.5x headroom on the calibrated constant: interface truncation
    // constants are model-dependent, so a single reference-model constant
    // needs slack to be a meaningful uniform envelope.
    double C = 1.5 * std::max({r65 / s65, r129 / s129, r257 / s257});
    bool ok = r65 / r129 >= 1.5 && r129 / r257 >= 1.5;
    double worst_ratio = 0.0;
    std::string worst_name = "-";
    for (const auto& [name, b] : suite) {
      auto [r, sc] = penalized(b.spec, b.grid);
      double q = r / (C * sc);
      if (q > worst_ratio) {
        worst_ratio = q;
        worst_name = name;
      }
      if (q > 1.0) ok = false;
    }
    return {ok, "R = " + num(r65) + " / " + num(r129) + " / " + num(r257) +
                    ", ratios " + num(r65 / r129, 3) + ", " + num(r129 / r257, 3) +
                    ", C = " + num(C, 3) + ", worst bench R/(C s) = " + num(worst_ratio, 3) +
                    " (" + worst_name + ")"};
  });

  // Extra solves shared by C3 and C7.
  std::optional<Bench> sep257;
  try {
    auto [spec, grid0] = load_model("separable");
    Bench b;
    b.name = "separable-257";
    b.spec = spec;
    b.grid = regrid(grid0, 257);
    b.vf = solve_hjb(spec, b.grid);
    sep257 = std::move(b);
  } catch (const std::exception&) {
  }

  // C3: on the separable benchmark the 2D solve agrees with the sum of the
  // 1D references, and the extracted region boundary sits within two cells
  // of the reference free boundary.
  criterion("C3-separable", [&]() -> std::pair<bool, std::string> {
    if (!sep257) return {false, "257x257 solve unavailable"};
    const Bench& b = *sep257;
    ComposedSeparable comp = compose_separable(b.spec, b.grid);
    const Grid2D& g = b.grid;
    int margin = 4;
    double sup_v = 0.0, sup_diff = 0.0;
    for (int j = margin; j < g.n2 - margin; ++j)
      for (int i = margin; i < g.n1 - margin; ++i) {
        sup_v = std::max(sup_v, std::abs(b.vf.V(i, j)));
        sup_diff = std::max(sup_diff, std::abs(b.vf.V(i, j) - comp.field.V(i, j)));
      }
    WaitingRegion w = extract_region(b.spec, b.vf, 0.0);
    double bdry = 0.0;
    for (const auto& row : w.rows) {
      bdry = std::max(bdry, std::abs(row.l - comp.controlled.left_boundary));
      bdry = std::max(bdry, std::abs(row.r - comp.controlled.right_boundary));
    }
    bool ok = sup_diff <= 1e-3 * sup_v && bdry <= 2.0 * g.h1;
    return {ok, "value diff " + num(sup_diff) + " vs " + num(1e-3 * sup_v) +
                    ", boundary err " + num(bdry) + " vs " + num(2.0 * g.h1)};
  });

  // C4: where a pointwise sign claim exists, the coupling term b2_x1 * Vx1x2
  // is nonnegative up to noise on almost every interior node.
  criterion("C4-crosssign", [&]() -> std::pair<bool, std::string> {
    const std::vector<std::string> claimed = {"separable", "asym",      "monotone",
                                              "convexform", "geometric", "degenerate"};
    bool ok = true;
    double worst_frac = 0.0;
    std::string worst_name = "-";
    for (const std::string& name : claimed) {
      auto it = suite.find(name);
      if (it == suite.end()) return {false, "missing solve for " + name};
      const Bench& b = it->second;
      const Grid2D& g = b.grid;
      double sup = 0.0;
      for (int j = 2; j < g.n2 - 2; ++j)
        for (int i = 2; i < g.n1 - 2; ++i) sup = std::max(sup, std::abs(b.vf.Vx1x2(i, j)));
      double tol = 1e-3 * sup;
      std::int64_t viol = 0, total = 0;
      for (int j = 2; j < g.n2 - 2; ++j)
        for (int i = 2; i < g.n1 - 2; ++i) {
          ++total;
          double c = b.spec.drift2.d_x1(g.x1(i)) * b.vf.Vx1x2(i, j);
          if (c < -tol) ++viol;
        }
      double frac = static_cast<double>(viol) / static_cast<double>(total);
      if (frac > worst_frac) {
        worst_frac = frac;
        worst_name = name;
      }
      if (frac > 0.005) ok = false;
    }
    return {ok, "worst violation fraction " + num(worst_frac) + " (" + worst_name + ")"};
  });

  // C5: strict convexity in x1 inside the unsaturated band on every benchmark.
  criterion("C5-convexity", [&]() -> std::pair<bool, std::string> {
    bool ok = !suite.empty() && solve_errors.empty();
    double worst = 1e300;
    std::string worst_name = "-";
    for (const auto& [name, b] : suite) {
      const Grid2D& g = b.grid;
      double m = 1e300;
      for (int j = 1; j < g.n2 - 1; ++j)
        for (int i = 1; i < g.n1 - 1; ++i)
          if (std::abs(b.vf.Vx1(i, j)) < 0.9) m = std::min(m, b.vf.Vx1x1(i, j));
      if (m < worst) {
        worst = m;
        worst_name = name;
      }
      if (!(m > 0.0)) ok = false;
    }
    return {ok, "min in-band Vx1x1 " + num(worst) + " (" + worst_name + ")"};
  });

  // C6: simulated costs of the shrunken-region reflection policies dominate
  // the solved value, decrease as the shrink level vanishes, and stay below
  // the scaled upper envelope.
  criterion("C6-gaps", [&]() -> std::pair<bool, std::string> {
    auto it = suite.find("separable");
    if (it == suite.end()) return {false, "missing separable solve"};
    const Bench& b = it->second;
    McConfig mc{50000, 1e-3, 12.0 / b.spec.rho, 11};
    std::vector<double> family = {0.1, 0.03, 0.01, 0.003, 0.001};
    auto rows = eps_gap_study(b.spec, b.vf, family, {0.5, 0.0}, mc);
    bool ok = true;
    std::string d;
    for (size_t k = 0; k < rows.size(); ++k) {
      const auto& r = rows[k];
      if (r.gap < -3.0 * r.stderr_mean) ok = false;                      // lower bound
      if (r.J > r.V0 / (1.0 - r.eps) + 3.0 * r.stderr_mean) ok = false;  // upper envelope
      if (k > 0) {
        double slack = 2.0 * std::hypot(rows[k - 1].stderr_mean, r.stderr_mean);
        if (r.J > rows[k - 1].J + slack) ok = false;  // monotone in the shrink level
      }
      d += (k ? " " : "") + num(r.gap, 3);
    }
    return {ok, "gaps [" + d + "], se ~" + num(rows.front().stderr_mean, 2)};
  });

  // C7: the stopping-game value agrees with the differentiated control value,
  // tighter under refinement.
  criterion("C7-game", [&]() -> std::pair<bool, std::string> {
    auto it = suite.find("separable");
    auto il = suite.find("lq_sum");
    if (it == suite.end() || il == suite.end() || !sep257)
      return {false, "missing prerequisite solves"};
    auto consistency = [&](const Bench& b, int margin) {
      GameField game = solve_two_obstacle(b.spec, hat_h_field(b.spec, b.vf), b.grid, &b.vf.Vx1);
      return consistency_check(game, b.vf, margin).sup_diff_interior;
    };
    double sep129 = consistency(it->second, 3);
    double sep257v = consistency(*sep257, 6);
    double lq129 = consistency(il->second, 3);
    Bench lq257;
    lq257.spec = il->second.spec;
    lq257.grid = regrid(il->second.grid, 257);
    lq257.vf = solve_hjb(lq257.spec, lq257.grid);
    double lq257v = consistency(lq257, 6);
    bool ok = sep257v <= 5e-3 && lq257v <= 2e-2 && sep129 / sep257v >= 1.5 &&
              lq129 / lq257v >= 1.5;
    return {ok, "separable " + num(sep129) + " -> " + num(sep257v) + ", coupled " + num(lq129) +
                    " -> " + num(lq257v)};
  });

  // C8: Monte Carlo saddle evaluation at three interior points: the game
  // value is reproduced and one-sided early deviations do not profit.
  criterion("C8-saddle", [&]() -> std::pair<bool, std::string> {
    auto it = suite.find("separable");
    if (it == suite.end()) return {false, "missing separable solve"};
    const Bench& b = it->second;
    GameField game = solve_two_obstacle(b.spec, hat_h_field(b.spec, b.vf), b.grid, &b.vf.Vx1);
    auto pts = interior_test_points(game, 3);
    const double dt = 5e-4;
    double sup_u = game.U.sup_abs();
    bool ok = true;
    std::string d;
    for (size_t k = 0; k < pts.size(); ++k) {
      GameMcResult r =
          mc_game_value(b.spec, game, pts[k], 6000, 16.0, dt, 2024 + static_cast<uint64_t>(k));
      double u = interp_bilinear(game.U, pts[k][0], pts[k][1]);
      double tol = 3.0 * r.se + 5.0 * std::sqrt(dt) * sup_u;
      if (std::abs(r.g_hat - u) > tol) ok = false;
      if (r.dev1_minus_ghat > 3.0 * r.se_dev1 + 1e-9) ok = false;
      if (r.dev2_minus_ghat < -3.0 * r.se_dev2 - 1e-9) ok = false;
      d += (k ? " " : "") + num(std::abs(r.g_hat - u), 3) + "/" + num(tol, 3);
    }
    return {ok, "|G-U|/tol " + d};
  });

  // C9: pathwise reflection audit on every benchmark: containment of every
  // committed state, boundary support of the variation, jump endpoints within
  // one cell, and the t=0 jump equal to the metric projection exactly.
  criterion("C9-audit", [&]() -> std::pair<bool, std::string> {
    if (!solve_errors.empty()) return {false, "solver failures upstream"};
    bool ok = true;
    double worst_support = 1.0;
    std::string worst_name = "-";
    for (const auto& [name, b] : suite) {
      WaitingRegion w = extract_region(b.spec, b.vf, 0.01);
      int jc = b.grid.n2 / 2;
      const RegionRow& row = w.row(jc);
      double frac = b.spec.mode == ControlMode::MonotoneIncreasing ? 0.25 : 0.75;
      std::array<double, 2> x0{row.l + frac * (row.r - row.l), row.x2};
      AuditCounts counts;
      for (int p = 0; p < 1000; ++p) {
        PathSample s =
            simulate_reflected(b.spec, w, x0, 1.0, 1e-4, 77, static_cast<uint64_t>(p));
        counts.merge(skorokhod_counts(s, w, b.vf));
      }
      AuditReport rep = make_audit_report(counts);
      if (rep.boundary_support < worst_support) {
        worst_support = rep.boundary_support;
        worst_name = name;
      }
      bool contain = counts.states_in == counts.states_total;
      if (!contain || rep.boundary_support < 0.98 || rep.jump_fraction < 1.0) ok = false;

      // Initial jump from an outside start is the metric projection, exactly.
      double out1 = row.hits_right_edge ? std::max(row.l - 1.0, b.grid.x1_min + 0.05)
                                        : std::min(row.r + 1.0, b.grid.x1_max - 0.05);
      std::array<double, 2> xout{out1, row.x2};
      PathSample s0 = simulate_reflected(b.spec, w, xout, 10.0 * 1e-4, 1e-4, 78, 0);
      ProjectResult pr = project_initial(w, xout);
      if (s0.initial_jump != pr.jump || s0.x1[0] != pr.y[0]) ok = false;
    }
    return {ok, "worst boundary support " + num(worst_support) + " (" + worst_name + ")"};
  });

  // C10: degenerate benchmark: monotone ordered free boundaries and
  // Monte Carlo curvature agreeing with the discrete second derivative.
  criterion("C10-degenerate", [&]() -> std::pair<bool, std::string> {
    auto it = suite.find("degenerate");
    if (it == suite.end()) return {false, "missing degenerate solve"};
    const Bench& b = it->second;
    FreeBoundaries fb = fit_free_boundaries(b.spec, b.vf);
    bool ok = fb.viol_fraction_g1 <= 0.02 && fb.viol_fraction_g2 <= 0.02 &&
              fb.max_overlap <= 1e-9;
    GameField game = solve_two_obstacle(b.spec, hat_h_field(b.spec, b.vf), b.grid, &b.vf.Vx1);
    auto pts = interior_test_points(game, 3);
    std::string d = "fb viol " + num(fb.viol_fraction_g1, 3) + "/" + num(fb.viol_fraction_g2, 3);
    for (size_t k = 0; k < pts.size(); ++k) {
      VxxMcResult r = mc_vxx_degenerate(b.spec, game, b.vf, pts[k], 150, 12.0, 5e-4,
                                        55 + static_cast<uint64_t>(k));
      double ref = interp_bilinear(b.vf.Vx1x1, pts[k][0], pts[k][1]);
      if (r.mean < -3.0 * r.se) ok = false;
      if (std::abs(r.mean - ref) > 3.0 * r.se) ok = false;
      d += " |" + num(r.mean, 3) + " vs " + num(ref, 3) + " se " + num(r.se, 2) + "|";
    }
    return {ok, d};
  });

  // C11: asymmetric marginal costs shift the band to [-kappa+, kappa-]; the
  // one-sided mode keeps only the lower limit and genuinely exceeds +1.
  criterion("C11-modes", [&]() -> std::pair<bool, std::string> {
    auto ia = suite.find("asym");
    auto im = suite.find("monotone");
    if (ia == suite.end() || im == suite.end()) return {false, "missing solves"};
    auto minmax = [](const ValueField& vf) {
      double lo = 1e300, hi = -1e300;
      for (double v : vf.Vx1.a) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      return std::pair<double, double>(lo, hi);
    };
    auto [alo, ahi] = minmax(ia->second.vf);
    auto [mlo, mhi] = minmax(im->second.vf);
    double tol_a = std::max(10.0 * ia->second.vf.eps_final, 5.0 * ia->second.grid.h1);
    double tol_m = std::max(10.0 * im->second.vf.eps_final, 5.0 * im->second.grid.h1);
    bool ok = alo >= -1.0 - tol_a && ahi <= 2.0 + tol_a && ahi > 1.0 && mlo >= -1.0 - tol_m &&
              mhi > 1.0;
    return {ok, "asym Vx1 in [" + num(alo, 3) + ", " + num(ahi, 3) + "], monotone in [" +
                    num(mlo, 3) + ", " + num(mhi, 3) + "]"};
  });

  // C12: two identical CLI suite runs produce byte-identical artifacts
  // (manifests carry wall times and are exempt).
  criterion("C12-determinism", [&]() -> std::pair<bool, std::string> {
    fs::path a = fs::current_path() / "acc_bench_a";
    fs::path bdir = fs::current_path() / "acc_bench_b";
    fs::remove_all(a);
    fs::remove_all(bdir);
    std::string base = std::string("\"") + REFLECT_TOOL + "\" bench \"" + REFLECT_CONFIGS +
                       "\" --grid 65x65 --paths 500 --audit-paths 200 --seed 1 --out ";
    std::string cmd_a = base + "\"" + a.string() + "\" > /dev/null 2>&1";
    std::string cmd_b = base + "\"" + bdir.string() + "\" > /dev/null 2>&1";
    if (std::system(cmd_a.c_str()) != 0) return {false, "first suite run failed"};
    if (std::system(cmd_b.c_str()) != 0) return {false, "second suite run failed"};

    auto listing = [](const fs::path& root) {
      std::set<std::string> rel;
      for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) rel.insert(fs::relative(e.path(), root).string());
      return rel;
    };
    auto la = listing(a), lb = listing(bdir);
    if (la != lb) return {false, "differing artifact sets"};
    int compared = 0;
    for (const std::string& rel : la) {
      if (fs::path(rel).filename() == "manifest.json") continue;
      std::ifstream fa(a / rel, std::ios::binary), fb(bdir / rel, std::ios::binary);
      std::stringstream sa, sb;
      sa << fa.rdbuf();
      sb << fb.rdbuf();
      if (sa.str() != sb.str()) return {false, "byte difference in " + rel};
      ++compared;
    }
    return {compared > 0, num(compared, 6) + " artifacts byte-identical across reruns"};
  });

  int fails = 0;
  for (const auto& [name, pass] : g_results)
    if (!pass) ++fails;
  std::printf("%d/%zu criteria passed\n", static_cast<int>(g_results.size()) - fails,
              g_results.size());
  return fails == 0 ? 0 : 1;
}
