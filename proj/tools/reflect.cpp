// Command-line front end: parse a problem config, run the requested pipeline
// stage (validate / solve / region / simulate / cost / eps-study / dynkin /
// oracle-check / bench), and emit CSV/JSON artifacts plus a reproducibility
// manifest. All numeric output is printed with %.17g so reruns with equal
// inputs are byte-identical; wall-clock times go only into manifest.json.

#include <cxxabi.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

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

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace reflect;

static constexpr const char* kToolVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Small utilities
// ---------------------------------------------------------------------------

static std::string exception_type(const std::exception& e) {
  int status = 0;
  char* p = abi::__cxa_demangle(typeid(e).name(), nullptr, nullptr, &status);
  std::string s = (status == 0 && p) ? p : typeid(e).name();
  std::free(p);
  const std::string ns = "reflect::";
  if (s.rfind(ns, 0) == 0) s = s.substr(ns.size());
  return s;
}

struct StageClock {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double lap() {
    auto t1 = std::chrono::steady_clock::now();
    double s = std::chrono::duration<double>(t1 - t0).count();
    t0 = t1;
    return s;
  }
};

static std::string g17(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

static void write_json_file(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot open output file: " + p.string());
  out << j.dump(2) << '\n';
}

static void write_text_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot open output file: " + p.string());
  out << text;
}

// ---------------------------------------------------------------------------
// Shared run setup
// ---------------------------------------------------------------------------

struct CommonFlags {
  std::string config;
  std::string out = "out";
  std::string grid;  // "N1xN2" override
  std::string box;   // "x1_min,x1_max,x2_min,x2_max" override
  std::vector<double> eps_schedule;
  std::vector<double> eta_schedule;
  double eps_final = -1.0;
  bool no_exact_limit = false;
};

struct RunContext {
  Config cfg;
  ProblemSpec spec;
  Grid2D grid;
  std::string config_path;
};

static RunContext make_context(const CommonFlags& f) {
  Config cfg = Config::parse_file(f.config);
  ProblemSpec spec = load_problem_spec(cfg);
  Grid2D g = load_grid(cfg);
  if (!f.grid.empty()) {
    int n1 = 0, n2 = 0;
    if (std::sscanf(f.grid.c_str(), "%dx%d", &n1, &n2) != 2)
      throw ConfigError("--grid must look like 129x129");
    g = Grid2D::make(n1, n2, g.x1_min, g.x1_max, g.x2_min, g.x2_max);
  }
  if (!f.box.empty()) {
    double a = 0, b = 0, c = 0, d = 0;
    if (std::sscanf(f.box.c_str(), "%lf,%lf,%lf,%lf", &a, &b, &c, &d) != 4)
      throw ConfigError("--box must look like x1_min,x1_max,x2_min,x2_max");
    g = Grid2D::make(g.n1, g.n2, a, b, c, d);
  }
  cfg.reject_unknown_keys();
  return {std::move(cfg), spec, g, f.config};
}

static HjbOptions hjb_options(const CommonFlags& f) {
  HjbOptions o;
  if (f.eps_final > 0.0) o.eps_schedule = eps_schedule_down_to(f.eps_final);
  if (!f.eps_schedule.empty()) o.eps_schedule = f.eps_schedule;
  if (!f.eta_schedule.empty()) o.eta_schedule = f.eta_schedule;
  o.exact_limit = !f.no_exact_limit;
  return o;
}

static json grid_json(const Grid2D& g) {
  json j;
  j["n1"] = g.n1;
  j["n2"] = g.n2;
  j["x1_min"] = g.x1_min;
  j["x1_max"] = g.x1_max;
  j["x2_min"] = g.x2_min;
  j["x2_max"] = g.x2_max;
  j["h1"] = g.h1;
  j["h2"] = g.h2;
  return j;
}

static json manifest_base(const RunContext& rc, const std::string& sub,
                          const HjbOptions* hopt = nullptr) {
  json j;
  j["tool"] = "reflect";
  j["version"] = kToolVersion;
  j["subcommand"] = sub;
  j["config"] = rc.config_path;
  j["spec_hash"] = fnv1a_hex(rc.cfg.raw_text());
  j["grid"] = grid_json(rc.grid);
  if (hopt) {
    j["eps_schedule"] = hopt->eps_schedule;
    if (rc.spec.sigma_kind == SigmaKind::Degenerate) j["eta_schedule"] = hopt->eta_schedule;
    j["exact_limit"] = hopt->exact_limit;
    j["tol_scale"] = hopt->tol_scale;
  }
  return j;
}

// Largest violation of the gradient band [-kappa_plus, kappa_minus] (lower
// bound only in the monotone control mode); zero when the band holds.
static double gradient_excess(const ProblemSpec& s, const ValueField& vf) {
  double m = 0.0;
  const Grid2D& g = vf.grid;
  for (int j = 0; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i) {
      double p = vf.Vx1(i, j);
      m = std::max(m, -p - s.kappa_plus);
      if (s.mode == ControlMode::BoundedVariation) m = std::max(m, p - s.kappa_minus);
    }
  return m;
}

// Smallest second x1-derivative over nodes where the gradient is clearly
// unsaturated (inside the waiting band).
static double min_vxx_band(const ProblemSpec& s, const ValueField& vf, double band = 0.9) {
  const Grid2D& g = vf.grid;
  double m = std::numeric_limits<double>::infinity();
  for (int j = 1; j < g.n2 - 1; ++j)
    for (int i = 1; i < g.n1 - 1; ++i) {
      double p = vf.Vx1(i, j);
      double lo = -band * s.kappa_plus, hi = band * s.kappa_minus;
      if (p > lo && p < hi) m = std::min(m, vf.Vx1x1(i, j));
    }
  return m;
}

static json validation_json(const ValidationReport& rep) {
  json j;
  json items = json::array();
  int n_fail = 0, n_relaxed = 0;
  for (const auto& it : rep.items) {
    items.push_back({{"name", it.name}, {"status", to_string(it.status)}, {"detail", it.detail}});
    if (it.status == CheckStatus::Fail) ++n_fail;
    if (it.status == CheckStatus::Relaxed) ++n_relaxed;
  }
  j["items"] = items;
  j["n_fail"] = n_fail;
  j["n_relaxed"] = n_relaxed;
  j["L_bar"] = rep.L_bar;
  j["rho_star"] = rep.rho_star;
  j["rho_threshold"] = rep.rho_threshold;
  if (rep.x1_star)
    j["x1_star"] = *rep.x1_star;
  else
    j["x1_star"] = nullptr;
  return j;
}

static void write_region_csv(const fs::path& p, const WaitingRegion& w) {
  std::string s = "x2,l,r,eps_max,degenerate,hits_left_edge,hits_right_edge\n";
  for (const auto& row : w.rows) {
    s += g17(row.x2) + "," + g17(row.l) + "," + g17(row.r) + "," + g17(row.eps_max) + "," +
         (row.degenerate ? "1" : "0") + "," + (row.hits_left_edge ? "1" : "0") + "," +
         (row.hits_right_edge ? "1" : "0") + "\n";
  }
  write_text_file(p, s);
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

static int cmd_validate(const CommonFlags& f) {
  RunContext rc = make_context(f);
  fs::create_directories(f.out);
  StageClock ck;
  Box2D box{rc.grid.x1_min, rc.grid.x1_max, rc.grid.x2_min, rc.grid.x2_max};
  ValidationReport rep = validate_assumptions(rc.spec, box);
  write_json_file(fs::path(f.out) / "validate.json", validation_json(rep));
  json m = manifest_base(rc, "validate");
  m["wall_times"] = {{"validate", ck.lap()}};
  write_json_file(fs::path(f.out) / "manifest.json", m);
  for (const auto& it : rep.items)
    std::cout << it.name << ": " << to_string(it.status) << " (" << it.detail << ")\n";
  return rep.any_fail() ? 2 : 0;
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

static ValueField run_solve(const RunContext& rc, const HjbOptions& hopt, HjbStats* stats) {
  return solve_hjb(rc.spec, rc.grid, hopt, stats);
}

static json stats_json(const HjbStats& st) {
  json j;
  j["newton_iterations"] = st.newton_iterations;
  j["picard_rounds"] = st.picard_rounds;
  j["policy_iterations"] = st.policy_iterations;
  j["final_residual"] = st.final_residual;
  j["eps_used"] = st.eps_used;
  j["eta_used"] = st.eta_used;
  return j;
}

static int cmd_solve(const CommonFlags& f) {
  RunContext rc = make_context(f);
  fs::create_directories(f.out);
  HjbOptions hopt = hjb_options(f);
  HjbStats stats;
  StageClock ck;
  ValueField vf = run_solve(rc, hopt, &stats);
  double t_solve = ck.lap();
  write_fields_csv((fs::path(f.out) / "value.csv").string(),
                   {{"V", &vf.V},
                    {"Vx1", &vf.Vx1},
                    {"Vx2", &vf.Vx2},
                    {"Vx1x1", &vf.Vx1x1},
                    {"Vx2x2", &vf.Vx2x2},
                    {"Vx1x2", &vf.Vx1x2}});
  ScalarField resid = vi_residual(rc.spec, vf);
  write_field_csv((fs::path(f.out) / "residual.csv").string(), resid, "residual");
  double t_io = ck.lap();

  json m = manifest_base(rc, "solve", &hopt);
  m["eps_final"] = hopt.eps_schedule.back();
  m["stats"] = stats_json(stats);
  m["gradient_excess"] = gradient_excess(rc.spec, vf);
  m["vi_residual_interior"] = sup_interior(resid, 2);
  m["wall_times"] = {{"solve", t_solve}, {"write", t_io}};
  write_json_file(fs::path(f.out) / "manifest.json", m);
  std::cout << "solved " << rc.grid.n1 << "x" << rc.grid.n2
            << ": gradient_excess = " << m["gradient_excess"].get<double>()
            << ", interior residual = " << m["vi_residual_interior"].get<double>() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// region
// ---------------------------------------------------------------------------

static int cmd_region(const CommonFlags& f, double eps) {
  RunContext rc = make_context(f);
  fs::create_directories(f.out);
  HjbOptions hopt = hjb_options(f);
  StageClock ck;
  ValueField vf = run_solve(rc, hopt, nullptr);
  double t_solve = ck.lap();
  WaitingRegion w = extract_region(rc.spec, vf, eps);
  write_region_csv(fs::path(f.out) / "region.csv", w);

  json m = manifest_base(rc, "region", &hopt);
  m["eps"] = eps;
  if (rc.spec.sigma_kind == SigmaKind::Degenerate) {
    FreeBoundaries fb = fit_free_boundaries(rc.spec, vf);
    std::string s = "x1,g1,g2\n";
    for (size_t i = 0; i < fb.x1.size(); ++i)
      s += g17(fb.x1[i]) + "," + g17(fb.g1[i]) + "," + g17(fb.g2[i]) + "\n";
    write_text_file(fs::path(f.out) / "freeboundary.csv", s);
    m["free_boundaries"] = {{"viol_fraction_g1", fb.viol_fraction_g1},
                            {"viol_fraction_g2", fb.viol_fraction_g2},
                            {"max_overlap", fb.max_overlap}};
  }
  m["wall_times"] = {{"solve", t_solve}, {"region", ck.lap()}};
  write_json_file(fs::path(f.out) / "manifest.json", m);
  return 0;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct McFlags {
  long paths = 4;
  double dt = 1e-3;
  double horizon = 1.0;
  unsigned long long seed = 1;
  std::vector<double> x0;  // empty = box center
  long stride = 1;
  double eps = 0.01;
};

static std::array<double, 2> start_point(const McFlags& mf, const Grid2D& g) {
  if (mf.x0.size() == 2) return {mf.x0[0], mf.x0[1]};
  if (!mf.x0.empty()) throw ConfigError("--x0 needs exactly two numbers");
  return {0.5 * (g.x1_min + g.x1_max), 0.5 * (g.x2_min + g.x2_max)};
}

static int cmd_simulate(const CommonFlags& f, const McFlags& mf) {
  RunContext rc = make_context(f);
  fs::create_directories(f.out);
  HjbOptions hopt = hjb_options(f);
  StageClock ck;
  ValueField vf = run_solve(rc, hopt, nullptr);
  double t_solve = ck.lap();
  WaitingRegion w = extract_region(rc.spec, vf, mf.eps);
  std::array<double, 2> x0 = start_point(mf, rc.grid);

  std::ofstream out(fs::path(f.out) / "paths.csv");
  if (!out) throw std::runtime_error("cannot open paths.csv");
  out << "path,step,t,x1,x2,v,xi,xi_plus,xi_minus\n";
  AuditCounts total;
  double initial_jump0 = 0.0;
  std::int64_t rejected = 0;
  for (long p = 0; p < mf.paths; ++p) {
    PathSample s = simulate_reflected(rc.spec, w, x0, mf.horizon, mf.dt, mf.seed,
                                      static_cast<std::uint64_t>(p));
    if (p == 0) initial_jump0 = s.initial_jump;
    rejected += s.rejected_steps;
    for (size_t k = 0; k < s.x1.size(); ++k) {
      if (k % static_cast<size_t>(mf.stride) != 0 && k + 1 != s.x1.size()) continue;
      out << p << ',' << k << ',' << g17(s.times[k]) << ',' << g17(s.x1[k]) << ','
          << g17(s.x2[k]) << ',' << g17(s.v[k]) << ',' << g17(s.xi[k]) << ','
          << g17(s.xi_plus[k]) << ',' << g17(s.xi_minus[k]) << '\n';
    }
    total.merge(skorokhod_counts(s, w, vf));
  }
  out.close();
  AuditReport ar = make_audit_report(total);
  ProjectResult pr = project_initial(w, x0);

  json a;
  a["containment"] = ar.containment;
  a["boundary_support"] = ar.boundary_support;
  a["jump_fraction"] = ar.jump_fraction;
  a["pass"] = ar.pass();
  a["counts"] = {{"states_in", ar.counts.states_in},
                 {"states_total", ar.counts.states_total},
                 {"mass_ok", ar.counts.mass_ok},
                 {"mass_total", ar.counts.mass_total},
                 {"jumps_ok", ar.counts.jumps_ok},
                 {"jumps_total", ar.counts.jumps_total}};
  a["initial_jump"] = initial_jump0;
  a["projection_displacement"] = pr.jump;
  a["initial_jump_exact"] = (initial_jump0 == pr.jump);
  a["rejected_steps"] = rejected;
  write_json_file(fs::path(f.out) / "audit.json", a);

  json m = manifest_base(rc, "simulate", &hopt);
  m["eps"] = mf.eps;
  m["x0"] = {x0[0], x0[1]};
  m["n_paths"] = mf.paths;
  m["dt"] = mf.dt;
  m["horizon"] = mf.horizon;
  m["seed"] = mf.seed;
  m["stride"] = mf.stride;
  m["wall_times"] = {{"solve", t_solve}, {"simulate", ck.lap()}};
  write_json_file(fs::path(f.out) / "manifest.json", m);
  std::cout << "audit: containment = " << ar.containment
            << ", boundary_support = " << ar.boundary_support
            << ", jump_fraction = " << ar.jump_fraction << (ar.pass() ? " (pass)" : " (fail)")
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// cost
// ---------------------------------------------------------------------------

static int cmd_cost(const CommonFlags& f, const McFlags& mf) {
  RunContext rc = make_context(f);
  fs::create_directories(f.out);
  HjbOptions hopt = hjb_options(f);
  StageClock ck;
  ValueField vf = run_solve(rc, hopt, nullptr);
  double t_solve = ck.lap();
  WaitingRegion w = extract_region(rc.spec, vf, mf.eps);
  std::array<double, 2> x0 = start_point(mf, rc.grid);
  McConfig mc{mf.paths, mf.dt, mf.horizon > 0 ? mf.horizon : 12.0 / rc.spec.rho, mf.seed};
  CostEstimate ce = estimate_J_mc(rc.spec, w, x0, mc);
  double v0 = interp_bilinear(vf.V, x0[0], x0[1]);

  json c;
  c["x0"] = {x0[0], x0[1]};
  c["eps"] = mf.eps;
  c["n_paths"] = ce.n_paths;
  c["dt"] = mc.dt;
  c["horizon"] = mc.horizon;
  c["seed"] = mc.seed;
  c["J"] = ce.mean;
  c["stderr"] = ce.stderr_mean;
  c["mean_running"] = ce.mean_running;
  c["mean_variation"] = ce.mean_variation;
  c["tail_bound"] = ce.tail_bound;
  c["V_x0"] = v0;
  c["gap"] = ce.mean - v0;
  write_json_file(fs::path(f.out) / "cost.json", c);

  json m = manifest_base(rc, "cost", &hopt);
  m["wall_times"] = {{"solve", t_solve}, {"cost", ck.lap()}};
  write_json_file(fs::path(f.out) / "manifest.json", m);
  std::cout << "J = " << ce.mean << " +- " << ce.stderr_mean << ", V(x0) = " << v0
            << ", gap = " << ce.mean - v0 << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eps-study
// ---------------------------------------------------------------------------

static int cmd_eps_study(const CommonFlags& f, const McFlags& mf, std::vector<double> family) {
  RunContext rc = make_context(f);
  fs::create_directories(f.out);
  HjbOptions hopt = hjb_options(f);
  StageClock ck;
  ValueField vf = run_solve(rc, hopt, nullptr);
  double t_solve = ck.lap();
  if (family.empty()) family = {0.1, 0.03, 0.01, 0.003, 0.001};
  std::array<double, 2> x0 = start_point(mf, rc.grid);
  McConfig mc{mf.paths, mf.dt, mf.horizon > 0 ? mf.horizon : 12.0 / rc.spec.rho, mf.seed};
  auto rows = eps_gap_study(rc.spec, vf, family, x0, mc);

  std::string s = "eps,J,stderr,gap,V0\n";
  for (const auto& r : rows)
    s += g17(r.eps) + "," + g17(r.J) + "," + g17(r.stderr_mean) + "," + g17(r.gap) + "," +
         g17(r.V0) + "\n";
  write_text_file(fs::path(f.out) / "eps_gap.csv", s);

  json m = manifest_base(rc, "eps-study", &hopt);
  m["eps_family"] = family;
  m["x0"] = {x0[0], x0[1]};
  m["n_paths"] = mf.paths;
  m["dt"] = mc.dt;
  m["horizon"] = mc.horizon;
  m["seed"] = mc.seed;
  m["wall_times"] = {{"solve", t_solve}, {"study", ck.lap()}};
  write_json_file(fs::path(f.out) / "manifest.json", m);
  return 0;
}

// ---------------------------------------------------------------------------
// dynkin
// ---------------------------------------------------------------------------

static int cmd_dynkin(const CommonFlags& f, const McFlags& mf, int n_points) {
  RunContext rc = make_context(f);
  fs::create_directories(f.out);
  HjbOptions hopt = hjb_options(f);
  StageClock ck;
  ValueField vf = run_solve(rc, hopt, nullptr);
  double t_solve = ck.lap();
  ScalarField hh = hat_h_field(rc.spec, vf);
  GameField game = solve_two_obstacle(rc.spec, hh, rc.grid, &vf.Vx1);
  double t_game = ck.lap();
  ConsistencyReport cons = consistency_check(game, vf);

  {
    const Grid2D& g = rc.grid;
    std::string s = "x1,x2,U,hat_h,clamp\n";
    for (int j = 0; j < g.n2; ++j)
      for (int i = 0; i < g.n1; ++i)
        s += g17(g.x1(i)) + "," + g17(g.x2(j)) + "," + g17(game.U(i, j)) + "," +
             g17(game.hat_h(i, j)) + "," +
             std::to_string(static_cast<int>(game.clamp[static_cast<size_t>(g.idx(i, j))])) +
             "\n";
    write_text_file(fs::path(f.out) / "game.csv", s);
  }

  double horizon = mf.horizon > 0 ? mf.horizon : 40.0 / game.rho_hat;
  double dt = mf.dt;
  double sup_u = game.U.sup_abs();
  auto pts = interior_test_points(game, n_points);
  json points = json::array();
  for (const auto& x : pts) {
    GameMcResult r = mc_game_value(rc.spec, game, x, mf.paths, horizon, dt, mf.seed);
    double u = interp_bilinear(game.U, x[0], x[1]);
    double tol_value = 3.0 * r.se + 5.0 * std::sqrt(dt) * sup_u;
    json p;
    p["x"] = {x[0], x[1]};
    p["U"] = u;
    p["G_hat"] = r.g_hat;
    p["stderr"] = r.se;
    p["value_diff"] = r.g_hat - u;
    p["value_tol"] = tol_value;
    p["pass_value"] = std::abs(r.g_hat - u) <= tol_value;
    p["dev1_minus_ghat"] = r.dev1_minus_ghat;
    p["stderr_dev1"] = r.se_dev1;
    p["pass_dev1"] = r.dev1_minus_ghat <= 3.0 * r.se_dev1;
    p["dev2_minus_ghat"] = r.dev2_minus_ghat;
    p["stderr_dev2"] = r.se_dev2;
    p["pass_dev2"] = r.dev2_minus_ghat >= -3.0 * r.se_dev2;
    p["frac_no_stop"] = r.frac_no_stop;
    p["trunc_bias"] = r.trunc_bias;
    points.push_back(p);
  }

  json sj;
  sj["rho_hat"] = game.rho_hat;
  sj["delta_stop"] = game.delta_stop;
  sj["sweeps"] = game.sweeps;
  sj["consistency"] = {{"sup_diff_interior", cons.sup_diff_interior}, {"l2_diff", cons.l2_diff}};
  sj["n_paths"] = mf.paths;
  sj["dt"] = dt;
  sj["horizon"] = horizon;
  sj["seed"] = mf.seed;
  sj["points"] = points;
  write_json_file(fs::path(f.out) / "saddle.json", sj);

  json m = manifest_base(rc, "dynkin", &hopt);
  m["wall_times"] = {{"solve", t_solve}, {"game", t_game}, {"mc", ck.lap()}};
  write_json_file(fs::path(f.out) / "manifest.json", m);
  std::cout << "game sweeps = " << game.sweeps
            << ", consistency sup = " << cons.sup_diff_interior << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// oracle-check
// ---------------------------------------------------------------------------

static int cmd_oracle_check(const CommonFlags& f) {
  RunContext rc = make_context(f);
  fs::create_directories(f.out);
  HjbOptions hopt = hjb_options(f);
  StageClock ck;
  ComposedSeparable comp = compose_separable(rc.spec, rc.grid);
  double t_oracle = ck.lap();
  ValueField vf = run_solve(rc, hopt, nullptr);
  double t_solve = ck.lap();

  const Grid2D& g = rc.grid;
  double sup_v = 0.0, sup_diff = 0.0;
  for (int j = 2; j < g.n2 - 2; ++j)
    for (int i = 2; i < g.n1 - 2; ++i) {
      sup_v = std::max(sup_v, std::abs(vf.V(i, j)));
      sup_diff = std::max(sup_diff, std::abs(vf.V(i, j) - comp.field.V(i, j)));
    }

  WaitingRegion w = extract_region(rc.spec, vf, 0.0);
  double boundary_err = 0.0;
  for (const auto& row : w.rows) {
    boundary_err = std::max(boundary_err, std::abs(row.l - comp.controlled.left_boundary));
    boundary_err = std::max(boundary_err, std::abs(row.r - comp.controlled.right_boundary));
  }

  json r;
  r["sup_V_interior"] = sup_v;
  r["sup_diff_interior"] = sup_diff;
  r["rel_diff"] = sup_diff / sup_v;
  r["value_tol_rel"] = 1e-3;
  r["pass_value"] = sup_diff <= 1e-3 * sup_v;
  r["oracle_left_boundary"] = comp.controlled.left_boundary;
  r["oracle_right_boundary"] = comp.controlled.right_boundary;
  r["region_boundary_max_err"] = boundary_err;
  r["boundary_tol"] = 2.0 * g.h1;
  r["pass_boundary"] = boundary_err <= 2.0 * g.h1;
  r["oracle_sweeps"] = comp.controlled.sweeps;
  write_json_file(fs::path(f.out) / "oracle_report.json", r);

  json m = manifest_base(rc, "oracle-check", &hopt);
  m["wall_times"] = {{"oracle", t_oracle}, {"solve", t_solve}, {"check", ck.lap()}};
  write_json_file(fs::path(f.out) / "manifest.json", m);
  bool ok = r["pass_value"].get<bool>() && r["pass_boundary"].get<bool>();
  std::cout << "oracle check: rel_diff = " << r["rel_diff"].get<double>()
            << ", boundary_err = " << boundary_err << (ok ? " (pass)" : " (fail)") << "\n";
  return ok ? 0 : 2;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchFlags {
  std::string configs_dir = "configs";
  std::string out = "bench_out";
  std::string grid;
  long cost_paths = 2000;
  long audit_paths = 1000;
  unsigned long long seed = 1;
};

static const std::vector<std::string>& bench_models() {
  static const std::vector<std::string> kModels = {
      "separable", "lq_radial", "lq_diff",   "lq_sum", "convexform",
      "geometric", "degenerate", "asym",     "monotone"};
  return kModels;
}

static int cmd_bench(const BenchFlags& bf) {
  fs::create_directories(bf.out);
  std::string csv =
      "model,n1,n2,eps_final,validate_fail,validate_relaxed,gradient_excess,"
      "vi_residual_interior,min_vxx_band,region_eps,J,J_stderr,gap,containment,"
      "boundary_support,jump_fraction,consistency_sup,fb_viol_g1,fb_viol_g2,fb_overlap\n";
  json wall = json::object();
  json hashes = json::object();

  for (const std::string& name : bench_models()) {
    StageClock ck;
    CommonFlags f;
    f.config = bf.configs_dir + "/" + name + ".ini";
    f.grid = bf.grid;
    RunContext rc = make_context(f);
    fs::path sub = fs::path(bf.out) / name;
    fs::create_directories(sub);
    hashes[name] = fnv1a_hex(rc.cfg.raw_text());

    Box2D box{rc.grid.x1_min, rc.grid.x1_max, rc.grid.x2_min, rc.grid.x2_max};
    ValidationReport rep = validate_assumptions(rc.spec, box);
    write_json_file(sub / "validate.json", validation_json(rep));
    int n_fail = 0, n_relaxed = 0;
    for (const auto& it : rep.items) {
      if (it.status == CheckStatus::Fail) ++n_fail;
      if (it.status == CheckStatus::Relaxed) ++n_relaxed;
    }

    HjbOptions hopt;
    ValueField vf = solve_hjb(rc.spec, rc.grid, hopt, nullptr);
    double ge = gradient_excess(rc.spec, vf);
    ScalarField resid = vi_residual(rc.spec, vf);
    double ri = sup_interior(resid, 2);
    double mv = min_vxx_band(rc.spec, vf);

    const double region_eps = 0.01;
    WaitingRegion w = extract_region(rc.spec, vf, region_eps);
    write_region_csv(sub / "region.csv", w);

    double fb_g1 = std::numeric_limits<double>::quiet_NaN();
    double fb_g2 = std::numeric_limits<double>::quiet_NaN();
    double fb_ov = std::numeric_limits<double>::quiet_NaN();
    if (rc.spec.sigma_kind == SigmaKind::Degenerate) {
      FreeBoundaries fb = fit_free_boundaries(rc.spec, vf);
      std::string s = "x1,g1,g2\n";
      for (size_t i = 0; i < fb.x1.size(); ++i)
        s += g17(fb.x1[i]) + "," + g17(fb.g1[i]) + "," + g17(fb.g2[i]) + "\n";
      write_text_file(sub / "freeboundary.csv", s);
      fb_g1 = fb.viol_fraction_g1;
      fb_g2 = fb.viol_fraction_g2;
      fb_ov = fb.max_overlap;
    }

    // Pathwise audit from a start inside the center row of the region, biased
    // toward a reflecting side so the variation measure is exercised.
    int jc = rc.grid.n2 / 2;
    const RegionRow& crow = w.row(jc);
    double frac = rc.spec.mode == ControlMode::MonotoneIncreasing ? 0.25 : 0.75;
    std::array<double, 2> x0a{crow.l + frac * (crow.r - crow.l), crow.x2};
    AuditCounts counts;
    for (long p = 0; p < bf.audit_paths; ++p) {
      PathSample s = simulate_reflected(rc.spec, w, x0a, 1.0, 1e-4, bf.seed,
                                        static_cast<std::uint64_t>(p));
      counts.merge(skorokhod_counts(s, w, vf));
    }
    AuditReport ar = make_audit_report(counts);
    json aj;
    aj["containment"] = ar.containment;
    aj["boundary_support"] = ar.boundary_support;
    aj["jump_fraction"] = ar.jump_fraction;
    aj["pass"] = ar.pass();
    write_json_file(sub / "audit.json", aj);

    std::array<double, 2> x0c{0.5 * (crow.l + crow.r), crow.x2};
    McConfig mc{bf.cost_paths, 1e-3, 12.0 / rc.spec.rho, bf.seed};
    CostEstimate ce = estimate_J_mc(rc.spec, w, x0c, mc);
    double v0 = interp_bilinear(vf.V, x0c[0], x0c[1]);
    json cj;
    cj["x0"] = {x0c[0], x0c[1]};
    cj["J"] = ce.mean;
    cj["stderr"] = ce.stderr_mean;
    cj["V_x0"] = v0;
    cj["gap"] = ce.mean - v0;
    write_json_file(sub / "cost.json", cj);

    double cons = std::numeric_limits<double>::quiet_NaN();
    if (rc.spec.mode == ControlMode::BoundedVariation && rc.spec.kappa_plus == 1.0 &&
        rc.spec.kappa_minus == 1.0) {
      GameField game = solve_two_obstacle(rc.spec, hat_h_field(rc.spec, vf), rc.grid, &vf.Vx1);
      ConsistencyReport cr = consistency_check(game, vf);
      cons = cr.sup_diff_interior;
      json gj;
      gj["sweeps"] = game.sweeps;
      gj["rho_hat"] = game.rho_hat;
      gj["delta_stop"] = game.delta_stop;
      gj["consistency_sup"] = cr.sup_diff_interior;
      gj["consistency_l2"] = cr.l2_diff;
      write_json_file(sub / "game.json", gj);
    }

    csv += name + "," + std::to_string(rc.grid.n1) + "," + std::to_string(rc.grid.n2) + "," +
           g17(hopt.eps_schedule.back()) + "," + std::to_string(n_fail) + "," +
           std::to_string(n_relaxed) + "," + g17(ge) + "," + g17(ri) + "," + g17(mv) + "," +
           g17(region_eps) + "," + g17(ce.mean) + "," + g17(ce.stderr_mean) + "," +
           g17(ce.mean - v0) + "," + g17(ar.containment) + "," + g17(ar.boundary_support) + "," +
           g17(ar.jump_fraction) + "," + g17(cons) + "," + g17(fb_g1) + "," + g17(fb_g2) + "," +
           g17(fb_ov) + "\n";
    wall[name] = ck.lap();
    std::cout << name << ": gradient_excess = " << ge << ", residual = " << ri
              << ", gap = " << ce.mean - v0 << "\n";
  }

  write_text_file(fs::path(bf.out) / "bench_summary.csv", csv);
  json m;
  m["tool"] = "reflect";
  m["version"] = kToolVersion;
  m["subcommand"] = "bench";
  m["configs_dir"] = bf.configs_dir;
  m["spec_hashes"] = hashes;
  m["cost_paths"] = bf.cost_paths;
  m["audit_paths"] = bf.audit_paths;
  m["seed"] = bf.seed;
  m["wall_times"] = wall;
  write_json_file(fs::path(bf.out) / "manifest.json", m);
  return 0;
}

// ---------------------------------------------------------------------------
// main
// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
  CLI::App app{"gradient-constrained singular control: solver, simulator, cross-checks"};
  app.require_subcommand(1);

  CommonFlags cf;
  McFlags mf;
  BenchFlags bf;
  double region_eps = 0.0;
  int n_points = 3;
  std::vector<double> eps_family;

  auto add_common = [&](CLI::App* sub, bool needs_config = true) {
    if (needs_config)
      sub->add_option("config", cf.config, "problem config file")->required();
    sub->add_option("--out", cf.out, "output directory");
    sub->add_option("--grid", cf.grid, "grid override, e.g. 129x129");
    sub->add_option("--box", cf.box, "box override: x1_min,x1_max,x2_min,x2_max");
    sub->add_option("--eps-schedule", cf.eps_schedule, "penalty schedule")->delimiter(',');
    sub->add_option("--eta-schedule", cf.eta_schedule, "viscosity schedule")->delimiter(',');
    sub->add_option("--eps-final", cf.eps_final, "build default schedule down to this");
    sub->add_flag("--no-exact-limit", cf.no_exact_limit, "skip the complementarity polish");
  };
  auto add_mc = [&](CLI::App* sub) {
    sub->add_option("--paths", mf.paths, "number of Monte Carlo paths");
    sub->add_option("--dt", mf.dt, "time step");
    sub->add_option("--horizon", mf.horizon, "time horizon (0 = per-command default)");
    sub->add_option("--seed", mf.seed, "RNG seed");
    sub->add_option("--x0", mf.x0, "start point x1,x2 (default: box center)")->delimiter(',');
    sub->add_option("--region-eps", mf.eps, "region shrink level");
  };

  CLI::App* s_validate = app.add_subcommand("validate", "check structural conditions");
  add_common(s_validate);

  CLI::App* s_solve = app.add_subcommand("solve", "solve the constrained value problem");
  add_common(s_solve);

  CLI::App* s_region = app.add_subcommand("region", "extract the waiting region");
  add_common(s_region);
  s_region->add_option("--eps", region_eps, "shrink level in [0,1)");

  CLI::App* s_sim = app.add_subcommand("simulate", "reflected paths and pathwise audit");
  add_common(s_sim);
  add_mc(s_sim);
  s_sim->add_option("--stride", mf.stride, "write every k-th step");

  CLI::App* s_cost = app.add_subcommand("cost", "Monte Carlo discounted cost at x0");
  add_common(s_cost);
  add_mc(s_cost);

  CLI::App* s_eps = app.add_subcommand("eps-study", "cost gap across region shrink levels");
  add_common(s_eps);
  add_mc(s_eps);
  s_eps->add_option("--eps-family", eps_family, "shrink levels")->delimiter(',');

  CLI::App* s_dyn = app.add_subcommand("dynkin", "two-obstacle game and saddle checks");
  add_common(s_dyn);
  add_mc(s_dyn);
  s_dyn->add_option("--points", n_points, "number of interior test points");

  CLI::App* s_orc = app.add_subcommand("oracle-check", "compare against 1D references");
  add_common(s_orc);

  CLI::App* s_bench = app.add_subcommand("bench", "run the model suite end-to-end");
  s_bench->add_option("configs", bf.configs_dir, "directory with the model configs");
  s_bench->add_option("--out", bf.out, "output directory");
  s_bench->add_option("--grid", bf.grid, "grid override for every model");
  s_bench->add_option("--paths", bf.cost_paths, "cost paths per model");
  s_bench->add_option("--audit-paths", bf.audit_paths, "audit paths per model");
  s_bench->add_option("--seed", bf.seed, "RNG seed");

  // Defaults tuned per subcommand.
  mf.dt = 1e-3;

  CLI11_PARSE(app, argc, argv);

  std::string out_dir = app.got_subcommand(s_bench) ? bf.out : cf.out;
  try {
    if (app.got_subcommand(s_validate)) return cmd_validate(cf);
    if (app.got_subcommand(s_solve)) return cmd_solve(cf);
    if (app.got_subcommand(s_region)) return cmd_region(cf, region_eps);
    if (app.got_subcommand(s_sim)) return cmd_simulate(cf, mf);
    if (app.got_subcommand(s_cost)) {
      if (mf.paths == 4) mf.paths = 10000;  // simulate's tiny default is wrong for cost
      if (mf.horizon == 1.0) mf.horizon = 0.0;
      return cmd_cost(cf, mf);
    }
    if (app.got_subcommand(s_eps)) {
      if (mf.paths == 4) mf.paths = 10000;
      if (mf.horizon == 1.0) mf.horizon = 0.0;
      return cmd_eps_study(cf, mf, eps_family);
    }
    if (app.got_subcommand(s_dyn)) {
      if (mf.paths == 4) mf.paths = 10000;
      if (mf.horizon == 1.0) mf.horizon = 0.0;
      if (mf.dt == 1e-3) mf.dt = 5e-4;
      return cmd_dynkin(cf, mf, n_points);
    }
    if (app.got_subcommand(s_orc)) return cmd_oracle_check(cf);
    if (app.got_subcommand(s_bench)) return cmd_bench(bf);
  } catch (const std::exception& e) {
    json err;
    err["error"] = {{"type", exception_type(e)}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!ec) {
      std::ofstream out(fs::path(out_dir) / "error.json");
      if (out) out << err.dump(2) << '\n';
    }
    return 1;
  }
  return 0;
}
