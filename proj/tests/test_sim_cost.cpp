// Reflected simulation (projection, stability, pathwise audit) and the
// discounted Monte Carlo cost evaluator.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "reflect/cost_eval.hpp"
#include "reflect/model.hpp"
#include "reflect/oracle1d.hpp"
#include "reflect/region.hpp"
#include "reflect/rng.hpp"
#include "reflect/sde.hpp"
#include "reflect/value_field.hpp"

using namespace reflect;

namespace {

ProblemSpec separable_spec() {
  ProblemSpec s;
  s.a1 = 0.0;
  s.b11 = -0.5;
  s.drift2.affine = true;
  s.drift2.a2 = 0.0;
  s.drift2.b12 = 0.0;
  s.drift2.b22 = -0.5;
  s.sigma_kind = SigmaKind::Constant;
  s.sigma = 1.0;
  s.rho = 2.0;
  s.cost.kind = CostKind::SumSquares;
  s.kappa_plus = 1.0;
  s.kappa_minus = 1.0;
  s.mode = ControlMode::BoundedVariation;
  return s;
}

// Field whose x1-gradient is q * x1; the unit-band region is |x1| < 1/q.
ValueField banded_field(const Grid2D& g, double q) {
  std::vector<double> vals(static_cast<size_t>(g.size()));
  for (int j = 0; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i)
      vals[static_cast<size_t>(g.idx(i, j))] = 0.5 * q * g.x1(i) * g.x1(i);
  return ValueField::from_values(g, vals);
}

}  // namespace

TEST_CASE("initial projection is the metric projection onto the row interval") {
  Grid2D g = Grid2D::make(33, 33, -4.0, 4.0, -4.0, 4.0);
  ProblemSpec s = separable_spec();
  ValueField vf = banded_field(g, 1.0);  // region |x1| < 1
  WaitingRegion w = extract_region(s, vf, 0.0);

  ProjectResult inside = project_initial(w, {0.3, 0.7});
  CHECK(inside.jump == 0.0);
  CHECK(inside.y[0] == 0.3);
  CHECK(inside.y[1] == 0.7);

  ProjectResult right = project_initial(w, {2.5, -0.2});
  CHECK(right.y[0] == Catch::Approx(1.0).margin(1e-9));
  CHECK(right.jump == Catch::Approx(1.0 - 2.5).margin(1e-9));
  ProjectResult left = project_initial(w, {-3.0, 0.0});
  CHECK(left.jump == Catch::Approx(2.0).margin(1e-9));

  // The recorded path starts at the projected point and books the jump in
  // the variation at full weight.
  PathSample p = simulate_reflected(s, w, {2.5, -0.2}, 0.05, 1e-3, 7);
  CHECK(p.initial_jump == right.jump);
  CHECK(p.x1[0] == right.y[0]);
  CHECK(p.xi_minus[0] == Catch::Approx(1.5).margin(1e-12));
  CHECK(p.xi_plus[0] == 0.0);
}

TEST_CASE("time step must respect the diffusion stability bound") {
  Grid2D g = Grid2D::make(129, 33, -4.0, 4.0, -4.0, 4.0);  // h1 = 1/16
  ProblemSpec s = separable_spec();
  ValueField vf = banded_field(g, 1.0);
  WaitingRegion w = extract_region(s, vf, 0.0);
  // bound = h1^2 / (2 sigma^2) ~ 1.95e-3
  CHECK_THROWS_AS(simulate_reflected(s, w, {0.0, 0.0}, 1.0, 5e-3, 1), SdeError);
  CHECK_NOTHROW(simulate_reflected(s, w, {0.0, 0.0}, 0.02, 1e-3, 1));
  CHECK_THROWS_AS(simulate_reflected(s, w, {0.0, 0.0}, -1.0, 1e-3, 1), SdeError);
}

TEST_CASE("euler recursion is reproducible bit for bit") {
  Grid2D g = Grid2D::make(33, 33, -4.0, 4.0, -4.0, 4.0);
  ProblemSpec s = separable_spec();
  ValueField vf = banded_field(g, 1.0);
  WaitingRegion w = extract_region(s, vf, 0.0);

  const double dt = 1e-3;
  const std::uint64_t seed = 424242, pidx = 3;
  PathSample p = simulate_reflected(s, w, {0.4, -0.1}, 0.1, dt, seed, pidx);
  REQUIRE(p.x1.size() == 101);

  // Replay the scheme by hand: Euler proposal from the shared counter RNG,
  // then clip to the row interval at the proposed x2.
  double x1 = 0.4, x2 = -0.1;
  for (std::int64_t k = 1; k <= 100; ++k) {
    NormalPair z = normal_pair(seed, pidx, static_cast<std::uint64_t>(k));
    double p1 = x1 + s.drift1(x1) * dt + s.sigma * std::sqrt(dt) * z.z1;
    double p2 = x2 + s.drift2_eval(x1, x2) * dt + s.sigma * std::sqrt(dt) * z.z2;
    auto iv = w.interval_at(p2);
    x1 = std::min(std::max(p1, iv[0]), iv[1]);
    x2 = p2;
    CHECK(p.x1[static_cast<size_t>(k)] == x1);
    CHECK(p.x2[static_cast<size_t>(k)] == x2);
  }
  // Identical calls agree exactly; a different path index decorrelates.
  PathSample q = simulate_reflected(s, w, {0.4, -0.1}, 0.1, dt, seed, pidx);
  CHECK(q.x1 == p.x1);
  PathSample r = simulate_reflected(s, w, {0.4, -0.1}, 0.1, dt, seed, pidx + 1);
  CHECK(r.x1 != p.x1);
}

TEST_CASE("pathwise audit accepts honest paths and rejects corrupted ones") {
  Grid2D g = Grid2D::make(65, 65, -4.0, 4.0, -4.0, 4.0);
  ProblemSpec s = separable_spec();
  ValueField vf = banded_field(g, 1.0);
  WaitingRegion w = extract_region(s, vf, 0.0);

  AuditCounts total;
  std::int64_t jumps = 0;
  for (int p = 0; p < 50; ++p) {
    PathSample ps = simulate_reflected(s, w, {0.8, 0.0}, 1.0, 1e-3, 99, p);
    total.merge(skorokhod_counts(ps, w, vf));
    jumps += static_cast<std::int64_t>(ps.jumps.size());
  }
  AuditReport rep = make_audit_report(total);
  CHECK(rep.containment >= 0.999);
  CHECK(rep.boundary_support >= 0.98);
  CHECK(rep.jump_fraction == 1.0);
  CHECK(jumps == 0);  // straight boundary: every push is a small clip
  CHECK(rep.pass());
  CHECK(total.mass_total > 0.0);  // the start near the boundary does reflect

  // Negative control: displace the committed states outside the region.
  PathSample bad = simulate_reflected(s, w, {0.8, 0.0}, 1.0, 1e-3, 99, 0);
  for (auto& x : bad.x1) x += 3.0;
  AuditReport brep = verify_skorokhod_conditions(bad, w, vf);
  CHECK(brep.containment < 0.01);
  CHECK(!brep.pass());

  // Second control: fabricate variation mass in the interior.
  PathSample fake = simulate_reflected(s, w, {0.0, 0.0}, 0.2, 1e-3, 100, 0);
  for (size_t k = 50; k < fake.v.size(); ++k) fake.v[k] += 0.5;
  AuditReport frep = verify_skorokhod_conditions(fake, w, vf);
  CHECK(frep.boundary_support < 0.98);
  CHECK(!frep.pass());
}

TEST_CASE("path cost replicates the discounted bookkeeping exactly") {
  ProblemSpec s = separable_spec();
  PathSample p;
  p.dt = 0.5;
  p.times = {0.0, 0.5, 1.0};
  p.x1 = {1.0, 2.0, 0.0};
  p.x2 = {0.0, 1.0, 1.0};
  p.xi_plus = {0.5, 0.5, 0.7};
  p.xi_minus = {0.0, 0.3, 0.3};
  p.xi = {0.5, 0.8, 1.0};
  p.v = {0.5, 0.2, 0.4};

  auto c = path_cost(s, p);
  const double e1 = std::exp(-1.0), e2 = std::exp(-2.0);
  double run = 0.25 * (1.0 * 1.0 + e1 * 5.0) + 0.25 * (e1 * 5.0 + e2 * 1.0);
  double var = 0.5 + 1.0 * 0.3 + e1 * 0.2;
  CHECK(c.running == Catch::Approx(run).margin(1e-15));
  CHECK(c.variation == Catch::Approx(var).margin(1e-15));

  // Asymmetric marginal costs reweight the two variation directions.
  ProblemSpec a = s;
  a.kappa_plus = 1.0;
  a.kappa_minus = 2.0;
  auto ca = path_cost(a, p);
  CHECK(ca.variation == Catch::Approx(0.5 + 2.0 * 0.3 + e1 * 0.2).margin(1e-15));

  // A short horizon trips the discount-tail guard in the aggregate form.
  Grid2D g = Grid2D::make(17, 17, -1.0, 1.0, -1.0, 1.0);
  CHECK_THROWS_AS(estimate_J(s, {p}, g), HorizonTooShortError);
}

TEST_CASE("aggregate cost of a constant path matches the trapezoid sum") {
  ProblemSpec s = separable_spec();
  Grid2D g = Grid2D::make(17, 17, -1.5, 1.5, -1.5, 1.5);
  const double dt = 0.05, T = 6.0;
  const int n = static_cast<int>(T / dt);
  PathSample p;
  p.dt = dt;
  for (int k = 0; k <= n; ++k) {
    p.times.push_back(k * dt);
    p.x1.push_back(1.0);
    p.x2.push_back(0.0);
    p.xi_plus.push_back(0.0);
    p.xi_minus.push_back(0.0);
    p.xi.push_back(0.0);
    p.v.push_back(0.0);
  }
  CostEstimate e = estimate_J(s, {p}, g);
  double expect = 0.0;
  for (int k = 1; k <= n; ++k)
    expect += 0.5 * (std::exp(-2.0 * (k - 1) * dt) + std::exp(-2.0 * k * dt)) * dt;
  CHECK(e.mean == Catch::Approx(expect).margin(1e-14));
  CHECK(e.mean_variation == 0.0);
  CHECK(e.stderr_mean == 0.0);
  CHECK(e.n_paths == 1);
}

TEST_CASE("uncontrolled cost matches the 1d resolvent") {
  // Wide box, gradient far inside the band: the region is the whole box and
  // the dynamics are effectively unreflected. The discounted cost must then
  // match the product-form resolvent W1(x1) + W2(x2) = (x1^2 + x2^2)/3 + 1/3.
  ProblemSpec s = separable_spec();
  Grid2D g = Grid2D::make(17, 17, -6.0, 6.0, -6.0, 6.0);
  ValueField vf = banded_field(g, 1e-3);
  WaitingRegion w = extract_region(s, vf, 0.0);
  for (const auto& row : w.rows) {
    CHECK(row.hits_left_edge);
    CHECK(row.hits_right_edge);
  }
  McConfig mc{4000, 1e-3, 6.0, 2024};
  CostEstimate e = estimate_J_mc(s, w, {0.5, -0.3}, mc);
  double exact = (0.25 + 0.09) / 3.0 + 1.0 / 3.0;
  CHECK(e.mean == Catch::Approx(exact).margin(4.0 * e.stderr_mean + 0.01));
  CHECK(e.mean_variation == 0.0);  // never touches the box edge in practice
  CHECK(e.stderr_mean > 0.0);
  CHECK(e.stderr_mean < 0.02);
}

TEST_CASE("gap study guards its start point and reports the solved value") {
  ProblemSpec s = separable_spec();
  Grid2D g = Grid2D::make(33, 33, -4.0, 4.0, -4.0, 4.0);
  ValueField vf = banded_field(g, 1e-3);  // region = box at every shrink level
  McConfig mc{200, 2e-3, 6.0, 5};
  auto rows = eps_gap_study(s, vf, {0.1, 0.01}, {0.5, -0.3}, mc);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.V0 == Catch::Approx(interp_bilinear(vf.V, 0.5, -0.3)).margin(1e-12));
    CHECK(r.gap == Catch::Approx(r.J - r.V0).margin(1e-12));
    CHECK(std::isfinite(r.stderr_mean));
  }
  CHECK(rows[0].eps == 0.1);

  ValueField tight = banded_field(g, 1.0);  // region |x1| < 1
  CHECK_THROWS_AS(eps_gap_study(s, tight, {0.1}, {2.0, 0.0}, mc), CostError);
  CHECK_THROWS_AS(eps_gap_study(s, tight, {}, {0.0, 0.0}, mc), CostError);
}
