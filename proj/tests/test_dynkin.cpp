// Two-obstacle game solver, route consistency with the control value, and
// the Monte Carlo saddle checks.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "reflect/dynkin.hpp"
#include "reflect/hjb.hpp"
#include "reflect/model.hpp"
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

ScalarField constant_field(const Grid2D& g, double c) {
  ScalarField f(g);
  for (auto& v : f.a) v = c;
  return f;
}

}  // namespace

TEST_CASE("effective payoff assembles cost and coupling derivatives") {
  ProblemSpec s = separable_spec();
  Grid2D g = Grid2D::make(33, 33, -4.0, 4.0, -4.0, 4.0);
  std::vector<double> vals(static_cast<size_t>(g.size()));
  for (int j = 0; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i)
      vals[static_cast<size_t>(g.idx(i, j))] = g.x2(j) * g.x2(j);  // Vx2 = 2 x2
  ValueField vf = ValueField::from_values(g, vals);

  // Without coupling the payoff is exactly the analytic h_x1.
  ScalarField hh0 = hat_h_field(s, vf);
  for (int j : {0, 16, 32})
    for (int i : {0, 16, 32}) CHECK(hh0(i, j) == 2.0 * g.x1(i));

  // With coupling it adds b12 times the solved Vx2.
  s.drift2.b12 = 0.7;
  ScalarField hh1 = hat_h_field(s, vf);
  for (int j : {4, 16, 28})
    for (int i : {4, 16, 28})
      CHECK(hh1(i, j) == Catch::Approx(2.0 * g.x1(i) + 0.7 * 2.0 * g.x2(j)).margin(1e-10));
}

TEST_CASE("obstacle clamping saturates under a large one-sided payoff") {
  ProblemSpec s = separable_spec();
  Grid2D g = Grid2D::make(33, 33, -4.0, 4.0, -4.0, 4.0);
  GameField game = solve_two_obstacle(s, constant_field(g, 100.0), g);
  CHECK(game.rho_hat == 2.5);
  // Unconstrained solution would be ~ 100 / rho_hat; the upper obstacle wins
  // everywhere away from the pinned left face.
  for (int j = 0; j < g.n2; ++j) {
    CHECK(game.U(0, j) == -1.0);
    CHECK(game.U(g.n1 - 1, j) == 1.0);
    for (int i = 8; i < g.n1; ++i) {
      CHECK(game.U(i, j) == Catch::Approx(1.0).margin(1e-9));
      CHECK(game.in_plus(i, j));
      CHECK(!game.in_minus(i, j));
    }
  }
}

TEST_CASE("zero payoff gives an odd, interior-flat game value") {
  ProblemSpec s = separable_spec();
  Grid2D g = Grid2D::make(65, 65, -4.0, 4.0, -4.0, 4.0);
  GameField game = solve_two_obstacle(s, constant_field(g, 0.0), g);
  // Dirichlet faces force -1 / +1, but the influence decays into the box:
  // the middle third is numerically flat at zero.
  for (int j = 20; j <= 44; ++j)
    for (int i = 20; i <= 44; ++i) CHECK(std::abs(game.U(i, j)) < 2e-2);
  // Odd symmetry in x1 for the symmetric dynamics.
  for (int j : {10, 32, 54})
    for (int i : {2, 17, 29})
      CHECK(game.U(i, j) == Catch::Approx(-game.U(g.n1 - 1 - i, j)).margin(1e-8));
  CHECK(game.delta_stop ==
        std::max(1e-6, 0.5 * g.h1 * game.Ux1.sup_abs()));

  ProblemSpec bad = separable_spec();
  bad.kappa_minus = 2.0;
  CHECK_THROWS_AS(solve_two_obstacle(bad, constant_field(g, 0.0), g), DynkinError);
  ProblemSpec bad2 = separable_spec();
  bad2.b11 = 3.0;  // rho - b11 <= 0
  CHECK_THROWS_AS(solve_two_obstacle(bad2, constant_field(g, 0.0), g), DynkinError);
}

TEST_CASE("discrete complementarity holds at the solved game") {
  ProblemSpec s = separable_spec();
  Grid2D g = Grid2D::make(65, 65, -4.0, 4.0, -4.0, 4.0);
  ScalarField hh(g);
  for (int j = 0; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i) hh(i, j) = 2.0 * g.x1(i);
  GameField game = solve_two_obstacle(s, hh, g);

  // For this model the drift never needs upwinding, so the interior rows use
  // plain central stencils we can replay directly.
  double scale = std::max(1.0, hh.sup_abs());
  double tol = 1e-6 * scale;
  const double s1 = 0.5, s2 = 0.5;
  int n_free = 0, n_lo = 0, n_hi = 0;
  for (int j = 1; j < g.n2 - 1; ++j) {
    for (int i = 1; i < g.n1 - 1; ++i) {
      double b1 = s.drift1(g.x1(i)), b2 = s.drift2_eval(g.x1(i), g.x2(j));
      double Au = game.rho_hat * game.U(i, j) -
                  b1 * (game.U(i + 1, j) - game.U(i - 1, j)) / (2.0 * g.h1) -
                  b2 * (game.U(i, j + 1) - game.U(i, j - 1)) / (2.0 * g.h2) -
                  s1 * (game.U(i + 1, j) - 2.0 * game.U(i, j) + game.U(i - 1, j)) /
                      (g.h1 * g.h1) -
                  s2 * (game.U(i, j + 1) - 2.0 * game.U(i, j) + game.U(i, j - 1)) /
                      (g.h2 * g.h2);
      double res = Au - hh(i, j);
      if (game.in_minus(i, j)) {
        CHECK(res >= -tol);  // lower obstacle active: operator pushes up
        ++n_lo;
      } else if (game.in_plus(i, j)) {
        CHECK(res <= tol);   // upper obstacle active: operator pushes down
        ++n_hi;
      } else {
        CHECK(std::abs(res) <= tol);
        ++n_free;
      }
    }
  }
  CHECK(n_free > 0);
  CHECK(n_lo > 0);
  CHECK(n_hi > 0);
}

TEST_CASE("game value matches the differentiated control value") {
  ProblemSpec s = separable_spec();
  Grid2D g = Grid2D::make(65, 65, -4.0, 4.0, -4.0, 4.0);
  ValueField vf = solve_hjb(s, g);
  GameField game = solve_two_obstacle(s, hat_h_field(s, vf), g, &vf.Vx1);
  ConsistencyReport rep = consistency_check(game, vf);
  CHECK(rep.sup_diff_interior < 0.05);
  CHECK(rep.l2_diff < rep.sup_diff_interior + 1e-15);
  CHECK(rep.l2_diff > 0.0);

  // Anchored x2 faces reproduce the clamped gradient rows exactly.
  for (int i = 1; i < g.n1 - 1; ++i) {
    CHECK(game.U(i, 0) == std::clamp(vf.Vx1(i, 0), -1.0, 1.0));
    CHECK(game.U(i, g.n2 - 1) == std::clamp(vf.Vx1(i, g.n2 - 1), -1.0, 1.0));
  }

  Grid2D g2 = Grid2D::make(33, 33, -4.0, 4.0, -4.0, 4.0);
  CHECK_THROWS_AS(consistency_check(solve_two_obstacle(s, constant_field(g2, 0.0), g2), vf),
                  DynkinError);
}

TEST_CASE("interior test points sit deep between the stopping regions") {
  ProblemSpec s = separable_spec();
  Grid2D g = Grid2D::make(65, 65, -4.0, 4.0, -4.0, 4.0);
  ValueField vf = solve_hjb(s, g);
  GameField game = solve_two_obstacle(s, hat_h_field(s, vf), g, &vf.Vx1);

  auto pts = interior_test_points(game, 3);
  REQUIRE(pts.size() == 3);
  const double level = 1.0 - game.delta_stop;
  double min_sep = std::min(g.span1(), g.span2()) / 6.0;
  for (size_t a = 0; a < pts.size(); ++a) {
    CHECK(std::abs(interp_bilinear(game.U, pts[a][0], pts[a][1])) < 0.3 * level);
    CHECK(pts[a][0] >= g.x1(6));  // margin: n/10 cells off the faces
    CHECK(pts[a][0] <= g.x1(g.n1 - 7));
    for (size_t b = a + 1; b < pts.size(); ++b)
      CHECK(std::hypot(pts[a][0] - pts[b][0], pts[a][1] - pts[b][1]) >= min_sep - 1e-12);
  }
  CHECK_THROWS_AS(interior_test_points(game, 1000), DynkinError);
}

TEST_CASE("saddle simulation validates the game value and punishes deviations") {
  ProblemSpec s = separable_spec();
  Grid2D g = Grid2D::make(65, 65, -4.0, 4.0, -4.0, 4.0);
  ValueField vf = solve_hjb(s, g);
  GameField game = solve_two_obstacle(s, hat_h_field(s, vf), g, &vf.Vx1);

  std::array<double, 2> x{0.5, 0.0};
  double u0 = interp_bilinear(game.U, x[0], x[1]);
  REQUIRE(std::abs(u0) < 0.9);

  const double dt = 2e-3;
  GameMcResult r = mc_game_value(s, game, x, 300, 16.0, dt, 31);
  CHECK(r.n_paths == 300);
  CHECK(r.frac_no_stop <= 0.05);
  CHECK(r.se > 0.0);
  // Value agreement within noise plus the crossing-time discretization slack.
  CHECK(std::abs(r.g_hat - u0) <= 3.0 * r.se + 5.0 * std::sqrt(dt) + 0.02);
  // Early deviations cannot help the deviating side (up to noise).
  CHECK(r.dev1_minus_ghat <= 4.0 * r.se_dev1 + 1e-12);
  CHECK(r.dev2_minus_ghat >= -4.0 * r.se_dev2 - 1e-12);

  // Starting inside a stopping region is rejected.
  CHECK_THROWS_AS(mc_game_value(s, game, {3.9, 0.0}, 100, 16.0, dt, 1), DynkinError);
}

TEST_CASE("explicit curvature route is limited to the degenerate kind") {
  ProblemSpec s = separable_spec();
  Grid2D g = Grid2D::make(33, 33, -4.0, 4.0, -4.0, 4.0);
  std::vector<double> vals(static_cast<size_t>(g.size()));
  for (int j = 0; j < g.n2; ++j)
    for (int i = 0; i < g.n1; ++i)
      vals[static_cast<size_t>(g.idx(i, j))] = 0.5 * g.x1(i) * g.x1(i);
  ValueField vf = ValueField::from_values(g, vals);
  GameField game = solve_two_obstacle(s, constant_field(g, 0.0), g);
  CHECK_THROWS_AS(mc_vxx_degenerate(s, game, vf, {0.0, 0.0}, 10, 1.0, 1e-3, 1), DynkinError);
}
