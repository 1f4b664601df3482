#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "hypgame/lq_solver.hpp"
#include "oracles.hpp"

using namespace hypgame;
using oracles::Mat;
using oracles::Vec;

namespace {

// Random unconstrained LQ game; costs touch only own controls plus the state.
LQApproximation<double> random_lq_game(std::mt19937& rng, int n,
                                       const std::vector<int>& m, int T,
                                       bool with_offsets = true) {
  LQApproximation<double> lq;
  lq.state_dim = n;
  lq.control_dims = m;
  lq.initial_state = oracles::random_vector(rng, n);
  const int np = static_cast<int>(m.size());
  int udim = 0;
  std::vector<int> uoff(np, 0);
  for (int i = 0; i < np; ++i) {
    uoff[i] = udim;
    udim += m[i];
  }
  const int zdim = n + udim;
  lq.stages.resize(T);
  for (int t = 0; t < T; ++t) {
    auto& st = lq.stages[t];
    st.A = oracles::random_matrix(rng, n, n, 0.5);
    st.A += Mat::Identity(n, n);
    st.c = with_offsets ? oracles::random_vector(rng, n, 0.1)
                        : Vec::Zero(n);
    st.B.resize(np);
    for (int i = 0; i < np; ++i) st.B[i] = oracles::random_matrix(rng, n, m[i]);
    for (int i = 0; i < np; ++i) {
      QuadraticStageCost<double> cost;
      cost.hess = Mat::Zero(zdim, zdim);
      cost.hess.topLeftCorner(n, n) = oracles::random_spd(rng, n, 0.5);
      cost.hess.block(n + uoff[i], n + uoff[i], m[i], m[i]) =
          oracles::random_spd(rng, m[i], 1.0);
      cost.grad = with_offsets ? oracles::random_vector(rng, zdim, 0.2)
                               : Vec::Zero(zdim);
      st.cost.push_back(cost);
      st.eq.push_back(AffineRows<double>::Empty(n, m[i]));
      st.ineq.push_back(AffineRows<double>::Empty(n, m[i]));
    }
  }
  for (int i = 0; i < np; ++i) {
    QuadraticStateCost<double> tc;
    tc.hess = oracles::random_spd(rng, n, 0.5);
    tc.grad = with_offsets ? oracles::random_vector(rng, n, 0.2)
                           : Vec::Zero(n);
    lq.terminal.cost.push_back(tc);
    lq.terminal.eq.push_back(AffineRows<double>::Empty(n, 0));
    lq.terminal.ineq.push_back(AffineRows<double>::Empty(n, 0));
  }
  return lq;
}

}  // namespace

TEST_CASE("single player unconstrained matches textbook riccati recursion") {
  for (unsigned seed = 0; seed < 5; ++seed) {
    std::mt19937 rng(seed);
    const int n = 4, m = 2, T = 10;
    auto lq = random_lq_game(rng, n, {m}, T);
    const auto sol = solve_lq_feedback_game(lq);

    oracles::RiccatiProblem pr;
    for (int t = 0; t < T; ++t) {
      const auto& st = lq.stages[t];
      pr.A.push_back(st.A);
      pr.B.push_back(st.B[0]);
      pr.c.push_back(st.c);
      const Mat H = 0.5 * (st.cost[0].hess + st.cost[0].hess.transpose());
      pr.Q.push_back(H.topLeftCorner(n, n));
      pr.R.push_back(H.bottomRightCorner(m, m));
      pr.S.push_back(H.topRightCorner(n, m));
      pr.q.push_back(st.cost[0].grad.head(n));
      pr.r.push_back(st.cost[0].grad.tail(m));
    }
    pr.QT = lq.terminal.cost[0].hess;
    pr.qT = lq.terminal.cost[0].grad;
    const auto pol = oracles::riccati_recursion(pr);

    for (int t = 0; t < T; ++t) {
      CHECK((sol.policies.gains[0][t] - pol.K[t]).cwiseAbs().maxCoeff() <=
            1e-10);
      CHECK((sol.policies.offsets[0][t] - pol.k[t]).cwiseAbs().maxCoeff() <=
            1e-10);
    }
    CHECK(lq_kkt_residual(lq, sol) <= 1e-9);
  }
}

TEST_CASE("T=1 games match the one-shot stacked KKT solve") {
  for (unsigned seed = 0; seed < 5; ++seed) {
    for (int np : {2, 3}) {
      for (bool with_rows : {false, true}) {
        std::mt19937 rng(seed * 31 + np);
        std::vector<int> m(np, 2);
        auto lq = random_lq_game(rng, 4, m, 1);
        if (with_rows) {
          for (int i = 0; i < np; ++i) {
            AffineRows<double> row;
            row.state_jac = oracles::random_matrix(rng, 1, 4);
            row.control_jac = oracles::random_matrix(rng, 1, 2);
            row.offset = oracles::random_vector(rng, 1);
            lq.stages[0].eq[i] = row;
          }
        }
        const auto sol = solve_lq_feedback_game(lq);
        const auto oneshot = oracles::one_shot_game(lq);
        for (int i = 0; i < np; ++i) {
          CHECK((sol.trajectory.controls[i][0] - oneshot.controls[i])
                    .cwiseAbs()
                    .maxCoeff() <= 1e-9);
          if (with_rows)
            CHECK((sol.multipliers.equality[i][0] - oneshot.row_multipliers[i])
                      .cwiseAbs()
                      .maxCoeff() <= 1e-8);
        }
        CHECK(lq_kkt_residual(lq, sol) <= 1e-9);
      }
    }
  }
}

TEST_CASE("player without control authority gets zero gains and rollout value") {
  std::mt19937 rng(7);
  auto lq = random_lq_game(rng, 3, {2, 2}, 6);
  for (auto& st : lq.stages) {
    st.B[1].setZero();
    st.cost[1].grad.tail(2).setZero();  // no linear control incentive either
  }
  const auto sol = solve_lq_feedback_game(lq);
  for (int t = 0; t < 6; ++t) {
    CHECK(sol.policies.gains[1][t].cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(sol.policies.offsets[1][t].cwiseAbs().maxCoeff() <= 1e-10);
  }
  // Value of player 1 at s=0 equals its cost along the rolled-out trajectory.
  const double v0 =
      0.5 * lq.initial_state.dot(sol.value[1].hess[0] * lq.initial_state) +
      sol.value[1].grad[0].dot(lq.initial_state) + sol.value[1].constant[0];
  CHECK(v0 == doctest::Approx(lq_player_cost(lq, sol.trajectory, 1))
                  .epsilon(1e-9));
}

TEST_CASE("single-player constrained solve matches dense full-horizon KKT") {
  for (unsigned seed = 0; seed < 5; ++seed) {
    std::mt19937 rng(100 + seed);
    const int n = 4, m = 2, T = 8;
    auto lq = random_lq_game(rng, n, {m}, T);
    // Terminal equality on two coordinates.
    AffineRows<double> term;
    term.state_jac = Mat::Zero(2, n);
    term.state_jac(0, 0) = 1.0;
    term.state_jac(1, 1) = 1.0;
    term.control_jac = Mat::Zero(2, 0);
    term.offset = Vec::Zero(2);
    term.offset << -1.0, 0.5;
    lq.terminal.eq[0] = term;
    // A state-only row mid-horizon: x[2] must hit 0.3 at t=4. Such a row has
    // no control coefficients and must propagate back one stage.
    AffineRows<double> mid;
    mid.state_jac = Mat::Zero(1, n);
    mid.state_jac(0, 2) = 1.0;
    mid.control_jac = Mat::Zero(1, m);
    mid.offset = Vec::Constant(1, -0.3);
    lq.stages[4].eq[0] = mid;
    // A mixed state/control row at t=2.
    AffineRows<double> mixed;
    mixed.state_jac = oracles::random_matrix(rng, 1, n);
    mixed.control_jac = oracles::random_matrix(rng, 1, m);
    mixed.offset = oracles::random_vector(rng, 1);
    lq.stages[2].eq[0] = mixed;

    const auto sol = solve_lq_feedback_game(lq);
    const auto dense = oracles::dense_constrained_lqr(lq);
    for (int t = 0; t < T; ++t)
      CHECK((sol.trajectory.controls[0][t] - dense.controls[t])
                .cwiseAbs()
                .maxCoeff() <= 1e-8);
    for (int t = 0; t <= T; ++t)
      CHECK((sol.trajectory.states[t] - dense.states[t])
                .cwiseAbs()
                .maxCoeff() <= 1e-8);
    CHECK(lq_kkt_residual(lq, sol) <= 1e-9);
  }
}

TEST_CASE("active rows hold along the trajectory and policies reproduce it") {
  std::mt19937 rng(42);
  auto lq = random_lq_game(rng, 4, {2, 1}, 7);
  AffineRows<double> row;
  row.state_jac = oracles::random_matrix(rng, 1, 4);
  row.control_jac = oracles::random_matrix(rng, 1, 2);
  row.offset = oracles::random_vector(rng, 1);
  lq.stages[3].eq[0] = row;
  AffineRows<double> term;
  term.state_jac = oracles::random_matrix(rng, 1, 4);
  term.control_jac = Mat::Zero(1, 0);
  term.offset = oracles::random_vector(rng, 1);
  lq.terminal.eq[1] = term;

  const auto sol = solve_lq_feedback_game(lq);
  // Active-row feasibility.
  const auto& x3 = sol.trajectory.states[3];
  CHECK(std::abs(row.state_jac.row(0).dot(x3) +
                 row.control_jac.row(0).dot(sol.trajectory.controls[0][3]) +
                 row.offset[0]) <= 1e-9);
  CHECK(std::abs(term.state_jac.row(0).dot(sol.trajectory.states[7]) +
                 term.offset[0]) <= 1e-9);

  // Policy rollout reproduces the returned trajectory.
  Vec x = lq.initial_state;
  for (int t = 0; t < 7; ++t) {
    Vec xn = lq.stages[t].A * x + lq.stages[t].c;
    for (int i = 0; i < 2; ++i) {
      const Vec u =
          -sol.policies.gains[i][t] * x - sol.policies.offsets[i][t];
      CHECK((u - sol.trajectory.controls[i][t]).cwiseAbs().maxCoeff() <=
            1e-10);
      xn += lq.stages[t].B[i] * u;
    }
    x = xn;
    CHECK((x - sol.trajectory.states[t + 1]).cwiseAbs().maxCoeff() <= 1e-10);
  }

  // Value matrices stay symmetric.
  for (int i = 0; i < 2; ++i)
    for (const auto& P : sol.value[i].hess)
      CHECK((P - P.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("scaling one player's cost leaves unconstrained policies unchanged") {
  std::mt19937 rng(11);
  const auto lq = random_lq_game(rng, 4, {2, 2}, 6);
  const auto base = solve_lq_feedback_game(lq);
  for (double alpha : {0.1, 10.0}) {
    auto scaled = lq;
    for (auto& st : scaled.stages) {
      st.cost[0].hess *= alpha;
      st.cost[0].grad *= alpha;
      st.cost[0].constant *= alpha;
    }
    scaled.terminal.cost[0].hess *= alpha;
    scaled.terminal.cost[0].grad *= alpha;
    scaled.terminal.cost[0].constant *= alpha;
    const auto sol = solve_lq_feedback_game(scaled);
    for (int t = 0; t < 6; ++t)
      for (int i = 0; i < 2; ++i) {
        CHECK((sol.policies.gains[i][t] - base.policies.gains[i][t])
                  .cwiseAbs()
                  .maxCoeff() <= 1e-9);
        CHECK((sol.policies.offsets[i][t] - base.policies.offsets[i][t])
                  .cwiseAbs()
                  .maxCoeff() <= 1e-9);
      }
  }
}

TEST_CASE("nash stationarity perturbations") {
  std::mt19937 rng(3);
  auto lq = random_lq_game(rng, 4, {2, 2}, 8);
  const auto sol = solve_lq_feedback_game(lq);

  SUBCASE("zero step gives exactly zero change") {
    std::vector<Vec> dir(8, Vec::Ones(2));
    CHECK(nash_stationarity_check(lq, sol, 0, dir, 0.0) == 0.0);
  }

  SUBCASE("cost change scales quadratically in the step") {
    for (int player : {0, 1}) {
      std::vector<Vec> dir;
      for (int t = 0; t < 8; ++t)
        dir.push_back(oracles::random_vector(rng, 2).normalized());
      std::vector<double> steps{1e-2, 1e-3, 1e-4};
      std::vector<double> changes;
      for (double s : steps)
        changes.push_back(
            std::abs(nash_stationarity_check(lq, sol, player, dir, s)));
      const double slope01 = std::log10(changes[0] / changes[1]);
      const double slope12 = std::log10(changes[1] / changes[2]);
      CHECK(slope01 == doctest::Approx(2.0).epsilon(0.05));
      CHECK(slope12 == doctest::Approx(2.0).epsilon(0.05));
    }
  }

  SUBCASE("convex costs cannot be improved by feasible perturbations") {
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<Vec> dir;
      for (int t = 0; t < 8; ++t)
        dir.push_back(oracles::random_vector(rng, 2));
      CHECK(nash_stationarity_check(lq, sol, 0, dir, 1e-2) >= -1e-10);
    }
  }
}

TEST_CASE("conflicting terminal rows raise infeasibility") {
  std::mt19937 rng(5);
  auto lq = random_lq_game(rng, 4, {2}, 5);
  AffineRows<double> term;
  term.state_jac = Mat::Zero(2, 4);
  term.state_jac(0, 1) = 1.0;
  term.state_jac(1, 1) = 1.0;  // same coordinate, different targets
  term.control_jac = Mat::Zero(2, 0);
  term.offset = Vec::Zero(2);
  term.offset << -1.0, -2.0;
  lq.terminal.eq[0] = term;
  CHECK_THROWS_AS(solve_lq_feedback_game(lq), InfeasibleError);
}

TEST_CASE("singular stage systems fall back to regularization") {
  LQApproximation<double> lq;
  lq.state_dim = 2;
  lq.control_dims = {1};
  lq.initial_state = Vec::Ones(2);
  lq.stages.resize(1);
  auto& st = lq.stages[0];
  st.A = Mat::Identity(2, 2);
  st.B = {Mat::Zero(2, 1)};
  st.B[0](0, 0) = 1.0;
  st.c = Vec::Zero(2);
  QuadraticStageCost<double> cost;
  cost.hess = Mat::Zero(3, 3);  // no control cost at all
  cost.grad = Vec::Zero(3);
  st.cost = {cost};
  st.eq = {AffineRows<double>::Empty(2, 1)};
  st.ineq = {AffineRows<double>::Empty(2, 1)};
  QuadraticStateCost<double> tc;
  tc.hess = Mat::Zero(2, 2);
  tc.grad = Vec::Zero(2);
  lq.terminal.cost = {tc};
  lq.terminal.eq = {AffineRows<double>::Empty(2, 0)};
  lq.terminal.ineq = {AffineRows<double>::Empty(2, 0)};

  const auto sol = solve_lq_feedback_game(lq);
  CHECK(sol.regularization > 0.0);
}
