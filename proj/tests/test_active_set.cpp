#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "hypgame/active_set.hpp"
#include "oracles.hpp"

using namespace hypgame;
using oracles::Mat;
using oracles::Vec;

namespace {

// min 0.5 u^2 subject to u >= bound; a one-stage scalar problem with a
// throwaway state.
LQApproximation<double> scalar_qp(double bound) {
  LQApproximation<double> lq;
  lq.state_dim = 1;
  lq.control_dims = {1};
  lq.initial_state = Vec::Zero(1);
  lq.stages.resize(1);
  auto& st = lq.stages[0];
  st.A = Mat::Identity(1, 1);
  st.B = {Mat::Zero(1, 1)};
  st.c = Vec::Zero(1);
  QuadraticStageCost<double> cost;
  cost.hess = Mat::Zero(2, 2);
  cost.hess(1, 1) = 1.0;
  cost.grad = Vec::Zero(2);
  st.cost = {cost};
  st.eq = {AffineRows<double>::Empty(1, 1)};
  AffineRows<double> g;
  g.state_jac = Mat::Zero(1, 1);
  g.control_jac = Mat::Ones(1, 1);
  g.offset = Vec::Constant(1, -bound);
  st.ineq = {g};
  QuadraticStateCost<double> tc;
  tc.hess = Mat::Zero(1, 1);
  tc.grad = Vec::Zero(1);
  lq.terminal.cost = {tc};
  lq.terminal.eq = {AffineRows<double>::Empty(1, 0)};
  lq.terminal.ineq = {AffineRows<double>::Empty(1, 0)};
  return lq;
}

// Two-player game with inequality rows on both players' controls.
LQApproximation<double> boxed_game(std::mt19937& rng, double lower) {
  const int n = 2, T = 5;
  LQApproximation<double> lq;
  lq.state_dim = n;
  lq.control_dims = {1, 1};
  lq.initial_state = Vec::Ones(n);
  lq.stages.resize(T);
  for (auto& st : lq.stages) {
    st.A = Mat::Identity(n, n) + oracles::random_matrix(rng, n, n, 0.1);
    st.B = {oracles::random_matrix(rng, n, 1), oracles::random_matrix(rng, n, 1)};
    st.c = Vec::Zero(n);
    for (int i = 0; i < 2; ++i) {
      QuadraticStageCost<double> cost;
      cost.hess = Mat::Zero(4, 4);
      cost.hess.topLeftCorner(n, n) = Mat::Identity(n, n);
      cost.hess(n + i, n + i) = 1.0;
      cost.grad = Vec::Zero(4);
      st.cost.push_back(cost);
      st.eq.push_back(AffineRows<double>::Empty(n, 1));
      AffineRows<double> g;  // u_i >= lower
      g.state_jac = Mat::Zero(1, n);
      g.control_jac = Mat::Ones(1, 1);
      g.offset = Vec::Constant(1, -lower);
      st.ineq.push_back(g);
    }
  }
  for (int i = 0; i < 2; ++i) {
    QuadraticStateCost<double> tc;
    tc.hess = Mat::Identity(n, n);
    tc.grad = Vec::Zero(n);
    lq.terminal.cost.push_back(tc);
    lq.terminal.eq.push_back(AffineRows<double>::Empty(n, 0));
    lq.terminal.ineq.push_back(AffineRows<double>::Empty(n, 0));
  }
  return lq;
}

}  // namespace

TEST_CASE("inactive constraints return in one minor iteration") {
  const auto lq = scalar_qp(-1.0);  // u >= -1, unconstrained optimum u = 0
  const auto res = solve_inequality_lq_game(lq, WorkingSet{});
  CHECK(res.minor_iterations == 1);
  CHECK(res.working_set.history.empty());
  for (const auto& per_stage : res.working_set.active)
    for (const auto& rows : per_stage) CHECK(rows.empty());
  CHECK(std::abs(res.solution.trajectory.controls[0][0][0]) <= 1e-12);
}

TEST_CASE("scalar qp activates the bound with unit multiplier") {
  const auto lq = scalar_qp(1.0);  // u >= 1
  const auto res = solve_inequality_lq_game(lq, WorkingSet{});
  CHECK(res.solution.trajectory.controls[0][0][0] ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(res.solution.multipliers.inequality[0][0][0] ==
        doctest::Approx(1.0).epsilon(1e-12));
  REQUIRE(res.working_set.history.size() == 1);
  CHECK(res.working_set.history[0].add);
  CHECK(res.working_set.history[0].row == 0);
  CHECK(res.minor_iterations == 2);
  CHECK(lq_kkt_residual_inequalities(lq, res.solution) <= 1e-8);
}

TEST_CASE("kkt certificate holds for games with active and inactive rows") {
  for (unsigned seed = 0; seed < 5; ++seed) {
    std::mt19937 rng(seed);
    const auto lq = boxed_game(rng, 0.15);
    const auto res = solve_inequality_lq_game(lq, WorkingSet{});
    CHECK(lq_kkt_residual_inequalities(lq, res.solution) <= 1e-8);
    // Some rows must have activated, else the case is vacuous.
    CHECK(!res.working_set.history.empty());
  }
}

TEST_CASE("warm start from the returned working set takes one iteration") {
  std::mt19937 rng(3);
  const auto lq = boxed_game(rng, 0.15);
  const auto first = solve_inequality_lq_game(lq, WorkingSet{});
  CHECK(first.minor_iterations > 1);
  const auto second = solve_inequality_lq_game(lq, first.working_set);
  CHECK(second.minor_iterations == 1);
  CHECK((second.solution.trajectory.states.back() -
         first.solution.trajectory.states.back())
            .cwiseAbs()
            .maxCoeff() <= 1e-12);
}

TEST_CASE("iteration cap raises a solver error carrying the history") {
  std::mt19937 rng(4);
  const auto lq = boxed_game(rng, 0.15);
  ActiveSetOptions opts;
  opts.max_iterations = 1;
  try {
    solve_inequality_lq_game(lq, WorkingSet{}, opts);
    CHECK(false);
  } catch (const SolverError& e) {
    CHECK(std::string(e.what()).find("cap") != std::string::npos);
  }
}

TEST_CASE("working set never exceeds what control authority can absorb") {
  // Conflicting one-sided bounds u >= 1 and -u >= 1 cannot both hold; the
  // second add makes the merged equality rows contradictory.
  auto lq = scalar_qp(1.0);
  AffineRows<double> g;
  g.state_jac = Mat::Zero(2, 1);
  g.control_jac = Mat::Zero(2, 1);
  g.control_jac << 1.0, -1.0;
  g.offset = Vec::Constant(2, -1.0);
  lq.stages[0].ineq = {g};
  CHECK_THROWS_AS(solve_inequality_lq_game(lq, WorkingSet{}),
                  InfeasibleError);
}
