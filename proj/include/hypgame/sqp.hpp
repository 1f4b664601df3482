#pragma once

///////////////////////////////////////////////////////////////////////////////
//
// Major-iteration loop for local generalized feedback Nash equilibria:
// quadraticize the game at the current trajectory, solve the resulting
// inequality-constrained LQ game, take a backtracking step on the KKT-residual
// merit, and repeat until the concatenated first-order conditions of all
// players hold.
//
///////////////////////////////////////////////////////////////////////////////

#include <chrono>
#include <string>
#include <vector>

#include "hypgame/active_set.hpp"
#include "hypgame/game_model.hpp"
#include "hypgame/lq_solver.hpp"

namespace hypgame {

template <typename Scalar>
struct SolveSettings {
  int max_major_iterations = 100;
  Scalar kkt_tolerance = Scalar(1e-6);
  Scalar backtracking_factor = Scalar(0.5);
  Scalar min_step = Scalar(1e-6);
  int minor_iteration_cap = 200;  // per major iteration
  Scalar active_set_tolerance = Scalar(1e-8);
  int max_stalls = 3;

  void validate() const {
    detail::require(max_major_iterations > 0 && minor_iteration_cap > 0,
                    "iteration caps must be positive");
    detail::require(kkt_tolerance > Scalar(0) && min_step > Scalar(0) &&
                        active_set_tolerance > Scalar(0),
                    "tolerances must be positive");
    detail::require(
        backtracking_factor > Scalar(0) && backtracking_factor < Scalar(1),
        "backtracking factor must lie in (0,1)");
  }
};

template <typename Scalar>
struct SolveReport {
  bool converged = false;
  int major_iterations = 0;
  int total_minor_iterations = 0;
  std::vector<int> minor_iterations_per_major;
  Scalar final_kkt_residual = std::numeric_limits<Scalar>::infinity();
  std::vector<Scalar> residual_trace;  // residual after each major step
  double wall_time_total = 0.0;        // seconds
  double wall_time_derivatives = 0.0;  // seconds spent building problem data
  std::string termination_reason;
  std::vector<int> active_rows_per_player;  // final working set summary
  Scalar max_regularization = Scalar(0);
};

template <typename Scalar>
struct GfneSolution {
  GameTrajectory<Scalar> trajectory;
  AffinePolicySet<Scalar> policies;
  SolutionMultipliers<Scalar> multipliers;
  SolveReport<Scalar> report;
  WorkingSet working_set;
};

// ─── Quadraticization ────────────────────────────────────────────────────────

// Second-order expansion of costs and first-order expansion of dynamics and
// constraints about a trajectory, in delta coordinates. Dynamics defects and
// the initial-state mismatch land in the affine offsets, so infeasible
// iterates are driven toward feasibility by the LQ step.
template <typename Scalar>
LQApproximation<Scalar> quadraticize(const DynamicGame<Scalar>& game,
                                     const GameTrajectory<Scalar>& traj) {
  validate_dimensions(game, traj);
  const auto derivs = differentiate(game, traj);
  const int T = game.horizon;

  LQApproximation<Scalar> lq;
  lq.state_dim = game.state_dim;
  lq.control_dims = game.control_dims;
  lq.initial_state = game.initial_state - traj.states[0];
  lq.stages.resize(T);
  std::vector<ConstraintValues<Scalar>> vals;
  vals.reserve(game.num_players);
  for (PlayerIndex i = 0; i < game.num_players; ++i)
    vals.push_back(constraint_values(game, traj, i));
  for (int t = 0; t < T; ++t) {
    auto& st = lq.stages[t];
    const auto& ds = derivs.stages[t];
    st.A = ds.A;
    st.B = ds.B;
    std::vector<VecX<Scalar>> ut(game.num_players);
    for (PlayerIndex i = 0; i < game.num_players; ++i)
      ut[i] = traj.controls[i][t];
    st.c = game.dynamics.step(traj.states[t], ut) - traj.states[t + 1];
    const VecX<Scalar> z = stage_vector(game, traj, t);
    for (PlayerIndex i = 0; i < game.num_players; ++i) {
      QuadraticStageCost<Scalar> cost;
      cost.hess = ds.cost_hess[i];
      cost.grad = ds.cost_grad[i];
      cost.constant = Scalar(0);
      for (const auto& term : game.costs[i].stage)
        cost.constant += detail::eval_cost_term(term, z);
      st.cost.push_back(std::move(cost));
    }
    for (PlayerIndex i = 0; i < game.num_players; ++i) {
      st.eq.push_back(AffineRows<Scalar>{ds.eq_state_jac[i],
                                         ds.eq_control_jac[i], vals[i].eq[t]});
      st.ineq.push_back(AffineRows<Scalar>{
          ds.ineq_state_jac[i], ds.ineq_control_jac[i], vals[i].ineq[t]});
    }
  }
  for (PlayerIndex i = 0; i < game.num_players; ++i) {
    QuadraticStateCost<Scalar> tc;
    tc.hess = derivs.terminal.cost_hess[i];
    tc.grad = derivs.terminal.cost_grad[i];
    tc.constant = Scalar(0);
    for (const auto& term : game.costs[i].terminal)
      tc.constant += detail::eval_cost_term(term, traj.states[T]);
    lq.terminal.cost.push_back(std::move(tc));
    lq.terminal.eq.push_back(AffineRows<Scalar>{
        derivs.terminal.eq_jac[i],
        MatX<Scalar>::Zero(derivs.terminal.eq_jac[i].rows(), 0),
        vals[i].eq_terminal});
    lq.terminal.ineq.push_back(AffineRows<Scalar>{
        derivs.terminal.ineq_jac[i],
        MatX<Scalar>::Zero(derivs.terminal.ineq_jac[i].rows(), 0),
        vals[i].ineq_terminal});
  }
  return lq;
}

// ─── Independent first-order certificate ─────────────────────────────────────

// Recomputes every KKT block of the game (stationarity, costate recursion
// with opponents' policy feedback, primal feasibility of both constraint
// types, dual feasibility, complementarity) from raw problem data and returns
// the infinity norm. Deliberately shares no state with the solvers.
template <typename Scalar>
Scalar kkt_residual(const DynamicGame<Scalar>& game,
                    const GameTrajectory<Scalar>& traj,
                    const AffinePolicySet<Scalar>& policies,
                    const SolutionMultipliers<Scalar>& mult) {
  validate_dimensions(game, traj);
  const int T = game.horizon;
  const int n = game.state_dim;
  const auto derivs = differentiate(game, traj);

  Scalar worst =
      (traj.states[0] - game.initial_state).template lpNorm<Eigen::Infinity>();
  auto bump_vec = [&worst](const VecX<Scalar>& v) {
    if (v.size()) worst = std::max(worst, v.template lpNorm<Eigen::Infinity>());
  };

  for (int t = 0; t < T; ++t) {
    std::vector<VecX<Scalar>> ut(game.num_players);
    for (PlayerIndex i = 0; i < game.num_players; ++i)
      ut[i] = traj.controls[i][t];
    bump_vec(traj.states[t + 1] - game.dynamics.step(traj.states[t], ut));
  }

  for (PlayerIndex i = 0; i < game.num_players; ++i) {
    const int mi = game.control_dims[i];
    const int uoff = game.control_offset(i);
    const auto vals = constraint_values(game, traj, i);
    for (int t = 0; t < T; ++t) {
      const auto& ds = derivs.stages[t];
      const VecX<Scalar>& lam = mult.dynamics[i][t];
      // Stationarity w.r.t. u^i_t.
      VecX<Scalar> stat = ds.cost_grad[i].segment(n + uoff, mi) +
                          ds.B[i].transpose() * lam;
      if (vals.eq[t].size())
        stat += ds.eq_control_jac[i].transpose() * mult.equality[i][t];
      if (vals.ineq[t].size())
        stat -= ds.ineq_control_jac[i].transpose() * mult.inequality[i][t];
      bump_vec(stat);
      // Costate recursion w.r.t. x_t.
      if (t >= 1) {
        VecX<Scalar> xstat = ds.cost_grad[i].head(n) + ds.A.transpose() * lam -
                             mult.dynamics[i][t - 1];
        if (vals.eq[t].size())
          xstat += ds.eq_state_jac[i].transpose() * mult.equality[i][t];
        if (vals.ineq[t].size())
          xstat -= ds.ineq_state_jac[i].transpose() * mult.inequality[i][t];
        for (PlayerIndex j = 0; j < game.num_players; ++j) {
          if (j == i) continue;
          const int mj = game.control_dims[j];
          const VecX<Scalar> dj =
              ds.cost_grad[i].segment(n + game.control_offset(j), mj) +
              ds.B[j].transpose() * lam;
          xstat -= policies.gains[j][t].transpose() * dj;
        }
        bump_vec(xstat);
      }
      // Primal feasibility, dual feasibility, complementarity.
      bump_vec(vals.eq[t]);
      for (int r = 0; r < vals.ineq[t].size(); ++r) {
        worst = std::max(worst, std::max(Scalar(0), -vals.ineq[t][r]));
        worst =
            std::max(worst, std::max(Scalar(0), -mult.inequality[i][t][r]));
        worst = std::max(worst,
                         std::abs(mult.inequality[i][t][r] * vals.ineq[t][r]));
      }
    }
    // Terminal blocks.
    VecX<Scalar> xstat = derivs.terminal.cost_grad[i] - mult.dynamics[i][T - 1];
    if (vals.eq_terminal.size())
      xstat += derivs.terminal.eq_jac[i].transpose() * mult.equality[i][T];
    if (vals.ineq_terminal.size())
      xstat -= derivs.terminal.ineq_jac[i].transpose() * mult.inequality[i][T];
    bump_vec(xstat);
    bump_vec(vals.eq_terminal);
    for (int r = 0; r < vals.ineq_terminal.size(); ++r) {
      worst = std::max(worst, std::max(Scalar(0), -vals.ineq_terminal[r]));
      worst = std::max(worst, std::max(Scalar(0), -mult.inequality[i][T][r]));
      worst = std::max(
          worst, std::abs(mult.inequality[i][T][r] * vals.ineq_terminal[r]));
    }
  }
  return worst;
}

namespace sqpdetail {

template <typename Scalar>
SolutionMultipliers<Scalar> zero_multipliers(const DynamicGame<Scalar>& game) {
  SolutionMultipliers<Scalar> m;
  const int T = game.horizon;
  m.dynamics.assign(game.num_players, {});
  m.equality.assign(game.num_players, {});
  m.inequality.assign(game.num_players, {});
  GameTrajectory<Scalar> probe = zero_control_rollout(game);
  for (PlayerIndex i = 0; i < game.num_players; ++i) {
    const auto vals = constraint_values(game, probe, i);
    m.dynamics[i].assign(T, VecX<Scalar>::Zero(game.state_dim));
    m.equality[i].resize(T + 1);
    m.inequality[i].resize(T + 1);
    for (int t = 0; t < T; ++t) {
      m.equality[i][t] = VecX<Scalar>::Zero(vals.eq[t].size());
      m.inequality[i][t] = VecX<Scalar>::Zero(vals.ineq[t].size());
    }
    m.equality[i][T] = VecX<Scalar>::Zero(vals.eq_terminal.size());
    m.inequality[i][T] = VecX<Scalar>::Zero(vals.ineq_terminal.size());
  }
  return m;
}

template <typename Scalar>
AffinePolicySet<Scalar> zero_policies(const DynamicGame<Scalar>& game) {
  AffinePolicySet<Scalar> p;
  p.gains.assign(game.num_players, {});
  p.offsets.assign(game.num_players, {});
  for (PlayerIndex i = 0; i < game.num_players; ++i) {
    p.gains[i].assign(game.horizon, MatX<Scalar>::Zero(game.control_dims[i],
                                                       game.state_dim));
    p.offsets[i].assign(game.horizon,
                        VecX<Scalar>::Zero(game.control_dims[i]));
  }
  return p;
}

template <typename Scalar>
GameTrajectory<Scalar> step_trajectory(const GameTrajectory<Scalar>& base,
                                       const GameTrajectory<Scalar>& delta,
                                       Scalar alpha) {
  GameTrajectory<Scalar> out = base;
  for (std::size_t t = 0; t < out.states.size(); ++t)
    out.states[t] += alpha * delta.states[t];
  for (std::size_t i = 0; i < out.controls.size(); ++i)
    for (std::size_t t = 0; t < out.controls[i].size(); ++t)
      out.controls[i][t] += alpha * delta.controls[i][t];
  return out;
}

}  // namespace sqpdetail

template <typename Scalar>
GfneSolution<Scalar> solve_gfne(const DynamicGame<Scalar>& game,
                                const GameTrajectory<Scalar>& init,
                                const SolveSettings<Scalar>& settings = {}) {
  settings.validate();
  validate_dimensions(game, init);
  const auto t_start = std::chrono::steady_clock::now();
  auto seconds_since = [](auto t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  GfneSolution<Scalar> out;
  out.trajectory = init;
  out.policies = sqpdetail::zero_policies(game);
  out.multipliers = sqpdetail::zero_multipliers(game);
  auto& report = out.report;

  Scalar merit =
      kkt_residual(game, out.trajectory, out.policies, out.multipliers);
  int stalls = 0;
  bool have_ws = false;

  ActiveSetOptions as_opts;
  as_opts.tolerance = double(settings.active_set_tolerance);
  as_opts.max_iterations = settings.minor_iteration_cap;

  for (int major = 0; major < settings.max_major_iterations; ++major) {
    const auto t_deriv = std::chrono::steady_clock::now();
    const auto lq = quadraticize(game, out.trajectory);
    report.wall_time_derivatives += seconds_since(t_deriv);

    InequalityLqResult<Scalar> res;
    try {
      res = solve_inequality_lq_game(
          lq, have_ws ? out.working_set : make_working_set(lq), as_opts);
    } catch (const SolverError& e) {
      throw SolverError(std::string(e.what()) + " [major iteration " +
                        std::to_string(major + 1) + "]");
    } catch (const InfeasibleError& e) {
      throw InfeasibleError(std::string(e.what()) + " [major iteration " +
                            std::to_string(major + 1) + "]");
    }
    out.working_set = res.working_set;
    have_ws = true;
    report.total_minor_iterations += res.minor_iterations;
    report.minor_iterations_per_major.push_back(res.minor_iterations);
    report.max_regularization =
        std::max(report.max_regularization, res.solution.regularization);

    // Backtracking on the KKT-residual merit; multipliers take the full step.
    Scalar alpha = Scalar(1);
    Scalar best_merit = merit;
    GameTrajectory<Scalar> accepted;
    bool decreased = false;
    while (alpha >= settings.min_step) {
      const auto trial = sqpdetail::step_trajectory(
          out.trajectory, res.solution.trajectory, alpha);
      const Scalar trial_merit = kkt_residual(
          game, trial, res.solution.policies, res.solution.multipliers);
      if (trial_merit < merit) {
        accepted = trial;
        best_merit = trial_merit;
        decreased = true;
        break;
      }
      alpha *= settings.backtracking_factor;
    }
    if (!decreased) {
      const auto trial = sqpdetail::step_trajectory(
          out.trajectory, res.solution.trajectory, settings.min_step);
      accepted = trial;
      best_merit = kkt_residual(game, trial, res.solution.policies,
                                res.solution.multipliers);
      ++stalls;
    }

    out.trajectory = std::move(accepted);
    out.policies = res.solution.policies;
    out.multipliers = res.solution.multipliers;
    merit = best_merit;
    ++report.major_iterations;
    report.residual_trace.push_back(merit);

    if (merit <= settings.kkt_tolerance) {
      report.converged = true;
      report.termination_reason = "converged";
      break;
    }
    if (stalls >= settings.max_stalls) {
      report.termination_reason = "stalled";
      break;
    }
  }
  if (report.termination_reason.empty())
    report.termination_reason = "max_major_iterations";

  report.final_kkt_residual = merit;
  report.active_rows_per_player.assign(game.num_players, 0);
  for (PlayerIndex i = 0; i < game.num_players; ++i)
    for (const auto& rows : out.working_set.active[i])
      report.active_rows_per_player[i] += static_cast<int>(rows.size());
  report.wall_time_total = seconds_since(t_start);
  return out;
}

// Zero-control rollout from the initial state; the default initialization.
template <typename Scalar>
GameTrajectory<Scalar> default_initialization(const DynamicGame<Scalar>& game) {
  return zero_control_rollout(game);
}

}  // namespace hypgame
