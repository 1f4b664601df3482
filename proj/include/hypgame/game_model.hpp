#pragma once

///////////////////////////////////////////////////////////////////////////////
//
// Constrained N-player discrete-time dynamic game over stagewise-affine
// dynamics. Costs and constraints come from a closed catalog of smooth
// parameterized primitives so that exact first and second derivatives are
// available everywhere.
//
// Conventions:
//  - The joint stage vector is z_t = (x_t, u^1_t, ..., u^N_t).
//  - Player costs may touch any part of z_t (cross-player cost coupling is
//    allowed); player constraints may touch only (x_t, u^i_t).
//  - Inequalities are feasible when g >= 0.
//
///////////////////////////////////////////////////////////////////////////////

#include <cmath>
#include <numeric>
#include <variant>
#include <vector>

#include "hypgame/types.hpp"

namespace hypgame {

// ─── Dynamics ────────────────────────────────────────────────────────────────

// x_{t+1} = A x_t + sum_i B[i] u^i_t + c
template <typename Scalar>
struct AffineDynamics {
  MatX<Scalar> A;
  std::vector<MatX<Scalar>> B;
  VecX<Scalar> c;

  int state_dim() const { return static_cast<int>(A.rows()); }

  VecX<Scalar> step(const VecX<Scalar>& x,
                    const std::vector<VecX<Scalar>>& u) const {
    VecX<Scalar> next = A * x + c;
    for (std::size_t i = 0; i < B.size(); ++i) next += B[i] * u[i];
    return next;
  }
};

// ─── Cost catalog ────────────────────────────────────────────────────────────

// 0.5 z'Hz + g'z + c0 over the joint stage vector (or over x for terminal
// terms).
template <typename Scalar>
struct QuadraticCostTerm {
  MatX<Scalar> hess;
  VecX<Scalar> grad;
  Scalar constant = Scalar(0);
};

// weight * (z[index] - reference)^2
template <typename Scalar>
struct TrackingCostTerm {
  int index = 0;
  Scalar weight = Scalar(0);
  Scalar reference = Scalar(0);
};

template <typename Scalar>
using CostTerm = std::variant<QuadraticCostTerm<Scalar>, TrackingCostTerm<Scalar>>;

template <typename Scalar>
struct PlayerCost {
  std::vector<CostTerm<Scalar>> stage;     // applied at every t in 0..T-1
  std::vector<CostTerm<Scalar>> terminal;  // over x_T
};

// ─── Constraint catalog ──────────────────────────────────────────────────────

enum class ConstraintKind { kEquality, kInequality };

// Rows E x + F u^i + e. F has zero columns for terminal blocks.
template <typename Scalar>
struct AffineConstraint {
  MatX<Scalar> state_jac;
  MatX<Scalar> control_jac;
  VecX<Scalar> offset;

  int rows() const { return static_cast<int>(offset.size()); }
};

// ((x[lon_a]-x[lon_b])/semi_lon)^2 + ((x[lat_a]-x[lat_b])/semi_lat)^2 - 1,
// a single state-only row. Feasible outside the ellipse.
template <typename Scalar>
struct EllipseSeparationConstraint {
  int lon_a = 0, lat_a = 0;
  int lon_b = 0, lat_b = 0;
  Scalar semi_lon = Scalar(1);
  Scalar semi_lat = Scalar(1);
};

template <typename Scalar>
using ConstraintFn =
    std::variant<AffineConstraint<Scalar>, EllipseSeparationConstraint<Scalar>>;

// A constraint applied on a contiguous stage range. last_stage == -1 means
// through T-1.
template <typename Scalar>
struct StageConstraint {
  ConstraintKind kind = ConstraintKind::kEquality;
  int first_stage = 0;
  int last_stage = -1;
  ConstraintFn<Scalar> fn;
};

template <typename Scalar>
struct TerminalConstraint {
  ConstraintKind kind = ConstraintKind::kEquality;
  ConstraintFn<Scalar> fn;
};

template <typename Scalar>
struct PlayerConstraints {
  std::vector<StageConstraint<Scalar>> stage;
  std::vector<TerminalConstraint<Scalar>> terminal;
};

// ─── Game and trajectory ─────────────────────────────────────────────────────

template <typename Scalar>
struct DynamicGame {
  int num_players = 0;
  int horizon = 0;
  int state_dim = 0;
  std::vector<int> control_dims;
  AffineDynamics<Scalar> dynamics;
  VecX<Scalar> initial_state;
  std::vector<PlayerCost<Scalar>> costs;
  std::vector<PlayerConstraints<Scalar>> constraints;

  int total_control_dim() const {
    return std::accumulate(control_dims.begin(), control_dims.end(), 0);
  }
  int control_offset(PlayerIndex i) const {
    return std::accumulate(control_dims.begin(), control_dims.begin() + i, 0);
  }
};

template <typename Scalar>
struct GameTrajectory {
  std::vector<VecX<Scalar>> states;                 // T+1 entries
  std::vector<std::vector<VecX<Scalar>>> controls;  // [player][t], T entries

  int horizon() const { return static_cast<int>(states.size()) - 1; }
};

// u^i_t = -K^i_t x_t - k^i_t, relative to the linearization point.
template <typename Scalar>
struct AffinePolicySet {
  std::vector<std::vector<MatX<Scalar>>> gains;    // [player][t], m^i x n
  std::vector<std::vector<VecX<Scalar>>> offsets;  // [player][t], m^i
};

template <typename Scalar>
struct SolutionMultipliers {
  // dynamics[i][t] for t = 0..T-1: costate of player i on x_{t+1}.
  std::vector<std::vector<VecX<Scalar>>> dynamics;
  // equality[i][t] / inequality[i][t] for t = 0..T; index T holds terminal
  // blocks. Inequality vectors span the full block; inactive rows carry 0.
  std::vector<std::vector<VecX<Scalar>>> equality;
  std::vector<std::vector<VecX<Scalar>>> inequality;
};

// ─── Validation helpers ──────────────────────────────────────────────────────

template <typename Scalar>
void validate_dimensions(const DynamicGame<Scalar>& game,
                         const GameTrajectory<Scalar>& traj) {
  detail::require(static_cast<int>(traj.states.size()) == game.horizon + 1,
                  "trajectory must have horizon+1 states");
  detail::require(static_cast<int>(traj.controls.size()) == game.num_players,
                  "trajectory must have one control sequence per player");
  for (const auto& x : traj.states)
    detail::require(static_cast<int>(x.size()) == game.state_dim,
                    "state dimension mismatch");
  for (PlayerIndex i = 0; i < game.num_players; ++i) {
    detail::require(static_cast<int>(traj.controls[i].size()) == game.horizon,
                    "control sequence must have horizon entries");
    for (const auto& u : traj.controls[i])
      detail::require(static_cast<int>(u.size()) == game.control_dims[i],
                      "control dimension mismatch");
  }
}

template <typename Scalar>
void validate_player(const DynamicGame<Scalar>& game, PlayerIndex player) {
  detail::require(player >= 0 && player < game.num_players,
                  "player index out of range");
}

// Joint stage vector z_t = (x_t, u^1_t, ..., u^N_t).
template <typename Scalar>
VecX<Scalar> stage_vector(const DynamicGame<Scalar>& game,
                          const GameTrajectory<Scalar>& traj, int t) {
  VecX<Scalar> z(game.state_dim + game.total_control_dim());
  z.head(game.state_dim) = traj.states[t];
  int off = game.state_dim;
  for (PlayerIndex i = 0; i < game.num_players; ++i) {
    z.segment(off, game.control_dims[i]) = traj.controls[i][t];
    off += game.control_dims[i];
  }
  return z;
}

// ─── Catalog evaluation ──────────────────────────────────────────────────────

namespace detail {

template <typename Scalar>
Scalar eval_cost_term(const CostTerm<Scalar>& term, const VecX<Scalar>& z) {
  return std::visit(
      [&](const auto& c) -> Scalar {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, QuadraticCostTerm<Scalar>>) {
          return Scalar(0.5) * z.dot(c.hess * z) + c.grad.dot(z) + c.constant;
        } else {
          const Scalar d = z[c.index] - c.reference;
          return c.weight * d * d;
        }
      },
      term);
}

template <typename Scalar>
void add_cost_term_derivatives(const CostTerm<Scalar>& term,
                               const VecX<Scalar>& z, VecX<Scalar>& grad,
                               MatX<Scalar>& hess) {
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, QuadraticCostTerm<Scalar>>) {
          grad += Scalar(0.5) * (c.hess + c.hess.transpose()) * z + c.grad;
          hess += Scalar(0.5) * (c.hess + c.hess.transpose());
        } else {
          grad[c.index] += Scalar(2) * c.weight * (z[c.index] - c.reference);
          hess(c.index, c.index) += Scalar(2) * c.weight;
        }
      },
      term);
}

template <typename Scalar>
int constraint_rows(const ConstraintFn<Scalar>& fn) {
  return std::visit(
      [](const auto& c) -> int {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, AffineConstraint<Scalar>>)
          return c.rows();
        else
          return 1;
      },
      fn);
}

// Evaluates one constraint primitive at (x, u). u may be empty for terminal
// blocks; affine primitives with control columns then require a matching u.
template <typename Scalar>
VecX<Scalar> eval_constraint(const ConstraintFn<Scalar>& fn,
                             const VecX<Scalar>& x, const VecX<Scalar>& u) {
  return std::visit(
      [&](const auto& c) -> VecX<Scalar> {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, AffineConstraint<Scalar>>) {
          VecX<Scalar> v = c.state_jac * x + c.offset;
          if (c.control_jac.cols() > 0) v += c.control_jac * u;
          return v;
        } else {
          const Scalar dlon = (x[c.lon_a] - x[c.lon_b]) / c.semi_lon;
          const Scalar dlat = (x[c.lat_a] - x[c.lat_b]) / c.semi_lat;
          VecX<Scalar> v(1);
          v[0] = dlon * dlon + dlat * dlat - Scalar(1);
          return v;
        }
      },
      fn);
}

// Jacobians over (x, u^i): returns [rows x n] and [rows x m].
template <typename Scalar>
void constraint_jacobians(const ConstraintFn<Scalar>& fn, const VecX<Scalar>& x,
                          int control_dim, MatX<Scalar>& jx, MatX<Scalar>& ju) {
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, AffineConstraint<Scalar>>) {
          jx = c.state_jac;
          ju = MatX<Scalar>::Zero(c.rows(), control_dim);
          if (c.control_jac.cols() > 0) ju = c.control_jac;
        } else {
          jx = MatX<Scalar>::Zero(1, x.size());
          const Scalar glon =
              Scalar(2) * (x[c.lon_a] - x[c.lon_b]) / (c.semi_lon * c.semi_lon);
          const Scalar glat =
              Scalar(2) * (x[c.lat_a] - x[c.lat_b]) / (c.semi_lat * c.semi_lat);
          jx(0, c.lon_a) += glon;
          jx(0, c.lon_b) -= glon;
          jx(0, c.lat_a) += glat;
          jx(0, c.lat_b) -= glat;
          ju = MatX<Scalar>::Zero(1, control_dim);
        }
      },
      fn);
}

template <typename Scalar>
bool stage_active(const StageConstraint<Scalar>& c, int t, int horizon) {
  const int last = c.last_stage < 0 ? horizon - 1 : c.last_stage;
  return t >= c.first_stage && t <= last;
}

}  // namespace detail

// ─── Operations ──────────────────────────────────────────────────────────────

template <typename Scalar>
Scalar evaluate_player_cost(const DynamicGame<Scalar>& game,
                            const GameTrajectory<Scalar>& traj,
                            PlayerIndex player) {
  validate_dimensions(game, traj);
  validate_player(game, player);
  Scalar total = Scalar(0);
  for (int t = 0; t < game.horizon; ++t) {
    const VecX<Scalar> z = stage_vector(game, traj, t);
    for (const auto& term : game.costs[player].stage)
      total += detail::eval_cost_term(term, z);
  }
  const VecX<Scalar>& xT = traj.states[game.horizon];
  for (const auto& term : game.costs[player].terminal)
    total += detail::eval_cost_term(term, xT);
  return total;
}

// Stacked equality/inequality values per stage plus terminal blocks.
template <typename Scalar>
struct ConstraintValues {
  std::vector<VecX<Scalar>> eq;    // per stage 0..T-1
  std::vector<VecX<Scalar>> ineq;  // per stage 0..T-1
  VecX<Scalar> eq_terminal;
  VecX<Scalar> ineq_terminal;
};

template <typename Scalar>
ConstraintValues<Scalar> constraint_values(const DynamicGame<Scalar>& game,
                                           const GameTrajectory<Scalar>& traj,
                                           PlayerIndex player) {
  validate_dimensions(game, traj);
  validate_player(game, player);
  const auto& pc = game.constraints[player];
  ConstraintValues<Scalar> out;
  out.eq.resize(game.horizon);
  out.ineq.resize(game.horizon);
  for (int t = 0; t < game.horizon; ++t) {
    std::vector<Scalar> eqv, inv;
    for (const auto& c : pc.stage) {
      if (!detail::stage_active(c, t, game.horizon)) continue;
      const VecX<Scalar> v = detail::eval_constraint(
          c.fn, traj.states[t], traj.controls[player][t]);
      auto& dst = (c.kind == ConstraintKind::kEquality) ? eqv : inv;
      for (int r = 0; r < v.size(); ++r) dst.push_back(v[r]);
    }
    out.eq[t] = Eigen::Map<VecX<Scalar>>(eqv.data(), eqv.size());
    out.ineq[t] = Eigen::Map<VecX<Scalar>>(inv.data(), inv.size());
  }
  std::vector<Scalar> eqv, inv;
  const VecX<Scalar> empty_u(0);
  for (const auto& c : pc.terminal) {
    const VecX<Scalar> v =
        detail::eval_constraint(c.fn, traj.states[game.horizon], empty_u);
    auto& dst = (c.kind == ConstraintKind::kEquality) ? eqv : inv;
    for (int r = 0; r < v.size(); ++r) dst.push_back(v[r]);
  }
  out.eq_terminal = Eigen::Map<VecX<Scalar>>(eqv.data(), eqv.size());
  out.ineq_terminal = Eigen::Map<VecX<Scalar>>(inv.data(), inv.size());
  return out;
}

// All derivative data the game solvers need, evaluated along a trajectory.
template <typename Scalar>
struct StageDerivatives {
  MatX<Scalar> A;
  std::vector<MatX<Scalar>> B;
  std::vector<VecX<Scalar>> cost_grad;  // per player, over z
  std::vector<MatX<Scalar>> cost_hess;  // per player, over z
  std::vector<MatX<Scalar>> eq_state_jac, eq_control_jac;      // per player
  std::vector<MatX<Scalar>> ineq_state_jac, ineq_control_jac;  // per player
};

template <typename Scalar>
struct TerminalDerivatives {
  std::vector<VecX<Scalar>> cost_grad;  // per player, over x
  std::vector<MatX<Scalar>> cost_hess;
  std::vector<MatX<Scalar>> eq_jac, ineq_jac;
};

template <typename Scalar>
struct GameDerivatives {
  std::vector<StageDerivatives<Scalar>> stages;
  TerminalDerivatives<Scalar> terminal;
};

namespace detail {

template <typename Scalar>
void check_finite(const MatX<Scalar>& m, int stage, const char* what) {
  if (!m.allFinite())
    throw DomainError(std::string("non-finite ") + what + " at stage " +
                      std::to_string(stage));
}

// Stacks jacobians of all blocks of one kind scheduled at stage t.
template <typename Scalar>
void stack_stage_jacobians(const PlayerConstraints<Scalar>& pc,
                           ConstraintKind kind, const VecX<Scalar>& x,
                           int control_dim, int t, int horizon,
                           MatX<Scalar>& jx_out, MatX<Scalar>& ju_out) {
  int total = 0;
  for (const auto& c : pc.stage)
    if (c.kind == kind && stage_active(c, t, horizon))
      total += constraint_rows(c.fn);
  jx_out.resize(total, x.size());
  ju_out.resize(total, control_dim);
  int row = 0;
  for (const auto& c : pc.stage) {
    if (c.kind != kind || !stage_active(c, t, horizon)) continue;
    MatX<Scalar> jx, ju;
    constraint_jacobians(c.fn, x, control_dim, jx, ju);
    jx_out.middleRows(row, jx.rows()) = jx;
    ju_out.middleRows(row, ju.rows()) = ju;
    row += static_cast<int>(jx.rows());
  }
}

template <typename Scalar>
MatX<Scalar> stack_terminal_jacobians(const PlayerConstraints<Scalar>& pc,
                                      ConstraintKind kind,
                                      const VecX<Scalar>& x) {
  int total = 0;
  for (const auto& c : pc.terminal)
    if (c.kind == kind) total += constraint_rows(c.fn);
  MatX<Scalar> out(total, x.size());
  int row = 0;
  for (const auto& c : pc.terminal) {
    if (c.kind != kind) continue;
    MatX<Scalar> jx, ju;
    constraint_jacobians(c.fn, x, 0, jx, ju);
    out.middleRows(row, jx.rows()) = jx;
    row += static_cast<int>(jx.rows());
  }
  return out;
}

}  // namespace detail

template <typename Scalar>
GameDerivatives<Scalar> differentiate(const DynamicGame<Scalar>& game,
                                      const GameTrajectory<Scalar>& traj) {
  validate_dimensions(game, traj);
  const int n = game.state_dim;
  const int zdim = n + game.total_control_dim();
  GameDerivatives<Scalar> out;
  out.stages.resize(game.horizon);
  for (int t = 0; t < game.horizon; ++t) {
    auto& st = out.stages[t];
    st.A = game.dynamics.A;
    st.B = game.dynamics.B;
    const VecX<Scalar> z = stage_vector(game, traj, t);
    detail::check_finite<Scalar>(z, t, "stage point");
    st.cost_grad.assign(game.num_players, VecX<Scalar>::Zero(zdim));
    st.cost_hess.assign(game.num_players, MatX<Scalar>::Zero(zdim, zdim));
    st.eq_state_jac.resize(game.num_players);
    st.eq_control_jac.resize(game.num_players);
    st.ineq_state_jac.resize(game.num_players);
    st.ineq_control_jac.resize(game.num_players);
    for (PlayerIndex i = 0; i < game.num_players; ++i) {
      for (const auto& term : game.costs[i].stage)
        detail::add_cost_term_derivatives(term, z, st.cost_grad[i],
                                          st.cost_hess[i]);
      detail::check_finite<Scalar>(st.cost_grad[i], t, "cost gradient");
      detail::stack_stage_jacobians(game.constraints[i],
                                    ConstraintKind::kEquality, traj.states[t],
                                    game.control_dims[i], t, game.horizon,
                                    st.eq_state_jac[i], st.eq_control_jac[i]);
      detail::stack_stage_jacobians(
          game.constraints[i], ConstraintKind::kInequality, traj.states[t],
          game.control_dims[i], t, game.horizon, st.ineq_state_jac[i],
          st.ineq_control_jac[i]);
      detail::check_finite(st.eq_state_jac[i], t, "constraint jacobian");
      detail::check_finite(st.ineq_state_jac[i], t, "constraint jacobian");
    }
  }
  const VecX<Scalar>& xT = traj.states[game.horizon];
  detail::check_finite<Scalar>(xT, game.horizon, "terminal point");
  out.terminal.cost_grad.assign(game.num_players, VecX<Scalar>::Zero(n));
  out.terminal.cost_hess.assign(game.num_players, MatX<Scalar>::Zero(n, n));
  out.terminal.eq_jac.resize(game.num_players);
  out.terminal.ineq_jac.resize(game.num_players);
  for (PlayerIndex i = 0; i < game.num_players; ++i) {
    for (const auto& term : game.costs[i].terminal)
      detail::add_cost_term_derivatives(term, xT, out.terminal.cost_grad[i],
                                        out.terminal.cost_hess[i]);
    detail::check_finite<Scalar>(out.terminal.cost_grad[i], game.horizon,
                                 "cost gradient");
    out.terminal.eq_jac[i] = detail::stack_terminal_jacobians(
        game.constraints[i], ConstraintKind::kEquality, xT);
    out.terminal.ineq_jac[i] = detail::stack_terminal_jacobians(
        game.constraints[i], ConstraintKind::kInequality, xT);
  }
  return out;
}

// ─── Rollouts ────────────────────────────────────────────────────────────────

// Rolls the dynamics from the game's initial state under given controls.
template <typename Scalar>
GameTrajectory<Scalar> rollout(const DynamicGame<Scalar>& game,
                               const std::vector<std::vector<VecX<Scalar>>>&
                                   controls /* [player][t] */) {
  GameTrajectory<Scalar> traj;
  traj.controls = controls;
  traj.states.resize(game.horizon + 1);
  traj.states[0] = game.initial_state;
  for (int t = 0; t < game.horizon; ++t) {
    std::vector<VecX<Scalar>> ut(game.num_players);
    for (PlayerIndex i = 0; i < game.num_players; ++i) ut[i] = controls[i][t];
    traj.states[t + 1] = game.dynamics.step(traj.states[t], ut);
  }
  return traj;
}

template <typename Scalar>
GameTrajectory<Scalar> zero_control_rollout(const DynamicGame<Scalar>& game) {
  std::vector<std::vector<VecX<Scalar>>> controls(game.num_players);
  for (PlayerIndex i = 0; i < game.num_players; ++i)
    controls[i].assign(game.horizon,
                       VecX<Scalar>::Zero(game.control_dims[i]));
  return rollout(game, controls);
}

// Max dynamics defect along a trajectory; a trajectory is dynamically
// feasible when this is within tolerance.
template <typename Scalar>
Scalar max_dynamics_defect(const DynamicGame<Scalar>& game,
                           const GameTrajectory<Scalar>& traj) {
  validate_dimensions(game, traj);
  Scalar worst = (traj.states[0] - game.initial_state)
                     .template lpNorm<Eigen::Infinity>();
  for (int t = 0; t < game.horizon; ++t) {
    std::vector<VecX<Scalar>> ut(game.num_players);
    for (PlayerIndex i = 0; i < game.num_players; ++i)
      ut[i] = traj.controls[i][t];
    const VecX<Scalar> defect =
        traj.states[t + 1] - game.dynamics.step(traj.states[t], ut);
    worst = std::max(worst, defect.template lpNorm<Eigen::Infinity>());
  }
  return worst;
}

}  // namespace hypgame
