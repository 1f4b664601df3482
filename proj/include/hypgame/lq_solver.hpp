#pragma once

///////////////////////////////////////////////////////////////////////////////
//
// Equality-constrained linear-quadratic feedback game solver.
//
// Backward pass: at each stage the stationarity conditions of every player's
// stage Lagrangian (stage cost + value-to-go + multiplier terms for own
// active rows and own constraint-to-go) are stacked with the active rows into
// one joint linear system, solved for all controls and multipliers as affine
// functions of the state. Constraint rows that exceed a player's control
// authority at a stage are propagated backward as affine-in-state rows
// ("constraint-to-go") and absorbed at the latest stage that can resolve
// them. Forward pass: roll the resulting affine policies from the initial
// state.
//
// Multipliers are recovered for the original rows they belong to: every row
// presented to a stage system carries a provenance map onto original
// (player, stage, row) slots, composed through deferrals, so reported
// multipliers satisfy the concatenated first-order conditions of the game.
//
///////////////////////////////////////////////////////////////////////////////

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "hypgame/game_model.hpp"
#include "hypgame/lq_approximation.hpp"

namespace hypgame {

template <typename Scalar>
struct LqSolution {
  AffinePolicySet<Scalar> policies;
  GameTrajectory<Scalar> trajectory;
  SolutionMultipliers<Scalar> multipliers;
  std::vector<ValueModel<Scalar>> value;  // per player
  // Own-control coefficients of the rows enforced per player per stage;
  // perturbations feasible to first order live in their null space.
  std::vector<std::vector<MatX<Scalar>>> enforced_control_rows;
  Scalar regularization = Scalar(0);  // largest mu applied, 0 if none
};

namespace lqdetail {

// Row-dependence threshold, relative to the row's own scale.
constexpr double kRankTol = 1e-8;
// A propagated row whose state coefficients vanish must have a vanishing
// offset, else the game is infeasible.
constexpr double kFeasTol = 1e-7;

template <typename Scalar>
struct SysRow {
  RowX<Scalar> x_coeff;                // over x_s
  std::vector<RowX<Scalar>> u_coeff;   // per player block
  Scalar offset = Scalar(0);
  RowX<Scalar> next_coeff;             // over x_{s+1}; zero for own stage rows
  std::vector<std::pair<int, Scalar>> prov;  // slot id -> weight

  void axpy(Scalar a, const SysRow& other) {
    x_coeff += a * other.x_coeff;
    for (std::size_t j = 0; j < u_coeff.size(); ++j)
      u_coeff[j] += a * other.u_coeff[j];
    offset += a * other.offset;
    next_coeff += a * other.next_coeff;
    for (const auto& [slot, w] : other.prov) prov.emplace_back(slot, a * w);
  }
};

template <typename Scalar>
struct CtgRow {
  RowX<Scalar> coeff;  // over the state the row constrains
  Scalar offset = Scalar(0);
  std::vector<std::pair<int, Scalar>> prov;
};

// Per-player bookkeeping for one processed stage.
template <typename Scalar>
struct StageRecord {
  std::vector<SysRow<Scalar>> kept;  // rows enforced in this stage's system
  MatX<Scalar> mult_x;               // kept-row multipliers, affine in x_s
  VecX<Scalar> mult_1;
  MatX<Scalar> own_rows;             // kept rows' own-control coefficients
};

// Maps (stage, row) of equality blocks onto linear slot ids per player.
template <typename Scalar>
struct SlotIndex {
  std::vector<int> stage_offset;  // 0..T, offset of each stage's eq block
  int total = 0;

  explicit SlotIndex(const LQApproximation<Scalar>& lq, PlayerIndex i) {
    const int T = lq.horizon();
    stage_offset.resize(T + 1);
    int off = 0;
    for (int t = 0; t < T; ++t) {
      stage_offset[t] = off;
      off += lq.stages[t].eq[i].rows();
    }
    stage_offset[T] = off;
    off += lq.terminal.eq[i].rows();
    total = off;
  }
  int slot(int stage, int row) const { return stage_offset[stage] + row; }
};

}  // namespace lqdetail

template <typename Scalar>
LqSolution<Scalar> solve_lq_feedback_game(const LQApproximation<Scalar>& lq) {
  using lqdetail::CtgRow;
  using lqdetail::StageRecord;
  using lqdetail::SysRow;

  validate_dimensions(lq);
  const int T = lq.horizon();
  const int n = lq.state_dim;
  const int np = lq.num_players();
  const int udim = std::accumulate(lq.control_dims.begin(),
                                   lq.control_dims.end(), 0);
  const int zdim = n + udim;
  std::vector<int> uoff(np, 0);
  for (int i = 1; i < np; ++i) uoff[i] = uoff[i - 1] + lq.control_dims[i - 1];

  LqSolution<Scalar> sol;
  sol.value.resize(np);
  std::vector<lqdetail::SlotIndex<Scalar>> slots;
  slots.reserve(np);
  for (int i = 0; i < np; ++i) slots.emplace_back(lq, i);

  // Terminal value and constraint-to-go.
  std::vector<MatX<Scalar>> P(np);
  std::vector<VecX<Scalar>> p(np);
  std::vector<Scalar> rho(np);
  std::vector<std::vector<CtgRow<Scalar>>> ctg(np);
  for (int i = 0; i < np; ++i) {
    auto& vm = sol.value[i];
    vm.hess.resize(T + 1);
    vm.grad.resize(T + 1);
    vm.constant.resize(T + 1);
    vm.ctg_rows.resize(T + 1);
    vm.ctg_offset.resize(T + 1);
    const auto& tc = lq.terminal.cost[i];
    P[i] = Scalar(0.5) * (tc.hess + tc.hess.transpose());
    p[i] = tc.grad;
    rho[i] = tc.constant;
    vm.hess[T] = P[i];
    vm.grad[T] = p[i];
    vm.constant[T] = rho[i];
    const auto& rows = lq.terminal.eq[i];
    vm.ctg_rows[T] = rows.state_jac;
    vm.ctg_offset[T] = rows.offset;
    for (int r = 0; r < rows.rows(); ++r) {
      CtgRow<Scalar> row;
      row.coeff = rows.state_jac.row(r);
      row.offset = rows.offset[r];
      row.prov.emplace_back(slots[i].slot(T, r), Scalar(1));
      ctg[i].push_back(std::move(row));
    }
  }

  std::vector<std::vector<StageRecord<Scalar>>> records(
      T, std::vector<StageRecord<Scalar>>(np));
  std::vector<MatX<Scalar>> Kall(T);   // stacked gains, udim x n
  std::vector<VecX<Scalar>> kall(T);

  for (int s = T - 1; s >= 0; --s) {
    const auto& st = lq.stages[s];

    // Candidate rows per player: own equality rows, then inherited
    // constraint-to-go expressed through the stage dynamics.
    std::vector<std::vector<SysRow<Scalar>>> kept(np), deferred(np);
    for (int i = 0; i < np; ++i) {
      std::vector<SysRow<Scalar>> cand;
      const auto& eq = st.eq[i];
      for (int r = 0; r < eq.rows(); ++r) {
        SysRow<Scalar> row;
        row.x_coeff = eq.state_jac.row(r);
        row.u_coeff.resize(np);
        for (int j = 0; j < np; ++j)
          row.u_coeff[j] = RowX<Scalar>::Zero(lq.control_dims[j]);
        row.u_coeff[i] = eq.control_jac.row(r);
        row.offset = eq.offset[r];
        row.next_coeff = RowX<Scalar>::Zero(n);
        row.prov.emplace_back(slots[i].slot(s, r), Scalar(1));
        cand.push_back(std::move(row));
      }
      for (const auto& c : ctg[i]) {
        SysRow<Scalar> row;
        row.x_coeff = c.coeff * st.A;
        row.u_coeff.resize(np);
        for (int j = 0; j < np; ++j) row.u_coeff[j] = c.coeff * st.B[j];
        row.offset = c.coeff.dot(st.c) + c.offset;
        row.next_coeff = c.coeff;
        row.prov = c.prov;
        cand.push_back(std::move(row));
      }

      // Split candidates by whether the player's own controls can span them
      // (modified Gram-Schmidt over the own-control coefficients). Dependent
      // rows are reduced against the kept rows and passed backward.
      std::vector<VecX<Scalar>> basis;
      std::vector<int> kept_idx;
      for (std::size_t r = 0; r < cand.size(); ++r) {
        VecX<Scalar> g = cand[r].u_coeff[i].transpose();
        const Scalar scale =
            std::max<Scalar>(Scalar(1), std::max<Scalar>(g.norm(),
                                                         cand[r].x_coeff.norm()));
        VecX<Scalar> res = g;
        for (const auto& b : basis) res -= b.dot(res) * b;
        if (res.norm() > Scalar(lqdetail::kRankTol) * scale) {
          basis.push_back(res.normalized());
          kept_idx.push_back(static_cast<int>(r));
          kept[i].push_back(cand[r]);
        } else {
          // Least-squares combination of kept rows matching this row's
          // own-control coefficients.
          SysRow<Scalar> def = cand[r];
          if (!kept_idx.empty()) {
            MatX<Scalar> Gk(lq.control_dims[i],
                            static_cast<int>(kept_idx.size()));
            for (std::size_t k = 0; k < kept_idx.size(); ++k)
              Gk.col(k) = cand[kept_idx[k]].u_coeff[i].transpose();
            const VecX<Scalar> coef =
                Gk.completeOrthogonalDecomposition().solve(g);
            for (std::size_t k = 0; k < kept_idx.size(); ++k)
              def.axpy(-coef[k], cand[kept_idx[k]]);
          }
          def.u_coeff[i].setZero();
          deferred[i].push_back(std::move(def));
        }
      }
    }

    // Assemble the joint stage system over [u; multipliers].
    int total_rows = 0;
    std::vector<int> moff(np, 0);
    for (int i = 0; i < np; ++i) {
      moff[i] = udim + total_rows;
      total_rows += static_cast<int>(kept[i].size());
    }
    const int dim = udim + total_rows;
    MatX<Scalar> S = MatX<Scalar>::Zero(dim, dim);
    MatX<Scalar> rhs = MatX<Scalar>::Zero(dim, n + 1);

    for (int i = 0; i < np; ++i) {
      const int mi = lq.control_dims[i];
      const MatX<Scalar> Hq =
          Scalar(0.5) * (st.cost[i].hess + st.cost[i].hess.transpose());
      const auto Hui_x = Hq.block(n + uoff[i], 0, mi, n);
      const MatX<Scalar> BiP = st.B[i].transpose() * P[i];
      // Stationarity of player i's stage Lagrangian w.r.t. u^i.
      for (int j = 0; j < np; ++j) {
        S.block(uoff[i], uoff[j], mi, lq.control_dims[j]) =
            Hq.block(n + uoff[i], n + uoff[j], mi, lq.control_dims[j]) +
            BiP * st.B[j];
      }
      for (std::size_t r = 0; r < kept[i].size(); ++r)
        S.block(uoff[i], moff[i] + static_cast<int>(r), mi, 1) =
            kept[i][r].u_coeff[i].transpose();
      rhs.block(uoff[i], 0, mi, n) = -(Hui_x + BiP * st.A);
      rhs.block(uoff[i], n, mi, 1) =
          -(st.cost[i].grad.segment(n + uoff[i], mi) +
            st.B[i].transpose() * (P[i] * st.c + p[i]));
      // Enforced rows.
      for (std::size_t r = 0; r < kept[i].size(); ++r) {
        const int row = moff[i] + static_cast<int>(r);
        for (int j = 0; j < np; ++j)
          S.block(row, uoff[j], 1, lq.control_dims[j]) = kept[i][r].u_coeff[j];
        rhs.block(row, 0, 1, n) = -kept[i][r].x_coeff;
        rhs(row, n) = -kept[i][r].offset;
      }
    }

    // Solve, escalating Levenberg regularization of the control-Hessian
    // blocks if the joint system is singular.
    MatX<Scalar> W;
    Scalar mu = Scalar(0);
    while (true) {
      MatX<Scalar> Sreg = S;
      for (int i = 0; i < np; ++i)
        Sreg.block(uoff[i], uoff[i], lq.control_dims[i], lq.control_dims[i])
            .diagonal()
            .array() += mu;
      W = Sreg.partialPivLu().solve(rhs);
      const Scalar resid = (Sreg * W - rhs).template lpNorm<Eigen::Infinity>();
      const Scalar scale = std::max<Scalar>(
          Scalar(1), rhs.template lpNorm<Eigen::Infinity>());
      if (W.allFinite() && resid <= Scalar(1e-8) * scale) break;
      mu = (mu == Scalar(0)) ? Scalar(1e-8) : mu * Scalar(10);
      if (mu > Scalar(1e-2))
        throw SolverError("singular stage system at stage " +
                          std::to_string(s) + " (regularization exhausted)");
    }
    sol.regularization = std::max(sol.regularization, mu);

    Kall[s] = -W.block(0, 0, udim, n);
    kall[s] = -W.block(0, n, udim, 1);

    // Closed-loop dynamics under all policies.
    MatX<Scalar> Fcl = st.A;
    VecX<Scalar> beta = st.c;
    for (int j = 0; j < np; ++j) {
      Fcl -= st.B[j] * Kall[s].middleRows(uoff[j], lq.control_dims[j]);
      beta -= st.B[j] * kall[s].segment(uoff[j], lq.control_dims[j]);
    }

    // Map z = (x, u(x)) as an affine function of x.
    MatX<Scalar> Phi = MatX<Scalar>::Zero(zdim, n);
    VecX<Scalar> phi = VecX<Scalar>::Zero(zdim);
    Phi.topRows(n).setIdentity();
    Phi.bottomRows(udim) = -Kall[s];
    phi.tail(udim) = -kall[s];

    for (int i = 0; i < np; ++i) {
      auto& rec = records[s][i];
      rec.kept = std::move(kept[i]);
      const int ri = static_cast<int>(rec.kept.size());
      rec.mult_x = W.block(moff[i], 0, ri, n);
      rec.mult_1 = W.block(moff[i], n, ri, 1);
      rec.own_rows = MatX<Scalar>::Zero(ri, lq.control_dims[i]);
      for (int r = 0; r < ri; ++r)
        rec.own_rows.row(r) = rec.kept[static_cast<std::size_t>(r)].u_coeff[i];

      // Value recursion with the policies substituted in.
      const MatX<Scalar> Hq =
          Scalar(0.5) * (st.cost[i].hess + st.cost[i].hess.transpose());
      const VecX<Scalar> Pb = P[i] * beta + p[i];
      MatX<Scalar> Pnew = Phi.transpose() * Hq * Phi +
                          Fcl.transpose() * P[i] * Fcl;
      VecX<Scalar> pnew = Phi.transpose() * (Hq * phi + st.cost[i].grad) +
                          Fcl.transpose() * Pb;
      const Scalar rnew = Scalar(0.5) * phi.dot(Hq * phi) +
                          st.cost[i].grad.dot(phi) + st.cost[i].constant +
                          Scalar(0.5) * beta.dot(P[i] * beta) +
                          p[i].dot(beta) + rho[i];
      P[i] = Scalar(0.5) * (Pnew + Pnew.transpose());
      p[i] = pnew;
      rho[i] = rnew;

      // Next constraint-to-go: deferred rows with all policies substituted.
      ctg[i].clear();
      for (auto& row : deferred[i]) {
        CtgRow<Scalar> c;
        c.coeff = row.x_coeff;
        c.offset = row.offset;
        for (int j = 0; j < np; ++j) {
          c.coeff -= row.u_coeff[j] * Kall[s].middleRows(uoff[j],
                                                         lq.control_dims[j]);
          c.offset -= row.u_coeff[j].dot(
              kall[s].segment(uoff[j], lq.control_dims[j]));
        }
        if (c.coeff.template lpNorm<Eigen::Infinity>() <= Scalar(1e-11)) {
          if (std::abs(c.offset) > Scalar(lqdetail::kFeasTol))
            throw InfeasibleError(
                "constraint-to-go of player " + std::to_string(i) +
                " cannot be met at stage " + std::to_string(s) +
                " (residual " + std::to_string(double(c.offset)) + ")");
          continue;  // redundant row
        }
        c.prov = std::move(row.prov);
        ctg[i].push_back(std::move(c));
      }

      auto& vm = sol.value[i];
      vm.hess[s] = P[i];
      vm.grad[s] = p[i];
      vm.constant[s] = rho[i];
      const int q = static_cast<int>(ctg[i].size());
      vm.ctg_rows[s].resize(q, n);
      vm.ctg_offset[s].resize(q);
      for (int r = 0; r < q; ++r) {
        vm.ctg_rows[s].row(r) = ctg[i][static_cast<std::size_t>(r)].coeff;
        vm.ctg_offset[s][r] = ctg[i][static_cast<std::size_t>(r)].offset;
      }
    }
  }

  // Rows still pending at t = 0 are fixed by the initial state.
  for (int i = 0; i < np; ++i) {
    for (const auto& c : ctg[i]) {
      const Scalar v = c.coeff.dot(lq.initial_state) + c.offset;
      if (std::abs(v) > Scalar(lqdetail::kFeasTol))
        throw InfeasibleError("constraint-to-go of player " +
                              std::to_string(i) +
                              " violated at the initial state (residual " +
                              std::to_string(double(v)) + ")");
    }
  }

  // Forward pass.
  auto& traj = sol.trajectory;
  traj.states.resize(T + 1);
  traj.controls.assign(np, {});
  sol.policies.gains.assign(np, {});
  sol.policies.offsets.assign(np, {});
  for (int i = 0; i < np; ++i) {
    traj.controls[i].resize(T);
    sol.policies.gains[i].resize(T);
    sol.policies.offsets[i].resize(T);
  }
  traj.states[0] = lq.initial_state;
  for (int s = 0; s < T; ++s) {
    const auto& st = lq.stages[s];
    VecX<Scalar> xnext = st.A * traj.states[s] + st.c;
    for (int i = 0; i < np; ++i) {
      sol.policies.gains[i][s] = Kall[s].middleRows(uoff[i],
                                                    lq.control_dims[i]);
      sol.policies.offsets[i][s] = kall[s].segment(uoff[i],
                                                   lq.control_dims[i]);
      traj.controls[i][s] = -sol.policies.gains[i][s] * traj.states[s] -
                            sol.policies.offsets[i][s];
      xnext += st.B[i] * traj.controls[i][s];
    }
    traj.states[s + 1] = xnext;
  }

  // Multiplier recovery: evaluate each stage's multiplier functions along
  // the rollout and scatter onto original rows through the provenance maps.
  auto& mult = sol.multipliers;
  mult.dynamics.assign(np, {});
  mult.equality.assign(np, {});
  mult.inequality.assign(np, {});
  sol.enforced_control_rows.assign(np, {});
  for (int i = 0; i < np; ++i) {
    VecX<Scalar> slot_vals = VecX<Scalar>::Zero(slots[i].total);
    mult.dynamics[i].assign(T, VecX<Scalar>::Zero(n));
    sol.enforced_control_rows[i].resize(T);
    for (int s = 0; s < T; ++s) {
      const auto& rec = records[s][i];
      const VecX<Scalar> m = rec.mult_x * traj.states[s] + rec.mult_1;
      for (std::size_t r = 0; r < rec.kept.size(); ++r)
        for (const auto& [slot, w] : rec.kept[r].prov)
          slot_vals[slot] += w * m[static_cast<int>(r)];
      // Costate: gradient of the value-to-go plus constraint-to-go terms.
      VecX<Scalar> lam =
          sol.value[i].hess[s + 1] * traj.states[s + 1] +
          sol.value[i].grad[s + 1];
      for (std::size_t r = 0; r < rec.kept.size(); ++r)
        lam += rec.kept[r].next_coeff.transpose() * m[static_cast<int>(r)];
      mult.dynamics[i][s] = lam;
      sol.enforced_control_rows[i][s] = rec.own_rows;
    }
    mult.equality[i].resize(T + 1);
    mult.inequality[i].resize(T + 1);
    for (int t = 0; t < T; ++t) {
      mult.equality[i][t] =
          slot_vals.segment(slots[i].stage_offset[t], lq.stages[t].eq[i].rows());
      mult.inequality[i][t] = VecX<Scalar>::Zero(lq.stages[t].ineq[i].rows());
    }
    mult.equality[i][T] = slot_vals.segment(slots[i].stage_offset[T],
                                            lq.terminal.eq[i].rows());
    mult.inequality[i][T] = VecX<Scalar>::Zero(lq.terminal.ineq[i].rows());
  }

  return sol;
}

// ─── Independent first-order certificate at the LQ level ─────────────────────

// Recomputes the concatenated stationarity/feasibility blocks of the
// equality-constrained LQ game from raw problem data and a candidate
// solution. Returns the infinity norm over all blocks.
template <typename Scalar>
Scalar lq_kkt_residual(const LQApproximation<Scalar>& lq,
                       const LqSolution<Scalar>& sol) {
  const int T = lq.horizon();
  const int n = lq.state_dim;
  const int np = lq.num_players();
  std::vector<int> uoff(np, 0);
  for (int i = 1; i < np; ++i) uoff[i] = uoff[i - 1] + lq.control_dims[i - 1];
  const auto& traj = sol.trajectory;
  const auto& mult = sol.multipliers;

  Scalar worst = (traj.states[0] - lq.initial_state)
                     .template lpNorm<Eigen::Infinity>();
  auto bump = [&worst](Scalar v) { worst = std::max(worst, std::abs(v)); };
  auto bump_vec = [&worst](const VecX<Scalar>& v) {
    if (v.size()) worst = std::max(worst, v.template lpNorm<Eigen::Infinity>());
  };

  // Stage vector along the trajectory.
  const int udim =
      std::accumulate(lq.control_dims.begin(), lq.control_dims.end(), 0);
  auto zvec = [&](int t) {
    VecX<Scalar> z(n + udim);
    z.head(n) = traj.states[t];
    for (int j = 0; j < np; ++j)
      z.segment(n + uoff[j], lq.control_dims[j]) = traj.controls[j][t];
    return z;
  };

  for (int t = 0; t < T; ++t) {
    const auto& st = lq.stages[t];
    // Dynamics feasibility.
    VecX<Scalar> xnext = st.A * traj.states[t] + st.c;
    for (int j = 0; j < np; ++j) xnext += st.B[j] * traj.controls[j][t];
    bump_vec(traj.states[t + 1] - xnext);
  }

  for (int i = 0; i < np; ++i) {
    const int mi = lq.control_dims[i];
    for (int t = 0; t < T; ++t) {
      const auto& st = lq.stages[t];
      const MatX<Scalar> Hq =
          Scalar(0.5) * (st.cost[i].hess + st.cost[i].hess.transpose());
      const VecX<Scalar> z = zvec(t);
      const VecX<Scalar> grad_full = Hq * z + st.cost[i].grad;
      // Stationarity w.r.t. u^i_t.
      VecX<Scalar> stat = grad_full.segment(n + uoff[i], mi) +
                          st.B[i].transpose() * mult.dynamics[i][t];
      if (st.eq[i].rows())
        stat += st.eq[i].control_jac.transpose() * mult.equality[i][t];
      if (st.ineq[i].rows())
        stat -= st.ineq[i].control_jac.transpose() * mult.inequality[i][t];
      bump_vec(stat);

      // Costate recursion w.r.t. x_t (t >= 1), including other players'
      // policy feedback on this player's Lagrangian.
      if (t >= 1) {
        VecX<Scalar> xstat = grad_full.head(n) +
                             st.A.transpose() * mult.dynamics[i][t] -
                             mult.dynamics[i][t - 1];
        if (st.eq[i].rows())
          xstat += st.eq[i].state_jac.transpose() * mult.equality[i][t];
        if (st.ineq[i].rows())
          xstat -= st.ineq[i].state_jac.transpose() * mult.inequality[i][t];
        for (int j = 0; j < np; ++j) {
          if (j == i) continue;
          const VecX<Scalar> dj =
              grad_full.segment(n + uoff[j], lq.control_dims[j]) +
              st.B[j].transpose() * mult.dynamics[i][t];
          xstat -= sol.policies.gains[j][t].transpose() * dj;
        }
        bump_vec(xstat);
      }

      // Primal feasibility of equality rows.
      if (st.eq[i].rows())
        bump_vec(st.eq[i].state_jac * traj.states[t] +
                 st.eq[i].control_jac * traj.controls[i][t] +
                 st.eq[i].offset);
    }
    // Terminal stationarity and rows.
    const auto& tc = lq.terminal.cost[i];
    VecX<Scalar> xstat =
        Scalar(0.5) * (tc.hess + tc.hess.transpose()) * traj.states[T] +
        tc.grad - mult.dynamics[i][T - 1];
    if (lq.terminal.eq[i].rows())
      xstat += lq.terminal.eq[i].state_jac.transpose() * mult.equality[i][T];
    if (lq.terminal.ineq[i].rows())
      xstat -=
          lq.terminal.ineq[i].state_jac.transpose() * mult.inequality[i][T];
    bump_vec(xstat);
    if (lq.terminal.eq[i].rows())
      bump_vec(lq.terminal.eq[i].state_jac * traj.states[T] +
               lq.terminal.eq[i].offset);
  }
  (void)bump;
  return worst;
}

// Player cost along a trajectory of the LQ game.
template <typename Scalar>
Scalar lq_player_cost(const LQApproximation<Scalar>& lq,
                      const GameTrajectory<Scalar>& traj, PlayerIndex player) {
  const int T = lq.horizon();
  const int n = lq.state_dim;
  const int np = lq.num_players();
  const int udim =
      std::accumulate(lq.control_dims.begin(), lq.control_dims.end(), 0);
  Scalar total = Scalar(0);
  for (int t = 0; t < T; ++t) {
    VecX<Scalar> z(n + udim);
    z.head(n) = traj.states[t];
    int off = n;
    for (int j = 0; j < np; ++j) {
      z.segment(off, lq.control_dims[j]) = traj.controls[j][t];
      off += lq.control_dims[j];
    }
    const auto& c = lq.stages[t].cost[player];
    total += Scalar(0.5) * z.dot(c.hess * z) + c.grad.dot(z) + c.constant;
  }
  const auto& tc = lq.terminal.cost[player];
  total += Scalar(0.5) * traj.states[T].dot(tc.hess * traj.states[T]) +
           tc.grad.dot(traj.states[T]) + tc.constant;
  return total;
}

// Rolls out the game with `player` deviating from its policy along
// `direction` (scaled by `step`) while all other players react through their
// returned policies. The direction is first projected stagewise onto the
// null space of the rows enforced for that player, so it is feasible to
// first order. Returns the change in the player's cost.
template <typename Scalar>
Scalar nash_stationarity_check(const LQApproximation<Scalar>& lq,
                               const LqSolution<Scalar>& sol,
                               PlayerIndex player,
                               const std::vector<VecX<Scalar>>& direction,
                               Scalar step) {
  const int T = lq.horizon();
  const int np = lq.num_players();
  detail::require(player >= 0 && player < np, "player index out of range");
  detail::require(static_cast<int>(direction.size()) == T,
                  "direction must have horizon entries");

  // Project onto the null space of the enforced rows.
  std::vector<VecX<Scalar>> d(direction);
  for (int t = 0; t < T; ++t) {
    detail::require(static_cast<int>(d[t].size()) == lq.control_dims[player],
                    "direction dimension mismatch");
    const MatX<Scalar>& G = sol.enforced_control_rows[player][t];
    if (G.rows() == 0) continue;
    Eigen::JacobiSVD<MatX<Scalar>> svd(G, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const Scalar tol = Scalar(1e-12) * std::max<Scalar>(Scalar(1), sv(0));
    for (int r = 0; r < sv.size(); ++r) {
      if (sv(r) <= tol) break;
      const VecX<Scalar> v = svd.matrixV().col(r);
      d[t] -= v.dot(d[t]) * v;
    }
  }

  auto roll_cost = [&](Scalar eta) {
    GameTrajectory<Scalar> traj;
    traj.states.resize(T + 1);
    traj.controls.assign(np, std::vector<VecX<Scalar>>(T));
    traj.states[0] = lq.initial_state;
    for (int t = 0; t < T; ++t) {
      const auto& st = lq.stages[t];
      VecX<Scalar> xnext = st.A * traj.states[t] + st.c;
      for (int j = 0; j < np; ++j) {
        traj.controls[j][t] = -sol.policies.gains[j][t] * traj.states[t] -
                              sol.policies.offsets[j][t];
        if (j == player) traj.controls[j][t] += eta * d[t];
        xnext += st.B[j] * traj.controls[j][t];
      }
      traj.states[t + 1] = xnext;
    }
    return lq_player_cost(lq, traj, player);
  };

  return roll_cost(step) - roll_cost(Scalar(0));
}

}  // namespace hypgame
