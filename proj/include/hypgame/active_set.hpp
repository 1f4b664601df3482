#pragma once

///////////////////////////////////////////////////////////////////////////////
//
// Active-set loop around the equality-constrained LQ game solver. Inequality
// rows in the working set are enforced as equalities; the loop adds the most
// violated inactive row or drops the working-set row with the most negative
// multiplier, one change per minor iteration, until the first-order
// conditions of the inequality-constrained game hold.
//
///////////////////////////////////////////////////////////////////////////////

#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hypgame/lq_solver.hpp"

namespace hypgame {

struct WorkingSetAction {
  bool add = true;
  PlayerIndex player = 0;
  int stage = 0;  // horizon index T denotes the terminal block
  int row = 0;
};

// Per player per stage (index T = terminal): inequality rows currently
// treated as equalities.
struct WorkingSet {
  std::vector<std::vector<std::vector<int>>> active;  // [player][stage][k]
  int iterations = 0;
  std::vector<WorkingSetAction> history;

  bool contains(PlayerIndex i, int stage, int row) const {
    const auto& rows = active[i][stage];
    return std::find(rows.begin(), rows.end(), row) != rows.end();
  }
  void insert(PlayerIndex i, int stage, int row) {
    auto& rows = active[i][stage];
    rows.insert(std::upper_bound(rows.begin(), rows.end(), row), row);
  }
  void erase(PlayerIndex i, int stage, int row) {
    auto& rows = active[i][stage];
    rows.erase(std::find(rows.begin(), rows.end(), row));
  }
  std::string key() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < active.size(); ++i)
      for (std::size_t t = 0; t < active[i].size(); ++t)
        for (int r : active[i][t]) os << i << ':' << t << ':' << r << ';';
    return os.str();
  }
};

template <typename Scalar>
WorkingSet make_working_set(const LQApproximation<Scalar>& lq) {
  WorkingSet ws;
  ws.active.assign(lq.num_players(),
                   std::vector<std::vector<int>>(lq.horizon() + 1));
  return ws;
}

struct ActiveSetOptions {
  double tolerance = 1e-8;
  int max_iterations = 200;
};

template <typename Scalar>
struct InequalityLqResult {
  LqSolution<Scalar> solution;
  WorkingSet working_set;
  int minor_iterations = 0;
};

namespace asdetail {

// The equality-constrained subproblem: working-set rows appended to the
// equality blocks (in ascending row order).
template <typename Scalar>
LQApproximation<Scalar> merge_working_set(const LQApproximation<Scalar>& lq,
                                          const WorkingSet& ws) {
  LQApproximation<Scalar> merged = lq;
  const int T = lq.horizon();
  for (int i = 0; i < lq.num_players(); ++i) {
    for (int t = 0; t <= T; ++t) {
      const auto& rows = ws.active[i][t];
      if (rows.empty()) continue;
      const AffineRows<Scalar>& src =
          (t == T) ? lq.terminal.ineq[i] : lq.stages[t].ineq[i];
      AffineRows<Scalar>& dst =
          (t == T) ? merged.terminal.eq[i] : merged.stages[t].eq[i];
      const int base = dst.rows();
      AffineRows<Scalar> grown;
      grown.state_jac.resize(base + rows.size(), src.state_jac.cols());
      grown.control_jac.resize(base + rows.size(), src.control_jac.cols());
      grown.offset.resize(base + rows.size());
      grown.state_jac.topRows(base) = dst.state_jac;
      grown.control_jac.topRows(base) = dst.control_jac;
      grown.offset.head(base) = dst.offset;
      for (std::size_t k = 0; k < rows.size(); ++k) {
        grown.state_jac.row(base + k) = src.state_jac.row(rows[k]);
        grown.control_jac.row(base + k) = src.control_jac.row(rows[k]);
        grown.offset[base + k] = src.offset[rows[k]];
      }
      dst = std::move(grown);
    }
  }
  return merged;
}

// Moves working-set multipliers from the merged equality blocks back onto
// the inequality rows they came from. The inner solver forms Lagrangians as
// cost + mu'row; inequality multipliers are reported in the g >= 0
// convention (cost - gamma'g, gamma >= 0), hence the sign flip.
template <typename Scalar>
void scatter_multipliers(const LQApproximation<Scalar>& lq,
                         const WorkingSet& ws, LqSolution<Scalar>& sol) {
  const int T = lq.horizon();
  for (int i = 0; i < lq.num_players(); ++i) {
    for (int t = 0; t <= T; ++t) {
      const int base = (t == T) ? lq.terminal.eq[i].rows()
                                : lq.stages[t].eq[i].rows();
      const int full = (t == T) ? lq.terminal.ineq[i].rows()
                                : lq.stages[t].ineq[i].rows();
      const auto& rows = ws.active[i][t];
      VecX<Scalar> merged = sol.multipliers.equality[i][t];
      sol.multipliers.equality[i][t] = merged.head(base);
      VecX<Scalar> ineq = VecX<Scalar>::Zero(full);
      for (std::size_t k = 0; k < rows.size(); ++k)
        ineq[rows[k]] = -merged[base + static_cast<int>(k)];
      sol.multipliers.inequality[i][t] = ineq;
    }
  }
}

template <typename Scalar>
VecX<Scalar> inequality_values(const AffineRows<Scalar>& rows,
                               const VecX<Scalar>& x, const VecX<Scalar>& u) {
  if (rows.rows() == 0) return VecX<Scalar>::Zero(0);
  VecX<Scalar> v = rows.state_jac * x + rows.offset;
  if (rows.control_jac.cols() > 0 && u.size() > 0) v += rows.control_jac * u;
  return v;
}

inline std::string format_history(const std::vector<WorkingSetAction>& h) {
  std::ostringstream os;
  for (const auto& a : h)
    os << (a.add ? "+" : "-") << "(" << a.player << "," << a.stage << ","
       << a.row << ") ";
  return os.str();
}

}  // namespace asdetail

template <typename Scalar>
InequalityLqResult<Scalar> solve_inequality_lq_game(
    const LQApproximation<Scalar>& lq, const WorkingSet& init,
    const ActiveSetOptions& opts = {}) {
  const int T = lq.horizon();
  const int np = lq.num_players();
  WorkingSet ws = init;
  if (ws.active.empty()) ws = make_working_set(lq);
  ws.iterations = 0;
  ws.history.clear();

  std::set<std::string> seen;
  seen.insert(ws.key());

  InequalityLqResult<Scalar> out;
  while (true) {
    if (ws.iterations >= opts.max_iterations)
      throw SolverError("active-set iteration cap (" +
                        std::to_string(opts.max_iterations) +
                        ") exceeded; history: " +
                        asdetail::format_history(ws.history));
    const auto merged = asdetail::merge_working_set(lq, ws);
    LqSolution<Scalar> sol;
    try {
      sol = solve_lq_feedback_game(merged);
    } catch (const InfeasibleError& e) {
      throw InfeasibleError(std::string(e.what()) +
                            " [working set: " + ws.key() + "]");
    }
    ++ws.iterations;
    asdetail::scatter_multipliers(lq, ws, sol);

    // Most violated inactive inequality row.
    Scalar worst_violation = Scalar(0);
    WorkingSetAction add{true, 0, 0, 0};
    bool have_add = false;
    for (int i = 0; i < np; ++i) {
      for (int t = 0; t <= T; ++t) {
        const AffineRows<Scalar>& rows =
            (t == T) ? lq.terminal.ineq[i] : lq.stages[t].ineq[i];
        if (rows.rows() == 0) continue;
        const VecX<Scalar> v = asdetail::inequality_values(
            rows, sol.trajectory.states[t],
            t == T ? VecX<Scalar>() : sol.trajectory.controls[i][t]);
        for (int r = 0; r < v.size(); ++r) {
          if (ws.contains(i, t, r)) continue;
          if (v[r] < -opts.tolerance && -v[r] > worst_violation) {
            worst_violation = -v[r];
            add = {true, i, t, r};
            have_add = true;
          }
        }
      }
    }
    if (have_add) {
      ws.insert(add.player, add.stage, add.row);
      ws.history.push_back(add);
      const auto key = ws.key();
      if (!seen.insert(key).second)
        throw SolverError("active-set cycling detected; history: " +
                          asdetail::format_history(ws.history));
      continue;
    }

    // Most negative working-set multiplier.
    Scalar worst_mult = Scalar(0);
    WorkingSetAction drop{false, 0, 0, 0};
    bool have_drop = false;
    for (int i = 0; i < np; ++i) {
      for (int t = 0; t <= T; ++t) {
        for (int r : ws.active[i][t]) {
          const Scalar m = sol.multipliers.inequality[i][t][r];
          if (m < -opts.tolerance && -m > worst_mult) {
            worst_mult = -m;
            drop = {false, i, t, r};
            have_drop = true;
          }
        }
      }
    }
    if (have_drop) {
      ws.erase(drop.player, drop.stage, drop.row);
      ws.history.push_back(drop);
      const auto key = ws.key();
      if (!seen.insert(key).second)
        throw SolverError("active-set cycling detected; history: " +
                          asdetail::format_history(ws.history));
      continue;
    }

    out.solution = std::move(sol);
    out.working_set = ws;
    out.minor_iterations = ws.iterations;
    return out;
  }
}

// Extends the LQ-level certificate with inequality blocks: primal
// feasibility (g >= 0), dual feasibility, and complementarity.
template <typename Scalar>
Scalar lq_kkt_residual_inequalities(const LQApproximation<Scalar>& lq,
                                    const LqSolution<Scalar>& sol) {
  Scalar worst = lq_kkt_residual(lq, sol);
  const int T = lq.horizon();
  for (int i = 0; i < lq.num_players(); ++i) {
    for (int t = 0; t <= T; ++t) {
      const AffineRows<Scalar>& rows =
          (t == T) ? lq.terminal.ineq[i] : lq.stages[t].ineq[i];
      if (rows.rows() == 0) continue;
      const VecX<Scalar> v = asdetail::inequality_values(
          rows, sol.trajectory.states[t],
          t == T ? VecX<Scalar>() : sol.trajectory.controls[i][t]);
      const VecX<Scalar>& mu = sol.multipliers.inequality[i][t];
      for (int r = 0; r < v.size(); ++r) {
        worst = std::max(worst, std::max(Scalar(0), -v[r]));   // primal
        worst = std::max(worst, std::max(Scalar(0), -mu[r]));  // dual
        worst = std::max(worst, std::abs(mu[r] * v[r]));       // complementarity
      }
    }
  }
  return worst;
}

}  // namespace hypgame
