#pragma once

#include <vector>

#include "hypgame/types.hpp"

namespace hypgame {

// 0.5 z'Hz + g'z + c0 over the joint stage vector z = (x, u^1, ..., u^N).
template <typename Scalar>
struct QuadraticStageCost {
  MatX<Scalar> hess;
  VecX<Scalar> grad;
  Scalar constant = Scalar(0);
};

// 0.5 x'Hx + g'x + c0 over the state.
template <typename Scalar>
struct QuadraticStateCost {
  MatX<Scalar> hess;
  VecX<Scalar> grad;
  Scalar constant = Scalar(0);
};

// Rows E x + F u^i + e owned by one player. control_jac has zero columns for
// terminal blocks.
template <typename Scalar>
struct AffineRows {
  MatX<Scalar> state_jac;    // r x n
  MatX<Scalar> control_jac;  // r x m^i
  VecX<Scalar> offset;       // r

  int rows() const { return static_cast<int>(offset.size()); }

  static AffineRows Empty(int n, int m) {
    return AffineRows{MatX<Scalar>::Zero(0, n), MatX<Scalar>::Zero(0, m),
                      VecX<Scalar>::Zero(0)};
  }
};

template <typename Scalar>
struct LqStage {
  MatX<Scalar> A;
  std::vector<MatX<Scalar>> B;  // per player
  VecX<Scalar> c;
  std::vector<QuadraticStageCost<Scalar>> cost;  // per player
  std::vector<AffineRows<Scalar>> eq;            // per player
  std::vector<AffineRows<Scalar>> ineq;          // per player
};

template <typename Scalar>
struct LqTerminal {
  std::vector<QuadraticStateCost<Scalar>> cost;  // per player
  std::vector<AffineRows<Scalar>> eq;            // per player
  std::vector<AffineRows<Scalar>> ineq;          // per player
};

// Stagewise linear dynamics, quadratic costs, and affine constraint rows; the
// equality-constrained subproblem solved in each minor iteration.
template <typename Scalar>
struct LQApproximation {
  int state_dim = 0;
  std::vector<int> control_dims;
  VecX<Scalar> initial_state;
  std::vector<LqStage<Scalar>> stages;
  LqTerminal<Scalar> terminal;

  int horizon() const { return static_cast<int>(stages.size()); }
  int num_players() const { return static_cast<int>(control_dims.size()); }
};

// Per player: quadratic value function over the state at each stage s = 0..T
// plus the constraint-to-go rows pending at s (rows over x_s that stages
// before s must resolve). At s = T the value equals the terminal cost and the
// constraint-to-go equals the terminal equality rows.
template <typename Scalar>
struct ValueModel {
  std::vector<MatX<Scalar>> hess;        // n x n, s = 0..T
  std::vector<VecX<Scalar>> grad;        // n
  std::vector<Scalar> constant;          // scalar
  std::vector<MatX<Scalar>> ctg_rows;    // q_s x n
  std::vector<VecX<Scalar>> ctg_offset;  // q_s
};

template <typename Scalar>
void validate_dimensions(const LQApproximation<Scalar>& lq) {
  const int n = lq.state_dim;
  const int np = lq.num_players();
  detail::require(lq.horizon() >= 1, "horizon must be at least 1");
  detail::require(static_cast<int>(lq.initial_state.size()) == n,
                  "initial state dimension mismatch");
  int zdim = n;
  for (int m : lq.control_dims) zdim += m;
  for (int t = 0; t < lq.horizon(); ++t) {
    const auto& st = lq.stages[t];
    detail::require(st.A.rows() == n && st.A.cols() == n,
                    "dynamics A block dimension mismatch");
    detail::require(static_cast<int>(st.B.size()) == np,
                    "dynamics B blocks must be per player");
    detail::require(static_cast<int>(st.c.size()) == n,
                    "dynamics offset dimension mismatch");
    detail::require(static_cast<int>(st.cost.size()) == np &&
                        static_cast<int>(st.eq.size()) == np &&
                        static_cast<int>(st.ineq.size()) == np,
                    "per-player stage blocks missing");
    for (int i = 0; i < np; ++i) {
      detail::require(
          st.B[i].rows() == n && st.B[i].cols() == lq.control_dims[i],
          "dynamics B block dimension mismatch");
      detail::require(
          st.cost[i].hess.rows() == zdim && st.cost[i].hess.cols() == zdim &&
              static_cast<int>(st.cost[i].grad.size()) == zdim,
          "stage cost block dimension mismatch");
      detail::require(st.eq[i].state_jac.cols() == n &&
                          st.eq[i].control_jac.cols() == lq.control_dims[i],
                      "equality row dimension mismatch");
      detail::require(st.ineq[i].state_jac.cols() == n &&
                          st.ineq[i].control_jac.cols() == lq.control_dims[i],
                      "inequality row dimension mismatch");
    }
  }
  detail::require(static_cast<int>(lq.terminal.cost.size()) == np &&
                      static_cast<int>(lq.terminal.eq.size()) == np &&
                      static_cast<int>(lq.terminal.ineq.size()) == np,
                  "per-player terminal blocks missing");
  for (int i = 0; i < np; ++i) {
    detail::require(lq.terminal.cost[i].hess.rows() == n &&
                        lq.terminal.cost[i].hess.cols() == n,
                    "terminal cost dimension mismatch");
    detail::require(lq.terminal.eq[i].state_jac.cols() == n &&
                        lq.terminal.ineq[i].state_jac.cols() == n,
                    "terminal row dimension mismatch");
  }
}

}  // namespace hypgame
