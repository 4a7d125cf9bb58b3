#pragma once

#include <cmath>

#include "slqr/model.hpp"
#include "slqr/pack.hpp"
#include "slqr/types.hpp"

namespace slqr {

// Solves X = gamma * Acl' X Acl + M for symmetric X.  The map is inverted on
// the packed symmetric subspace with a dense LU factorization, which is exact
// and cheap for the moderate state dimensions this library targets.
// Requires sqrt(gamma) * rho(Acl) < 1, which makes the solution unique.
template <typename Scalar>
Matrix<Scalar> solve_lyapunov_discounted(const Matrix<Scalar>& Acl, const Matrix<Scalar>& M,
                                         Scalar gamma) {
  require_square(Acl, "closed-loop matrix");
  require_square(M, "constant term");
  if (M.rows() != Acl.rows())
    throw DimensionError("constant term must match the closed-loop dimension");
  if (asymmetry(M) > Scalar(kSymmetryTol))
    throw DimensionError("constant term asymmetry exceeds tolerance");
  if (!(gamma > Scalar(0) && gamma < Scalar(1)))
    throw ConfigError("discount must lie strictly inside (0,1)");
  if (std::sqrt(gamma) * spectral_radius(Acl) >= Scalar(1))
    throw StabilityError("closed loop violates sqrt(gamma)-scaled spectral radius bound");

  const Index n = Acl.rows();
  const Index d = packed_size(n);
  const auto table = packed_index_table(n);
  const auto pack = [&](const Matrix<Scalar>& W) {
    Vector<Scalar> v(d);
    for (Index k = 0; k < d; ++k) v(k) = W(table[k].first, table[k].second);
    return v;
  };

  Matrix<Scalar> T(d, d);
  Matrix<Scalar> E = Matrix<Scalar>::Zero(n, n);
  for (Index k = 0; k < d; ++k) {
    const auto [i, j] = table[k];
    E(i, j) = E(j, i) = Scalar(1);
    T.col(k) = pack(E - gamma * Acl.transpose() * E * Acl);
    E(i, j) = E(j, i) = Scalar(0);
  }

  const Vector<Scalar> c = T.partialPivLu().solve(pack(symmetrized(M)));
  const Matrix<Scalar> X = unvech(c, n);

  const Matrix<Scalar> residual = X - gamma * Acl.transpose() * X * Acl - M;
  const Scalar scale = std::max(Scalar(1), X.cwiseAbs().maxCoeff());
  if (residual.cwiseAbs().maxCoeff() > Scalar(1e-9) * scale)
    throw NumericalError("discounted Lyapunov solve left a large residual");
  return X;
}

// Value matrix of the fixed gain F: X = gamma (A+BF)' X (A+BF) + Q + F'RF.
template <typename Scalar>
Matrix<Scalar> policy_evaluation(const LtiSystem<Scalar>& sys, const CostSpec<Scalar>& cost,
                                 const Matrix<Scalar>& F) {
  sys.validate();
  cost.validate(sys.state_dim(), sys.input_dim());
  if (F.rows() != sys.input_dim() || F.cols() != sys.state_dim())
    throw DimensionError("gain must be input_dim x state_dim");
  const Matrix<Scalar> M = symmetrized(cost.Q + F.transpose() * cost.R * F);
  return solve_lyapunov_discounted<Scalar>(sys.A + sys.B * F, M, cost.gamma);
}

// Expected discounted cost of u = Fx when E[x0 x0'] equals the given second
// moment: tr(X Z0) + gamma/(1-gamma) tr(X noise_cov).
template <typename Scalar>
Scalar value_function(const LtiSystem<Scalar>& sys, const CostSpec<Scalar>& cost,
                      const Matrix<Scalar>& F, const Matrix<Scalar>& state_second_moment) {
  require_square(state_second_moment, "state second moment");
  if (state_second_moment.rows() != sys.state_dim())
    throw DimensionError("state second moment must match the state dimension");
  const Matrix<Scalar> X = policy_evaluation(sys, cost, F);
  return (X * state_second_moment).trace() +
         cost.gamma / (Scalar(1) - cost.gamma) * (X * sys.noise_cov).trace();
}

// One-step greedy gain for a value matrix X:
// F = -gamma (R + gamma B'XB)^{-1} B'X A.
template <typename Scalar>
Matrix<Scalar> policy_improvement(const LtiSystem<Scalar>& sys, const CostSpec<Scalar>& cost,
                                  const Matrix<Scalar>& X) {
  require_square(X, "value matrix");
  if (X.rows() != sys.state_dim()) throw DimensionError("value matrix must match the state dimension");
  const Matrix<Scalar> H = cost.R + cost.gamma * sys.B.transpose() * X * sys.B;
  Eigen::LLT<Matrix<Scalar>> llt(symmetrized(H));
  if (llt.info() != Eigen::Success)
    throw NumericalError("input-weight block R + gamma B'XB is not positive definite");
  return -cost.gamma * llt.solve(sys.B.transpose() * X * sys.A);
}

// Policy iteration: evaluate the current gain, improve greedily, and stop
// once successive gains differ by at most eps in Frobenius norm.  Step s of
// the trace stores the evaluation of the previous gain together with the
// gain improved from it.  Non-convergence within max_iter is reported
// through the converged flag, not as an error.
template <typename Scalar>
IterateTrace<Scalar> classical_pi(const LtiSystem<Scalar>& sys, const CostSpec<Scalar>& cost,
                                  const Matrix<Scalar>& F0, Scalar eps = Scalar(1e-8),
                                  int max_iter = 100) {
  sys.validate();
  cost.validate(sys.state_dim(), sys.input_dim());
  if (!is_stabilizing(sys, F0, StabilityPolicy::Discounted, cost.gamma))
    throw StabilityError("initial gain is not stabilizing in the discounted sense");
  if (max_iter < 1) throw ConfigError("max_iter must be positive");

  IterateTrace<Scalar> trace;
  trace.initial_gain = F0;
  trace.kind = ValueKind::X;
  Matrix<Scalar> F = F0;
  for (int s = 1; s <= max_iter; ++s) {
    const Matrix<Scalar> X = policy_evaluation(sys, cost, F);
    const Matrix<Scalar> Fnext = policy_improvement(sys, cost, X);
    const Scalar deviation = (Fnext - F).norm();
    trace.steps.push_back({s, Fnext, X, deviation});
    F = Fnext;
    if (deviation <= eps) {
      trace.converged = true;
      break;
    }
  }
  return trace;
}

template <typename Scalar>
struct AreSolution {
  Matrix<Scalar> X;  // stabilizing solution of the discounted Riccati equation
  Matrix<Scalar> F;  // optimal gain
  int iterations = 0;
};

// Riccati solve by policy iteration run to tight tolerance from a
// stabilizing initial gain.
template <typename Scalar>
AreSolution<Scalar> solve_are(const LtiSystem<Scalar>& sys, const CostSpec<Scalar>& cost,
                              const Matrix<Scalar>& F0, Scalar eps = Scalar(1e-10),
                              int max_iter = 200) {
  const IterateTrace<Scalar> trace = classical_pi(sys, cost, F0, eps, max_iter);
  if (!trace.converged)
    throw NumericalError("policy iteration did not reach the requested tolerance");
  AreSolution<Scalar> sol;
  sol.X = policy_evaluation(sys, cost, trace.terminal_gain());
  sol.F = policy_improvement(sys, cost, sol.X);
  sol.iterations = static_cast<int>(trace.steps.size());
  return sol;
}

// Stacked-cost matrix associated with a value matrix X:
// [[Q + gamma A'XA, gamma A'XB], [gamma B'XA, R + gamma B'XB]].
template <typename Scalar>
Matrix<Scalar> optimal_P(const LtiSystem<Scalar>& sys, const CostSpec<Scalar>& cost,
                         const Matrix<Scalar>& X) {
  require_square(X, "value matrix");
  if (X.rows() != sys.state_dim()) throw DimensionError("value matrix must match the state dimension");
  const Matrix<Scalar> G = state_input_map(sys);
  return symmetrized(cost.gamma * G.transpose() * X * G + cost.stage_weight());
}

}  // namespace slqr
