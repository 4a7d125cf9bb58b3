#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "slqr/model.hpp"
#include "slqr/model_based.hpp"
#include "slqr/pack.hpp"
#include "slqr/types.hpp"

namespace slqr {

// Dual variable of a gain: the fixed point of P = gamma A_F' P A_F + Lambda
// on the augmented state-input loop.
template <typename Scalar>
Matrix<Scalar> dual_update(const LtiSystem<Scalar>& sys, const CostSpec<Scalar>& cost,
                           const Matrix<Scalar>& F) {
  return solve_lyapunov_discounted<Scalar>(augmented_matrix(sys, F),
                                           symmetrized(cost.stage_weight()), cost.gamma);
}

// Gain that zeroes the dual variable's cross block: F = -P22^{-1} P12'.
template <typename Scalar>
Matrix<Scalar> primal_update(const Matrix<Scalar>& P, Index n) {
  require_square(P, "dual variable");
  if (P.rows() <= n) throw DimensionError("dual variable must be larger than the state dimension");
  const Index m = P.rows() - n;
  const Matrix<Scalar> P12 = P.block(0, n, n, m);
  const Matrix<Scalar> P22 = symmetrized(Matrix<Scalar>(P.block(n, n, m, m)));
  Eigen::LLT<Matrix<Scalar>> llt(P22);
  if (llt.info() != Eigen::Success)
    throw NumericalError("input block of the dual variable is not positive definite");
  return -llt.solve(Matrix<Scalar>(P12.transpose()));
}

// Alternating dual/primal iteration on the augmented loop.  Step s records
// the dual variable of the previous gain and the gain it produces.  The
// default gate insists on a strictly stable start; pass the discounted
// policy to admit gains that are only stable after sqrt(gamma) scaling.
template <typename Scalar>
IterateTrace<Scalar> mb_pd_run(const LtiSystem<Scalar>& sys, const CostSpec<Scalar>& cost,
                               const Matrix<Scalar>& F0, Scalar epsilon = Scalar(1e-8),
                               int max_iter = 100,
                               StabilityPolicy gate = StabilityPolicy::Strict) {
  sys.validate();
  cost.validate(sys.state_dim(), sys.input_dim());
  if (!is_stabilizing(sys, F0, gate, cost.gamma))
    throw StabilityError("initial gain fails the requested stability gate");
  if (max_iter < 1) throw ConfigError("max_iter must be positive");

  IterateTrace<Scalar> trace;
  trace.initial_gain = F0;
  trace.kind = ValueKind::P;
  Matrix<Scalar> F = F0;
  for (int s = 1; s <= max_iter; ++s) {
    const Matrix<Scalar> P = dual_update(sys, cost, F);
    const Matrix<Scalar> Fnext = primal_update(P, sys.state_dim());
    const Scalar deviation = (Fnext - F).norm();
    trace.steps.push_back({s, Fnext, P, deviation});
    F = Fnext;
    if (deviation <= epsilon) {
      trace.converged = true;
      break;
    }
  }
  return trace;
}

// Discounted correlation sums of the stacked vector v_k = [x_k; u_k] over
// r initial pairs and N noise draws each:
//   S = (1/(rN)) sum_i sum_q sum_{k=0..K} gamma^k v_k v_k',
//   W = (1/(rN)) sum_i sum_q sum_{k=0..K} gamma^k v_{k+1} v_k'.
template <typename Scalar>
struct CorrelationEstimate {
  Matrix<Scalar> S;
  Matrix<Scalar> W;
  Index K = 0;
  int N = 0;
  Index r = 0;
};

// Rolls the plant under u_0 = designed input, u_k = F x_k afterwards.  Each
// trajectory runs K+1 steps so the lag-one sum sees v_{K+1}.
template <typename Scalar>
CorrelationEstimate<Scalar> estimate_correlations(const LtiSystem<Scalar>& sys,
                                                  const Matrix<Scalar>& F,
                                                  const InitialPairSet<Scalar>& pairs,
                                                  Scalar gamma, Index K, int N,
                                                  std::uint64_t seed) {
  sys.validate();
  const Index n = sys.state_dim(), m = sys.input_dim();
  pairs.validate(n, m);
  if (F.rows() != m || F.cols() != n) throw DimensionError("gain must be input_dim x state_dim");
  if (!(gamma > Scalar(0) && gamma < Scalar(1)))
    throw ConfigError("discount must lie strictly inside (0,1)");
  if (K < 0) throw ConfigError("horizon must be nonnegative");
  if (N < 1) throw ConfigError("trajectory count must be positive");

  CorrelationEstimate<Scalar> est;
  est.K = K;
  est.N = N;
  est.r = pairs.count();
  est.S = Matrix<Scalar>::Zero(n + m, n + m);
  est.W = Matrix<Scalar>::Zero(n + m, n + m);

  for (Index i = 0; i < est.r; ++i) {
    const Vector<Scalar> z = pairs.pairs[static_cast<std::size_t>(i)].head(n);
    const Vector<Scalar> u0 = pairs.pairs[static_cast<std::size_t>(i)].tail(m);
    const Policy<Scalar> policy = [u0, F](Index k, const Vector<Scalar>& x) -> Vector<Scalar> {
      return k == 0 ? u0 : Vector<Scalar>(F * x);
    };
    for (int q = 0; q < N; ++q) {
      const auto traj = simulate(sys, policy, z, K + 1,
                                 derive_seed(seed, static_cast<std::uint64_t>(i) * N + q));
      Vector<Scalar> v(n + m);
      v << traj.states[0], traj.inputs[0];
      Scalar weight(1);
      for (Index k = 0; k <= K; ++k) {
        Vector<Scalar> vnext(n + m);
        vnext << traj.states[static_cast<std::size_t>(k + 1)],
            traj.inputs[static_cast<std::size_t>(k + 1)];
        est.S += weight * v * v.transpose();
        est.W += weight * vnext * v.transpose();
        v = vnext;
        weight *= gamma;
      }
    }
  }
  est.S /= Scalar(est.r) * Scalar(N);
  est.W /= Scalar(est.r) * Scalar(N);
  return est;
}

// Dual variable from correlation data alone: the unique symmetric P with
//   S' P S - gamma W' P W = S' Lambda S.
// With exact correlations W = A_F S, so this is the dual update conjugated
// by an invertible S; sampled data perturbs the same linear system.
template <typename Scalar>
Matrix<Scalar> solve_P_from_data(const CorrelationEstimate<Scalar>& est,
                                 const Matrix<Scalar>& Lambda, Scalar gamma) {
  const Index d = est.S.rows();
  require_square(est.S, "correlation matrix");
  require_square(est.W, "lagged correlation matrix");
  if (est.W.rows() != d || Lambda.rows() != d || Lambda.cols() != d)
    throw DimensionError("correlation blocks must share the stage-weight dimension");
  if (!(gamma > Scalar(0) && gamma < Scalar(1)))
    throw ConfigError("discount must lie strictly inside (0,1)");
  const Scalar s_scale = est.S.cwiseAbs().maxCoeff();
  if (min_eigenvalue(symmetrized(est.S)) <= Scalar(1e-12) * std::max(Scalar(1), s_scale))
    throw ExcitationError(
        "correlation matrix is numerically singular; add initial pairs spanning the "
        "state-input space");

  const Index p = packed_size(d);
  const auto table = packed_index_table(d);
  const auto pack = [&](const Matrix<Scalar>& M) {
    Vector<Scalar> v(p);
    for (Index k = 0; k < p; ++k) v(k) = M(table[k].first, table[k].second);
    return v;
  };

  Matrix<Scalar> T(p, p);
  Matrix<Scalar> E = Matrix<Scalar>::Zero(d, d);
  for (Index k = 0; k < p; ++k) {
    const auto [i, j] = table[k];
    E(i, j) = E(j, i) = Scalar(1);
    T.col(k) = pack(est.S.transpose() * E * est.S - gamma * est.W.transpose() * E * est.W);
    E(i, j) = E(j, i) = Scalar(0);
  }
  const Matrix<Scalar> rhs = symmetrized(Matrix<Scalar>(est.S.transpose() * Lambda * est.S));
  const Vector<Scalar> c = T.partialPivLu().solve(pack(rhs));
  const Matrix<Scalar> P = unvech(c, d);

  const Matrix<Scalar> residual =
      est.S.transpose() * P * est.S - gamma * est.W.transpose() * P * est.W - rhs;
  const Scalar scale = std::max(Scalar(1), rhs.cwiseAbs().maxCoeff());
  if (residual.cwiseAbs().maxCoeff() > Scalar(1e-8) * scale)
    throw NumericalError("correlation-based dual solve left a large residual");
  return P;
}

template <typename Scalar>
struct PdOptions {
  InitialPairSet<Scalar> pairs;  // empty: default excitation set
  Index K = 10;
  int N = 15;
  Scalar epsilon = Scalar(5e-3);
  int max_iter = 15;
  std::uint64_t seed = 0;
  StabilityPolicy gate = StabilityPolicy::Strict;
};

// Model-free variant of mb_pd_run: every iteration re-rolls the plant under
// the current gain, estimates the correlation pair, and solves the dual
// variable from data.  Iterations use independent derived seeds.
template <typename Scalar>
IterateTrace<Scalar> mb_pd_model_free_run(const LtiSystem<Scalar>& sys,
                                          const CostSpec<Scalar>& cost, const Matrix<Scalar>& F0,
                                          const PdOptions<Scalar>& opt) {
  sys.validate();
  cost.validate(sys.state_dim(), sys.input_dim());
  if (!is_stabilizing(sys, F0, opt.gate, cost.gamma))
    throw StabilityError("initial gain fails the requested stability gate");
  if (opt.max_iter < 1) throw ConfigError("max_iter must be positive");

  const InitialPairSet<Scalar> pairs =
      opt.pairs.pairs.empty()
          ? default_initial_pairs<Scalar>(sys.state_dim(), sys.input_dim(),
                                          derive_seed(opt.seed, 0))
          : opt.pairs;
  const Matrix<Scalar> Lambda = symmetrized(cost.stage_weight());

  IterateTrace<Scalar> trace;
  trace.initial_gain = F0;
  trace.kind = ValueKind::P;
  Matrix<Scalar> F = F0;
  for (int s = 1; s <= opt.max_iter; ++s) {
    const auto est = estimate_correlations(sys, F, pairs, cost.gamma, opt.K, opt.N,
                                           derive_seed(opt.seed, static_cast<std::uint64_t>(s)));
    const Matrix<Scalar> P = solve_P_from_data(est, Lambda, cost.gamma);
    const Matrix<Scalar> Fnext = primal_update(P, sys.state_dim());
    const Scalar deviation = (Fnext - F).norm();
    trace.steps.push_back({s, Fnext, P, deviation});
    F = Fnext;
    if (deviation <= opt.epsilon) {
      trace.converged = true;
      break;
    }
  }
  return trace;
}

}  // namespace slqr
