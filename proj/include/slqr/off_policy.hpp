#pragma once

#include <cmath>
#include <cstdint>

#include "slqr/model.hpp"
#include "slqr/model_based.hpp"
#include "slqr/pack.hpp"

namespace slqr {

// Condition-number ceiling on the normal-equations matrix of the Bellman
// regression; beyond it the data is declared insufficiently exciting.
inline constexpr double kConditionLimit = 1e12;

// Deterministic multi-tone excitation added to the behavior policy.
template <typename Scalar>
Scalar probing_noise(Index k, Scalar amplitude) {
  const Scalar t = static_cast<Scalar>(k);
  return amplitude * (Scalar(0.2) * std::sin(Scalar(1.009) * t) +
                      std::cos(Scalar(0.538) * t) * std::cos(Scalar(0.538) * t) +
                      std::sin(Scalar(0.9) * t) + std::cos(Scalar(100) * t));
}

// Sampled second moments of a behavior run, collected once and reused by
// every later evaluation pass.
template <typename Scalar>
struct OffPolicyDataset {
  MomentEstimates<Scalar> moments;  // per-step moments, k = 0..K
  Index K = 0;
  int N = 0;
  std::uint64_t seed = 0;
  Index n = 0, m = 0;
};

// Behavior policy u_k = Fb x_k + e_k * 1 with the same probing scalar on
// every input channel.
template <typename Scalar>
Policy<Scalar> probing_policy(const Matrix<Scalar>& Fb, Scalar amplitude) {
  const Index m = Fb.rows();
  return [Fb, amplitude, m](Index k, const Vector<Scalar>& x) -> Vector<Scalar> {
    return Fb * x + Vector<Scalar>::Constant(m, probing_noise(k, amplitude));
  };
}

template <typename Scalar>
OffPolicyDataset<Scalar> collect_off_policy_data(const LtiSystem<Scalar>& sys,
                                                 const Matrix<Scalar>& behavior_gain,
                                                 Scalar amplitude,
                                                 const StateSampler<Scalar>& x0_sampler,
                                                 Index K, int N, std::uint64_t seed) {
  sys.validate();
  if (behavior_gain.rows() != sys.input_dim() || behavior_gain.cols() != sys.state_dim())
    throw DimensionError("behavior gain must be input_dim x state_dim");
  OffPolicyDataset<Scalar> data;
  data.n = sys.state_dim();
  data.m = sys.input_dim();
  data.K = K;
  data.N = N;
  data.seed = seed;
  data.moments =
      estimate_moments(sys, probing_policy(behavior_gain, amplitude), x0_sampler, K, N, seed);
  return data;
}

// One Bellman-residual least-squares problem: Psi * theta = Phi with
// theta = [vecs(X); vecn(X1); vecs(X2)].
template <typename Scalar>
struct BellmanRegression {
  Matrix<Scalar> Psi;
  Vector<Scalar> Phi;
  Index n = 0, m = 0;

  Index unknowns() const { return packed_size(n) + m * n + packed_size(m); }
};

// Assembles the K regression rows for evaluating the target gain F from the
// recorded moments.  Row i couples the moments at steps i-1 and i:
//   [vech(Exx_{i-1}) - g vech(Exx_i) + g vech(cov),
//    2g vecn(Eux_{i-1} - F Exx_{i-1})',
//    g vech(sym(Euu + Eux F' - F Eux' - F Exx F')_{i-1})] * theta
//      = tr((Q + F'RF) Exx_{i-1}).
template <typename Scalar>
BellmanRegression<Scalar> build_regression(const OffPolicyDataset<Scalar>& data,
                                           const Matrix<Scalar>& F, const CostSpec<Scalar>& cost,
                                           const Matrix<Scalar>& noise_cov) {
  const Index n = data.n, m = data.m, K = data.K;
  if (F.rows() != m || F.cols() != n) throw DimensionError("gain must be input_dim x state_dim");
  if (static_cast<Index>(data.moments.Exx.size()) != K + 1)
    throw DimensionError("dataset moments do not cover the declared horizon");
  BellmanRegression<Scalar> reg;
  reg.n = n;
  reg.m = m;
  const Index cols = reg.unknowns();
  if (K < cols)
    throw ExcitationError("only " + std::to_string(K) + " rows for " + std::to_string(cols) +
                          " unknowns; lengthen the horizon");
  reg.Psi.resize(K, cols);
  reg.Phi.resize(K);

  const Scalar g = cost.gamma;
  const RowVector<Scalar> cov_row = vech(symmetrized(noise_cov));
  const Matrix<Scalar> W = symmetrized(cost.Q + F.transpose() * cost.R * F);
  for (Index i = 1; i <= K; ++i) {
    const auto& Exx0 = data.moments.Exx[static_cast<std::size_t>(i - 1)];
    const auto& Exx1 = data.moments.Exx[static_cast<std::size_t>(i)];
    const auto& Exu0 = data.moments.Exu[static_cast<std::size_t>(i - 1)];
    const auto& Euu0 = data.moments.Euu[static_cast<std::size_t>(i - 1)];

    // E[(u - Fx) x'] and E[(u - Fx)(u + Fx)'], the latter symmetrized since
    // only its symmetric part acts on a symmetric unknown.
    const Matrix<Scalar> Edx = Exu0.transpose() - F * Exx0;
    const Matrix<Scalar> Eduu = symmetrized(Euu0 + Exu0.transpose() * F.transpose() -
                                            F * Exu0 - F * Exx0 * F.transpose());

    reg.Psi.block(i - 1, 0, 1, packed_size(n)) = vech(Exx0) - g * vech(Exx1) + g * cov_row;
    reg.Psi.block(i - 1, packed_size(n), 1, m * n) = Scalar(2) * g * vecn(Edx).transpose();
    reg.Psi.block(i - 1, packed_size(n) + m * n, 1, packed_size(m)) = g * vech(Eduu);
    reg.Phi(i - 1) = (W * Exx0).trace();
  }
  return reg;
}

// Unknowns recovered by one evaluation pass: the value matrix of the target
// gain and the two input-coupling blocks B'XA and B'XB.
template <typename Scalar>
struct EvaluationTriple {
  Matrix<Scalar> X;   // n x n
  Matrix<Scalar> X1;  // m x n
  Matrix<Scalar> X2;  // m x m
};

template <typename Scalar>
EvaluationTriple<Scalar> bls_solve(const BellmanRegression<Scalar>& reg) {
  const Index n = reg.n, m = reg.m;
  const Index cols = reg.unknowns();
  if (reg.Psi.cols() != cols || reg.Psi.rows() != reg.Phi.size())
    throw DimensionError("regression blocks are inconsistent");
  Eigen::JacobiSVD<Matrix<Scalar>> svd(reg.Psi, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Scalar smax = svd.singularValues()(0);
  const Scalar smin = svd.singularValues()(svd.singularValues().size() - 1);
  if (!(smin > Scalar(0)) || (smax / smin) * (smax / smin) > Scalar(kConditionLimit))
    throw ExcitationError(
        "regressor is rank-deficient or ill-conditioned; add probing noise to the behavior "
        "policy or lengthen the horizon");
  const Vector<Scalar> theta = svd.solve(reg.Phi);

  EvaluationTriple<Scalar> triple;
  triple.X = unvecs(theta.head(packed_size(n)), n);
  triple.X1 = unvecn(theta.segment(packed_size(n), m * n), m, n);
  triple.X2 = unvecs(theta.tail(packed_size(m)), m);
  return triple;
}

// Greedy gain from an evaluation triple: F = -gamma (R + gamma X2)^{-1} X1.
template <typename Scalar>
Matrix<Scalar> policy_improve(const EvaluationTriple<Scalar>& triple, const Matrix<Scalar>& R,
                              Scalar gamma) {
  const Matrix<Scalar> H = symmetrized(R + gamma * triple.X2);
  Eigen::LLT<Matrix<Scalar>> llt(H);
  if (llt.info() != Eigen::Success)
    throw NumericalError("estimated input-weight block is not positive definite");
  return -gamma * llt.solve(triple.X1);
}

template <typename Scalar>
struct OffPolicyOptions {
  Matrix<Scalar> behavior_gain;          // empty: use the initial gain
  Scalar probing_amplitude = Scalar(1);
  Index K = 20;
  int N = 15;
  Scalar epsilon = Scalar(1e-3);
  int max_iter = 10;
  std::uint64_t seed = 0;
  StateSampler<Scalar> x0_sampler;       // empty: standard normal
};

// Off-policy policy iteration.  Phase 1 records one batch of behavior data;
// phase 2 re-solves the Bellman regression for each successive target gain
// without ever touching the plant again.
template <typename Scalar>
IterateTrace<Scalar> mf_oppi_run(const LtiSystem<Scalar>& sys, const CostSpec<Scalar>& cost,
                                 const Matrix<Scalar>& F0, const OffPolicyOptions<Scalar>& opt) {
  sys.validate();
  cost.validate(sys.state_dim(), sys.input_dim());
  if (!is_stabilizing(sys, F0, StabilityPolicy::Discounted, cost.gamma))
    throw StabilityError("initial gain is not stabilizing in the discounted sense");
  if (opt.max_iter < 1) throw ConfigError("max_iter must be positive");

  const Matrix<Scalar> Fb = opt.behavior_gain.size() > 0 ? opt.behavior_gain : F0;
  const StateSampler<Scalar> sampler =
      opt.x0_sampler ? opt.x0_sampler : standard_normal_sampler<Scalar>(sys.state_dim());
  const OffPolicyDataset<Scalar> data = collect_off_policy_data(
      sys, Fb, opt.probing_amplitude, sampler, opt.K, opt.N, opt.seed);

  IterateTrace<Scalar> trace;
  trace.initial_gain = F0;
  trace.kind = ValueKind::X;
  Matrix<Scalar> F = F0;
  for (int s = 1; s <= opt.max_iter; ++s) {
    const BellmanRegression<Scalar> reg = build_regression(data, F, cost, sys.noise_cov);
    const EvaluationTriple<Scalar> triple = bls_solve(reg);
    const Matrix<Scalar> Fnext = policy_improve(triple, cost.R, cost.gamma);
    const Scalar deviation = (Fnext - F).norm();
    trace.steps.push_back({s, Fnext, triple.X, deviation});
    F = Fnext;
    if (deviation <= opt.epsilon) {
      trace.converged = true;
      break;
    }
  }
  return trace;
}

}  // namespace slqr
