#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "slqr/model.hpp"
#include "slqr/model_based.hpp"
#include "slqr/pack.hpp"
#include "slqr/primal_dual.hpp"
#include "slqr/types.hpp"

namespace slqr {

// Weight of the accumulated noise term in every discounted average:
// sum_{k>=1} gamma^k = gamma / (1 - gamma).
template <typename Scalar>
Scalar noise_tail_weight(Scalar gamma) {
  return gamma / (Scalar(1) - gamma);
}

// Unique S > 0 with S = gamma A_F S A_F' + Gamma + tail * Fbar sigma^2 Fbar'.
// This is the discounted correlation matrix of [x; u] under the gain F,
// driven by the excitation covariance Gamma and the process noise.
template <typename Scalar>
Matrix<Scalar> closed_form_S(const LtiSystem<Scalar>& sys, const Matrix<Scalar>& F,
                             const Matrix<Scalar>& Gamma, Scalar gamma) {
  sys.validate();
  const Index n = sys.state_dim(), m = sys.input_dim();
  if (F.rows() != m || F.cols() != n) throw DimensionError("gain must be input_dim x state_dim");
  require_square(Gamma, "excitation covariance");
  if (Gamma.rows() != n + m)
    throw DimensionError("excitation covariance must match the stacked dimension");
  if (min_eigenvalue(symmetrized(Gamma)) <= Scalar(0))
    throw ConfigError("excitation covariance must be positive definite");

  const Matrix<Scalar> Fbar = gain_stack(F);
  const Matrix<Scalar> M = symmetrized(
      Matrix<Scalar>(Gamma + noise_tail_weight(gamma) * Fbar * sys.noise_cov * Fbar.transpose()));
  const Matrix<Scalar> AFt = augmented_matrix(sys, F).transpose();
  const Matrix<Scalar> S = solve_lyapunov_discounted<Scalar>(AFt, M, gamma);
  if (min_eigenvalue(S) <= Scalar(0))
    throw NumericalError("correlation matrix lost positive definiteness");
  return S;
}

template <typename Scalar>
Scalar primal_objective(const Matrix<Scalar>& S, const Matrix<Scalar>& Lambda) {
  if (S.rows() != Lambda.rows() || S.cols() != Lambda.cols())
    throw DimensionError("objective factors must share dimensions");
  return (Lambda * S).trace();
}

template <typename Scalar>
Scalar dual_objective(const Matrix<Scalar>& P, const Matrix<Scalar>& F,
                      const Matrix<Scalar>& Gamma, const Matrix<Scalar>& noise_cov,
                      Scalar gamma) {
  const Matrix<Scalar> Fbar = gain_stack(F);
  return (Gamma * P).trace() +
         noise_tail_weight(gamma) *
             (noise_cov * Fbar.transpose() * P * Fbar).trace();
}

// Scalarized constraint coupling: objective plus multipliers against the
// correlation constraint and the definiteness slack.
template <typename Scalar>
Scalar lagrangian(const Matrix<Scalar>& P, const Matrix<Scalar>& P0, const Matrix<Scalar>& F,
                  const Matrix<Scalar>& S, const LtiSystem<Scalar>& sys,
                  const CostSpec<Scalar>& cost, const Matrix<Scalar>& Gamma) {
  const Matrix<Scalar> AF = augmented_matrix(sys, F);
  const Matrix<Scalar> Fbar = gain_stack(F);
  const Matrix<Scalar> constraint =
      cost.gamma * AF * S * AF.transpose() + Gamma +
      noise_tail_weight(cost.gamma) * Fbar * sys.noise_cov * Fbar.transpose() - S;
  return (cost.stage_weight() * S).trace() - (S * P0).trace() + (constraint * P).trace();
}

// Partial derivative of the Lagrangian in the gain for fixed (S, P):
// 2 (P12' + P22 F) (gamma [A B] S [A B]' + tail * sigma^2).
template <typename Scalar>
Matrix<Scalar> lagrangian_gain_gradient(const LtiSystem<Scalar>& sys, const CostSpec<Scalar>& cost,
                                        const Matrix<Scalar>& F, const Matrix<Scalar>& S,
                                        const Matrix<Scalar>& P) {
  const Index n = sys.state_dim(), m = sys.input_dim();
  const Matrix<Scalar> Psym = symmetrized(P);
  const Matrix<Scalar> P12 = Psym.block(0, n, n, m);
  const Matrix<Scalar> P22 = Psym.block(n, n, m, m);
  const Matrix<Scalar> G = state_input_map(sys);
  const Matrix<Scalar> N =
      cost.gamma * G * S * G.transpose() + noise_tail_weight(cost.gamma) * sys.noise_cov;
  return Scalar(2) * (P12.transpose() + P22 * F) * N;
}

// Defect norms of the five optimality conditions at a candidate tuple.
template <typename Scalar>
struct KktResiduals {
  Scalar r_primal_lyap;   // correlation constraint defect
  Scalar r_primal_pd;     // definiteness slack of S
  Scalar r_dual;          // size of the multiplier that must vanish
  Scalar r_stationary_P;  // dual fixed-point defect
  Scalar r_stationary_F;  // gain gradient norm

  Scalar max() const {
    return std::max({r_primal_lyap, r_primal_pd, r_dual, r_stationary_P, r_stationary_F});
  }
};

template <typename Scalar>
KktResiduals<Scalar> kkt_residuals(const Matrix<Scalar>& S, const Matrix<Scalar>& F,
                                   const Matrix<Scalar>& P, const Matrix<Scalar>& P0,
                                   const LtiSystem<Scalar>& sys, const CostSpec<Scalar>& cost,
                                   const Matrix<Scalar>& Gamma) {
  const Matrix<Scalar> AF = augmented_matrix(sys, F);
  const Matrix<Scalar> Fbar = gain_stack(F);
  const Matrix<Scalar> Lambda = cost.stage_weight();

  KktResiduals<Scalar> res;
  const Matrix<Scalar> primal_defect =
      cost.gamma * AF * S * AF.transpose() + Gamma +
      noise_tail_weight(cost.gamma) * Fbar * sys.noise_cov * Fbar.transpose() - S;
  res.r_primal_lyap = primal_defect.cwiseAbs().maxCoeff();
  res.r_primal_pd = std::max(Scalar(0), -min_eigenvalue(symmetrized(S)));
  res.r_dual = P0.size() == 0 ? Scalar(0) : P0.cwiseAbs().maxCoeff();
  res.r_stationary_P =
      (cost.gamma * AF.transpose() * P * AF + Lambda - P).cwiseAbs().maxCoeff();
  res.r_stationary_F = lagrangian_gain_gradient(sys, cost, F, S, P).cwiseAbs().maxCoeff();
  return res;
}

// Minimum eigenvalue of Fbar' P Fbar - (P11 - P12 P22^{-1} P12'), the amount
// by which a gain's value exceeds the Schur complement of the dual variable.
// Nonnegative for PSD P, zero exactly at F = -P22^{-1} P12'.
template <typename Scalar>
Scalar check_schur_dominance(const Matrix<Scalar>& P, const Matrix<Scalar>& F) {
  const Index m = F.rows(), n = F.cols();
  require_square(P, "dual variable");
  if (P.rows() != n + m) throw DimensionError("dual variable must match the stacked dimension");
  const Matrix<Scalar> Psym = symmetrized(P);
  const Scalar scale = std::max(Scalar(1), Psym.cwiseAbs().maxCoeff());
  if (min_eigenvalue(Psym) < Scalar(-1e-10) * scale)
    throw ConfigError("dual variable must be positive semidefinite");
  const Matrix<Scalar> P11 = Psym.block(0, 0, n, n);
  const Matrix<Scalar> P12 = Psym.block(0, n, n, m);
  const Matrix<Scalar> P22 = Psym.block(n, n, m, m);
  Eigen::LLT<Matrix<Scalar>> llt(P22);
  if (llt.info() != Eigen::Success)
    throw NumericalError("input block of the dual variable is not positive definite");
  const Matrix<Scalar> schur = P11 - P12 * llt.solve(Matrix<Scalar>(P12.transpose()));
  const Matrix<Scalar> Fbar = gain_stack(F);
  return min_eigenvalue(symmetrized(Matrix<Scalar>(Fbar.transpose() * Psym * Fbar - schur)));
}

// Per-step agreement between a policy-iteration trace and a dual-primal
// trace started from the same gain: gains must match, and the evaluation
// matrix must equal the dual variable compressed by the previous gain.
template <typename Scalar>
struct EquivalenceReport {
  std::vector<Scalar> gain_deviations;
  std::vector<Scalar> value_deviations;
  Scalar max_gain_deviation = Scalar(0);
  Scalar max_value_deviation = Scalar(0);
  std::size_t steps = 0;
};

template <typename Scalar>
EquivalenceReport<Scalar> verify_equivalence(const IterateTrace<Scalar>& pi_trace,
                                             const IterateTrace<Scalar>& pd_trace) {
  if (pi_trace.kind != ValueKind::X || pd_trace.kind != ValueKind::P)
    throw ConfigError("equivalence check expects an evaluation trace and a dual trace");
  if (pi_trace.initial_gain.rows() != pd_trace.initial_gain.rows() ||
      pi_trace.initial_gain.cols() != pd_trace.initial_gain.cols() ||
      !(pi_trace.initial_gain.array() == pd_trace.initial_gain.array()).all())
    throw ConfigError("traces must start from the same initial gain");

  EquivalenceReport<Scalar> report;
  report.steps = std::min(pi_trace.steps.size(), pd_trace.steps.size());
  for (std::size_t s = 0; s < report.steps; ++s) {
    const auto& pi = pi_trace.steps[s];
    const auto& pd = pd_trace.steps[s];
    const Matrix<Scalar> Fbar = gain_stack(pd_trace.gain_before(static_cast<Index>(s)));
    const Scalar gain_dev = (pi.gain - pd.gain).cwiseAbs().maxCoeff();
    const Scalar value_dev =
        (pi.value - Fbar.transpose() * pd.value * Fbar).cwiseAbs().maxCoeff();
    report.gain_deviations.push_back(gain_dev);
    report.value_deviations.push_back(value_dev);
    report.max_gain_deviation = std::max(report.max_gain_deviation, gain_dev);
    report.max_value_deviation = std::max(report.max_value_deviation, value_dev);
  }
  return report;
}

// Primal objective at the optimal correlation matrix minus the dual
// objective at the optimal dual variable; zero when strong duality holds.
template <typename Scalar>
Scalar duality_gap(const LtiSystem<Scalar>& sys, const CostSpec<Scalar>& cost,
                   const Matrix<Scalar>& Gamma, const Matrix<Scalar>& F0) {
  const auto sol = solve_are(sys, cost, F0);
  const Matrix<Scalar> P = optimal_P(sys, cost, sol.X);
  const Matrix<Scalar> S = closed_form_S(sys, sol.F, Gamma, cost.gamma);
  return primal_objective(S, Matrix<Scalar>(cost.stage_weight())) -
         dual_objective(P, sol.F, Gamma, sys.noise_cov, cost.gamma);
}

}  // namespace slqr
