#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "slqr/types.hpp"

namespace slqr {

// States are rejected once their norm passes this bound.
inline constexpr double kDivergenceBound = 1e9;

template <typename Scalar>
struct LtiSystem {
  Matrix<Scalar> A;          // n x n
  Matrix<Scalar> B;          // n x m
  Matrix<Scalar> noise_cov;  // n x n, symmetric PSD

  Index state_dim() const { return A.rows(); }
  Index input_dim() const { return B.cols(); }
  bool has_noise() const { return noise_cov.size() > 0 && noise_cov.cwiseAbs().maxCoeff() > Scalar(0); }

  void validate() const {
    require_square(A, "A");
    if (B.rows() != A.rows())
      throw DimensionError("B must have as many rows as A, got " + std::to_string(B.rows()));
    if (B.cols() < 1) throw DimensionError("B must have at least one column");
    require_square(noise_cov, "noise_cov");
    if (noise_cov.rows() != A.rows())
      throw DimensionError("noise_cov must match the state dimension");
    if (asymmetry(noise_cov) > Scalar(1e-12))
      throw DimensionError("noise_cov asymmetry exceeds tolerance");
    if (min_eigenvalue(noise_cov) < Scalar(-1e-10))
      throw DimensionError("noise_cov must be positive semidefinite");
  }
};

template <typename Scalar>
struct CostSpec {
  Matrix<Scalar> Q;  // n x n, symmetric PSD
  Matrix<Scalar> R;  // m x m, symmetric PD
  Scalar gamma = Scalar(0);  // discount, in (0,1)

  void validate(Index n, Index m) const {
    require_square(Q, "Q");
    require_square(R, "R");
    if (Q.rows() != n) throw DimensionError("Q must match the state dimension");
    if (R.rows() != m) throw DimensionError("R must match the input dimension");
    if (asymmetry(Q) > Scalar(1e-12)) throw DimensionError("Q asymmetry exceeds tolerance");
    if (asymmetry(R) > Scalar(1e-12)) throw DimensionError("R asymmetry exceeds tolerance");
    if (min_eigenvalue(Q) < Scalar(-1e-10))
      throw DimensionError("Q must be positive semidefinite");
    if (min_eigenvalue(R) <= Scalar(0)) throw DimensionError("R must be positive definite");
    if (!(gamma > Scalar(0) && gamma < Scalar(1)))
      throw ConfigError("gamma must lie strictly inside (0,1), got " + std::to_string(gamma));
  }

  // blkdiag(Q, R), the stage-cost weight on the stacked vector [x; u].
  Matrix<Scalar> stage_weight() const {
    const Index n = Q.rows(), m = R.rows();
    Matrix<Scalar> L = Matrix<Scalar>::Zero(n + m, n + m);
    L.topLeftCorner(n, n) = Q;
    L.bottomRightCorner(m, m) = R;
    return L;
  }
};

template <typename Derived>
typename Derived::Scalar spectral_radius(const Eigen::MatrixBase<Derived>& M) {
  using S = typename Derived::Scalar;
  const Matrix<S> Me = M;
  require_square(Me, "spectral_radius argument");
  if (Me.rows() == 0) throw DimensionError("spectral_radius: empty matrix");
  Eigen::EigenSolver<Matrix<S>> es(Me, false);
  if (es.info() != Eigen::Success) throw NumericalError("eigenvalue iteration did not converge");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

// [I_n; F], mapping x to the stacked closed-loop vector [x; Fx].
template <typename Scalar>
Matrix<Scalar> gain_stack(const Matrix<Scalar>& F) {
  const Index n = F.cols(), m = F.rows();
  Matrix<Scalar> S(n + m, n);
  S.topRows(n) = Matrix<Scalar>::Identity(n, n);
  S.bottomRows(m) = F;
  return S;
}

// [A B], the one-step map from [x; u] to the next state.
template <typename Scalar>
Matrix<Scalar> state_input_map(const LtiSystem<Scalar>& sys) {
  Matrix<Scalar> G(sys.state_dim(), sys.state_dim() + sys.input_dim());
  G << sys.A, sys.B;
  return G;
}

// Closed-loop transition of the stacked vector [x; u] under u = Fx:
// [[A, B], [FA, FB]].  Shares every nonzero eigenvalue with A + BF.
template <typename Scalar>
Matrix<Scalar> augmented_matrix(const LtiSystem<Scalar>& sys, const Matrix<Scalar>& F) {
  if (F.rows() != sys.input_dim() || F.cols() != sys.state_dim())
    throw DimensionError("gain must be input_dim x state_dim");
  return gain_stack(F) * state_input_map(sys);
}

enum class StabilityPolicy {
  Strict,      // rho(A + BF) < 1
  Discounted,  // rho(A + BF) < 1/sqrt(gamma), enough for the discounted cost
};

template <typename Scalar>
bool is_stabilizing(const LtiSystem<Scalar>& sys, const Matrix<Scalar>& F,
                    StabilityPolicy policy = StabilityPolicy::Strict,
                    Scalar gamma = Scalar(1)) {
  if (F.rows() != sys.input_dim() || F.cols() != sys.state_dim())
    throw DimensionError("gain must be input_dim x state_dim");
  const Scalar rho = spectral_radius(sys.A + sys.B * F);
  const Scalar bound =
      policy == StabilityPolicy::Strict ? Scalar(1) : Scalar(1) / std::sqrt(gamma);
  return rho < bound;
}

template <typename Scalar>
using Policy = std::function<Vector<Scalar>(Index, const Vector<Scalar>&)>;

template <typename Scalar>
using StateSampler = std::function<Vector<Scalar>(std::mt19937_64&)>;

template <typename Scalar>
Policy<Scalar> feedback_policy(const Matrix<Scalar>& F) {
  return [F](Index, const Vector<Scalar>& x) -> Vector<Scalar> { return F * x; };
}

template <typename Scalar>
StateSampler<Scalar> standard_normal_sampler(Index n) {
  return [n](std::mt19937_64& rng) -> Vector<Scalar> {
    std::normal_distribution<Scalar> gauss(Scalar(0), Scalar(1));
    Vector<Scalar> x(n);
    for (Index i = 0; i < n; ++i) x(i) = gauss(rng);
    return x;
  };
}

// L with L L' = cov.  Cholesky when definite, eigenvalue clipping otherwise.
template <typename Scalar>
Matrix<Scalar> gaussian_factor(const Matrix<Scalar>& cov) {
  require_square(cov, "covariance");
  Eigen::LLT<Matrix<Scalar>> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(symmetrized(cov));
  if (es.info() != Eigen::Success) throw NumericalError("covariance factorization failed");
  const Vector<Scalar> d = es.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal();
}

template <typename Scalar>
struct Trajectory {
  std::vector<Vector<Scalar>> states;  // x_0 .. x_K
  std::vector<Vector<Scalar>> inputs;  // u_0 .. u_K; u_K is evaluated but never applied
  std::uint64_t seed = 0;
};

// Total number of trajectory simulations since process start; lets callers
// assert that an algorithm phase touched or did not touch the plant.
inline std::atomic<long long>& simulate_call_counter() {
  static std::atomic<long long> counter{0};
  return counter;
}

template <typename Scalar>
Trajectory<Scalar> simulate_with_rng(const LtiSystem<Scalar>& sys, const Policy<Scalar>& policy,
                                     const Vector<Scalar>& x0, Index steps,
                                     std::mt19937_64& rng) {
  sys.validate();
  const Index n = sys.state_dim(), m = sys.input_dim();
  if (x0.size() != n) throw DimensionError("x0 must match the state dimension");
  if (steps < 0) throw ConfigError("step count must be nonnegative");
  simulate_call_counter().fetch_add(1, std::memory_order_relaxed);

  const bool noisy = sys.has_noise();
  const Matrix<Scalar> L = noisy ? gaussian_factor(sys.noise_cov) : Matrix<Scalar>();
  std::normal_distribution<Scalar> gauss(Scalar(0), Scalar(1));

  Trajectory<Scalar> traj;
  traj.states.reserve(static_cast<std::size_t>(steps) + 1);
  traj.inputs.reserve(static_cast<std::size_t>(steps) + 1);
  Vector<Scalar> x = x0;
  for (Index k = 0;; ++k) {
    if (x.norm() > Scalar(kDivergenceBound))
      throw DivergenceError("state norm exceeded " + std::to_string(kDivergenceBound) +
                                " at step " + std::to_string(k),
                            k);
    Vector<Scalar> u = policy(k, x);
    if (u.size() != m) throw DimensionError("policy returned an input of wrong dimension");
    traj.states.push_back(x);
    traj.inputs.push_back(u);
    if (k == steps) break;
    Vector<Scalar> next = sys.A * x + sys.B * u;
    if (noisy) {
      Vector<Scalar> z(n);
      for (Index i = 0; i < n; ++i) z(i) = gauss(rng);
      next += L * z;
    }
    x = std::move(next);
  }
  return traj;
}

template <typename Scalar>
Trajectory<Scalar> simulate(const LtiSystem<Scalar>& sys, const Policy<Scalar>& policy,
                            const Vector<Scalar>& x0, Index steps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Trajectory<Scalar> traj = simulate_with_rng(sys, policy, x0, steps, rng);
  traj.seed = seed;
  return traj;
}

// Per-step second moments averaged over trajectories.
template <typename Scalar>
struct MomentEstimates {
  std::vector<Matrix<Scalar>> Exx;  // E[x_k x_k'], k = 0..K
  std::vector<Matrix<Scalar>> Exu;  // E[x_k u_k']
  std::vector<Matrix<Scalar>> Euu;  // E[u_k u_k']
  int trajectory_count = 0;

  Index horizon() const { return static_cast<Index>(Exx.size()) - 1; }
};

// Runs N independent trajectories (sub-stream q = 0..N-1 of `seed`) and
// averages the per-step outer products.  Sub-streams make the result
// independent of evaluation order.
template <typename Scalar>
MomentEstimates<Scalar> estimate_moments(const LtiSystem<Scalar>& sys,
                                         const Policy<Scalar>& policy,
                                         const StateSampler<Scalar>& x0_sampler, Index K,
                                         int N, std::uint64_t seed) {
  if (N < 1) throw ConfigError("trajectory count must be positive");
  if (K < 0) throw ConfigError("horizon must be nonnegative");
  const Index n = sys.state_dim(), m = sys.input_dim();
  MomentEstimates<Scalar> est;
  est.Exx.assign(K + 1, Matrix<Scalar>::Zero(n, n));
  est.Exu.assign(K + 1, Matrix<Scalar>::Zero(n, m));
  est.Euu.assign(K + 1, Matrix<Scalar>::Zero(m, m));
  est.trajectory_count = N;
  for (int q = 0; q < N; ++q) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(q)));
    const Vector<Scalar> x0 = x0_sampler(rng);
    const Trajectory<Scalar> traj = simulate_with_rng(sys, policy, x0, K, rng);
    for (Index k = 0; k <= K; ++k) {
      const auto& x = traj.states[static_cast<std::size_t>(k)];
      const auto& u = traj.inputs[static_cast<std::size_t>(k)];
      est.Exx[static_cast<std::size_t>(k)] += x * x.transpose();
      est.Exu[static_cast<std::size_t>(k)] += x * u.transpose();
      est.Euu[static_cast<std::size_t>(k)] += u * u.transpose();
    }
  }
  for (Index k = 0; k <= K; ++k) {
    est.Exx[static_cast<std::size_t>(k)] /= Scalar(N);
    est.Exu[static_cast<std::size_t>(k)] /= Scalar(N);
    est.Euu[static_cast<std::size_t>(k)] /= Scalar(N);
  }
  return est;
}

// Monte-Carlo estimate of the discounted cost of u = Fx from a fixed start.
// The horizon must be chosen so the discarded tail is below the tolerance
// the caller cares about.
template <typename Scalar>
Scalar empirical_cost(const LtiSystem<Scalar>& sys, const CostSpec<Scalar>& cost,
                      const Matrix<Scalar>& F, const Vector<Scalar>& x0, Index horizon, int N,
                      std::uint64_t seed) {
  sys.validate();
  cost.validate(sys.state_dim(), sys.input_dim());
  if (!is_stabilizing(sys, F, StabilityPolicy::Discounted, cost.gamma))
    throw StabilityError("gain is not stabilizing in the discounted sense");
  if (N < 1) throw ConfigError("trajectory count must be positive");
  const Policy<Scalar> policy = feedback_policy(F);
  Scalar total = Scalar(0);
  for (int q = 0; q < N; ++q) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(q)));
    const Trajectory<Scalar> traj = simulate_with_rng(sys, policy, x0, horizon, rng);
    Scalar J = Scalar(0), w = Scalar(1);
    for (Index k = 0; k < horizon; ++k) {
      const auto& x = traj.states[static_cast<std::size_t>(k)];
      const auto& u = traj.inputs[static_cast<std::size_t>(k)];
      J += w * (x.dot(cost.Q * x) + u.dot(cost.R * u));
      w *= cost.gamma;
    }
    total += J;
  }
  return total / Scalar(N);
}

// Deterministic start pairs v = [z; u] for correlation-based identification.
template <typename Scalar>
struct InitialPairSet {
  std::vector<Vector<Scalar>> pairs;  // each of length n + m

  Index count() const { return static_cast<Index>(pairs.size()); }

  void validate(Index n, Index m) const {
    if (pairs.empty()) throw ConfigError("initial pair set must not be empty");
    for (const auto& v : pairs)
      if (v.size() != n + m)
        throw DimensionError("initial pairs must have length state_dim + input_dim");
  }

  // (1/r) sum of v v' over the set.
  Matrix<Scalar> gram() const {
    if (pairs.empty()) throw ConfigError("initial pair set must not be empty");
    const Index d = pairs.front().size();
    Matrix<Scalar> G = Matrix<Scalar>::Zero(d, d);
    for (const auto& v : pairs) G += v * v.transpose();
    return G / Scalar(pairs.size());
  }
};

// Canonical excitation set for the 2-state, 1-input case; random otherwise,
// redrawn until the Gram matrix is safely positive definite.
template <typename Scalar>
InitialPairSet<Scalar> default_initial_pairs(Index n, Index m, std::uint64_t seed) {
  InitialPairSet<Scalar> set;
  if (n == 2 && m == 1) {
    Vector<Scalar> v1(3), v2(3), v3(3);
    v1 << Scalar(-1), Scalar(3), Scalar(-2);
    v2 << Scalar(2), Scalar(-1), Scalar(-5);
    v3 << Scalar(-3), Scalar(3), Scalar(-8);
    set.pairs = {v1, v2, v3};
    return set;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<Scalar> gauss(Scalar(0), Scalar(1));
  for (int attempt = 0; attempt < 256; ++attempt) {
    set.pairs.clear();
    for (Index i = 0; i < n + m; ++i) {
      Vector<Scalar> v(n + m);
      for (Index j = 0; j < n + m; ++j) v(j) = gauss(rng);
      set.pairs.push_back(v);
    }
    if (min_eigenvalue(set.gram()) > Scalar(1e-6)) return set;
  }
  throw ExcitationError("could not draw initial pairs with a positive definite Gram matrix");
}

}  // namespace slqr
