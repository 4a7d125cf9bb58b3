#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace slqr {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Index = Eigen::Index;

// Thrown when matrix shapes are inconsistent with each other.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Thrown when a gain or closed loop violates the spectral bound a solver needs.
struct StabilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when a simulated state leaves the admissible region.
struct DivergenceError : std::runtime_error {
  Index step;
  DivergenceError(const std::string& msg, Index k) : std::runtime_error(msg), step(k) {}
};

// Thrown when sampled data is not informative enough to identify the unknowns.
struct ExcitationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when a dense solve or eigenvalue computation fails or leaves a large residual.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown on malformed or out-of-range experiment configuration.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

template <typename Derived>
Matrix<typename Derived::Scalar> symmetrized(const Eigen::MatrixBase<Derived>& M) {
  return (M + M.transpose()) / typename Derived::Scalar(2);
}

// Largest absolute asymmetry, relative to max(1, |M|_inf).
template <typename Derived>
typename Derived::Scalar asymmetry(const Eigen::MatrixBase<Derived>& M) {
  using S = typename Derived::Scalar;
  const Matrix<S> E = M - M.transpose();
  const S scale = std::max(S(1), M.cwiseAbs().maxCoeff());
  return E.cwiseAbs().maxCoeff() / scale;
}

template <typename Scalar>
void require_square(const Matrix<Scalar>& M, const std::string& name) {
  if (M.rows() != M.cols())
    throw DimensionError(name + " must be square, got " + std::to_string(M.rows()) + "x" +
                         std::to_string(M.cols()));
}

template <typename Scalar>
Scalar min_eigenvalue(const Matrix<Scalar>& M) {
  require_square(M, "matrix");
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(symmetrized(M));
  if (es.info() != Eigen::Success) throw NumericalError("self-adjoint eigensolver failed");
  return es.eigenvalues().minCoeff();
}

// Which matrix family an iterate trace stores as its per-step value.
enum class ValueKind { X, P };

template <typename Scalar>
struct IterateStep {
  int s = 0;                  // 1-based iteration counter
  Matrix<Scalar> gain;        // F^s
  Matrix<Scalar> value;       // X^s (n x n) or P^s ((n+m) x (n+m))
  Scalar deviation = Scalar(0);  // |F^s - F^{s-1}|_F
};

template <typename Scalar>
struct IterateTrace {
  Matrix<Scalar> initial_gain;
  ValueKind kind = ValueKind::X;
  std::vector<IterateStep<Scalar>> steps;
  bool converged = false;

  const Matrix<Scalar>& terminal_gain() const {
    return steps.empty() ? initial_gain : steps.back().gain;
  }
  // Gain that produced the value stored at step index i (0-based).
  const Matrix<Scalar>& gain_before(std::size_t i) const {
    return i == 0 ? initial_gain : steps[i - 1].gain;
  }
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Independent sub-stream seed for item `index` under one master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t state = master ^ (0xD1B54A32D192ED03ull * (index + 1));
  return splitmix64(state);
}

}  // namespace slqr
