#pragma once

#include <utility>
#include <vector>

#include "slqr/types.hpp"

namespace slqr {

// Packed ordering shared by every half-vectorization below and by the
// regression/solver code that consumes them: diagonal entries first, then
// upper off-diagonals row by row,
//   (1,1)..(n,n), (1,2)..(1,n), (2,3)..(2,n), ..., (n-1,n).
inline std::vector<std::pair<Index, Index>> packed_index_table(Index n) {
  std::vector<std::pair<Index, Index>> table;
  table.reserve(static_cast<std::size_t>(n * (n + 1) / 2));
  for (Index i = 0; i < n; ++i) table.emplace_back(i, i);
  for (Index i = 0; i + 1 < n; ++i)
    for (Index j = i + 1; j < n; ++j) table.emplace_back(i, j);
  return table;
}

inline Index packed_size(Index n) { return n * (n + 1) / 2; }

inline constexpr double kSymmetryTol = 1e-10;

namespace detail {
template <typename Derived>
Matrix<typename Derived::Scalar> checked_symmetric(const Eigen::MatrixBase<Derived>& M,
                                                   const char* op) {
  using S = typename Derived::Scalar;
  if (M.rows() != M.cols())
    throw DimensionError(std::string(op) + ": matrix must be square");
  if (asymmetry(M) > S(kSymmetryTol))
    throw DimensionError(std::string(op) + ": matrix asymmetry exceeds tolerance");
  return symmetrized(M);
}
}  // namespace detail

// Row vector of the n(n+1)/2 independent entries of a symmetric matrix.
template <typename Derived>
RowVector<typename Derived::Scalar> vech(const Eigen::MatrixBase<Derived>& M) {
  using S = typename Derived::Scalar;
  const Matrix<S> Ms = detail::checked_symmetric(M, "vech");
  const Index n = Ms.rows();
  const auto table = packed_index_table(n);
  RowVector<S> v(packed_size(n));
  for (Index k = 0; k < v.size(); ++k) v(k) = Ms(table[k].first, table[k].second);
  return v;
}

// Column vector pairing with vech: diagonal entries as-is, off-diagonals
// doubled, so that x'Mx = vech(xx') * vecs(M) and vech(M) * vecs(N) = tr(MN).
template <typename Derived>
Vector<typename Derived::Scalar> vecs(const Eigen::MatrixBase<Derived>& M) {
  using S = typename Derived::Scalar;
  const Matrix<S> Ms = detail::checked_symmetric(M, "vecs");
  const Index n = Ms.rows();
  const auto table = packed_index_table(n);
  Vector<S> v(packed_size(n));
  for (Index k = 0; k < v.size(); ++k) {
    const auto [i, j] = table[k];
    v(k) = (i == j) ? Ms(i, j) : S(2) * Ms(i, j);
  }
  return v;
}

// Column-major stacking of an arbitrary rectangular matrix.
template <typename Derived>
Vector<typename Derived::Scalar> vecn(const Eigen::MatrixBase<Derived>& M) {
  using S = typename Derived::Scalar;
  const Matrix<S> Me = M;
  return Eigen::Map<const Vector<S>>(Me.data(), Me.size());
}

// Inverse of vecs.
template <typename Derived>
Matrix<typename Derived::Scalar> unvecs(const Eigen::MatrixBase<Derived>& v, Index n) {
  using S = typename Derived::Scalar;
  if (v.size() != packed_size(n))
    throw DimensionError("unvecs: expected " + std::to_string(packed_size(n)) +
                         " entries, got " + std::to_string(v.size()));
  const auto table = packed_index_table(n);
  Matrix<S> M(n, n);
  for (Index k = 0; k < v.size(); ++k) {
    const auto [i, j] = table[k];
    if (i == j)
      M(i, i) = v(k);
    else
      M(i, j) = M(j, i) = v(k) / S(2);
  }
  return M;
}

// Inverse of vech.
template <typename Derived>
Matrix<typename Derived::Scalar> unvech(const Eigen::MatrixBase<Derived>& v, Index n) {
  using S = typename Derived::Scalar;
  if (v.size() != packed_size(n))
    throw DimensionError("unvech: expected " + std::to_string(packed_size(n)) +
                         " entries, got " + std::to_string(v.size()));
  const auto table = packed_index_table(n);
  Matrix<S> M(n, n);
  for (Index k = 0; k < v.size(); ++k) {
    const auto [i, j] = table[k];
    M(i, j) = M(j, i) = v(k);
  }
  return M;
}

// Inverse of vecn.
template <typename Derived>
Matrix<typename Derived::Scalar> unvecn(const Eigen::MatrixBase<Derived>& v, Index rows,
                                        Index cols) {
  using S = typename Derived::Scalar;
  if (v.size() != rows * cols)
    throw DimensionError("unvecn: expected " + std::to_string(rows * cols) + " entries, got " +
                         std::to_string(v.size()));
  const Vector<S> ve = v;
  return Eigen::Map<const Matrix<S>>(ve.data(), rows, cols);
}

}  // namespace slqr
