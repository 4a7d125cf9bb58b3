#pragma once

#include "slqr/model.hpp"

// Reference plants used across the test suite.
namespace slqr::testing {

// Scalar plant x+ = 2x + u + w with unit weights, gamma = 0.7.
inline LtiSystem<double> scalar_system(double noise_var = 1.0) {
  LtiSystem<double> sys;
  sys.A = Matrix<double>::Constant(1, 1, 2.0);
  sys.B = Matrix<double>::Constant(1, 1, 1.0);
  sys.noise_cov = Matrix<double>::Constant(1, 1, noise_var);
  return sys;
}

inline CostSpec<double> scalar_cost() {
  CostSpec<double> cost;
  cost.Q = Matrix<double>::Identity(1, 1);
  cost.R = Matrix<double>::Identity(1, 1);
  cost.gamma = 0.7;
  return cost;
}

inline Matrix<double> scalar_initial_gain() { return Matrix<double>::Constant(1, 1, -1.0); }

// Two-state, single-input plant with unit weights, gamma = 0.7.
inline LtiSystem<double> two_state_system(double noise_var = 1.0) {
  LtiSystem<double> sys;
  sys.A.resize(2, 2);
  sys.A << 0.5, 1.0, 0.25, 0.5;
  sys.B.resize(2, 1);
  sys.B << 1.0, 1.0;
  sys.noise_cov = noise_var * Matrix<double>::Identity(2, 2);
  return sys;
}

inline CostSpec<double> two_state_cost() {
  CostSpec<double> cost;
  cost.Q = Matrix<double>::Identity(2, 2);
  cost.R = Matrix<double>::Identity(1, 1);
  cost.gamma = 0.7;
  return cost;
}

inline Matrix<double> two_state_initial_gain() {
  Matrix<double> F(1, 2);
  F << -1.0, 0.0;
  return F;
}

// Optimal gain of the two-state plant, accurate to the displayed digits.
inline Matrix<double> two_state_optimal_gain() {
  Matrix<double> F(1, 2);
  F << -0.2446, -0.4892;
  return F;
}

}  // namespace slqr::testing
