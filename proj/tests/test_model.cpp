#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "slqr/model.hpp"
#include "support/fixtures.hpp"
#include "support/random_instances.hpp"

using namespace slqr;
using slqr::testing::random_stabilizable_instance;
using Mat = Matrix<double>;
using Vec = Vector<double>;

TEST_SUITE("model") {
  TEST_CASE("spectral radius of the two-state plant matrix is exactly one") {
    const auto sys = testing::two_state_system();
    CHECK(spectral_radius(sys.A) == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("augmented matrix of the scalar plant") {
    const auto sys = testing::scalar_system();
    const Mat A_F = augmented_matrix(sys, testing::scalar_initial_gain());
    Mat expect(2, 2);
    expect << 2, 1, -2, -1;
    CHECK((A_F - expect).cwiseAbs().maxCoeff() <= 1e-15);
  }

  TEST_CASE("augmented matrix shares the nonzero spectrum with A + BF") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int rep = 0; rep < 40; ++rep) {
      const Index n = 1 + static_cast<Index>(rng() % 4);
      const Index m = 1 + static_cast<Index>(rng() % 3);
      LtiSystem<double> sys;
      sys.A.resize(n, n);
      sys.B.resize(n, m);
      sys.noise_cov = Mat::Zero(n, n);
      Mat F(m, n);
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) sys.A(i, j) = gauss(rng);
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < m; ++j) sys.B(i, j) = gauss(rng);
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < n; ++j) F(i, j) = gauss(rng);
      const double lhs = spectral_radius(sys.A + sys.B * F);
      const double rhs = spectral_radius(augmented_matrix(sys, F));
      CHECK(std::abs(lhs - rhs) < 1e-9);
    }
  }

  TEST_CASE("stability predicates on the reference gains") {
    const auto scalar = testing::scalar_system();
    const Mat Fm1 = testing::scalar_initial_gain();
    CHECK_FALSE(is_stabilizing(scalar, Fm1));  // rho = 1 exactly
    CHECK(is_stabilizing(scalar, Fm1, StabilityPolicy::Discounted, 0.7));

    const auto two = testing::two_state_system();
    CHECK(is_stabilizing(two, testing::two_state_initial_gain()));
  }

  TEST_CASE("noiseless simulation satisfies the recursion exactly") {
    const auto sys = testing::two_state_system(0.0);
    Vec x0(2);
    x0 << 1.0, -2.0;
    const Mat F = testing::two_state_initial_gain();
    const auto traj = simulate(sys, feedback_policy(F), x0, 30, 7);
    REQUIRE(traj.states.size() == 31);
    REQUIRE(traj.inputs.size() == 31);
    for (std::size_t k = 0; k + 1 < traj.states.size(); ++k) {
      const Vec pred = sys.A * traj.states[k] + sys.B * traj.inputs[k];
      CHECK((traj.states[k + 1] - pred).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((traj.inputs[k] - F * traj.states[k]).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  TEST_CASE("identical seeds reproduce a noisy trajectory byte for byte") {
    const auto sys = testing::two_state_system(1.0);
    Vec x0(2);
    x0 << 0.3, 0.1;
    const auto p = feedback_policy(testing::two_state_initial_gain());
    const auto t1 = simulate(sys, p, x0, 50, 12345);
    const auto t2 = simulate(sys, p, x0, 50, 12345);
    for (std::size_t k = 0; k < t1.states.size(); ++k) {
      CHECK((t1.states[k].array() == t2.states[k].array()).all());
      CHECK((t1.inputs[k].array() == t2.inputs[k].array()).all());
    }
    const auto t3 = simulate(sys, p, x0, 50, 12346);
    bool identical = true;
    for (std::size_t k = 0; k < t3.states.size(); ++k)
      identical = identical && (t1.states[k].array() == t3.states[k].array()).all();
    CHECK_FALSE(identical);
  }

  TEST_CASE("divergent closed loop raises with the offending step") {
    LtiSystem<double> sys;
    sys.A = 2.0 * Mat::Identity(2, 2);
    sys.B = Mat::Zero(2, 1);
    sys.B(0, 0) = 1.0;  // keep B nonzero so validation passes
    sys.noise_cov = Mat::Zero(2, 2);
    Vec x0(2);
    x0 << 1.0, 1.0;
    const Policy<double> zero = [](Index, const Vec&) { return Vec::Zero(1).eval(); };
    CHECK_THROWS_AS(simulate(sys, zero, x0, 200, 0), DivergenceError);
    try {
      simulate(sys, zero, x0, 200, 0);
    } catch (const DivergenceError& e) {
      CHECK(e.step > 20);
      CHECK(e.step < 40);  // doubling from norm sqrt(2) passes 1e9 near step 30
    }
  }

  TEST_CASE("moment estimates are symmetric and match the start distribution") {
    LtiSystem<double> sys;
    sys.A = Mat::Zero(2, 2);
    sys.B = Mat::Zero(2, 1);
    sys.B(0, 0) = 1.0;
    sys.noise_cov = Mat::Zero(2, 2);
    const Policy<double> zero = [](Index, const Vec&) { return Vec::Zero(1).eval(); };
    const auto est = estimate_moments(sys, zero, standard_normal_sampler<double>(2), 2, 10000, 99);
    REQUIRE(est.Exx.size() == 3);
    CHECK(asymmetry(est.Exx[0]) < 1e-12);
    CHECK(asymmetry(est.Euu[0]) < 1e-12);
    CHECK((est.Exx[0] - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 0.05);
    // A = 0 and u = 0 make every later state identically zero.
    CHECK(est.Exx[1].cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("moment estimation is deterministic in the master seed") {
    const auto sys = testing::two_state_system(1.0);
    const auto p = feedback_policy(testing::two_state_initial_gain());
    const auto a = estimate_moments(sys, p, standard_normal_sampler<double>(2), 5, 20, 7);
    const auto b = estimate_moments(sys, p, standard_normal_sampler<double>(2), 5, 20, 7);
    for (std::size_t k = 0; k < a.Exx.size(); ++k)
      CHECK((a.Exx[k].array() == b.Exx[k].array()).all());
  }

  TEST_CASE("empirical cost of the scalar plant matches the closed form") {
    const auto sys = testing::scalar_system(1.0);
    const auto cost = testing::scalar_cost();
    Vec x0(1);
    x0 << 1.0;
    // Closed form: x0'X x0 + gamma/(1-gamma) tr(X) with X = 20/3, total 200/9.
    const double expect = 200.0 / 9.0;
    const double J = empirical_cost(sys, cost, testing::scalar_initial_gain(), x0, 80, 4000, 31);
    CHECK(std::abs(J - expect) / expect < 0.05);
  }

  TEST_CASE("empirical cost rejects a gain outside the discounted region") {
    const auto sys = testing::scalar_system(1.0);
    const auto cost = testing::scalar_cost();
    Vec x0(1);
    x0 << 1.0;
    const Mat F = Mat::Zero(1, 1);  // closed loop 2, above 1/sqrt(0.7)
    CHECK_THROWS_AS(empirical_cost(sys, cost, F, x0, 10, 2, 0), StabilityError);
  }

  TEST_CASE("gaussian factor reproduces definite and clipped covariances") {
    std::mt19937_64 rng(5);
    const auto inst = random_stabilizable_instance(rng, 4, 2, true);
    const Mat cov = inst.sys.noise_cov;
    const Mat L = gaussian_factor(cov);
    CHECK((L * L.transpose() - cov).cwiseAbs().maxCoeff() < 1e-12);
    // Rank-one covariance goes through the clipping fallback.
    Vec v(3);
    v << 1.0, -2.0, 0.5;
    const Mat rank1 = v * v.transpose();
    const Mat L1 = gaussian_factor(rank1);
    CHECK((L1 * L1.transpose() - rank1).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("default initial pairs for the two-state plant") {
    const auto set = default_initial_pairs<double>(2, 1, 0);
    REQUIRE(set.count() == 3);
    CHECK(set.pairs[0](0) == -1.0);
    CHECK(set.pairs[0](1) == 3.0);
    CHECK(set.pairs[0](2) == -2.0);
    CHECK(set.pairs[2](2) == -8.0);
    Mat expect(3, 3);
    expect << 14.0, -14.0, 16.0, -14.0, 19.0, -25.0, 16.0, -25.0, 93.0;
    expect /= 3.0;
    CHECK((set.gram() - expect).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(min_eigenvalue(set.gram()) > 0.0);
  }

  TEST_CASE("random initial pairs have a definite Gram matrix") {
    const auto set = default_initial_pairs<double>(3, 2, 77);
    REQUIRE(set.count() == 5);
    CHECK(min_eigenvalue(set.gram()) > 1e-6);
  }

  TEST_CASE("validation rejects malformed problem data") {
    auto sys = testing::two_state_system();
    sys.noise_cov(0, 1) = 0.5;  // asymmetric
    CHECK_THROWS_AS(sys.validate(), DimensionError);

    auto cost = testing::two_state_cost();
    cost.gamma = 1.2;
    CHECK_THROWS_AS(cost.validate(2, 1), ConfigError);

    auto cost2 = testing::two_state_cost();
    cost2.R(0, 0) = 0.0;
    CHECK_THROWS_AS(cost2.validate(2, 1), DimensionError);
  }

  TEST_CASE("stage weight stacks Q and R block-diagonally") {
    const auto cost = testing::two_state_cost();
    const Mat L = cost.stage_weight();
    REQUIRE(L.rows() == 3);
    CHECK(L(0, 0) == 1.0);
    CHECK(L(1, 1) == 1.0);
    CHECK(L(2, 2) == 1.0);
    CHECK(L.cwiseAbs().sum() == 3.0);
  }
}
