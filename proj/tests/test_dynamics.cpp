#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace mbfg;
using mbfg::test::Rng;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

// Kinematics carrying an arbitrary dense Phi_q (n <= 6) and c.
AssembledKinematics synthetic_kinematics(const Matrix& Phi_q, const Vector& c) {
  AssembledKinematics kin;
  kin.n = static_cast<int>(Phi_q.cols());
  kin.phi = Vector::Zero(Phi_q.rows());
  kin.b = Vector::Zero(Phi_q.rows());
  kin.c = c;
  for (Eigen::Index r = 0; r < Phi_q.rows(); ++r) {
    SparseRow row;
    for (Eigen::Index j = 0; j < Phi_q.cols(); ++j) row.add(static_cast<int>(j), Phi_q(r, j));
    kin.phi_q.push_back(row);
  }
  kin.dphi_q = kin.phiqq_v = kin.dphiqq_dq = std::vector<SparseRow>(kin.phi_q.size());
  return kin;
}

// Augmented system solved directly with a dense LU.
std::pair<Vector, Vector> dense_augmented_solve(const Matrix& M, const Matrix& A, const Vector& F,
                                                const Vector& c) {
  const auto n = M.rows(), m = A.rows();
  Matrix K = Matrix::Zero(n + m, n + m);
  K.topLeftCorner(n, n) = M;
  K.topRightCorner(n, m) = A.transpose();
  K.bottomLeftCorner(m, n) = A;
  Vector rhs(n + m);
  rhs << F, c;
  const Vector x = K.partialPivLu().solve(rhs);
  return {x.head(n), x.tail(m)};
}

MechanismPtr pendulum_system() { return make_system(test::pendulum(2.0, 1.0)); }

}  // namespace

TEST(DepAccel, PendulumAtRest) {
  const auto sys = pendulum_system();
  const auto kin = sys->kinematics(vec({2, 0}), vec({0, 0}));
  const auto r = forward_accel_dep(Matrix::Identity(2, 2), kin, vec({0, -9.8}));
  EXPECT_LT((r.ddq - vec({0, -9.8})).norm(), 1e-12);
  const auto [ddq, lambda] = dense_augmented_solve(Matrix::Identity(2, 2), kin.Phi_q(), vec({0, -9.8}), kin.c);
  EXPECT_LT((r.ddq - ddq).norm(), 1e-12);
}

TEST(DepAccel, PendulumCentripetal) {
  const auto sys = pendulum_system();
  const auto kin = sys->kinematics(vec({2, 0}), vec({0, 1}));
  const auto r = forward_accel_dep(Matrix::Identity(2, 2), kin, vec({0, -9.8}));
  EXPECT_LT((r.ddq - vec({-0.5, -9.8})).norm(), 1e-12);
  const auto [ddq, lambda] = dense_augmented_solve(Matrix::Identity(2, 2), kin.Phi_q(), vec({0, -9.8}), kin.c);
  EXPECT_LT((r.ddq - ddq).norm(), 1e-12);
}

TEST(DepAccel, UnconstrainedParticle) {
  const AssembledKinematics kin = synthetic_kinematics(Matrix(0, 2), Vector(0));
  Matrix M(2, 2);
  M << 2, 0, 0, 4;
  const auto r = forward_accel_dep(M, kin, vec({1, 1}));
  EXPECT_LT((r.ddq - vec({0.5, 0.25})).norm(), 1e-15);
}

TEST(DepAccel, ClosedFormMatchesAugmentedSolve) {
  Rng rng(100);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng.integer(2, 6);
    const int m = rng.integer(1, n - 1);
    const Matrix M = rng.spd(n);
    const Matrix A = rng.mat(m, n, 1.0);
    const Vector F = rng.vec(n, 10.0), c = rng.vec(m, 5.0);
    const auto r = forward_accel_dep(M, synthetic_kinematics(A, c), F, true);
    const auto [ddq, lambda] = dense_augmented_solve(M, A, F, c);
    EXPECT_LE((r.ddq - ddq).norm(), 1e-10 * std::max(1.0, ddq.norm()));
    EXPECT_LE((*r.lambda - lambda).norm(), 1e-10 * std::max(1.0, lambda.norm()));
    // Multipliers close the dynamic balance.
    EXPECT_LT((M * r.ddq + A.transpose() * *r.lambda - F).norm(), 1e-9);
    // Gamma is symmetric positive definite.
    EXPECT_LT((r.Gamma - r.Gamma.transpose()).norm(), 1e-12);
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<Matrix>(r.Gamma).eigenvalues().minCoeff(), 0.0);
  }
}

TEST(DepAccel, RankDeficientJacobianNamesPivot) {
  // Distance |P| = 2 and a slider along y = 2 are tangent at P = (0, 2).
  ConstraintBlock circle;
  circle.kind = ConstraintKind::ConstantDistance;
  circle.points[0] = PointRef{-1, Vector2::Zero()};
  circle.points[1] = PointRef{0, Vector2::Zero()};
  circle.length = 2.0;
  ConstraintBlock line;
  line.kind = ConstraintKind::FixedPinnedSlider;
  line.points[0] = PointRef{0, Vector2::Zero()};
  line.line_a = Vector2(0, 2);
  line.line_b = Vector2(1, 2);
  const std::vector<ConstraintBlock> blocks = {circle, line};
  const auto kin = assemble_unchecked(blocks, 2, vec({0, 2}), vec({0, 0}), Vector());
  try {
    forward_accel_dep(Matrix::Identity(2, 2), kin, vec({0, -9.8}));
    FAIL() << "expected a singular configuration";
  } catch (const SingularConfigurationError& e) {
    EXPECT_GE(e.pivot(), 0);
    EXPECT_LT(e.pivot(), 2);
  }
}

TEST(VelocityMap, PendulumAndFourbar) {
  const auto pend = pendulum_system();
  const auto vp = compute_R(pend->kinematics(vec({2, 0})), pend->layout());
  EXPECT_LT((vp.R() - Matrix(vec({0, 1}))).norm(), 1e-15);

  const auto fb = make_system(make_fourbar());
  const auto kin = fb->kinematics(vec({1, 0, 1, 2, 0}));
  const auto vm = compute_R(kin, fb->layout());
  EXPECT_LT((vm.R() - Matrix(vec({0, 1, 2.0 / 3.0, 1, 1}))).norm(), 1e-14);
  EXPECT_LT((kin.Phi_q() * vm.R()).norm(), 1e-10);
  EXPECT_NEAR(vm.R()(4, 0), 1.0, 1e-15);
}

TEST(VelocityMap, NoConstraintsGivesIdentity) {
  CoordinateLayout layout;
  layout.n = 3;
  layout.dof_idxs = {0, 1, 2};
  const auto vm = compute_R(synthetic_kinematics(Matrix(0, 3), Vector(0)), layout);
  EXPECT_EQ(vm.R(), Matrix::Identity(3, 3));
}

TEST(VelocityMap, BadDofChoice) {
  // z = y cannot parameterize the pendulum at the top of the circle.
  const auto sys = pendulum_system();
  EXPECT_THROW(compute_R(sys->kinematics(vec({0, 2})), sys->layout()), BadDofChoiceError);
}

TEST(VelocityMap, NullspaceAndSelectionProperties) {
  const auto sys = make_system(make_fourbar());
  StateSampler sampler(sys, 31);
  for (int t = 0; t < 200; ++t) {
    const Vector q = sampler.q();
    const auto kin = sys->kinematics(q);
    const auto vm = compute_R(kin, sys->layout());
    EXPECT_LT((kin.Phi_q() * vm.R()).norm(), 1e-10);
    EXPECT_NEAR(vm.R()(4, 0), 1.0, 1e-12);
    // S w solves the constraint rows with zero dof component.
    const Vector w = sampler.random_vector(4, 1.0);
    const Vector Sw = vm.apply_S(w);
    EXPECT_LT((kin.Phi_q() * Sw - w).norm(), 1e-10);
    EXPECT_NEAR(Sw[4], 0.0, 1e-12);
  }
}

TEST(IndepAccel, Pendulum) {
  auto def = test::pendulum(2.0, 2.0);
  const auto sys = make_system(def);
  const Vector q = vec({2, 0}), dq = vec({0, 0});
  const auto r = sys->accel_indep(q, dq, sys->gravity_forces(q));
  // Two point masses of 1 kg, one of them on the fixed pivot.
  EXPECT_NEAR(r.ddz[0], -9.8, 1e-12);
  EXPECT_NEAR(r.Mbar(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(r.Qbar[0], -9.8, 1e-12);
}

TEST(IndepAccel, FourbarAtRest) {
  const auto sys = make_system(make_fourbar());
  const Vector q = vec({1, 0, 1, 2, 0}), dq = Vector::Zero(5);
  const Vector F = sys->gravity_forces(q);
  const auto r = sys->accel_indep(q, dq, F);
  const Vector R = vec({0, 1, 2.0 / 3.0, 1, 1});
  EXPECT_NEAR(R.dot(F), -44.1, 1e-12);
  const double Mbar = R.dot(sys->mass_matrix() * R);
  EXPECT_NEAR(r.ddz[0], -44.1 / Mbar, 1e-12);
  EXPECT_NEAR(r.ddz[0], sys->accel_dep(q, dq, F).ddq[4], 1e-10);
}

TEST(IndepAccel, ReconstructionMatchesDependentFormulation) {
  for (const auto& def : {make_fourbar(), test::slider_crank()}) {
    const auto sys = make_system(def);
    StateSampler sampler(sys, 77);
    for (int t = 0; t < 200; ++t) {
      const Vector q = sampler.q();
      const Vector dq = sampler.dq(q);
      const Vector F = sys->gravity_forces(q) + sampler.random_vector(sys->n(), 10.0);
      const auto dep = sys->accel_dep(q, dq, F);
      const auto ind = sys->accel_indep(q, dq, F);
      const Vector rebuilt = ind.R * ind.ddz + ind.S_times_c;
      EXPECT_LT((rebuilt - dep.ddq).lpNorm<Eigen::Infinity>(), 1e-8);
      // Acceleration-level constraint: dot(Phi_q) dq + Phi_q ddq = 0.
      const auto kin = sys->kinematics(q, dq);
      EXPECT_LT((kin.dPhi_q() * dq + kin.Phi_q() * dep.ddq).lpNorm<Eigen::Infinity>(), 1e-9);
      EXPECT_LT((kin.dPhi_q() * dq + kin.Phi_q() * rebuilt).lpNorm<Eigen::Infinity>(), 1e-9);
    }
  }
}

TEST(PositionProblem, FourbarFromPerturbedGuess) {
  const auto sys = make_system(make_fourbar());
  const std::vector<int> lock{4};
  const auto r = solve_position_problem(sys->blocks(), sys->layout(), vec({0.9, 0.1, 1.2, 1.8, 0}),
                                        lock, vec({0}));
  EXPECT_LT((r.q - vec({1, 0, 1, 2, 0})).norm(), 1e-12);
  EXPECT_LT(sys->phi(r.q).lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(PositionProblem, OnManifoldGuessIsReturnedUnchanged) {
  const auto sys = make_system(make_fourbar());
  const std::vector<int> lock{4};
  const Vector q0 = vec({1, 0, 1, 2, 0});
  const auto r = solve_position_problem(sys->blocks(), sys->layout(), q0, lock, vec({0}));
  EXPECT_LE(r.iterations, 1);
  EXPECT_LT((r.q - q0).norm(), 1e-15);
}

TEST(PositionProblem, InfeasibleGeometryFails) {
  auto def = make_fourbar();
  def.bodies[2].length = 1.5;  // rocker cannot reach once the crank points away
  const auto sys = make_system(def);
  const std::vector<int> lock{4};
  EXPECT_THROW(solve_position_problem(sys->blocks(), sys->layout(), vec({-1, 0, 1, 2, 3.14159}), lock,
                                      vec({std::numbers::pi})),
               PositionProblemDiverged);
}

TEST(PositionProblem, LockedValuesAreHonored) {
  const auto sys = make_system(make_fourbar());
  Vector q = vec({1, 0, 1, 2, 0});
  for (double th = 0.0; th < 1.5; th += 0.1) {
    q = sys->assemble_at(q, vec({th}));
    EXPECT_DOUBLE_EQ(q[4], th);
    EXPECT_LT(sys->phi(q).lpNorm<Eigen::Infinity>(), 1e-12);
  }
}

TEST(VelocityProblem, Examples) {
  const auto pend = pendulum_system();
  const auto kp = pend->kinematics(vec({2, 0}));
  EXPECT_EQ(solve_velocity_problem(kp, pend->layout(), vec({0})), Vector::Zero(2));
  EXPECT_LT((solve_velocity_problem(kp, pend->layout(), vec({1})) - vec({0, 1})).norm(), 1e-15);

  const auto fb = make_system(make_fourbar());
  const auto kin = fb->kinematics(vec({1, 0, 1, 2, 0}));
  const Vector dq = solve_velocity_problem(kin, fb->layout(), vec({1}));
  EXPECT_LT((dq - vec({0, 1, 2.0 / 3.0, 1, 1})).norm(), 1e-14);
  EXPECT_LT((kin.Phi_q() * dq).norm(), 1e-12);
}
