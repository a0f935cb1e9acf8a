#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "test_support.hpp"

using namespace mbfg;
using mbfg::test::Rng;

namespace {

MechanismDef free_rod(double mass, InertiaModel model = InertiaModel::UniformRod) {
  MechanismDef m;
  m.points = {{"I", false, Vector2(0.0, 0.0)}, {"J", false, Vector2(1.0, 0.0)}};
  m.bodies = {{"rod", "I", "J", 1.0, mass, model}};
  return m;
}

}  // namespace

TEST(Layout, FourbarOrderingAndCounts) {
  const auto def = make_fourbar();
  const auto layout = build_layout(def);
  EXPECT_EQ(layout.n, 5);
  EXPECT_EQ(layout.m, 4);
  EXPECT_EQ(layout.dofs(), 1);
  EXPECT_EQ(layout.point_slot.at("P1"), 0);
  EXPECT_EQ(layout.point_slot.at("P2"), 2);
  EXPECT_EQ(layout.relative_slot.at("theta"), 4);
  EXPECT_EQ(layout.slot_names, (std::vector<std::string>{"P1.x", "P1.y", "P2.x", "P2.y", "theta"}));
}

TEST(Layout, DofCountMustMatchFreedom) {
  auto def = make_fourbar();
  def.dof_idxs = {0, 4};
  EXPECT_THROW(build_layout(def), ConfigurationError);
  def.dof_idxs = {5};
  EXPECT_THROW(build_layout(def), ConfigurationError);
  def.dof_idxs = {4, 4};
  EXPECT_THROW(build_layout(def), ConfigurationError);
}

TEST(Layout, ValidationRejectsBrokenDescriptions) {
  auto dup = make_fourbar();
  dup.points.push_back({"A", true, Vector2(1.0, 1.0)});
  EXPECT_THROW(build_layout(dup), ConfigurationError);

  auto dangling = make_fourbar();
  dangling.bodies[1].point_j = "nowhere";
  EXPECT_THROW(build_layout(dangling), ConfigurationError);

  auto zero_len = make_fourbar();
  zero_len.bodies[0].length = 0.0;
  EXPECT_THROW(build_layout(zero_len), ConfigurationError);

  auto neg_mass = make_fourbar();
  neg_mass.bodies[2].mass = -1.0;
  EXPECT_THROW(build_layout(neg_mass), ConfigurationError);

  auto no_xy = make_fourbar();
  no_xy.points[0].xy.reset();
  EXPECT_THROW(build_layout(no_xy), ConfigurationError);

  // Rotational inertia needs exactly one fixed endpoint.
  auto both_mobile = make_fourbar();
  both_mobile.bodies[1].inertia_model = InertiaModel::RotationalOnRelativeCoord;
  both_mobile.relative_coords.push_back(
      {"phi", RelativeCoordKind::AbsoluteAngle, "coupler", std::nullopt, false, 0.0});
  EXPECT_THROW(build_layout(both_mobile), ConfigurationError);
}

TEST(Layout, DofOnGroundedBodyIsRejected) {
  auto def = make_fourbar();
  def.points.push_back({"G", true, Vector2(5.0, 0.0)});
  def.bodies.push_back({"ground", "D", "G", 1.0, 0.0, InertiaModel::UniformRod});
  def.relative_coords.push_back({"g", RelativeCoordKind::AbsoluteAngle, "ground", std::nullopt, false, 0.0});
  def.dof_idxs = {5};
  EXPECT_THROW(build_layout(def), ConfigurationError);
}

TEST(MassMatrix, FreeUniformRodBlock) {
  const auto def = free_rod(6.0);
  const Matrix M = assemble_mass_matrix(def, build_layout(def));
  Matrix expected(4, 4);
  expected << 2, 0, 1, 0, 0, 2, 0, 1, 1, 0, 2, 0, 0, 1, 0, 2;
  EXPECT_LT((M - expected).norm(), 1e-14);
}

TEST(MassMatrix, FixedEndRodBlock) {
  MechanismDef def;
  def.points = {{"O", true, Vector2(0.0, 0.0)}, {"P", false, Vector2(1.0, 0.0)}};
  def.bodies = {{"rod", "O", "P", 1.0, 3.0, InertiaModel::UniformRod}};
  const Matrix M = assemble_mass_matrix(def, build_layout(def));
  EXPECT_LT((M - Matrix::Identity(2, 2)).norm(), 1e-14);
}

TEST(MassMatrix, Fourbar) {
  const auto def = make_fourbar();
  const Matrix M = assemble_mass_matrix(def, build_layout(def));
  Matrix expected = Matrix::Zero(5, 5);
  expected(0, 0) = expected(1, 1) = 2.0 / 3.0;
  expected(0, 2) = expected(2, 0) = expected(1, 3) = expected(3, 1) = 1.0 / 3.0;
  expected(2, 2) = expected(3, 3) = 2.0;
  expected(4, 4) = 1.0 / 3.0;
  EXPECT_LT((M - expected).norm(), 1e-14);
}

TEST(MassMatrix, UnassignedRelativeCoordinateIsRegularized) {
  auto def = make_fourbar();
  def.bodies[0].inertia_model = InertiaModel::UniformRod;
  const auto layout = build_layout(def);
  const Matrix M = assemble_mass_matrix(def, layout);
  EXPECT_DOUBLE_EQ(M(4, 4), kMassRegularization);
  // The crank's rod inertia now lands on P1.
  EXPECT_NEAR(M(0, 0), 1.0 / 3.0 + 2.0 / 3.0, 1e-14);
}

TEST(MassMatrix, MasslessPointIsConfigurationError) {
  const auto def = free_rod(0.0);
  EXPECT_THROW(assemble_mass_matrix(def, build_layout(def)), ConfigurationError);
}

TEST(MassMatrix, SymmetricPositiveDefiniteAcrossMechanisms) {
  for (const auto& def : {make_fourbar(), test::slider_crank(), test::pendulum(), free_rod(2.0),
                          free_rod(2.0, InertiaModel::PointMassesAtEnds)}) {
    const Matrix M = assemble_mass_matrix(def, build_layout(def));
    EXPECT_LT((M - M.transpose()).norm(), 1e-15);
    Eigen::SelfAdjointEigenSolver<Matrix> es(M);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
  }
}

TEST(MassMatrix, KineticEnergyMatchesPointMassDiscretization) {
  Rng rng(7);
  for (const auto& def : {make_fourbar(), test::slider_crank(), free_rod(6.0),
                          free_rod(2.0, InertiaModel::PointMassesAtEnds)}) {
    const auto layout = build_layout(def);
    const Matrix M = assemble_mass_matrix(def, layout);
    for (int trial = 0; trial < 100; ++trial) {
      const Vector q = rng.vec(layout.n, 3.0);
      const Vector dq = rng.vec(layout.n, 2.0);
      const double T_lib = kinetic_energy(M, dq);
      const double T_ref = test::discretized_kinetic_energy(def, layout, q, dq);
      EXPECT_NEAR(T_lib, T_ref, 1e-6 * std::max(1.0, std::abs(T_ref)));
    }
  }
}

TEST(Gravity, FreeRodNodalLoads) {
  const auto def = free_rod(2.0);
  const auto layout = build_layout(def);
  const Vector F = assemble_gravity_forces(def, layout, 9.8, Vector::Zero(4));
  Vector expected(4);
  expected << 0.0, -9.8, 0.0, -9.8;
  EXPECT_LT((F - expected).norm(), 1e-14);
  EXPECT_EQ(assemble_gravity_forces(def, layout, 0.0, Vector::Zero(4)), Vector::Zero(4));
}

TEST(Gravity, FourbarAtZeroAngle) {
  const auto def = make_fourbar();
  const auto layout = build_layout(def);
  Vector q(5);
  q << 1, 0, 1, 2, 0;
  const Vector F = assemble_gravity_forces(def, layout, 9.8, q);
  Vector expected(5);
  expected << 0.0, -9.8, 0.0, -29.4, -4.9;
  EXPECT_LT((F - expected).norm(), 1e-12);
}

TEST(Gravity, IsNegativeGradientOfPotential) {
  Rng rng(11);
  for (const auto& def : {make_fourbar(), test::slider_crank(), free_rod(2.0)}) {
    const auto layout = build_layout(def);
    for (int trial = 0; trial < 50; ++trial) {
      const Vector q = rng.vec(layout.n, 3.0);
      const Vector F = assemble_gravity_forces(def, layout, def.gravity, q);
      for (int i = 0; i < layout.n; ++i) {
        const double h = 1e-4;
        Vector qp = q, qm = q;
        qp[i] += h;
        qm[i] -= h;
        const double dV = (test::independent_potential(def, layout, qp) -
                           test::independent_potential(def, layout, qm)) / (2 * h);
        EXPECT_NEAR(F[i], -dV, 1e-6);
      }
      EXPECT_NEAR(potential_energy(def, layout, def.gravity, q),
                  test::independent_potential(def, layout, q), 1e-12);
    }
  }
}

TEST(Dofs, PackAndScatter) {
  Vector q(5);
  q << 1, 0, 1, 2, 0;
  const std::vector<int> theta{4};
  EXPECT_EQ(pack_dofs(q, theta), Vector::Zero(1));
  EXPECT_EQ(pack_dofs(q, std::vector<int>{}).size(), 0);
  Vector abc(3);
  abc << 7, 8, 9;
  const Vector z = pack_dofs(abc, std::vector<int>{2, 0});
  EXPECT_EQ(z, Eigen::Vector2d(9, 7));
  EXPECT_THROW(pack_dofs(abc, std::vector<int>{3}), DimensionMismatchError);
  EXPECT_THROW(pack_dofs(abc, std::vector<int>{-1}), DimensionMismatchError);
}

TEST(Dofs, ScatterPackRoundTripProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = rng.integer(1, 8);
    std::vector<int> idxs(static_cast<std::size_t>(n));
    std::iota(idxs.begin(), idxs.end(), 0);
    std::shuffle(idxs.begin(), idxs.end(), rng.engine());
    idxs.resize(static_cast<std::size_t>(rng.integer(0, n)));
    const Vector q = rng.vec(n, 5.0);
    const Vector z = rng.vec(static_cast<int>(idxs.size()), 5.0);
    const Vector q2 = scatter_dofs(q, idxs, z);
    EXPECT_EQ(pack_dofs(q2, idxs), z);
    EXPECT_EQ(scatter_dofs(q2, idxs, pack_dofs(q, idxs)), q);
  }
}
