#pragma once

#include <memory>

#include "mbfg/dynamics.hpp"

namespace mbfg {

/// A validated mechanism with its layout, constraint blocks and constant mass
/// matrix. Immutable; share it through MechanismPtr.
class MechanismSystem {
 public:
  explicit MechanismSystem(MechanismDef def)
      : def_(std::move(def)),
        layout_(build_layout(def_)),
        blocks_(build_blocks(def_, layout_)),
        M_(assemble_mass_matrix(def_, layout_)) {}

  const MechanismDef& def() const { return def_; }
  const CoordinateLayout& layout() const { return layout_; }
  const std::vector<ConstraintBlock>& blocks() const { return blocks_; }
  const Matrix& mass_matrix() const { return M_; }
  int n() const { return layout_.n; }
  int m() const { return layout_.m; }
  int d() const { return layout_.d(); }
  double gravity() const { return def_.gravity; }

  Vector gravity_forces(const Vector& q) const {
    return assemble_gravity_forces(def_, layout_, def_.gravity, q);
  }
  double potential_energy(const Vector& q) const {
    return mbfg::potential_energy(def_, layout_, def_.gravity, q);
  }
  double energy(const Vector& q, const Vector& dq) const {
    return kinetic_energy(M_, dq) + potential_energy(q);
  }

  AssembledKinematics kinematics(const Vector& q, const Vector& dq = Vector(),
                                 const Vector& v = Vector()) const {
    return assemble_unchecked(blocks_, layout_.n, q, dq, v);
  }
  Vector phi(const Vector& q) const { return kinematics(q).phi; }

  /// ddq for total generalized force `F`.
  DepDynResult accel_dep(const Vector& q, const Vector& dq, const Vector& F,
                         bool with_lambda = false) const {
    return forward_accel_dep(M_, kinematics(q, dq), F, with_lambda);
  }
  IndepDynResult accel_indep(const Vector& q, const Vector& dq, const Vector& F) const {
    return forward_accel_indep(M_, kinematics(q, dq), layout_, F);
  }

  /// Solves the position problem locking the dof coordinates to `z`.
  Vector assemble_at(const Vector& q_guess, const Vector& z) const {
    return solve_position_problem(blocks_, layout_, q_guess, layout_.dof_idxs, z).q;
  }
  Vector initial_guess() const { return mbfg::initial_guess(def_, layout_); }

 private:
  MechanismDef def_;
  CoordinateLayout layout_;
  std::vector<ConstraintBlock> blocks_;
  Matrix M_;
};

using MechanismPtr = std::shared_ptr<const MechanismSystem>;

inline MechanismPtr make_system(MechanismDef def) {
  return std::make_shared<const MechanismSystem>(std::move(def));
}

}  // namespace mbfg
