#pragma once

// The reference four-bar linkage and the inverse-dynamics reference curve.

#include <cmath>
#include <numbers>

#include "mbfg/system.hpp"

namespace mbfg {

/// Crank A-P1 (L=1, m=1, rotating about A, angle theta), coupler P1-P2
/// (L=2, m=2), rocker P2-D (L=sqrt(13), m=4); A=(0,0), D=(4,0).
/// q = (x1, y1, x2, y2, theta), z = (theta).
inline MechanismDef make_fourbar() {
  MechanismDef m;
  m.points = {
      {"A", true, Vector2(0.0, 0.0)},
      {"P1", false, Vector2(1.0, 0.0)},
      {"P2", false, Vector2(1.0, 2.0)},
      {"D", true, Vector2(4.0, 0.0)},
  };
  m.bodies = {
      {"crank", "A", "P1", 1.0, 1.0, InertiaModel::RotationalOnRelativeCoord},
      {"coupler", "P1", "P2", 2.0, 2.0, InertiaModel::UniformRod},
      {"rocker", "P2", "D", std::sqrt(13.0), 4.0, InertiaModel::UniformRod},
  };
  m.relative_coords = {{"theta", RelativeCoordKind::AbsoluteAngle, "crank", std::nullopt, true, 0.0}};
  m.dof_idxs = {4};
  m.gravity = kDefaultGravity;
  return m;
}

/// theta_ref(t) = pi/4 (1 - cos(2 pi t / 5)).
inline double reference_crank_angle(double t) {
  return 0.25 * std::numbers::pi * (1.0 - std::cos(2.0 * std::numbers::pi * t / 5.0));
}

}  // namespace mbfg
