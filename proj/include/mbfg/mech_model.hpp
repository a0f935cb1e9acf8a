#pragma once

// Planar mechanism description in natural coordinates: points, rigid bodies,
// relative coordinates, and the constant mass matrix / gravity loads that the
// rest of the library consumes.

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mbfg/errors.hpp"

namespace mbfg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Vector2 = Eigen::Vector2d;

inline constexpr double kDefaultGravity = 9.8;
/// Diagonal inertia given to relative coordinates that carry no body inertia.
inline constexpr double kMassRegularization = 1e-8;

enum class InertiaModel { UniformRod, PointMassesAtEnds, RotationalOnRelativeCoord };
enum class RelativeCoordKind { AbsoluteAngle };
enum class ConstraintKind {
  ConstantDistance,
  FixedPinnedSlider,
  MobilePinnedSlider,
  AbsoluteAngle
};

struct PointDef {
  std::string id;
  bool fixed = false;
  /// Location for fixed points. For mobile points this is only an assembly
  /// guess; the actual coordinates live in q.
  std::optional<Vector2> xy;

  bool operator==(const PointDef&) const = default;
};

struct BodyDef {
  std::string id;
  std::string point_i;
  std::string point_j;
  double length = 0.0;  // m
  double mass = 0.0;    // kg
  InertiaModel inertia_model = InertiaModel::UniformRod;

  bool operator==(const BodyDef&) const = default;
};

struct RelativeCoordDef {
  std::string id;
  RelativeCoordKind kind = RelativeCoordKind::AbsoluteAngle;
  std::string body;
  /// kg m^2 about the pivot; defaults to m L^2 / 3 when the attached body uses
  /// InertiaModel::RotationalOnRelativeCoord.
  std::optional<double> inertia_about_pivot;
  bool applied_torque_slot = false;
  double initial_value = 0.0;  // rad, assembly guess

  bool operator==(const RelativeCoordDef&) const = default;
};

/// Explicitly listed constraint. Bodies and relative coordinates generate
/// their own constant-distance / absolute-angle rows; these are extra.
///   constant-distance:    points = {i, j}, length
///   fixed-pinned-slider:  points = {p}, line_a, line_b
///   mobile-pinned-slider: points = {p, i, j}
struct ConstraintDef {
  ConstraintKind kind = ConstraintKind::ConstantDistance;
  std::vector<std::string> points;
  double length = 0.0;
  Vector2 line_a = Vector2::Zero();
  Vector2 line_b = Vector2::Zero();

  bool operator==(const ConstraintDef&) const = default;
};

struct MechanismDef {
  std::vector<PointDef> points;
  std::vector<BodyDef> bodies;
  std::vector<RelativeCoordDef> relative_coords;
  std::vector<ConstraintDef> constraints;
  std::vector<int> dof_idxs;
  double gravity = kDefaultGravity;  // m/s^2 along -y

  bool operator==(const MechanismDef&) const = default;

  const PointDef& point(const std::string& id) const {
    for (const auto& p : points)
      if (p.id == id) return p;
    throw ConfigurationError("unknown point '" + id + "'");
  }
  const BodyDef& body(const std::string& id) const {
    for (const auto& b : bodies)
      if (b.id == id) return b;
    throw ConfigurationError("unknown body '" + id + "'");
  }
};

struct CoordinateLayout {
  int n = 0;  // dependent coordinates
  int m = 0;  // scalar constraints
  std::map<std::string, int> point_slot;     // index of x; y is at +1
  std::map<std::string, int> relative_slot;  // one slot per relative coord
  std::vector<int> dof_idxs;
  std::vector<std::string> slot_names;

  int dofs() const { return n - m; }
  int d() const { return static_cast<int>(dof_idxs.size()); }
};

inline const char* to_string(InertiaModel m) {
  switch (m) {
    case InertiaModel::UniformRod: return "uniform-rod";
    case InertiaModel::PointMassesAtEnds: return "point-masses-at-ends";
    case InertiaModel::RotationalOnRelativeCoord: return "rotational-on-relative-coord";
  }
  return "?";
}

inline const char* to_string(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::ConstantDistance: return "constant-distance";
    case ConstraintKind::FixedPinnedSlider: return "fixed-pinned-slider";
    case ConstraintKind::MobilePinnedSlider: return "mobile-pinned-slider";
    case ConstraintKind::AbsoluteAngle: return "absolute-angle";
  }
  return "?";
}

namespace detail {

inline bool body_generates_distance_row(const MechanismDef& mech, const BodyDef& b) {
  return !(mech.point(b.point_i).fixed && mech.point(b.point_j).fixed);
}

inline const RelativeCoordDef* relative_coord_on(const MechanismDef& mech,
                                                 const std::string& body) {
  for (const auto& r : mech.relative_coords)
    if (r.body == body) return &r;
  return nullptr;
}

}  // namespace detail

/// Number of scalar constraint rows generated for `mech`.
inline int count_constraints(const MechanismDef& mech) {
  int m = 0;
  for (const auto& b : mech.bodies)
    if (detail::body_generates_distance_row(mech, b)) ++m;
  m += static_cast<int>(mech.relative_coords.size());
  m += static_cast<int>(mech.constraints.size());
  return m;
}

/// Structural validation: unique ids, resolvable references, positive
/// lengths, inertia assignment rules.
inline void validate(const MechanismDef& mech) {
  std::set<std::string> ids;
  for (const auto& p : mech.points) {
    if (p.id.empty()) throw ConfigurationError("point with empty id");
    if (!ids.insert(p.id).second)
      throw ConfigurationError("duplicate point id '" + p.id + "'");
    if (p.fixed && !p.xy)
      throw ConfigurationError("fixed point '" + p.id + "' has no coordinates");
  }
  std::set<std::string> body_ids;
  for (const auto& b : mech.bodies) {
    if (!body_ids.insert(b.id).second)
      throw ConfigurationError("duplicate body id '" + b.id + "'");
    if (!ids.count(b.point_i) || !ids.count(b.point_j))
      throw ConfigurationError("body '" + b.id + "' references an unknown point");
    if (b.point_i == b.point_j)
      throw ConfigurationError("body '" + b.id + "' has coincident endpoints");
    if (!(b.length > 0.0))
      throw ConfigurationError("body '" + b.id + "' must have length > 0");
    if (!(b.mass >= 0.0))
      throw ConfigurationError("body '" + b.id + "' must have mass >= 0");
    const auto* rc = detail::relative_coord_on(mech, b.id);
    if (b.inertia_model == InertiaModel::RotationalOnRelativeCoord) {
      if (!rc)
        throw ConfigurationError("body '" + b.id +
                                 "' puts its inertia on a relative coordinate but "
                                 "none is attached");
      const bool fi = mech.point(b.point_i).fixed;
      const bool fj = mech.point(b.point_j).fixed;
      if (fi == fj)
        throw ConfigurationError("body '" + b.id +
                                 "' needs exactly one fixed endpoint (the pivot) to "
                                 "carry rotational inertia");
    }
  }
  std::set<std::string> rel_ids;
  for (const auto& r : mech.relative_coords) {
    if (ids.count(r.id) || !rel_ids.insert(r.id).second)
      throw ConfigurationError("duplicate relative coordinate id '" + r.id + "'");
    if (!body_ids.count(r.body))
      throw ConfigurationError("relative coordinate '" + r.id +
                               "' references unknown body '" + r.body + "'");
    for (const auto& other : mech.relative_coords)
      if (&other != &r && other.body == r.body)
        throw ConfigurationError("body '" + r.body +
                                 "' has more than one relative coordinate");
  }
  for (std::size_t k = 0; k < mech.constraints.size(); ++k) {
    const auto& c = mech.constraints[k];
    std::size_t expected = 0;
    switch (c.kind) {
      case ConstraintKind::ConstantDistance: expected = 2; break;
      case ConstraintKind::FixedPinnedSlider: expected = 1; break;
      case ConstraintKind::MobilePinnedSlider: expected = 3; break;
      case ConstraintKind::AbsoluteAngle:
        throw ConfigurationError(
            "absolute-angle rows are generated from relative_coords");
    }
    if (c.points.size() != expected)
      throw ConfigurationError("constraint #" + std::to_string(k) + " (" +
                               to_string(c.kind) + ") expects " +
                               std::to_string(expected) + " points");
    std::set<std::string> distinct;
    for (const auto& p : c.points) {
      if (!ids.count(p))
        throw ConfigurationError("constraint #" + std::to_string(k) +
                                 " references unknown point '" + p + "'");
      distinct.insert(p);
    }
    if (distinct.size() != c.points.size())
      throw ConfigurationError("constraint #" + std::to_string(k) +
                               " repeats a point");
    if (c.kind == ConstraintKind::ConstantDistance && !(c.length > 0.0))
      throw ConfigurationError("constraint #" + std::to_string(k) +
                               " must have length > 0");
    if (c.kind == ConstraintKind::FixedPinnedSlider && (c.line_b - c.line_a).norm() == 0.0)
      throw ConfigurationError("constraint #" + std::to_string(k) +
                               " has a degenerate slider line");
  }
}

/// Mobile points first in declaration order (x then y), relative coordinates
/// after. `m` is the number of scalar constraints.
inline CoordinateLayout build_layout(const MechanismDef& mech) {
  validate(mech);
  CoordinateLayout layout;
  int slot = 0;
  for (const auto& p : mech.points) {
    if (p.fixed) continue;
    layout.point_slot[p.id] = slot;
    layout.slot_names.push_back(p.id + ".x");
    layout.slot_names.push_back(p.id + ".y");
    slot += 2;
  }
  for (const auto& r : mech.relative_coords) {
    layout.relative_slot[r.id] = slot++;
    layout.slot_names.push_back(r.id);
  }
  layout.n = slot;
  layout.m = count_constraints(mech);
  layout.dof_idxs = mech.dof_idxs;

  std::set<int> seen;
  for (int i : layout.dof_idxs) {
    if (i < 0 || i >= layout.n)
      throw ConfigurationError("dof index " + std::to_string(i) + " out of range [0, " +
                               std::to_string(layout.n) + ")");
    if (!seen.insert(i).second)
      throw ConfigurationError("dof index " + std::to_string(i) + " repeated");
  }
  for (const auto& r : mech.relative_coords) {
    const auto& b = mech.body(r.body);
    const int slot = layout.relative_slot.at(r.id);
    if (mech.point(b.point_i).fixed && mech.point(b.point_j).fixed && seen.count(slot))
      throw ConfigurationError("dof '" + r.id + "' is declared on body '" + b.id +
                               "' whose endpoints are both fixed");
  }
  if (!layout.dof_idxs.empty() && layout.d() != layout.dofs())
    throw ConfigurationError("declared " + std::to_string(layout.d()) +
                             " dofs but the mechanism has n - m = " +
                             std::to_string(layout.dofs()));
  return layout;
}

/// z = q({idxs}).
inline Vector pack_dofs(const Vector& q, std::span<const int> idxs) {
  Vector z(static_cast<Eigen::Index>(idxs.size()));
  for (std::size_t k = 0; k < idxs.size(); ++k) {
    if (idxs[k] < 0 || idxs[k] >= q.size())
      throw DimensionMismatchError("dof index " + std::to_string(idxs[k]) +
                                   " out of range");
    z[static_cast<Eigen::Index>(k)] = q[idxs[k]];
  }
  return z;
}

/// Copy of q with z written into the slots {idxs}.
inline Vector scatter_dofs(Vector q, std::span<const int> idxs, const Vector& z) {
  if (z.size() != static_cast<Eigen::Index>(idxs.size()))
    throw DimensionMismatchError("z has wrong dimension");
  for (std::size_t k = 0; k < idxs.size(); ++k) {
    if (idxs[k] < 0 || idxs[k] >= q.size())
      throw DimensionMismatchError("dof index " + std::to_string(idxs[k]) +
                                   " out of range");
    q[idxs[k]] = z[static_cast<Eigen::Index>(k)];
  }
  return q;
}

/// q assembled from the mobile-point guesses and relative-coordinate initial
/// values of the description (not necessarily on the constraint manifold).
inline Vector initial_guess(const MechanismDef& mech, const CoordinateLayout& layout) {
  Vector q = Vector::Zero(layout.n);
  for (const auto& p : mech.points) {
    if (p.fixed || !p.xy) continue;
    const int s = layout.point_slot.at(p.id);
    q[s] = p.xy->x();
    q[s + 1] = p.xy->y();
  }
  for (const auto& r : mech.relative_coords) q[layout.relative_slot.at(r.id)] = r.initial_value;
  return q;
}

namespace detail {

struct RotationalInertia {
  int slot;
  double inertia;
  bool pivot_is_i;
  const BodyDef* body;
};

inline std::optional<RotationalInertia> rotational_inertia(const MechanismDef& mech,
                                                           const CoordinateLayout& layout,
                                                           const BodyDef& b) {
  if (b.inertia_model != InertiaModel::RotationalOnRelativeCoord) return std::nullopt;
  const auto* rc = relative_coord_on(mech, b.id);
  const double inertia =
      rc->inertia_about_pivot.value_or(b.mass * b.length * b.length / 3.0);
  return RotationalInertia{layout.relative_slot.at(rc->id), inertia,
                           mech.point(b.point_i).fixed, &b};
}

inline Vector2 point_xy(const MechanismDef& mech, const CoordinateLayout& layout,
                        const std::string& id, const Vector& q) {
  const auto& p = mech.point(id);
  if (p.fixed) return *p.xy;
  const int s = layout.point_slot.at(id);
  return {q[s], q[s + 1]};
}

}  // namespace detail

/// Constant n x n mass matrix. Point-coordinate blocks come from the body
/// inertia models; relative coordinates receive the pivot inertia of their
/// body or kMassRegularization.
inline Matrix assemble_mass_matrix(const MechanismDef& mech, const CoordinateLayout& layout) {
  Matrix M = Matrix::Zero(layout.n, layout.n);
  std::vector<bool> relative_has_inertia(static_cast<std::size_t>(layout.n), false);

  for (const auto& b : mech.bodies) {
    const bool fi = mech.point(b.point_i).fixed;
    const bool fj = mech.point(b.point_j).fixed;
    if (fi && fj) continue;
    if (auto rot = detail::rotational_inertia(mech, layout, b)) {
      M(rot->slot, rot->slot) += rot->inertia;
      relative_has_inertia[static_cast<std::size_t>(rot->slot)] = true;
      continue;
    }
    const int si = fi ? -1 : layout.point_slot.at(b.point_i);
    const int sj = fj ? -1 : layout.point_slot.at(b.point_j);
    double diag = 0.0, off = 0.0;
    if (b.inertia_model == InertiaModel::UniformRod) {
      diag = b.mass / 3.0;
      off = b.mass / 6.0;
    } else {
      diag = b.mass / 2.0;
    }
    for (int axis = 0; axis < 2; ++axis) {
      if (si >= 0) M(si + axis, si + axis) += diag;
      if (sj >= 0) M(sj + axis, sj + axis) += diag;
      if (si >= 0 && sj >= 0 && off != 0.0) {
        M(si + axis, sj + axis) += off;
        M(sj + axis, si + axis) += off;
      }
    }
  }
  for (const auto& [id, slot] : layout.relative_slot)
    if (!relative_has_inertia[static_cast<std::size_t>(slot)]) M(slot, slot) += kMassRegularization;

  for (int i = 0; i < layout.n; ++i)
    if (M(i, i) <= 0.0)
      throw ConfigurationError("coordinate '" + layout.slot_names[static_cast<std::size_t>(i)] +
                               "' received no inertia; mass matrix is singular");
  Eigen::LLT<Matrix> llt(M);
  if (llt.info() != Eigen::Success)
    throw ConfigurationError("assembled mass matrix is not positive definite");
  return M;
}

/// V = sum_i m_i g y_cm,i.
inline double potential_energy(const MechanismDef& mech, const CoordinateLayout& layout,
                               double g, const Vector& q) {
  double V = 0.0;
  for (const auto& b : mech.bodies) {
    if (b.mass == 0.0) continue;
    double y_cm = 0.0;
    if (auto rot = detail::rotational_inertia(mech, layout, b)) {
      const double theta = q[rot->slot];
      const double yp = mech.point(rot->pivot_is_i ? b.point_i : b.point_j).xy->y();
      y_cm = yp + (rot->pivot_is_i ? 0.5 : -0.5) * b.length * std::sin(theta);
    } else {
      y_cm = 0.5 * (detail::point_xy(mech, layout, b.point_i, q).y() +
                    detail::point_xy(mech, layout, b.point_j, q).y());
    }
    V += b.mass * g * y_cm;
  }
  return V;
}

/// Generalized gravity forces F = -dV/dq (nodal loads of -m g / 2 per mobile
/// endpoint; pivot torque on the relative coordinate for rotational bodies).
inline Vector assemble_gravity_forces(const MechanismDef& mech, const CoordinateLayout& layout,
                                      double g, const Vector& q) {
  Vector F = Vector::Zero(layout.n);
  if (g == 0.0) return F;
  for (const auto& b : mech.bodies) {
    if (auto rot = detail::rotational_inertia(mech, layout, b)) {
      const double sign = rot->pivot_is_i ? -1.0 : 1.0;
      F[rot->slot] += sign * b.mass * g * 0.5 * b.length * std::cos(q[rot->slot]);
      continue;
    }
    for (const auto* id : {&b.point_i, &b.point_j}) {
      if (mech.point(*id).fixed) continue;
      F[layout.point_slot.at(*id) + 1] -= 0.5 * b.mass * g;
    }
  }
  return F;
}

/// T = 1/2 dq' M dq.
inline double kinetic_energy(const Matrix& M, const Vector& dq) {
  return 0.5 * dq.dot(M * dq);
}

}  // namespace mbfg
