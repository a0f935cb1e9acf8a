#pragma once

// Per-constraint rows of Phi and its derivative objects, and their assembly
// into whole-mechanism kinematic quantities. Second-derivative tensors are
// only ever exposed through their products with vectors.

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "mbfg/mech_model.hpp"

namespace mbfg {

/// Planar point as seen by a constraint: either a slot pair in q or a fixed
/// location.
struct PointRef {
  int slot = -1;  // x index into q; y is slot + 1. -1 means fixed.
  Vector2 fixed_xy = Vector2::Zero();

  bool mobile() const { return slot >= 0; }
  bool operator==(const PointRef&) const = default;
};

struct ConstraintBlock {
  ConstraintKind kind = ConstraintKind::ConstantDistance;
  // constant-distance: {i, j}; fixed slider: {p}; mobile slider: {p, i, j};
  // absolute-angle: {i, j}.
  std::array<PointRef, 3> points{};
  int theta_slot = -1;  // absolute-angle only
  double length = 0.0;
  Vector2 line_a = Vector2::Zero();
  Vector2 line_b = Vector2::Zero();

  bool operator==(const ConstraintBlock&) const = default;
};

/// Row of an m x n matrix with at most 6 structural non-zeros.
struct SparseRow {
  static constexpr int kCapacity = 6;  // three points, or two points and an angle
  std::array<int, kCapacity> idx{};
  std::array<double, kCapacity> val{};
  int nnz = 0;

  void add(int i, double v) {
    for (int k = 0; k < nnz; ++k)
      if (idx[static_cast<std::size_t>(k)] == i) {
        val[static_cast<std::size_t>(k)] += v;
        return;
      }
    if (nnz == kCapacity) throw DimensionMismatchError("constraint row has more than 6 nonzeros");
    idx[static_cast<std::size_t>(nnz)] = i;
    val[static_cast<std::size_t>(nnz)] = v;
    ++nnz;
  }
  double dot(const Vector& x) const {
    double s = 0.0;
    for (int k = 0; k < nnz; ++k)
      s += val[static_cast<std::size_t>(k)] * x[idx[static_cast<std::size_t>(k)]];
    return s;
  }
  double coeff(int i) const {
    for (int k = 0; k < nnz; ++k)
      if (idx[static_cast<std::size_t>(k)] == i) return val[static_cast<std::size_t>(k)];
    return 0.0;
  }
  template <class Derived>
  void scatter_into(Eigen::MatrixBase<Derived>&& row, double scale = 1.0) const {
    for (int k = 0; k < nnz; ++k)
      row(idx[static_cast<std::size_t>(k)]) += scale * val[static_cast<std::size_t>(k)];
  }
};

/// One row of every kinematic object for a single constraint.
///   phi_q     : dPhi/dq
///   dphi_q    : d(phi_q)/dt = Phi_qq * dq
///   phiqq_v   : Phi_qq * v for the caller-supplied v
///   dphiqq_dq : dot(Phi_qq) * dq
struct BlockEval {
  double phi = 0.0;
  SparseRow phi_q;
  SparseRow dphi_q;
  SparseRow phiqq_v;
  SparseRow dphiqq_dq;
};

/// Absolute-angle rows use the x-equation while |sin(theta)| > 1/sqrt(2).
inline bool absolute_angle_uses_x_branch(double theta) {
  return std::abs(std::sin(theta)) > 1.0 / std::sqrt(2.0);
}

namespace detail {

// Local coordinates of a block (at most 6), mapped to q slots (-1: constant).
struct LocalState {
  int k = 0;
  std::array<int, 6> slot{};
  Eigen::Matrix<double, 6, 1> s = Eigen::Matrix<double, 6, 1>::Zero();
  Eigen::Matrix<double, 6, 1> ds = Eigen::Matrix<double, 6, 1>::Zero();
  Eigen::Matrix<double, 6, 1> v = Eigen::Matrix<double, 6, 1>::Zero();

  void push(int q_slot, double fixed_value, const Vector& q, const Vector& dq,
            const Vector& vv) {
    const auto i = static_cast<std::size_t>(k);
    slot[i] = q_slot;
    if (q_slot >= 0) {
      s[k] = q[q_slot];
      ds[k] = dq.size() ? dq[q_slot] : 0.0;
      v[k] = vv.size() ? vv[q_slot] : 0.0;
    } else {
      s[k] = fixed_value;
    }
    ++k;
  }
  void push_point(const PointRef& p, const Vector& q, const Vector& dq, const Vector& vv) {
    push(p.mobile() ? p.slot : -1, p.fixed_xy.x(), q, dq, vv);
    push(p.mobile() ? p.slot + 1 : -1, p.fixed_xy.y(), q, dq, vv);
  }
};

inline void emit(const LocalState& ls, const Eigen::Matrix<double, 6, 1>& local,
                 SparseRow& row) {
  for (int a = 0; a < ls.k; ++a) {
    const int s = ls.slot[static_cast<std::size_t>(a)];
    if (s >= 0) row.add(s, local[a]);
  }
}

}  // namespace detail

/// Evaluates a single constraint row and its derivative objects at (q, dq).
/// `v` is the vector multiplied by Phi_qq (typically ddq). Either of dq, v
/// may be empty, meaning zero.
inline BlockEval eval_block(const ConstraintBlock& block, const Vector& q, const Vector& dq,
                            const Vector& v) {
  using Vec6 = Eigen::Matrix<double, 6, 1>;
  using Mat6 = Eigen::Matrix<double, 6, 6>;
  detail::LocalState ls;
  Vec6 g = Vec6::Zero();
  Mat6 H = Mat6::Zero();
  Mat6 dH = Mat6::Zero();
  BlockEval out;

  switch (block.kind) {
    case ConstraintKind::ConstantDistance: {
      ls.push_point(block.points[0], q, dq, v);
      ls.push_point(block.points[1], q, dq, v);
      const double dx = ls.s[2] - ls.s[0], dy = ls.s[3] - ls.s[1];
      out.phi = dx * dx + dy * dy - block.length * block.length;
      g.head<4>() << -2 * dx, -2 * dy, 2 * dx, 2 * dy;
      H.topLeftCorner<4, 4>() << 2, 0, -2, 0,   //
          0, 2, 0, -2,                          //
          -2, 0, 2, 0,                          //
          0, -2, 0, 2;
      break;
    }
    case ConstraintKind::FixedPinnedSlider: {
      ls.push_point(block.points[0], q, dq, v);
      const Vector2 ab = block.line_b - block.line_a;
      out.phi = ab.x() * (ls.s[1] - block.line_a.y()) - ab.y() * (ls.s[0] - block.line_a.x());
      g.head<2>() << -ab.y(), ab.x();
      break;
    }
    case ConstraintKind::MobilePinnedSlider: {
      ls.push_point(block.points[0], q, dq, v);
      ls.push_point(block.points[1], q, dq, v);
      ls.push_point(block.points[2], q, dq, v);
      const double x = ls.s[0], y = ls.s[1], xi = ls.s[2], yi = ls.s[3], xj = ls.s[4],
                   yj = ls.s[5];
      out.phi = (xj - xi) * (y - yi) - (yj - yi) * (x - xi);
      g << yi - yj, xj - xi, yj - y, x - xj, y - yi, xi - x;
      H << 0, 0, 0, 1, 0, -1,  //
          0, 0, -1, 0, 1, 0,   //
          0, -1, 0, 0, 0, 1,   //
          1, 0, 0, 0, -1, 0,   //
          0, 1, 0, -1, 0, 0,   //
          -1, 0, 1, 0, 0, 0;
      break;
    }
    case ConstraintKind::AbsoluteAngle: {
      ls.push_point(block.points[0], q, dq, v);
      ls.push_point(block.points[1], q, dq, v);
      ls.push(block.theta_slot, 0.0, q, dq, v);
      const double L = block.length;
      const double th = ls.s[4], dth = ls.ds[4];
      const double c = std::cos(th), s = std::sin(th);
      if (absolute_angle_uses_x_branch(th)) {
        out.phi = ls.s[2] - ls.s[0] - L * c;
        g.head<5>() << -1, 0, 1, 0, L * s;
        H(4, 4) = L * c;
        dH(4, 4) = -L * dth * s;
      } else {
        out.phi = ls.s[3] - ls.s[1] - L * s;
        g.head<5>() << 0, -1, 0, 1, -L * c;
        H(4, 4) = L * s;
        dH(4, 4) = L * dth * c;
      }
      break;
    }
  }

  detail::emit(ls, g, out.phi_q);
  detail::emit(ls, H * ls.ds, out.dphi_q);
  detail::emit(ls, H * ls.v, out.phiqq_v);
  detail::emit(ls, dH * ls.ds, out.dphiqq_dq);
  // Keep the structural pattern of phi_q in every derived row.
  for (auto* row : {&out.dphi_q, &out.phiqq_v, &out.dphiqq_dq})
    for (int k = 0; k < out.phi_q.nnz; ++k) row->add(out.phi_q.idx[static_cast<std::size_t>(k)], 0.0);
  return out;
}

/// Stacked kinematics of a mechanism at one state. Row k comes from block k.
struct AssembledKinematics {
  int n = 0;
  Vector phi;
  std::vector<SparseRow> phi_q;
  std::vector<SparseRow> dphi_q;
  std::vector<SparseRow> phiqq_v;
  std::vector<SparseRow> dphiqq_dq;
  Vector b;  // -Phi_t, identically zero (no rheonomic constraints)
  Vector c;  // -dot(Phi_q) dq

  int m() const { return static_cast<int>(phi.size()); }

  static Matrix densify(const std::vector<SparseRow>& rows, int n) {
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), n);
    for (std::size_t r = 0; r < rows.size(); ++r)
      rows[r].scatter_into(out.row(static_cast<Eigen::Index>(r)));
    return out;
  }
  static Eigen::SparseMatrix<double> sparsify(const std::vector<SparseRow>& rows, int n) {
    std::vector<Eigen::Triplet<double>> trip;
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (int k = 0; k < rows[r].nnz; ++k)
        trip.emplace_back(static_cast<int>(r), rows[r].idx[static_cast<std::size_t>(k)],
                          rows[r].val[static_cast<std::size_t>(k)]);
    Eigen::SparseMatrix<double> out(static_cast<Eigen::Index>(rows.size()), n);
    out.setFromTriplets(trip.begin(), trip.end());
    return out;
  }

  Matrix Phi_q() const { return densify(phi_q, n); }
  Matrix dPhi_q() const { return densify(dphi_q, n); }
  Matrix Phiqq_v() const { return densify(phiqq_v, n); }
  Matrix dPhiqq_dq() const { return densify(dphiqq_dq, n); }
};

/// Rejects blocks that would produce identical rows.
inline void check_unique_blocks(std::span<const ConstraintBlock> blocks) {
  for (std::size_t a = 0; a < blocks.size(); ++a)
    for (std::size_t b = a + 1; b < blocks.size(); ++b) {
      bool same = blocks[a] == blocks[b];
      // A distance row is symmetric in its endpoints.
      if (!same && blocks[a].kind == ConstraintKind::ConstantDistance &&
          blocks[b].kind == ConstraintKind::ConstantDistance &&
          blocks[a].length == blocks[b].length)
        same = blocks[a].points[0] == blocks[b].points[1] &&
               blocks[a].points[1] == blocks[b].points[0];
      if (same)
        throw ConfigurationError("constraint rows " + std::to_string(a) + " and " +
                                 std::to_string(b) + " are duplicates");
    }
}

inline AssembledKinematics assemble_unchecked(std::span<const ConstraintBlock> blocks, int n,
                                              const Vector& q, const Vector& dq,
                                              const Vector& v) {
  AssembledKinematics kin;
  const auto m = blocks.size();
  kin.n = n;
  kin.phi.resize(static_cast<Eigen::Index>(m));
  kin.phi_q.resize(m);
  kin.dphi_q.resize(m);
  kin.phiqq_v.resize(m);
  kin.dphiqq_dq.resize(m);
  kin.b = Vector::Zero(static_cast<Eigen::Index>(m));
  kin.c.resize(static_cast<Eigen::Index>(m));
  for (std::size_t k = 0; k < m; ++k) {
    BlockEval e = eval_block(blocks[k], q, dq, v);
    const auto r = static_cast<Eigen::Index>(k);
    kin.phi[r] = e.phi;
    kin.phi_q[k] = e.phi_q;
    kin.dphi_q[k] = e.dphi_q;
    kin.phiqq_v[k] = e.phiqq_v;
    kin.dphiqq_dq[k] = e.dphiqq_dq;
    kin.c[r] = dq.size() ? -e.dphi_q.dot(dq) : 0.0;
  }
  return kin;
}

/// Assembles Phi, Phi_q, dot(Phi_q), Phi_qq v and dot(Phi_qq) dq at a state,
/// plus b = 0 and c = -dot(Phi_q) dq.
inline AssembledKinematics assemble(std::span<const ConstraintBlock> blocks,
                                    const CoordinateLayout& layout, const Vector& q,
                                    const Vector& dq, const Vector& v = Vector()) {
  check_unique_blocks(blocks);
  if (q.size() != layout.n || (dq.size() && dq.size() != layout.n) ||
      (v.size() && v.size() != layout.n))
    throw DimensionMismatchError("state vectors must have dimension n = " +
                                 std::to_string(layout.n));
  return assemble_unchecked(blocks, layout.n, q, dq, v);
}

/// Constraint blocks for a mechanism: one constant-distance row per body with
/// a mobile endpoint, one absolute-angle row per relative coordinate, then the
/// explicitly listed constraints, in that order.
inline std::vector<ConstraintBlock> build_blocks(const MechanismDef& mech,
                                                 const CoordinateLayout& layout) {
  auto ref = [&](const std::string& id) {
    const auto& p = mech.point(id);
    PointRef r;
    if (p.fixed)
      r.fixed_xy = *p.xy;
    else
      r.slot = layout.point_slot.at(id);
    return r;
  };
  std::vector<ConstraintBlock> blocks;
  for (const auto& b : mech.bodies) {
    if (!detail::body_generates_distance_row(mech, b)) continue;
    ConstraintBlock cb;
    cb.kind = ConstraintKind::ConstantDistance;
    cb.points[0] = ref(b.point_i);
    cb.points[1] = ref(b.point_j);
    cb.length = b.length;
    blocks.push_back(cb);
  }
  for (const auto& r : mech.relative_coords) {
    const auto& b = mech.body(r.body);
    ConstraintBlock cb;
    cb.kind = ConstraintKind::AbsoluteAngle;
    cb.points[0] = ref(b.point_i);
    cb.points[1] = ref(b.point_j);
    cb.theta_slot = layout.relative_slot.at(r.id);
    cb.length = b.length;
    blocks.push_back(cb);
  }
  for (const auto& c : mech.constraints) {
    ConstraintBlock cb;
    cb.kind = c.kind;
    for (std::size_t k = 0; k < c.points.size(); ++k) cb.points[k] = ref(c.points[k]);
    cb.length = c.length;
    cb.line_a = c.line_a;
    cb.line_b = c.line_b;
    blocks.push_back(cb);
  }
  check_unique_blocks(blocks);
  if (static_cast<int>(blocks.size()) != layout.m)
    throw ConfigurationError("layout/constraint count mismatch");
  return blocks;
}

}  // namespace mbfg
