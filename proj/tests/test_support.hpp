#pragma once

// Shared fixtures and independent oracles for the unit tests.

#include <cmath>
#include <random>
#include <string>

#include "mbfg/mbfg.hpp"

namespace mbfg::test {

inline std::string data_path(const std::string& name) { return std::string(MBFG_DATA_DIR) + "/" + name; }

class Rng {
 public:
  explicit Rng(unsigned long seed) : eng_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(eng_); }
  Vector vec(int n, double scale) {
    Vector v(n);
    for (int i = 0; i < n; ++i) v[i] = uniform(-scale, scale);
    return v;
  }
  Matrix mat(int r, int c, double scale) {
    Matrix m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = uniform(-scale, scale);
    return m;
  }
  Matrix spd(int n) {
    const Matrix A = mat(n, n, 1.0);
    return A * A.transpose() + n * Matrix::Identity(n, n);
  }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

/// Simple pendulum: fixed O at the origin, mobile P at (L, 0), z = y of P.
inline MechanismDef pendulum(double L = 2.0, double mass = 1.0,
                             InertiaModel model = InertiaModel::PointMassesAtEnds) {
  MechanismDef m;
  m.points = {{"O", true, Vector2(0.0, 0.0)}, {"P", false, Vector2(L, 0.0)}};
  m.bodies = {{"rod", "O", "P", L, mass, model}};
  m.dof_idxs = {1};
  return m;
}

/// Slider-crank: crank O-A rotating about O, connecting rod A-B, B sliding on
/// the x axis. q = (xA, yA, xB, yB, theta), z = theta.
inline MechanismDef slider_crank() {
  MechanismDef m;
  m.points = {{"O", true, Vector2(0.0, 0.0)}, {"A", false, Vector2(1.0, 0.0)},
              {"B", false, Vector2(4.0, 0.0)}};
  m.bodies = {{"crank", "O", "A", 1.0, 1.0, InertiaModel::RotationalOnRelativeCoord},
              {"rod", "A", "B", 3.0, 2.0, InertiaModel::UniformRod}};
  m.relative_coords = {{"theta", RelativeCoordKind::AbsoluteAngle, "crank", std::nullopt, true, 0.0}};
  ConstraintDef slide;
  slide.kind = ConstraintKind::FixedPinnedSlider;
  slide.points = {"B"};
  slide.line_a = Vector2(0.0, 0.0);
  slide.line_b = Vector2(1.0, 0.0);
  m.constraints = {slide};
  m.dof_idxs = {4};
  return m;
}

/// Endpoint positions and velocities of a body at a state, read independently
/// of the library's mass/force assembly.
struct BodyMotion {
  Vector2 ri, rj, vi, vj;
};

inline BodyMotion body_motion(const MechanismDef& def, const CoordinateLayout& layout,
                              const BodyDef& b, const Vector& q, const Vector& dq) {
  auto pt = [&](const std::string& id, Vector2& r, Vector2& v) {
    const auto& p = def.point(id);
    if (p.fixed) {
      r = *p.xy;
      v.setZero();
    } else {
      const int s = layout.point_slot.at(id);
      r = Vector2(q[s], q[s + 1]);
      v = Vector2(dq[s], dq[s + 1]);
    }
  };
  BodyMotion bm;
  pt(b.point_i, bm.ri, bm.vi);
  pt(b.point_j, bm.rj, bm.vj);
  if (b.inertia_model == InertiaModel::RotationalOnRelativeCoord) {
    // The moving end is placed by the angle, not by its point slots.
    for (const auto& r : def.relative_coords) {
      if (r.body != b.id) continue;
      const int s = layout.relative_slot.at(r.id);
      const double th = q[s], w = dq[s];
      const bool pivot_i = def.point(b.point_i).fixed;
      const Vector2 dir(std::cos(th), std::sin(th));
      const Vector2 ddir(-std::sin(th) * w, std::cos(th) * w);
      if (pivot_i) {
        bm.rj = bm.ri + b.length * dir;
        bm.vj = b.length * ddir;
      } else {
        bm.ri = bm.rj - b.length * dir;
        bm.vi = -b.length * ddir;
      }
    }
  }
  return bm;
}

/// Kinetic energy from `N` equal point masses spread along each uniform rod.
inline double discretized_kinetic_energy(const MechanismDef& def, const CoordinateLayout& layout,
                                         const Vector& q, const Vector& dq, int N = 10000) {
  double T = 0.0;
  for (const auto& b : def.bodies) {
    const BodyMotion bm = body_motion(def, layout, b, q, dq);
    if (b.inertia_model == InertiaModel::PointMassesAtEnds) {
      T += 0.25 * b.mass * (bm.vi.squaredNorm() + bm.vj.squaredNorm());
      continue;
    }
    const double dm = b.mass / N;
    for (int k = 0; k < N; ++k) {
      const double s = (k + 0.5) / N;
      T += 0.5 * dm * ((1.0 - s) * bm.vi + s * bm.vj).squaredNorm();
    }
  }
  return T;
}

/// V = sum m g y_cm from the body endpoint positions.
inline double independent_potential(const MechanismDef& def, const CoordinateLayout& layout,
                                    const Vector& q) {
  double V = 0.0;
  const Vector zero = Vector::Zero(q.size());
  for (const auto& b : def.bodies) {
    const BodyMotion bm = body_motion(def, layout, b, q, zero);
    V += b.mass * def.gravity * 0.5 * (bm.ri.y() + bm.rj.y());
  }
  return V;
}

}  // namespace mbfg::test
