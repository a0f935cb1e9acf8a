#pragma once

// Finite-difference verification of factor Jacobians and of the derivative
// rows produced by the constraint blocks, over random states of a mechanism.

#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "mbfg/factors.hpp"

namespace mbfg {

struct JacobianCheck {
  std::string kind;
  int trials = 0;
  /// max over entries of |analytic - fd| / max(abs_tol, rel_tol |fd|); <= 1 passes.
  double worst = 0.0;
  bool passed() const { return trials > 0 && worst <= 1.0; }
};

inline constexpr double kJacobianAbsTol = 1e-6;
inline constexpr double kJacobianRelTol = 1e-5;

inline double jacobian_mismatch(const Matrix& analytic, const Matrix& fd) {
  if (analytic.rows() != fd.rows() || analytic.cols() != fd.cols())
    return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (Eigen::Index r = 0; r < fd.rows(); ++r)
    for (Eigen::Index c = 0; c < fd.cols(); ++c) {
      const double tol = std::max(kJacobianAbsTol, kJacobianRelTol * std::abs(fd(r, c)));
      worst = std::max(worst, std::abs(analytic(r, c) - fd(r, c)) / tol);
    }
  return worst;
}

/// Compares every Jacobian block of `f` with central differences of its error.
inline double factor_jacobian_mismatch(const Factor& f, const Values& values) {
  const FactorEval ev = f.evaluate(values, true);
  double worst = 0.0;
  for (std::size_t i = 0; i < f.keys().size(); ++i) {
    Values probe = values;
    const VariableKey k = f.keys()[i];
    const Matrix fd = numerical_jacobian(
        [&](const Vector& x) {
          probe.update(k, x);
          return f.evaluate(probe, false).error;
        },
        values.at(k));
    worst = std::max(worst, jacobian_mismatch(ev.jacobians[i], fd));
  }
  return worst;
}

/// Random states near the constraint manifold, reached by continuation in the
/// independent coordinates from the description's initial configuration.
class StateSampler {
 public:
  StateSampler(MechanismPtr mech, unsigned long seed) : mech_(std::move(mech)), rng_(seed) {
    const auto& sys = *mech_;
    const auto& idxs = sys.layout().dof_idxs;
    Vector q = sys.initial_guess();
    if (sys.d() == 0) {
      anchors_.push_back(q);
      return;
    }
    try {
      q = sys.assemble_at(q, pack_dofs(q, idxs));
    } catch (const Error&) {
      anchors_.push_back(q);
      return;
    }
    anchors_.push_back(q);
    // Walk each dof both ways in small increments while the mechanism assembles.
    for (double dir : {1.0, -1.0}) {
      Vector cur = q;
      for (int s = 1; s <= 64; ++s) {
        Vector z = pack_dofs(cur, idxs);
        z.array() += dir * std::numbers::pi / 32.0;
        try {
          cur = sys.assemble_at(cur, z);
        } catch (const Error&) {
          break;
        }
        anchors_.push_back(cur);
      }
    }
  }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  Vector random_vector(int n, double scale) {
    Vector v(n);
    for (int i = 0; i < n; ++i) v[i] = uniform(-scale, scale);
    return v;
  }

  /// Assembled configuration (perturbed by `jitter`).
  Vector q(double jitter = 0.0) {
    std::uniform_int_distribution<std::size_t> pick(0, anchors_.size() - 1);
    return anchors_[pick(rng_)] + random_vector(mech_->n(), jitter);
  }

  /// Admissible velocity at q when dofs are declared, random otherwise.
  Vector dq(const Vector& q) {
    if (mech_->d() == 0) return random_vector(mech_->n(), 1.0);
    return solve_velocity_problem(mech_->kinematics(q), mech_->layout(), random_vector(mech_->d(), 2.0));
  }

 private:
  MechanismPtr mech_;
  std::mt19937_64 rng_;
  std::vector<Vector> anchors_;
};

/// Checks the derivative rows of the constraint blocks: Phi_q, dot(Phi_q) =
/// Phi_qq dq, Phi_qq v, dot(Phi_qq) dq and c.
inline std::vector<JacobianCheck> check_constraint_derivatives(const MechanismPtr& mech,
                                                               int trials, unsigned long seed) {
  const auto& sys = *mech;
  StateSampler sampler(mech, seed);
  JacobianCheck phi_q{"constraint phi_q"}, dphi_q{"constraint dphi_q"},
      phiqq_v{"constraint phiqq_v"}, dphiqq{"constraint dphiqq_dq"}, cvec{"constraint c"};
  for (int t = 0; t < trials; ++t) {
    const Vector q = sampler.q(0.05);
    const Vector dq = sampler.random_vector(sys.n(), 2.0);
    const Vector v = sampler.random_vector(sys.n(), 2.0);
    const auto kin = sys.kinematics(q, dq, v);
    auto fd = [&](auto&& fn) { return numerical_jacobian(fn, q); };
    phi_q.worst = std::max(phi_q.worst, jacobian_mismatch(kin.Phi_q(), fd([&](const Vector& x) {
                                                            return sys.kinematics(x).phi;
                                                          })));
    dphi_q.worst = std::max(dphi_q.worst, jacobian_mismatch(kin.dPhi_q(), fd([&](const Vector& x) {
                                                              return Vector(sys.kinematics(x).Phi_q() * dq);
                                                            })));
    phiqq_v.worst = std::max(phiqq_v.worst, jacobian_mismatch(kin.Phiqq_v(), fd([&](const Vector& x) {
                                                                return Vector(sys.kinematics(x).Phi_q() * v);
                                                              })));
    // d/dq of dot(Phi_q) dq at fixed dq, i.e. of -c.
    dphiqq.worst = std::max(dphiqq.worst, jacobian_mismatch(kin.dPhiqq_dq(), fd([&](const Vector& x) {
                                                              return Vector(-sys.kinematics(x, dq).c);
                                                            })));
    // c = -(d/dt Phi_q) dq, with the time derivative taken along dq.
    const Matrix dPhi_dt = numerical_jacobian(
        [&](const Vector& s) {
          const Matrix P = sys.kinematics(q + s[0] * dq).Phi_q();
          return Vector(Eigen::Map<const Vector>(P.data(), P.size()));
        },
        Vector::Zero(1));
    const Matrix dP = Eigen::Map<const Matrix>(dPhi_dt.data(), sys.m(), sys.n());
    cvec.worst = std::max(cvec.worst, jacobian_mismatch(Matrix(kin.c), Matrix(-dP * dq)));
    for (auto* c : {&phi_q, &dphi_q, &phiqq_v, &dphiqq, &cvec}) ++c->trials;
  }
  return {phi_q, dphi_q, phiqq_v, dphiqq, cvec};
}

/// Builds one factor of every kind on random states and checks its Jacobians.
inline std::vector<JacobianCheck> check_factor_jacobians(const MechanismPtr& mech, int trials,
                                                         unsigned long seed) {
  const auto& sys = *mech;
  const int n = sys.n(), m = sys.m(), d = sys.d();
  StateSampler sampler(mech, seed);
  auto iso = [](int dim) { return NoiseModel::isotropic(dim, 1.0); };
  auto k = [](VarKind kind, int t) { return VariableKey(kind, t); };

  std::vector<FactorPtr> factors = {
      std::make_shared<PriorFactor>(k(VarKind::q, 0), sampler.q(), iso(n)),
      std::make_shared<EulerIntegratorFactor>(k(VarKind::q, 0), k(VarKind::q, 1), k(VarKind::dq, 0),
                                              0.01, iso(n)),
      std::make_shared<TrapezoidalIntegratorFactor>(k(VarKind::q, 0), k(VarKind::q, 1),
                                                    k(VarKind::dq, 0), k(VarKind::dq, 1), 0.01, iso(n)),
      std::make_shared<SoftEqualityFactor>(k(VarKind::q, 0), k(VarKind::q, 1), iso(n)),
      std::make_shared<DepPositionConstraintFactor>(mech, k(VarKind::q, 0), iso(m)),
      std::make_shared<DepVelocityConstraintFactor>(mech, k(VarKind::q, 0), k(VarKind::dq, 0), iso(m)),
      std::make_shared<DepDynamicsFactor>(mech, k(VarKind::q, 0), k(VarKind::dq, 0),
                                          k(VarKind::ddq, 0), Vector(), iso(n)),
      std::make_shared<DepDynamicsFactor>(mech, k(VarKind::q, 0), k(VarKind::dq, 0),
                                          k(VarKind::ddq, 0), k(VarKind::Q, 0), Vector(), iso(n)),
  };
  if (d > 0) {
    factors.push_back(std::make_shared<PriorFactor>(k(VarKind::q, 0), Vector::Zero(d), iso(d),
                                                    sys.layout().dof_idxs));
    factors.push_back(
        std::make_shared<IndepPositionConstraintFactor>(mech, k(VarKind::q, 0), k(VarKind::z, 0), iso(m + d)));
    factors.push_back(std::make_shared<IndepVelocityConstraintFactor>(
        mech, k(VarKind::q, 0), k(VarKind::dq, 0), k(VarKind::dz, 0), iso(m + d)));
    factors.push_back(std::make_shared<IndepAccelConstraintFactor>(
        mech, k(VarKind::q, 0), k(VarKind::dq, 0), k(VarKind::ddq, 0), k(VarKind::ddz, 0), iso(m + d)));
    factors.push_back(std::make_shared<IndepDynamicsFactor>(mech, k(VarKind::z, 0), k(VarKind::dz, 0),
                                                            k(VarKind::ddz, 0), k(VarKind::q, 0),
                                                            Vector(), iso(d)));
    factors.push_back(std::make_shared<IndepDynamicsFactor>(
        mech, k(VarKind::z, 0), k(VarKind::dz, 0), k(VarKind::ddz, 0), k(VarKind::q, 0),
        k(VarKind::Q, 0), Vector(), iso(d)));
  }

  std::vector<JacobianCheck> out;
  for (const auto& f : factors) {
    std::string kind(f->name());
    if (const auto* p = dynamic_cast<const PriorFactor*>(f.get()); p && p->x0().size() != n)
      kind += " (selective)";
    out.push_back({kind});
  }

  for (int t = 0; t < trials; ++t) {
    Values v;
    const Vector q0 = sampler.q(0.01);
    const Vector dq0 = sampler.dq(q0);
    v.insert(k(VarKind::q, 0), q0);
    v.insert(k(VarKind::q, 1), sampler.q(0.01));
    v.insert(k(VarKind::dq, 0), dq0 + sampler.random_vector(n, 0.01));
    v.insert(k(VarKind::dq, 1), sampler.random_vector(n, 2.0));
    v.insert(k(VarKind::ddq, 0), sampler.random_vector(n, 5.0));
    v.insert(k(VarKind::Q, 0), sampler.random_vector(n, 5.0));
    if (d > 0) {
      const auto& idxs = sys.layout().dof_idxs;
      v.insert(k(VarKind::z, 0), pack_dofs(q0, idxs) + sampler.random_vector(d, 0.01));
      v.insert(k(VarKind::dz, 0), pack_dofs(dq0, idxs));
      v.insert(k(VarKind::ddz, 0), sampler.random_vector(d, 5.0));
    }
    for (std::size_t i = 0; i < factors.size(); ++i) {
      out[i].worst = std::max(out[i].worst, factor_jacobian_mismatch(*factors[i], v));
      ++out[i].trials;
    }
  }
  return out;
}

}  // namespace mbfg
