#pragma once

// Factor library: priors, integrators, constraint factors in dependent and
// independent coordinates, dynamics (forward and inverse) and soft equality.

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "mbfg/factor_graph.hpp"
#include "mbfg/system.hpp"

namespace mbfg {

/// Central differences with step h_i = 1e-6 max(1, |x_i|).
template <class Fn>
Matrix numerical_jacobian(Fn&& f, const Vector& x) {
  Vector xp = x;
  Matrix J;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
    xp[i] = x[i] + h;
    const Vector fp = f(xp);
    xp[i] = x[i] - h;
    const Vector fm = f(xp);
    xp[i] = x[i];
    if (i == 0) J.resize(fp.size(), x.size());
    J.col(i) = (fp - fm) / (2.0 * h);
  }
  return J;
}

namespace detail {

inline void check_dim(const Vector& x, Eigen::Index expected, std::string_view who) {
  if (x.size() != expected)
    throw DimensionMismatchError(std::string(who) + ": expected dimension " +
                                 std::to_string(expected) + ", got " + std::to_string(x.size()));
}

inline Matrix selection(std::span<const int> idxs, int n) {
  Matrix S = Matrix::Zero(static_cast<Eigen::Index>(idxs.size()), n);
  for (std::size_t k = 0; k < idxs.size(); ++k) S(static_cast<Eigen::Index>(k), idxs[k]) = 1.0;
  return S;
}

}  // namespace detail

/// e = x - x0, or x({idxs}) - x0 when restricted to a subset of components.
class PriorFactor final : public Factor {
 public:
  PriorFactor(VariableKey key, Vector x0, NoiseModel noise, std::vector<int> idxs = {})
      : Factor({key}, std::move(noise)), x0_(std::move(x0)), idxs_(std::move(idxs)) {
    if (x0_.size() != dim()) throw DimensionMismatchError("prior: noise/x0 dimension mismatch");
    if (!idxs_.empty() && static_cast<Eigen::Index>(idxs_.size()) != x0_.size())
      throw DimensionMismatchError("prior: idxs/x0 dimension mismatch");
  }
  std::string_view name() const override { return "prior"; }
  const Vector& x0() const { return x0_; }

  Vector error(std::span<const Vector* const> x, std::vector<Matrix>* jac,
               const std::vector<bool>& need) const override {
    const Vector& v = *x[0];
    if (idxs_.empty()) {
      detail::check_dim(v, x0_.size(), name());
      if (jac && wanted(need, 0)) (*jac)[0] = Matrix::Identity(v.size(), v.size());
      return v - x0_;
    }
    if (jac && wanted(need, 0)) (*jac)[0] = detail::selection(idxs_, static_cast<int>(v.size()));
    return pack_dofs(v, idxs_) - x0_;
  }

 private:
  Vector x0_;
  std::vector<int> idxs_;
};

/// e = x_{t+1} - x_t - dt dx_t.
class EulerIntegratorFactor final : public Factor {
 public:
  EulerIntegratorFactor(VariableKey x_t, VariableKey x_next, VariableKey dx_t, double dt,
                        NoiseModel noise)
      : Factor({x_t, x_next, dx_t}, std::move(noise)), dt_(dt) {
    if (!(dt > 0.0)) throw ConfigurationError("integrator: dt must be > 0");
  }
  std::string_view name() const override { return "euler-integrator"; }

  Vector error(std::span<const Vector* const> x, std::vector<Matrix>* jac,
               const std::vector<bool>& need) const override {
    const auto d = x[0]->size();
    if (jac) {
      const Matrix I = Matrix::Identity(d, d);
      if (wanted(need, 0)) (*jac)[0] = -I;
      if (wanted(need, 1)) (*jac)[1] = I;
      if (wanted(need, 2)) (*jac)[2] = -dt_ * I;
    }
    return *x[1] - *x[0] - dt_ * *x[2];
  }

 private:
  double dt_;
};

/// e = x_{t+1} - x_t - dt/2 (dx_t + dx_{t+1}).
class TrapezoidalIntegratorFactor final : public Factor {
 public:
  TrapezoidalIntegratorFactor(VariableKey x_t, VariableKey x_next, VariableKey dx_t,
                              VariableKey dx_next, double dt, NoiseModel noise)
      : Factor({x_t, x_next, dx_t, dx_next}, std::move(noise)), dt_(dt) {
    if (!(dt > 0.0)) throw ConfigurationError("integrator: dt must be > 0");
  }
  std::string_view name() const override { return "trapezoidal-integrator"; }

  Vector error(std::span<const Vector* const> x, std::vector<Matrix>* jac,
               const std::vector<bool>& need) const override {
    const auto d = x[0]->size();
    if (jac) {
      const Matrix I = Matrix::Identity(d, d);
      if (wanted(need, 0)) (*jac)[0] = -I;
      if (wanted(need, 1)) (*jac)[1] = I;
      if (wanted(need, 2)) (*jac)[2] = -0.5 * dt_ * I;
      if (wanted(need, 3)) (*jac)[3] = -0.5 * dt_ * I;
    }
    return *x[1] - *x[0] - 0.5 * dt_ * (*x[2] + *x[3]);
  }

 private:
  double dt_;
};

/// e = x_{t+1} - x_t; a weak pull between consecutive states.
class SoftEqualityFactor final : public Factor {
 public:
  SoftEqualityFactor(VariableKey a, VariableKey b, NoiseModel noise)
      : Factor({a, b}, std::move(noise)) {}
  std::string_view name() const override { return "soft-equality"; }

  Vector error(std::span<const Vector* const> x, std::vector<Matrix>* jac,
               const std::vector<bool>& need) const override {
    if (x[0]->size() != x[1]->size()) throw DimensionMismatchError("soft-equality: sizes differ");
    const auto d = x[0]->size();
    if (jac) {
      if (wanted(need, 0)) (*jac)[0] = -Matrix::Identity(d, d);
      if (wanted(need, 1)) (*jac)[1] = Matrix::Identity(d, d);
    }
    return *x[1] - *x[0];
  }
};

/// e = Phi(q_t).
class DepPositionConstraintFactor final : public Factor {
 public:
  DepPositionConstraintFactor(MechanismPtr mech, VariableKey q, NoiseModel noise)
      : Factor({q}, std::move(noise)), mech_(std::move(mech)) {}
  std::string_view name() const override { return "dep-position-constraint"; }

  Vector error(std::span<const Vector* const> x, std::vector<Matrix>* jac,
               const std::vector<bool>& need) const override {
    detail::check_dim(*x[0], mech_->n(), name());
    const auto kin = mech_->kinematics(*x[0]);
    if (jac && wanted(need, 0)) (*jac)[0] = kin.Phi_q();
    return kin.phi;
  }

 private:
  MechanismPtr mech_;
};

/// e = Phi_q(q_t) dq_t.
class DepVelocityConstraintFactor final : public Factor {
 public:
  DepVelocityConstraintFactor(MechanismPtr mech, VariableKey q, VariableKey dq, NoiseModel noise)
      : Factor({q, dq}, std::move(noise)), mech_(std::move(mech)) {}
  std::string_view name() const override { return "dep-velocity-constraint"; }

  Vector error(std::span<const Vector* const> x, std::vector<Matrix>* jac,
               const std::vector<bool>& need) const override {
    detail::check_dim(*x[0], mech_->n(), name());
    detail::check_dim(*x[1], mech_->n(), name());
    const auto kin = mech_->kinematics(*x[0], *x[1]);
    const Matrix Phi_q = kin.Phi_q();
    if (jac) {
      if (wanted(need, 0)) (*jac)[0] = kin.dPhi_q();  // Phi_qq dq
      if (wanted(need, 1)) (*jac)[1] = Phi_q;
    }
    return Phi_q * *x[1];
  }

 private:
  MechanismPtr mech_;
};

/// e = [Phi(q_t); q_t(idxs) - z_t].
class IndepPositionConstraintFactor final : public Factor {
 public:
  IndepPositionConstraintFactor(MechanismPtr mech, VariableKey q, VariableKey z, NoiseModel noise)
      : Factor({q, z}, std::move(noise)), mech_(std::move(mech)) {}
  std::string_view name() const override { return "indep-position-constraint"; }

  Vector error(std::span<const Vector* const> x, std::vector<Matrix>* jac,
               const std::vector<bool>& need) const override {
    const int n = mech_->n(), m = mech_->m(), d = mech_->d();
    const auto& idxs = mech_->layout().dof_idxs;
    detail::check_dim(*x[0], n, name());
    detail::check_dim(*x[1], d, name());
    const auto kin = mech_->kinematics(*x[0]);
    Vector e(m + d);
    e << kin.phi, pack_dofs(*x[0], idxs) - *x[1];
    if (jac) {
      if (wanted(need, 0)) {
        Matrix J(m + d, n);
        J << kin.Phi_q(), detail::selection(idxs, n);
        (*jac)[0] = std::move(J);
      }
      if (wanted(need, 1)) {
        Matrix J = Matrix::Zero(m + d, d);
        J.bottomRows(d) = -Matrix::Identity(d, d);
        (*jac)[1] = std::move(J);
      }
    }
    return e;
  }

 private:
  MechanismPtr mech_;
};

/// e = [Phi_q(q_t) dq_t; dq_t(idxs) - dz_t].
class IndepVelocityConstraintFactor final : public Factor {
 public:
  IndepVelocityConstraintFactor(MechanismPtr mech, VariableKey q, VariableKey dq, VariableKey dz,
                                NoiseModel noise)
      : Factor({q, dq, dz}, std::move(noise)), mech_(std::move(mech)) {}
  std::string_view name() const override { return "indep-velocity-constraint"; }

  Vector error(std::span<const Vector* const> x, std::vector<Matrix>* jac,
               const std::vector<bool>& need) const override {
    const int n = mech_->n(), m = mech_->m(), d = mech_->d();
    const auto& idxs = mech_->layout().dof_idxs;
    detail::check_dim(*x[0], n, name());
    detail::check_dim(*x[1], n, name());
    detail::check_dim(*x[2], d, name());
    const auto kin = mech_->kinematics(*x[0], *x[1]);
    const Matrix Phi_q = kin.Phi_q();
    Vector e(m + d);
    e << Phi_q * *x[1], pack_dofs(*x[1], idxs) - *x[2];
    if (jac) {
      if (wanted(need, 0)) {
        Matrix J = Matrix::Zero(m + d, n);
        J.topRows(m) = kin.dPhi_q();
        (*jac)[0] = std::move(J);
      }
      if (wanted(need, 1)) {
        Matrix J(m + d, n);
        J << Phi_q, detail::selection(idxs, n);
        (*jac)[1] = std::move(J);
      }
      if (wanted(need, 2)) {
        Matrix J = Matrix::Zero(m + d, d);
        J.bottomRows(d) = -Matrix::Identity(d, d);
        (*jac)[2] = std::move(J);
      }
    }
    return e;
  }

 private:
  MechanismPtr mech_;
};

/// e = [dot(Phi_q) dq_t + Phi_q ddq_t; ddq_t(idxs) - ddz_t].
class IndepAccelConstraintFactor final : public Factor {
 public:
  IndepAccelConstraintFactor(MechanismPtr mech, VariableKey q, VariableKey dq, VariableKey ddq,
                             VariableKey ddz, NoiseModel noise)
      : Factor({q, dq, ddq, ddz}, std::move(noise)), mech_(std::move(mech)) {}
  std::string_view name() const override { return "indep-accel-constraint"; }

  Vector error(std::span<const Vector* const> x, std::vector<Matrix>* jac,
               const std::vector<bool>& need) const override {
    const int n = mech_->n(), m = mech_->m(), d = mech_->d();
    const auto& idxs = mech_->layout().dof_idxs;
    detail::check_dim(*x[0], n, name());
    detail::check_dim(*x[1], n, name());
    detail::check_dim(*x[2], n, name());
    detail::check_dim(*x[3], d, name());
    const auto kin = mech_->kinematics(*x[0], *x[1], *x[2]);
    const Matrix Phi_q = kin.Phi_q();
    Vector e(m + d);
    e << -kin.c + Phi_q * *x[2], pack_dofs(*x[2], idxs) - *x[3];
    if (jac) {
      if (wanted(need, 0)) {
        Matrix J = Matrix::Zero(m + d, n);
        J.topRows(m) = kin.dPhiqq_dq() + kin.Phiqq_v();
        (*jac)[0] = std::move(J);
      }
      if (wanted(need, 1)) {
        Matrix J = Matrix::Zero(m + d, n);
        J.topRows(m) = 2.0 * kin.dPhi_q();
        (*jac)[1] = std::move(J);
      }
      if (wanted(need, 2)) {
        Matrix J(m + d, n);
        J << Phi_q, detail::selection(idxs, n);
        (*jac)[2] = std::move(J);
      }
      if (wanted(need, 3)) {
        Matrix J = Matrix::Zero(m + d, d);
        J.bottomRows(d) = -Matrix::Identity(d, d);
        (*jac)[3] = std::move(J);
      }
    }
    return e;
  }

 private:
  MechanismPtr mech_;
};

/// Forward (keys q, dq, ddq) or inverse (keys q, dq, ddq, Q) dynamics in
/// dependent coordinates: e = ddq(q, dq, F) - ddq_t with
/// F = gravity(q) + external [+ Q]. Jacobians w.r.t. q, dq, Q are numerical.
class DepDynamicsFactor final : public Factor {
 public:
  DepDynamicsFactor(MechanismPtr mech, VariableKey q, VariableKey dq, VariableKey ddq,
                    Vector external, NoiseModel noise)
      : Factor({q, dq, ddq}, std::move(noise)), mech_(std::move(mech)),
        external_(std::move(external)) {
    init();
  }
  DepDynamicsFactor(MechanismPtr mech, VariableKey q, VariableKey dq, VariableKey ddq,
                    VariableKey Q, Vector external, NoiseModel noise)
      : Factor({q, dq, ddq, Q}, std::move(noise)), mech_(std::move(mech)),
        external_(std::move(external)), inverse_(true) {
    init();
  }
  std::string_view name() const override {
    return inverse_ ? "dep-inverse-dynamics" : "dep-dynamics";
  }
  bool inverse() const { return inverse_; }

  Vector accel(const Vector& q, const Vector& dq, const Vector* Q) const {
    Vector F = mech_->gravity_forces(q) + external_;
    if (Q) F += *Q;
    return mech_->accel_dep(q, dq, F).ddq;
  }

  Vector error(std::span<const Vector* const> x, std::vector<Matrix>* jac,
               const std::vector<bool>& need) const override {
    const int n = mech_->n();
    for (const auto* v : x) detail::check_dim(*v, n, name());
    const Vector* Q = inverse_ ? x[3] : nullptr;
    const Vector e = accel(*x[0], *x[1], Q) - *x[2];
    if (jac) {
      if (wanted(need, 0))
        (*jac)[0] = numerical_jacobian([&](const Vector& q) { return accel(q, *x[1], Q); }, *x[0]);
      if (wanted(need, 1))
        (*jac)[1] = numerical_jacobian([&](const Vector& dq) { return accel(*x[0], dq, Q); }, *x[1]);
      if (wanted(need, 2)) (*jac)[2] = -Matrix::Identity(n, n);
      if (inverse_ && wanted(need, 3))
        (*jac)[3] = numerical_jacobian([&](const Vector& f) { return accel(*x[0], *x[1], &f); }, *x[3]);
    }
    return e;
  }

 private:
  void init() {
    if (external_.size() == 0) external_ = Vector::Zero(mech_->n());
    detail::check_dim(external_, mech_->n(), "dynamics external force");
  }

  MechanismPtr mech_;
  Vector external_;
  bool inverse_ = false;
};

/// Forward (keys z, dz, ddz, q) or inverse (keys z, dz, ddz, q, Q) dynamics in
/// independent coordinates. The companion q supplies the non-dof coordinates
/// needed by R, c and Gamma; its dof slots are overwritten with z and the
/// dependent velocity is rebuilt as R dz.
class IndepDynamicsFactor final : public Factor {
 public:
  IndepDynamicsFactor(MechanismPtr mech, VariableKey z, VariableKey dz, VariableKey ddz,
                      VariableKey q, Vector external, NoiseModel noise)
      : Factor({z, dz, ddz, q}, std::move(noise)), mech_(std::move(mech)),
        external_(std::move(external)) {
    init();
  }
  IndepDynamicsFactor(MechanismPtr mech, VariableKey z, VariableKey dz, VariableKey ddz,
                      VariableKey q, VariableKey Q, Vector external, NoiseModel noise)
      : Factor({z, dz, ddz, q, Q}, std::move(noise)), mech_(std::move(mech)),
        external_(std::move(external)), inverse_(true) {
    init();
  }
  std::string_view name() const override {
    return inverse_ ? "indep-inverse-dynamics" : "indep-dynamics";
  }

  Vector accel(const Vector& z, const Vector& dz, const Vector& q, const Vector* Q) const {
    const auto& layout = mech_->layout();
    const Vector qe = scatter_dofs(q, layout.dof_idxs, z);
    const VelocityMap vm(mech_->kinematics(qe), layout.dof_idxs);
    const Vector dq = vm.solve(Vector::Zero(mech_->m()), dz);
    Vector F = mech_->gravity_forces(qe) + external_;
    if (Q) F += *Q;
    return forward_accel_indep(mech_->mass_matrix(), mech_->kinematics(qe, dq), layout, F).ddz;
  }

  Vector error(std::span<const Vector* const> x, std::vector<Matrix>* jac,
               const std::vector<bool>& need) const override {
    const int n = mech_->n(), d = mech_->d();
    detail::check_dim(*x[0], d, name());
    detail::check_dim(*x[1], d, name());
    detail::check_dim(*x[2], d, name());
    detail::check_dim(*x[3], n, name());
    const Vector* Q = inverse_ ? x[4] : nullptr;
    if (Q) detail::check_dim(*Q, n, name());
    const Vector e = accel(*x[0], *x[1], *x[3], Q) - *x[2];
    if (jac) {
      if (wanted(need, 0))
        (*jac)[0] = numerical_jacobian(
            [&](const Vector& z) { return accel(z, *x[1], *x[3], Q); }, *x[0]);
      if (wanted(need, 1))
        (*jac)[1] = numerical_jacobian(
            [&](const Vector& dz) { return accel(*x[0], dz, *x[3], Q); }, *x[1]);
      if (wanted(need, 2)) (*jac)[2] = -Matrix::Identity(d, d);
      if (wanted(need, 3))
        (*jac)[3] = numerical_jacobian(
            [&](const Vector& q) { return accel(*x[0], *x[1], q, Q); }, *x[3]);
      if (inverse_ && wanted(need, 4))
        (*jac)[4] = numerical_jacobian(
            [&](const Vector& f) { return accel(*x[0], *x[1], *x[3], &f); }, *x[4]);
    }
    return e;
  }

 private:
  void init() {
    if (external_.size() == 0) external_ = Vector::Zero(mech_->n());
    detail::check_dim(external_, mech_->n(), "dynamics external force");
  }

  MechanismPtr mech_;
  Vector external_;
  bool inverse_ = false;
};

}  // namespace mbfg
