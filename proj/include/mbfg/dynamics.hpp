#pragma once

// Closed-form accelerations in dependent and independent coordinates, the
// velocity map R / S, and the position and velocity problems.

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>

#include "mbfg/constraint_blocks.hpp"

namespace mbfg {

struct DepDynResult {
  Vector ddq;
  std::optional<Vector> lambda;  // only when requested
  Matrix Gamma;
};

struct IndepDynResult {
  Vector ddz;
  Matrix R;
  Vector S_times_c;
  Matrix Mbar;
  Vector Qbar;
};

namespace detail {

inline Eigen::LLT<Matrix> factor_mass(const Matrix& M) {
  Eigen::LLT<Matrix> llt(M);
  if (llt.info() != Eigen::Success)
    throw ConfigurationError("mass matrix is not symmetric positive definite");
  return llt;
}

// Index of the first constraint row that is linearly dependent on the ones
// before it in pivoting order.
inline int dependent_constraint_row(const Matrix& Phi_q) {
  Eigen::ColPivHouseholderQR<Matrix> qr(Phi_q.transpose());
  qr.setThreshold(1e-10);
  const auto rank = qr.rank();
  if (rank >= Phi_q.rows()) return -1;
  return qr.colsPermutation().indices()[rank];
}

}  // namespace detail

/// ddq = (M^-1 - M^-1 Phi_q' Gamma^-1 Phi_q M^-1) F + M^-1 Phi_q' Gamma^-1 c,
/// with Gamma = Phi_q M^-1 Phi_q'. Gamma is factorized, never inverted.
inline DepDynResult forward_accel_dep(const Matrix& M, const AssembledKinematics& kin,
                                      const Vector& F, bool with_lambda = false) {
  const auto mllt = detail::factor_mass(M);
  DepDynResult out;
  if (kin.m() == 0) {
    out.ddq = mllt.solve(F);
    out.Gamma.resize(0, 0);
    if (with_lambda) out.lambda = Vector(0);
    return out;
  }
  const Matrix Phi_q = kin.Phi_q();
  const Matrix MinvPt = mllt.solve(Phi_q.transpose());
  out.Gamma = Phi_q * MinvPt;
  Eigen::LDLT<Matrix> gamma(out.Gamma);
  if (gamma.info() != Eigen::Success || gamma.rcond() < 1e-13 ||
      !(gamma.vectorD().array() > 0.0).all()) {
    const int row = detail::dependent_constraint_row(Phi_q);
    throw SingularConfigurationError(
        row, "singular configuration: constraint row " + std::to_string(row) +
                 " is linearly dependent (Gamma not invertible)");
  }
  const Vector MinvF = mllt.solve(F);
  const Vector lambda = gamma.solve(Phi_q * MinvF - kin.c);
  out.ddq = MinvF - MinvPt * lambda;
  if (with_lambda) out.lambda = lambda;
  return out;
}

/// Direct dense solve of the augmented system [M Phi_q'; Phi_q 0][ddq; lambda]
/// = [F; c]. Used as the reference route for forward_accel_dep and by the
/// oracle integrator.
inline std::pair<Vector, Vector> solve_kkt(const Matrix& M, const Matrix& Phi_q, const Vector& F,
                                           const Vector& c) {
  const auto n = M.rows(), m = Phi_q.rows();
  Matrix K = Matrix::Zero(n + m, n + m);
  K.topLeftCorner(n, n) = M;
  K.topRightCorner(n, m) = Phi_q.transpose();
  K.bottomLeftCorner(m, n) = Phi_q;
  Vector rhs(n + m);
  rhs << F, c;
  Eigen::FullPivLU<Matrix> lu(K);
  if (!lu.isInvertible()) {
    const int row = detail::dependent_constraint_row(Phi_q);
    throw SingularConfigurationError(row, "singular augmented system");
  }
  const Vector sol = lu.solve(rhs);
  return {sol.head(n), sol.tail(m)};
}

/// Factorized [Phi_q; B] with B the selection rows of the dof indices.
/// R = [Phi_q; B]^-1 [0; I_d] and S w = [Phi_q; B]^-1 [w; 0].
class VelocityMap {
 public:
  VelocityMap(const AssembledKinematics& kin, std::span<const int> dof_idxs)
      : m_(kin.m()), d_(static_cast<int>(dof_idxs.size())) {
    const int n = kin.n;
    if (m_ + d_ != n)
      throw ConfigurationError("[Phi_q; B] is not square: m + d = " + std::to_string(m_ + d_) +
                               ", n = " + std::to_string(n));
    Matrix A = Matrix::Zero(n, n);
    A.topRows(m_) = kin.Phi_q();
    for (int k = 0; k < d_; ++k) A(m_ + k, dof_idxs[static_cast<std::size_t>(k)]) = 1.0;
    lu_.compute(A);
    lu_.setThreshold(1e-11);
    if (!lu_.isInvertible())
      throw BadDofChoiceError(
          "the declared independent coordinates cannot parameterize this configuration");
    Matrix rhs = Matrix::Zero(n, d_);
    rhs.bottomRows(d_).setIdentity();
    R_ = lu_.solve(rhs);
  }

  const Matrix& R() const { return R_; }

  Vector apply_S(const Vector& w) const {
    Vector rhs = Vector::Zero(m_ + d_);
    rhs.head(m_) = w;
    return lu_.solve(rhs);
  }

  /// Solves [Phi_q; B] x = [top; bottom].
  Vector solve(const Vector& top, const Vector& bottom) const {
    Vector rhs(m_ + d_);
    rhs << top, bottom;
    return lu_.solve(rhs);
  }

 private:
  int m_, d_;
  Eigen::FullPivLU<Matrix> lu_;
  Matrix R_;
};

inline VelocityMap compute_R(const AssembledKinematics& kin, const CoordinateLayout& layout) {
  return VelocityMap(kin, layout.dof_idxs);
}

/// ddz = Mbar^-1 Qbar with Mbar = R' M R and Qbar = R' (F - M S c).
inline IndepDynResult forward_accel_indep(const Matrix& M, const AssembledKinematics& kin,
                                          const CoordinateLayout& layout, const Vector& F) {
  const VelocityMap vm = compute_R(kin, layout);
  IndepDynResult out;
  out.R = vm.R();
  out.S_times_c = vm.apply_S(kin.c);
  out.Mbar = out.R.transpose() * M * out.R;
  out.Qbar = out.R.transpose() * (F - M * out.S_times_c);
  Eigen::LLT<Matrix> llt(out.Mbar);
  if (llt.info() != Eigen::Success)
    throw SingularConfigurationError(-1, "reduced mass matrix R'MR is singular");
  out.ddz = llt.solve(out.Qbar);
  return out;
}

struct PositionResult {
  Vector q;
  int iterations = 0;
};

inline constexpr int kPositionMaxIterations = 50;
inline constexpr double kPositionTolerance = 1e-12;

/// Newton iteration on [Phi(q); q(locked) - values] = 0 with a step-halving
/// line search on the residual norm (at most 8 halvings per step).
inline PositionResult solve_position_problem(std::span<const ConstraintBlock> blocks,
                                             const CoordinateLayout& layout, const Vector& q_guess,
                                             std::span<const int> locked_idxs,
                                             const Vector& locked_values) {
  if (static_cast<Eigen::Index>(locked_idxs.size()) != locked_values.size())
    throw DimensionMismatchError("locked indices and values differ in size");
  const int n = layout.n;
  const int m = static_cast<int>(blocks.size());
  const int nl = static_cast<int>(locked_idxs.size());
  if (m + nl != n)
    throw ConfigurationError("position problem needs m + locked = n");

  Vector q = scatter_dofs(q_guess, locked_idxs, locked_values);
  const Vector none;
  auto residual = [&](const Vector& x) {
    Vector r(n);
    r.head(m) = assemble_unchecked(blocks, n, x, none, none).phi;
    for (int k = 0; k < nl; ++k)
      r[m + k] = x[locked_idxs[static_cast<std::size_t>(k)]] - locked_values[k];
    return r;
  };

  Vector r = residual(q);
  for (int it = 0; it <= kPositionMaxIterations; ++it) {
    if (r.lpNorm<Eigen::Infinity>() < kPositionTolerance) return {q, it};
    if (it == kPositionMaxIterations) break;
    Matrix J = Matrix::Zero(n, n);
    J.topRows(m) = assemble_unchecked(blocks, n, q, none, none).Phi_q();
    for (int k = 0; k < nl; ++k) J(m + k, locked_idxs[static_cast<std::size_t>(k)]) = 1.0;
    Eigen::FullPivLU<Matrix> lu(J);
    lu.setThreshold(1e-12);
    if (!lu.isInvertible()) {
      if (it == 0)
        throw SingularConfigurationError(detail::dependent_constraint_row(J.topRows(m)),
                                         "position problem: singular constraint Jacobian");
      throw PositionProblemDiverged("position problem: Jacobian became singular at iteration " +
                                    std::to_string(it));
    }
    const Vector step = -lu.solve(r);
    double alpha = 1.0;
    bool accepted = false;
    for (int h = 0; h <= 8; ++h, alpha *= 0.5) {
      const Vector trial = q + alpha * step;
      const Vector rt = residual(trial);
      if (rt.norm() < r.norm()) {
        q = trial;
        r = rt;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // Converged to round-off rather than diverged?
      if (r.lpNorm<Eigen::Infinity>() < 1e3 * kPositionTolerance) return {q, it + 1};
      throw PositionProblemDiverged("position problem: line search failed at iteration " +
                                    std::to_string(it));
    }
  }
  throw PositionProblemDiverged("position problem did not converge in " +
                                std::to_string(kPositionMaxIterations) + " iterations");
}

/// dq = S b + R dz with b = 0.
inline Vector solve_velocity_problem(const AssembledKinematics& kin,
                                     const CoordinateLayout& layout, const Vector& dz) {
  const VelocityMap vm = compute_R(kin, layout);
  return vm.solve(kin.b, dz);
}

}  // namespace mbfg
