#pragma once

// Sparse nonlinear least squares over a factor graph: linearization,
// Levenberg-Marquardt and marginal covariances.

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <vector>

#include "mbfg/factor_graph.hpp"

namespace mbfg {

/// Column layout of the free variables, lexicographic in (timestep, kind).
class Ordering {
 public:
  Ordering() = default;
  explicit Ordering(const std::map<VariableKey, int>& dims) {
    for (const auto& [k, d] : dims) push(k, d);
  }
  void push(const VariableKey& k, int dim) {
    index_.emplace(k, static_cast<int>(keys_.size()));
    keys_.push_back(k);
    offsets_.push_back(total_);
    dims_.push_back(dim);
    total_ += dim;
  }
  bool contains(const VariableKey& k) const { return index_.count(k) > 0; }
  int offset(const VariableKey& k) const { return offsets_[static_cast<std::size_t>(index_.at(k))]; }
  int dim(const VariableKey& k) const { return dims_[static_cast<std::size_t>(index_.at(k))]; }
  int total() const { return total_; }
  const std::vector<VariableKey>& keys() const { return keys_; }

  /// Human-readable name of column `col`, e.g. "q_3[2]".
  std::string column_name(int col) const {
    for (std::size_t i = keys_.size(); i-- > 0;)
      if (col >= offsets_[i])
        return keys_[i].str() + "[" + std::to_string(col - offsets_[i]) + "]";
    return "?";
  }

 private:
  std::vector<VariableKey> keys_;
  std::vector<int> offsets_;
  std::vector<int> dims_;
  std::map<VariableKey, int> index_;
  int total_ = 0;
};

/// Whitened sparse system: J = Lambda^{1/2} de/dx, r = Lambda^{1/2} e.
struct LinearSystem {
  Eigen::SparseMatrix<double> J;
  Vector r;
  Ordering ordering;
  double cost() const { return 0.5 * r.squaredNorm(); }
};

/// Linearizes `factors` at `values`; only keys in `ordering` get columns, the
/// others act as constants. Row blocks follow factor order.
inline LinearSystem linearize(std::span<const FactorPtr> factors, const Values& values,
                              const Ordering& ordering) {
  int rows = 0;
  for (const auto& f : factors) rows += f->dim();
  LinearSystem sys;
  sys.ordering = ordering;
  sys.r.resize(rows);
  std::vector<Eigen::Triplet<double>> trip;
  std::vector<const Vector*> x;
  std::vector<bool> need;
  std::vector<Matrix> jac;
  int row = 0;
  for (std::size_t fi = 0; fi < factors.size(); ++fi) {
    const Factor& f = *factors[fi];
    const auto& keys = f.keys();
    x.clear();
    need.assign(keys.size(), false);
    for (std::size_t i = 0; i < keys.size(); ++i) {
      x.push_back(&values.at(keys[i]));
      need[i] = ordering.contains(keys[i]);
    }
    jac.assign(keys.size(), Matrix());
    Vector e;
    try {
      e = f.error(x, &jac, need);
    } catch (const Error& ex) {
      throw FactorEvaluationError(fi, std::string(f.name()) + ": " + ex.what());
    }
    if (e.size() != f.dim())
      throw FactorEvaluationError(fi, std::string(f.name()) + ": error has wrong dimension");
    const Vector& s = f.noise().sqrt_information();
    sys.r.segment(row, f.dim()) = s.cwiseProduct(e);
    for (std::size_t i = 0; i < keys.size(); ++i) {
      if (!need[i]) continue;
      const int col0 = ordering.offset(keys[i]);
      const Matrix& Ji = jac[i];
      if (Ji.rows() != f.dim() || Ji.cols() != ordering.dim(keys[i]))
        throw FactorEvaluationError(fi, std::string(f.name()) + ": Jacobian block for " +
                                            keys[i].str() + " has wrong shape");
      for (Eigen::Index c = 0; c < Ji.cols(); ++c)
        for (Eigen::Index r = 0; r < Ji.rows(); ++r)
          trip.emplace_back(row + static_cast<int>(r), col0 + static_cast<int>(c), s[r] * Ji(r, c));
    }
    row += f.dim();
  }
  sys.J.resize(rows, ordering.total());
  sys.J.setFromTriplets(trip.begin(), trip.end());
  return sys;
}

inline LinearSystem linearize(const FactorGraph& graph, const Values& values) {
  return linearize(graph.factors(), values, Ordering(graph.variables()));
}

inline double total_cost(std::span<const FactorPtr> factors, const Values& values) {
  double c = 0.0;
  for (std::size_t fi = 0; fi < factors.size(); ++fi) {
    try {
      c += factors[fi]->cost(values);
    } catch (const Error& ex) {
      throw FactorEvaluationError(fi, std::string(factors[fi]->name()) + ": " + ex.what());
    }
  }
  return c;
}

struct LMIteration {
  int iteration;
  double cost;
  double lambda;
  double step_norm;
};

struct LMConfig {
  int max_iterations = 15;
  double lambda_initial = 1e-5;
  double lambda_up = 10.0;
  double lambda_down = 0.1;
  double lambda_max = 1e10;
  double relative_decrease_tol = 1e-9;
  double gradient_tol = 1e-10;
  /// Costs at or below this are treated as an exact fit.
  double absolute_cost_tol = 1e-20;
  /// Stop once ||step|| <= step_tol (||x|| + step_tol) over the free variables.
  double step_tol = 1e-10;
  std::function<void(const LMIteration&)> sink;
};

struct LMSummary {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct LMResult {
  Values values;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline void apply_step(Values& values, const Ordering& ordering, const Vector& delta) {
  for (const auto& k : ordering.keys())
    values.update(k, values.at(k) + delta.segment(ordering.offset(k), ordering.dim(k)));
}

}  // namespace detail

/// Levenberg-Marquardt on the keys of `ordering`, in place. An iteration is
/// one accepted step (after any number of rejected, re-damped attempts).
/// Accepted steps never increase the cost; rejected steps leave `values`
/// untouched.
inline LMSummary optimize_lm_inplace(std::span<const FactorPtr> factors, Values& values,
                                     const Ordering& ordering, const LMConfig& cfg) {
  LMSummary out;
  LinearSystem sys = linearize(factors, values, ordering);
  double cost = sys.cost();
  out.initial_cost = out.final_cost = cost;
  if (ordering.total() == 0 || cost <= cfg.absolute_cost_tol) {
    out.converged = true;
    return out;
  }

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  bool analyzed = false;
  double lambda = cfg.lambda_initial;

  for (int it = 1; it <= cfg.max_iterations; ++it) {
    const Eigen::SparseMatrix<double> Jt = sys.J.transpose();
    const Vector g = Jt * sys.r;
    if (g.lpNorm<Eigen::Infinity>() < cfg.gradient_tol) {
      out.converged = true;
      break;
    }
    Eigen::SparseMatrix<double> H = Jt * sys.J;
    H.makeCompressed();
    if (!analyzed) {
      // Make sure every diagonal entry is structurally present.
      Eigen::SparseMatrix<double> I(H.rows(), H.cols());
      I.setIdentity();
      H = H + 0.0 * I;
      ldlt.analyzePattern(H);
      analyzed = true;
    }

    std::vector<Vector> backup;
    backup.reserve(ordering.keys().size());
    for (const auto& k : ordering.keys()) backup.push_back(values.at(k));

    bool accepted = false;
    double new_cost = cost;
    double step_norm = 0.0;
    while (true) {
      Eigen::SparseMatrix<double> A = H;
      for (Eigen::Index i = 0; i < A.rows(); ++i) A.coeffRef(i, i) += lambda;
      ldlt.factorize(A);
      const bool ok = ldlt.info() == Eigen::Success && (ldlt.vectorD().array() > 0.0).all();
      if (!ok) {
        lambda *= cfg.lambda_up;
        if (lambda > cfg.lambda_max)
          throw SolverDivergedError("normal equations could not be factorized (lambda > " +
                                    std::to_string(cfg.lambda_max) + ")");
        continue;
      }
      const Vector delta = ldlt.solve(-g);
      if (!delta.allFinite()) {
        lambda *= cfg.lambda_up;
        if (lambda > cfg.lambda_max) throw SolverDivergedError("non-finite LM step");
        continue;
      }
      detail::apply_step(values, ordering, delta);
      double trial = std::numeric_limits<double>::infinity();
      try {
        trial = total_cost(factors, values);
      } catch (const Error&) {
        // treated as a rejected step
      }
      if (std::isfinite(trial) && trial <= cost) {
        accepted = true;
        new_cost = trial;
        step_norm = delta.norm();
        lambda = std::max(lambda * cfg.lambda_down, 1e-12);
        break;
      }
      std::size_t i = 0;
      for (const auto& k : ordering.keys()) values.update(k, backup[i++]);
      lambda *= cfg.lambda_up;
      if (lambda > cfg.lambda_max) break;  // cannot improve further
    }
    if (!accepted) {
      out.converged = true;  // stalled at the best point found
      break;
    }
    out.iterations = it;
    if (cfg.sink) cfg.sink({it, new_cost, lambda, step_norm});
    const double rel = (cost - new_cost) / cost;
    cost = new_cost;
    double x_norm2 = 0.0;
    for (const auto& k : ordering.keys()) x_norm2 += values.at(k).squaredNorm();
    const bool tiny_step = step_norm <= cfg.step_tol * (std::sqrt(x_norm2) + cfg.step_tol);
    if (cost <= cfg.absolute_cost_tol || rel < cfg.relative_decrease_tol || tiny_step) {
      out.converged = true;
      break;
    }
    if (it < cfg.max_iterations) sys = linearize(factors, values, ordering);
  }
  out.final_cost = cost;
  return out;
}

inline LMResult optimize_lm(std::span<const FactorPtr> factors, Values init,
                            const Ordering& ordering, const LMConfig& cfg = {}) {
  const LMSummary s = optimize_lm_inplace(factors, init, ordering, cfg);
  return {std::move(init), s.initial_cost, s.final_cost, s.iterations, s.converged};
}

inline LMResult optimize_lm(const FactorGraph& graph, Values init, const LMConfig& cfg = {}) {
  for (const auto& [k, d] : graph.variables()) {
    if (!init.contains(k)) throw ConfigurationError("initial values miss " + k.str());
    if (init.at(k).size() != d)
      throw DimensionMismatchError("initial value of " + k.str() + " has wrong dimension");
  }
  return optimize_lm(graph.factors(), std::move(init), Ordering(graph.variables()), cfg);
}

/// Joint covariance of a set of keys, extracted from (J' Lambda J)^-1.
struct MarginalCovariance {
  Ordering ordering;  // layout of `joint`
  Matrix joint;
  Matrix block(const VariableKey& k) const {
    const int o = ordering.offset(k), d = ordering.dim(k);
    return joint.block(o, o, d, d);
  }
};

inline MarginalCovariance marginal_covariance(const FactorGraph& graph, const Values& values,
                                              std::span<const VariableKey> keys) {
  const LinearSystem sys = linearize(graph, values);
  const Eigen::SparseMatrix<double> H = sys.J.transpose() * sys.J;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(H);
  const int N = sys.ordering.total();
  bool singular = ldlt.info() != Eigen::Success;
  if (!singular) {
    const Vector D = ldlt.vectorD();
    const double dmax = D.cwiseAbs().maxCoeff();
    singular = !(D.array() > 1e-14 * dmax).all();
  }
  if (singular) {
    Eigen::SelfAdjointEigenSolver<Matrix> es{Matrix(H)};
    const Vector ev = es.eigenvalues();
    const double emax = ev.cwiseAbs().maxCoeff();
    std::vector<std::string> dirs;
    for (int i = 0; i < N; ++i) {
      if (ev[i] > 1e-14 * emax) continue;
      std::ostringstream os;
      const Vector v = es.eigenvectors().col(i);
      bool first = true;
      for (int c = 0; c < N; ++c) {
        if (std::abs(v[c]) < 1e-6) continue;
        os << (first ? "" : " + ") << v[c] << "*" << sys.ordering.column_name(c);
        first = false;
      }
      dirs.push_back(os.str());
    }
    throw RankDeficiencyError(dirs, "information matrix is singular (" +
                                        std::to_string(dirs.size()) + " null directions)");
  }
  MarginalCovariance out;
  for (const auto& k : keys) out.ordering.push(k, sys.ordering.dim(k));
  Matrix E = Matrix::Zero(N, out.ordering.total());
  for (const auto& k : keys) {
    const int src = sys.ordering.offset(k), dst = out.ordering.offset(k);
    for (int i = 0; i < sys.ordering.dim(k); ++i) E(src + i, dst + i) = 1.0;
  }
  const Matrix X = ldlt.solve(E);
  out.joint = E.transpose() * X;
  out.joint = 0.5 * (out.joint + out.joint.transpose()).eval();
  return out;
}

}  // namespace mbfg
