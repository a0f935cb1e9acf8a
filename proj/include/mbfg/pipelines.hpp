#pragma once

// Simulation pipelines built on the factor graph: forward dynamics in
// dependent or independent coordinates (fixed-lag), staged batch inverse
// dynamics, the classical reference integrator, and trajectory metrics.

#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mbfg/factors.hpp"
#include "mbfg/fixed_lag.hpp"
#include "mbfg/solver.hpp"

namespace mbfg {

enum class Formulation { Dependent, Independent };
enum class TrajectoryField { q, dq, ddq, Q };

inline const char* to_string(Formulation f) {
  return f == Formulation::Dependent ? "dep" : "indep";
}

/// Uniformly sampled states starting at t = 0; Q is empty for forward runs.
struct Trajectory {
  double dt = 0.0;
  std::vector<double> t;
  std::vector<Vector> q, dq, ddq, Q;
  /// Free-form key/value annotations (config echo, solver statistics).
  std::vector<std::pair<std::string, std::string>> meta;
  /// LM iterations used by each solve (fixed-lag window or batch stage).
  std::vector<int> solver_iterations;

  std::size_t size() const { return t.size(); }
  bool has_forces() const { return !Q.empty(); }
  int n() const { return q.empty() ? 0 : static_cast<int>(q.front().size()); }

  void push(double time, Vector qi, Vector dqi, Vector ddqi, const Vector* Qi = nullptr) {
    t.push_back(time);
    q.push_back(std::move(qi));
    dq.push_back(std::move(dqi));
    ddq.push_back(std::move(ddqi));
    if (Qi) Q.push_back(*Qi);
  }

  void set_meta(const std::string& key, const std::string& value) {
    for (auto& [k, v] : meta)
      if (k == key) {
        v = value;
        return;
      }
    meta.emplace_back(key, value);
  }
  std::optional<std::string> get_meta(std::string_view key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return v;
    return std::nullopt;
  }

  const std::vector<Vector>& field(TrajectoryField f) const {
    switch (f) {
      case TrajectoryField::q: return q;
      case TrajectoryField::dq: return dq;
      case TrajectoryField::ddq: return ddq;
      case TrajectoryField::Q: return Q;
    }
    return q;
  }
};

/// Variances of every factor family; defaults follow the reference setup.
struct NoiseConfig {
  double prior_q0 = kSurrogateVariance;
  double prior_dq0 = kSurrogateVariance;
  double integrator = 1e-2;
  double dynamics = 1e-4;
  double constraints = kSurrogateVariance;
  double soft_equality = 1e2;
  /// Independent pipeline: diagonal prior on q0, dof slots vs the rest.
  double prior_q0_dof = 1e-3;
  double prior_q0_other = 1.0;
  /// Inverse pipeline: prior pinning q(dofs) to the reference curve.
  double prior_reference = kSurrogateVariance;
  /// Inverse pipeline: zero prior on non-actuated force components.
  double prior_forces = kSurrogateVariance;

  static const std::vector<std::pair<std::string, double NoiseConfig::*>>& fields() {
    static const std::vector<std::pair<std::string, double NoiseConfig::*>> f = {
        {"prior_q0", &NoiseConfig::prior_q0},
        {"prior_dq0", &NoiseConfig::prior_dq0},
        {"integrator", &NoiseConfig::integrator},
        {"dynamics", &NoiseConfig::dynamics},
        {"constraints", &NoiseConfig::constraints},
        {"soft_equality", &NoiseConfig::soft_equality},
        {"prior_q0_dof", &NoiseConfig::prior_q0_dof},
        {"prior_q0_other", &NoiseConfig::prior_q0_other},
        {"prior_reference", &NoiseConfig::prior_reference},
        {"prior_forces", &NoiseConfig::prior_forces},
    };
    return f;
  }

  void set(std::string_view key, double variance) {
    if (!(variance > 0.0) || !std::isfinite(variance))
      throw ConfigurationError("noise '" + std::string(key) + "' must be a positive variance");
    for (const auto& [name, member] : fields())
      if (name == key) {
        this->*member = variance;
        return;
      }
    throw ConfigurationError("unknown noise key '" + std::string(key) + "'");
  }
  double get(std::string_view key) const {
    for (const auto& [name, member] : fields())
      if (name == key) return this->*member;
    throw ConfigurationError("unknown noise key '" + std::string(key) + "'");
  }
};

using ForceSchedule = std::function<Vector(double)>;

struct ForwardConfig {
  double T_end = 5.0;
  double dt = 1e-3;
  int window = 2;
  Formulation formulation = Formulation::Dependent;
  /// Initial state: q0/dq0 when given, otherwise assembled from z0/dz0
  /// (defaults: the description's relative-coordinate values, zero speed).
  std::optional<Vector> q0, dq0, z0, dz0;
  ForceSchedule external;  // extra generalized forces besides gravity
  NoiseConfig noise;
  LMConfig lm;
};

struct InverseConfig {
  double T_end = 5.0;
  double dt = 1e-3;
  /// Desired z at every timestep 0..round(T_end/dt).
  std::vector<Vector> z_ref;
  /// Coordinates whose generalized force is left free.
  std::vector<int> actuated;
  /// Initial dz; defaults to a second-order one-sided difference of z_ref.
  std::optional<Vector> dz0;
  ForceSchedule external;
  NoiseConfig noise;
  LMConfig lm;
};

/// Pipeline failure. `timestep` is the failing step (forward) and `stage` the
/// failing stage (inverse, 1-4; 0 for forward). `prefix` holds the last good
/// part of the trajectory.
class PipelineError : public Error {
 public:
  PipelineError(int timestep, int stage, Trajectory prefix, const std::string& what)
      : Error(what), timestep_(timestep), stage_(stage), prefix_(std::move(prefix)) {}
  int timestep() const { return timestep_; }
  int stage() const { return stage_; }
  const Trajectory& prefix() const { return prefix_; }

 private:
  int timestep_;
  int stage_;
  Trajectory prefix_;
};

inline int step_count(double T_end, double dt) {
  if (!(dt > 0.0)) throw ConfigurationError("dt must be > 0");
  if (!(T_end >= 0.0)) throw ConfigurationError("T must be >= 0");
  const double k = T_end / dt;
  const long long K = std::llround(k);
  if (std::abs(k - static_cast<double>(K)) > 1e-6 * std::max(1.0, k))
    throw ConfigurationError("T is not a whole number of steps of dt");
  return static_cast<int>(K);
}

inline Vector external_at(const ForceSchedule& f, double t, int n) {
  if (!f) return Vector::Zero(n);
  Vector F = f(t);
  if (F.size() != n) throw DimensionMismatchError("external force has wrong dimension");
  return F;
}

/// Consistent (q0, dq0) from the config, solving the position and velocity
/// problems when only independent values are given.
inline std::pair<Vector, Vector> initial_state(const MechanismSystem& sys,
                                               const std::optional<Vector>& q0,
                                               const std::optional<Vector>& dq0,
                                               const std::optional<Vector>& z0,
                                               const std::optional<Vector>& dz0) {
  const auto& layout = sys.layout();
  Vector q;
  if (q0) {
    detail::check_dim(*q0, sys.n(), "q0");
    q = *q0;
  } else {
    const Vector guess = sys.initial_guess();
    const Vector z = z0 ? *z0 : pack_dofs(guess, layout.dof_idxs);
    q = sys.assemble_at(guess, z);
  }
  Vector dq;
  if (dq0) {
    detail::check_dim(*dq0, sys.n(), "dq0");
    dq = *dq0;
  } else {
    const Vector dz = dz0 ? *dz0 : Vector::Zero(sys.d());
    dq = solve_velocity_problem(sys.kinematics(q), layout, dz);
  }
  const auto kin = sys.kinematics(q);
  if (kin.phi.lpNorm<Eigen::Infinity>() > 1e-8)
    throw ConfigurationError("initial position violates the constraints");
  if ((kin.Phi_q() * dq).lpNorm<Eigen::Infinity>() > 1e-8)
    throw ConfigurationError("initial velocity violates the constraints");
  return {q, dq};
}

namespace detail {

inline void summarize_iterations(Trajectory& tr) {
  const auto& it = tr.solver_iterations;
  if (it.empty()) return;
  long total = 0;
  int mx = 0, le5 = 0;
  for (int i : it) {
    total += i;
    mx = std::max(mx, i);
    le5 += i <= 5 ? 1 : 0;
  }
  tr.set_meta("iterations", std::to_string(total));
  tr.set_meta("solves", std::to_string(it.size()));
  tr.set_meta("iterations_max", std::to_string(mx));
  tr.set_meta("iterations_le5_fraction",
              std::to_string(static_cast<double>(le5) / static_cast<double>(it.size())));
}

inline void annotate_constraints(const MechanismSystem& sys, Trajectory& tr) {
  double phi = 0.0, vel = 0.0;
  for (std::size_t k = 0; k < tr.size(); ++k) {
    const auto kin = sys.kinematics(tr.q[k]);
    phi = std::max(phi, kin.phi.lpNorm<Eigen::Infinity>());
    vel = std::max(vel, (kin.Phi_q() * tr.dq[k]).lpNorm<Eigen::Infinity>());
  }
  std::ostringstream a, b;
  a.precision(3);
  b.precision(3);
  a << phi;
  b << vel;
  tr.set_meta("max_phi", a.str());
  tr.set_meta("max_phi_q_dq", b.str());
}

inline Trajectory forward_rows(const MechanismSystem& sys, const Values& v, double dt, int upto,
                               Formulation form) {
  Trajectory tr;
  tr.dt = dt;
  for (int k = 0; k < upto; ++k) {
    const Vector& q = v.at({VarKind::q, k});
    const Vector& dq = v.at({VarKind::dq, k});
    Vector ddq;
    if (form == Formulation::Dependent) {
      ddq = v.at({VarKind::ddq, k});
    } else {
      // ddq = S c + R ddz
      const auto kin = sys.kinematics(q, dq);
      ddq = VelocityMap(kin, sys.layout().dof_idxs).solve(kin.c, v.at({VarKind::ddz, k}));
    }
    tr.push(k * dt, q, dq, std::move(ddq));
  }
  return tr;
}

}  // namespace detail

/// Variables (with predicted initial values) and factors that timestep t adds
/// to the forward graph: the dependent-coordinate roster (q, dq, ddq) or the
/// independent one (q, dq, z, dz, ddz). `solved` must hold step t - 1.
struct GraphIncrement {
  std::vector<std::pair<VariableKey, Vector>> variables;
  std::vector<FactorPtr> factors;
};

inline GraphIncrement forward_increment(const MechanismPtr& mech, const ForwardConfig& cfg, int t,
                                        const Values& solved, const Vector& q0, const Vector& dq0) {
  const MechanismSystem& sys = *mech;
  const int n = sys.n(), d = sys.d();
  const double dt = cfg.dt;
  const auto& nz = cfg.noise;
  const bool dep = cfg.formulation == Formulation::Dependent;
  const auto& idxs = sys.layout().dof_idxs;
  const int mrows = sys.m();
  auto iso = [](int dim, double var) { return NoiseModel::isotropic(dim, var); };
  const Vector F = external_at(cfg.external, t * dt, n);
  GraphIncrement inc;
  auto& vars = inc.variables;
  auto& factors = inc.factors;
  const VariableKey q{VarKind::q, t}, dq{VarKind::dq, t};
  if (dep) {
    const VariableKey ddq{VarKind::ddq, t};
    if (t == 0) {
      vars = {{q, q0}, {dq, dq0}, {ddq, sys.accel_dep(q0, dq0, sys.gravity_forces(q0) + F).ddq}};
      factors.push_back(std::make_shared<PriorFactor>(q, q0, iso(n, nz.prior_q0)));
      factors.push_back(std::make_shared<PriorFactor>(dq, dq0, iso(n, nz.prior_dq0)));
    } else {
      const Values& v = solved;
      const Vector& qp = v.at({VarKind::q, t - 1});
      const Vector& dqp = v.at({VarKind::dq, t - 1});
      vars = {{q, qp + dt * dqp}, {dq, dqp}, {ddq, v.at({VarKind::ddq, t - 1})}};
      factors.push_back(std::make_shared<TrapezoidalIntegratorFactor>(
          VariableKey(VarKind::q, t - 1), q, VariableKey(VarKind::dq, t - 1), dq, dt,
          iso(n, nz.integrator)));
      factors.push_back(std::make_shared<TrapezoidalIntegratorFactor>(
          VariableKey(VarKind::dq, t - 1), dq, VariableKey(VarKind::ddq, t - 1), ddq, dt,
          iso(n, nz.integrator)));
    }
    factors.push_back(std::make_shared<DepPositionConstraintFactor>(mech, q, iso(mrows, nz.constraints)));
    factors.push_back(
        std::make_shared<DepVelocityConstraintFactor>(mech, q, dq, iso(mrows, nz.constraints)));
    factors.push_back(std::make_shared<DepDynamicsFactor>(mech, q, dq, ddq, F, iso(n, nz.dynamics)));
  } else {
    const VariableKey z{VarKind::z, t}, dz{VarKind::dz, t}, ddz{VarKind::ddz, t};
    if (t == 0) {
      const Vector z0 = pack_dofs(q0, idxs), dz0 = pack_dofs(dq0, idxs);
      vars = {{q, q0}, {dq, dq0}, {z, z0}, {dz, dz0},
              {ddz, sys.accel_indep(q0, dq0, sys.gravity_forces(q0) + F).ddz}};
      Vector var = Vector::Constant(n, nz.prior_q0_other);
      for (int i : idxs) var[i] = nz.prior_q0_dof;
      factors.push_back(std::make_shared<PriorFactor>(q, q0, NoiseModel::diagonal(var)));
      factors.push_back(std::make_shared<PriorFactor>(z, z0, iso(d, nz.prior_q0)));
      factors.push_back(std::make_shared<PriorFactor>(dz, dz0, iso(d, nz.prior_dq0)));
    } else {
      const Values& v = solved;
      auto prev = [&](VarKind k) -> const Vector& { return v.at({k, t - 1}); };
      vars = {{q, prev(VarKind::q) + dt * prev(VarKind::dq)},
              {dq, prev(VarKind::dq)},
              {z, prev(VarKind::z) + dt * prev(VarKind::dz)},
              {dz, prev(VarKind::dz)},
              {ddz, prev(VarKind::ddz)}};
      factors.push_back(std::make_shared<TrapezoidalIntegratorFactor>(
          VariableKey(VarKind::z, t - 1), z, VariableKey(VarKind::dz, t - 1), dz, dt,
          iso(d, nz.integrator)));
      factors.push_back(std::make_shared<TrapezoidalIntegratorFactor>(
          VariableKey(VarKind::dz, t - 1), dz, VariableKey(VarKind::ddz, t - 1), ddz, dt,
          iso(d, nz.integrator)));
      factors.push_back(std::make_shared<SoftEqualityFactor>(VariableKey(VarKind::q, t - 1), q,
                                                             iso(n, nz.soft_equality)));
    }
    factors.push_back(
        std::make_shared<IndepPositionConstraintFactor>(mech, q, z, iso(mrows + d, nz.constraints)));
    factors.push_back(std::make_shared<IndepVelocityConstraintFactor>(
        mech, q, dq, dz, iso(mrows + d, nz.constraints)));
    factors.push_back(
        std::make_shared<IndepDynamicsFactor>(mech, z, dz, ddz, q, F, iso(d, nz.dynamics)));
  }
  return inc;
}

/// The whole forward graph over the horizon for a batch solve, with every
/// variable initialized by the predictor.
inline std::pair<FactorGraph, Values> build_forward_graph(const MechanismPtr& mech,
                                                          const ForwardConfig& cfg) {
  const int K = step_count(cfg.T_end, cfg.dt);
  const auto [q0, dq0] = initial_state(*mech, cfg.q0, cfg.dq0, cfg.z0, cfg.dz0);
  FactorGraph graph;
  Values values;
  for (int t = 0; t <= K; ++t) {
    auto inc = forward_increment(mech, cfg, t, values, q0, dq0);
    for (auto& [k, v] : inc.variables) {
      graph.add_variable(k, static_cast<int>(v.size()));
      values.insert(k, std::move(v));
    }
    for (auto& f : inc.factors) graph.add(std::move(f));
  }
  return {std::move(graph), std::move(values)};
}

/// Forward dynamics with a fixed-lag smoother sweeping t = 0..T_end/dt.
inline Trajectory run_forward(const MechanismPtr& mech, const ForwardConfig& cfg) {
  const MechanismSystem& sys = *mech;
  if (cfg.window < 2) throw ConfigurationError("N_w must be >= 2");
  const int K = step_count(cfg.T_end, cfg.dt);
  const double dt = cfg.dt;
  if (cfg.formulation == Formulation::Independent && sys.d() == 0)
    throw ConfigurationError("independent formulation needs declared dofs");
  const auto [q0, dq0] = initial_state(sys, cfg.q0, cfg.dq0, cfg.z0, cfg.dz0);

  FixedLagSmoother smoother(cfg.window, cfg.lm);
  Trajectory out;

  for (int t = 0; t <= K; ++t) {
    const auto [vars, factors] = forward_increment(mech, cfg, t, smoother.values(), q0, dq0);
    try {
      fixed_lag_step(smoother, vars, factors);
    } catch (const ConfigurationError&) {
      throw;
    } catch (const DimensionMismatchError&) {
      throw;
    } catch (const Error& e) {
      Trajectory prefix = detail::forward_rows(sys, smoother.values(), dt, t, cfg.formulation);
      throw PipelineError(t, 0, std::move(prefix),
                          "forward simulation failed at step " + std::to_string(t) + " (t=" +
                              std::to_string(t * dt) + " s): " + e.what());
    }
    out.solver_iterations.push_back(smoother.history().back().iterations);
  }

  Trajectory tr = detail::forward_rows(sys, smoother.values(), dt, K + 1, cfg.formulation);
  tr.solver_iterations = std::move(out.solver_iterations);
  tr.set_meta("pipeline", "forward");
  tr.set_meta("formulation", to_string(cfg.formulation));
  tr.set_meta("dt", std::to_string(dt));
  tr.set_meta("T", std::to_string(cfg.T_end));
  tr.set_meta("Nw", std::to_string(cfg.window));
  detail::summarize_iterations(tr);
  detail::annotate_constraints(sys, tr);
  return tr;
}

/// Samples `f` on the grid 0, dt, ..., T_end as 1-vectors.
inline std::vector<Vector> sample_reference(const std::function<double(double)>& f, double dt,
                                            double T_end) {
  const int K = step_count(T_end, dt);
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(K) + 1);
  for (int k = 0; k <= K; ++k) out.push_back(Vector::Constant(1, f(k * dt)));
  return out;
}

namespace detail {

// Minimum-norm Q supported on `actuated` with ddq(q, dq, F + Q) closest to
// `ddq` (the acceleration is affine in Q).
inline Vector fit_actuated_force(const MechanismSystem& sys, const Vector& q, const Vector& dq,
                                 const Vector& ddq, const Vector& Fext,
                                 std::span<const int> actuated) {
  const int n = sys.n();
  const Vector F = sys.gravity_forces(q) + Fext;
  const Vector a0 = sys.accel_dep(q, dq, F).ddq;
  Matrix A(n, static_cast<Eigen::Index>(actuated.size()));
  for (std::size_t k = 0; k < actuated.size(); ++k) {
    Vector e = Vector::Zero(n);
    e[actuated[k]] = 1.0;
    A.col(static_cast<Eigen::Index>(k)) = sys.accel_dep(q, dq, F + e).ddq - a0;
  }
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(A);
  cod.setThreshold(1e-10);
  const Vector tau = cod.solve(ddq - a0);
  Vector Q = Vector::Zero(n);
  for (std::size_t k = 0; k < actuated.size(); ++k) Q[actuated[k]] = tau[static_cast<Eigen::Index>(k)];
  return Q;
}

}  // namespace detail

/// Inverse dynamics over the dependent-coordinate graph, built up and solved
/// in batch in four stages: (1) positions tracking the reference, (2) speeds
/// and accelerations with integrators, (3) velocity constraints, (4) forces
/// with inverse-dynamics factors.
inline Trajectory run_inverse(const MechanismPtr& mech, const InverseConfig& cfg) {
  const MechanismSystem& sys = *mech;
  const int K = step_count(cfg.T_end, cfg.dt);
  const int n = sys.n(), d = sys.d(), mrows = sys.m();
  const double dt = cfg.dt;
  const auto& nz = cfg.noise;
  const auto& idxs = sys.layout().dof_idxs;
  if (d == 0) throw ConfigurationError("inverse dynamics needs declared dofs");
  if (cfg.z_ref.size() != static_cast<std::size_t>(K) + 1)
    throw DimensionMismatchError("reference must have one sample per timestep (" +
                                 std::to_string(K + 1) + ")");
  for (const auto& z : cfg.z_ref) detail::check_dim(z, d, "reference sample");
  if (cfg.actuated.empty()) throw ConfigurationError("actuated set must not be empty");
  std::vector<bool> is_actuated(static_cast<std::size_t>(n), false);
  for (int a : cfg.actuated) {
    if (a < 0 || a >= n) throw ConfigurationError("actuated index out of range");
    is_actuated[static_cast<std::size_t>(a)] = true;
  }
  std::vector<int> passive;
  for (int i = 0; i < n; ++i)
    if (!is_actuated[static_cast<std::size_t>(i)]) passive.push_back(i);

  auto iso = [](int dim, double var) { return NoiseModel::isotropic(dim, var); };
  auto key = [](VarKind k, int t) { return VariableKey(k, t); };

  FactorGraph graph;
  Values values;
  Trajectory tr;
  tr.dt = dt;

  auto solve_stage = [&](int stage) {
    try {
      LMResult r = optimize_lm(graph, std::move(values), cfg.lm);
      values = std::move(r.values);
      tr.solver_iterations.push_back(r.iterations);
      tr.set_meta("stage" + std::to_string(stage) + "_cost", std::to_string(r.final_cost));
    } catch (const ConfigurationError&) {
      throw;
    } catch (const Error& e) {
      throw PipelineError(-1, stage, Trajectory{},
                          "inverse dynamics stage " + std::to_string(stage) + " failed: " + e.what());
    }
  };

  // Stage 1: q tracking the reference.
  std::vector<Vector> q_init;
  q_init.reserve(static_cast<std::size_t>(K) + 1);
  {
    Vector guess = sys.initial_guess();
    for (int t = 0; t <= K; ++t) {
      try {
        guess = sys.assemble_at(guess, cfg.z_ref[static_cast<std::size_t>(t)]);
      } catch (const Error& e) {
        throw PipelineError(t, 1, Trajectory{},
                            "reference cannot be assembled at step " + std::to_string(t) + ": " +
                                e.what());
      }
      q_init.push_back(guess);
    }
  }
  for (int t = 0; t <= K; ++t) {
    graph.add_variable(key(VarKind::q, t), n);
    values.insert(key(VarKind::q, t), q_init[static_cast<std::size_t>(t)]);
    graph.add(std::make_shared<PriorFactor>(key(VarKind::q, t), cfg.z_ref[static_cast<std::size_t>(t)],
                                            iso(d, nz.prior_reference), idxs));
    graph.add(std::make_shared<DepPositionConstraintFactor>(mech, key(VarKind::q, t),
                                                            iso(mrows, nz.constraints)));
    if (t > 0)
      graph.add(std::make_shared<SoftEqualityFactor>(key(VarKind::q, t - 1), key(VarKind::q, t),
                                                     iso(n, nz.soft_equality)));
  }
  graph.add(std::make_shared<PriorFactor>(key(VarKind::q, 0), q_init.front(), iso(n, nz.prior_q0)));
  solve_stage(1);

  // Stage 2: velocities, accelerations, integrators.
  Vector dz0;
  if (cfg.dz0) {
    detail::check_dim(*cfg.dz0, d, "dz0");
    dz0 = *cfg.dz0;
  } else if (K >= 2) {
    dz0 = (-3.0 * cfg.z_ref[0] + 4.0 * cfg.z_ref[1] - cfg.z_ref[2]) / (2.0 * dt);
  } else {
    dz0 = Vector::Zero(d);
  }
  const Vector q0 = values.at(key(VarKind::q, 0));
  const Vector dq0 = solve_velocity_problem(sys.kinematics(q0), sys.layout(), dz0);
  auto fd = [&](VarKind k, int t) -> Vector {
    // central differences of the previous stage's solution
    const int a = std::max(0, t - 1), b = std::min(K, t + 1);
    if (a == b) return Vector::Zero(n);
    return (values.at(key(k, b)) - values.at(key(k, a))) / ((b - a) * dt);
  };
  std::vector<Vector> dq_init, ddq_init;
  for (int t = 0; t <= K; ++t) dq_init.push_back(t == 0 ? dq0 : fd(VarKind::q, t));
  for (int t = 0; t <= K; ++t) {
    graph.add_variable(key(VarKind::dq, t), n);
    values.insert(key(VarKind::dq, t), dq_init[static_cast<std::size_t>(t)]);
  }
  for (int t = 0; t <= K; ++t) ddq_init.push_back(fd(VarKind::dq, t));
  for (int t = 0; t <= K; ++t) {
    graph.add_variable(key(VarKind::ddq, t), n);
    values.insert(key(VarKind::ddq, t), ddq_init[static_cast<std::size_t>(t)]);
    if (t > 0) {
      graph.add(std::make_shared<TrapezoidalIntegratorFactor>(
          key(VarKind::q, t - 1), key(VarKind::q, t), key(VarKind::dq, t - 1), key(VarKind::dq, t),
          dt, iso(n, nz.integrator)));
      graph.add(std::make_shared<TrapezoidalIntegratorFactor>(
          key(VarKind::dq, t - 1), key(VarKind::dq, t), key(VarKind::ddq, t - 1),
          key(VarKind::ddq, t), dt, iso(n, nz.integrator)));
    }
  }
  graph.add(std::make_shared<PriorFactor>(key(VarKind::dq, 0), dq0, iso(n, nz.prior_dq0)));
  solve_stage(2);

  // Stage 3: velocity constraints.
  for (int t = 0; t <= K; ++t)
    graph.add(std::make_shared<DepVelocityConstraintFactor>(mech, key(VarKind::q, t),
                                                            key(VarKind::dq, t),
                                                            iso(mrows, nz.constraints)));
  solve_stage(3);

  // Stage 4: generalized forces and inverse dynamics. Each Q_t starts from the
  // least-squares force reproducing the stage-3 acceleration; the graph alone
  // only weakly determines Q near the ends of the horizon.
  for (int t = 0; t <= K; ++t) {
    const VariableKey Q = key(VarKind::Q, t);
    const Vector Fext = external_at(cfg.external, t * dt, n);
    graph.add_variable(Q, n);
    values.insert(Q, detail::fit_actuated_force(sys, values.at(key(VarKind::q, t)),
                                                values.at(key(VarKind::dq, t)),
                                                values.at(key(VarKind::ddq, t)), Fext, cfg.actuated));
    if (!passive.empty())
      graph.add(std::make_shared<PriorFactor>(Q, Vector::Zero(static_cast<Eigen::Index>(passive.size())),
                                              iso(static_cast<int>(passive.size()), nz.prior_forces),
                                              passive));
    graph.add(std::make_shared<DepDynamicsFactor>(mech, key(VarKind::q, t), key(VarKind::dq, t),
                                                  key(VarKind::ddq, t), Q, Fext,
                                                  iso(n, nz.dynamics)));
  }
  solve_stage(4);

  for (int t = 0; t <= K; ++t) {
    const Vector Q = values.at(key(VarKind::Q, t));
    tr.push(t * dt, values.at(key(VarKind::q, t)), values.at(key(VarKind::dq, t)),
            values.at(key(VarKind::ddq, t)), &Q);
  }
  tr.set_meta("pipeline", "inverse");
  tr.set_meta("dt", std::to_string(dt));
  tr.set_meta("T", std::to_string(cfg.T_end));
  double track = 0.0;
  for (int t = 0; t <= K; ++t)
    track = std::max(track, (pack_dofs(tr.q[static_cast<std::size_t>(t)], idxs) -
                             cfg.z_ref[static_cast<std::size_t>(t)])
                                .lpNorm<Eigen::Infinity>());
  tr.set_meta("max_tracking_error", std::to_string(track));
  detail::summarize_iterations(tr);
  detail::annotate_constraints(sys, tr);
  return tr;
}

namespace detail {

// Minimum-norm Newton projection onto Phi(q) = 0.
inline Vector project_position(const MechanismSystem& sys, Vector q) {
  for (int it = 0; it < 20; ++it) {
    const auto kin = sys.kinematics(q);
    if (kin.phi.lpNorm<Eigen::Infinity>() < 1e-14) return q;
    const Matrix J = kin.Phi_q();
    const Matrix JJt = J * J.transpose();
    q -= J.transpose() * JJt.ldlt().solve(kin.phi);
  }
  if (sys.phi(q).lpNorm<Eigen::Infinity>() < 1e-11) return q;
  throw PositionProblemDiverged("oracle position projection did not converge");
}

// Least-squares projection onto Phi_q dq = 0.
inline Vector project_velocity(const MechanismSystem& sys, const Vector& q, const Vector& dq) {
  const Matrix J = sys.kinematics(q).Phi_q();
  const Matrix JJt = J * J.transpose();
  return dq - J.transpose() * JJt.ldlt().solve(J * dq);
}

}  // namespace detail

/// Reference integrator: dense augmented (KKT) solve for the acceleration,
/// implicit trapezoidal step by fixed-point iteration, projection of q and dq
/// back onto the constraint manifold. Stores every `store_every` substeps.
inline Trajectory oracle_forward(const MechanismSystem& sys, const Vector& q0, const Vector& dq0,
                                 double dt_oracle, double T_end, int store_every = 10,
                                 const ForceSchedule& external = {}) {
  if (store_every < 1) throw ConfigurationError("store_every must be >= 1");
  const int steps = step_count(T_end, dt_oracle);
  const int n = sys.n();
  detail::check_dim(q0, n, "q0");
  detail::check_dim(dq0, n, "dq0");
  const Matrix& M = sys.mass_matrix();
  auto accel = [&](const Vector& q, const Vector& dq, double t) {
    const auto kin = sys.kinematics(q, dq);
    const Vector F = sys.gravity_forces(q) + external_at(external, t, n);
    return solve_kkt(M, kin.Phi_q(), F, kin.c).first;
  };

  const double h = dt_oracle;
  Trajectory tr;
  tr.dt = h * store_every;
  Vector q = q0, dq = dq0;
  Vector a = accel(q, dq, 0.0);
  tr.push(0.0, q, dq, a);
  for (int k = 1; k <= steps; ++k) {
    const double t1 = k * h;
    Vector dq1 = dq + h * a;
    Vector q1 = q + 0.5 * h * (dq + dq1);
    Vector a1 = a;
    for (int it = 0; it < 50; ++it) {
      a1 = accel(q1, dq1, t1);
      const Vector dq_new = dq + 0.5 * h * (a + a1);
      const double change = (dq_new - dq1).lpNorm<Eigen::Infinity>();
      dq1 = dq_new;
      q1 = q + 0.5 * h * (dq + dq1);
      if (change < 1e-13 * std::max(1.0, dq1.lpNorm<Eigen::Infinity>())) break;
    }
    q = detail::project_position(sys, q1);
    dq = detail::project_velocity(sys, q, dq1);
    a = accel(q, dq, t1);
    if (k % store_every == 0) tr.push(k / store_every * tr.dt, q, dq, a);
  }
  tr.set_meta("pipeline", "oracle");
  tr.set_meta("dt_oracle", std::to_string(h));
  tr.set_meta("dt", std::to_string(tr.dt));
  tr.set_meta("T", std::to_string(T_end));
  detail::annotate_constraints(sys, tr);
  return tr;
}

/// Largest |E(t) - E(0)| / |E(0)| along the trajectory (E kinetic + potential).
inline double energy_drift(const MechanismSystem& sys, const Trajectory& tr) {
  if (tr.size() == 0) return 0.0;
  const double E0 = sys.energy(tr.q.front(), tr.dq.front());
  double worst = 0.0;
  for (std::size_t k = 0; k < tr.size(); ++k)
    worst = std::max(worst, std::abs(sys.energy(tr.q[k], tr.dq[k]) - E0));
  return E0 == 0.0 ? worst : worst / std::abs(E0);
}

/// Root mean square difference pooled over time and coordinates. The finer of
/// the two trajectories is decimated onto the coarser grid first.
inline double rmse(const Trajectory& a, const Trajectory& b, TrajectoryField field) {
  if (!(a.dt > 0.0) || !(b.dt > 0.0)) throw DimensionMismatchError("trajectory without dt");
  const Trajectory& fine = a.dt <= b.dt ? a : b;
  const Trajectory& coarse = a.dt <= b.dt ? b : a;
  const double ratio = coarse.dt / fine.dt;
  const long long r = std::llround(ratio);
  if (r < 1 || std::abs(ratio - static_cast<double>(r)) > 1e-6 * ratio)
    throw DimensionMismatchError("time grids are not commensurate");
  const auto& fv = fine.field(field);
  const auto& cv = coarse.field(field);
  const std::size_t count = cv.size();
  if (count == 0 || (count - 1) * static_cast<std::size_t>(r) + 1 != fv.size())
    throw DimensionMismatchError("time grids cover different horizons");
  double sum = 0.0;
  std::size_t terms = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const Vector& x = cv[k];
    const Vector& y = fv[k * static_cast<std::size_t>(r)];
    if (x.size() != y.size()) throw DimensionMismatchError("trajectory rows differ in size");
    sum += (x - y).squaredNorm();
    terms += static_cast<std::size_t>(x.size());
  }
  return std::sqrt(sum / static_cast<double>(terms));
}

}  // namespace mbfg
