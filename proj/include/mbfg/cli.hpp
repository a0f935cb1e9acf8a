#pragma once

// Command-line front end. Exit codes: 0 success, 1 solver failure (or failed
// check), 2 input error. Output files are only written after success.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mbfg/io.hpp"
#include "mbfg/jacobian_check.hpp"
#include "mbfg/reference.hpp"

namespace mbfg {

namespace cli_detail {

struct Options {
  std::string mech;
  double dt = 1e-3;
  double T = 5.0;
  int Nw = 2;
  std::string formulation = "dep";
  std::string out;
  std::vector<std::string> noise;
  unsigned long seed = 1;
  int trials = 100;
  std::string field = "q";
  std::string reference = "curve";
  std::vector<std::string> files;
  bool verbose = false;
};

class InputError : public ConfigurationError {
 public:
  using ConfigurationError::ConfigurationError;
};

inline NoiseConfig noise_from(const MechanismFile& mf, const std::vector<std::string>& overrides) {
  NoiseConfig nz = mf.noise;
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InputError("--noise expects KEY=VALUE, got '" + kv + "'");
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(kv.substr(eq + 1), &used);
      if (used != kv.size() - eq - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw InputError("--noise " + kv + ": value is not a number");
    }
    nz.set(kv.substr(0, eq), v);
  }
  return nz;
}

inline Formulation formulation_from(const std::string& s) {
  if (s == "dep") return Formulation::Dependent;
  if (s == "indep") return Formulation::Independent;
  throw InputError("--formulation must be dep or indep");
}

inline TrajectoryField field_from(const std::string& s) {
  if (s == "q") return TrajectoryField::q;
  if (s == "dq") return TrajectoryField::dq;
  if (s == "ddq") return TrajectoryField::ddq;
  if (s == "Q") return TrajectoryField::Q;
  throw InputError("--field must be one of q, dq, ddq, Q");
}

inline LMConfig lm_config(const Options& o, std::ostream& err) {
  LMConfig lm;
  if (o.verbose)
    lm.sink = [&err](const LMIteration& it) {
      err << "iter " << it.iteration << ", cost " << it.cost << ", lambda " << it.lambda
          << ", step_norm " << it.step_norm << "\n";
    };
  return lm;
}

inline void write_output(const std::string& path, const std::string& text) {
  if (path.empty()) return;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write '" + path + "'");
  f << text;
  if (!f) throw InputError("failed writing '" + path + "'");
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

inline int cmd_fd(const Options& o, std::ostream& out, std::ostream& err) {
  const MechanismFile mf = load_mechanism(o.mech);
  const auto mech = make_system(mf.def);
  ForwardConfig cfg;
  cfg.dt = o.dt;
  cfg.T_end = o.T;
  cfg.window = o.Nw;
  cfg.formulation = formulation_from(o.formulation);
  cfg.noise = noise_from(mf, o.noise);
  cfg.lm = lm_config(o, err);
  step_count(cfg.T_end, cfg.dt);
  if (cfg.window < 2) throw InputError("--Nw must be >= 2");

  Trajectory tr = run_forward(mech, cfg);
  const auto [q0, dq0] = initial_state(*mech, std::nullopt, std::nullopt, std::nullopt, std::nullopt);
  const Trajectory ref = oracle_forward(*mech, q0, dq0, cfg.dt / 10.0, cfg.T_end, 10);
  const double rq = rmse(tr, ref, TrajectoryField::q);
  const double rdq = rmse(tr, ref, TrajectoryField::dq);
  tr.set_meta("rmse_q_vs_oracle", fmt(rq));
  tr.set_meta("rmse_dq_vs_oracle", fmt(rdq));
  write_output(o.out, trajectory_to_csv(tr));
  out << "fd formulation=" << o.formulation << " steps=" << tr.size() << " rmse_q=" << fmt(rq)
      << " rmse_dq=" << fmt(rdq) << " max_phi=" << tr.get_meta("max_phi").value_or("?")
      << " iterations_max=" << tr.get_meta("iterations_max").value_or("?")
      << " windows_le5=" << tr.get_meta("iterations_le5_fraction").value_or("?") << "\n";
  return 0;
}

inline int cmd_id(const Options& o, std::ostream& out, std::ostream& err) {
  const MechanismFile mf = load_mechanism(o.mech);
  const auto mech = make_system(mf.def);
  const auto& layout = mech->layout();
  if (layout.d() != 1) throw InputError("id drives a single independent coordinate; mechanism has " +
                                        std::to_string(layout.d()));
  InverseConfig cfg;
  cfg.dt = o.dt;
  cfg.T_end = o.T;
  cfg.noise = noise_from(mf, o.noise);
  cfg.lm = lm_config(o, err);
  const double z0 = pack_dofs(mech->initial_guess(), layout.dof_idxs)[0];
  if (o.reference == "curve")
    cfg.z_ref = sample_reference([z0](double t) { return z0 + reference_crank_angle(t); }, cfg.dt, cfg.T_end);
  else if (o.reference == "static")
    cfg.z_ref = sample_reference([z0](double) { return z0; }, cfg.dt, cfg.T_end);
  else
    throw InputError("--reference must be curve or static");
  for (const auto& r : mf.def.relative_coords)
    if (r.applied_torque_slot) cfg.actuated.push_back(layout.relative_slot.at(r.id));
  if (cfg.actuated.empty()) cfg.actuated = layout.dof_idxs;

  const Trajectory tr = run_inverse(mech, cfg);
  write_output(o.out, trajectory_to_csv(tr));
  const int slot = cfg.actuated.front();
  out << "id steps=" << tr.size()
      << " max_tracking_error=" << tr.get_meta("max_tracking_error").value_or("?")
      << " Q" << slot << "(0)=" << fmt(tr.Q.front()[slot]) << " Q" << slot
      << "(T)=" << fmt(tr.Q.back()[slot]) << " max_phi=" << tr.get_meta("max_phi").value_or("?")
      << "\n";
  return 0;
}

inline int cmd_oracle(const Options& o, std::ostream& out) {
  const MechanismFile mf = load_mechanism(o.mech);
  const auto mech = make_system(mf.def);
  step_count(o.T, o.dt);
  const auto [q0, dq0] = initial_state(*mech, std::nullopt, std::nullopt, std::nullopt, std::nullopt);
  const Trajectory tr = oracle_forward(*mech, q0, dq0, o.dt / 10.0, o.T, 10);
  write_output(o.out, trajectory_to_csv(tr));
  out << "oracle steps=" << tr.size() << " max_phi=" << tr.get_meta("max_phi").value_or("?")
      << " energy_drift=" << fmt(energy_drift(*mech, tr)) << "\n";
  return 0;
}

inline int cmd_rmse(const Options& o, std::ostream& out) {
  if (o.files.size() != 2) throw InputError("rmse expects two trajectory files");
  const Trajectory a = load_trajectory(o.files[0]);
  const Trajectory b = load_trajectory(o.files[1]);
  const double r = rmse(a, b, field_from(o.field));
  out << fmt(r) << "\n";
  return 0;
}

inline int cmd_check(const Options& o, std::ostream& out) {
  const MechanismFile mf = load_mechanism(o.mech);
  const auto mech = make_system(mf.def);
  if (o.trials < 1) throw InputError("--trials must be >= 1");
  auto checks = check_factor_jacobians(mech, o.trials, o.seed);
  for (auto& c : check_constraint_derivatives(mech, o.trials, o.seed + 1)) checks.push_back(c);
  bool ok = true;
  for (const auto& c : checks) {
    out << (c.passed() ? "PASS " : "FAIL ") << c.kind << " trials=" << c.trials
        << " worst=" << fmt(c.worst) << "\n";
    ok = ok && c.passed();
  }
  return ok ? 0 : 1;
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  using namespace cli_detail;
  Options o;
  CLI::App app{"Multibody dynamics on factor graphs"};
  app.require_subcommand(1);

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--mech", o.mech, "mechanism description (JSON)")->required();
    sub->add_option("--noise", o.noise, "variance override KEY=VALUE");
    sub->add_option("--seed", o.seed, "random seed");
    sub->add_flag("-v,--verbose", o.verbose, "print solver iterations");
  };
  auto add_run = [&](CLI::App* sub) {
    sub->add_option("--dt", o.dt, "time step [s]");
    sub->add_option("--T", o.T, "horizon [s]");
    sub->add_option("--out", o.out, "output CSV path");
  };

  auto* fd = app.add_subcommand("fd", "forward dynamics (fixed-lag smoother)");
  add_common(fd);
  add_run(fd);
  fd->add_option("--Nw", o.Nw, "fixed-lag window length");
  fd->add_option("--formulation", o.formulation, "dep or indep");

  auto* id = app.add_subcommand("id", "inverse dynamics (staged batch)");
  add_common(id);
  add_run(id);
  id->add_option("--reference", o.reference, "curve or static");

  auto* oracle = app.add_subcommand("oracle", "reference integrator");
  add_common(oracle);
  add_run(oracle);

  auto* rm = app.add_subcommand("rmse", "RMSE between two trajectory files");
  rm->add_option("files", o.files, "two CSV files")->expected(2);
  rm->add_option("--field", o.field, "q, dq, ddq or Q");

  auto* cj = app.add_subcommand("check-jacobians", "finite-difference Jacobian checks");
  add_common(cj);
  cj->add_option("--trials", o.trials, "random states per factor kind");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*fd) return cmd_fd(o, out, err);
    if (*id) return cmd_id(o, out, err);
    if (*oracle) return cmd_oracle(o, out);
    if (*rm) return cmd_rmse(o, out);
    if (*cj) return cmd_check(o, out);
  } catch (const ConfigurationError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionMismatchError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "solver failure: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace mbfg
