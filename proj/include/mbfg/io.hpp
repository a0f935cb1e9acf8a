#pragma once

// Mechanism description files (JSON) and trajectory CSV files.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "json.hpp"
#include "mbfg/pipelines.hpp"

namespace mbfg {

using Json = nlohmann::ordered_json;

struct MechanismFile {
  MechanismDef def;
  CoordinateLayout layout;
  NoiseConfig noise;
  bool has_noise = false;
};

namespace detail {

inline std::string json_path(std::string_view base, std::string_view field) {
  return std::string(base) + "/" + std::string(field);
}
inline std::string json_path(std::string_view base, std::size_t index) {
  return std::string(base) + "/" + std::to_string(index);
}

inline const Json& require(const Json& obj, const char* field, const std::string& base) {
  if (!obj.is_object()) throw MechanismFileError(base, "expected an object");
  auto it = obj.find(field);
  if (it == obj.end()) throw MechanismFileError(json_path(base, field), "missing required field");
  return *it;
}

inline double get_number(const Json& v, const std::string& path) {
  if (!v.is_number()) throw MechanismFileError(path, "expected a number");
  return v.get<double>();
}

inline std::string get_string(const Json& v, const std::string& path) {
  if (!v.is_string()) throw MechanismFileError(path, "expected a string");
  return v.get<std::string>();
}

inline bool get_bool(const Json& v, const std::string& path) {
  if (!v.is_boolean()) throw MechanismFileError(path, "expected true or false");
  return v.get<bool>();
}

inline Vector2 get_xy(const Json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 2) throw MechanismFileError(path, "expected [x, y]");
  return {get_number(v[0], path + "/0"), get_number(v[1], path + "/1")};
}

inline const Json& get_array(const Json& v, const std::string& path) {
  if (!v.is_array()) throw MechanismFileError(path, "expected an array");
  return v;
}

inline InertiaModel parse_inertia(const std::string& s, const std::string& path) {
  for (auto m : {InertiaModel::UniformRod, InertiaModel::PointMassesAtEnds,
                 InertiaModel::RotationalOnRelativeCoord})
    if (s == to_string(m)) return m;
  throw MechanismFileError(path, "unknown inertia model '" + s + "'");
}

inline ConstraintKind parse_constraint_kind(const std::string& s, const std::string& path) {
  for (auto k : {ConstraintKind::ConstantDistance, ConstraintKind::FixedPinnedSlider,
                 ConstraintKind::MobilePinnedSlider, ConstraintKind::AbsoluteAngle})
    if (s == to_string(k)) return k;
  throw MechanismFileError(path, "unknown constraint kind '" + s + "'");
}

inline int line_of(std::string_view text, std::size_t byte) {
  int line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

inline Json xy_json(const Vector2& v) { return Json::array({v.x(), v.y()}); }

}  // namespace detail

/// Parses a description; errors carry a field path such as "/bodies/1/length"
/// (or a line number for syntax errors).
inline MechanismFile parse_mechanism(std::string_view text) {
  using namespace detail;
  Json j;
  try {
    j = Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw MechanismFileError("line " + std::to_string(line_of(text, e.byte)),
                             "malformed JSON");
  }
  if (!j.is_object()) throw MechanismFileError("", "top level must be an object");

  MechanismFile out;
  MechanismDef& m = out.def;

  const auto& points = get_array(require(j, "points", ""), "/points");
  for (std::size_t k = 0; k < points.size(); ++k) {
    const std::string base = json_path("/points", k);
    PointDef p;
    p.id = get_string(require(points[k], "id", base), base + "/id");
    p.fixed = points[k].contains("fixed") ? get_bool(points[k]["fixed"], base + "/fixed") : false;
    if (points[k].contains("xy")) p.xy = get_xy(points[k]["xy"], base + "/xy");
    else if (p.fixed) throw MechanismFileError(base + "/xy", "fixed point needs coordinates");
    m.points.push_back(std::move(p));
  }

  const auto& bodies = get_array(require(j, "bodies", ""), "/bodies");
  for (std::size_t k = 0; k < bodies.size(); ++k) {
    const std::string base = json_path("/bodies", k);
    const Json& b = bodies[k];
    BodyDef body;
    body.id = get_string(require(b, "id", base), base + "/id");
    body.point_i = get_string(require(b, "i", base), base + "/i");
    body.point_j = get_string(require(b, "j", base), base + "/j");
    body.length = get_number(require(b, "length", base), base + "/length");
    body.mass = get_number(require(b, "mass", base), base + "/mass");
    if (!(body.length > 0.0)) throw MechanismFileError(base + "/length", "must be > 0");
    if (!(body.mass >= 0.0)) throw MechanismFileError(base + "/mass", "must be >= 0");
    if (b.contains("inertia"))
      body.inertia_model = parse_inertia(get_string(b["inertia"], base + "/inertia"), base + "/inertia");
    m.bodies.push_back(std::move(body));
  }

  if (j.contains("relative_coords")) {
    const auto& rcs = get_array(j["relative_coords"], "/relative_coords");
    for (std::size_t k = 0; k < rcs.size(); ++k) {
      const std::string base = json_path("/relative_coords", k);
      const Json& r = rcs[k];
      RelativeCoordDef rc;
      rc.id = get_string(require(r, "id", base), base + "/id");
      if (r.contains("kind") && get_string(r["kind"], base + "/kind") != "absolute-angle")
        throw MechanismFileError(base + "/kind", "only absolute-angle is supported");
      rc.body = get_string(require(r, "body", base), base + "/body");
      if (r.contains("inertia_about_pivot"))
        rc.inertia_about_pivot = get_number(r["inertia_about_pivot"], base + "/inertia_about_pivot");
      if (r.contains("applied_torque"))
        rc.applied_torque_slot = get_bool(r["applied_torque"], base + "/applied_torque");
      if (r.contains("initial_value"))
        rc.initial_value = get_number(r["initial_value"], base + "/initial_value");
      m.relative_coords.push_back(std::move(rc));
    }
  }

  if (j.contains("constraints")) {
    const auto& cs = get_array(j["constraints"], "/constraints");
    for (std::size_t k = 0; k < cs.size(); ++k) {
      const std::string base = json_path("/constraints", k);
      const Json& c = cs[k];
      ConstraintDef cd;
      cd.kind = parse_constraint_kind(get_string(require(c, "kind", base), base + "/kind"),
                                      base + "/kind");
      const auto& pts = get_array(require(c, "points", base), base + "/points");
      for (std::size_t i = 0; i < pts.size(); ++i)
        cd.points.push_back(get_string(pts[i], json_path(base + "/points", i)));
      if (c.contains("length")) cd.length = get_number(c["length"], base + "/length");
      if (c.contains("line_a")) cd.line_a = get_xy(c["line_a"], base + "/line_a");
      if (c.contains("line_b")) cd.line_b = get_xy(c["line_b"], base + "/line_b");
      m.constraints.push_back(std::move(cd));
    }
  }

  if (j.contains("dof_idxs")) {
    const auto& ds = get_array(j["dof_idxs"], "/dof_idxs");
    for (std::size_t k = 0; k < ds.size(); ++k) {
      if (!ds[k].is_number_integer())
        throw MechanismFileError(json_path("/dof_idxs", k), "expected an integer");
      m.dof_idxs.push_back(ds[k].get<int>());
    }
  }
  if (j.contains("gravity")) m.gravity = get_number(j["gravity"], "/gravity");

  if (j.contains("noise")) {
    const Json& nz = j["noise"];
    if (!nz.is_object()) throw MechanismFileError("/noise", "expected an object");
    for (const auto& [k, v] : nz.items()) {
      const std::string path = "/noise/" + k;
      try {
        out.noise.set(k, get_number(v, path));
      } catch (const MechanismFileError&) {
        throw;
      } catch (const ConfigurationError& e) {
        throw MechanismFileError(path, e.what());
      }
    }
    out.has_noise = true;
  }

  try {
    out.layout = build_layout(m);
  } catch (const ConfigurationError& e) {
    throw MechanismFileError("", e.what());
  }

  // The declared dofs must parameterize the assembled initial configuration.
  if (out.layout.d() > 0) {
    try {
      const MechanismSystem sys(m);
      const Vector guess = sys.initial_guess();
      const Vector q0 = sys.assemble_at(guess, pack_dofs(guess, out.layout.dof_idxs));
      VelocityMap(sys.kinematics(q0), out.layout.dof_idxs);
    } catch (const ConfigurationError& e) {
      throw MechanismFileError("/dof_idxs", e.what());
    } catch (const Error& e) {
      throw MechanismFileError("/dof_idxs", std::string("not assemblable: ") + e.what());
    }
  }
  return out;
}

inline MechanismFile load_mechanism(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MechanismFileError("", "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_mechanism(ss.str());
}

/// Canonical JSON text (fixed field order, shortest round-trip numbers).
inline std::string serialize_mechanism(const MechanismDef& m, const NoiseConfig* noise = nullptr) {
  using detail::xy_json;
  Json j;
  Json pts = Json::array();
  for (const auto& p : m.points) {
    Json o;
    o["id"] = p.id;
    o["fixed"] = p.fixed;
    if (p.xy) o["xy"] = xy_json(*p.xy);
    pts.push_back(std::move(o));
  }
  j["points"] = std::move(pts);
  Json bodies = Json::array();
  for (const auto& b : m.bodies) {
    Json o;
    o["id"] = b.id;
    o["i"] = b.point_i;
    o["j"] = b.point_j;
    o["length"] = b.length;
    o["mass"] = b.mass;
    o["inertia"] = to_string(b.inertia_model);
    bodies.push_back(std::move(o));
  }
  j["bodies"] = std::move(bodies);
  Json rcs = Json::array();
  for (const auto& r : m.relative_coords) {
    Json o;
    o["id"] = r.id;
    o["kind"] = "absolute-angle";
    o["body"] = r.body;
    if (r.inertia_about_pivot) o["inertia_about_pivot"] = *r.inertia_about_pivot;
    o["applied_torque"] = r.applied_torque_slot;
    o["initial_value"] = r.initial_value;
    rcs.push_back(std::move(o));
  }
  j["relative_coords"] = std::move(rcs);
  Json cs = Json::array();
  for (const auto& c : m.constraints) {
    Json o;
    o["kind"] = to_string(c.kind);
    o["points"] = c.points;
    o["length"] = c.length;
    o["line_a"] = xy_json(c.line_a);
    o["line_b"] = xy_json(c.line_b);
    cs.push_back(std::move(o));
  }
  j["constraints"] = std::move(cs);
  j["dof_idxs"] = m.dof_idxs;
  j["gravity"] = m.gravity;
  if (noise) {
    Json nz;
    for (const auto& [name, member] : NoiseConfig::fields()) nz[name] = noise->*member;
    j["noise"] = std::move(nz);
  }
  return j.dump(2) + "\n";
}

inline void save_mechanism(const std::string& path, const MechanismDef& m,
                           const NoiseConfig* noise = nullptr) {
  std::ofstream out(path);
  if (!out) throw ConfigurationError("cannot write '" + path + "'");
  out << serialize_mechanism(m, noise);
}

// ---------------------------------------------------------------------------
// Trajectory CSV: "# key=value" comment lines, then a header
// t,q0..,dq0..,ddq0..[,Q0..] and one row per timestep at 17 significant digits.

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_trajectory(std::ostream& os, const Trajectory& tr) {
  os << "# dt=" << format_double(tr.dt) << "\n";
  for (const auto& [k, v] : tr.meta)
    if (k != "dt") os << "# " << k << "=" << v << "\n";
  const int n = tr.n();
  os << "t";
  for (const char* prefix : {"q", "dq", "ddq"})
    for (int i = 0; i < n; ++i) os << "," << prefix << i;
  if (tr.has_forces())
    for (int i = 0; i < n; ++i) os << ",Q" << i;
  os << "\n";
  for (std::size_t k = 0; k < tr.size(); ++k) {
    os << format_double(tr.t[k]);
    auto emit = [&](const Vector& v) {
      for (Eigen::Index i = 0; i < v.size(); ++i) os << "," << format_double(v[i]);
    };
    emit(tr.q[k]);
    emit(tr.dq[k]);
    emit(tr.ddq[k]);
    if (tr.has_forces()) emit(tr.Q[k]);
    os << "\n";
  }
}

inline std::string trajectory_to_csv(const Trajectory& tr) {
  std::ostringstream os;
  write_trajectory(os, tr);
  return os.str();
}

inline void save_trajectory(const std::string& path, const Trajectory& tr) {
  const std::string text = trajectory_to_csv(tr);
  std::ofstream out(path);
  if (!out) throw ConfigurationError("cannot write '" + path + "'");
  out << text;
}

inline Trajectory parse_trajectory(std::string_view text) {
  Trajectory tr;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  int n = -1;
  bool forces = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto start = line.find_first_not_of("# ");
      if (start == std::string::npos) continue;
      const auto body = line.substr(start);
      const auto eq = body.find('=');
      if (eq != std::string::npos) tr.set_meta(body.substr(0, eq), body.substr(eq + 1));
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (n < 0) {
      if (cells.empty() || cells[0] != "t")
        throw ConfigurationError("line " + std::to_string(lineno) + ": expected header starting with 't'");
      const auto cols = cells.size() - 1;
      if (cols % 4 == 0 && cols > 0 && cells.back().rfind("Q", 0) == 0) {
        n = static_cast<int>(cols / 4);
        forces = true;
      } else if (cols % 3 == 0 && cols > 0) {
        n = static_cast<int>(cols / 3);
      } else {
        throw ConfigurationError("line " + std::to_string(lineno) + ": malformed header");
      }
      continue;
    }
    const std::size_t want = 1 + static_cast<std::size_t>(n) * (forces ? 4 : 3);
    if (cells.size() != want)
      throw ConfigurationError("line " + std::to_string(lineno) + ": expected " +
                               std::to_string(want) + " columns");
    std::vector<double> v(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      try {
        std::size_t used = 0;
        v[i] = std::stod(cells[i], &used);
        if (used != cells[i].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ConfigurationError("line " + std::to_string(lineno) + ": bad number '" + cells[i] + "'");
      }
    }
    auto block = [&](int b) {
      return Vector(Eigen::Map<const Vector>(v.data() + 1 + b * n, n));
    };
    const Vector Q = forces ? block(3) : Vector();
    tr.push(v[0], block(0), block(1), block(2), forces ? &Q : nullptr);
  }
  if (n < 0) throw ConfigurationError("trajectory file has no header");
  if (auto dt = tr.get_meta("dt")) {
    tr.dt = std::stod(*dt);
  } else if (tr.size() >= 2) {
    tr.dt = tr.t[1] - tr.t[0];
  }
  return tr;
}

inline Trajectory load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_trajectory(ss.str());
}

}  // namespace mbfg
