#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mbfg/cli.hpp"
#include "test_support.hpp"

using namespace mbfg;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mbfg");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("mbfg_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }
  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(file(name)) << text;
    return file(name);
  }

 private:
  fs::path path_;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string kFourbar = test::data_path("fourbar.json");

}  // namespace

TEST(MechanismFile, BundledFourbar) {
  const auto mf = load_mechanism(kFourbar);
  EXPECT_EQ(mf.layout.n, 5);
  EXPECT_EQ(mf.layout.m, 4);
  EXPECT_EQ(mf.layout.dofs(), 1);
  EXPECT_EQ(mf.def, make_fourbar());
}

TEST(MechanismFile, RoundTripIsIdentical) {
  const auto first = load_mechanism(kFourbar);
  const std::string text = serialize_mechanism(first.def);
  const auto second = parse_mechanism(text);
  EXPECT_EQ(second.def, first.def);
  EXPECT_EQ(serialize_mechanism(second.def), text);
  for (const auto& def : {test::slider_crank(), test::pendulum()}) {
    const auto again = parse_mechanism(serialize_mechanism(def));
    EXPECT_EQ(again.def, def);
  }
}

TEST(MechanismFile, NoiseOverridesTravelWithTheFile) {
  NoiseConfig nz;
  nz.set("dynamics", 2.5e-3);
  const auto mf = parse_mechanism(serialize_mechanism(make_fourbar(), &nz));
  EXPECT_TRUE(mf.has_noise);
  EXPECT_DOUBLE_EQ(mf.noise.get("dynamics"), 2.5e-3);
}

TEST(MechanismFile, ErrorsNameTheField) {
  auto field_of = [](const std::string& text) -> std::string {
    try {
      parse_mechanism(text);
    } catch (const MechanismFileError& e) {
      return e.field();
    }
    return "<no error>";
  };
  EXPECT_EQ(field_of(R"({"bodies": []})"), "/points");
  EXPECT_EQ(field_of(R"({"points": [{"id": "A", "fixed": true}], "bodies": []})"), "/points/0/xy");
  EXPECT_EQ(field_of(R"({"points": [{"id": "A", "fixed": true, "xy": [0, 0]},
                                    {"id": "B", "xy": [1, 0]}],
                         "bodies": [{"id": "r", "i": "A", "j": "B", "length": -1, "mass": 1}]})"),
            "/bodies/0/length");
  EXPECT_EQ(field_of("{\n\"points\": [\n}"), "line 3");
}

TEST(MechanismFile, DofOnGroundedBodyIsRejected) {
  auto def = make_fourbar();
  def.points.push_back({"G", true, Vector2(5.0, 0.0)});
  def.bodies.push_back({"ground", "D", "G", 1.0, 0.0, InertiaModel::UniformRod});
  def.relative_coords.push_back({"g", RelativeCoordKind::AbsoluteAngle, "ground", std::nullopt, false, 0.0});
  def.dof_idxs = {5};
  EXPECT_THROW(parse_mechanism(serialize_mechanism(def)), MechanismFileError);
}

TEST(MechanismFile, DofThatCannotParameterizeIsRejected) {
  auto def = test::slider_crank();
  def.dof_idxs = {3};  // y of the slider is pinned by the guide
  try {
    parse_mechanism(serialize_mechanism(def));
    FAIL() << "expected MechanismFileError";
  } catch (const MechanismFileError& e) {
    EXPECT_EQ(e.field(), "/dof_idxs");
  }
}

TEST(TrajectoryCsv, RoundTripKeepsEveryDigit) {
  test::Rng rng(5);
  Trajectory tr;
  tr.dt = 1e-3;
  for (int k = 0; k < 7; ++k) {
    const Vector Q = rng.vec(3, 100.0);
    tr.push(k * tr.dt, rng.vec(3, 1.0), rng.vec(3, 1.0), rng.vec(3, 1.0), &Q);
  }
  tr.set_meta("pipeline", "inverse");
  const Trajectory back = parse_trajectory(trajectory_to_csv(tr));
  ASSERT_EQ(back.size(), tr.size());
  EXPECT_EQ(back.dt, tr.dt);
  EXPECT_EQ(back.get_meta("pipeline"), "inverse");
  for (std::size_t k = 0; k < tr.size(); ++k) {
    EXPECT_EQ(back.t[k], tr.t[k]);
    EXPECT_EQ(back.q[k], tr.q[k]);
    EXPECT_EQ(back.dq[k], tr.dq[k]);
    EXPECT_EQ(back.ddq[k], tr.ddq[k]);
    EXPECT_EQ(back.Q[k], tr.Q[k]);
  }
}

TEST(TrajectoryCsv, HeaderLayout) {
  Trajectory tr;
  tr.dt = 0.5;
  tr.push(0.0, Vector::Zero(2), Vector::Zero(2), Vector::Zero(2));
  const std::string csv = trajectory_to_csv(tr);
  EXPECT_NE(csv.find("# dt=0.5\n"), std::string::npos);
  EXPECT_NE(csv.find("t,q0,q1,dq0,dq1,ddq0,ddq1\n"), std::string::npos);
  EXPECT_THROW(parse_trajectory("t,q0\n0,1,2\n"), ConfigurationError);
  EXPECT_THROW(parse_trajectory("t,q0,dq0,ddq0\n0,1,x,2\n"), ConfigurationError);
  EXPECT_THROW(parse_trajectory("# nothing\n"), ConfigurationError);
}

TEST(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"fd"}).code, 2);  // --mech is required
  EXPECT_EQ(cli({"bogus"}).code, 2);
  EXPECT_EQ(cli({"fd", "--mech", "/nonexistent/mech.json"}).code, 2);
  EXPECT_EQ(cli({"fd", "--mech", kFourbar, "--formulation", "sideways", "--T", "0.01"}).code, 2);
  EXPECT_EQ(cli({"fd", "--mech", kFourbar, "--noise", "dynamics=abc", "--T", "0.01"}).code, 2);
  EXPECT_EQ(cli({"fd", "--mech", kFourbar, "--noise", "nope=1", "--T", "0.01"}).code, 2);
  EXPECT_EQ(cli({"fd", "--mech", kFourbar, "--Nw", "1", "--T", "0.01"}).code, 2);
  EXPECT_EQ(cli({"fd", "--mech", kFourbar, "--T", "0.0105"}).code, 2);
}

TEST(Cli, MalformedMechanismReportsField) {
  TempDir dir;
  const std::string mech = dir.write("broken.json", R"({"bodies": []})");
  const auto r = cli({"check-jacobians", "--mech", mech, "--trials", "2"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("/points"), std::string::npos);
}

TEST(Cli, ErrorsWriteNothing) {
  TempDir dir;
  const std::string out = dir.file("never.csv");
  EXPECT_EQ(cli({"fd", "--mech", kFourbar, "--T", "0.01", "--Nw", "0", "--out", out}).code, 2);
  EXPECT_EQ(cli({"id", "--mech", kFourbar, "--T", "0.01", "--reference", "wiggly", "--out", out}).code, 2);
  EXPECT_EQ(cli({"oracle", "--mech", dir.write("bad.json", "{"), "--T", "0.01", "--out", out}).code, 2);
  EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, ForwardWritesCsvAndSummary) {
  TempDir dir;
  const std::string out = dir.file("fd.csv");
  const auto r = cli({"fd", "--mech", kFourbar, "--dt", "0.001", "--T", "0.05", "--Nw", "2",
                      "--formulation", "dep", "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("rmse_q="), std::string::npos);
  const Trajectory tr = load_trajectory(out);
  EXPECT_EQ(tr.size(), 51u);
  EXPECT_EQ(tr.n(), 5);
  EXPECT_TRUE(tr.get_meta("rmse_q_vs_oracle"));
  EXPECT_TRUE(tr.get_meta("iterations"));
}

TEST(Cli, RmseOfIdenticalFilesIsZero) {
  TempDir dir;
  const std::string a = dir.file("a.csv");
  ASSERT_EQ(cli({"oracle", "--mech", kFourbar, "--T", "0.02", "--out", a}).code, 0);
  const std::string b = dir.write("b.csv", read_file(a));
  const auto r = cli({"rmse", a, b});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "0\n");
  EXPECT_EQ(cli({"rmse", a}).code, 2);
  EXPECT_EQ(cli({"rmse", a, b, "--field", "Q"}).code, 2);  // no force columns
}

TEST(Cli, InverseStaticReference) {
  const auto r = cli({"id", "--mech", kFourbar, "--T", "0.02", "--reference", "static"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("Q4(0)=44.1"), std::string::npos) << r.out;
}

TEST(Cli, CheckJacobiansPasses) {
  const auto r = cli({"check-jacobians", "--mech", kFourbar, "--trials", "100"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
}
