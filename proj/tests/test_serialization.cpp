#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "covsteer/serialization.hpp"
#include "instances.hpp"

using namespace covsteer;
using namespace covsteer::testing;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("covsteer_io_" + std::to_string(::getpid()) + "_" + name)).string();
}

std::string schema_message(const std::string& text) {
  try {
    io::system_from_json(io::parse(text, "m.json"));
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

SteeringPlan sample_plan() {
  const SteeringProblem prob(example1_system(), GaussianState(Vec::Zero(2), SymMat(2.0 * Mat::Identity(2, 2))),
                             GaussianState(Vec::Unit(2, 0), example1_sigma()), TimeGrid(0, 1, 12));
  return steer_sdp(prob);
}

}  // namespace

TEST(Json, MatrixRoundTripIsExact) {
  std::mt19937_64 rng(61);
  const Mat m = random_matrix(rng, 3, 4, -1e3, 1e3);
  const auto back = io::matrix_from_json(io::parse(io::to_json(m).dump(), "x"), "");
  EXPECT_EQ(back, m);
  const Vec v = random_matrix(rng, 5, 1).col(0);
  EXPECT_EQ(io::vector_from_json(io::parse(io::to_json(v).dump(), "x"), ""), v);
}

TEST(Json, SchemaErrorsCarryPaths) {
  EXPECT_NE(schema_message(R"({"A":[[0]],"B":[[1]]})").find("/B1: missing field"), std::string::npos);
  EXPECT_NE(schema_message(R"({"A":[[0]],"B":[["x"]],"B1":[[1]]})").find("/B/0/0: expected a number"),
            std::string::npos);
  EXPECT_NE(schema_message(R"({"A":[[0,1],[0]],"B":[[1],[1]],"B1":[[1],[1]]})").find("/A/1"), std::string::npos);
  EXPECT_NE(schema_message(R"([1,2])").find("expected an object"), std::string::npos);
  try {
    io::parse("{\"A\": [[0]", "broken.json");
    FAIL() << "expected Schema";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Schema);
    EXPECT_NE(std::string(e.what()).find("broken.json"), std::string::npos);
  }
}

TEST(Json, AsymmetryWarning) {
  std::vector<std::string> warnings;
  const SymMat s = io::symmetric_from_json(io::parse("[[1, 0.2], [0.1, 1]]", "x"), "/Sigma", &warnings);
  EXPECT_DOUBLE_EQ(s(0, 1), 0.15);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("/Sigma"), std::string::npos);
  warnings.clear();
  io::symmetric_from_json(io::parse("[[1, 0.2], [0.2, 1]]", "x"), "/Sigma", &warnings);
  EXPECT_TRUE(warnings.empty());
  EXPECT_THROW(io::symmetric_from_json(io::parse("[[1, 0.2, 3], [0.2, 1, 4]]", "x"), "/Sigma", nullptr), Error);
}

TEST(Json, GaussianOptionalMean) {
  const auto g = io::gaussian_from_json(io::parse(R"({"Sigma":[[2]]})", "x"), "Sigma", nullptr);
  EXPECT_EQ(g.mean(), Vec::Zero(1));
  const auto h = io::gaussian_from_json(io::parse(R"({"Sigma":[[2]],"mean":[3]})", "x"), "Sigma", nullptr);
  EXPECT_EQ(h.mean()(0), 3.0);
  EXPECT_THROW(io::gaussian_from_json(io::parse(R"({"Sigma":[[2]],"mean":[3,4]})", "x"), "Sigma", nullptr), Error);
  EXPECT_THROW(io::gaussian_from_json(io::parse(R"({"Sigma":[[-2]]})", "x"), "Sigma", nullptr), Error);
}

TEST(Digest, StableUnderFormatting) {
  const auto a = io::system_from_json(io::parse(R"({"A":[[0,1],[0,0]],"B":[[0],[1]],"B1":[[1],[0]]})", "x"));
  const auto b = io::system_from_json(io::parse(R"({ "B1" : [[1.0],[0.0]], "B":[[0],[1e0]],
      "A":[[0, 1], [0, 0]] })", "x"));
  EXPECT_EQ(io::model_digest(a), io::model_digest(b));
  EXPECT_EQ(io::model_digest(a).size(), 64u);
  EXPECT_NE(io::model_digest(a), io::model_digest(example2_system()));
  EXPECT_EQ(io::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Documents, PlanRoundTrip) {
  const SteeringPlan plan = sample_plan();
  const std::string path = temp_path("plan.json");
  io::write_json(io::to_json(plan, "abc"), path);
  const auto doc = io::plan_from_json(io::load_json(path));
  EXPECT_EQ(doc.model_digest, "abc");
  const SteeringPlan& back = doc.plan;
  EXPECT_EQ(back.grid.steps, plan.grid.steps);
  EXPECT_EQ(back.cost, plan.cost);
  EXPECT_EQ(back.mean_energy, plan.mean_energy);
  for (size_t k = 0; k < plan.gains.size(); ++k) EXPECT_EQ(back.gains[k], plan.gains[k]);
  for (size_t k = 0; k < plan.cov_pred.size(); ++k) {
    EXPECT_EQ(back.cov_pred[k].mat(), plan.cov_pred[k].mat());
    EXPECT_EQ(back.feedforward[k], plan.feedforward[k]);
    EXPECT_EQ(back.mean_pred[k], plan.mean_pred[k]);
  }
  EXPECT_EQ(back.diagnostics.method, plan.diagnostics.method);
  EXPECT_EQ(back.diagnostics.kkt.gap, plan.diagnostics.kkt.gap);
  EXPECT_EQ(back.diagnostics.iterations, plan.diagnostics.iterations);
  fs::remove(path);
}

TEST(Documents, PlanSchemaChecks) {
  auto doc = io::to_json(sample_plan(), "abc");
  auto wrong_kind = doc;
  wrong_kind["kind"] = "policy";
  EXPECT_THROW(io::plan_from_json(wrong_kind), Error);
  auto short_gains = doc;
  short_gains["gains"].erase(0);
  try {
    io::plan_from_json(short_gains);
    FAIL() << "expected Schema";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("/gains"), std::string::npos);
  }
}

TEST(Documents, PolicyRoundTrip) {
  StationaryPolicy pol;
  pol.K = (Mat(1, 2) << 1, 1).finished();
  pol.X = (Mat(2, 1) << -0.5, 0).finished();
  pol.Sigma = example1_sigma();
  pol.power = 0.5;
  pol.hurwitz = true;
  pol.epsilon = 0.1;
  pol.achieved_cov = SymMat(example1_sigma().mat() * 1.01);
  pol.defect = 0.013;
  pol.achieved_power = 0.51;
  const auto doc = io::policy_from_json(io::parse(io::to_json(pol, "d", 2).dump(), "x"));
  EXPECT_EQ(doc.model_digest, "d");
  EXPECT_EQ(doc.homogeneous_dim, 2);
  EXPECT_EQ(doc.policy.K, pol.K);
  EXPECT_EQ(doc.policy.X, pol.X);
  EXPECT_EQ(doc.policy.Sigma.mat(), pol.Sigma.mat());
  EXPECT_EQ(doc.policy.epsilon, 0.1);
  ASSERT_TRUE(doc.policy.achieved_cov.has_value());
  EXPECT_EQ(doc.policy.achieved_cov->mat(), pol.achieved_cov->mat());
  EXPECT_EQ(doc.policy.defect, pol.defect);
}

TEST(Documents, LqrRoundTrip) {
  const auto sol = solve_lqr(scalar_system(0, 1, 1), scalar(1), scalar(1), TimeGrid(0, 1, 8));
  const auto back = io::lqr_from_json(io::parse(io::to_json(sol).dump(), "x"));
  EXPECT_EQ(back.cost, sol.cost);
  for (size_t k = 0; k < sol.Pi.size(); ++k) {
    EXPECT_EQ(back.Pi[k].mat(), sol.Pi[k].mat());
    EXPECT_EQ(back.gains[k], sol.gains[k]);
    EXPECT_EQ(back.cov[k].mat(), sol.cov[k].mat());
  }
}

TEST(Csv, StatsRoundTripAndFormat) {
  SimResult res;
  res.grid = TimeGrid(0, 1, 2);
  for (int k = 0; k <= 2; ++k) {
    res.mean.push_back((Vec(2) << 0.1 * k, 1.0 / 3.0).finished());
    res.cov.emplace_back((Mat(2, 2) << 1 + k, 0.25, 0.25, 2.0 / 7.0).finished());
  }
  res.states = {{Vec::Ones(2), Vec::Zero(2), Vec::Ones(2)}};
  res.inputs = {{Vec::Ones(1), Vec::Zero(1), Vec::Ones(1)}};
  const std::string stats = temp_path("stats.csv"), traj = temp_path("traj.csv");
  io::write_stats_csv(res, stats, 1.0);
  io::write_traj_csv(res, traj);
  const auto table = io::read_stats_csv(stats, 2);
  ASSERT_EQ(table.t.size(), 3u);
  EXPECT_EQ(table.t[2], 2.0);
  for (size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(table.cov[k].mat(), res.cov[k].mat());
    EXPECT_EQ(table.mean[k], res.mean[k]);
  }
  std::ifstream in(traj);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "t,path,x1,x2,u1");
  EXPECT_EQ(first, "0,0,1,1,1");
  std::ifstream sin(stats);
  std::getline(sin, header);
  EXPECT_EQ(header, "t,cov1_1,cov1_2,cov2_1,cov2_2,mean1,mean2");
  fs::remove(stats);
  fs::remove(traj);
}

TEST(Csv, FormatNumber) {
  EXPECT_EQ(io::format_number(0.1), "0.10000000000000001");
  EXPECT_EQ(std::stod(io::format_number(1.0 / 3.0)), 1.0 / 3.0);
  EXPECT_EQ(io::format_number(2.0), "2");
}
