// End-to-end runs of the command-line tool.
#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::map<std::string, std::string> fields;  // machine section

  double number(const std::string& key) const { return std::stod(fields.at(key)); }
  nlohmann::json value(const std::string& key) const { return nlohmann::json::parse(fields.at(key)); }
};

std::string data(const std::string& rel) { return std::string(COVSTEER_DATA_DIR) + "/" + rel; }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("covsteer_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string tmp(const std::string& name) const { return (dir_ / name).string(); }

  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(tmp(name)) << text;
    return tmp(name);
  }

  static CliRun run(const std::string& args, const std::string& env = "") {
    CliRun r;
    const std::string cmd = env + (env.empty() ? "" : " ") + COVSTEER_CLI + std::string(" ") + args + " 2>&1";
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) return r;
    std::array<char, 4096> buf{};
    size_t got = 0;
    while ((got = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), got);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::istringstream in(r.out);
    std::string line;
    while (std::getline(in, line)) {
      const auto colon = line.find(": ");
      if (colon == std::string::npos || line.find(' ') < colon) continue;
      r.fields[line.substr(0, colon)] = line.substr(colon + 2);
    }
    return r;
  }

  static std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, CheckExample1) {
  const CliRun r = run("check " + data("example1/model.json") + " " + data("example1/sigma1.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.fields.at("admissible"), "true");
  EXPECT_EQ(r.fields.at("channel_inclusion"), "false");
  EXPECT_EQ(r.fields.at("controllable"), "true");
  const CliRun bad = run("check " + data("example1/model.json") + " " + data("example1/identity.json"));
  EXPECT_EQ(bad.code, 0);
  EXPECT_EQ(bad.fields.at("admissible"), "false");
}

TEST_F(Cli, MalformedJsonReportsPath) {
  const std::string model = write("bad.json", R"({"A":[[0]],"B":[[1],["x"]],"B1":[[1]]})");
  const CliRun r = run("check " + model);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("/B/1/0"), std::string::npos) << r.out;
  const std::string broken = write("broken.json", "{\"A\": [[0]");
  EXPECT_EQ(run("check " + broken).code, 1);
  EXPECT_EQ(run("check /nonexistent.json").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
}

TEST_F(Cli, SteerExample1) {
  const std::string plan = tmp("plan.json");
  const CliRun r = run("steer " + data("example1/model.json") + " " + data("example1/sigma0.json") + " " +
                    data("example1/sigma1.json") + " --horizon 1 --steps 100 --out " + plan);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.fields.at("solver_status"), "Optimal");
  EXPECT_LE(r.number("kkt_primal"), 1e-7);
  EXPECT_LE(r.number("boundary_residual"), 1e-3);
  const auto doc = nlohmann::json::parse(slurp(plan));
  EXPECT_EQ(doc["kind"], "plan");
  EXPECT_EQ(doc["gains"].size(), 100u);
  const auto manifest = nlohmann::json::parse(slurp(plan + ".manifest.json"));
  EXPECT_EQ(manifest["command"], "steer");
  EXPECT_EQ(manifest["input_digests"].size(), 3u);
  EXPECT_EQ(manifest["outputs"][0], plan);
  EXPECT_EQ(manifest["tool_version"], "0.1.0");
}

TEST_F(Cli, SteerFailures) {
  const std::string model = write("unc.json", R"({"A":[[1,0],[0,1]],"B":[[1],[0]],"B1":[[1],[0]]})");
  const CliRun r = run("steer " + model + " " + data("example1/identity.json") + " " + data("example1/identity.json"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("not controllable"), std::string::npos) << r.out;
  const CliRun s = run("steer " + data("example1/model.json") + " " + data("example1/sigma0.json") + " " +
                    data("example1/sigma1.json") + " --method schrodinger");
  EXPECT_EQ(s.code, 1);
  EXPECT_NE(s.out.find("requires matched channels"), std::string::npos) << s.out;
  EXPECT_EQ(run("steer " + data("example1/model.json") + " " + data("example1/sigma0.json") + " " +
                data("example1/sigma1.json") + " --steps 0")
                .code,
            1);
}

TEST_F(Cli, SteerScalarAuto) {
  const CliRun r = run("steer " + data("scalar/ou.json") + " " + data("scalar/unit.json") + " " +
                    data("scalar/unit.json") + " --steps 50");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.fields.at("method"), "schrodinger");
  EXPECT_LE(r.number("cost"), 1e-6);
}

TEST_F(Cli, StationaryExamples) {
  const std::string pol = tmp("pol.json");
  const CliRun r = run("stationary " + data("example2/model.json") + " " + data("example2/sigma.json") + " --out " + pol);
  ASSERT_EQ(r.code, 0) << r.out;
  const auto k = r.value("K");
  EXPECT_NEAR(k[0][0].get<double>(), 1.0, 1e-6);
  EXPECT_NEAR(k[0][1].get<double>(), 3.0, 1e-6);
  EXPECT_NEAR(k[0][2].get<double>(), 2.0, 1e-6);
  EXPECT_NEAR(r.number("power"), 2.5, 1e-6);
  EXPECT_EQ(r.fields.at("hurwitz"), "true");
  EXPECT_TRUE(fs::exists(pol + ".manifest.json"));

  const CliRun e1 = run("stationary " + data("example1/model.json") + " " + data("example1/sigma1.json"));
  ASSERT_EQ(e1.code, 0) << e1.out;
  EXPECT_NEAR(e1.value("K")[0][0].get<double>(), 1.0, 1e-9);
  EXPECT_NEAR(e1.value("K")[0][1].get<double>(), 1.0, 1e-9);

  EXPECT_EQ(run("stationary " + data("example1/model.json") + " " + data("example1/identity.json")).code, 2);
}

TEST_F(Cli, StationaryNeedsEpsilon) {
  const std::string model = write("marginal.json", R"({"A":[[1]],"B":[[1]],"B1":[[0]]})");
  const std::string pol = tmp("pol.json");
  const CliRun r = run("stationary " + model + " " + data("scalar/unit.json") + " --out " + pol);
  EXPECT_EQ(r.code, 4) << r.out;
  EXPECT_NE(r.out.find("--epsilon"), std::string::npos);
  const CliRun sim = run("simulate " + model + " --policy " + pol + " --paths 10 --stats " + tmp("stats.csv"));
  EXPECT_EQ(sim.code, 2) << sim.out;
  const CliRun relaxed = run("stationary " + model + " " + data("scalar/unit.json") + " --epsilon 0.1");
  EXPECT_EQ(relaxed.code, 0) << relaxed.out;
  EXPECT_EQ(relaxed.fields.at("hurwitz"), "true");
}

TEST_F(Cli, LqrExamples) {
  const std::string model = data("scalar/model.json"), unit = data("scalar/unit.json");
  const CliRun zero = run("lqr " + model + " " + unit + " " + data("scalar/zero_weight.json"));
  ASSERT_EQ(zero.code, 0) << zero.out;
  EXPECT_EQ(zero.number("cost"), 0.0);
  EXPECT_EQ(zero.value("K0")[0][0].get<double>(), 0.0);
  const std::string out = tmp("lqr.json");
  const CliRun one = run("lqr " + model + " " + unit + " " + data("scalar/weight.json") + " --steps 200 --out " + out);
  ASSERT_EQ(one.code, 0) << one.out;
  EXPECT_NEAR(one.value("Pi0")[0][0].get<double>(), 0.5, 1e-6);
  EXPECT_EQ(nlohmann::json::parse(slurp(out))["kind"], "lqr");
  EXPECT_EQ(run("lqr " + model + " " + unit + " " + data("scalar/escape_weight.json")).code, 3);
}

TEST_F(Cli, SimulateDeterministic) {
  const std::string pol = tmp("pol.json");
  ASSERT_EQ(run("stationary " + data("example2/model.json") + " " + data("example2/sigma.json") + " --out " + pol).code,
            0);
  const std::string base = "simulate " + data("example2/model.json") + " --policy " + pol + " --paths 1 --seed 7 ";
  ASSERT_EQ(run(base + "--out " + tmp("a.csv") + " --stats " + tmp("as.csv")).code, 0);
  ASSERT_EQ(run(base + "--out " + tmp("b.csv") + " --stats " + tmp("bs.csv"), "COVSTEER_THREADS=3").code, 0);
  EXPECT_EQ(slurp(tmp("a.csv")), slurp(tmp("b.csv")));
  EXPECT_EQ(slurp(tmp("as.csv")), slurp(tmp("bs.csv")));
  EXPECT_EQ(slurp(tmp("a.csv")).substr(0, 18), "t,path,x1,x2,x3,u1");
  const auto manifest = nlohmann::json::parse(slurp(tmp("a.csv") + ".manifest.json"));
  EXPECT_EQ(manifest["seed"], 7);
  EXPECT_TRUE(fs::exists(tmp("as.csv") + ".manifest.json"));
  EXPECT_EQ(run(base + "--out " + tmp("c.csv"), "COVSTEER_THREADS=many").code, 1);
}

TEST_F(Cli, SimulateUsageErrors) {
  const std::string pol = tmp("pol.json");
  ASSERT_EQ(run("stationary " + data("example2/model.json") + " " + data("example2/sigma.json") + " --out " + pol).code,
            0);
  EXPECT_EQ(run("simulate " + data("example2/model.json")).code, 1);
  EXPECT_EQ(run("simulate " + data("example2/model.json") + " --policy " + pol + " --plan " + pol).code, 1);
  // Policy built for another model.
  EXPECT_EQ(run("simulate " + data("example1/model.json") + " --policy " + pol + " --paths 5").code, 1);
  EXPECT_EQ(run("simulate " + data("example1/model.json") + " --policy " + pol + " --paths 5 --force").code, 1);
}

TEST_F(Cli, Example1CombinedRun) {
  // Steer from 2I to Sigma1 on [0, 1], then hold Sigma1 on [1, 2].
  const std::string model = data("example1/model.json");
  const std::string plan = tmp("plan.json"), pol = tmp("pol.json");
  ASSERT_EQ(run("steer " + model + " " + data("example1/sigma0.json") + " " + data("example1/sigma1.json") +
                " --steps 100 --out " + plan)
                .code,
            0);
  ASSERT_EQ(run("stationary " + model + " " + data("example1/sigma1.json") + " --out " + pol).code, 0);
  const CliRun a = run("simulate " + model + " --plan " + plan + " --paths 2000 --seed 1 --out " + tmp("t1.csv") +
                    " --stats " + tmp("s1.csv"));
  ASSERT_EQ(a.code, 0) << a.out;
  const CliRun b = run("simulate " + model + " --policy " + pol + " --paths 2000 --seed 2 --horizon 1 --steps 50" +
                    " --t-offset 1 --out " + tmp("t2.csv") + " --stats " + tmp("s2.csv"));
  ASSERT_EQ(b.code, 0) << b.out;
  for (const char* f : {"t1.csv", "s1.csv", "t2.csv", "s2.csv"}) {
    EXPECT_TRUE(fs::exists(tmp(f)));
    EXPECT_TRUE(fs::exists(tmp(std::string(f) + ".manifest.json")));
  }
  std::ifstream s2(tmp("s2.csv"));
  std::string header, first;
  std::getline(s2, header);
  std::getline(s2, first);
  EXPECT_EQ(first.substr(0, 2), "1,");
  const auto terminal = a.value("terminal_cov");
  EXPECT_NEAR(terminal[0][0].get<double>(), 1.0, 0.15);
}
