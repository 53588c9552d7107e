// Command-line front end. Talks to the library only through covsteer.h.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "covsteer/covsteer.h"

using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kInfeasible = 2, kNumerical = 3, kNeedsEpsilon = 4 };

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Model = std::unique_ptr<cs_model, Deleter<cs_model, cs_model_free>>;
using Gaussian = std::unique_ptr<cs_gaussian, Deleter<cs_gaussian, cs_gaussian_free>>;
using Matrix = std::unique_ptr<cs_matrix, Deleter<cs_matrix, cs_matrix_free>>;
using Plan = std::unique_ptr<cs_plan, Deleter<cs_plan, cs_plan_free>>;
using Policy = std::unique_ptr<cs_policy, Deleter<cs_policy, cs_policy_free>>;
using Lqr = std::unique_ptr<cs_lqr, Deleter<cs_lqr, cs_lqr_free>>;
using Sim = std::unique_ptr<cs_sim, Deleter<cs_sim, cs_sim_free>>;

struct Failure {
  int code;
};

int exit_code(cs_status s) {
  switch (s) {
    case CS_OK:
      return kOk;
    case CS_ERR_INVALID_ARGUMENT:
    case CS_ERR_SCHEMA:
    case CS_ERR_DIMENSION:
    case CS_ERR_DIGEST_MISMATCH:
      return kUsage;
    case CS_ERR_NOT_POSITIVE_DEFINITE:
    case CS_ERR_NOT_CONTROLLABLE:
    case CS_ERR_INFEASIBLE:
    case CS_ERR_NOT_ADMISSIBLE:
    case CS_ERR_NOT_HURWITZ:
      return kInfeasible;
    case CS_ERR_NUMERICAL:
    case CS_ERR_INTERNAL:
      return kNumerical;
  }
  return kNumerical;
}

// Throws Failure after reporting; warnings from loaders go to stderr either way.
void check(cs_status s) {
  const std::string warnings = cs_last_warnings();
  if (!warnings.empty()) std::cerr << "warning: " << warnings;
  if (s == CS_OK) return;
  std::cerr << "error (" << cs_status_name(s) << "): " << cs_last_error() << "\n";
  throw Failure{exit_code(s)};
}

json take_json(char* s) {
  json out = json::parse(s);
  cs_string_free(s);
  return out;
}

std::string take_string(char* s) {
  std::string out(s);
  cs_string_free(s);
  return out;
}

std::string digest_of(const std::string& path) {
  char* hex = nullptr;
  check(cs_file_digest(path.c_str(), &hex));
  return take_string(hex);
}

Model load_model(const std::string& path) {
  cs_model* m = nullptr;
  check(cs_model_load(path.c_str(), &m));
  return Model(m);
}

Gaussian load_gaussian(const std::string& path, const char* key = "Sigma") {
  cs_gaussian* g = nullptr;
  check(cs_gaussian_load(path.c_str(), key, &g));
  return Gaussian(g);
}

std::string scalar_text(const json& v) {
  char buf[32];
  if (v.is_number_float()) {
    std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
    return buf;
  }
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

// Machine-readable tail: one "key: value" line per field, nested objects
// flattened with dots.
void print_machine(const json& obj, const std::string& prefix = "") {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (it->is_object()) {
      print_machine(*it, prefix + it.key() + ".");
    } else {
      std::cout << prefix << it.key() << ": " << scalar_text(*it) << "\n";
    }
  }
}

std::string yes_no(const json& v) { return v.get<bool>() ? "yes" : "no"; }

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  std::map<std::string, std::string> inputs;
  std::optional<std::uint64_t> seed;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  std::time_t started_at = std::time(nullptr);

  void input(const std::string& path) { inputs[path] = digest_of(path); }

  // One manifest beside every output file.
  void write(const std::vector<std::string>& outputs) const {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&started_at));
    json doc{{"command", command},
             {"arguments", argv},
             {"tool_version", cs_version()},
             {"input_digests", inputs},
             {"seed", seed ? json(*seed) : json(nullptr)},
             {"started_at", stamp},
             {"wall_clock_seconds", wall},
             {"outputs", outputs}};
    for (const auto& out : outputs) {
      std::ofstream f(out + ".manifest.json");
      f << doc.dump(1) << "\n";
      if (!f) {
        std::cerr << "error: cannot write manifest for " << out << "\n";
        throw Failure{kUsage};
      }
    }
  }
};

int resolve_threads(int flag) {
  const char* env = std::getenv("COVSTEER_THREADS");
  if (!env || !*env) return flag;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 0 || v > 4096) {
    std::cerr << "error: COVSTEER_THREADS must be a non-negative integer, got \"" << env << "\"\n";
    throw Failure{kUsage};
  }
  return static_cast<int>(v);
}

// ---- check ------------------------------------------------------------

struct CheckArgs {
  std::string model;
  std::string sigma;
};

int run_check(const CheckArgs& a) {
  Model model = load_model(a.model);
  Gaussian sigma;
  if (!a.sigma.empty()) sigma = load_gaussian(a.sigma);
  char* raw = nullptr;
  check(cs_check(model.get(), sigma.get(), &raw));
  const json rep = take_json(raw);

  std::cout << "model " << a.model << ": " << rep["states"] << " states, " << rep["inputs"] << " inputs, "
            << rep["noise_channels"] << " noise channels\n";
  std::cout << "  (A, B) controllable: " << yes_no(rep["controllable"]) << " (rank " << rep["controllability_rank"]
            << ")\n";
  std::cout << "  covariance equation steerable: " << yes_no(rep["lyapunov_controllable"]) << "\n";
  std::cout << "  R(B) inside R(B1): " << yes_no(rep["channel_inclusion"]) << "\n";
  if (rep.contains("admissible")) {
    std::cout << "covariance " << a.sigma << ":\n";
    std::cout << "  admissible as a stationary covariance: " << yes_no(rep["admissible"]) << " (ranks "
              << rep["rank_lhs"] << " / " << rep["rank_rhs"] << ")\n";
    std::cout << "  projection test agrees: " << yes_no(rep["hotz_skelton"]) << "\n";
  }
  std::cout << "\n";
  print_machine(rep);
  return kOk;
}

// ---- steer ------------------------------------------------------------

struct SteerArgs {
  std::string model, sigma0, sigmaT, out, method = "auto";
  double horizon = 1.0;
  int steps = 100;
};

int run_steer(const SteerArgs& a, Manifest& man) {
  Model model = load_model(a.model);
  Gaussian s0 = load_gaussian(a.sigma0);
  Gaussian sT = load_gaussian(a.sigmaT);
  man.input(a.model);
  man.input(a.sigma0);
  man.input(a.sigmaT);
  const cs_method method =
      a.method == "sdp" ? CS_METHOD_SDP : a.method == "schrodinger" ? CS_METHOD_SCHRODINGER : CS_METHOD_AUTO;
  cs_plan* raw = nullptr;
  check(cs_steer(model.get(), s0.get(), sT.get(), a.horizon, a.steps, method, &raw));
  Plan plan(raw);
  if (!a.out.empty()) {
    check(cs_plan_save(plan.get(), a.out.c_str()));
    man.write({a.out});
  }
  char* s = nullptr;
  check(cs_plan_summary(plan.get(), &s));
  json sum = take_json(s);
  std::cout << "steering plan via " << sum["method"].get<std::string>() << " over [0, " << scalar_text(sum["t_end"])
            << "] with " << sum["steps"] << " steps: " << sum["solver_status"].get<std::string>() << "\n";
  std::cout << "  expected control energy " << scalar_text(sum["cost"]) << "\n";
  std::cout << "  terminal covariance mismatch " << scalar_text(sum["boundary_residual"]) << " (relative)\n";
  if (!a.out.empty()) std::cout << "  written to " << a.out << "\n";
  std::cout << "\n";
  sum.erase("terminal_cov");
  print_machine(sum);
  return kOk;
}

// ---- stationary -------------------------------------------------------

struct StationaryArgs {
  std::string model, sigma, out;
  std::optional<double> epsilon;
};

int run_stationary(const StationaryArgs& a, Manifest& man) {
  Model model = load_model(a.model);
  Gaussian sigma = load_gaussian(a.sigma);
  man.input(a.model);
  man.input(a.sigma);
  cs_policy* raw = nullptr;
  const cs_status st = cs_stationary(model.get(), sigma.get(), a.epsilon.value_or(-1.0), &raw);
  if (st == CS_ERR_NOT_HURWITZ && a.epsilon) {
    std::cerr << "error: " << cs_last_error() << "\n"
              << "hint: the relaxed gain is still not stabilizing; retry with a larger --epsilon\n";
    return kNeedsEpsilon;
  }
  check(st);
  Policy policy(raw);
  if (!a.out.empty()) {
    check(cs_policy_save(policy.get(), a.out.c_str()));
    man.write({a.out});
  }
  char* s = nullptr;
  check(cs_policy_summary(policy.get(), &s));
  const json sum = take_json(s);
  std::cout << "stationary gain K = " << sum["K"].dump() << "\n";
  std::cout << "  input power " << scalar_text(sum["power"]) << ", closed loop Hurwitz: " << yes_no(sum["hurwitz"])
            << ", free parameters " << sum["homogeneous_dim"] << "\n";
  if (sum.contains("willems")) {
    const json& w = sum["willems"];
    if (w.contains("error")) {
      std::cout << "  ARE cross-check unavailable: " << w["error"].get<std::string>() << "\n";
    } else {
      std::cout << "  ARE cross-check residual " << scalar_text(w["are_residual"])
                << ", Hamiltonian clear of the imaginary axis: " << yes_no(w["imaginary_axis_clear"]) << "\n";
    }
  }
  if (!a.out.empty()) std::cout << "  written to " << a.out << "\n";
  std::cout << "\n";
  json flat = sum;
  flat["K"] = sum["K"].dump();
  if (flat.contains("willems")) flat["willems"].erase("Q");
  print_machine(flat);
  if (!sum["hurwitz"].get<bool>()) {
    std::cerr << "the minimum-power gain does not stabilize the loop; rerun with --epsilon E (E > 0) to trade a "
                 "small covariance defect for stability\n";
    return kNeedsEpsilon;
  }
  return kOk;
}

// ---- lqr --------------------------------------------------------------

struct LqrArgs {
  std::string model, sigma0, weight, out;
  double horizon = 1.0;
  int steps = 100;
};

int run_lqr(const LqrArgs& a, Manifest& man) {
  Model model = load_model(a.model);
  Gaussian s0 = load_gaussian(a.sigma0);
  cs_matrix* mraw = nullptr;
  check(cs_matrix_load(a.weight.c_str(), "M", &mraw));
  Matrix weight(mraw);
  man.input(a.model);
  man.input(a.sigma0);
  man.input(a.weight);
  cs_lqr* raw = nullptr;
  check(cs_lqr_solve(model.get(), s0.get(), weight.get(), a.horizon, a.steps, &raw));
  Lqr sol(raw);
  if (!a.out.empty()) {
    check(cs_lqr_save(sol.get(), a.out.c_str()));
    man.write({a.out});
  }
  char* s = nullptr;
  check(cs_lqr_summary(sol.get(), &s));
  json sum = take_json(s);
  std::cout << "terminal-cost LQG over [0, " << scalar_text(sum["t_end"]) << "], " << sum["steps"] << " steps\n";
  std::cout << "  Pi(0) = " << sum["Pi0"].dump() << "\n  cost " << scalar_text(sum["cost"]) << "\n";
  if (!a.out.empty()) std::cout << "  written to " << a.out << "\n";
  std::cout << "\n";
  sum["Pi0"] = sum["Pi0"].dump();
  sum["K0"] = sum["K0"].dump();
  sum.erase("terminal_cov");
  print_machine(sum);
  return kOk;
}

// ---- simulate ---------------------------------------------------------

struct SimArgs {
  std::string model, plan, policy, traj, stats;
  int paths = 1000;
  std::uint64_t seed = 0;
  int substeps = 10;
  int threads = 0;
  int retain = -1;
  double horizon = 1.0;
  int steps = 100;
  double t_offset = 0.0;
  bool force = false;
};

int run_simulate(const SimArgs& a, Manifest& man) {
  if (a.plan.empty() == a.policy.empty()) {
    std::cerr << "error: give exactly one of --plan or --policy\n";
    return kUsage;
  }
  if (a.traj.empty() && a.stats.empty()) {
    std::cerr << "error: nothing to write; give --out and/or --stats\n";
    return kUsage;
  }
  Model model = load_model(a.model);
  man.input(a.model);
  man.seed = a.seed;
  cs_sim_config cfg = cs_sim_config_default();
  cfg.paths = a.paths;
  cfg.seed = a.seed;
  cfg.substeps = a.substeps;
  cfg.threads = resolve_threads(a.threads);
  cfg.retain_paths = a.traj.empty() ? 0 : (a.retain >= 0 ? a.retain : std::min(a.paths, 100));
  cs_sim* raw = nullptr;
  if (!a.plan.empty()) {
    cs_plan* p = nullptr;
    check(cs_plan_load(a.plan.c_str(), &p));
    Plan plan(p);
    man.input(a.plan);
    check(cs_simulate_plan(model.get(), plan.get(), &cfg, a.force ? 1 : 0, &raw));
  } else {
    cs_policy* p = nullptr;
    check(cs_policy_load(a.policy.c_str(), &p));
    Policy policy(p);
    man.input(a.policy);
    check(cs_simulate_policy(model.get(), policy.get(), a.horizon, a.steps, &cfg, a.force ? 1 : 0, &raw));
  }
  Sim sim(raw);
  std::vector<std::string> outputs;
  if (!a.traj.empty()) {
    check(cs_sim_write_traj(sim.get(), a.traj.c_str(), a.t_offset));
    outputs.push_back(a.traj);
  }
  if (!a.stats.empty()) {
    check(cs_sim_write_stats(sim.get(), a.stats.c_str(), a.t_offset));
    outputs.push_back(a.stats);
  }
  man.write(outputs);
  char* s = nullptr;
  check(cs_sim_summary(sim.get(), &s));
  json sum = take_json(s);
  std::cout << "simulated " << sum["paths"] << " paths (seed " << sum["seed"] << ")\n";
  std::cout << "  terminal covariance " << sum["terminal_cov"].dump() << "\n";
  std::cout << "  mean input energy " << scalar_text(sum["energy_estimate"]) << "\n\n";
  sum["terminal_cov"] = sum["terminal_cov"].dump();
  sum["terminal_mean"] = sum["terminal_mean"].dump();
  print_machine(sum);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Covariance steering for linear stochastic systems"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cs_version()));

  Manifest man;
  for (int i = 0; i < argc; ++i) man.argv.emplace_back(argv[i]);

  CheckArgs ca;
  auto* c = app.add_subcommand("check", "Structural checks on a model and optional covariance");
  c->add_option("model", ca.model, "Model file {A, B, B1}")->required()->check(CLI::ExistingFile);
  c->add_option("sigma", ca.sigma, "Covariance file {Sigma}")->check(CLI::ExistingFile);

  SteerArgs sa;
  auto* s = app.add_subcommand("steer", "Finite-horizon covariance steering");
  s->add_option("model", sa.model)->required()->check(CLI::ExistingFile);
  s->add_option("sigma0", sa.sigma0)->required()->check(CLI::ExistingFile);
  s->add_option("sigmaT", sa.sigmaT)->required()->check(CLI::ExistingFile);
  s->add_option("--horizon", sa.horizon, "Horizon T")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--steps", sa.steps, "Grid intervals N")->capture_default_str()->check(CLI::Range(1, 1000000));
  s->add_option("--method", sa.method)->capture_default_str()->check(CLI::IsMember({"sdp", "schrodinger", "auto"}));
  s->add_option("--out", sa.out, "Plan file to write");

  StationaryArgs ta;
  auto* t = app.add_subcommand("stationary", "Minimum-power gain holding a stationary covariance");
  t->add_option("model", ta.model)->required()->check(CLI::ExistingFile);
  t->add_option("sigma", ta.sigma)->required()->check(CLI::ExistingFile);
  t->add_option("--epsilon", ta.epsilon, "Relaxation K + eps/2 B' Sigma^-1")->check(CLI::NonNegativeNumber);
  t->add_option("--out", ta.out, "Policy file to write");

  LqrArgs la;
  auto* l = app.add_subcommand("lqr", "Terminal-cost LQG baseline");
  l->add_option("model", la.model)->required()->check(CLI::ExistingFile);
  l->add_option("sigma0", la.sigma0)->required()->check(CLI::ExistingFile);
  l->add_option("M", la.weight, "Terminal weight file {M}")->required()->check(CLI::ExistingFile);
  l->add_option("--horizon", la.horizon)->capture_default_str()->check(CLI::PositiveNumber);
  l->add_option("--steps", la.steps)->capture_default_str()->check(CLI::Range(1, 1000000));
  l->add_option("--out", la.out);

  SimArgs ma;
  auto* m = app.add_subcommand("simulate", "Monte Carlo simulation of a plan or policy");
  m->add_option("model", ma.model)->required()->check(CLI::ExistingFile);
  auto* plan_opt = m->add_option("--plan", ma.plan)->check(CLI::ExistingFile);
  auto* pol_opt = m->add_option("--policy", ma.policy)->check(CLI::ExistingFile);
  plan_opt->excludes(pol_opt);
  m->add_option("--paths", ma.paths)->capture_default_str()->check(CLI::Range(1, 100000000));
  m->add_option("--seed", ma.seed)->capture_default_str();
  m->add_option("--substeps", ma.substeps, "Euler-Maruyama steps per interval")
      ->capture_default_str()
      ->check(CLI::Range(1, 100000));
  m->add_option("--threads", ma.threads, "Workers (0: available parallelism; COVSTEER_THREADS overrides)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  m->add_option("--retain", ma.retain, "Paths written to the trajectory file (default min(paths, 100))");
  m->add_option("--horizon", ma.horizon, "Policy simulation length")->capture_default_str()->check(CLI::PositiveNumber);
  m->add_option("--steps", ma.steps, "Policy simulation nodes - 1")->capture_default_str()->check(CLI::Range(1, 1000000));
  m->add_option("--t-offset", ma.t_offset, "Added to the time column")->capture_default_str();
  m->add_option("--out", ma.traj, "Trajectory CSV");
  m->add_option("--stats", ma.stats, "Statistics CSV");
  m->add_flag("--force", ma.force, "Accept a plan/policy built for another model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (c->parsed()) {
      man.command = "check";
      return run_check(ca);
    }
    if (s->parsed()) {
      man.command = "steer";
      return run_steer(sa, man);
    }
    if (t->parsed()) {
      man.command = "stationary";
      return run_stationary(ta, man);
    }
    if (l->parsed()) {
      man.command = "lqr";
      return run_lqr(la, man);
    }
    man.command = "simulate";
    return run_simulate(ma, man);
  } catch (const Failure& f) {
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  }
}
