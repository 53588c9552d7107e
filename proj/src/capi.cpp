#include "covsteer/covsteer.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <limits>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include "covsteer/serialization.hpp"

using namespace covsteer;
using io::Json;

struct cs_model {
  LinearSystem sys;
  std::string digest;
};

struct cs_gaussian {
  GaussianState state;
};

struct cs_matrix {
  SymMat value;
};

struct cs_plan {
  SteeringPlan plan;
  std::string model_digest;
};

struct cs_policy {
  StationaryPolicy policy;
  std::string model_digest;
  int homogeneous_dim = 0;
  Json willems;  // null when not computed
};

struct cs_lqr {
  LqrSolution sol;
};

struct cs_sim {
  SimResult res;
  int paths = 0;
  std::uint64_t seed = 0;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_warnings;

cs_status status_of(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidArgument:
    case ErrorKind::RankDeficientB:
      return CS_ERR_INVALID_ARGUMENT;
    case ErrorKind::Schema:
      return CS_ERR_SCHEMA;
    case ErrorKind::DimensionMismatch:
      return CS_ERR_DIMENSION;
    case ErrorKind::PositiveDefiniteViolation:
      return CS_ERR_NOT_POSITIVE_DEFINITE;
    case ErrorKind::NotControllable:
      return CS_ERR_NOT_CONTROLLABLE;
    case ErrorKind::Infeasible:
      return CS_ERR_INFEASIBLE;
    case ErrorKind::NotAdmissible:
      return CS_ERR_NOT_ADMISSIBLE;
    case ErrorKind::NotHurwitz:
      return CS_ERR_NOT_HURWITZ;
    case ErrorKind::DigestMismatch:
      return CS_ERR_DIGEST_MISMATCH;
    case ErrorKind::SingularLyapunov:
    case ErrorKind::Indeterminate:
    case ErrorKind::NonFiniteState:
    case ErrorKind::RiccatiEscape:
    case ErrorKind::MaxIterations:
    case ErrorKind::NoConvergence:
    case ErrorKind::NotSolved:
      return CS_ERR_NUMERICAL;
  }
  return CS_ERR_INTERNAL;
}

template <class F>
cs_status guarded(F&& body) {
  try {
    body();
    g_error.clear();
    return CS_OK;
  } catch (const Error& e) {
    g_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_error = "out of memory";
  } catch (const std::exception& e) {
    g_error = e.what();
  } catch (...) {
    g_error = "unknown failure";
  }
  return CS_ERR_INTERNAL;
}

void require(const void* p, const char* name) {
  if (!p) throw Error(ErrorKind::InvalidArgument, std::string(name) + " is NULL");
}

// Prefixes the failing file to a load error, keeping the kind.
[[noreturn]] void with_origin(const Error& e, const char* path) {
  std::string msg = e.what();
  const std::string head = std::string(to_string(e.kind())) + ": ";
  if (msg.rfind(head, 0) == 0) msg.erase(0, head.size());
  throw Error(e.kind(), std::string(path) + " " + msg);
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void set_warnings(const std::vector<std::string>& w) {
  g_warnings.clear();
  for (const auto& line : w) g_warnings += line + "\n";
}

double min_eigenvalue(const SymMat& s) {
  return Eigen::SelfAdjointEigenSolver<Mat>(s.mat(), Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

void check_digest(const std::string& expected, const cs_model* m, int force, const char* what) {
  if (!force && expected != m->digest) {
    throw Error(ErrorKind::DigestMismatch,
                std::string(what) + " was computed for a different model (digest " + expected.substr(0, 12) +
                    "..., model " + m->digest.substr(0, 12) + "...); pass --force to override");
  }
}

SimConfig to_config(const cs_sim_config* cfg) {
  const cs_sim_config c = cfg ? *cfg : cs_sim_config_default();
  SimConfig out;
  out.paths = c.paths;
  out.seed = c.seed;
  out.substeps = c.substeps;
  out.threads = c.threads;
  out.retain_paths = c.retain_paths;
  return out;
}

Json willems_json(const LinearSystem& sys, const StationaryPolicy& pol) {
  if (!pol.hurwitz) return nullptr;
  try {
    const WillemsReport w = willems_cross_check(sys, pol);
    return Json{{"are_residual", w.are_residual},
                {"imaginary_axis_clear", w.hamiltonian_imaginary_axis_clear},
                {"axis_distance", w.axis_distance},
                {"Q", io::to_json(w.Q.mat())}};
  } catch (const Error& e) {
    return Json{{"error", e.what()}};
  }
}

}  // namespace

extern "C" {

const char* cs_last_error(void) { return g_error.c_str(); }
const char* cs_last_warnings(void) { return g_warnings.c_str(); }

const char* cs_status_name(cs_status s) {
  switch (s) {
    case CS_OK: return "ok";
    case CS_ERR_INVALID_ARGUMENT: return "invalid argument";
    case CS_ERR_SCHEMA: return "schema error";
    case CS_ERR_DIMENSION: return "dimension mismatch";
    case CS_ERR_NOT_POSITIVE_DEFINITE: return "not positive definite";
    case CS_ERR_NOT_CONTROLLABLE: return "not controllable";
    case CS_ERR_INFEASIBLE: return "infeasible";
    case CS_ERR_NOT_ADMISSIBLE: return "not admissible";
    case CS_ERR_NOT_HURWITZ: return "not Hurwitz";
    case CS_ERR_DIGEST_MISMATCH: return "digest mismatch";
    case CS_ERR_NUMERICAL: return "numerical failure";
    case CS_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* cs_version(void) { return COVSTEER_VERSION; }

void cs_string_free(char* s) { std::free(s); }

cs_status cs_file_digest(const char* path, char** hex_out) {
  return guarded([&] {
    require(path, "path");
    require(hex_out, "hex_out");
    *hex_out = dup(io::file_sha256(path));
  });
}

cs_status cs_model_from_json(const char* json, cs_model** out) {
  return guarded([&] {
    require(json, "json");
    require(out, "out");
    LinearSystem sys = io::system_from_json(io::parse(json, "model"));
    std::string digest = io::model_digest(sys);
    *out = new cs_model{std::move(sys), std::move(digest)};
  });
}

cs_status cs_model_load(const char* path, cs_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    Json doc = io::load_json(path);
    try {
      LinearSystem sys = io::system_from_json(doc);
      std::string digest = io::model_digest(sys);
      *out = new cs_model{std::move(sys), std::move(digest)};
    } catch (const Error& e) {
      with_origin(e, path);
    }
  });
}

void cs_model_free(cs_model* m) { delete m; }
size_t cs_model_states(const cs_model* m) { return m ? static_cast<size_t>(m->sys.n()) : 0; }
size_t cs_model_inputs(const cs_model* m) { return m ? static_cast<size_t>(m->sys.m()) : 0; }

cs_status cs_model_digest(const cs_model* m, char** hex_out) {
  return guarded([&] {
    require(m, "model");
    require(hex_out, "hex_out");
    *hex_out = dup(m->digest);
  });
}

cs_status cs_gaussian_from_json(const char* json, const char* key, cs_gaussian** out) {
  return guarded([&] {
    require(json, "json");
    require(key, "key");
    require(out, "out");
    std::vector<std::string> warnings;
    GaussianState g = io::gaussian_from_json(io::parse(json, "covariance"), key, &warnings);
    set_warnings(warnings);
    *out = new cs_gaussian{std::move(g)};
  });
}

cs_status cs_gaussian_load(const char* path, const char* key, cs_gaussian** out) {
  return guarded([&] {
    require(path, "path");
    require(key, "key");
    require(out, "out");
    std::vector<std::string> warnings;
    try {
      GaussianState g = io::gaussian_from_json(io::load_json(path), key, &warnings);
      *out = new cs_gaussian{std::move(g)};
    } catch (const Error& e) {
      with_origin(e, path);
    }
    for (auto& w : warnings) w = std::string(path) + " " + w;
    set_warnings(warnings);
  });
}

void cs_gaussian_free(cs_gaussian* g) { delete g; }

cs_status cs_matrix_load(const char* path, const char* key, cs_matrix** out) {
  return guarded([&] {
    require(path, "path");
    require(key, "key");
    require(out, "out");
    std::vector<std::string> warnings;
    try {
      SymMat s = io::symmetric_field(io::load_json(path), key, &warnings);
      *out = new cs_matrix{std::move(s)};
    } catch (const Error& e) {
      with_origin(e, path);
    }
    for (auto& w : warnings) w = std::string(path) + " " + w;
    set_warnings(warnings);
  });
}

void cs_matrix_free(cs_matrix* m) { delete m; }

cs_status cs_check(const cs_model* m, const cs_gaussian* sigma, char** report_json) {
  return guarded([&] {
    require(m, "model");
    require(report_json, "report_json");
    const LinearSystem& sys = m->sys;
    const ControllabilityReport c = check_controllable(sys);
    Json rep{{"states", sys.n()},
             {"inputs", sys.m()},
             {"noise_channels", sys.p()},
             {"controllable", c.controllable},
             {"controllability_rank", c.rank},
             {"lyapunov_controllable", check_lyapunov_controllability(sys)},
             {"channel_inclusion", check_channel_inclusion(sys)},
             {"matched_channels", sys.matched_channels()},
             {"model_digest", m->digest}};
    if (sigma) {
      const StationaryProblem prob(sys, sigma->state.cov());
      const AdmissibilityReport a = check_admissible(prob);
      rep["admissible"] = a.admissible;
      rep["rank_lhs"] = a.rank_lhs;
      rep["rank_rhs"] = a.rank_rhs;
      rep["homogeneous_dim"] = a.homogeneous_dim;
      rep["least_squares_residual"] = a.residual;
      rep["tests_agree"] = a.tests_agree;
      rep["hotz_skelton"] = hotz_skelton_check(prob);
    }
    *report_json = dup(rep.dump());
  });
}

cs_status cs_steer(const cs_model* m, const cs_gaussian* initial, const cs_gaussian* terminal, double horizon,
                   int steps, cs_method method, cs_plan** out) {
  return guarded([&] {
    require(m, "model");
    require(initial, "initial");
    require(terminal, "terminal");
    require(out, "out");
    if (!(horizon > 0.0)) throw Error(ErrorKind::InvalidArgument, "horizon must be positive");
    const SteeringProblem prob(m->sys, initial->state, terminal->state, TimeGrid(0.0, horizon, steps));
    SteeringPlan plan;
    if (method == CS_METHOD_SDP) {
      plan = steer_sdp(prob);
    } else if (method == CS_METHOD_SCHRODINGER) {
      if (!m->sys.matched_channels()) {
        throw Error(ErrorKind::InvalidArgument, "method schrodinger requires matched channels (B = B1)");
      }
      plan = steer_schrodinger(prob).second;
    } else if (method == CS_METHOD_AUTO) {
      bool done = false;
      if (m->sys.matched_channels()) {
        try {
          plan = steer_schrodinger(prob).second;
          done = true;
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::NoConvergence) throw;
        }
      }
      if (!done) plan = steer_sdp(prob);
    } else {
      throw Error(ErrorKind::InvalidArgument, "unknown method");
    }
    *out = new cs_plan{std::move(plan), m->digest};
  });
}

cs_status cs_plan_load(const char* path, cs_plan** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    try {
      io::PlanDocument doc = io::plan_from_json(io::load_json(path));
      *out = new cs_plan{std::move(doc.plan), std::move(doc.model_digest)};
    } catch (const Error& e) {
      with_origin(e, path);
    }
  });
}

cs_status cs_plan_save(const cs_plan* p, const char* path) {
  return guarded([&] {
    require(p, "plan");
    require(path, "path");
    io::write_json(io::to_json(p->plan, p->model_digest), path);
  });
}

cs_status cs_plan_summary(const cs_plan* p, char** summary_json) {
  return guarded([&] {
    require(p, "plan");
    require(summary_json, "summary_json");
    const SteeringPlan& plan = p->plan;
    const SteeringDiagnostics& d = plan.diagnostics;
    double min_eig = std::numeric_limits<double>::infinity();
    for (const auto& s : plan.cov_pred) min_eig = std::min(min_eig, min_eigenvalue(s));
    Json sum{{"method", d.method},
             {"solver_status", d.solver_status},
             {"steps", plan.grid.steps},
             {"t_start", plan.grid.t_start},
             {"t_end", plan.grid.t_end},
             {"cost", plan.cost},
             {"mean_energy", plan.mean_energy},
             {"total_cost", plan.total_cost()},
             {"boundary_residual", d.boundary_residual},
             {"continuous_defect", d.continuous_defect},
             {"iterations", d.iterations},
             {"kkt_primal", d.kkt.primal},
             {"kkt_dual", d.kkt.dual},
             {"kkt_gap", d.kkt.gap},
             {"objective", d.objective},
             {"dual_bound", d.dual_bound},
             {"min_cov_eigenvalue", min_eig},
             {"terminal_cov", io::to_json(plan.cov_pred.back().mat())},
             {"model_digest", p->model_digest}};
    *summary_json = dup(sum.dump());
  });
}

cs_status cs_plan_digest(const cs_plan* p, char** hex_out) {
  return guarded([&] {
    require(p, "plan");
    require(hex_out, "hex_out");
    *hex_out = dup(p->model_digest);
  });
}

void cs_plan_free(cs_plan* p) { delete p; }

cs_status cs_stationary(const cs_model* m, const cs_gaussian* sigma, double epsilon, cs_policy** out) {
  return guarded([&] {
    require(m, "model");
    require(sigma, "sigma");
    require(out, "out");
    const StationaryProblem prob(m->sys, sigma->state.cov());
    const AdmissibilityReport rep = check_admissible(prob);
    StationaryPolicy pol = min_power_gain(prob);
    if (epsilon >= 0.0) pol = relax_epsilon(prob, pol, epsilon);
    Json willems = willems_json(m->sys, pol);
    *out = new cs_policy{std::move(pol), m->digest, rep.homogeneous_dim, std::move(willems)};
  });
}

cs_status cs_policy_load(const char* path, cs_policy** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    try {
      io::PolicyDocument doc = io::policy_from_json(io::load_json(path));
      *out = new cs_policy{std::move(doc.policy), std::move(doc.model_digest), doc.homogeneous_dim, nullptr};
    } catch (const Error& e) {
      with_origin(e, path);
    }
  });
}

cs_status cs_policy_save(const cs_policy* p, const char* path) {
  return guarded([&] {
    require(p, "policy");
    require(path, "path");
    io::write_json(io::to_json(p->policy, p->model_digest, p->homogeneous_dim), path);
  });
}

cs_status cs_policy_summary(const cs_policy* p, char** summary_json) {
  return guarded([&] {
    require(p, "policy");
    require(summary_json, "summary_json");
    const StationaryPolicy& pol = p->policy;
    Json sum{{"K", io::to_json(pol.K)},
             {"power", pol.power},
             {"hurwitz", pol.hurwitz},
             {"homogeneous_dim", p->homogeneous_dim},
             {"epsilon", pol.epsilon},
             {"defect", pol.defect},
             {"achieved_power", pol.achieved_power},
             {"model_digest", p->model_digest}};
    if (!p->willems.is_null()) sum["willems"] = p->willems;
    *summary_json = dup(sum.dump());
  });
}

cs_status cs_policy_digest(const cs_policy* p, char** hex_out) {
  return guarded([&] {
    require(p, "policy");
    require(hex_out, "hex_out");
    *hex_out = dup(p->model_digest);
  });
}

int cs_policy_hurwitz(const cs_policy* p) { return p && p->policy.hurwitz ? 1 : 0; }

void cs_policy_free(cs_policy* p) { delete p; }

cs_status cs_lqr_solve(const cs_model* m, const cs_gaussian* sigma0, const cs_matrix* terminal_weight, double horizon,
                       int steps, cs_lqr** out) {
  return guarded([&] {
    require(m, "model");
    require(sigma0, "sigma0");
    require(terminal_weight, "terminal_weight");
    require(out, "out");
    if (!(horizon > 0.0)) throw Error(ErrorKind::InvalidArgument, "horizon must be positive");
    LqrSolution sol = solve_lqr(m->sys, sigma0->state.cov(), terminal_weight->value, TimeGrid(0.0, horizon, steps));
    *out = new cs_lqr{std::move(sol)};
  });
}

cs_status cs_lqr_save(const cs_lqr* l, const char* path) {
  return guarded([&] {
    require(l, "lqr");
    require(path, "path");
    io::write_json(io::to_json(l->sol), path);
  });
}

cs_status cs_lqr_summary(const cs_lqr* l, char** summary_json) {
  return guarded([&] {
    require(l, "lqr");
    require(summary_json, "summary_json");
    const LqrSolution& s = l->sol;
    Json sum{{"steps", s.grid.steps},
             {"t_end", s.grid.t_end},
             {"cost", s.cost},
             {"Pi0", io::to_json(s.Pi.front().mat())},
             {"K0", io::to_json(s.gains.front())},
             {"terminal_cov", io::to_json(s.cov.back().mat())}};
    *summary_json = dup(sum.dump());
  });
}

void cs_lqr_free(cs_lqr* l) { delete l; }

cs_sim_config cs_sim_config_default(void) {
  const SimConfig d;
  return cs_sim_config{d.paths, d.seed, d.substeps, d.threads, d.retain_paths};
}

cs_status cs_simulate_plan(const cs_model* m, const cs_plan* p, const cs_sim_config* cfg, int force, cs_sim** out) {
  return guarded([&] {
    require(m, "model");
    require(p, "plan");
    require(out, "out");
    check_digest(p->model_digest, m, force, "plan");
    const SteeringPlan& plan = p->plan;
    const GaussianState init(plan.mean_pred.front(), plan.cov_pred.front());
    const SimConfig c = to_config(cfg);
    SimResult res = simulate_plan(m->sys, plan, init, c);
    *out = new cs_sim{std::move(res), c.paths, c.seed};
  });
}

cs_status cs_simulate_policy(const cs_model* m, const cs_policy* p, double horizon, int steps,
                             const cs_sim_config* cfg, int force, cs_sim** out) {
  return guarded([&] {
    require(m, "model");
    require(p, "policy");
    require(out, "out");
    check_digest(p->model_digest, m, force, "policy");
    if (!(horizon > 0.0)) throw Error(ErrorKind::InvalidArgument, "horizon must be positive");
    const GaussianState init = GaussianState::centered(p->policy.Sigma);
    const SimConfig c = to_config(cfg);
    SimResult res = simulate_policy(m->sys, p->policy, init, horizon, steps, c);
    *out = new cs_sim{std::move(res), c.paths, c.seed};
  });
}

cs_status cs_sim_write_traj(const cs_sim* s, const char* path, double t_offset) {
  return guarded([&] {
    require(s, "sim");
    require(path, "path");
    io::write_traj_csv(s->res, path, t_offset);
  });
}

cs_status cs_sim_write_stats(const cs_sim* s, const char* path, double t_offset) {
  return guarded([&] {
    require(s, "sim");
    require(path, "path");
    io::write_stats_csv(s->res, path, t_offset);
  });
}

cs_status cs_sim_summary(const cs_sim* s, char** summary_json) {
  return guarded([&] {
    require(s, "sim");
    require(summary_json, "summary_json");
    Json sum{{"paths", s->paths},
             {"seed", s->seed},
             {"steps", s->res.grid.steps},
             {"energy_estimate", s->res.energy_estimate},
             {"terminal_mean", io::to_json(s->res.mean.back())},
             {"terminal_cov", io::to_json(s->res.cov.back().mat())},
             {"retained_paths", s->res.states.size()}};
    *summary_json = dup(sum.dump());
  });
}

void cs_sim_free(cs_sim* s) { delete s; }

}  // extern "C"
