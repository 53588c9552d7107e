#include "covsteer/steering.hpp"

#include <algorithm>
#include <cmath>

#include "covsteer/lqr.hpp"

namespace covsteer {

namespace {

double relative_defect(const SymMat& got, const SymMat& want) {
  return (got.mat() - want.mat()).norm() / want.mat().norm();
}

Mat h_rhs(const LinearSystem& sys, const Mat& h) {
  const Mat hb = h * sys.B();
  return -sys.A().transpose() * h - h * sys.A() - hb * hb.transpose();
}

void attach_mean(const SteeringProblem& prob, SteeringPlan& plan) {
  const Eigen::Index n = prob.system.n();
  const Eigen::Index m = prob.system.m();
  const int steps = prob.grid.steps;
  if (prob.initial.mean().isZero(0.0) && prob.terminal.mean().isZero(0.0)) {
    plan.feedforward.assign(static_cast<size_t>(steps) + 1, Vec::Zero(m));
    plan.mean_pred.assign(static_cast<size_t>(steps) + 1, Vec::Zero(n));
    plan.mean_energy = 0.0;
    return;
  }
  MeanSteering ms = steer_mean(prob.system, prob.initial.mean(), prob.terminal.mean(), prob.grid);
  plan.feedforward = std::move(ms.feedforward);
  plan.mean_pred = std::move(ms.mean);
  plan.mean_energy = ms.energy;
}

void require_controllable(const LinearSystem& sys) {
  const auto report = check_controllable(sys);
  if (!report.controllable) {
    throw Error(ErrorKind::NotControllable,
                "(A, B) is not controllable: rank " + std::to_string(report.rank) + " < " +
                    std::to_string(sys.n()));
  }
}

}  // namespace

bool check_lyapunov_controllability(const LinearSystem& sys) { return check_controllable(sys).controllable; }

std::vector<SymMat> propagate_covariance(const LinearSystem& sys, const SymMat& q,
                                         const std::vector<Mat>& gains, const TimeGrid& grid,
                                         const SymMat& sigma0, int substeps) {
  if (static_cast<int>(gains.size()) != grid.steps) {
    throw Error(ErrorKind::DimensionMismatch, "need one gain per grid interval");
  }
  if (substeps < 1) throw Error(ErrorKind::InvalidArgument, "substeps must be positive");
  const double h = grid.dt() / substeps;
  std::vector<SymMat> out;
  out.reserve(gains.size() + 1);
  out.push_back(sigma0);
  Mat s = sigma0.mat();
  for (const Mat& k : gains) {
    const Mat f = sys.A() - sys.B() * k;
    auto rhs = [&](const Mat& x) -> Mat { return f * x + x * f.transpose() + q.mat(); };
    for (int j = 0; j < substeps; ++j) {
      const Mat k1 = rhs(s);
      const Mat k2 = rhs(s + 0.5 * h * k1);
      const Mat k3 = rhs(s + 0.5 * h * k2);
      const Mat k4 = rhs(s + h * k3);
      s = symmetrized(s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    }
    if (!all_finite(s)) throw Error(ErrorKind::NonFiniteState, "covariance overflowed");
    out.emplace_back(s);
  }
  return out;
}

SteeringPlan steer_sdp(const SteeringProblem& prob, const std::optional<SymMat>& q_extra,
                       const SteeringOptions& opts) {
  const LinearSystem& sys = prob.system;
  require_controllable(sys);
  if (q_extra) {
    const Mat& qe = q_extra->mat();
    const double shift = tol::kPivot * (1.0 + qe.norm());
    if (qe.rows() == sys.n() &&
        !is_positive_definite(SymMat(qe + shift * Mat::Identity(qe.rows(), qe.cols())), 0.0)) {
      throw Error(ErrorKind::InvalidArgument, "extra forcing must be positive semidefinite");
    }
  }
  const conic::SteeringProgram prog = conic::SteeringProgram::from_problem(prob, q_extra);
  const conic::ConicSolution sol = conic::solve(prog, opts.conic);
  if (sol.status == conic::Status::Infeasible) {
    throw Error(ErrorKind::Infeasible, "conic solver reports the discretized program infeasible");
  }
  if (sol.status != conic::Status::Optimal) {
    throw Error(ErrorKind::MaxIterations, "conic solver stopped after " + std::to_string(sol.iterations) +
                                              " iterations without meeting tolerance");
  }

  const int steps = prob.grid.steps;
  const double dt = prob.grid.dt();
  SteeringPlan plan;
  plan.grid = prob.grid;
  plan.gains.reserve(static_cast<size_t>(steps));
  plan.cov_pred.reserve(static_cast<size_t>(steps) + 1);
  plan.cov_pred.push_back(prog.sigma0);
  double cost = 0.0;
  for (int k = 0; k < steps; ++k) {
    const SymMat& sk = plan.cov_pred.back();
    if (!is_positive_definite(sk)) {
      throw Error(ErrorKind::PositiveDefiniteViolation,
                  "Sigma_" + std::to_string(k) + " lost definiteness; refine the grid");
    }
    const SymMat& solved = sol.Sigma[static_cast<size_t>(k)];
    const Mat& u = sol.U[static_cast<size_t>(k)];
    Eigen::LLT<Mat> llt(solved.mat());
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorKind::PositiveDefiniteViolation,
                  "solver covariance at step " + std::to_string(k) + " is not positive definite");
    }
    const Mat gain = -llt.solve(u).transpose();  // K = -U' Sigma^{-1}
    cost += dt * (u.transpose() * llt.solve(u)).trace();
    const Mat f = sys.A() - sys.B() * gain;
    const Mat next = sk.mat() + dt * (f * sk.mat() + sk.mat() * f.transpose() + prog.Q_eff.mat());
    plan.cov_pred.emplace_back(next);
    plan.gains.push_back(gain);
  }
  if (!is_positive_definite(plan.cov_pred.back())) {
    throw Error(ErrorKind::PositiveDefiniteViolation, "terminal covariance lost definiteness");
  }
  plan.cost = std::max(cost, 0.0);

  auto& d = plan.diagnostics;
  d.method = "sdp";
  d.solver_status = conic::to_string(sol.status);
  d.kkt = sol.kkt;
  d.objective = sol.objective;
  d.dual_bound = sol.dual_bound;
  d.iterations = sol.iterations;
  d.boundary_residual = relative_defect(plan.cov_pred.back(), prog.sigmaT);
  const auto continuous = propagate_covariance(sys, prog.Q_eff, plan.gains, prob.grid, prog.sigma0);
  d.continuous_defect = relative_defect(continuous.back(), prog.sigmaT);
  if (d.boundary_residual > opts.boundary_tol) {
    throw Error(ErrorKind::NoConvergence,
                "terminal covariance misses the target by " + std::to_string(d.boundary_residual) +
                    " (relative)");
  }
  attach_mean(prob, plan);
  return plan;
}

std::pair<SchrodingerSolution, SteeringPlan> steer_schrodinger(const SteeringProblem& prob,
                                                               const SteeringOptions& opts) {
  const LinearSystem& sys = prob.system;
  if (!sys.matched_channels()) {
    throw Error(ErrorKind::InvalidArgument, "the Schrodinger solver requires matched channels B = B1");
  }
  require_controllable(sys);

  const TimeGrid& grid = prob.grid;
  const int steps = grid.steps;
  const int fine = 2 * steps;
  const Mat s0inv = spd_inverse(prob.initial.cov()).mat();
  const Mat sTinv = spd_inverse(prob.terminal.cov()).mat();

  struct Sweep {
    std::vector<Mat> H;   // H(t_start + j dt/2)
    std::vector<Mat> Pi;  // Pi(t_end - j dt/2)
    Mat h0_next;
    double residual = 0.0;
  };
  // One alternating pass: H forward from H(0), Pi backward from
  // SigmaT^{-1} - H(T), then the updated H(0) = Sigma0^{-1} - Pi(0).
  auto sweep = [&](const Mat& h0) {
    Sweep s;
    try {
      s.H = integrate_matrix_ode([&](double, const Mat& x) { return h_rhs(sys, x); }, h0, grid.t_start,
                                 grid.t_end, fine, true);
      s.Pi = integrate_matrix_ode([&](double, const Mat& x) { return riccati_rhs(sys, x); },
                                  symmetrized(sTinv - s.H.back()), grid.t_end, grid.t_start, fine, true);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::NonFiniteState) {
        throw Error(ErrorKind::RiccatiEscape, std::string("Riccati flow escaped: ") + e.what());
      }
      throw;
    }
    s.h0_next = symmetrized(s0inv - s.Pi.back());
    s.residual = (s.h0_next - h0).norm();
    return s;
  };

  SchrodingerSolution out;
  out.grid = grid;
  const Eigen::Index n = sys.n();

  // Newton step on r(h) = svec(next(h) - h) with a central-difference
  // Jacobian, halved until the residual drops. Used when plain
  // substitution contracts slowly.
  auto newton = [&](const Mat& h0, const Sweep& at) -> std::optional<std::pair<Mat, Sweep>> {
    const Vec r = svec(at.h0_next - h0);
    const Eigen::Index dim = r.size();
    const double delta = 1e-5 * (1.0 + h0.norm());
    Mat jac(dim, dim);
    try {
      for (Eigen::Index j = 0; j < dim; ++j) {
        const Mat e = smat(Vec::Unit(dim, j), n);
        const Mat hp = h0 + delta * e;
        const Mat hm = h0 - delta * e;
        jac.col(j) = (svec(sweep(hp).h0_next - hp) - svec(sweep(hm).h0_next - hm)) / (2.0 * delta);
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::RiccatiEscape) throw;
      return std::nullopt;
    }
    const Eigen::FullPivLU<Mat> lu(jac);
    if (!lu.isInvertible()) return std::nullopt;
    const Mat step = smat(-lu.solve(r), n);
    for (double beta = 1.0; beta > 1e-3; beta *= 0.5) {
      const Mat candidate = symmetrized(h0 + beta * step);
      try {
        Sweep trial = sweep(candidate);
        if (trial.residual < (1.0 - 1e-4 * beta) * at.residual) return std::make_pair(candidate, std::move(trial));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::RiccatiEscape) throw;
      }
    }
    return std::nullopt;
  };

  Mat h0 = s0inv;
  Sweep current = sweep(h0);
  out.residual_history.push_back(current.residual);
  double theta = 1.0;
  bool escape_retried = false;
  bool slow = false;
  int iter = 0;
  while (current.residual > opts.schrodinger.tol && iter < opts.schrodinger.max_iter) {
    ++iter;
    if (slow) {
      if (auto accel = newton(h0, current)) {
        const double before = current.residual;
        h0 = std::move(accel->first);
        current = std::move(accel->second);
        out.residual_history.push_back(current.residual);
        slow = current.residual > 0.5 * before;
        continue;
      }
    }
    const Mat candidate = symmetrized(h0 + theta * (current.h0_next - h0));
    Sweep next;
    try {
      next = sweep(candidate);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::RiccatiEscape || escape_retried) throw;
      escape_retried = true;
      theta *= 0.5;
      slow = true;
      continue;
    }
    if (next.residual > current.residual) {
      theta *= 0.5;
      slow = true;
      if (theta < 1e-12) break;
      continue;
    }
    slow = next.residual > 0.5 * current.residual;
    h0 = candidate;
    current = std::move(next);
    out.residual_history.push_back(current.residual);
    theta = std::min(1.0, 2.0 * theta);
  }
  out.iterations = iter;
  if (current.residual > opts.schrodinger.tol) {
    throw Error(ErrorKind::NoConvergence, "boundary coupling residual " + std::to_string(current.residual) +
                                              " after " + std::to_string(iter) + " iterations");
  }

  out.Pi.reserve(static_cast<size_t>(steps) + 1);
  out.H.reserve(static_cast<size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) {
    out.Pi.emplace_back(current.Pi[static_cast<size_t>(2 * (steps - k))]);
    out.H.emplace_back(current.H[static_cast<size_t>(2 * k)]);
  }
  out.boundary_residual = (out.Pi.front().mat() + out.H.front().mat() - s0inv).norm() +
                          (out.Pi.back().mat() + out.H.back().mat() - sTinv).norm();
  out.converged = true;

  SteeringPlan plan;
  plan.grid = grid;
  for (int k = 0; k < steps; ++k) {
    plan.gains.push_back(sys.B().transpose() * out.Pi[static_cast<size_t>(k)].mat());
  }
  const double half = 0.5 * grid.dt();
  const SymMat q = sys.noise_intensity();
  const auto cov = integrate_matrix_ode(
      [&](double t, const Mat& s) {
        const auto j = static_cast<size_t>(std::lround((grid.t_end - t) / half));
        const Mat f = sys.A() - sys.B() * sys.B().transpose() * current.Pi.at(j);
        return Mat(f * s + s * f.transpose() + q.mat());
      },
      prob.initial.cov().mat(), grid.t_start, grid.t_end, steps, true);
  double cost = 0.0;
  std::vector<double> power(static_cast<size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) {
    plan.cov_pred.emplace_back(cov[static_cast<size_t>(k)]);
    const Mat kk = sys.B().transpose() * out.Pi[static_cast<size_t>(k)].mat();
    power[static_cast<size_t>(k)] = (kk * cov[static_cast<size_t>(k)] * kk.transpose()).trace();
  }
  for (int k = 0; k < steps; ++k) {
    cost += 0.5 * grid.dt() * (power[static_cast<size_t>(k)] + power[static_cast<size_t>(k) + 1]);
  }
  plan.cost = std::max(cost, 0.0);

  auto& d = plan.diagnostics;
  d.method = "schrodinger";
  d.solver_status = "Converged";
  d.iterations = iter;
  d.boundary_residual = relative_defect(plan.cov_pred.back(), prob.terminal.cov());
  const auto continuous = propagate_covariance(sys, q, plan.gains, grid, prob.initial.cov());
  d.continuous_defect = relative_defect(continuous.back(), prob.terminal.cov());
  attach_mean(prob, plan);
  return {std::move(out), std::move(plan)};
}

OptimalityReport verify_optimality(const LinearSystem& sys, const SteeringPlan& plan, const SymMat& sigma0,
                                   const SymMat& sigmaT) {
  const int steps = plan.grid.steps;
  if (static_cast<int>(plan.gains.size()) != steps) {
    throw Error(ErrorKind::DimensionMismatch, "plan has the wrong number of gains");
  }
  OptimalityReport rep;
  rep.Sigma = propagate_covariance(sys, sys.noise_intensity(), plan.gains, plan.grid, sigma0);
  for (int k = 0; k < steps; ++k) {
    rep.Pi.push_back(symmetric_from_gain(sys.B(), plan.gains[static_cast<size_t>(k)]));
    rep.H.emplace_back(spd_inverse(rep.Sigma[static_cast<size_t>(k)]).mat() - rep.Pi.back().mat());
  }

  const double dt = plan.grid.dt();
  const Mat bb = sys.B() * sys.B().transpose();
  const Mat coupling = bb - sys.noise_intensity().mat();
  const Mat& a = sys.A();
  for (int k = 0; k + 1 < steps; ++k) {
    const Mat& p0 = rep.Pi[static_cast<size_t>(k)].mat();
    const Mat& p1 = rep.Pi[static_cast<size_t>(k) + 1].mat();
    const Mat& h0 = rep.H[static_cast<size_t>(k)].mat();
    const Mat& h1 = rep.H[static_cast<size_t>(k) + 1].mat();
    const Mat pm = 0.5 * (p0 + p1);
    const Mat hm = 0.5 * (h0 + h1);
    const Mat sm = pm + hm;
    const Mat rp = (p1 - p0) / dt + a.transpose() * pm + pm * a - pm * bb * pm;
    const Mat rh = (h1 - h0) / dt + a.transpose() * hm + hm * a + hm * bb * hm - sm * coupling * sm;
    rep.pi_residual = std::max(rep.pi_residual, rp.norm());
    rep.h_residual = std::max(rep.h_residual, rh.norm());
  }
  rep.initial_residual =
      (rep.Pi.front().mat() + rep.H.front().mat() - spd_inverse(sigma0).mat()).norm();
  rep.terminal_residual = (spd_inverse(rep.Sigma.back()).mat() - spd_inverse(sigmaT).mat()).norm();
  return rep;
}

MeanSteering steer_mean(const LinearSystem& sys, const Vec& x0, const Vec& xT, const TimeGrid& grid) {
  if (x0.size() != sys.n() || xT.size() != sys.n()) {
    throw Error(ErrorKind::DimensionMismatch, "mean endpoints must have length n");
  }
  const double horizon = grid.horizon();
  const SymMat w = controllability_gramian(sys.A(), sys.B(), horizon);
  Mat l;
  try {
    l = cholesky(w);
  } catch (const Error&) {
    throw Error(ErrorKind::NotControllable, "controllability Gramian is singular");
  }
  const Vec d = xT - expm(sys.A(), horizon) * x0;
  MeanSteering ms;
  ms.costate = l.transpose().triangularView<Eigen::Upper>().solve(l.triangularView<Eigen::Lower>().solve(d));
  ms.energy = d.dot(ms.costate);
  for (int k = 0; k <= grid.steps; ++k) {
    const double t = k * grid.dt();
    const Vec lam = expm(sys.A().transpose(), horizon - t) * ms.costate;
    ms.feedforward.push_back(sys.B().transpose() * lam);
    Vec x = expm(sys.A(), t) * x0;
    if (t > 0) x += controllability_gramian(sys.A(), sys.B(), t).mat() * lam;
    ms.mean.push_back(x);
  }
  return ms;
}

Vec mean_control(const LinearSystem& sys, const MeanSteering& ms, const TimeGrid& grid, double t) {
  return sys.B().transpose() * (expm(sys.A().transpose(), grid.t_end - t) * ms.costate);
}

}  // namespace covsteer
