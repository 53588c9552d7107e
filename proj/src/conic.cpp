#include "covsteer/conic.hpp"

#include <cmath>
#include <algorithm>
#include <limits>

#include <Eigen/Eigenvalues>

namespace covsteer::conic {

const char* to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "Optimal";
    case Status::Infeasible: return "Infeasible";
    case Status::MaxIterations: return "MaxIterations";
  }
  return "Unknown";
}

SteeringProgram SteeringProgram::from_problem(const SteeringProblem& prob,
                                              const std::optional<SymMat>& q_extra) {
  SteeringProgram p;
  p.A = prob.system.A();
  p.B = prob.system.B();
  Mat q = prob.system.noise_intensity();
  if (q_extra) {
    if (q_extra->order() != prob.system.n()) {
      throw Error(ErrorKind::DimensionMismatch, "extra forcing must be n x n");
    }
    q += q_extra->mat();
  }
  p.Q_eff = SymMat(q);
  p.sigma0 = prob.initial.cov();
  p.sigmaT = prob.terminal.cov();
  p.steps = prob.grid.steps;
  p.dt = prob.grid.dt();
  p.validate();
  return p;
}

void SteeringProgram::validate() const {
  const Eigen::Index nn = n();
  if (A.rows() != A.cols() || B.rows() != nn || Q_eff.order() != nn || sigma0.order() != nn ||
      sigmaT.order() != nn) {
    throw Error(ErrorKind::DimensionMismatch, "steering program data have inconsistent shapes");
  }
  if (B.cols() < 1) throw Error(ErrorKind::DimensionMismatch, "B needs at least one column");
  if (steps < 1 || !(dt > 0)) throw Error(ErrorKind::InvalidArgument, "bad time discretization");
  if (!A.allFinite() || !B.allFinite() || !Q_eff.mat().allFinite()) {
    throw Error(ErrorKind::InvalidArgument, "steering program data must be finite");
  }
  if (!is_positive_definite(sigma0) || !is_positive_definite(sigmaT)) {
    throw Error(ErrorKind::PositiveDefiniteViolation, "boundary covariances must be positive definite");
  }
}

double SteeringProgram::scale() const {
  return 1.0 + std::sqrt(A.squaredNorm() + B.squaredNorm() + Q_eff.mat().squaredNorm() +
                         sigma0.mat().squaredNorm() + sigmaT.mat().squaredNorm());
}

namespace {

using Blocks = std::vector<Mat>;

// Each LMI block is M_k = [[Y_k, U_k'], [U_k, Sigma_k]] of order m + n. The
// equality constraints are grouped: group 0 pins Sigma_0, group g >= 1 is the
// dynamics of step g - 1. Group g touches block g through Sigma_g ("next")
// and block g - 1 through the Lyapunov step ("source"), so the Schur
// complement of the Newton system is block tridiagonal in the groups.
class Operators {
 public:
  explicit Operators(const SteeringProgram& p)
      : p_(p), n_(p.n()), m_(p.m()), steps_(p.steps), svec_dim_(n_ * (n_ + 1) / 2) {
    cost_ = Mat::Zero(m_ + n_, m_ + n_);
    cost_.topLeftCorner(m_, m_) = p.dt * Mat::Identity(m_, m_);
    rhs_.resize(static_cast<size_t>(steps_) + 1);
    rhs_[0] = p.sigma0.mat();
    for (int g = 1; g <= steps_; ++g) {
      rhs_[static_cast<size_t>(g)] = p.dt * p.Q_eff.mat();
    }
    rhs_.back() -= p.sigmaT.mat();
  }

  Eigen::Index n() const { return n_; }
  Eigen::Index m() const { return m_; }
  int steps() const { return steps_; }
  int groups() const { return steps_ + 1; }
  Eigen::Index svec_dim() const { return svec_dim_; }
  const Mat& cost() const { return cost_; }
  const Mat& rhs(int g) const { return rhs_[static_cast<size_t>(g)]; }

  Mat sigma_of(const Mat& blk) const { return blk.bottomRightCorner(n_, n_); }
  Mat u_of(const Mat& blk) const { return blk.bottomLeftCorner(n_, m_); }
  Mat y_of(const Mat& blk) const { return blk.topLeftCorner(m_, m_); }

  // -(Sigma + dt (A Sigma + Sigma A')) - dt (B U' + U B')
  Mat source(const Mat& blk) const {
    const Mat s = sigma_of(blk);
    const Mat bu = p_.B * u_of(blk).transpose();
    const Mat as = p_.A * s;
    return -(s + p_.dt * (as + as.transpose())) - p_.dt * (bu + bu.transpose());
  }

  Mat next_adjoint(const Mat& lam) const {
    Mat g = Mat::Zero(m_ + n_, m_ + n_);
    g.bottomRightCorner(n_, n_) = lam;
    return g;
  }

  Mat source_adjoint(const Mat& lam) const {
    Mat g = Mat::Zero(m_ + n_, m_ + n_);
    const Mat la = lam * p_.A;
    g.bottomRightCorner(n_, n_) = -(lam + p_.dt * (la + la.transpose()));
    const Mat g21 = -p_.dt * lam * p_.B;
    g.bottomLeftCorner(n_, m_) = g21;
    g.topRightCorner(m_, n_) = g21.transpose();
    return g;
  }

  Mat apply(int g, const Blocks& x) const {
    Mat r = Mat::Zero(n_, n_);
    if (g < steps_) r += sigma_of(x[static_cast<size_t>(g)]);
    if (g >= 1) r += source(x[static_cast<size_t>(g) - 1]);
    return r;
  }

  Blocks adjoint(const Blocks& lam) const {
    Blocks out(static_cast<size_t>(steps_));
    for (int k = 0; k < steps_; ++k) {
      out[static_cast<size_t>(k)] = next_adjoint(lam[static_cast<size_t>(k)]) +
                                    source_adjoint(lam[static_cast<size_t>(k) + 1]);
    }
    return out;
  }

  // b - A(x), one n x n residual per group.
  Blocks residual(const Blocks& x) const {
    Blocks r(static_cast<size_t>(groups()));
    for (int g = 0; g < groups(); ++g) {
      r[static_cast<size_t>(g)] = rhs(g) - apply(g, x);
    }
    return r;
  }

 private:
  const SteeringProgram& p_;
  Eigen::Index n_;
  Eigen::Index m_;
  int steps_;
  Eigen::Index svec_dim_;
  Mat cost_;
  Blocks rhs_;
};

double squared_norm(const Blocks& b) {
  double s = 0.0;
  for (const auto& x : b) s += x.squaredNorm();
  return s;
}

double inner(const Mat& a, const Mat& b) { return a.cwiseProduct(b).sum(); }

// Block-tridiagonal SPD solve: diag[g] = S_gg, sub[g] = S_{g+1,g}.
class BlockTridiagonalCholesky {
 public:
  BlockTridiagonalCholesky(const std::vector<Mat>& diag, const std::vector<Mat>& sub) {
    const size_t count = diag.size();
    lower_.resize(count);
    off_.resize(count);
    for (size_t g = 0; g < count; ++g) {
      Mat d = diag[g];
      if (g > 0) {
        // off_[g] L_{g-1}' = sub[g-1]
        off_[g] = lower_[g - 1].triangularView<Eigen::Lower>().solve(sub[g - 1].transpose()).transpose();
        d -= off_[g] * off_[g].transpose();
      }
      Eigen::LLT<Mat> llt(symmetrized(d));
      if (llt.info() != Eigen::Success) {
        throw Error(ErrorKind::NonFiniteState, "Schur complement of the Newton system is numerically singular");
      }
      lower_[g] = llt.matrixL();
    }
  }

  std::vector<Vec> solve(const std::vector<Vec>& rhs) const {
    const size_t count = lower_.size();
    std::vector<Vec> y(count);
    for (size_t g = 0; g < count; ++g) {
      Vec r = rhs[g];
      if (g > 0) r -= off_[g] * y[g - 1];
      y[g] = lower_[g].triangularView<Eigen::Lower>().solve(r);
    }
    std::vector<Vec> x(count);
    for (size_t i = count; i-- > 0;) {
      Vec r = y[i];
      if (i + 1 < count) r -= off_[i + 1].transpose() * x[i + 1];
      x[i] = lower_[i].transpose().triangularView<Eigen::Upper>().solve(r);
    }
    return x;
  }

 private:
  std::vector<Mat> lower_;
  std::vector<Mat> off_;
};

constexpr int kRefinementPasses = 3;

Blocks add(const Blocks& a, double alpha, const Blocks& b) {
  Blocks out(a.size());
  for (size_t k = 0; k < a.size(); ++k) out[k] = symmetrized(a[k] + alpha * b[k]);
  return out;
}

// Nesterov-Todd scaling of one block: G with G G' = W, W Z W = X, and
// G^{-1} X G^{-T} = G' Z G = diag(v).
struct Scaling {
  Mat g;
  Mat w;
  Vec v;
};

Scaling nt_scaling(const Mat& x, const Mat& z) {
  Eigen::LLT<Mat> llt(x);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::NonFiniteState, "primal block lost definiteness");
  }
  const Mat l = llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrized(l.transpose() * z * l));
  const Vec s = eig.eigenvalues();
  if (!(s.minCoeff() > 0)) throw Error(ErrorKind::NonFiniteState, "dual block lost definiteness");
  Scaling sc;
  sc.g = l * eig.eigenvectors() * s.array().pow(-0.25).matrix().asDiagonal();
  sc.w = symmetrized(sc.g * sc.g.transpose());
  sc.v = s.cwiseSqrt();
  return sc;
}

// Right-hand side of dX + W dZ W = rc for the symmetrized centrality
// condition V (dZ~ + dX~) + (dZ~ + dX~) V = 2 (sigma mu I - V^2 - corr)
// in scaled coordinates.
Mat centrality_rhs(const Scaling& sc, double target, const Mat& corr) {
  const Eigen::Index k = sc.v.size();
  Mat r = -corr;
  for (Eigen::Index i = 0; i < k; ++i) r(i, i) += target - sc.v(i) * sc.v(i);
  Mat d(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) d(i, j) = 2.0 * r(i, j) / (sc.v(i) + sc.v(j));
  }
  return symmetrized(sc.g * symmetrized(d) * sc.g.transpose());
}

BlockTridiagonalCholesky build_schur(const Operators& ops, const std::vector<Scaling>& sc) {
  const int steps = ops.steps();
  const int groups = ops.groups();
  const Eigen::Index s = ops.svec_dim();
  std::vector<Mat> diag(static_cast<size_t>(groups), Mat::Zero(s, s));
  std::vector<Mat> sub(static_cast<size_t>(steps), Mat::Zero(s, s));
  for (int h = 0; h < groups; ++h) {
    for (Eigen::Index j = 0; j < s; ++j) {
      const Mat lam = smat(Vec::Unit(s, j), ops.n());
      if (h < steps) {
        const Mat& wk = sc[static_cast<size_t>(h)].w;
        const Mat d = wk * ops.next_adjoint(lam) * wk;
        diag[static_cast<size_t>(h)].col(j) += svec(ops.sigma_of(d));
        sub[static_cast<size_t>(h)].col(j) += svec(ops.source(d));
      }
      if (h >= 1) {
        const Mat& wk = sc[static_cast<size_t>(h) - 1].w;
        const Mat d = wk * ops.source_adjoint(lam) * wk;
        diag[static_cast<size_t>(h)].col(j) += svec(ops.source(d));
      }
    }
  }
  return BlockTridiagonalCholesky(diag, sub);
}

struct Direction {
  Blocks dx;
  Blocks dy;  // one n x n block per group
  Blocks dz;
};

// Solves
//   A(dX) = rp,  A*(dy) + dZ = rd,  dX + W dZ W = rc
// through the block-tridiagonal system A (W . W) A* dy = rp - A(rc - W rd W).
Direction nt_direction(const Operators& ops, const std::vector<Scaling>& sc,
                       const BlockTridiagonalCholesky& schur, const Blocks& rp, const Blocks& rd,
                       const Blocks& rc) {
  const int steps = ops.steps();
  const int groups = ops.groups();

  Blocks base(static_cast<size_t>(steps));  // rc - W rd W
  for (int k = 0; k < steps; ++k) {
    const Mat& wk = sc[static_cast<size_t>(k)].w;
    base[static_cast<size_t>(k)] = symmetrized(rc[static_cast<size_t>(k)] - wk * rd[static_cast<size_t>(k)] * wk);
  }
  std::vector<Vec> rhs(static_cast<size_t>(groups));
  for (int g = 0; g < groups; ++g) {
    rhs[static_cast<size_t>(g)] = svec(rp[static_cast<size_t>(g)] - ops.apply(g, base));
  }

  Direction d;
  auto dy_vec = schur.solve(rhs);
  d.dy.resize(static_cast<size_t>(groups));
  d.dx.resize(static_cast<size_t>(steps));
  auto expand = [&] {
    for (int g = 0; g < groups; ++g) d.dy[static_cast<size_t>(g)] = smat(dy_vec[static_cast<size_t>(g)], ops.n());
    const Blocks adj = ops.adjoint(d.dy);
    for (int k = 0; k < steps; ++k) {
      const Mat& wk = sc[static_cast<size_t>(k)].w;
      d.dx[static_cast<size_t>(k)] = symmetrized(base[static_cast<size_t>(k)] + wk * adj[static_cast<size_t>(k)] * wk);
    }
  };
  expand();

  // Iterative refinement keeps A(dX) = rp at working precision as the
  // scaling grows ill-conditioned near the optimum.
  for (int pass = 0; pass < kRefinementPasses; ++pass) {
    std::vector<Vec> defect(static_cast<size_t>(groups));
    double size = 0.0;
    for (int g = 0; g < groups; ++g) {
      defect[static_cast<size_t>(g)] = svec(rp[static_cast<size_t>(g)] - ops.apply(g, d.dx));
      size += defect[static_cast<size_t>(g)].squaredNorm();
    }
    if (size == 0.0) break;
    const auto correction = schur.solve(defect);
    for (int g = 0; g < groups; ++g) dy_vec[static_cast<size_t>(g)] += correction[static_cast<size_t>(g)];
    expand();
  }

  const Blocks adj = ops.adjoint(d.dy);
  d.dz.resize(static_cast<size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    d.dz[static_cast<size_t>(k)] = symmetrized(rd[static_cast<size_t>(k)] - adj[static_cast<size_t>(k)]);
  }
  return d;
}

// Largest alpha with M + alpha dM >= 0 for every block.
double max_step(const Blocks& x, const Blocks& dx) {
  double alpha = std::numeric_limits<double>::infinity();
  for (size_t k = 0; k < x.size(); ++k) {
    Eigen::LLT<Mat> llt(x[k]);
    const Mat linv = llt.matrixL().solve(Mat::Identity(x[k].rows(), x[k].cols()));
    const Mat scaled = symmetrized(linv * dx[k] * linv.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> eig(scaled, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    if (lo < 0) alpha = std::min(alpha, -1.0 / lo);
  }
  return alpha;
}

void fill_solution(const Operators& ops, const SteeringProgram& prog, const Blocks& x,
                   ConicSolution& sol) {
  const int steps = ops.steps();
  sol.Sigma.clear();
  sol.U.clear();
  sol.Y.clear();
  sol.objective = 0.0;
  for (int k = 0; k < steps; ++k) {
    const Mat& mk = x[static_cast<size_t>(k)];
    sol.Sigma.emplace_back(ops.sigma_of(mk));
    sol.U.push_back(ops.u_of(mk));
    sol.Y.emplace_back(ops.y_of(mk));
    sol.objective += inner(ops.cost(), mk);
  }
  sol.Sigma.push_back(prog.sigmaT);
}

}  // namespace

ConicSolution solve(const SteeringProgram& prog, const Options& opts) {
  prog.validate();
  const Operators ops(prog);
  const int steps = prog.steps;
  const int groups = ops.groups();
  const Eigen::Index n = prog.n();
  const Eigen::Index m = prog.m();
  const double scale = prog.scale();
  const double barrier_degree = static_cast<double>(steps * (n + m));

  constexpr double kBarrierReduction = 0.2;
  constexpr double kFractionToBoundary = 0.99;

  // Start: Sigma interpolated between the ends, U = 0, Y = I; Z = I, y = 0.
  Blocks x(static_cast<size_t>(steps));
  Blocks z(static_cast<size_t>(steps), Mat::Identity(m + n, m + n));
  Blocks y(static_cast<size_t>(groups), Mat::Zero(n, n));
  for (int k = 0; k < steps; ++k) {
    const double frac = static_cast<double>(k) / steps;
    Mat blk = Mat::Zero(m + n, m + n);
    blk.topLeftCorner(m, m) = Mat::Identity(m, m);
    blk.bottomRightCorner(n, n) = (1.0 - frac) * prog.sigma0.mat() + frac * prog.sigmaT.mat();
    x[static_cast<size_t>(k)] = blk;
  }

  ConicSolution sol;
  auto finish = [&](Status status, const KktResiduals& kkt, double mu) {
    fill_solution(ops, prog, x, sol);
    sol.status = status;
    sol.kkt = kkt;
    sol.barrier_parameter = mu > 0 ? 1.0 / mu : std::numeric_limits<double>::infinity();
    sol.dual_bound = 0.0;
    for (int g = 0; g < groups; ++g) sol.dual_bound += inner(y[static_cast<size_t>(g)], ops.rhs(g));
    // Stored with the sign convention C - Z + A*(lambda) = 0.
    sol.equality_duals.clear();
    for (const auto& yg : y) sol.equality_duals.emplace_back(-yg);
    return sol;
  };

  double best_infeasibility = std::numeric_limits<double>::infinity();
  int stalled = 0;
  for (int iter = 0; iter < opts.max_iter; ++iter) {
    sol.iterations = iter + 1;
    const Blocks rp = ops.residual(x);
    const Blocks adj = ops.adjoint(y);
    Blocks rd(static_cast<size_t>(steps));
    double gap = 0.0;
    double objective = 0.0;
    for (int k = 0; k < steps; ++k) {
      const size_t kk = static_cast<size_t>(k);
      rd[kk] = symmetrized(ops.cost() - z[kk] - adj[kk]);
      gap += inner(x[kk], z[kk]);
      objective += inner(ops.cost(), x[kk]);
    }
    double dual_objective = 0.0;
    for (int g = 0; g < groups; ++g) dual_objective += inner(y[static_cast<size_t>(g)], ops.rhs(g));
    const KktResiduals kkt{std::sqrt(squared_norm(rp)) / scale, std::sqrt(squared_norm(rd)) / scale,
                           gap / scale};
    const double mu = gap / barrier_degree;
    sol.bound_history.emplace_back(objective, dual_objective);
    if (kkt.primal <= opts.tol && kkt.dual <= opts.tol && kkt.gap <= opts.tol) {
      return finish(Status::Optimal, kkt, mu);
    }

    // A dual ray (unbounded dual objective with no primal progress) or a
    // long run of blocked steps means the equalities cannot be met inside
    // the cone.
    const double infeasibility = kkt.primal;
    if (infeasibility < 0.5 * best_infeasibility) {
      best_infeasibility = infeasibility;
      stalled = 0;
    } else {
      ++stalled;
    }
    if (kkt.primal > opts.tol &&
        (dual_objective > 1e12 * (1.0 + std::abs(objective)) || stalled > 50)) {
      return finish(Status::Infeasible, kkt, mu);
    }

    std::vector<Scaling> sc(static_cast<size_t>(steps));
    Direction d;
    double alpha_p = 0.0;
    double alpha_d = 0.0;
    try {
      for (int k = 0; k < steps; ++k) sc[static_cast<size_t>(k)] = nt_scaling(x[static_cast<size_t>(k)], z[static_cast<size_t>(k)]);
      const BlockTridiagonalCholesky schur = build_schur(ops, sc);
      const Mat none = Mat::Zero(m + n, m + n);

      // Predictor: affine-scaling direction (no centering).
      Blocks rc(static_cast<size_t>(steps));
      for (int k = 0; k < steps; ++k) rc[static_cast<size_t>(k)] = centrality_rhs(sc[static_cast<size_t>(k)], 0.0, none);
      const Direction aff = nt_direction(ops, sc, schur, rp, rd, rc);

      // Corrector: centering toward 0.2 mu plus the second-order term.
      for (int k = 0; k < steps; ++k) {
        const size_t kk = static_cast<size_t>(k);
        const Scaling& s = sc[kk];
        const Mat gi = s.g.inverse();
        const Mat dxs = gi * aff.dx[kk] * gi.transpose();
        const Mat dzs = s.g.transpose() * aff.dz[kk] * s.g;
        rc[kk] = centrality_rhs(s, kBarrierReduction * mu, symmetrized(dxs * dzs));
      }
      d = nt_direction(ops, sc, schur, rp, rd, rc);
      alpha_p = std::min(1.0, kFractionToBoundary * max_step(x, d.dx));
      alpha_d = std::min(1.0, kFractionToBoundary * max_step(z, d.dz));
    } catch (const Error& e) {
      // A breakdown of the Newton system is a numerical failure, not a
      // certificate: report the current iterate as the best one.
      if (e.kind() != ErrorKind::Infeasible && e.kind() != ErrorKind::NonFiniteState) throw;
      return finish(Status::MaxIterations, kkt, mu);
    }
    x = add(x, alpha_p, d.dx);
    y = add(y, alpha_d, d.dy);
    z = add(z, alpha_d, d.dz);
  }

  const Blocks rp = ops.residual(x);
  const Blocks adj = ops.adjoint(y);
  double dual2 = 0.0;
  double gap = 0.0;
  for (int k = 0; k < steps; ++k) {
    const size_t kk = static_cast<size_t>(k);
    dual2 += (ops.cost() - z[kk] - adj[kk]).squaredNorm();
    gap += inner(x[kk], z[kk]);
  }
  return finish(Status::MaxIterations,
                {std::sqrt(squared_norm(rp)) / scale, std::sqrt(dual2) / scale, gap / scale},
                gap / barrier_degree);
}

std::vector<SymMat> extract_dual_certificates(const ConicSolution& sol) {
  if (sol.status != Status::Optimal) {
    throw Error(ErrorKind::NotSolved, "dual certificates need an Optimal solution");
  }
  std::vector<SymMat> out;
  out.reserve(sol.equality_duals.size() - 1);
  for (size_t g = 1; g < sol.equality_duals.size(); ++g) {
    out.emplace_back(-sol.equality_duals[g].mat());
  }
  return out;
}

}  // namespace covsteer::conic
