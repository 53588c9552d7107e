#include "covsteer/stationary.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace covsteer {

namespace {

Mat stationary_forcing(const StationaryProblem& prob) {
  const Mat& a = prob.system.A();
  const Mat& s = prob.target_cov.mat();
  return symmetrized(a * s + s * a.transpose() + prob.system.noise_intensity().mat());
}

double problem_scale(const StationaryProblem& prob) {
  return 1.0 + prob.system.A().norm() * prob.target_cov.mat().norm() + prob.system.B1().squaredNorm();
}

// Matrix of X -> svec(B X' + X B') with X vectorized column-major.
Mat range_operator(const Mat& b) {
  const Eigen::Index n = b.rows();
  const Eigen::Index m = b.cols();
  Mat op(n * (n + 1) / 2, n * m);
  for (Eigen::Index j = 0; j < n * m; ++j) {
    Mat e = Mat::Zero(n, m);
    e(j % n, j / n) = 1.0;
    op.col(j) = svec(b * e.transpose() + e * b.transpose());
  }
  return op;
}

Mat unvec(const Vec& v, Eigen::Index n, Eigen::Index m) { return Eigen::Map<const Mat>(v.data(), n, m); }

}  // namespace

AdmissibilityReport check_admissible(const StationaryProblem& prob) {
  const Mat& b = prob.system.B();
  const Eigen::Index n = b.rows();
  const Eigen::Index m = b.cols();
  const Mat w = stationary_forcing(prob);
  const double scale = problem_scale(prob);

  AdmissibilityReport rep;
  Mat lhs = Mat::Zero(n + m, n + m);
  lhs.topLeftCorner(n, n) = w;
  lhs.topRightCorner(n, m) = b;
  lhs.bottomLeftCorner(m, n) = b.transpose();
  Mat rhs = lhs;
  rhs.topLeftCorner(n, n).setZero();
  // Same absolute threshold for both ranks.
  const double rank_tol = tol::kRank * std::max(lhs.norm(), 1.0) * static_cast<double>(n + m);
  rep.rank_lhs = rank_with_tolerance(lhs, rank_tol);
  rep.rank_rhs = rank_with_tolerance(rhs, rank_tol);
  rep.admissible = rep.rank_lhs == rep.rank_rhs;

  const Mat op = range_operator(b);
  Eigen::JacobiSVD<Mat> svd(op, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec& sv = svd.singularValues();
  const double sv_tol = tol::kRank * (sv.size() > 0 ? sv(0) : 0.0) * static_cast<double>(std::max(op.rows(), op.cols()));
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) rank += sv(i) > sv_tol ? 1 : 0;
  rep.homogeneous_dim = static_cast<int>(n * m) - rank;

  const Vec target = -svec(w);
  Vec x = Vec::Zero(n * m);
  for (int i = 0; i < rank; ++i) x += svd.matrixV().col(i) * (svd.matrixU().col(i).dot(target) / sv(i));
  rep.residual = (op * x - target).norm();
  const bool consistent = rep.residual <= 1e-9 * scale;
  rep.tests_agree = consistent == rep.admissible;

  for (Eigen::Index j = rank; j < n * m; ++j) rep.kernel_basis.push_back(unvec(svd.matrixV().col(j), n, m));
  if (rep.admissible) rep.particular_X = unvec(x, n, m);
  return rep;
}

bool hotz_skelton_check(const StationaryProblem& prob) {
  const Mat& b = prob.system.B();
  const Eigen::Index n = b.rows();
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(b);
  cod.setThreshold(tol::kRank);
  const Mat proj = Mat::Identity(n, n) - b * cod.pseudoInverse();
  const Mat projected = proj * stationary_forcing(prob) * proj;
  return projected.norm() <= 1e-9 * problem_scale(prob);
}

StationaryPolicy min_power_gain(const StationaryProblem& prob) {
  const AdmissibilityReport rep = check_admissible(prob);
  if (!rep.admissible) {
    throw Error(ErrorKind::NotAdmissible, "target covariance cannot be made stationary by state feedback");
  }
  const SymMat sinv = spd_inverse(prob.target_cov);
  Mat x = *rep.particular_X;
  const size_t dim = rep.kernel_basis.size();
  if (dim > 0) {
    // Stationarity of trace((Xp + sum c_j Xj)' Sigma^{-1} (Xp + sum c_j Xj)).
    Mat gram(dim, dim);
    Vec lin(dim);
    for (size_t i = 0; i < dim; ++i) {
      const Mat si = sinv.mat() * rep.kernel_basis[i];
      lin(static_cast<Eigen::Index>(i)) = (x.transpose() * si).trace();
      for (size_t j = 0; j < dim; ++j) {
        gram(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            (rep.kernel_basis[j].transpose() * si).trace();
      }
    }
    const Vec c = Eigen::LLT<Mat>(symmetrized(gram)).solve(-lin);
    for (size_t j = 0; j < dim; ++j) x += c(static_cast<Eigen::Index>(j)) * rep.kernel_basis[j];
  }

  StationaryPolicy pol;
  pol.X = x;
  pol.K = -x.transpose() * sinv.mat();
  pol.Sigma = prob.target_cov;
  pol.power = (pol.K * prob.target_cov.mat() * pol.K.transpose()).trace();
  pol.achieved_power = pol.power;
  pol.hurwitz = is_hurwitz(prob.system.A() - prob.system.B() * pol.K);
  return pol;
}

StationaryPolicy relax_epsilon(const StationaryProblem& prob, const StationaryPolicy& policy, double eps) {
  if (!(eps >= 0.0) || !std::isfinite(eps)) throw Error(ErrorKind::InvalidArgument, "epsilon must be >= 0");
  if (eps == 0.0) {
    if (!policy.hurwitz) throw Error(ErrorKind::InvalidArgument, "epsilon must be positive for a non-Hurwitz policy");
    return policy;
  }
  const Mat& b = prob.system.B();
  const SymMat sinv = spd_inverse(prob.target_cov);
  StationaryPolicy out = policy;
  out.epsilon = eps;
  out.K = policy.K + 0.5 * eps * b.transpose() * sinv.mat();
  out.X = -prob.target_cov.mat() * out.K.transpose();
  out.power = (out.K * prob.target_cov.mat() * out.K.transpose()).trace();
  const Mat f = prob.system.A() - b * out.K;
  out.hurwitz = is_hurwitz(f);
  if (!out.hurwitz) {
    throw Error(ErrorKind::NotHurwitz, "relaxed closed loop is not Hurwitz; epsilon is below the noise floor");
  }
  out.achieved_cov = solve_lyapunov(f, prob.system.noise_intensity());
  out.defect = (prob.target_cov.mat() - out.achieved_cov->mat()).norm();
  out.achieved_power = (out.K * out.achieved_cov->mat() * out.K.transpose()).trace();
  return out;
}

double policy_constraint_residual(const StationaryProblem& prob, const StationaryPolicy& policy) {
  const Mat& b = prob.system.B();
  const Mat f = prob.system.A() - b * policy.K;
  const Mat& s = prob.target_cov.mat();
  const Mat r = f * s + s * f.transpose() + prob.system.noise_intensity().mat() +
                policy.epsilon * b * b.transpose();
  return r.norm() / problem_scale(prob);
}

Mat hamiltonian(const LinearSystem& sys, const SymMat& q) {
  const Eigen::Index n = sys.n();
  Mat h(2 * n, 2 * n);
  h << sys.A(), -sys.B() * sys.B().transpose(), -q.mat(), -sys.A().transpose();
  return h;
}

WillemsReport willems_cross_check(const LinearSystem& sys, const StationaryPolicy& policy) {
  if (!policy.hurwitz) throw Error(ErrorKind::NotHurwitz, "Willems check needs a stabilizing policy");
  WillemsReport rep;
  rep.Pi = symmetric_from_gain(sys.B(), policy.K);
  const Mat& pi = rep.Pi.mat();
  const Mat& a = sys.A();
  const Mat bb = sys.B() * sys.B().transpose();
  rep.Q = SymMat(-a.transpose() * pi - pi * a + pi * bb * pi);
  rep.are_residual = (a.transpose() * pi + pi * a - pi * bb * pi + rep.Q.mat()).norm();

  const Mat h = hamiltonian(sys, rep.Q);
  const auto roots = polynomial_roots(characteristic_polynomial(h));
  rep.axis_distance = std::numeric_limits<double>::infinity();
  for (const auto& r : roots) rep.axis_distance = std::min(rep.axis_distance, std::abs(r.real()));
  rep.hamiltonian_imaginary_axis_clear = rep.axis_distance > 1e-6 * (1.0 + h.norm());
  return rep;
}

}  // namespace covsteer
