#include "covsteer/matcore.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace covsteer {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Schema: return "SchemaError";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::PositiveDefiniteViolation: return "PositiveDefiniteViolation";
    case ErrorKind::SingularLyapunov: return "SingularLyapunov";
    case ErrorKind::Indeterminate: return "Indeterminate";
    case ErrorKind::NonFiniteState: return "NonFiniteState";
    case ErrorKind::RiccatiEscape: return "RiccatiEscape";
    case ErrorKind::NotControllable: return "NotControllable";
    case ErrorKind::Infeasible: return "Infeasible";
    case ErrorKind::MaxIterations: return "MaxIterations";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::NotSolved: return "NotSolved";
    case ErrorKind::RankDeficientB: return "RankDeficientB";
    case ErrorKind::NotAdmissible: return "NotAdmissible";
    case ErrorKind::NotHurwitz: return "NotHurwitz";
    case ErrorKind::DigestMismatch: return "DigestMismatch";
  }
  return "Unknown";
}

SymMat::SymMat(const Mat& m) {
  if (m.rows() != m.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "symmetric matrix must be square");
  }
  m_ = symmetrized(m);
}

bool all_finite(const Mat& m) { return m.allFinite(); }

namespace {

void require_square(const Mat& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw Error(ErrorKind::DimensionMismatch, std::string(what) + " must be square");
  }
}

double inf_norm(const Mat& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().rowwise().sum().maxCoeff();
}

// Returns the factor or the index of the first failing pivot.
std::optional<Mat> try_cholesky(const Mat& s, double rel_tol, Eigen::Index* bad = nullptr) {
  const Eigen::Index n = s.rows();
  const double floor = rel_tol * std::max(inf_norm(s), std::numeric_limits<double>::min());
  Mat l = Mat::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = s(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > floor)) {
      if (bad) *bad = j;
      return std::nullopt;
    }
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double v = s(i, j);
      for (Eigen::Index k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / ljj;
    }
  }
  return l;
}

}  // namespace

Mat cholesky(const SymMat& s, double rel_tol) {
  Eigen::Index bad = -1;
  auto l = try_cholesky(s.mat(), rel_tol, &bad);
  if (!l) {
    throw Error(ErrorKind::PositiveDefiniteViolation,
                "pivot " + std::to_string(bad) + " is not positive");
  }
  return *l;
}

bool is_positive_definite(const SymMat& s, double rel_tol) {
  return s.order() > 0 && s.mat().allFinite() && try_cholesky(s.mat(), rel_tol).has_value();
}

SymMat spd_inverse(const SymMat& s) {
  const Mat l = cholesky(s);
  const Mat linv = l.triangularView<Eigen::Lower>().solve(Mat::Identity(s.order(), s.order()));
  return SymMat(linv.transpose() * linv);
}

Mat expm(const Mat& a, double t) {
  require_square(a, "expm argument");
  const Eigen::Index n = a.rows();
  if (n == 0) return Mat(0, 0);
  Mat x = a * t;
  const double norm = inf_norm(x);
  int squarings = 0;
  if (norm > 0.5) {
    squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
    x /= std::ldexp(1.0, squarings);
  }

  // (6,6) Pade: c_k = (2p-k)! p! / ((2p)! k! (p-k)!), p = 6.
  constexpr int kDegree = 6;
  double c = 1.0;
  const Mat id = Mat::Identity(n, n);
  Mat power = id;
  Mat num = id;
  Mat den = id;
  for (int k = 1; k <= kDegree; ++k) {
    c *= static_cast<double>(kDegree - k + 1) / static_cast<double>(k * (2 * kDegree - k + 1));
    power = power * x;
    num += c * power;
    den += (k % 2 == 0 ? c : -c) * power;
  }
  Mat e = den.partialPivLu().solve(num);
  for (int i = 0; i < squarings; ++i) e = e * e;
  return e;
}

SymMat solve_lyapunov(const Mat& f, const SymMat& q) {
  require_square(f, "Lyapunov coefficient");
  const Eigen::Index n = f.rows();
  if (q.order() != n) {
    throw Error(ErrorKind::DimensionMismatch, "Lyapunov right-hand side has wrong order");
  }
  // Column-major vec: vec(F X + X F') = (I (x) F + F (x) I) vec(X).
  const Eigen::Index nn = n * n;
  Mat kron = Mat::Zero(nn, nn);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index row = j * n + i;
      for (Eigen::Index k = 0; k < n; ++k) {
        kron(row, j * n + k) += f(i, k);  // (F X)_{ij} = sum_k F_ik X_kj
        kron(row, k * n + i) += f(j, k);  // (X F')_{ij} = sum_k X_ik F_jk
      }
    }
  }
  Eigen::FullPivLU<Mat> lu(kron);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) {
    throw Error(ErrorKind::SingularLyapunov, "I (x) F + F (x) I is numerically singular");
  }
  const Vec rhs = -Eigen::Map<const Vec>(q.mat().data(), nn);
  Vec sol = lu.solve(rhs);
  Mat x = Eigen::Map<Mat>(sol.data(), n, n);
  if (!x.allFinite()) {
    throw Error(ErrorKind::SingularLyapunov, "non-finite Lyapunov solution");
  }
  return SymMat(x);
}

namespace {

std::optional<bool> lyapunov_stability(const Mat& f) {
  try {
    const SymMat p = solve_lyapunov(f, SymMat::identity(f.rows()));
    return is_positive_definite(p);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::SingularLyapunov) return std::nullopt;
    throw;
  }
}

}  // namespace

bool is_hurwitz(const Mat& f) {
  require_square(f, "Hurwitz test argument");
  if (f.rows() == 0) return true;
  if (auto verdict = lyapunov_stability(f)) return *verdict;

  // Singular: some pair of eigenvalues sums to ~0, so F cannot be Hurwitz
  // unless the singularity verdict was a tolerance artefact. Shifting right by
  // delta must leave the matrix unstable for every probe.
  const double scale = 1.0 + f.norm();
  int stable = 0;
  int unstable = 0;
  for (const double rel : {1e-7, 1e-5, 1e-3}) {
    const Mat shifted = f + rel * scale * Mat::Identity(f.rows(), f.cols());
    auto v = lyapunov_stability(shifted);
    if (v && *v) {
      ++stable;
    } else {
      ++unstable;
    }
  }
  if (stable > 0 && unstable > 0) {
    throw Error(ErrorKind::Indeterminate, "stability probes disagree near the imaginary axis");
  }
  return stable > 0;
}

int rank_with_tolerance(const Mat& m, std::optional<double> tol) {
  if (m.size() == 0) return 0;
  const double threshold =
      tol ? *tol : tol::kRank * m.norm() * static_cast<double>(std::max(m.rows(), m.cols()));
  Eigen::ColPivHouseholderQR<Mat> qr(m);
  const Mat& r = qr.matrixR();
  int rank = 0;
  const Eigen::Index diag = std::min(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < diag; ++i) {
    if (std::abs(r(i, i)) > threshold) ++rank;
  }
  return rank;
}

Mat controllability_matrix(const Mat& a, const Mat& b) {
  require_square(a, "A");
  if (b.rows() != a.rows()) throw Error(ErrorKind::DimensionMismatch, "B rows differ from A");
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.cols();
  Mat c(n, n * m);
  Mat block = b;
  for (Eigen::Index k = 0; k < n; ++k) {
    c.middleCols(k * m, m) = block;
    block = a * block;
  }
  return c;
}

SymMat controllability_gramian(const Mat& a, const Mat& b, double horizon) {
  require_square(a, "A");
  if (b.rows() != a.rows()) throw Error(ErrorKind::DimensionMismatch, "B rows differ from A");
  if (!(horizon > 0)) throw Error(ErrorKind::InvalidArgument, "Gramian horizon must be positive");
  const Eigen::Index n = a.rows();
  // exp([[-A, BB'], [0, A']] T) = [[*, F12], [0, F22]] with W = F22' F12.
  Mat h = Mat::Zero(2 * n, 2 * n);
  h.topLeftCorner(n, n) = -a;
  h.topRightCorner(n, n) = b * b.transpose();
  h.bottomRightCorner(n, n) = a.transpose();
  const Mat e = expm(h, horizon);
  return SymMat(e.bottomRightCorner(n, n).transpose() * e.topRightCorner(n, n));
}

std::vector<Mat> integrate_matrix_ode(const MatrixRhs& rhs, const Mat& x0, double t0, double t1,
                                      int steps, bool symmetric) {
  if (steps < 1) throw Error(ErrorKind::InvalidArgument, "integrator needs at least one step");
  const double h = (t1 - t0) / steps;
  constexpr double kBlowup = 1e100;
  auto check = [&](const Mat& x, int k) {
    if (!x.allFinite() || (x.size() > 0 && x.cwiseAbs().maxCoeff() > kBlowup)) {
      throw Error(ErrorKind::NonFiniteState,
                  "state overflowed at step " + std::to_string(k) + " (t = " +
                      std::to_string(t0 + k * h) + ")");
    }
  };
  std::vector<Mat> out;
  out.reserve(static_cast<size_t>(steps) + 1);
  Mat x = symmetric ? symmetrized(x0) : x0;
  check(x, 0);
  out.push_back(x);
  for (int k = 0; k < steps; ++k) {
    const double t = t0 + k * h;
    const Mat k1 = rhs(t, x);
    const Mat k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1);
    const Mat k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2);
    const Mat k4 = rhs(t + h, x + h * k3);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (symmetric) x = symmetrized(x);
    check(x, k + 1);
    out.push_back(x);
  }
  return out;
}

Vec svec(const Mat& s) {
  const Eigen::Index n = s.rows();
  Vec v(n * (n + 1) / 2);
  Eigen::Index idx = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    v(idx++) = s(j, j);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      v(idx++) = std::numbers::sqrt2 * 0.5 * (s(i, j) + s(j, i));
    }
  }
  return v;
}

Mat smat(const Vec& v, Eigen::Index n) {
  if (v.size() != n * (n + 1) / 2) throw Error(ErrorKind::DimensionMismatch, "svec length");
  Mat s(n, n);
  Eigen::Index idx = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    s(j, j) = v(idx++);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      s(i, j) = s(j, i) = v(idx++) / std::numbers::sqrt2;
    }
  }
  return s;
}

SymMat symmetric_from_gain(const Mat& b, const Mat& k) {
  const Eigen::Index n = b.rows();
  const Eigen::Index m = b.cols();
  if (k.rows() != m || k.cols() != n) {
    throw Error(ErrorKind::DimensionMismatch, "gain must be m x n");
  }
  if (rank_with_tolerance(b) < m) {
    throw Error(ErrorKind::RankDeficientB, "B must have full column rank to recover Pi from K");
  }
  const Eigen::Index s = n * (n + 1) / 2;
  Mat op(m * n, s);
  for (Eigen::Index j = 0; j < s; ++j) {
    const Mat basis = smat(Vec::Unit(s, j), n);
    const Mat image = b.transpose() * basis;
    op.col(j) = Eigen::Map<const Vec>(image.data(), m * n);
  }
  const Vec rhs = Eigen::Map<const Vec>(k.data(), m * n);
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(op);
  cod.setThreshold(tol::kPivot);
  return SymMat(smat(cod.solve(rhs), n));
}

Vec characteristic_polynomial(const Mat& f) {
  require_square(f, "characteristic polynomial argument");
  const Eigen::Index n = f.rows();
  Vec c = Vec::Zero(n + 1);
  c(n) = 1.0;
  Mat m = Mat::Zero(n, n);
  const Mat id = Mat::Identity(n, n);
  for (Eigen::Index k = 1; k <= n; ++k) {
    m = f * m + c(n - k + 1) * id;
    c(n - k) = -(f * m).trace() / static_cast<double>(k);
  }
  return c;
}

std::vector<std::complex<double>> polynomial_roots(const Vec& coeffs) {
  using cd = std::complex<double>;
  Eigen::Index deg = coeffs.size() - 1;
  while (deg > 0 && coeffs(deg) == 0.0) --deg;
  if (deg <= 0) return {};
  const double lead = coeffs(deg);
  std::vector<double> a(static_cast<size_t>(deg) + 1);
  for (Eigen::Index i = 0; i <= deg; ++i) a[static_cast<size_t>(i)] = coeffs(i) / lead;

  auto eval = [&](cd z, cd& dp) {
    cd p = 1.0;
    dp = 0.0;
    for (Eigen::Index i = deg - 1; i >= 0; --i) {
      dp = dp * z + p;
      p = p * z + a[static_cast<size_t>(i)];
    }
    return p;
  };

  // Cauchy bound for the initial circle.
  double radius = 0.0;
  for (Eigen::Index i = 0; i < deg; ++i) radius = std::max(radius, std::abs(a[static_cast<size_t>(i)]));
  radius = 1.0 + radius;
  std::vector<cd> z(static_cast<size_t>(deg));
  for (Eigen::Index k = 0; k < deg; ++k) {
    const double angle = 2.0 * std::numbers::pi * (static_cast<double>(k) + 0.25) / static_cast<double>(deg) + 0.4;
    z[static_cast<size_t>(k)] = std::polar(0.5 * radius, angle);
  }

  for (int iter = 0; iter < 1000; ++iter) {
    double max_step = 0.0;
    for (size_t k = 0; k < z.size(); ++k) {
      cd dp;
      const cd p = eval(z[k], dp);
      if (p == 0.0) continue;
      const cd ratio = p / dp;
      cd sum = 0.0;
      for (size_t j = 0; j < z.size(); ++j) {
        if (j != k) sum += 1.0 / (z[k] - z[j]);
      }
      const cd step = ratio / (1.0 - ratio * sum);
      z[k] -= step;
      max_step = std::max(max_step, std::abs(step) / (1.0 + std::abs(z[k])));
    }
    if (max_step < 1e-15) break;
  }
  return z;
}

}  // namespace covsteer
