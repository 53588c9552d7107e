#pragma once

#include <complex>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "covsteer/error.hpp"

namespace covsteer {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

namespace tol {
// Relative tolerances shared by every module.
inline constexpr double kPivot = 1e-12;
inline constexpr double kResidual = 1e-10;
inline constexpr double kRank = 1e-9;
}  // namespace tol

/// Symmetric matrix. The stored matrix is exactly symmetric: every
/// construction averages the input with its transpose.
class SymMat {
 public:
  SymMat() = default;
  explicit SymMat(const Mat& m);

  static SymMat identity(Eigen::Index n) { return SymMat(Mat::Identity(n, n)); }
  static SymMat zero(Eigen::Index n) { return SymMat(Mat::Zero(n, n)); }

  Eigen::Index order() const { return m_.rows(); }
  const Mat& mat() const { return m_; }
  operator const Mat&() const { return m_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

 private:
  Mat m_;
};

/// (S + S')/2 as a plain matrix.
inline Mat symmetrized(const Mat& s) { return 0.5 * (s + s.transpose()); }

bool all_finite(const Mat& m);

/// Lower-triangular L with LL' = S. Throws PositiveDefiniteViolation when a
/// pivot falls below rel_tol * ||S||_inf.
Mat cholesky(const SymMat& s, double rel_tol = tol::kPivot);
bool is_positive_definite(const SymMat& s, double rel_tol = tol::kPivot);

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
SymMat spd_inverse(const SymMat& s);

/// exp(A t) by scaling and squaring with a (6,6) Pade approximant.
Mat expm(const Mat& a, double t = 1.0);

/// Solves F X + X F' + Q = 0 through the n^2 x n^2 Kronecker system.
/// Throws SingularLyapunov when that system is numerically singular.
SymMat solve_lyapunov(const Mat& f, const SymMat& q);

/// Lyapunov-based stability test: F is Hurwitz iff F P + P F' + I = 0 has a
/// positive-definite solution. Singular solves fall back to shifted probes;
/// disagreeing probes raise Indeterminate.
bool is_hurwitz(const Mat& f);

/// Numerical rank from column-pivoted Householder QR. Without an explicit
/// tolerance, pivots below 1e-9 * ||M||_F * max(rows, cols) count as zero.
int rank_with_tolerance(const Mat& m, std::optional<double> tol = std::nullopt);

/// [B, AB, ..., A^{n-1} B]
Mat controllability_matrix(const Mat& a, const Mat& b);

/// W(T) = int_0^T exp(A s) B B' exp(A' s) ds, evaluated with Van Loan's
/// block-exponential construction.
SymMat controllability_gramian(const Mat& a, const Mat& b, double horizon);

using MatrixRhs = std::function<Mat(double t, const Mat& x)>;

/// Classical RK4 on a uniform grid from t0 to t1 (t1 < t0 integrates
/// backward). Returns steps + 1 samples including the initial value. With
/// `symmetric` set, every sample is symmetrized. Throws NonFiniteState when
/// the state overflows.
std::vector<Mat> integrate_matrix_ode(const MatrixRhs& rhs, const Mat& x0, double t0,
                                      double t1, int steps, bool symmetric = false);

/// Least-norm symmetric P solving B' P = K (B is n x m, K is m x n).
/// Throws RankDeficientB when B lacks full column rank.
SymMat symmetric_from_gain(const Mat& b, const Mat& k);

/// Coefficients c_0..c_n (c_n = 1) of det(sI - F), Faddeev-LeVerrier.
Vec characteristic_polynomial(const Mat& f);

/// All complex roots of sum_i c_i s^i (Aberth iteration).
std::vector<std::complex<double>> polynomial_roots(const Vec& coeffs);

/// Symmetric n x n matrices <-> R^{n(n+1)/2}, isometric for the trace inner
/// product (off-diagonal entries carry a sqrt(2) factor).
Vec svec(const Mat& s);
Mat smat(const Vec& v, Eigen::Index n);

}  // namespace covsteer
