#pragma once

#include <optional>
#include <vector>

#include "covsteer/model.hpp"

namespace covsteer {

struct AdmissibilityReport {
  bool admissible = false;
  int rank_lhs = 0;  // rank [[W, B], [B', 0]]
  int rank_rhs = 0;  // rank [[0, B], [B', 0]]
  std::optional<Mat> particular_X;
  int homogeneous_dim = 0;
  std::vector<Mat> kernel_basis;  // n x m solutions of B X' + X B' = 0
  double residual = 0.0;          // least-squares residual of B X' + X B' = -W
  bool tests_agree = true;        // rank test vs least-squares consistency
};

/// Can target_cov be made stationary by constant state feedback?
/// W = A Sigma + Sigma A' + B1 B1' must lie in the range of X -> B X' + X B'.
AdmissibilityReport check_admissible(const StationaryProblem& prob);

/// Projection test: (I - B B^+) W (I - B B^+) = 0.
bool hotz_skelton_check(const StationaryProblem& prob);

struct StationaryPolicy {
  Mat K;
  Mat X;
  SymMat Sigma;  // target covariance
  double power = 0.0;  // trace(K Sigma K')
  bool hurwitz = false;
  double epsilon = 0.0;
  std::optional<SymMat> achieved_cov;  // set by relax_epsilon
  double defect = 0.0;                 // ||Sigma - achieved_cov||_F
  double achieved_power = 0.0;         // trace(K achieved K')
};

/// Minimum of trace(X' Sigma^{-1} X) over the affine solution set,
/// K = -X' Sigma^{-1}. A non-Hurwitz result is returned, not thrown.
StationaryPolicy min_power_gain(const StationaryProblem& prob);

/// K_eps = K + eps/2 B' Sigma^{-1}. Throws NotHurwitz if the closed loop is
/// not numerically stable.
StationaryPolicy relax_epsilon(const StationaryProblem& prob, const StationaryPolicy& policy, double eps);

/// Residual of the stationary Lyapunov constraint including the eps B B'
/// term, relative to 1 + ||A||_F ||Sigma||_F + ||B1||_F^2.
double policy_constraint_residual(const StationaryProblem& prob, const StationaryPolicy& policy);

struct WillemsReport {
  SymMat Q;
  SymMat Pi;
  double are_residual = 0.0;
  bool hamiltonian_imaginary_axis_clear = false;
  double axis_distance = 0.0;  // smallest |Re| over Hamiltonian eigenvalues
};

WillemsReport willems_cross_check(const LinearSystem& sys, const StationaryPolicy& policy);

/// [[A, -B B'], [-Q, -A']]
Mat hamiltonian(const LinearSystem& sys, const SymMat& q);

}  // namespace covsteer
