#pragma once

#include <optional>
#include <vector>

#include "covsteer/model.hpp"

namespace covsteer::conic {

/// Time-discretized minimum-energy steering program:
///
///   minimize    sum_k dt * trace(Y_k)
///   subject to  Sigma_{k+1} = Sigma_k + dt (A Sigma_k + Sigma_k A' + B U_k' + U_k B' + Q_eff)
///               Sigma_0 = Sigma0, Sigma_N = SigmaT
///               [[Y_k, U_k'], [U_k, Sigma_k]] >= 0,   k = 0..N-1
struct SteeringProgram {
  Mat A;
  Mat B;
  SymMat Q_eff;  // B1 B1' plus any extra forcing
  SymMat sigma0;
  SymMat sigmaT;
  int steps = 1;
  double dt = 1.0;

  Eigen::Index n() const { return A.rows(); }
  Eigen::Index m() const { return B.cols(); }

  static SteeringProgram from_problem(const SteeringProblem& prob,
                                      const std::optional<SymMat>& q_extra = std::nullopt);
  /// Throws DimensionMismatch / InvalidArgument / PositiveDefiniteViolation.
  void validate() const;
  /// 1 + ||[A, B, Q_eff, Sigma0, SigmaT]||_F; every residual is reported relative to it.
  double scale() const;
};

enum class Status { Optimal, Infeasible, MaxIterations };
const char* to_string(Status s);

struct KktResiduals {
  double primal = 0.0;  // ||A(x) - b||
  double dual = 0.0;    // ||C - Z + A*(lambda)||
  double gap = 0.0;     // sum_k <Z_k, M_k>
};

struct ConicSolution {
  Status status = Status::MaxIterations;
  std::vector<SymMat> Sigma;  // k = 0..N, both ends pinned
  std::vector<Mat> U;         // k = 0..N-1, n x m
  std::vector<SymMat> Y;      // k = 0..N-1, m x m
  double objective = 0.0;
  double dual_bound = 0.0;
  KktResiduals kkt;  // relative to SteeringProgram::scale()
  int iterations = 0;
  double barrier_parameter = 0.0;  // 1 / mu at the last iterate
  // Raw equality multipliers: [0] pins Sigma_0, [k + 1] is dynamics step k.
  std::vector<SymMat> equality_duals;
  // (primal objective, dual objective) at every iterate.
  std::vector<std::pair<double, double>> bound_history;
};

struct Options {
  double tol = 1e-7;
  int max_iter = 500;
};

/// Infeasible primal-dual path-following method with Nesterov-Todd scaling.
/// Newton systems are reduced to a block-tridiagonal Schur complement in the
/// equality multipliers. A MaxIterations result still carries the best
/// iterate; an Infeasible status is returned, not thrown.
ConicSolution solve(const SteeringProgram& prog, const Options& opts = {});

/// Multipliers of the dynamics equalities, one symmetric n x n matrix per
/// step, signed so that they discretize the costate Pi(t_k). Throws NotSolved
/// unless the solution is Optimal.
std::vector<SymMat> extract_dual_certificates(const ConicSolution& sol);

}  // namespace covsteer::conic
