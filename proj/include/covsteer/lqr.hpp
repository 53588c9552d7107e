#pragma once

#include <vector>

#include "covsteer/model.hpp"

namespace covsteer {

/// Terminal-cost LQG baseline sampled on a grid.
struct LqrSolution {
  TimeGrid grid;
  std::vector<SymMat> Pi;    // Pi(t_k), k = 0..N, Pi(t_N) = M
  std::vector<Mat> gains;    // K_k = B' Pi(t_k), k = 0..N
  std::vector<SymMat> cov;   // closed-loop covariance, cov[0] = Sigma0
  double cost = 0.0;         // trace(Sigma0 Pi(0)) + int trace(B1 B1' Pi) dt
};

/// Integrates the Riccati flow backward from Pi(T) = M, then the closed-loop
/// covariance forward from Sigma0. M need not be positive semidefinite; a
/// finite escape of Pi raises RiccatiEscape.
LqrSolution solve_lqr(const LinearSystem& sys, const SymMat& sigma0, const SymMat& terminal_weight,
                      const TimeGrid& grid);

/// Right-hand side of dPi/dt = -A'Pi - Pi A + Pi B B' Pi.
Mat riccati_rhs(const LinearSystem& sys, const Mat& pi);

}  // namespace covsteer
