#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "covsteer/conic.hpp"
#include "covsteer/model.hpp"

namespace covsteer {

/// Trajectories of the coupled (Pi, H) system on the plan grid.
struct SchrodingerSolution {
  TimeGrid grid;
  std::vector<SymMat> Pi;  // k = 0..N
  std::vector<SymMat> H;   // k = 0..N
  double boundary_residual = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> residual_history;  // one entry per accepted iterate
};

struct SteeringDiagnostics {
  std::string method;  // "sdp" or "schrodinger"
  std::string solver_status;
  conic::KktResiduals kkt;           // sdp only
  double objective = 0.0;            // sdp only: discrete program objective
  double dual_bound = 0.0;           // sdp only
  int iterations = 0;
  double boundary_residual = 0.0;    // ||Sigma_N - SigmaT||_F / ||SigmaT||_F
  double continuous_defect = 0.0;    // same, after re-simulating the continuous ODE
};

/// Feedback plan u = ff_k - K_k (x - mean_k), gains held constant on each
/// grid interval.
struct SteeringPlan {
  TimeGrid grid;
  std::vector<Mat> gains;        // k = 0..N-1, m x n
  std::vector<Vec> feedforward;  // k = 0..N
  std::vector<SymMat> cov_pred;  // k = 0..N
  std::vector<Vec> mean_pred;    // k = 0..N
  double cost = 0.0;             // expected energy of the feedback part
  double mean_energy = 0.0;      // energy of the feedforward part
  SteeringDiagnostics diagnostics;

  double total_cost() const { return cost + mean_energy; }
};

struct SchrodingerOptions {
  int max_iter = 500;
  double tol = 1e-9;
};

struct SteeringOptions {
  conic::Options conic;
  SchrodingerOptions schrodinger;
  double boundary_tol = 1e-3;  // relative, on ||Sigma_N - SigmaT||_F
};

/// Steerability of the covariance equation; equivalent to (A, B) controllable.
bool check_lyapunov_controllability(const LinearSystem& sys);

/// Minimum-energy covariance steering through the discretized convex
/// program. `q_extra` adds a PSD forcing term to B1 B1'.
SteeringPlan steer_sdp(const SteeringProblem& prob, const std::optional<SymMat>& q_extra = std::nullopt,
                       const SteeringOptions& opts = {});

/// Matched-channel case (B == B1 entrywise) through the boundary-coupled
/// Riccati pair. Throws InvalidArgument when the channels differ.
std::pair<SchrodingerSolution, SteeringPlan> steer_schrodinger(const SteeringProblem& prob,
                                                               const SteeringOptions& opts = {});

struct OptimalityReport {
  std::vector<SymMat> Pi;      // recovered from the gains, k = 0..N-1
  std::vector<SymMat> H;       // Sigma_k^{-1} - Pi_k
  std::vector<SymMat> Sigma;   // gains re-simulated from Sigma0, k = 0..N
  double pi_residual = 0.0;    // max over midpoints of the Pi equation residual
  double h_residual = 0.0;     // same for the H equation
  double initial_residual = 0.0;   // ||Pi_0 + H_0 - Sigma0^{-1}||_F
  double terminal_residual = 0.0;  // ||Sigma_N^{-1} - SigmaT^{-1}||_F
};

/// Checks a plan against the necessary conditions of the general (B != B1)
/// coupled system. Residuals are reported, never thresholded.
OptimalityReport verify_optimality(const LinearSystem& sys, const SteeringPlan& plan,
                                   const SymMat& sigma0, const SymMat& sigmaT);

struct MeanSteering {
  std::vector<Vec> feedforward;  // u(t_k), k = 0..N
  std::vector<Vec> mean;         // x(t_k), k = 0..N
  double energy = 0.0;
  Vec costate;                   // W(T)^{-1} (xT - exp(AT) x0)
};

/// Minimum-energy transfer of the mean from x0 to xT over the grid.
MeanSteering steer_mean(const LinearSystem& sys, const Vec& x0, const Vec& xT, const TimeGrid& grid);

/// Open-loop mean control at time t for a computed transfer.
Vec mean_control(const LinearSystem& sys, const MeanSteering& ms, const TimeGrid& grid, double t);

/// Integrates the covariance ODE under piecewise-constant gains with RK4,
/// `substeps` per grid interval; returns the covariance at every node.
std::vector<SymMat> propagate_covariance(const LinearSystem& sys, const SymMat& q,
                                         const std::vector<Mat>& gains, const TimeGrid& grid,
                                         const SymMat& sigma0, int substeps = 4);

}  // namespace covsteer
