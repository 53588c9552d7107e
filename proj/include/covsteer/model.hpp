#pragma once

#include "covsteer/matcore.hpp"

namespace covsteer {

/// dx = A x dt + B u dt + B1 dw with constant matrices.
class LinearSystem {
 public:
  LinearSystem(Mat a, Mat b, Mat b1);

  const Mat& A() const { return a_; }
  const Mat& B() const { return b_; }
  const Mat& B1() const { return b1_; }

  Eigen::Index n() const { return a_.rows(); }
  Eigen::Index m() const { return b_.cols(); }
  Eigen::Index p() const { return b1_.cols(); }

  /// B1 B1'
  SymMat noise_intensity() const { return SymMat(b1_ * b1_.transpose()); }

  /// Control and noise enter through identical channels (entrywise B == B1).
  bool matched_channels() const;

 private:
  Mat a_;
  Mat b_;
  Mat b1_;
};

class GaussianState {
 public:
  /// Throws PositiveDefiniteViolation for a singular or indefinite covariance.
  GaussianState(Vec mean, SymMat cov);
  static GaussianState centered(SymMat cov);

  const Vec& mean() const { return mean_; }
  const SymMat& cov() const { return cov_; }
  Eigen::Index dim() const { return mean_.size(); }

 private:
  Vec mean_;
  SymMat cov_;
};

struct TimeGrid {
  double t_start = 0.0;
  double t_end = 1.0;
  int steps = 1;

  TimeGrid() = default;
  TimeGrid(double start, double end, int n);

  double dt() const { return (t_end - t_start) / steps; }
  double node(int k) const { return t_start + k * dt(); }
  double horizon() const { return t_end - t_start; }
};

struct SteeringProblem {
  LinearSystem system;
  GaussianState initial;
  GaussianState terminal;
  TimeGrid grid;

  SteeringProblem(LinearSystem sys, GaussianState init, GaussianState term, TimeGrid g);
};

struct StationaryProblem {
  LinearSystem system;
  SymMat target_cov;

  StationaryProblem(LinearSystem sys, SymMat cov);
};

struct ControllabilityReport {
  bool controllable = false;
  int rank = 0;
};

ControllabilityReport check_controllable(const LinearSystem& sys);

/// R(B) contained in R(B1), tested as rank [B1] == rank [B1, B].
bool check_channel_inclusion(const LinearSystem& sys);

}  // namespace covsteer
