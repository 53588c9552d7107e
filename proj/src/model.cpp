#include "covsteer/model.hpp"

#include <algorithm>
#include <string>

namespace covsteer {

namespace {

std::string shape(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

LinearSystem::LinearSystem(Mat a, Mat b, Mat b1) : a_(std::move(a)), b_(std::move(b)), b1_(std::move(b1)) {
  if (a_.rows() != a_.cols() || a_.rows() == 0) {
    throw Error(ErrorKind::DimensionMismatch, "A must be square and non-empty, got " + shape(a_));
  }
  if (b_.rows() != a_.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "B has " + std::to_string(b_.rows()) +
                                                  " rows but A is " + shape(a_));
  }
  if (b1_.rows() != a_.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "B1 has " + std::to_string(b1_.rows()) +
                                                  " rows but A is " + shape(a_));
  }
  if (!a_.allFinite() || !b_.allFinite() || !b1_.allFinite()) {
    throw Error(ErrorKind::InvalidArgument, "system matrices must be finite");
  }
}

bool LinearSystem::matched_channels() const {
  return b_.rows() == b1_.rows() && b_.cols() == b1_.cols() && b_ == b1_;
}

GaussianState::GaussianState(Vec mean, SymMat cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
  if (mean_.size() != cov_.order()) {
    throw Error(ErrorKind::DimensionMismatch, "mean and covariance dimensions differ");
  }
  if (!is_positive_definite(cov_)) {
    throw Error(ErrorKind::PositiveDefiniteViolation, "covariance must be positive definite");
  }
}

GaussianState GaussianState::centered(SymMat cov) {
  const Eigen::Index n = cov.order();
  return GaussianState(Vec::Zero(n), std::move(cov));
}

TimeGrid::TimeGrid(double start, double end, int n) : t_start(start), t_end(end), steps(n) {
  if (!(end > start)) throw Error(ErrorKind::InvalidArgument, "time grid needs t_end > t_start");
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "time grid needs at least one step");
}

SteeringProblem::SteeringProblem(LinearSystem sys, GaussianState init, GaussianState term, TimeGrid g)
    : system(std::move(sys)), initial(std::move(init)), terminal(std::move(term)), grid(g) {
  if (initial.dim() != system.n() || terminal.dim() != system.n()) {
    throw Error(ErrorKind::DimensionMismatch, "boundary states do not match the system order");
  }
}

StationaryProblem::StationaryProblem(LinearSystem sys, SymMat cov)
    : system(std::move(sys)), target_cov(std::move(cov)) {
  if (target_cov.order() != system.n()) {
    throw Error(ErrorKind::DimensionMismatch, "target covariance does not match the system order");
  }
  if (!is_positive_definite(target_cov)) {
    throw Error(ErrorKind::PositiveDefiniteViolation, "target covariance must be positive definite");
  }
}

ControllabilityReport check_controllable(const LinearSystem& sys) {
  const int rank = rank_with_tolerance(controllability_matrix(sys.A(), sys.B()));
  return {rank == sys.n(), rank};
}

bool check_channel_inclusion(const LinearSystem& sys) {
  Mat joined(sys.n(), sys.p() + sys.m());
  joined << sys.B1(), sys.B();
  // One absolute tolerance for both ranks so they are comparable.
  const double tol = tol::kRank * joined.norm() * static_cast<double>(std::max(joined.rows(), joined.cols()));
  return rank_with_tolerance(sys.B1(), tol) == rank_with_tolerance(joined, tol);
}

}  // namespace covsteer
