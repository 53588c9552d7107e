#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "covsteer/conic.hpp"
#include "covsteer/steering.hpp"
#include "instances.hpp"

using namespace covsteer;
using namespace covsteer::testing;

namespace {

conic::SteeringProgram program(const LinearSystem& sys, const SymMat& s0, const SymMat& sT, int steps,
                               double horizon = 1.0) {
  const SteeringProblem prob(sys, GaussianState::centered(s0), GaussianState::centered(sT),
                             TimeGrid(0.0, horizon, steps));
  return conic::SteeringProgram::from_problem(prob);
}

double dynamics_residual(const conic::SteeringProgram& prog, const conic::ConicSolution& sol) {
  double worst = 0.0;
  for (int k = 0; k < prog.steps; ++k) {
    const Mat& s = sol.Sigma[static_cast<size_t>(k)].mat();
    const Mat& u = sol.U[static_cast<size_t>(k)];
    const Mat next = s + prog.dt * (prog.A * s + s * prog.A.transpose() + prog.B * u.transpose() +
                                    u * prog.B.transpose() + prog.Q_eff.mat());
    worst = std::max(worst, (next - sol.Sigma[static_cast<size_t>(k) + 1].mat()).norm());
  }
  return worst;
}

double min_block_eigenvalue(const conic::SteeringProgram& prog, const conic::ConicSolution& sol) {
  const Eigen::Index n = prog.n(), m = prog.m();
  double worst = 1e300;
  for (int k = 0; k < prog.steps; ++k) {
    Mat blk(m + n, m + n);
    blk << sol.Y[static_cast<size_t>(k)].mat(), sol.U[static_cast<size_t>(k)].transpose(),
        sol.U[static_cast<size_t>(k)], sol.Sigma[static_cast<size_t>(k)].mat();
    worst = std::min(worst, Eigen::SelfAdjointEigenSolver<Mat>(blk).eigenvalues().minCoeff());
  }
  return worst;
}

}  // namespace

TEST(Conic, SingleStepScalarByHand) {
  const auto prog = program(scalar_system(0, 1, 1), scalar(1), scalar(1), 1);
  const auto sol = conic::solve(prog);
  ASSERT_EQ(sol.status, conic::Status::Optimal);
  EXPECT_NEAR(sol.U[0](0, 0), -0.5, 1e-6);
  EXPECT_NEAR(sol.objective, 0.25, 1e-6);
  const auto duals = conic::extract_dual_certificates(sol);
  ASSERT_EQ(duals.size(), 1u);
  EXPECT_NEAR(duals[0](0, 0), 0.5, 1e-6);
}

TEST(Conic, ZeroCostWhenUncontrolledUpdateHitsTarget) {
  Mat a(2, 2);
  a << -0.3, 0.4, -0.1, -0.6;
  const Mat b = Mat::Identity(2, 2);
  const LinearSystem sys(a, b, b);
  Mat s0m(2, 2);
  s0m << 1.5, 0.2, 0.2, 0.8;
  const SymMat s0(s0m);
  const SymMat sT(s0m + 1.0 * (a * s0m + s0m * a.transpose() + b * b.transpose()));
  const auto prog = program(sys, s0, sT, 1);
  const auto sol = conic::solve(prog);
  ASSERT_EQ(sol.status, conic::Status::Optimal);
  EXPECT_NEAR(sol.objective, 0.0, 1e-6);
  EXPECT_LE(sol.U[0].norm(), 1e-3);
  for (const auto& d : conic::extract_dual_certificates(sol)) EXPECT_LE(d.mat().norm(), 1e-5);
}

TEST(Conic, Example1Transient) {
  const auto prog = program(example1_system(), SymMat(2.0 * Mat::Identity(2, 2)), example1_sigma(), 100);
  const auto sol = conic::solve(prog);
  ASSERT_EQ(sol.status, conic::Status::Optimal);
  EXPECT_LE(sol.kkt.primal, 1e-7);
  EXPECT_LE(sol.kkt.dual, 1e-7);
  EXPECT_LE(sol.kkt.gap, 1e-7);
  EXPECT_LE(dynamics_residual(prog, sol), 1e-8 * prog.scale());
  EXPECT_GE(min_block_eigenvalue(prog, sol), -1e-9 * prog.scale());
  // Optimal value: duality gap closed.
  EXPECT_LE(std::abs(sol.objective - sol.dual_bound), 1e-6 * (1 + std::abs(sol.objective)));
  for (const auto& s : sol.Sigma) EXPECT_TRUE(is_positive_definite(s));
}

TEST(Conic, DualBoundBelowObjectiveOnceFeasible) {
  const auto prog = program(example1_system(), SymMat(2.0 * Mat::Identity(2, 2)), example1_sigma(), 50);
  const auto sol = conic::solve(prog);
  ASSERT_EQ(sol.status, conic::Status::Optimal);
  ASSERT_FALSE(sol.bound_history.empty());
  const auto& last = sol.bound_history.back();
  EXPECT_GE(last.first - last.second, -1e-7 * prog.scale());
  EXPECT_GE(sol.objective - sol.dual_bound, -1e-7 * prog.scale());
}

TEST(Conic, Deterministic) {
  const auto prog = program(example1_system(), SymMat(2.0 * Mat::Identity(2, 2)), example1_sigma(), 40);
  const auto a = conic::solve(prog);
  const auto b = conic::solve(prog);
  ASSERT_EQ(a.iterations, b.iterations);
  EXPECT_EQ(a.objective, b.objective);
  for (size_t k = 0; k < a.U.size(); ++k) EXPECT_EQ(a.U[k], b.U[k]);
}

TEST(Conic, ObjectiveInvariantUnderStateRescaling) {
  std::mt19937_64 rng(41);
  int checked = 0;
  for (int i = 0; i < 12; ++i) {
    const Mat a = random_matrix(rng, 2, 2);
    Mat b = random_matrix(rng, 2, 1);
    const LinearSystem sys(a, b, random_matrix(rng, 2, 1));
    // Keep to well-conditioned pairs: a nearly singular Gramian means costs
    // of order 1e5 and a badly scaled program.
    const Eigen::VectorXd w = Eigen::SelfAdjointEigenSolver<Mat>(controllability_gramian(a, b, 1.0).mat()).eigenvalues();
    if (w(0) < 1e-2 * w(1)) continue;
    const SymMat s0 = random_spd(rng, 2), sT = random_spd(rng, 2);
    Mat s = random_matrix(rng, 2, 2) + 2.0 * Mat::Identity(2, 2);
    const Mat si = s.inverse();
    const LinearSystem scaled(s * a * si, s * sys.B(), s * sys.B1());
    const auto base = conic::solve(program(sys, s0, sT, 60));
    const auto conj = conic::solve(program(scaled, SymMat(s * s0.mat() * s.transpose()),
                                           SymMat(s * sT.mat() * s.transpose()), 60));
    ASSERT_EQ(base.status, conic::Status::Optimal);
    ASSERT_EQ(conj.status, conic::Status::Optimal);
    EXPECT_LE(std::abs(base.objective - conj.objective), 10 * 1e-7 * (1 + std::abs(base.objective)))
        << "instance " << i;
    ++checked;
  }
  EXPECT_GE(checked, 5);
}

TEST(Conic, CertificatesNeedOptimal) {
  conic::ConicSolution sol;
  sol.status = conic::Status::MaxIterations;
  EXPECT_THROW(conic::extract_dual_certificates(sol), Error);
}

TEST(Conic, DualsTrackSchrodingerCostate) {
  const LinearSystem sys = scalar_system(0, 1, 1);
  const SymMat s0 = scalar(1), sT = scalar(0.5);
  double previous = 1e300;
  for (int steps : {50, 100, 200}) {
    const SteeringProblem prob(sys, GaussianState::centered(s0), GaussianState::centered(sT), TimeGrid(0, 1, steps));
    const auto sol = conic::solve(conic::SteeringProgram::from_problem(prob));
    ASSERT_EQ(sol.status, conic::Status::Optimal);
    const auto duals = conic::extract_dual_certificates(sol);
    const auto bridge = steer_schrodinger(prob).first;
    double err = 0.0;
    for (int k = 0; k < steps; ++k) {
      err = std::max(err, std::abs(duals[static_cast<size_t>(k)](0, 0) - bridge.Pi[static_cast<size_t>(k)](0, 0)));
    }
    EXPECT_LT(err, previous) << "N = " << steps;
    EXPECT_LT(err, 0.1);
    previous = err;
  }
}

TEST(Conic, ValidationErrors) {
  auto prog = program(example1_system(), SymMat(2.0 * Mat::Identity(2, 2)), example1_sigma(), 10);
  prog.steps = 0;
  EXPECT_THROW(prog.validate(), Error);
}
