#include <gtest/gtest.h>

#include <random>

#include <Eigen/Eigenvalues>

#include "covsteer/stationary.hpp"
#include "instances.hpp"

using namespace covsteer;
using namespace covsteer::testing;

namespace {

// Stationary covariance of a randomly stabilized loop, hence admissible: the
// extra B B' forcing is absorbed by X = -0.05 B. Falls back to a random SPD
// matrix when no stabilizing draw is found.
SymMat reachable_cov(std::mt19937_64& rng, const LinearSystem& sys) {
  for (int attempt = 0; attempt < 50; ++attempt) {
    const Mat k = random_matrix(rng, sys.m(), sys.n(), -3.0, 3.0);
    const Mat f = sys.A() - sys.B() * k;
    if (Eigen::EigenSolver<Mat>(f, false).eigenvalues().real().maxCoeff() > -0.05) continue;
    const Mat q = sys.B1() * sys.B1().transpose() + 0.1 * sys.B() * sys.B().transpose();
    return solve_lyapunov(f, SymMat(q));
  }
  return random_spd(rng, sys.n());
}

double power_x(const StationaryPolicy& p) {
  return (p.X.transpose() * p.Sigma.mat().inverse() * p.X).trace();
}

}  // namespace

TEST(Admissibility, Example1) {
  const auto rep = check_admissible(StationaryProblem(example1_system(), example1_sigma()));
  EXPECT_TRUE(rep.admissible);
  EXPECT_EQ(rep.homogeneous_dim, 0);
  ASSERT_TRUE(rep.particular_X.has_value());
  EXPECT_NEAR((*rep.particular_X - Vec((Vec(2) << -0.5, 0).finished())).norm(), 0.0, 1e-12);
  EXPECT_EQ(rep.rank_lhs, rep.rank_rhs);
  EXPECT_TRUE(rep.tests_agree);

  const auto bad = check_admissible(StationaryProblem(example1_system(), SymMat::identity(2)));
  EXPECT_FALSE(bad.admissible);
  EXPECT_FALSE(bad.particular_X.has_value());
  EXPECT_NE(bad.rank_lhs, bad.rank_rhs);
}

TEST(Admissibility, FullInputAlwaysAdmissible) {
  std::mt19937_64 rng(51);
  for (int i = 0; i < 20; ++i) {
    const Mat eye = Mat::Identity(3, 3);
    const StationaryProblem prob(LinearSystem(random_matrix(rng, 3, 3), eye, eye), random_spd(rng, 3));
    EXPECT_TRUE(check_admissible(prob).admissible);
    EXPECT_TRUE(hotz_skelton_check(prob));
  }
}

TEST(HotzSkelton, Examples) {
  EXPECT_TRUE(hotz_skelton_check(StationaryProblem(example1_system(), example1_sigma())));
  EXPECT_FALSE(hotz_skelton_check(StationaryProblem(example1_system(), SymMat::identity(2))));
  std::mt19937_64 rng(52);
  const LinearSystem sys(random_matrix(rng, 2, 2), random_matrix(rng, 2, 2) + 2 * Mat::Identity(2, 2),
                         random_matrix(rng, 2, 1));
  EXPECT_TRUE(hotz_skelton_check(StationaryProblem(sys, random_spd(rng, 2))));
}

TEST(HotzSkelton, AgreesWithAdmissibility) {
  std::mt19937_64 rng(53);
  int admissible = 0;
  for (int i = 0; i < 200; ++i) {
    const Eigen::Index n = 2 + i % 2, m = 1 + (i / 2) % 2, p = 1 + (i / 4) % 2;
    const LinearSystem sys(random_matrix(rng, n, n), random_matrix(rng, n, m), random_matrix(rng, n, p));
    const SymMat sigma = (i % 3 == 0) ? random_spd(rng, n) : reachable_cov(rng, sys);
    if (!is_positive_definite(sigma)) continue;
    const StationaryProblem prob(sys, sigma);
    const auto rep = check_admissible(prob);
    EXPECT_EQ(rep.admissible, hotz_skelton_check(prob)) << "instance " << i;
    EXPECT_TRUE(rep.tests_agree) << "instance " << i;
    admissible += rep.admissible ? 1 : 0;
  }
  EXPECT_GT(admissible, 50);
  EXPECT_LT(admissible, 200);
}

TEST(MinPowerGain, Example1) {
  const StationaryProblem prob(example1_system(), example1_sigma());
  const auto pol = min_power_gain(prob);
  EXPECT_NEAR(pol.K(0, 0), 1.0, 1e-9);
  EXPECT_NEAR(pol.K(0, 1), 1.0, 1e-9);
  EXPECT_NEAR(pol.power, 0.5, 1e-12);
  EXPECT_TRUE(pol.hurwitz);
  EXPECT_EQ(pol.epsilon, 0.0);
}

TEST(MinPowerGain, Example2) {
  const auto pol = min_power_gain(StationaryProblem(example2_system(), example2_sigma()));
  EXPECT_NEAR(pol.K(0, 0), 1.0, 1e-6);
  EXPECT_NEAR(pol.K(0, 1), 3.0, 1e-6);
  EXPECT_NEAR(pol.K(0, 2), 2.0, 1e-6);
  EXPECT_NEAR(pol.power, 2.5, 1e-6);
  EXPECT_TRUE(pol.hurwitz);
}

TEST(MinPowerGain, ScalarByHand) {
  const auto pol = min_power_gain(StationaryProblem(scalar_system(0, 1, 1), scalar(1)));
  EXPECT_NEAR(pol.X(0, 0), -0.5, 1e-14);
  EXPECT_NEAR(pol.K(0, 0), 0.5, 1e-14);
  EXPECT_NEAR(pol.power, 0.25, 1e-14);
}

TEST(MinPowerGain, InadmissibleThrows) {
  try {
    min_power_gain(StationaryProblem(example1_system(), SymMat::identity(2)));
    FAIL() << "expected NotAdmissible";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotAdmissible);
  }
}

TEST(MinPowerGain, NonHurwitzReturned) {
  // a = 1 with no noise: the only stationary gain puts the pole at zero.
  const auto pol = min_power_gain(StationaryProblem(scalar_system(1, 1, 0), scalar(1)));
  EXPECT_FALSE(pol.hurwitz);
  EXPECT_NEAR(pol.K(0, 0), 1.0, 1e-12);
}

TEST(MinPowerGain, ConstraintAndPowerOnRandomInstances) {
  std::mt19937_64 rng(54);
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    const Eigen::Index n = 2 + i % 3, m = 1 + i % 2;
    const LinearSystem sys(random_matrix(rng, n, n), random_matrix(rng, n, m), random_matrix(rng, n, 1));
    const SymMat sigma = reachable_cov(rng, sys);
    if (!is_positive_definite(sigma)) continue;
    const StationaryProblem prob(sys, sigma);
    if (!check_admissible(prob).admissible) continue;
    const auto pol = min_power_gain(prob);
    EXPECT_LE(policy_constraint_residual(prob, pol), 1e-9) << "instance " << i;
    EXPECT_LE(std::abs(pol.power - power_x(pol)), 1e-10 * std::max(1.0, pol.power)) << "instance " << i;
    ++checked;
  }
  EXPECT_GT(checked, 50);
}

TEST(MinPowerGain, KernelPerturbationsNeverHelp) {
  std::mt19937_64 rng(55);
  int checked = 0;
  for (int i = 0; i < 50; ++i) {
    const LinearSystem sys(random_matrix(rng, 2, 2), random_matrix(rng, 2, 2), random_matrix(rng, 2, 1));
    const SymMat sigma = reachable_cov(rng, sys);
    if (!is_positive_definite(sigma)) continue;
    const StationaryProblem prob(sys, sigma);
    const auto rep = check_admissible(prob);
    if (!rep.admissible || rep.homogeneous_dim < 1) continue;
    const auto pol = min_power_gain(prob);
    const Mat sinv = sigma.mat().inverse();
    for (const Mat& xj : rep.kernel_basis) {
      for (double step : {1e-3, -1e-3}) {
        const Mat x = pol.X + step * xj;
        EXPECT_GE((x.transpose() * sinv * x).trace(), pol.power - 1e-12 * (1 + pol.power)) << "instance " << i;
      }
    }
    ++checked;
  }
  EXPECT_GT(checked, 20);
}

TEST(MinPowerGain, ChannelInclusionGivesHurwitz) {
  std::mt19937_64 rng(56);
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    const Eigen::Index n = 2 + i % 2;
    const Mat b = random_matrix(rng, n, 1);
    Mat b1(n, 2);
    b1 << b, random_matrix(rng, n, 1);
    const LinearSystem sys(random_matrix(rng, n, n), b, b1);
    ASSERT_TRUE(check_channel_inclusion(sys));
    const SymMat sigma = reachable_cov(rng, sys);
    if (!is_positive_definite(sigma)) continue;
    const StationaryProblem prob(sys, sigma);
    if (!check_admissible(prob).admissible) continue;
    EXPECT_TRUE(min_power_gain(prob).hurwitz) << "instance " << i;
    ++checked;
  }
  EXPECT_GT(checked, 30);
}

TEST(RelaxEpsilon, DefectShrinksWithEpsilon) {
  const StationaryProblem prob(example1_system(), example1_sigma());
  const auto pol = min_power_gain(prob);
  const Mat f = prob.system.A() - prob.system.B() * pol.K;
  const double slope = solve_lyapunov(f, SymMat(prob.system.B() * prob.system.B().transpose())).mat().norm();
  double previous = 1e300;
  for (double eps : {0.2, 0.1, 0.01, 0.001}) {
    const auto r = relax_epsilon(prob, pol, eps);
    EXPECT_TRUE(r.hurwitz);
    ASSERT_TRUE(r.achieved_cov.has_value());
    EXPECT_GT(r.defect, 0.0);
    EXPECT_LT(r.defect, previous);
    EXPECT_LE(policy_constraint_residual(prob, r), 1e-9);
    previous = r.defect;
  }
  // The defect is first order in epsilon with this exact slope.
  const double ratio = relax_epsilon(prob, pol, 1e-4).defect / 1e-4;
  EXPECT_NEAR(ratio, slope, 1e-3 * slope);
}

TEST(RelaxEpsilon, ZeroIsIdentity) {
  const StationaryProblem prob(example1_system(), example1_sigma());
  const auto pol = min_power_gain(prob);
  const auto same = relax_epsilon(prob, pol, 0.0);
  EXPECT_EQ(same.K, pol.K);
  EXPECT_EQ(same.power, pol.power);
  EXPECT_EQ(same.epsilon, 0.0);
}

TEST(RelaxEpsilon, StabilizesMarginalLoop) {
  const StationaryProblem prob(scalar_system(1, 1, 0.5), scalar(1));
  const auto pol = min_power_gain(prob);
  EXPECT_TRUE(pol.hurwitz);  // noise keeps the pole off the axis here
  const StationaryProblem marginal(scalar_system(1, 1, 0), scalar(1));
  const auto mp = min_power_gain(marginal);
  ASSERT_FALSE(mp.hurwitz);
  const auto r = relax_epsilon(marginal, mp, 0.1);
  EXPECT_TRUE(r.hurwitz);
  EXPECT_NEAR(r.K(0, 0), 1.05, 1e-12);
  EXPECT_THROW(relax_epsilon(marginal, mp, 0.0), Error);
  EXPECT_THROW(relax_epsilon(marginal, mp, -1.0), Error);
}

TEST(Willems, Example1Identity) {
  const auto pol = min_power_gain(StationaryProblem(example1_system(), example1_sigma()));
  const auto rep = willems_cross_check(example1_system(), pol);
  EXPECT_LE(rep.are_residual, 1e-12);
  EXPECT_LE((example1_system().B().transpose() * rep.Pi.mat() - pol.K).norm(), 1e-10);
}

TEST(Willems, Example2HamiltonianClear) {
  const LinearSystem sys = example2_system();
  const auto pol = min_power_gain(StationaryProblem(sys, example2_sigma()));
  const auto rep = willems_cross_check(sys, pol);
  EXPECT_TRUE(rep.hamiltonian_imaginary_axis_clear);
  EXPECT_GT(rep.axis_distance, 1e-6);
  // Oracle: Eigen's eigensolver on the same Hamiltonian.
  const auto eig = Eigen::EigenSolver<Mat>(hamiltonian(sys, rep.Q), false).eigenvalues();
  EXPECT_GT(eig.real().cwiseAbs().minCoeff(), 1e-6);
}

TEST(Willems, GainDoesNotDependOnPiChoice) {
  const LinearSystem sys = example2_system();
  const auto pol = min_power_gain(StationaryProblem(sys, example2_sigma()));
  const auto rep = willems_cross_check(sys, pol);
  // B' Pi only sees the last row, so any matrix supported on the leading
  // 2x2 block is in the kernel.
  Mat kernel = Mat::Zero(3, 3);
  kernel(0, 0) = 0.7;
  kernel(0, 1) = kernel(1, 0) = -0.2;
  const Mat pi2 = rep.Pi.mat() + kernel;
  const Mat b = sys.B();
  EXPECT_EQ(b.transpose() * pi2, b.transpose() * rep.Pi.mat());
  const Mat q2 = -sys.A().transpose() * pi2 - pi2 * sys.A() + pi2 * b * b.transpose() * pi2;
  EXPECT_GT((q2 - rep.Q.mat()).norm(), 1e-3);
}

TEST(Willems, Errors) {
  auto pol = min_power_gain(StationaryProblem(scalar_system(1, 1, 0), scalar(1)));
  EXPECT_THROW(willems_cross_check(scalar_system(1, 1, 0), pol), Error);
  const LinearSystem sys(Mat::Identity(2, 2) * -1.0, Mat::Zero(2, 1), Mat::Identity(2, 2));
  pol.K = Mat::Zero(1, 2);
  pol.hurwitz = true;
  try {
    willems_cross_check(sys, pol);
    FAIL() << "expected RankDeficientB";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::RankDeficientB);
  }
}
