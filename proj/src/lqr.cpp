#include "covsteer/lqr.hpp"

#include <cmath>

namespace covsteer {

Mat riccati_rhs(const LinearSystem& sys, const Mat& pi) {
  const Mat pb = pi * sys.B();
  return -sys.A().transpose() * pi - pi * sys.A() + pb * pb.transpose();
}

LqrSolution solve_lqr(const LinearSystem& sys, const SymMat& sigma0, const SymMat& terminal_weight,
                      const TimeGrid& grid) {
  const Eigen::Index n = sys.n();
  if (sigma0.order() != n || terminal_weight.order() != n) {
    throw Error(ErrorKind::DimensionMismatch, "Sigma0 and M must be n x n");
  }
  const int steps = grid.steps;

  // Pi on a grid twice as fine so RK4 stages of the covariance flow land on
  // samples: fine[j] = Pi(t_end - j dt/2).
  std::vector<Mat> fine;
  try {
    fine = integrate_matrix_ode([&](double, const Mat& x) { return riccati_rhs(sys, x); },
                                terminal_weight.mat(), grid.t_end, grid.t_start, 2 * steps, true);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NonFiniteState) {
      throw Error(ErrorKind::RiccatiEscape, std::string("Riccati flow escaped: ") + e.what());
    }
    throw;
  }
  const double half = 0.5 * grid.dt();
  auto pi_at = [&](double t) -> const Mat& {
    const auto j = static_cast<size_t>(std::lround((grid.t_end - t) / half));
    return fine.at(j);
  };

  LqrSolution sol;
  sol.grid = grid;
  sol.Pi.reserve(static_cast<size_t>(steps) + 1);
  sol.gains.reserve(static_cast<size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) {
    const Mat& pi = fine[static_cast<size_t>(2 * (steps - k))];
    sol.Pi.emplace_back(pi);
    sol.gains.push_back(sys.B().transpose() * pi);
  }

  const Mat q = sys.noise_intensity();
  const auto cov = integrate_matrix_ode(
      [&](double t, const Mat& s) {
        const Mat f = sys.A() - sys.B() * sys.B().transpose() * pi_at(t);
        return Mat(f * s + s * f.transpose() + q);
      },
      sigma0.mat(), grid.t_start, grid.t_end, steps, true);
  for (const auto& s : cov) sol.cov.emplace_back(s);

  // Trapezoidal quadrature of trace(B1 B1' Pi) on the grid.
  double integral = 0.0;
  for (int k = 0; k < steps; ++k) {
    integral += 0.5 * grid.dt() *
                ((q * sol.Pi[static_cast<size_t>(k)].mat()).trace() +
                 (q * sol.Pi[static_cast<size_t>(k) + 1].mat()).trace());
  }
  sol.cost = (sigma0.mat() * sol.Pi.front().mat()).trace() + integral;
  return sol;
}

}  // namespace covsteer
