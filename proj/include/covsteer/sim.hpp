#pragma once

#include <cstdint>
#include <vector>

#include "covsteer/model.hpp"
#include "covsteer/stationary.hpp"
#include "covsteer/steering.hpp"

namespace covsteer {

struct SimConfig {
  int paths = 1000;
  std::uint64_t seed = 0;
  int substeps = 10;     // Euler-Maruyama steps per grid interval
  int threads = 0;       // 0: hardware concurrency
  int retain_paths = 0;  // keep the first few sample paths
};

struct SimResult {
  TimeGrid grid;
  std::vector<Vec> mean;     // per node
  std::vector<SymMat> cov;   // per node, unbiased
  double energy_estimate = 0.0;
  // retained[p][k]: state and input of path p at node k
  std::vector<std::vector<Vec>> states;
  std::vector<std::vector<Vec>> inputs;
};

/// Closed loop under u = ff(t) - K_k (x - mean(t)) with gains held on each
/// interval; ff and mean are interpolated linearly between nodes.
SimResult simulate_plan(const LinearSystem& sys, const SteeringPlan& plan, const GaussianState& init,
                        const SimConfig& cfg);

/// Closed loop under the constant law u = -K x. Throws NotHurwitz for an
/// unstable policy.
SimResult simulate_policy(const LinearSystem& sys, const StationaryPolicy& policy, const GaussianState& init,
                          double horizon, int steps, const SimConfig& cfg);

/// Counter-based generator: each path owns an independent stream derived
/// from (seed, path), so results do not depend on scheduling.
class PathRng {
 public:
  PathRng(std::uint64_t seed, std::uint64_t path);
  std::uint64_t next();
  double uniform();  // (0, 1)
  double normal();   // Marsaglia polar method

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace covsteer
