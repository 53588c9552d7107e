#include "covsteer/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <thread>

namespace covsteer {

namespace {

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
constexpr int kChunk = 64;  // paths per aggregation leaf, independent of thread count

// Sums over a chunk of paths, shifted by a per-node centre for accuracy.
struct Moments {
  std::vector<Vec> s1;
  std::vector<Mat> s2;
  double energy = 0.0;
  double count = 0.0;

  Moments() = default;
  Moments(size_t nodes, Eigen::Index n) : s1(nodes, Vec::Zero(n)), s2(nodes, Mat::Zero(n, n)) {}

  void merge(const Moments& o) {
    for (size_t k = 0; k < s1.size(); ++k) {
      s1[k] += o.s1[k];
      s2[k] += o.s2[k];
    }
    energy += o.energy;
    count += o.count;
  }
};

Moments pairwise(std::vector<Moments>& parts, size_t lo, size_t hi) {
  if (hi - lo == 1) return std::move(parts[lo]);
  const size_t mid = lo + (hi - lo) / 2;
  Moments left = pairwise(parts, lo, mid);
  left.merge(pairwise(parts, mid, hi));
  return left;
}

// Input at time t and state x on interval k.
using Law = std::function<Vec(int k, double t, const Vec& x)>;

struct Setup {
  const LinearSystem* sys;
  TimeGrid grid;
  Vec x0_mean;
  Mat x0_chol;
  std::vector<Vec> centre;  // per node
  Law law;
};

SimResult run(const Setup& st, const SimConfig& cfg) {
  if (cfg.paths < 1) throw Error(ErrorKind::InvalidArgument, "paths must be >= 1");
  if (cfg.substeps < 1) throw Error(ErrorKind::InvalidArgument, "substeps must be >= 1");
  if (cfg.retain_paths < 0) throw Error(ErrorKind::InvalidArgument, "retain_paths must be >= 0");
  const LinearSystem& sys = *st.sys;
  const Eigen::Index n = sys.n();
  const Eigen::Index p = sys.p();
  const int steps = st.grid.steps;
  const size_t nodes = static_cast<size_t>(steps) + 1;
  const double h = st.grid.dt() / cfg.substeps;
  const double sqrt_h = std::sqrt(h);
  const int retain = std::min(cfg.retain_paths, cfg.paths);

  SimResult res;
  res.grid = st.grid;
  res.states.assign(static_cast<size_t>(retain), std::vector<Vec>(nodes));
  res.inputs.assign(static_cast<size_t>(retain), std::vector<Vec>(nodes));

  const int chunks = (cfg.paths + kChunk - 1) / kChunk;
  std::vector<Moments> parts(static_cast<size_t>(chunks));

  auto simulate_chunk = [&](int c) {
    Moments mom(nodes, n);
    const int first = c * kChunk;
    const int last = std::min(cfg.paths, first + kChunk);
    for (int path = first; path < last; ++path) {
      PathRng rng(cfg.seed, static_cast<std::uint64_t>(path));
      Vec z(n);
      for (Eigen::Index i = 0; i < n; ++i) z(i) = rng.normal();
      Vec x = st.x0_mean + st.x0_chol * z;
      Vec noise(p);
      double energy = 0.0;
      const bool keep = path < retain;
      auto record = [&](int k, const Vec& u) {
        const Vec d = x - st.centre[static_cast<size_t>(k)];
        mom.s1[static_cast<size_t>(k)] += d;
        mom.s2[static_cast<size_t>(k)] += d * d.transpose();
        if (keep) {
          res.states[static_cast<size_t>(path)][static_cast<size_t>(k)] = x;
          res.inputs[static_cast<size_t>(path)][static_cast<size_t>(k)] = u;
        }
      };
      for (int k = 0; k < steps; ++k) {
        double t = st.grid.node(k);
        Vec u = st.law(k, t, x);
        record(k, u);
        for (int j = 0; j < cfg.substeps; ++j) {
          for (Eigen::Index i = 0; i < p; ++i) noise(i) = rng.normal();
          const double u2 = u.squaredNorm();
          x += h * (sys.A() * x + sys.B() * u) + sqrt_h * (sys.B1() * noise);
          t = st.grid.node(k) + (j + 1) * h;
          u = st.law(k, t, x);
          energy += 0.5 * h * (u2 + u.squaredNorm());
        }
      }
      record(steps, st.law(steps - 1, st.grid.t_end, x));
      mom.energy += energy;
      mom.count += 1.0;
    }
    parts[static_cast<size_t>(c)] = std::move(mom);
  };

  int workers = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, chunks);
  if (workers == 1) {
    for (int c = 0; c < chunks; ++c) simulate_chunk(c);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (int c = next++; c < chunks; c = next++) simulate_chunk(c);
      });
    }
    for (auto& t : pool) t.join();
  }

  const Moments total = pairwise(parts, 0, parts.size());
  const double count = total.count;
  for (size_t k = 0; k < nodes; ++k) {
    const Vec mean_dev = total.s1[k] / count;
    res.mean.push_back(st.centre[k] + mean_dev);
    if (count > 1) {
      res.cov.emplace_back((total.s2[k] - count * mean_dev * mean_dev.transpose()) / (count - 1.0));
    } else {
      res.cov.push_back(SymMat::zero(n));
    }
  }
  res.energy_estimate = std::max(0.0, total.energy / count);
  return res;
}

Mat sampling_factor(const SymMat& cov) {
  // Cholesky where possible; a symmetric square root covers near-singular
  // initial laws.
  Eigen::LLT<Mat> llt(cov.mat());
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov.mat());
  return eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

Vec lerp(const std::vector<Vec>& v, const TimeGrid& grid, int k, double t) {
  const double w = std::clamp((t - grid.node(k)) / grid.dt(), 0.0, 1.0);
  return (1.0 - w) * v[static_cast<size_t>(k)] + w * v[static_cast<size_t>(k) + 1];
}

}  // namespace

PathRng::PathRng(std::uint64_t seed, std::uint64_t path)
    : state_(mix64(seed + kGolden * (mix64(path + 1) | 1ULL))) {}

std::uint64_t PathRng::next() {
  state_ += kGolden;
  return mix64(state_);
}

double PathRng::uniform() { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }

double PathRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u;
  double v;
  double s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  has_spare_ = true;
  return u * f;
}

SimResult simulate_plan(const LinearSystem& sys, const SteeringPlan& plan, const GaussianState& init,
                        const SimConfig& cfg) {
  const int steps = plan.grid.steps;
  if (init.dim() != sys.n()) throw Error(ErrorKind::DimensionMismatch, "initial state does not match system");
  if (static_cast<int>(plan.gains.size()) != steps) {
    throw Error(ErrorKind::DimensionMismatch, "plan has the wrong number of gains");
  }
  for (const Mat& k : plan.gains) {
    if (k.rows() != sys.m() || k.cols() != sys.n()) throw Error(ErrorKind::DimensionMismatch, "gain shape");
  }
  const size_t nodes = static_cast<size_t>(steps) + 1;
  std::vector<Vec> ff = plan.feedforward;
  std::vector<Vec> mean = plan.mean_pred;
  if (ff.empty()) ff.assign(nodes, Vec::Zero(sys.m()));
  if (mean.empty()) mean.assign(nodes, Vec::Zero(sys.n()));
  if (ff.size() != nodes || mean.size() != nodes) {
    throw Error(ErrorKind::DimensionMismatch, "plan feedforward/mean trajectories have the wrong length");
  }
  Setup st{&sys, plan.grid, init.mean(), sampling_factor(init.cov()), mean, {}};
  st.law = [&](int k, double t, const Vec& x) -> Vec {
    return lerp(ff, plan.grid, k, t) - plan.gains[static_cast<size_t>(k)] * (x - lerp(mean, plan.grid, k, t));
  };
  return run(st, cfg);
}

SimResult simulate_policy(const LinearSystem& sys, const StationaryPolicy& policy, const GaussianState& init,
                          double horizon, int steps, const SimConfig& cfg) {
  if (!policy.hurwitz) throw Error(ErrorKind::NotHurwitz, "policy does not stabilize the closed loop");
  if (init.dim() != sys.n()) throw Error(ErrorKind::DimensionMismatch, "initial state does not match system");
  if (policy.K.rows() != sys.m() || policy.K.cols() != sys.n()) {
    throw Error(ErrorKind::DimensionMismatch, "policy gain shape does not match system");
  }
  const TimeGrid grid(0.0, horizon, steps);
  // Centre on the noise-free mean trajectory.
  const Mat f = sys.A() - sys.B() * policy.K;
  std::vector<Vec> centre;
  for (int k = 0; k <= steps; ++k) centre.push_back(expm(f, grid.node(k)) * init.mean());
  Setup st{&sys, grid, init.mean(), sampling_factor(init.cov()), centre, {}};
  const Mat gain = policy.K;
  st.law = [gain](int, double, const Vec& x) -> Vec { return -gain * x; };
  return run(st, cfg);
}

}  // namespace covsteer
