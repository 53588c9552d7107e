#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "covsteer/lqr.hpp"
#include "covsteer/model.hpp"
#include "covsteer/sim.hpp"
#include "covsteer/stationary.hpp"
#include "covsteer/steering.hpp"

// File schemas. Every document is one JSON object; matrices are arrays of
// row arrays, vectors are flat arrays. Parse failures raise ErrorKind::Schema
// with a JSON pointer to the offending field.
namespace covsteer::io {

using Json = nlohmann::json;

/// Asymmetry above this (relative to 1 + ||S||_F) is reported as a warning.
inline constexpr double kAsymmetryWarning = 1e-9;

Mat matrix_from_json(const Json& j, const std::string& path);
Vec vector_from_json(const Json& j, const std::string& path);
Json to_json(const Mat& m);
Json to_json(const Vec& v);

/// Square array, symmetrized. Appends a message to `warnings` when the input
/// was noticeably asymmetric.
SymMat symmetric_from_json(const Json& j, const std::string& path, std::vector<std::string>* warnings);

/// {"A": .., "B": .., "B1": ..}
LinearSystem system_from_json(const Json& doc);
Json to_json(const LinearSystem& sys);

/// {"Sigma": .., "mean": optional}. `key` selects the covariance field.
GaussianState gaussian_from_json(const Json& doc, const std::string& key, std::vector<std::string>* warnings);
Json to_json(const GaussianState& g, const std::string& key = "Sigma");

/// {"<key>": symmetric matrix}
SymMat symmetric_field(const Json& doc, const std::string& key, std::vector<std::string>* warnings);

/// Hex SHA-256 of the canonical (compact, key-sorted) model document, so
/// reformatting a model file does not change it.
std::string model_digest(const LinearSystem& sys);
std::string sha256_hex(const std::string& bytes);
std::string file_sha256(const std::string& path);

struct PlanDocument {
  SteeringPlan plan;
  std::string model_digest;
};
Json to_json(const SteeringPlan& plan, const std::string& model_digest);
PlanDocument plan_from_json(const Json& doc);

struct PolicyDocument {
  StationaryPolicy policy;
  std::string model_digest;
  int homogeneous_dim = 0;
};
Json to_json(const StationaryPolicy& policy, const std::string& model_digest, int homogeneous_dim);
PolicyDocument policy_from_json(const Json& doc);

Json to_json(const LqrSolution& sol);
LqrSolution lqr_from_json(const Json& doc);

/// CSV writers. Numbers use 17 significant digits and '.' as radix.
/// traj: t, path, x1..xn, u1..um for every retained path.
/// stats: t, row-major covariance entries, mean entries.
void write_traj_csv(const SimResult& res, const std::string& path, double t_offset = 0.0);
void write_stats_csv(const SimResult& res, const std::string& path, double t_offset = 0.0);

struct StatsTable {
  std::vector<double> t;
  std::vector<SymMat> cov;
  std::vector<Vec> mean;
};
StatsTable read_stats_csv(const std::string& path, Eigen::Index n);

/// Whole file as a string; ErrorKind::InvalidArgument when unreadable.
std::string read_file(const std::string& path);
/// Parses JSON text; ErrorKind::Schema with the parser position on failure.
Json parse(const std::string& text, const std::string& origin);
Json load_json(const std::string& path);
void write_json(const Json& doc, const std::string& path);

/// %.17g
std::string format_number(double x);

}  // namespace covsteer::io
