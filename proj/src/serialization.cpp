#include "covsteer/serialization.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

namespace covsteer::io {

namespace {

[[noreturn]] void schema_error(const std::string& path, const std::string& what) {
  throw Error(ErrorKind::Schema, (path.empty() ? std::string("/") : path) + ": " + what);
}

const Json& field(const Json& doc, const std::string& key, const std::string& path = "") {
  if (!doc.is_object()) schema_error(path, "expected an object");
  auto it = doc.find(key);
  if (it == doc.end()) schema_error(path + "/" + key, "missing field");
  return *it;
}

double number(const Json& j, const std::string& path) {
  if (!j.is_number()) schema_error(path, "expected a number");
  const double x = j.get<double>();
  if (!std::isfinite(x)) schema_error(path, "expected a finite number");
  return x;
}

int integer(const Json& j, const std::string& path) {
  if (!j.is_number_integer()) schema_error(path, "expected an integer");
  return j.get<int>();
}

std::string text(const Json& j, const std::string& path) {
  if (!j.is_string()) schema_error(path, "expected a string");
  return j.get<std::string>();
}

bool boolean(const Json& j, const std::string& path) {
  if (!j.is_boolean()) schema_error(path, "expected a boolean");
  return j.get<bool>();
}

std::string at(const std::string& path, size_t i) { return path + "/" + std::to_string(i); }

template <class T, class F>
std::vector<T> list(const Json& j, const std::string& path, F&& item) {
  if (!j.is_array()) schema_error(path, "expected an array");
  std::vector<T> out;
  out.reserve(j.size());
  for (size_t i = 0; i < j.size(); ++i) out.push_back(item(j[i], at(path, i)));
  return out;
}

void expect_kind(const Json& doc, const std::string& kind) {
  const std::string got = text(field(doc, "kind"), "/kind");
  if (got != kind) schema_error("/kind", "expected \"" + kind + "\", got \"" + got + "\"");
}

TimeGrid grid_from_json(const Json& doc) {
  const double t0 = number(field(doc, "t_start"), "/t_start");
  const double t1 = number(field(doc, "t_end"), "/t_end");
  const int steps = integer(field(doc, "steps"), "/steps");
  try {
    return TimeGrid(t0, t1, steps);
  } catch (const Error& e) {
    schema_error("/steps", e.what());
  }
}

void put_grid(Json& doc, const TimeGrid& g) {
  doc["t_start"] = g.t_start;
  doc["t_end"] = g.t_end;
  doc["steps"] = g.steps;
}

Json sym_list(const std::vector<SymMat>& v) {
  Json out = Json::array();
  for (const auto& s : v) out.push_back(to_json(s.mat()));
  return out;
}

std::vector<SymMat> sym_list_from(const Json& j, const std::string& path) {
  return list<SymMat>(j, path, [](const Json& e, const std::string& p) {
    return symmetric_from_json(e, p, nullptr);
  });
}

void check_length(size_t got, size_t want, const std::string& path) {
  if (got != want) {
    schema_error(path, "expected " + std::to_string(want) + " entries, got " + std::to_string(got));
  }
}

}  // namespace

std::string format_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

Mat matrix_from_json(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) schema_error(path, "expected a non-empty array of rows");
  const size_t rows = j.size();
  if (!j[0].is_array() || j[0].empty()) schema_error(at(path, 0), "expected a non-empty row array");
  const size_t cols = j[0].size();
  Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (size_t i = 0; i < rows; ++i) {
    const Json& row = j[i];
    if (!row.is_array()) schema_error(at(path, i), "expected a row array");
    if (row.size() != cols) {
      throw Error(ErrorKind::DimensionMismatch, at(path, i) + ": ragged row, expected " + std::to_string(cols) +
                                                    " entries, got " + std::to_string(row.size()));
    }
    for (size_t c = 0; c < cols; ++c) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = number(row[c], at(at(path, i), c));
    }
  }
  return m;
}

Vec vector_from_json(const Json& j, const std::string& path) {
  if (!j.is_array()) schema_error(path, "expected an array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(j[i], at(path, i));
  return v;
}

Json to_json(const Mat& m) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
    out.push_back(std::move(row));
  }
  return out;
}

Json to_json(const Vec& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

SymMat symmetric_from_json(const Json& j, const std::string& path, std::vector<std::string>* warnings) {
  const Mat m = matrix_from_json(j, path);
  if (m.rows() != m.cols()) {
    throw Error(ErrorKind::DimensionMismatch, path + ": expected a square matrix, got " + std::to_string(m.rows()) +
                                                  "x" + std::to_string(m.cols()));
  }
  const double asym = (m - m.transpose()).norm();
  if (warnings && asym > kAsymmetryWarning * (1.0 + m.norm())) {
    warnings->push_back(path + ": asymmetric input (||S - S'||_F = " + format_number(asym) + "), symmetrized");
  }
  return SymMat(m);
}

LinearSystem system_from_json(const Json& doc) {
  if (!doc.is_object()) schema_error("", "expected an object with fields A, B, B1");
  const Mat a = matrix_from_json(field(doc, "A"), "/A");
  const Mat b = matrix_from_json(field(doc, "B"), "/B");
  const Mat b1 = matrix_from_json(field(doc, "B1"), "/B1");
  return LinearSystem(a, b, b1);
}

Json to_json(const LinearSystem& sys) {
  return Json{{"A", to_json(sys.A())}, {"B", to_json(sys.B())}, {"B1", to_json(sys.B1())}};
}

SymMat symmetric_field(const Json& doc, const std::string& key, std::vector<std::string>* warnings) {
  return symmetric_from_json(field(doc, key), "/" + key, warnings);
}

GaussianState gaussian_from_json(const Json& doc, const std::string& key, std::vector<std::string>* warnings) {
  SymMat cov = symmetric_field(doc, key, warnings);
  Vec mean = Vec::Zero(cov.order());
  if (doc.contains("mean")) {
    mean = vector_from_json(doc["mean"], "/mean");
    if (mean.size() != cov.order()) {
      throw Error(ErrorKind::DimensionMismatch, "/mean: length does not match /" + key);
    }
  }
  return GaussianState(std::move(mean), std::move(cov));
}

Json to_json(const GaussianState& g, const std::string& key) {
  Json doc{{key, to_json(g.cov().mat())}};
  if (g.mean().size() > 0 && g.mean().norm() > 0.0) doc["mean"] = to_json(g.mean());
  return doc;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::InvalidArgument, "SHA-256 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xf]);
  }
  return out;
}

std::string file_sha256(const std::string& path) { return sha256_hex(read_file(path)); }

std::string model_digest(const LinearSystem& sys) { return sha256_hex(to_json(sys).dump()); }

Json to_json(const SteeringPlan& plan, const std::string& digest) {
  Json doc{{"kind", "plan"}, {"model_digest", digest}};
  put_grid(doc, plan.grid);
  Json gains = Json::array();
  for (const auto& k : plan.gains) gains.push_back(to_json(k));
  Json ff = Json::array();
  for (const auto& v : plan.feedforward) ff.push_back(to_json(v));
  Json mean = Json::array();
  for (const auto& v : plan.mean_pred) mean.push_back(to_json(v));
  doc["gains"] = std::move(gains);
  doc["feedforward"] = std::move(ff);
  doc["mean_pred"] = std::move(mean);
  doc["cov_pred"] = sym_list(plan.cov_pred);
  doc["cost"] = plan.cost;
  doc["mean_energy"] = plan.mean_energy;
  const SteeringDiagnostics& d = plan.diagnostics;
  doc["diagnostics"] = Json{{"method", d.method},
                            {"solver_status", d.solver_status},
                            {"kkt", {{"primal", d.kkt.primal}, {"dual", d.kkt.dual}, {"gap", d.kkt.gap}}},
                            {"objective", d.objective},
                            {"dual_bound", d.dual_bound},
                            {"iterations", d.iterations},
                            {"boundary_residual", d.boundary_residual},
                            {"continuous_defect", d.continuous_defect}};
  return doc;
}

PlanDocument plan_from_json(const Json& doc) {
  expect_kind(doc, "plan");
  PlanDocument out;
  out.model_digest = text(field(doc, "model_digest"), "/model_digest");
  SteeringPlan& p = out.plan;
  p.grid = grid_from_json(doc);
  const size_t steps = static_cast<size_t>(p.grid.steps);
  p.gains = list<Mat>(field(doc, "gains"), "/gains", matrix_from_json);
  check_length(p.gains.size(), steps, "/gains");
  p.feedforward = list<Vec>(field(doc, "feedforward"), "/feedforward", vector_from_json);
  check_length(p.feedforward.size(), steps + 1, "/feedforward");
  p.mean_pred = list<Vec>(field(doc, "mean_pred"), "/mean_pred", vector_from_json);
  check_length(p.mean_pred.size(), steps + 1, "/mean_pred");
  p.cov_pred = sym_list_from(field(doc, "cov_pred"), "/cov_pred");
  check_length(p.cov_pred.size(), steps + 1, "/cov_pred");
  const Eigen::Index n = p.cov_pred.front().order();
  const Eigen::Index m = p.gains.front().rows();
  for (size_t k = 0; k < steps; ++k) {
    if (p.gains[k].rows() != m || p.gains[k].cols() != n) {
      throw Error(ErrorKind::DimensionMismatch, at("/gains", k) + ": inconsistent gain shape");
    }
  }
  for (size_t k = 0; k <= steps; ++k) {
    if (p.cov_pred[k].order() != n || p.mean_pred[k].size() != n || p.feedforward[k].size() != m) {
      throw Error(ErrorKind::DimensionMismatch, "node " + std::to_string(k) + ": inconsistent trajectory shapes");
    }
  }
  p.cost = number(field(doc, "cost"), "/cost");
  p.mean_energy = number(field(doc, "mean_energy"), "/mean_energy");
  const Json& d = field(doc, "diagnostics");
  SteeringDiagnostics& diag = p.diagnostics;
  diag.method = text(field(d, "method", "/diagnostics"), "/diagnostics/method");
  diag.solver_status = text(field(d, "solver_status", "/diagnostics"), "/diagnostics/solver_status");
  const Json& kkt = field(d, "kkt", "/diagnostics");
  diag.kkt.primal = number(field(kkt, "primal", "/diagnostics/kkt"), "/diagnostics/kkt/primal");
  diag.kkt.dual = number(field(kkt, "dual", "/diagnostics/kkt"), "/diagnostics/kkt/dual");
  diag.kkt.gap = number(field(kkt, "gap", "/diagnostics/kkt"), "/diagnostics/kkt/gap");
  diag.objective = number(field(d, "objective", "/diagnostics"), "/diagnostics/objective");
  diag.dual_bound = number(field(d, "dual_bound", "/diagnostics"), "/diagnostics/dual_bound");
  diag.iterations = integer(field(d, "iterations", "/diagnostics"), "/diagnostics/iterations");
  diag.boundary_residual = number(field(d, "boundary_residual", "/diagnostics"), "/diagnostics/boundary_residual");
  diag.continuous_defect = number(field(d, "continuous_defect", "/diagnostics"), "/diagnostics/continuous_defect");
  return out;
}

Json to_json(const StationaryPolicy& pol, const std::string& digest, int homogeneous_dim) {
  Json doc{{"kind", "policy"},
           {"model_digest", digest},
           {"K", to_json(pol.K)},
           {"X", to_json(pol.X)},
           {"Sigma", to_json(pol.Sigma.mat())},
           {"power", pol.power},
           {"hurwitz", pol.hurwitz},
           {"epsilon", pol.epsilon},
           {"homogeneous_dim", homogeneous_dim},
           {"defect", pol.defect},
           {"achieved_power", pol.achieved_power}};
  if (pol.achieved_cov) doc["achieved_cov"] = to_json(pol.achieved_cov->mat());
  return doc;
}

PolicyDocument policy_from_json(const Json& doc) {
  expect_kind(doc, "policy");
  PolicyDocument out;
  out.model_digest = text(field(doc, "model_digest"), "/model_digest");
  out.homogeneous_dim = integer(field(doc, "homogeneous_dim"), "/homogeneous_dim");
  StationaryPolicy& p = out.policy;
  p.K = matrix_from_json(field(doc, "K"), "/K");
  p.X = matrix_from_json(field(doc, "X"), "/X");
  p.Sigma = symmetric_field(doc, "Sigma", nullptr);
  if (p.K.cols() != p.Sigma.order() || p.X.rows() != p.Sigma.order() || p.X.cols() != p.K.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "/K: policy matrices have inconsistent shapes");
  }
  p.power = number(field(doc, "power"), "/power");
  p.hurwitz = boolean(field(doc, "hurwitz"), "/hurwitz");
  p.epsilon = number(field(doc, "epsilon"), "/epsilon");
  p.defect = number(field(doc, "defect"), "/defect");
  p.achieved_power = number(field(doc, "achieved_power"), "/achieved_power");
  if (doc.contains("achieved_cov")) p.achieved_cov = symmetric_field(doc, "achieved_cov", nullptr);
  return out;
}

Json to_json(const LqrSolution& sol) {
  Json doc{{"kind", "lqr"}};
  put_grid(doc, sol.grid);
  Json gains = Json::array();
  for (const auto& k : sol.gains) gains.push_back(to_json(k));
  doc["Pi"] = sym_list(sol.Pi);
  doc["gains"] = std::move(gains);
  doc["cov"] = sym_list(sol.cov);
  doc["cost"] = sol.cost;
  return doc;
}

LqrSolution lqr_from_json(const Json& doc) {
  expect_kind(doc, "lqr");
  LqrSolution sol;
  sol.grid = grid_from_json(doc);
  const size_t nodes = static_cast<size_t>(sol.grid.steps) + 1;
  sol.Pi = sym_list_from(field(doc, "Pi"), "/Pi");
  check_length(sol.Pi.size(), nodes, "/Pi");
  sol.gains = list<Mat>(field(doc, "gains"), "/gains", matrix_from_json);
  check_length(sol.gains.size(), nodes, "/gains");
  sol.cov = sym_list_from(field(doc, "cov"), "/cov");
  check_length(sol.cov.size(), nodes, "/cov");
  sol.cost = number(field(doc, "cost"), "/cost");
  return sol;
}

void write_traj_csv(const SimResult& res, const std::string& path, double t_offset) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::InvalidArgument, "cannot write " + path);
  const Eigen::Index n = res.mean.empty() ? 0 : res.mean.front().size();
  const Eigen::Index m = res.inputs.empty() ? 0 : res.inputs.front().front().size();
  out << "t,path";
  for (Eigen::Index i = 1; i <= n; ++i) out << ",x" << i;
  for (Eigen::Index i = 1; i <= m; ++i) out << ",u" << i;
  out << '\n';
  for (size_t p = 0; p < res.states.size(); ++p) {
    for (size_t k = 0; k < res.states[p].size(); ++k) {
      out << format_number(t_offset + res.grid.node(static_cast<int>(k))) << ',' << p;
      for (Eigen::Index i = 0; i < n; ++i) out << ',' << format_number(res.states[p][k](i));
      for (Eigen::Index i = 0; i < m; ++i) out << ',' << format_number(res.inputs[p][k](i));
      out << '\n';
    }
  }
  if (!out) throw Error(ErrorKind::InvalidArgument, "write failed: " + path);
}

void write_stats_csv(const SimResult& res, const std::string& path, double t_offset) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::InvalidArgument, "cannot write " + path);
  const Eigen::Index n = res.mean.empty() ? 0 : res.mean.front().size();
  out << "t";
  for (Eigen::Index i = 1; i <= n; ++i) {
    for (Eigen::Index j = 1; j <= n; ++j) out << ",cov" << i << '_' << j;
  }
  for (Eigen::Index i = 1; i <= n; ++i) out << ",mean" << i;
  out << '\n';
  for (size_t k = 0; k < res.mean.size(); ++k) {
    out << format_number(t_offset + res.grid.node(static_cast<int>(k)));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) out << ',' << format_number(res.cov[k](i, j));
    }
    for (Eigen::Index i = 0; i < n; ++i) out << ',' << format_number(res.mean[k](i));
    out << '\n';
  }
  if (!out) throw Error(ErrorKind::InvalidArgument, "write failed: " + path);
}

StatsTable read_stats_csv(const std::string& path, Eigen::Index n) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) schema_error(path, "empty stats file");
  StatsTable table;
  const size_t width = 1 + static_cast<size_t>(n * n + n);
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<double> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        size_t used = 0;
        cells.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        schema_error(path + ":" + std::to_string(row), "not a number: " + cell);
      }
    }
    if (cells.size() != width) schema_error(path + ":" + std::to_string(row), "wrong column count");
    table.t.push_back(cells[0]);
    Mat c(n, n);
    for (Eigen::Index i = 0; i < n * n; ++i) c(i / n, i % n) = cells[1 + static_cast<size_t>(i)];
    table.cov.emplace_back(c);
    Vec mu(n);
    for (Eigen::Index i = 0; i < n; ++i) mu(i) = cells[1 + static_cast<size_t>(n * n + i)];
    table.mean.push_back(mu);
  }
  return table;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::InvalidArgument, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json parse(const std::string& body, const std::string& origin) {
  try {
    return Json::parse(body);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::Schema, origin + ": malformed JSON at byte " + std::to_string(e.byte));
  }
}

Json load_json(const std::string& path) { return parse(read_file(path), path); }

void write_json(const Json& doc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::InvalidArgument, "cannot write " + path);
  out << doc.dump(1) << '\n';
  if (!out) throw Error(ErrorKind::InvalidArgument, "write failed: " + path);
}

}  // namespace covsteer::io
