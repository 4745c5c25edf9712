#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

namespace tcgan {

// Samples are whole series flattened to vectors (time-major); both
// two-sample metrics work on [count, features] matrices.

namespace detail {

// Direct pairwise differences: identical rows give an exact zero, which
// the nearest-neighbor identity nnd(X, X) == 0 relies on.
inline Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  using RowMajorMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMajorMat ar = a;
  const RowMajorMat br = b;
  Eigen::MatrixXd d2(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < ar.rows(); ++i)
    for (Eigen::Index j = 0; j < br.rows(); ++j)
      d2(i, j) = (ar.row(i) - br.row(j)).squaredNorm();
  return d2;
}

}  // namespace detail

/// Median of pooled pairwise Euclidean distances (self-pairs excluded);
/// the default RBF bandwidth.
inline double median_heuristic_bandwidth(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  Eigen::MatrixXd pooled(x.rows() + y.rows(), x.cols());
  pooled.topRows(x.rows()) = x;
  pooled.bottomRows(y.rows()) = y;
  const Eigen::MatrixXd d2 = detail::squared_distances(pooled, pooled);
  std::vector<double> distances;
  distances.reserve(static_cast<std::size_t>(pooled.rows() * (pooled.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < pooled.rows(); ++i)
    for (Eigen::Index j = i + 1; j < pooled.rows(); ++j)
      distances.push_back(std::sqrt(d2(i, j)));
  if (distances.empty()) return 1.0;
  const std::size_t mid = distances.size() / 2;
  std::nth_element(distances.begin(), distances.begin() + static_cast<std::ptrdiff_t>(mid),
                   distances.end());
  double median = distances[mid];
  if (distances.size() % 2 == 0) {
    const double lower =
        *std::max_element(distances.begin(), distances.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (median + lower);
  }
  return median > 0.0 ? median : 1.0;
}

/// Squared maximum mean discrepancy with an RBF kernel
/// K(a,b) = exp(-|a-b|^2 / (2 sigma^2)): within-set sums skip i == j and
/// divide by N(N-1); the cross term uses the full double sum over N*N'.
/// Bandwidth defaults to the median heuristic over the pooled sets.
inline double mmd(const Eigen::MatrixXd& real, const Eigen::MatrixXd& generated,
                  double bandwidth = 0.0) {
  if (real.rows() < 2 || generated.rows() < 2)
    throw std::invalid_argument("mmd: both sets need at least 2 samples");
  if (real.cols() != generated.cols())
    throw std::invalid_argument("mmd: feature dimensions disagree");
  const double sigma = bandwidth > 0.0 ? bandwidth : median_heuristic_bandwidth(real, generated);
  const double scale = -1.0 / (2.0 * sigma * sigma);

  const auto within = [scale](const Eigen::MatrixXd& s) {
    const Eigen::MatrixXd k = (detail::squared_distances(s, s) * scale).array().exp();
    const double n = static_cast<double>(s.rows());
    return (k.sum() - k.trace()) / (n * (n - 1.0));
  };
  const Eigen::MatrixXd cross = (detail::squared_distances(real, generated) * scale).array().exp();
  const double n = static_cast<double>(real.rows());
  const double m = static_cast<double>(generated.rows());
  return within(real) + within(generated) - 2.0 * cross.sum() / (n * m);
}

/// Mean over generated samples of the squared L2 distance to the nearest
/// real sample.
inline double nnd(const Eigen::MatrixXd& real, const Eigen::MatrixXd& generated) {
  if (real.rows() < 1 || generated.rows() < 1)
    throw std::invalid_argument("nnd: both sets must be nonempty");
  if (real.cols() != generated.cols())
    throw std::invalid_argument("nnd: feature dimensions disagree");
  const Eigen::MatrixXd d2 = detail::squared_distances(generated, real);
  return d2.rowwise().minCoeff().mean();
}

/// Normalized mutual information between two label assignments, natural
/// log, normalized by the geometric mean of the entropies. A single-cluster
/// assignment has zero entropy; the value is defined as 0 and flagged.
inline double nmi(const std::vector<int>& u, const std::vector<int>& v,
                  bool* degenerate = nullptr) {
  if (u.size() != v.size()) throw std::invalid_argument("nmi: assignment lengths differ");
  if (u.empty()) throw std::invalid_argument("nmi: empty assignments");
  if (degenerate) *degenerate = false;
  const double n = static_cast<double>(u.size());
  std::map<int, double> cu, cv;
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cu[u[i]] += 1.0;
    cv[v[i]] += 1.0;
    joint[{u[i], v[i]}] += 1.0;
  }
  double hu = 0.0, hv = 0.0;
  for (const auto& [label, count] : cu) hu -= count / n * std::log(count / n);
  for (const auto& [label, count] : cv) hv -= count / n * std::log(count / n);
  if (hu <= 0.0 || hv <= 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  double mi = 0.0;
  for (const auto& [pair, count] : joint) {
    const double pij = count / n;
    const double pi = cu[pair.first] / n;
    const double pj = cv[pair.second] / n;
    mi += pij * std::log(pij / (pi * pj));
  }
  const double value = mi / std::sqrt(hu * hv);
  return std::clamp(value, 0.0, 1.0);
}

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size())
    throw std::invalid_argument("accuracy: length mismatch");
  if (predicted.empty()) throw std::invalid_argument("accuracy: empty inputs");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (predicted[i] == truth[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

/// Per-class F1 averaged with weights proportional to true support;
/// a class with P + R = 0 contributes F1 = 0.
inline double weighted_f1(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size())
    throw std::invalid_argument("weighted_f1: length mismatch");
  if (predicted.empty()) throw std::invalid_argument("weighted_f1: empty inputs");
  std::map<int, double> tp, fp, fn, support;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    support[truth[i]] += 1.0;
    if (predicted[i] == truth[i]) {
      tp[truth[i]] += 1.0;
    } else {
      fp[predicted[i]] += 1.0;
      fn[truth[i]] += 1.0;
    }
  }
  const double n = static_cast<double>(truth.size());
  double total = 0.0;
  for (const auto& [label, count] : support) {
    const double t = tp[label], p_den = tp[label] + fp[label], r_den = tp[label] + fn[label];
    const double precision = p_den > 0.0 ? t / p_den : 0.0;
    const double recall = r_den > 0.0 ? t / r_den : 0.0;
    const double f1 =
        precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    total += count / n * f1;
  }
  return total;
}

// ---------------------------------------------------------------------------
// EvalReport

/// Per-run metric record. Metric values are deterministic for a fixed seed
/// and are serialized separately from wall-clock timings, which vary run to
/// run and live in their own file.
struct EvalReport {
  static constexpr int kSchemaVersion = 1;

  std::string dataset;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, double>> metrics;
  std::vector<std::pair<std::string, double>> timings;

  void add_metric(const std::string& name, double value) { metrics.emplace_back(name, value); }
  void add_timing(const std::string& name, double seconds) {
    timings.emplace_back(name, seconds);
  }

  double metric(const std::string& name) const {
    for (const auto& [key, value] : metrics)
      if (key == name) return value;
    throw std::out_of_range("report: no metric named " + name);
  }

  bool has_metric(const std::string& name) const {
    for (const auto& [key, value] : metrics)
      if (key == name) return true;
    return false;
  }
};

namespace detail {

inline std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void save_report_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("report: cannot write " + path);
  out << "schema,dataset,seed,metric,value\n";
  for (const auto& [name, value] : report.metrics)
    out << EvalReport::kSchemaVersion << ',' << report.dataset << ',' << report.seed << ','
        << name << ',' << detail::format_value(value) << '\n';
}

inline void save_report_json(const EvalReport& report, const std::string& path) {
  nlohmann::ordered_json j;
  j["schema"] = EvalReport::kSchemaVersion;
  j["dataset"] = report.dataset;
  j["seed"] = report.seed;
  nlohmann::ordered_json values;
  for (const auto& [name, value] : report.metrics) values[name] = value;
  j["metrics"] = values;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("report: cannot write " + path);
  out << j.dump(2) << '\n';
}

inline void save_timings_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("report: cannot write " + path);
  out << "schema,dataset,seed,timing,seconds\n";
  for (const auto& [name, value] : report.timings)
    out << EvalReport::kSchemaVersion << ',' << report.dataset << ',' << report.seed << ','
        << name << ',' << detail::format_value(value) << '\n';
}

}  // namespace tcgan
