#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "tcgan/rng.hpp"
#include "tcgan/tensor.hpp"

namespace tcgan {

enum class Split { kTrain, kTest };

constexpr int kUnlabeled = -1;

/// Labeled or unlabeled time-series collection. Series are stored as one
/// row per sample, flattened time-major: element (t, c) at t*d + c.
struct Dataset {
  Eigen::MatrixXd series;        // [N, n*d], row-major semantics via flattening
  std::vector<int> labels;       // dense ids in [0, C), kUnlabeled if unknown
  std::vector<Split> split;      // per-sample split tag
  std::vector<int> label_map;    // dense id -> original label value
  int class_count = 0;
  Index length = 0;              // n
  Index variables = 1;           // d
  std::string name;

  Index count() const { return series.rows(); }

  bool has_labels() const {
    return std::any_of(labels.begin(), labels.end(), [](int y) { return y != kUnlabeled; });
  }

  /// Row-major view of sample i as [n, d].
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
  sample(Index i) const {
    return {series.row(i).data(), length, variables};
  }

  Dataset rows(const std::vector<Index>& indices) const {
    Dataset out;
    out.series.resize(static_cast<Index>(indices.size()), series.cols());
    out.labels.reserve(indices.size());
    out.split.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
      out.series.row(static_cast<Index>(k)) = series.row(indices[k]);
      out.labels.push_back(labels[static_cast<std::size_t>(indices[k])]);
      out.split.push_back(split[static_cast<std::size_t>(indices[k])]);
    }
    out.label_map = label_map;
    out.class_count = class_count;
    out.length = length;
    out.variables = variables;
    out.name = name;
    return out;
  }

  std::vector<Index> split_indices(Split which) const {
    std::vector<Index> out;
    for (Index i = 0; i < count(); ++i)
      if (split[static_cast<std::size_t>(i)] == which) out.push_back(i);
    return out;
  }
};

/// Fuses two datasets with identical geometry (train + test pooling).
inline Dataset fuse(const Dataset& a, const Dataset& b) {
  if (a.length != b.length || a.variables != b.variables)
    throw std::invalid_argument("fuse: incompatible series geometry");
  Dataset out = a;
  out.series.conservativeResize(a.count() + b.count(), a.series.cols());
  out.series.bottomRows(b.count()) = b.series;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.split.insert(out.split.end(), b.split.begin(), b.split.end());
  out.class_count = std::max(a.class_count, b.class_count);
  if (out.label_map.size() < static_cast<std::size_t>(out.class_count))
    out.label_map = b.label_map;
  return out;
}

// ---------------------------------------------------------------------------
// z-normalization

/// Standardizes one series in place, per variable, with the population
/// standard deviation. Constant variables (sigma below the floor) map to
/// zeros instead of propagating NaN.
inline void z_normalize_row(Eigen::Ref<Eigen::RowVectorXd> row, Index length, Index variables) {
  constexpr double kSigmaFloor = 1e-12;
  for (Index c = 0; c < variables; ++c) {
    double mean = 0;
    for (Index t = 0; t < length; ++t) mean += row[t * variables + c];
    mean /= static_cast<double>(length);
    double var = 0;
    for (Index t = 0; t < length; ++t) {
      const double d = row[t * variables + c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(length);
    const double sigma = std::sqrt(var);
    if (sigma < kSigmaFloor) {
      for (Index t = 0; t < length; ++t) row[t * variables + c] = 0.0;
    } else {
      for (Index t = 0; t < length; ++t) row[t * variables + c] = (row[t * variables + c] - mean) / sigma;
    }
  }
}

inline void z_normalize(Dataset& ds) {
  for (Index i = 0; i < ds.count(); ++i) {
    Eigen::RowVectorXd row = ds.series.row(i);
    z_normalize_row(row, ds.length, ds.variables);
    ds.series.row(i) = row;
  }
}

inline std::vector<double> z_normalize(const std::vector<double>& series) {
  Eigen::RowVectorXd row(static_cast<Index>(series.size()));
  for (Index i = 0; i < row.size(); ++i) row[i] = series[static_cast<std::size_t>(i)];
  z_normalize_row(row, row.size(), 1);
  return {row.data(), row.data() + row.size()};
}

// ---------------------------------------------------------------------------
// Synthetic sinusoids

/// Random sinusoids: per sample and variable, frequency eta ~ U(0,1) and
/// phase theta ~ U(-pi, pi); x_t = sin(2*pi*eta*t + theta), t = 0..n-1.
inline Dataset synth_sines(Index count, Index length, Index variables, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("synth_sines: count must be >= 1");
  Dataset ds;
  ds.length = length;
  ds.variables = variables;
  ds.series.resize(count, length * variables);
  ds.labels.assign(static_cast<std::size_t>(count), kUnlabeled);
  ds.split.assign(static_cast<std::size_t>(count), Split::kTrain);
  ds.name = "sines";
  constexpr double kPi = 3.14159265358979323846;
  Rng rng(seed);
  for (Index i = 0; i < count; ++i) {
    for (Index c = 0; c < variables; ++c) {
      const double eta = rng.uniform();
      const double theta = rng.uniform(-kPi, kPi);
      for (Index t = 0; t < length; ++t)
        ds.series(i, t * variables + c) = std::sin(2.0 * kPi * eta * static_cast<double>(t) + theta);
    }
  }
  return ds;
}

struct FrequencyBand {
  double lo;
  double hi;
};

/// Class-conditional sinusoids: class c draws its frequency from a disjoint
/// band. Labels attached; used as a desk-scale classification stand-in.
inline Dataset synth_multiclass(Index count_per_class, const std::vector<FrequencyBand>& classes,
                                Index length, Index variables, std::uint64_t seed) {
  if (classes.empty()) throw std::invalid_argument("synth_multiclass: no classes");
  for (std::size_t a = 0; a < classes.size(); ++a) {
    if (!(classes[a].lo < classes[a].hi))
      throw std::invalid_argument("synth_multiclass: empty band");
    for (std::size_t b = a + 1; b < classes.size(); ++b)
      if (classes[a].lo < classes[b].hi && classes[b].lo < classes[a].hi)
        throw std::invalid_argument("synth_multiclass: overlapping frequency bands");
  }
  const Index c_count = static_cast<Index>(classes.size());
  Dataset ds;
  ds.length = length;
  ds.variables = variables;
  ds.class_count = static_cast<int>(c_count);
  ds.series.resize(count_per_class * c_count, length * variables);
  ds.name = "multiclass";
  for (int c = 0; c < static_cast<int>(c_count); ++c) ds.label_map.push_back(c);
  constexpr double kPi = 3.14159265358979323846;
  Rng rng(seed);
  Index row = 0;
  for (Index k = 0; k < count_per_class; ++k) {
    for (Index c = 0; c < c_count; ++c) {
      for (Index v = 0; v < variables; ++v) {
        const double eta = rng.uniform(classes[static_cast<std::size_t>(c)].lo,
                                       classes[static_cast<std::size_t>(c)].hi);
        const double theta = rng.uniform(-kPi, kPi);
        for (Index t = 0; t < length; ++t)
          ds.series(row, t * variables + v) =
              std::sin(2.0 * kPi * eta * static_cast<double>(t) + theta);
      }
      ds.labels.push_back(static_cast<int>(c));
      ds.split.push_back(Split::kTrain);
      ++row;
    }
  }
  return ds;
}

inline std::vector<FrequencyBand> multiclass4_bands() {
  return {{0.05, 0.10}, {0.15, 0.20}, {0.25, 0.30}, {0.35, 0.40}};
}

// ---------------------------------------------------------------------------
// UCR text format: one sample per line, label first, delimited values

namespace detail {

inline char detect_delimiter(const std::string& line) {
  return line.find('\t') != std::string::npos ? '\t' : ',';
}

inline std::vector<double> parse_row(const std::string& line, char delim, Index line_no) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= line.size()) {
    std::size_t next = line.find(delim, pos);
    if (next == std::string::npos) next = line.size();
    const std::string field = line.substr(pos, next - pos);
    if (!field.empty()) {
      std::size_t used = 0;
      double v;
      try {
        v = std::stod(field, &used);
      } catch (const std::exception&) {
        throw std::runtime_error("ucr: non-numeric field '" + field + "' on line " +
                                 std::to_string(line_no));
      }
      while (used < field.size() && std::isspace(static_cast<unsigned char>(field[used]))) ++used;
      if (used != field.size())
        throw std::runtime_error("ucr: non-numeric field '" + field + "' on line " +
                                 std::to_string(line_no));
      out.push_back(v);
    }
    pos = next + 1;
    if (next == line.size()) break;
  }
  return out;
}

}  // namespace detail

struct UcrLoadOptions {
  char delimiter = 0;       // 0 = autodetect comma/tab
  Index variables = 1;      // row length must be label + n*variables
  bool renormalize = false; // opt-in; UCR files ship z-normalized
};

/// Reads one UCR-format file. Label values are densified through
/// `label_map` (first-seen order), which is shared across train/test loads.
inline Dataset load_ucr_file(const std::string& path, Split split, std::vector<int>& label_map,
                             const UcrLoadOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ucr: cannot open " + path);
  Dataset ds;
  ds.variables = options.variables;
  ds.name = path;
  std::vector<std::vector<double>> rows;
  std::vector<int> raw_labels;
  std::string line;
  Index line_no = 0;
  char delim = options.delimiter;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (delim == 0) delim = detail::detect_delimiter(line);
    std::vector<double> fields = detail::parse_row(line, delim, line_no);
    if (fields.size() < 2)
      throw std::runtime_error("ucr: line " + std::to_string(line_no) + " has no series values");
    const double label_value = fields[0];
    if (label_value != std::floor(label_value))
      throw std::runtime_error("ucr: non-integer label on line " + std::to_string(line_no));
    raw_labels.push_back(static_cast<int>(label_value));
    fields.erase(fields.begin());
    if (!rows.empty() && fields.size() != rows.front().size())
      throw std::runtime_error("ucr: ragged row on line " + std::to_string(line_no));
    rows.push_back(std::move(fields));
  }
  if (rows.empty()) throw std::runtime_error("ucr: " + path + " is empty");
  const Index width = static_cast<Index>(rows.front().size());
  if (width % options.variables != 0)
    throw std::runtime_error("ucr: row width " + std::to_string(width) +
                             " is not divisible by " + std::to_string(options.variables) +
                             " variables");
  ds.length = width / options.variables;
  ds.series.resize(static_cast<Index>(rows.size()), width);
  for (Index i = 0; i < ds.series.rows(); ++i)
    for (Index j = 0; j < width; ++j)
      ds.series(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];

  for (int raw : raw_labels) {
    auto it = std::find(label_map.begin(), label_map.end(), raw);
    int dense;
    if (it == label_map.end()) {
      dense = static_cast<int>(label_map.size());
      label_map.push_back(raw);
      if (split == Split::kTest)
        std::cerr << "warning: label " << raw << " unseen in training split; class count now "
                  << label_map.size() << "\n";
    } else {
      dense = static_cast<int>(it - label_map.begin());
    }
    ds.labels.push_back(dense);
  }
  ds.split.assign(static_cast<std::size_t>(ds.count()), split);
  ds.label_map = label_map;
  ds.class_count = static_cast<int>(label_map.size());
  if (options.renormalize) z_normalize(ds);
  return ds;
}

/// Default train/test pair with a shared label map.
inline std::pair<Dataset, Dataset> load_ucr(const std::string& train_path,
                                            const std::string& test_path,
                                            const UcrLoadOptions& options = {}) {
  std::vector<int> label_map;
  Dataset train = load_ucr_file(train_path, Split::kTrain, label_map, options);
  Dataset test = load_ucr_file(test_path, Split::kTest, label_map, options);
  train.label_map = label_map;
  train.class_count = static_cast<int>(label_map.size());
  test.label_map = label_map;
  test.class_count = static_cast<int>(label_map.size());
  return {std::move(train), std::move(test)};
}

/// Writes UCR text format (comma-delimited) at full round-trip precision.
/// Unlabeled samples are written with label 0.
inline void save_ucr_file(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("ucr: cannot write " + path);
  char buf[64];
  for (Index i = 0; i < ds.count(); ++i) {
    const int dense = ds.labels[static_cast<std::size_t>(i)];
    const int original =
        dense == kUnlabeled
            ? 0
            : (dense < static_cast<int>(ds.label_map.size()) ? ds.label_map[dense] : dense);
    out << original;
    for (Index j = 0; j < ds.series.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.series(i, j));
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("ucr: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Label-budget subsampling

/// Stratified label subsampling: keeps round(fraction * count_c) labels per
/// class, at least one each; everything else becomes unlabeled but stays in
/// the dataset.
inline Dataset subsample_labels(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw std::invalid_argument("subsample_labels: fraction must be in (0, 1]");
  if (!ds.has_labels()) throw std::invalid_argument("subsample_labels: dataset has no labels");
  Dataset out = ds;
  if (fraction == 1.0) return out;
  std::map<int, std::vector<Index>> by_class;
  for (Index i = 0; i < ds.count(); ++i) {
    const int y = ds.labels[static_cast<std::size_t>(i)];
    if (y != kUnlabeled && ds.split[static_cast<std::size_t>(i)] == Split::kTrain)
      by_class[y].push_back(i);
  }
  Rng rng(seed);
  for (auto& [label, indices] : by_class) {
    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(indices.size()))));
    rng.shuffle(indices.begin(), indices.end());
    std::vector<Index> dropped(indices.begin() + static_cast<std::ptrdiff_t>(
                                                     std::min(keep, indices.size())),
                               indices.end());
    for (Index i : dropped) out.labels[static_cast<std::size_t>(i)] = kUnlabeled;
  }
  return out;
}

}  // namespace tcgan
