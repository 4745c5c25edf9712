#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "tcgan/data.hpp"
#include "tcgan/gan.hpp"
#include "tcgan/layers.hpp"
#include "tcgan/metrics.hpp"
#include "tcgan/optim.hpp"
#include "tcgan/rng.hpp"
#include "tcgan/tensor.hpp"

namespace tcgan {

// ---------------------------------------------------------------------------
// Linear classifiers over representation vectors

enum class ClassifierLoss { kSoftmaxCrossEntropy, kHingeOneVsRest };

/// Linear head: logits = x W + b. Covers the softmax classifier and the
/// hinge-loss one-vs-rest variant.
struct LinearClassifier {
  Eigen::MatrixXd weights;  // [dim, classes]
  Eigen::RowVectorXd bias;  // [classes]
  ClassifierLoss loss = ClassifierLoss::kSoftmaxCrossEntropy;
  double l2 = 0.0;

  Eigen::Index dim() const { return weights.rows(); }
  Eigen::Index classes() const { return weights.cols(); }
};

struct ClassifierOptions {
  Index epochs = 100;
  double learning_rate = 2e-4;
  Index batch = 16;
  double l2 = 0.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline void check_training_inputs(const Eigen::MatrixXd& reps, const std::vector<int>& labels,
                                  int classes) {
  if (reps.rows() != static_cast<Eigen::Index>(labels.size()))
    throw std::invalid_argument("classifier: representation/label count mismatch");
  if (reps.rows() < classes)
    throw std::invalid_argument("classifier: fewer samples than classes");
  std::set<int> seen;
  for (int y : labels) {
    if (y < 0 || y >= classes)
      throw std::invalid_argument("classifier: label " + std::to_string(y) +
                                  " outside [0, " + std::to_string(classes) + ")");
    seen.insert(y);
  }
  if (static_cast<int>(seen.size()) < classes)
    std::cerr << "warning: only " << seen.size() << " of " << classes
              << " classes present in training labels\n";
}

}  // namespace detail

/// Softmax cross-entropy head trained with Adam over shuffled mini-batches.
inline LinearClassifier train_softmax(const Eigen::MatrixXd& reps, const std::vector<int>& labels,
                                      int classes, const ClassifierOptions& options = {}) {
  detail::check_training_inputs(reps, labels, classes);
  const Index n = reps.rows();
  const Index dim = reps.cols();

  Rng init_rng(options.seed, 11);
  Rng shuffle_rng(options.seed, 12);
  DenseParams<double> head = make_dense_params<double>(dim, classes, init_rng, 0.02);
  Adam<double> adam({head.weights, head.bias},
                    AdamConfig{options.learning_rate, 0.9, 0.999, 1e-8});

  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  const Index batch = std::min(options.batch, n);

  for (Index epoch = 0; epoch < options.epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    for (Index first = 0; first + batch <= n; first += batch) {
      ArrayX<double> values(batch * dim);
      std::vector<int> batch_labels(static_cast<std::size_t>(batch));
      for (Index r = 0; r < batch; ++r) {
        const Index src = order[static_cast<std::size_t>(first + r)];
        for (Index c = 0; c < dim; ++c) values[r * dim + c] = reps(src, c);
        batch_labels[static_cast<std::size_t>(r)] = labels[static_cast<std::size_t>(src)];
      }
      Tensor<double> x = Tensor<double>::from_array({batch, dim}, std::move(values));
      Tape<double> tape;
      TapeScope<double> scope(tape);
      Tensor<double> loss = softmax_cross_entropy(dense(x, head), batch_labels);
      if (options.l2 > 0.0)
        loss = add(loss, mul(sum(mul(head.weights, head.weights)), options.l2));
      adam.zero_grad();
      tape.backward(loss);
      adam.step();
    }
  }

  LinearClassifier clf;
  clf.loss = ClassifierLoss::kSoftmaxCrossEntropy;
  clf.l2 = options.l2;
  clf.weights = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                               Eigen::RowMajor>>(head.weights.values().data(),
                                                                 dim, classes);
  clf.bias = Eigen::Map<const Eigen::RowVectorXd>(head.bias.values().data(), classes);
  return clf;
}

/// One-vs-rest linear hinge loss trained by stochastic subgradient descent;
/// the linear-SVM analogue.
inline LinearClassifier train_hinge(const Eigen::MatrixXd& reps, const std::vector<int>& labels,
                                    int classes, const ClassifierOptions& options = {}) {
  detail::check_training_inputs(reps, labels, classes);
  const Index n = reps.rows();
  const Index dim = reps.cols();
  LinearClassifier clf;
  clf.loss = ClassifierLoss::kHingeOneVsRest;
  clf.l2 = options.l2;
  clf.weights = Eigen::MatrixXd::Zero(dim, classes);
  clf.bias = Eigen::RowVectorXd::Zero(classes);

  Rng shuffle_rng(options.seed, 13);
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  for (Index epoch = 0; epoch < options.epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    for (Index k = 0; k < n; ++k) {
      const Index i = order[static_cast<std::size_t>(k)];
      const Eigen::RowVectorXd x = reps.row(i);
      const int y = labels[static_cast<std::size_t>(i)];
      const Eigen::RowVectorXd margins = x * clf.weights + clf.bias;
      for (int c = 0; c < classes; ++c) {
        const double target = c == y ? 1.0 : -1.0;
        if (target * margins[c] < 1.0) {
          clf.weights.col(c) += options.learning_rate * target * x.transpose();
          clf.bias[c] += options.learning_rate * target;
        }
        if (options.l2 > 0.0)
          clf.weights.col(c) *= 1.0 - options.learning_rate * options.l2;
      }
    }
  }
  return clf;
}

inline Eigen::MatrixXd decision_values(const LinearClassifier& clf, const Eigen::MatrixXd& reps) {
  if (reps.cols() != clf.dim())
    throw std::invalid_argument("classifier: representation dim " + std::to_string(reps.cols()) +
                                " does not match model dim " + std::to_string(clf.dim()));
  Eigen::MatrixXd logits = reps * clf.weights;
  logits.rowwise() += clf.bias;
  return logits;
}

/// Argmax of the logits; ties break to the lowest class index.
inline std::vector<int> predict(const LinearClassifier& clf, const Eigen::MatrixXd& reps) {
  const Eigen::MatrixXd logits = decision_values(clf, reps);
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < logits.cols(); ++c)
      if (logits(i, c) > logits(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

/// Row-stochastic softmax probabilities.
inline Eigen::MatrixXd predict_proba(const LinearClassifier& clf, const Eigen::MatrixXd& reps) {
  Eigen::MatrixXd logits = decision_values(clf, reps);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double hi = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - hi).exp();
    logits.row(i) /= logits.row(i).sum();
  }
  return logits;
}

// ---------------------------------------------------------------------------
// Supervised baseline: discriminator conv stack + softmax output layer

/// The discriminator architecture with its sigmoid output layer replaced by
/// a C-way softmax head. Trained from scratch it is the fully supervised
/// baseline; left at its random initialization it is the random baseline.
template <class Scalar>
class SupervisedNet {
 public:
  SupervisedNet() = default;

  SupervisedNet(const GanConfig& config, int classes, Rng& rng)
      : backbone_(config, rng), classes_(classes) {
    const Index flat = backbone_.feature_length() * backbone_.feature_channels();
    head_ = make_dense_params<Scalar>(flat, classes, rng, static_cast<Scalar>(config.init_std));
  }

  Tensor<Scalar> logits(const Tensor<Scalar>& x) {
    return dense(flatten(backbone_.features(x)), head_);
  }

  void set_mode(BatchNormMode mode) { backbone_.set_mode(mode); }

  std::vector<Tensor<Scalar>> trainable_params() const {
    std::vector<Tensor<Scalar>> out = backbone_.trainable_params();
    out.resize(out.size() - 2);  // drop the sigmoid head's dense params
    out.push_back(head_.weights);
    out.push_back(head_.bias);
    return out;
  }

  Discriminator<Scalar>& backbone() { return backbone_; }
  const Discriminator<Scalar>& backbone() const { return backbone_; }
  int classes() const { return classes_; }

  std::vector<int> predict(const Dataset& data, const std::vector<Index>& rows) {
    NoGradScope<Scalar> no_grad;
    set_mode(BatchNormMode::kInfer);
    std::vector<int> out;
    out.reserve(rows.size());
    const Index chunk = 256;
    for (std::size_t first = 0; first < rows.size(); first += chunk) {
      const Index take = std::min<Index>(chunk, static_cast<Index>(rows.size() - first));
      std::vector<Index> slice_rows(rows.begin() + static_cast<std::ptrdiff_t>(first),
                                    rows.begin() + static_cast<std::ptrdiff_t>(first) + take);
      Tensor<Scalar> x = batch_from_rows<Scalar>(data, slice_rows, 0, take);
      Tensor<Scalar> z = logits(x);
      for (Index r = 0; r < take; ++r) {
        int best = 0;
        for (int c = 1; c < classes_; ++c)
          if (z.values()[r * classes_ + c] > z.values()[r * classes_ + best]) best = c;
        out.push_back(best);
      }
    }
    return out;
  }

 private:
  Discriminator<Scalar> backbone_;
  DenseParams<Scalar> head_;
  int classes_ = 0;
};

template <class Scalar>
SupervisedNet<Scalar> build_supervised_head(const GanConfig& config, int classes,
                                            std::uint64_t seed) {
  Rng rng(seed, 21);
  return SupervisedNet<Scalar>(config, classes, rng);
}

/// End-to-end supervised training (cross-entropy, Adam 0.9/0.999).
template <class Scalar>
void train_supervised(SupervisedNet<Scalar>& net, const Dataset& data,
                      const std::vector<Index>& rows, const ClassifierOptions& options) {
  std::vector<Index> labeled;
  for (Index i : rows)
    if (data.labels[static_cast<std::size_t>(i)] != kUnlabeled) labeled.push_back(i);
  if (labeled.empty()) throw std::invalid_argument("train_supervised: no labeled samples");

  net.set_mode(BatchNormMode::kTrain);
  Adam<Scalar> adam(net.trainable_params(),
                    AdamConfig{options.learning_rate, 0.9, 0.999, 1e-8});
  Rng shuffle_rng(options.seed, 22);
  const Index n = static_cast<Index>(labeled.size());
  const Index batch = std::max<Index>(2, std::min(options.batch, n));

  for (Index epoch = 0; epoch < options.epochs; ++epoch) {
    shuffle_rng.shuffle(labeled.begin(), labeled.end());
    for (Index first = 0; first + batch <= n; first += batch) {
      std::vector<Index> batch_rows(labeled.begin() + static_cast<std::ptrdiff_t>(first),
                                    labeled.begin() + static_cast<std::ptrdiff_t>(first + batch));
      Tensor<Scalar> x = batch_from_rows<Scalar>(data, batch_rows, 0, batch);
      std::vector<int> y;
      y.reserve(batch_rows.size());
      for (Index i : batch_rows) y.push_back(data.labels[static_cast<std::size_t>(i)]);
      Tape<Scalar> tape;
      TapeScope<Scalar> scope(tape);
      Tensor<Scalar> loss = softmax_cross_entropy(net.logits(x), y);
      adam.zero_grad();
      tape.backward(loss);
      adam.step();
    }
  }
}

// ---------------------------------------------------------------------------
// k-means with k-means++ initialization

struct KMeansModel {
  Eigen::MatrixXd centroids;  // [k, dim]
  double inertia = 0.0;
  int k = 0;
};

struct KMeansOptions {
  int n_init = 10;
  int max_iter = 300;
  double tol = 1e-4;
  std::uint64_t seed = 0;
};

namespace detail {

inline Index nearest_centroid(const Eigen::RowVectorXd& point, const Eigen::MatrixXd& centroids,
                              double* distance_sq = nullptr) {
  Index best = 0;
  double best_d = (point - centroids.row(0)).squaredNorm();
  for (Index c = 1; c < centroids.rows(); ++c) {
    const double d = (point - centroids.row(c)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (distance_sq) *distance_sq = best_d;
  return best;
}

inline Eigen::MatrixXd kmeans_plus_plus(const Eigen::MatrixXd& points, int k, Rng& rng) {
  const Index n = points.rows();
  Eigen::MatrixXd centroids(k, points.cols());
  centroids.row(0) = points.row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
  Eigen::VectorXd d2 = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::max());
  for (int c = 1; c < k; ++c) {
    for (Index i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], (points.row(i) - centroids.row(c - 1)).squaredNorm());
    const double total = d2.sum();
    Index chosen = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double cum = 0.0;
      for (Index i = 0; i < n; ++i) {
        cum += d2[i];
        if (cum >= target) {
          chosen = i;
          break;
        }
        chosen = i;
      }
    } else {
      chosen = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    centroids.row(c) = points.row(chosen);
  }
  return centroids;
}

struct LloydResult {
  Eigen::MatrixXd centroids;
  std::vector<int> assignment;
  double inertia;
};

inline LloydResult lloyd(const Eigen::MatrixXd& points, Eigen::MatrixXd centroids, int max_iter,
                         double tol, std::vector<double>* inertia_trace = nullptr) {
  const Index n = points.rows();
  const int k = static_cast<int>(centroids.rows());
  std::vector<int> assignment(static_cast<std::size_t>(n), 0);
  double inertia = 0.0;
  for (int iter = 0; iter < max_iter; ++iter) {
    inertia = 0.0;
    for (Index i = 0; i < n; ++i) {
      double d;
      assignment[static_cast<std::size_t>(i)] =
          static_cast<int>(nearest_centroid(points.row(i), centroids, &d));
      inertia += d;
    }
    if (inertia_trace) inertia_trace->push_back(inertia);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    for (Index i = 0; i < n; ++i) {
      sums.row(assignment[static_cast<std::size_t>(i)]) += points.row(i);
      counts[assignment[static_cast<std::size_t>(i)]] += 1.0;
    }
    // empty cluster: re-seed at the point farthest from its centroid
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0.0) continue;
      Index farthest = 0;
      double far_d = -1.0;
      for (Index i = 0; i < n; ++i) {
        const double d =
            (points.row(i) - centroids.row(assignment[static_cast<std::size_t>(i)])).squaredNorm();
        if (d > far_d) {
          far_d = d;
          farthest = i;
        }
      }
      sums.row(c) = points.row(farthest);
      counts[c] = 1.0;
      assignment[static_cast<std::size_t>(farthest)] = c;
    }
    Eigen::MatrixXd updated(k, points.cols());
    for (int c = 0; c < k; ++c) updated.row(c) = sums.row(c) / counts[c];
    const double shift = (updated - centroids).norm();
    centroids = std::move(updated);
    if (shift < tol) break;
  }
  // final assignment and inertia against the converged centroids
  inertia = 0.0;
  for (Index i = 0; i < n; ++i) {
    double d;
    assignment[static_cast<std::size_t>(i)] =
        static_cast<int>(nearest_centroid(points.row(i), centroids, &d));
    inertia += d;
  }
  return {std::move(centroids), std::move(assignment), inertia};
}

}  // namespace detail

/// k-means++ seeding, Lloyd iterations until the centroid shift (Frobenius
/// norm) drops below tol, best of n_init restarts by inertia (ties keep the
/// earliest restart).
inline KMeansModel kmeans_fit(const Eigen::MatrixXd& points, int k,
                              const KMeansOptions& options = {}) {
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (points.rows() < k)
    throw std::invalid_argument("kmeans: " + std::to_string(points.rows()) +
                                " points for k=" + std::to_string(k));
  KMeansModel best;
  best.inertia = std::numeric_limits<double>::max();
  for (int restart = 0; restart < options.n_init; ++restart) {
    Rng rng(options.seed, 0x6b6d0000ULL + static_cast<std::uint64_t>(restart));
    Eigen::MatrixXd seeds = detail::kmeans_plus_plus(points, k, rng);
    detail::LloydResult run = detail::lloyd(points, std::move(seeds), options.max_iter,
                                            options.tol);
    if (run.inertia < best.inertia) {
      best.centroids = std::move(run.centroids);
      best.inertia = run.inertia;
      best.k = k;
    }
  }
  return best;
}

/// Assigns, then scores the assignment against the true labels with NMI.
inline double cluster_eval(const KMeansModel& model, const Eigen::MatrixXd& reps,
                           const std::vector<int>& truth);

inline std::vector<int> kmeans_predict(const KMeansModel& model, const Eigen::MatrixXd& points) {
  if (points.cols() != model.centroids.cols())
    throw std::invalid_argument("kmeans: dimension mismatch");
  std::vector<int> out(static_cast<std::size_t>(points.rows()));
  for (Index i = 0; i < points.rows(); ++i)
    out[static_cast<std::size_t>(i)] =
        static_cast<int>(detail::nearest_centroid(points.row(i), model.centroids));
  return out;
}

inline double cluster_eval(const KMeansModel& model, const Eigen::MatrixXd& reps,
                           const std::vector<int>& truth) {
  return nmi(kmeans_predict(model, reps), truth);
}

}  // namespace tcgan
