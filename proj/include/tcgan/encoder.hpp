#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tcgan/data.hpp"
#include "tcgan/gan.hpp"
#include "tcgan/layers.hpp"
#include "tcgan/tensor.hpp"

namespace tcgan {

namespace detail {

template <class Scalar>
Tensor<Scalar> frozen_copy(const Tensor<Scalar>& t) {
  return Tensor<Scalar>::from_array(t.shape(), t.values());
}

}  // namespace detail

/// Representation encoder: the discriminator's four conv blocks, frozen in
/// inference mode, followed by maxpool(2, 1) and flatten. Immutable after
/// construction; encoding has no side effects.
template <class Scalar>
class Encoder {
 public:
  static constexpr Index kPoolWidth = 2;
  static constexpr Index kPoolStride = 1;

  Encoder() = default;

  explicit Encoder(const Discriminator<Scalar>& discriminator)
      : config_(discriminator.config()) {
    const Index feature_len = discriminator.feature_length();
    if (feature_len < kPoolWidth)
      throw std::invalid_argument(
          "encoder: conv stack output length " + std::to_string(feature_len) +
          " is shorter than the pooling window; series too short to encode");
    for (int i = 0; i < 4; ++i) {
      const auto& src = discriminator.convs()[static_cast<std::size_t>(i)];
      convs_[i].weights = detail::frozen_copy(src.weights);
      convs_[i].bias = detail::frozen_copy(src.bias);
      convs_[i].stride = src.stride;
      if (i > 0) {
        const auto& bn = discriminator.norms()[static_cast<std::size_t>(i - 1)];
        norms_[i - 1].gamma = detail::frozen_copy(bn.gamma);
        norms_[i - 1].beta = detail::frozen_copy(bn.beta);
        norms_[i - 1].running_mean = bn.running_mean;
        norms_[i - 1].running_var = bn.running_var;
        norms_[i - 1].momentum = bn.momentum;
        norms_[i - 1].epsilon = bn.epsilon;
        norms_[i - 1].mode = BatchNormMode::kInfer;
      }
    }
    pooled_length_ = (feature_len - kPoolWidth) / kPoolStride + 1;
    output_dim_ = pooled_length_ * config_.channel_widths[3];
  }

  /// x [B, n, d] -> representations [B, n_v].
  Tensor<Scalar> encode(const Tensor<Scalar>& x, bool normalize = false) const {
    if (x.rank() != 3 || x.dim(1) != config_.n || x.dim(2) != config_.d)
      throw std::invalid_argument("encoder: input must be [batch, " + std::to_string(config_.n) +
                                  ", " + std::to_string(config_.d) + "], got " +
                                  shape_string(x.shape()));
    NoGradScope<Scalar> no_grad;
    Tensor<Scalar> h = leaky_relu(conv1d(x, convs_[0]), Discriminator<Scalar>::kLeakySlope);
    for (int i = 1; i < 4; ++i)
      h = leaky_relu(batchnorm1d_infer(conv1d(h, convs_[i]), norms_[i - 1]),
                     Discriminator<Scalar>::kLeakySlope);
    h = maxpool1d(h, kPoolWidth, kPoolStride);
    h = flatten(h);
    if (normalize) h = normalized_rows(h);
    return h;
  }

  Index output_dim() const { return output_dim_; }
  Index input_length() const { return config_.n; }
  Index input_variables() const { return config_.d; }
  const GanConfig& config() const { return config_; }

 private:
  static Tensor<Scalar> normalized_rows(const Tensor<Scalar>& h) {
    ArrayX<Scalar> v = h.values();
    const Index rows = h.dim(0), cols = h.dim(1);
    for (Index r = 0; r < rows; ++r) {
      auto seg = v.segment(r * cols, cols);
      const Scalar norm = std::sqrt(seg.square().sum());
      if (norm > Scalar(0)) seg /= norm;
    }
    return Tensor<Scalar>::from_array(h.shape(), std::move(v));
  }

  GanConfig config_;
  std::array<Conv1DParams<Scalar>, 4> convs_;
  std::array<BatchNorm1DParams<Scalar>, 3> norms_;
  Index pooled_length_ = 0;
  Index output_dim_ = 0;
};

template <class Scalar>
Encoder<Scalar> build_encoder(const Discriminator<Scalar>& discriminator) {
  return Encoder<Scalar>(discriminator);
}

/// Encodes a whole dataset in chunks; returns [N, n_v] in double.
template <class Scalar>
Eigen::MatrixXd encode_dataset(const Encoder<Scalar>& encoder, const Dataset& data,
                               bool normalize = false, Index chunk = 256) {
  if (data.length != encoder.input_length() || data.variables != encoder.input_variables())
    throw std::invalid_argument("encode_dataset: dataset geometry [n=" +
                                std::to_string(data.length) + ",d=" +
                                std::to_string(data.variables) +
                                "] does not match encoder input [n=" +
                                std::to_string(encoder.input_length()) + ",d=" +
                                std::to_string(encoder.input_variables()) + "]");
  Eigen::MatrixXd out(data.count(), encoder.output_dim());
  std::vector<Index> order(static_cast<std::size_t>(data.count()));
  for (Index i = 0; i < data.count(); ++i) order[static_cast<std::size_t>(i)] = i;
  Index done = 0;
  while (done < data.count()) {
    const Index take = std::min(chunk, data.count() - done);
    Tensor<Scalar> batch = batch_from_rows<Scalar>(data, order, done, take);
    Tensor<Scalar> reps = encoder.encode(batch, normalize);
    for (Index r = 0; r < take; ++r)
      for (Index c = 0; c < encoder.output_dim(); ++c)
        out(done + r, c) = static_cast<double>(reps.values()[r * encoder.output_dim() + c]);
    done += take;
  }
  return out;
}

/// CSV export: id, label (empty when unknown), then feature values.
inline void save_representations(const std::string& path, const Eigen::MatrixXd& reps,
                                 const std::vector<int>& labels) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("representations: cannot write " + path);
  out << "id,label";
  for (Index c = 0; c < reps.cols(); ++c) out << ",v" << c;
  out << '\n';
  char buf[64];
  for (Index i = 0; i < reps.rows(); ++i) {
    out << i << ',';
    if (i < static_cast<Index>(labels.size()) && labels[static_cast<std::size_t>(i)] != kUnlabeled)
      out << labels[static_cast<std::size_t>(i)];
    for (Index c = 0; c < reps.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", reps(i, c));
      out << ',' << buf;
    }
    out << '\n';
  }
}

}  // namespace tcgan
