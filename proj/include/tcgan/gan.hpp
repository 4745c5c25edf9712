#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tcgan/data.hpp"
#include "tcgan/layers.hpp"
#include "tcgan/optim.hpp"
#include "tcgan/rng.hpp"
#include "tcgan/tensor.hpp"

namespace tcgan {

struct GanConfig {
  Index n = 100;        // series length
  Index d = 1;          // variables per timestep
  Index n_z = 100;      // noise vector length, prior Uniform(-1, 1)
  Index m = 16;         // batch size
  Index n_epoch = 300;
  double delta = 0.75;  // discriminator-update accuracy threshold
  double alpha = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  std::array<Index, 4> channel_widths{32, 64, 128, 256};  // discriminator convs
  Index kernel_w = 10;
  Index stride = 2;
  double init_std = 0.02;
  std::uint64_t seed = 0;

  Index upsample_factor() const { return stride * stride * stride * stride; }
  Index base_length() const { return (n + upsample_factor() - 1) / upsample_factor(); }

  void validate() const {
    if (n < 1) throw std::invalid_argument("gan config: series length must be >= 1");
    if (d < 1) throw std::invalid_argument("gan config: variable count must be >= 1");
    if (n_z < 1) throw std::invalid_argument("gan config: noise length must be >= 1");
    if (m < 1) throw std::invalid_argument("gan config: batch size must be >= 1");
    if (n_epoch < 0) throw std::invalid_argument("gan config: epoch count must be >= 0");
    if (!(delta > 0.5 && delta < 1.0))
      throw std::invalid_argument("gan config: delta must lie in (0.5, 1.0)");
    if (kernel_w < 1 || stride < 1)
      throw std::invalid_argument("gan config: kernel_w and stride must be >= 1");
    for (Index c : channel_widths)
      if (c < 1) throw std::invalid_argument("gan config: channel widths must be positive");
  }
};

// ---------------------------------------------------------------------------
// Generator: Dense+ReLU -> [FConv-BN-ReLU] x3 -> FConv, centered crop to n

template <class Scalar>
class Generator {
 public:
  Generator() = default;

  Generator(const GanConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const Index base_channels = config_.channel_widths[3];
    const Index base_len = config_.base_length();
    const Scalar std = static_cast<Scalar>(config_.init_std);
    proj_ = make_dense_params<Scalar>(config_.n_z, base_len * base_channels, rng, std);
    const std::array<Index, 5> widths{base_channels, config_.channel_widths[2],
                                      config_.channel_widths[1], config_.channel_widths[0],
                                      config_.d};
    for (int i = 0; i < 4; ++i) {
      deconvs_[i] = make_conv1d_params<Scalar>(config_.kernel_w, widths[i], widths[i + 1],
                                               config_.stride, rng, std);
      if (i < 3) norms_[i] = make_batchnorm1d_params<Scalar>(widths[i + 1]);
    }
  }

  /// z [B, n_z] -> series [B, n, d].
  Tensor<Scalar> forward(const Tensor<Scalar>& z) {
    if (z.rank() != 2 || z.dim(1) != config_.n_z)
      throw std::invalid_argument("generator: noise must be [batch, " +
                                  std::to_string(config_.n_z) + "]");
    const Index base_len = config_.base_length();
    const Index base_channels = config_.channel_widths[3];
    Tensor<Scalar> h = relu(dense(z, proj_));
    h = reshape(h, {z.dim(0), base_len, base_channels});
    for (int i = 0; i < 3; ++i)
      h = relu(batchnorm1d(conv1d_transpose(h, deconvs_[i]), norms_[i]));
    h = conv1d_transpose(h, deconvs_[3]);
    const Index full = base_len * config_.upsample_factor();
    if (full != config_.n) h = slice(h, 1, (full - config_.n) / 2, config_.n);
    return h;
  }

  void set_mode(BatchNormMode mode) {
    for (auto& bn : norms_) bn.mode = mode;
  }

  std::vector<Tensor<Scalar>> trainable_params() const {
    std::vector<Tensor<Scalar>> out{proj_.weights, proj_.bias};
    for (int i = 0; i < 4; ++i) {
      out.push_back(deconvs_[i].weights);
      out.push_back(deconvs_[i].bias);
      if (i < 3) {
        out.push_back(norms_[i].gamma);
        out.push_back(norms_[i].beta);
      }
    }
    return out;
  }

  const GanConfig& config() const { return config_; }
  DenseParams<Scalar>& projection() { return proj_; }
  std::array<Conv1DParams<Scalar>, 4>& deconvs() { return deconvs_; }
  std::array<BatchNorm1DParams<Scalar>, 3>& norms() { return norms_; }
  const DenseParams<Scalar>& projection() const { return proj_; }
  const std::array<Conv1DParams<Scalar>, 4>& deconvs() const { return deconvs_; }
  const std::array<BatchNorm1DParams<Scalar>, 3>& norms() const { return norms_; }

 private:
  GanConfig config_;
  DenseParams<Scalar> proj_;
  std::array<Conv1DParams<Scalar>, 4> deconvs_;
  std::array<BatchNorm1DParams<Scalar>, 3> norms_;
};

// ---------------------------------------------------------------------------
// Discriminator: Conv-LeakyReLU -> [Conv-BN-LeakyReLU] x3 -> Dense -> Sigmoid

template <class Scalar>
class Discriminator {
 public:
  static constexpr Scalar kLeakySlope = Scalar(0.2);

  Discriminator() = default;

  Discriminator(const GanConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const Scalar std = static_cast<Scalar>(config_.init_std);
    const std::array<Index, 5> widths{config_.d, config_.channel_widths[0],
                                      config_.channel_widths[1], config_.channel_widths[2],
                                      config_.channel_widths[3]};
    Index len = config_.n;
    for (int i = 0; i < 4; ++i) {
      convs_[i] = make_conv1d_params<Scalar>(config_.kernel_w, widths[i], widths[i + 1],
                                             config_.stride, rng, std);
      if (i > 0) norms_[i - 1] = make_batchnorm1d_params<Scalar>(widths[i + 1]);
      len = conv1d_output_length(len, config_.stride);
    }
    feature_length_ = len;
    head_ = make_dense_params<Scalar>(len * config_.channel_widths[3], 1, rng, std);
  }

  /// Conv stack only: x [B, n, d] -> feature maps [B, L4, C4].
  Tensor<Scalar> features(const Tensor<Scalar>& x) {
    if (x.rank() != 3 || x.dim(1) != config_.n || x.dim(2) != config_.d)
      throw std::invalid_argument("discriminator: input must be [batch, " +
                                  std::to_string(config_.n) + ", " + std::to_string(config_.d) +
                                  "], got " + shape_string(x.shape()));
    Tensor<Scalar> h = leaky_relu(conv1d(x, convs_[0]), kLeakySlope);
    for (int i = 1; i < 4; ++i)
      h = leaky_relu(batchnorm1d(conv1d(h, convs_[i]), norms_[i - 1]), kLeakySlope);
    return h;
  }

  /// Full forward: x [B, n, d] -> p_real [B] in (0, 1).
  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    Tensor<Scalar> h = features(x);
    h = dense(flatten(h), head_);
    h = sigmoid(h);
    return reshape(h, {x.dim(0)});
  }

  void set_mode(BatchNormMode mode) {
    for (auto& bn : norms_) bn.mode = mode;
  }

  std::vector<Tensor<Scalar>> trainable_params() const {
    std::vector<Tensor<Scalar>> out;
    for (int i = 0; i < 4; ++i) {
      out.push_back(convs_[i].weights);
      out.push_back(convs_[i].bias);
      if (i > 0) {
        out.push_back(norms_[i - 1].gamma);
        out.push_back(norms_[i - 1].beta);
      }
    }
    out.push_back(head_.weights);
    out.push_back(head_.bias);
    return out;
  }

  Index feature_length() const { return feature_length_; }
  Index feature_channels() const { return config_.channel_widths[3]; }
  const GanConfig& config() const { return config_; }
  std::array<Conv1DParams<Scalar>, 4>& convs() { return convs_; }
  std::array<BatchNorm1DParams<Scalar>, 3>& norms() { return norms_; }
  DenseParams<Scalar>& head() { return head_; }
  const std::array<Conv1DParams<Scalar>, 4>& convs() const { return convs_; }
  const std::array<BatchNorm1DParams<Scalar>, 3>& norms() const { return norms_; }
  const DenseParams<Scalar>& head() const { return head_; }

 private:
  GanConfig config_;
  std::array<Conv1DParams<Scalar>, 4> convs_;
  std::array<BatchNorm1DParams<Scalar>, 3> norms_;
  DenseParams<Scalar> head_;
  Index feature_length_ = 0;
};

template <class Scalar>
Generator<Scalar> build_generator(const GanConfig& config, Rng& rng) {
  return Generator<Scalar>(config, rng);
}

template <class Scalar>
Discriminator<Scalar> build_discriminator(const GanConfig& config, Rng& rng) {
  return Discriminator<Scalar>(config, rng);
}

// ---------------------------------------------------------------------------
// Losses and batch accuracy

namespace detail {
template <class Scalar>
constexpr Scalar kProbFloor = Scalar(1e-7);
}

/// -(1/m) sum[log(D(x)) + log(1 - D(G(z)))], probabilities clamped to
/// [1e-7, 1 - 1e-7] before the log.
template <class Scalar>
Tensor<Scalar> d_loss(const Tensor<Scalar>& d_real, const Tensor<Scalar>& d_fake) {
  const Scalar lo = detail::kProbFloor<Scalar>;
  const Scalar hi = Scalar(1) - lo;
  Tensor<Scalar> real_term = mean(log(clamp(d_real, lo, hi)));
  Tensor<Scalar> fake_term = mean(log(clamp(sub(Scalar(1), d_fake), lo, hi)));
  return neg(add(real_term, fake_term));
}

/// Non-saturating generator loss: -(1/m) sum log(D(G(z))).
template <class Scalar>
Tensor<Scalar> g_loss(const Tensor<Scalar>& d_fake) {
  const Scalar lo = detail::kProbFloor<Scalar>;
  return neg(mean(log(clamp(d_fake, lo, Scalar(1) - lo))));
}

/// Fraction of correct discriminator decisions at threshold 0.5; a
/// prediction equal to 0.5 counts as incorrect.
template <class Scalar>
double batch_accuracy(const ArrayX<Scalar>& d_real, const ArrayX<Scalar>& d_fake) {
  Index correct = 0;
  for (Index i = 0; i < d_real.size(); ++i)
    if (d_real[i] > Scalar(0.5)) ++correct;
  for (Index i = 0; i < d_fake.size(); ++i)
    if (d_fake[i] < Scalar(0.5)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(d_real.size() + d_fake.size());
}

template <class Scalar>
double batch_accuracy(const Tensor<Scalar>& d_real, const Tensor<Scalar>& d_fake) {
  return batch_accuracy(d_real.values(), d_fake.values());
}

// ---------------------------------------------------------------------------
// Training

struct BatchLog {
  Index epoch;
  Index batch;
  double d_loss;
  double g_loss;
  double acc_last;  // value after this batch
  bool d_updated;
};

struct TrainState {
  double acc_last = 0;
  Index epoch = 0;
  Index batch = 0;
  std::vector<BatchLog> log;
  double seconds_total = 0;
  double seconds_per_epoch = 0;
};

template <class Scalar>
struct TrainResult {
  Generator<Scalar> generator;
  Discriminator<Scalar> discriminator;
  TrainState state;
};

template <class Scalar>
Tensor<Scalar> sample_noise(Index count, Index n_z, Rng& rng) {
  ArrayX<Scalar> z(count * n_z);
  for (Index i = 0; i < z.size(); ++i) z[i] = static_cast<Scalar>(rng.uniform(-1.0, 1.0));
  return Tensor<Scalar>::from_array({count, n_z}, std::move(z));
}

template <class Scalar>
Tensor<Scalar> batch_from_rows(const Dataset& data, const std::vector<Index>& order, Index first,
                               Index count) {
  const Index width = data.series.cols();
  ArrayX<Scalar> v(count * width);
  for (Index r = 0; r < count; ++r) {
    const Index src = order[static_cast<std::size_t>(first + r)];
    for (Index j = 0; j < width; ++j)
      v[r * width + j] = static_cast<Scalar>(data.series(src, j));
  }
  return Tensor<Scalar>::from_array({count, data.length, data.variables}, std::move(v));
}

template <class Scalar>
using EpochHook =
    std::function<void(Index epoch, Generator<Scalar>&, Discriminator<Scalar>&, TrainState&)>;

/// Adversarial training with delta-gated discriminator updates. Per batch:
/// fresh noise and a shuffled real batch; D updates only while its
/// last-batch accuracy stays at or below delta; G always updates on the
/// non-saturating loss; accuracy is recomputed from the outputs produced
/// for this batch's losses (no extra forward pass).
template <class Scalar>
TrainResult<Scalar> train_gan(const Dataset& data, const GanConfig& config,
                              const EpochHook<Scalar>& epoch_hook = {}) {
  config.validate();
  const Index sample_count = data.count();
  if (sample_count < config.m)
    throw std::invalid_argument("train_gan: dataset has " + std::to_string(sample_count) +
                                " samples, batch size is " + std::to_string(config.m));
  if (data.length != config.n || data.variables != config.d)
    throw std::invalid_argument("train_gan: dataset geometry does not match config");

  Rng weight_rng(config.seed, 1);
  Rng noise_rng(config.seed, 2);
  Rng shuffle_rng(config.seed, 3);

  TrainResult<Scalar> result{Generator<Scalar>(config, weight_rng),
                             Discriminator<Scalar>(config, weight_rng), TrainState{}};
  Generator<Scalar>& gen = result.generator;
  Discriminator<Scalar>& dis = result.discriminator;
  gen.set_mode(BatchNormMode::kTrain);
  dis.set_mode(BatchNormMode::kTrain);

  const AdamConfig adam_cfg{config.alpha, config.beta1, config.beta2, 1e-8};
  Adam<Scalar> adam_g(gen.trainable_params(), adam_cfg);
  Adam<Scalar> adam_d(dis.trainable_params(), adam_cfg);

  TrainState& state = result.state;
  state.acc_last = config.delta;
  const Index n_batch = sample_count / config.m;

  std::vector<Index> order(static_cast<std::size_t>(sample_count));
  for (Index i = 0; i < sample_count; ++i) order[static_cast<std::size_t>(i)] = i;

  const auto t_start = std::chrono::steady_clock::now();
  for (Index epoch = 0; epoch < config.n_epoch; ++epoch) {
    state.epoch = epoch;
    shuffle_rng.shuffle(order.begin(), order.end());
    for (Index batch = 0; batch < n_batch; ++batch) {
      state.batch = batch;
      Tensor<Scalar> real = batch_from_rows<Scalar>(data, order, batch * config.m, config.m);
      Tensor<Scalar> noise = sample_noise<Scalar>(config.m, config.n_z, noise_rng);

      Tape<Scalar> tape_g;
      Tensor<Scalar> fake;
      {
        TapeScope<Scalar> scope(tape_g);
        fake = gen.forward(noise);
      }

      const bool update_d = state.acc_last <= config.delta;
      double d_loss_value;
      Tensor<Scalar> d_real;
      {
        Tape<Scalar> tape_d;
        TapeScope<Scalar> scope(tape_d);
        d_real = dis.forward(real);
        Tensor<Scalar> d_fake = dis.forward(detach(fake));
        Tensor<Scalar> loss_d = d_loss(d_real, d_fake);
        d_loss_value = static_cast<double>(loss_d.value());
        if (update_d) {
          adam_d.zero_grad();
          tape_d.backward(loss_d);
          adam_d.step();
        }
      }

      double g_loss_value;
      Tensor<Scalar> d_fake_after;
      {
        TapeScope<Scalar> scope(tape_g);
        d_fake_after = dis.forward(fake);
        Tensor<Scalar> loss_g = g_loss(d_fake_after);
        g_loss_value = static_cast<double>(loss_g.value());
        adam_g.zero_grad();
        adam_d.zero_grad();  // G's backward also reaches D's parameters
        tape_g.backward(loss_g);
        adam_g.step();
      }

      if (!std::isfinite(d_loss_value) || !std::isfinite(g_loss_value))
        throw std::runtime_error("train_gan: non-finite loss at epoch " + std::to_string(epoch) +
                                 " batch " + std::to_string(batch) +
                                 " (d_loss=" + std::to_string(d_loss_value) +
                                 ", g_loss=" + std::to_string(g_loss_value) + ")");

      state.acc_last = batch_accuracy(d_real, d_fake_after);
      state.log.push_back(
          BatchLog{epoch, batch, d_loss_value, g_loss_value, state.acc_last, update_d});
    }
    if (epoch_hook) epoch_hook(epoch, gen, dis, state);
  }
  state.seconds_total =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  state.seconds_per_epoch =
      config.n_epoch > 0 ? state.seconds_total / static_cast<double>(config.n_epoch) : 0.0;
  return result;
}

/// Deterministic generation in inference mode (batchnorm running stats).
template <class Scalar>
Tensor<Scalar> sample(Generator<Scalar>& generator, Index count, std::uint64_t seed) {
  const GanConfig& config = generator.config();
  if (count < 0) throw std::invalid_argument("sample: negative count");
  ArrayX<Scalar> out(count * config.n * config.d);
  Rng rng(seed);
  NoGradScope<Scalar> no_grad;
  generator.set_mode(BatchNormMode::kInfer);
  const Index chunk = 512;
  Index done = 0;
  while (done < count) {
    const Index take = std::min(chunk, count - done);
    Tensor<Scalar> z = sample_noise<Scalar>(take, config.n_z, rng);
    Tensor<Scalar> fake = generator.forward(z);
    out.segment(done * config.n * config.d, take * config.n * config.d) = fake.values();
    done += take;
  }
  generator.set_mode(BatchNormMode::kTrain);
  return Tensor<Scalar>::from_array({count, config.n, config.d}, std::move(out));
}

/// Generated samples as a dataset-shaped matrix [count, n*d] in double.
template <class Scalar>
Eigen::MatrixXd samples_to_matrix(const Tensor<Scalar>& samples) {
  const Index count = samples.dim(0);
  const Index width = samples.dim(1) * samples.dim(2);
  Eigen::MatrixXd out(count, width);
  for (Index i = 0; i < count; ++i)
    for (Index j = 0; j < width; ++j)
      out(i, j) = static_cast<double>(samples.values()[i * width + j]);
  return out;
}

}  // namespace tcgan
