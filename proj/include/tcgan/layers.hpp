#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "tcgan/rng.hpp"
#include "tcgan/tensor.hpp"

namespace tcgan {

// All sequence tensors are [batch, time, channel], row-major.

template <class Scalar>
Tensor<Scalar> normal_param(Shape shape, Scalar stddev, Rng& rng) {
  ArrayX<Scalar> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(rng.normal(0.0, stddev));
  return Tensor<Scalar>::param(std::move(shape), std::move(v));
}

template <class Scalar>
Tensor<Scalar> zero_param(Shape shape) {
  const Index n = numel(shape);
  return Tensor<Scalar>::param(std::move(shape), ArrayX<Scalar>::Zero(n));
}

// ---------------------------------------------------------------------------
// Convolution parameters

template <class Scalar>
struct Conv1DParams {
  Tensor<Scalar> weights;  // [kernel_w, in_channels, out_channels]
  Tensor<Scalar> bias;     // [out_channels], one bias per output channel
  Index stride = 1;

  Index kernel_w() const { return weights.dim(0); }
  Index in_channels() const { return weights.dim(1); }
  Index out_channels() const { return weights.dim(2); }
};

template <class Scalar>
Conv1DParams<Scalar> make_conv1d_params(Index kernel_w, Index in_channels, Index out_channels,
                                        Index stride, Rng& rng, Scalar init_std = Scalar(0.02)) {
  if (kernel_w < 1 || stride < 1)
    throw std::invalid_argument("conv1d params: kernel_w and stride must be >= 1");
  Conv1DParams<Scalar> p;
  p.weights = normal_param<Scalar>({kernel_w, in_channels, out_channels}, init_std, rng);
  p.bias = zero_param<Scalar>({out_channels});
  p.stride = stride;
  return p;
}

inline Index conv1d_output_length(Index input_length, Index stride) {
  return (input_length + stride - 1) / stride;  // ceil(L / stride)
}

namespace detail {

// Gather a padded sliding window: cols[(b*T + t), (i*C + c)] =
// x[b, t*stride + i - pad_left, c], zero outside [0, L).
template <class Scalar>
void im2col(const Scalar* x, Index batch, Index length, Index channels, Index windows,
            Index kernel_w, Index stride, Index pad_left, Scalar* cols) {
  const Index row_width = kernel_w * channels;
  for (Index b = 0; b < batch; ++b) {
    const Scalar* xb = x + b * length * channels;
    Scalar* cb = cols + b * windows * row_width;
    for (Index t = 0; t < windows; ++t) {
      Scalar* row = cb + t * row_width;
      for (Index i = 0; i < kernel_w; ++i) {
        const Index src = t * stride + i - pad_left;
        Scalar* dst = row + i * channels;
        if (src >= 0 && src < length) {
          const Scalar* s = xb + src * channels;
          std::copy(s, s + channels, dst);
        } else {
          std::fill(dst, dst + channels, Scalar(0));
        }
      }
    }
  }
}

// Scatter-add transpose of im2col.
template <class Scalar>
void col2im_add(const Scalar* cols, Index batch, Index length, Index channels, Index windows,
                Index kernel_w, Index stride, Index pad_left, Scalar* x) {
  const Index row_width = kernel_w * channels;
  for (Index b = 0; b < batch; ++b) {
    Scalar* xb = x + b * length * channels;
    const Scalar* cb = cols + b * windows * row_width;
    for (Index t = 0; t < windows; ++t) {
      const Scalar* row = cb + t * row_width;
      for (Index i = 0; i < kernel_w; ++i) {
        const Index dst = t * stride + i - pad_left;
        if (dst < 0 || dst >= length) continue;
        Scalar* d = xb + dst * channels;
        const Scalar* s = row + i * channels;
        for (Index c = 0; c < channels; ++c) d[c] += s[c];
      }
    }
  }
}

// Weights stored [w, in, out] reordered to [in, (w, out)] for the
// transposed-convolution GEMM.
template <class Scalar>
MatrixRM<Scalar> weights_by_input_channel(const ArrayX<Scalar>& w, Index kernel_w, Index cin,
                                          Index cout) {
  MatrixRM<Scalar> out(cin, kernel_w * cout);
  for (Index i = 0; i < kernel_w; ++i)
    for (Index c = 0; c < cin; ++c)
      for (Index o = 0; o < cout; ++o)
        out(c, i * cout + o) = w[(i * cin + c) * cout + o];
  return out;
}

template <class Scalar>
void scatter_weight_grad(const MatrixRM<Scalar>& by_in, Index kernel_w, Index cin, Index cout,
                         ArrayX<Scalar>& grad) {
  for (Index i = 0; i < kernel_w; ++i)
    for (Index c = 0; c < cin; ++c)
      for (Index o = 0; o < cout; ++o)
        grad[(i * cin + c) * cout + o] += by_in(c, i * cout + o);
}

inline void check_series(const Shape& shape, const char* op) {
  if (shape.size() != 3)
    throw std::invalid_argument(std::string(op) + ": expects [batch, time, channel], got " +
                                shape_string(shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv1d: strided 1-D convolution with same-ceil zero padding

// Output length is ceil(L / stride); total padding splits evenly with the
// extra zero on the right.
template <class Scalar>
Tensor<Scalar> conv1d(const Tensor<Scalar>& x, const Conv1DParams<Scalar>& p) {
  detail::check_series(x.shape(), "conv1d");
  const Index batch = x.dim(0), length = x.dim(1), cin = x.dim(2);
  if (cin != p.in_channels())
    throw std::invalid_argument("conv1d: input has " + std::to_string(cin) +
                                " channels, weights expect " + std::to_string(p.in_channels()));
  if (length < 1) throw std::invalid_argument("conv1d: empty time axis");
  const Index w = p.kernel_w(), stride = p.stride, cout = p.out_channels();
  const Index out_len = conv1d_output_length(length, stride);
  const Index pad_total = std::max<Index>(0, (out_len - 1) * stride + w - length);
  const Index pad_left = pad_total / 2;

  auto cols = std::make_shared<MatrixRM<Scalar>>(batch * out_len, w * cin);
  detail::im2col(x.values().data(), batch, length, cin, out_len, w, stride, pad_left,
                 cols->data());

  ArrayX<Scalar> out(batch * out_len * cout);
  {
    ConstMapMat<Scalar> W(p.weights.values().data(), w * cin, cout);
    MapMat<Scalar> O(out.data(), batch * out_len, cout);
    O.noalias() = (*cols) * W;
    O.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(
        p.bias.values().data(), cout);
  }
  Tensor<Scalar> result =
      Tensor<Scalar>::from_array(Shape{batch, out_len, cout}, std::move(out));

  auto xn = x.node_ptr();
  auto wn = p.weights.node_ptr();
  auto bn = p.bias.node_ptr();
  auto on = result.node_ptr();
  detail::maybe_record<Scalar>(
      result,
      [xn, wn, bn, on, cols, batch, length, cin, out_len, w, stride, pad_left, cout]() {
        ConstMapMat<Scalar> G(on->grad.data(), batch * out_len, cout);
        if (wn->requires_grad) {
          wn->ensure_grad();
          MapMat<Scalar> dW(wn->grad.data(), w * cin, cout);
          dW.noalias() += cols->transpose() * G;
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> db(bn->grad.data(), cout);
          db += G.colwise().sum();
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          ConstMapMat<Scalar> W(wn->values.data(), w * cin, cout);
          MatrixRM<Scalar> dcols = G * W.transpose();
          detail::col2im_add(dcols.data(), batch, length, cin, out_len, w, stride, pad_left,
                             xn->grad.data());
        }
      },
      x, p.weights, p.bias);
  return result;
}

// ---------------------------------------------------------------------------
// conv1d_transpose: fractionally-strided convolution

// Output length is exactly L * stride: the full transposed-convolution
// support of length (L-1)*stride + kernel_w is cropped centered, dropping
// floor((kernel_w - stride)/2) positions on the left. With that convention
// the op is the exact adjoint of conv1d under same-ceil padding.
template <class Scalar>
Tensor<Scalar> conv1d_transpose(const Tensor<Scalar>& x, const Conv1DParams<Scalar>& p) {
  detail::check_series(x.shape(), "conv1d_transpose");
  const Index batch = x.dim(0), length = x.dim(1), cin = x.dim(2);
  if (cin != p.in_channels())
    throw std::invalid_argument("conv1d_transpose: input has " + std::to_string(cin) +
                                " channels, weights expect " + std::to_string(p.in_channels()));
  const Index w = p.kernel_w(), stride = p.stride, cout = p.out_channels();
  const Index out_len = length * stride;
  const Index crop_left = std::max<Index>(0, (w - stride) / 2);

  auto w_by_in = std::make_shared<MatrixRM<Scalar>>(
      detail::weights_by_input_channel(p.weights.values(), w, cin, cout));

  ArrayX<Scalar> out = ArrayX<Scalar>::Zero(batch * out_len * cout);
  {
    ConstMapMat<Scalar> X(x.values().data(), batch * length, cin);
    MatrixRM<Scalar> cols = X * (*w_by_in);  // [B*L, w*cout]
    detail::col2im_add(cols.data(), batch, out_len, cout, length, w, stride, crop_left,
                       out.data());
    MapMat<Scalar> O(out.data(), batch * out_len, cout);
    O.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(
        p.bias.values().data(), cout);
  }
  Tensor<Scalar> result =
      Tensor<Scalar>::from_array(Shape{batch, out_len, cout}, std::move(out));

  auto xn = x.node_ptr();
  auto wn = p.weights.node_ptr();
  auto bn = p.bias.node_ptr();
  auto on = result.node_ptr();
  detail::maybe_record<Scalar>(
      result,
      [xn, wn, bn, on, w_by_in, batch, length, cin, out_len, w, stride, crop_left, cout]() {
        // dcols[(b*L + t), (i*cout + o)] = dout[b, t*stride + i - crop_left, o]
        MatrixRM<Scalar> dcols(batch * length, w * cout);
        detail::im2col(on->grad.data(), batch, out_len, cout, length, w, stride, crop_left,
                       dcols.data());
        if (bn->requires_grad) {
          bn->ensure_grad();
          ConstMapMat<Scalar> G(on->grad.data(), batch * out_len, cout);
          Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> db(bn->grad.data(), cout);
          db += G.colwise().sum();
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          ConstMapMat<Scalar> X(xn->values.data(), batch * length, cin);
          MatrixRM<Scalar> dw_by_in = X.transpose() * dcols;
          detail::scatter_weight_grad(dw_by_in, w, cin, cout, wn->grad);
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          MapMat<Scalar> dX(xn->grad.data(), batch * length, cin);
          dX.noalias() += dcols * w_by_in->transpose();
        }
      },
      x, p.weights, p.bias);
  return result;
}

// ---------------------------------------------------------------------------
// Batch normalization over (batch, time) per channel

enum class BatchNormMode { kTrain, kInfer };

template <class Scalar>
struct BatchNorm1DParams {
  Tensor<Scalar> gamma;  // [C]
  Tensor<Scalar> beta;   // [C]
  ArrayX<Scalar> running_mean;
  ArrayX<Scalar> running_var;
  Scalar momentum = Scalar(0.9);  // retained fraction of the old running stat
  Scalar epsilon = Scalar(1e-5);
  BatchNormMode mode = BatchNormMode::kTrain;

  Index channels() const { return gamma.size(); }
};

template <class Scalar>
BatchNorm1DParams<Scalar> make_batchnorm1d_params(Index channels) {
  BatchNorm1DParams<Scalar> p;
  p.gamma = Tensor<Scalar>::param({channels}, ArrayX<Scalar>::Constant(channels, Scalar(1)));
  p.beta = zero_param<Scalar>({channels});
  p.running_mean = ArrayX<Scalar>::Zero(channels);
  p.running_var = ArrayX<Scalar>::Constant(channels, Scalar(1));
  return p;
}

namespace detail {

// Shared scale/shift + backward wiring for both batchnorm modes. `train`
// selects the full backward through batch statistics.
template <class Scalar>
Tensor<Scalar> batchnorm1d_apply(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma_t,
                                 const Tensor<Scalar>& beta_t,
                                 const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& mean,
                                 const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& var,
                                 Scalar epsilon, bool train);

}  // namespace detail

template <class Scalar>
Tensor<Scalar> batchnorm1d(const Tensor<Scalar>& x, BatchNorm1DParams<Scalar>& p) {
  detail::check_series(x.shape(), "batchnorm1d");
  const Index batch = x.dim(0), length = x.dim(1), channels = x.dim(2);
  if (channels != p.channels())
    throw std::invalid_argument("batchnorm1d: input has " + std::to_string(channels) +
                                " channels, params expect " + std::to_string(p.channels()));
  const Index rows = batch * length;
  using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  if (p.mode == BatchNormMode::kInfer) {
    const RowVec mean = p.running_mean.transpose().matrix();
    const RowVec var = p.running_var.transpose().matrix();
    return detail::batchnorm1d_apply(x, p.gamma, p.beta, mean, var, p.epsilon, false);
  }
  if (rows < 2) throw std::invalid_argument("batchnorm1d: train mode needs batch*time >= 2");
  ConstMapMat<Scalar> X(x.values().data(), rows, channels);
  const RowVec mean = X.colwise().mean();
  const RowVec var =
      (X.rowwise() - mean).array().square().colwise().mean();  // population variance
  p.running_mean = p.momentum * p.running_mean + (Scalar(1) - p.momentum) * mean.transpose().array();
  p.running_var = p.momentum * p.running_var + (Scalar(1) - p.momentum) * var.transpose().array();
  return detail::batchnorm1d_apply(x, p.gamma, p.beta, mean, var, p.epsilon, true);
}

/// Inference-mode normalization against running statistics; never mutates
/// the parameter set, so frozen encoders can share it across threads.
template <class Scalar>
Tensor<Scalar> batchnorm1d_infer(const Tensor<Scalar>& x, const BatchNorm1DParams<Scalar>& p) {
  detail::check_series(x.shape(), "batchnorm1d");
  if (x.dim(2) != p.channels())
    throw std::invalid_argument("batchnorm1d: input has " + std::to_string(x.dim(2)) +
                                " channels, params expect " + std::to_string(p.channels()));
  using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  const RowVec mean = p.running_mean.transpose().matrix();
  const RowVec var = p.running_var.transpose().matrix();
  return detail::batchnorm1d_apply(x, p.gamma, p.beta, mean, var, p.epsilon, false);
}

namespace detail {

template <class Scalar>
Tensor<Scalar> batchnorm1d_apply(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma_t,
                                 const Tensor<Scalar>& beta_t,
                                 const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& mean,
                                 const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& var,
                                 Scalar epsilon, bool train) {
  const Index rows = x.dim(0) * x.dim(1);
  const Index channels = x.dim(2);
  ConstMapMat<Scalar> X(x.values().data(), rows, channels);
  using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  RowVec inv_std = (var.array() + epsilon).rsqrt().matrix();

  // normalized = (x - mean) * inv_std, kept for the backward pass
  auto normalized = std::make_shared<MatrixRM<Scalar>>(
      ((X.rowwise() - mean).array().rowwise() * inv_std.array()).matrix());

  ArrayX<Scalar> out(rows * channels);
  {
    MapMat<Scalar> O(out.data(), rows, channels);
    ConstMapMat<Scalar> gamma(gamma_t.values().data(), 1, channels);
    ConstMapMat<Scalar> beta(beta_t.values().data(), 1, channels);
    O = (normalized->array().rowwise() * gamma.row(0).array()).matrix();
    O.rowwise() += beta.row(0);
  }
  Tensor<Scalar> result = Tensor<Scalar>::from_array(x.shape(), std::move(out));

  auto xn = x.node_ptr();
  auto gn = gamma_t.node_ptr();
  auto bn = beta_t.node_ptr();
  auto on = result.node_ptr();
  auto inv_std_kept = std::make_shared<RowVec>(std::move(inv_std));
  detail::maybe_record<Scalar>(
      result,
      [xn, gn, bn, on, normalized, inv_std_kept, rows, channels, train]() {
        ConstMapMat<Scalar> G(on->grad.data(), rows, channels);
        const auto& xhat = *normalized;
        if (gn->requires_grad) {
          gn->ensure_grad();
          Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> dg(gn->grad.data(), channels);
          dg += (G.array() * xhat.array()).colwise().sum().matrix();
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> db(bn->grad.data(), channels);
          db += G.colwise().sum();
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          MapMat<Scalar> dX(xn->grad.data(), rows, channels);
          ConstMapMat<Scalar> gamma(gn->values.data(), 1, channels);
          if (train) {
            // full backward through the batch statistics:
            // dx = inv_std/n * (n*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
            using ArrRM = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
            using RowArr = Eigen::Array<Scalar, 1, Eigen::Dynamic>;
            const Scalar n = static_cast<Scalar>(rows);
            ArrRM dxhat = G.array().rowwise() * gamma.row(0).array();
            const RowArr sum_dxhat = dxhat.colwise().sum();
            const RowArr sum_dxhat_xhat = (dxhat * xhat.array()).colwise().sum();
            ArrRM dx = dxhat * n;
            dx.rowwise() -= sum_dxhat;
            dx -= xhat.array().rowwise() * sum_dxhat_xhat;
            dx.rowwise() *= RowArr(inv_std_kept->array() / n);
            dX.array() += dx;
          } else {
            dX.array() += (G.array().rowwise() *
                           (gamma.row(0).array() * inv_std_kept->array()));
          }
        }
      },
      x, gamma_t, beta_t);
  return result;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Activations

template <class Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  using A = ArrayX<Scalar>;
  return detail::unary_op<Scalar>(
      x, [](const A& v) -> A { return v.max(Scalar(0)); },
      [](A& grad, const A& g, const A& v, const A&) {
        grad += (v > Scalar(0)).select(g, A::Zero(g.size()));
      });
}

template <class Scalar>
Tensor<Scalar> leaky_relu(const Tensor<Scalar>& x, std::type_identity_t<Scalar> slope) {
  using A = ArrayX<Scalar>;
  return detail::unary_op<Scalar>(
      x, [slope](const A& v) -> A { return (v > Scalar(0)).select(v, v * slope); },
      [slope](A& grad, const A& g, const A& v, const A&) {
        grad += (v > Scalar(0)).select(g, g * slope);
      });
}

/// Numerically stable logistic: exp is only ever taken of a non-positive
/// argument.
template <class Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  using A = ArrayX<Scalar>;
  return detail::unary_op<Scalar>(
      x,
      [](const A& v) -> A {
        A out(v.size());
        for (Index i = 0; i < v.size(); ++i) {
          const Scalar z = v[i];
          if (z >= Scalar(0)) {
            const Scalar e = std::exp(-z);
            out[i] = Scalar(1) / (Scalar(1) + e);
          } else {
            const Scalar e = std::exp(z);
            out[i] = e / (Scalar(1) + e);
          }
        }
        return out;
      },
      [](A& grad, const A& g, const A&, const A& y) { grad += g * y * (Scalar(1) - y); });
}

/// Softmax along one axis with max-subtraction stabilization.
template <class Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis) {
  const detail::AxisSpan span = detail::axis_span(x.shape(), axis, "softmax");
  const ArrayX<Scalar>& v = x.values();
  ArrayX<Scalar> out(v.size());
  for (Index o = 0; o < span.outer; ++o) {
    for (Index i = 0; i < span.inner; ++i) {
      Scalar hi = v[(o * span.axis) * span.inner + i];
      for (Index j = 1; j < span.axis; ++j)
        hi = std::max(hi, v[(o * span.axis + j) * span.inner + i]);
      Scalar total = 0;
      for (Index j = 0; j < span.axis; ++j) {
        const Index idx = (o * span.axis + j) * span.inner + i;
        out[idx] = std::exp(v[idx] - hi);
        total += out[idx];
      }
      for (Index j = 0; j < span.axis; ++j) out[(o * span.axis + j) * span.inner + i] /= total;
    }
  }
  Tensor<Scalar> result = Tensor<Scalar>::from_array(x.shape(), std::move(out));
  auto xn = x.node_ptr();
  auto on = result.node_ptr();
  detail::maybe_record<Scalar>(
      result,
      [xn, on, span]() {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const ArrayX<Scalar>& g = on->grad;
        const ArrayX<Scalar>& y = on->values;
        for (Index o = 0; o < span.outer; ++o) {
          for (Index i = 0; i < span.inner; ++i) {
            Scalar dot = 0;
            for (Index j = 0; j < span.axis; ++j) {
              const Index idx = (o * span.axis + j) * span.inner + i;
              dot += g[idx] * y[idx];
            }
            for (Index j = 0; j < span.axis; ++j) {
              const Index idx = (o * span.axis + j) * span.inner + i;
              xn->grad[idx] += y[idx] * (g[idx] - dot);
            }
          }
        }
      },
      x);
  return result;
}

// ---------------------------------------------------------------------------
// Max pooling (valid windows, no padding)

template <class Scalar>
Tensor<Scalar> maxpool1d(const Tensor<Scalar>& x, Index pool_w, Index stride) {
  detail::check_series(x.shape(), "maxpool1d");
  if (pool_w < 1 || stride < 1)
    throw std::invalid_argument("maxpool1d: pool_w and stride must be >= 1");
  const Index batch = x.dim(0), length = x.dim(1), channels = x.dim(2);
  if (pool_w > length)
    throw std::invalid_argument("maxpool1d: pool width " + std::to_string(pool_w) +
                                " exceeds series length " + std::to_string(length));
  const Index out_len = (length - pool_w) / stride + 1;
  const ArrayX<Scalar>& v = x.values();
  ArrayX<Scalar> out(batch * out_len * channels);
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  for (Index b = 0; b < batch; ++b) {
    for (Index t = 0; t < out_len; ++t) {
      for (Index c = 0; c < channels; ++c) {
        Index best = (b * length + t * stride) * channels + c;
        for (Index j = 1; j < pool_w; ++j) {
          const Index idx = (b * length + t * stride + j) * channels + c;
          if (v[idx] > v[best]) best = idx;  // ties keep the lowest index
        }
        const Index oi = (b * out_len + t) * channels + c;
        out[oi] = v[best];
        argmax[static_cast<std::size_t>(oi)] = best;
      }
    }
  }
  Tensor<Scalar> result =
      Tensor<Scalar>::from_array(Shape{batch, out_len, channels}, std::move(out));
  auto xn = x.node_ptr();
  auto on = result.node_ptr();
  detail::maybe_record<Scalar>(
      result,
      [xn, on, argmax = std::move(argmax)]() {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (Index i = 0; i < static_cast<Index>(argmax.size()); ++i)
          xn->grad[argmax[static_cast<std::size_t>(i)]] += on->grad[i];
      },
      x);
  return result;
}

// ---------------------------------------------------------------------------
// Dense / flatten

template <class Scalar>
struct DenseParams {
  Tensor<Scalar> weights;  // [in_dim, out_dim]
  Tensor<Scalar> bias;     // [out_dim]

  Index in_dim() const { return weights.dim(0); }
  Index out_dim() const { return weights.dim(1); }
};

template <class Scalar>
DenseParams<Scalar> make_dense_params(Index in_dim, Index out_dim, Rng& rng,
                                      Scalar init_std = Scalar(0.02)) {
  DenseParams<Scalar> p;
  p.weights = normal_param<Scalar>({in_dim, out_dim}, init_std, rng);
  p.bias = zero_param<Scalar>({out_dim});
  return p;
}

template <class Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& x, const DenseParams<Scalar>& p) {
  if (x.rank() != 2)
    throw std::invalid_argument("dense: expects [batch, features], got " +
                                shape_string(x.shape()));
  if (x.dim(1) != p.in_dim())
    throw std::invalid_argument("dense: input dim " + std::to_string(x.dim(1)) +
                                " does not match weights " + shape_string(p.weights.shape()));
  return add(matmul(x, p.weights), p.bias);
}

/// [B, L, C] -> [B, L*C]; element (t, c) lands at t*C + c.
template <class Scalar>
Tensor<Scalar> flatten(const Tensor<Scalar>& x) {
  detail::check_series(x.shape(), "flatten");
  return reshape(x, Shape{x.dim(0), x.dim(1) * x.dim(2)});
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy (fused, stable)

template <class Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits,
                                     const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw std::invalid_argument("softmax_cross_entropy: logits must be [batch, classes]");
  const Index batch = logits.dim(0), classes = logits.dim(1);
  if (static_cast<Index>(labels.size()) != batch)
    throw std::invalid_argument("softmax_cross_entropy: batch/label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= classes)
      throw std::invalid_argument("softmax_cross_entropy: label out of range");

  const ArrayX<Scalar>& v = logits.values();
  auto probs = std::make_shared<MatrixRM<Scalar>>(batch, classes);
  Scalar loss = 0;
  for (Index r = 0; r < batch; ++r) {
    const Scalar* row = v.data() + r * classes;
    Scalar hi = row[0];
    for (Index c = 1; c < classes; ++c) hi = std::max(hi, row[c]);
    Scalar total = 0;
    for (Index c = 0; c < classes; ++c) {
      const Scalar e = std::exp(row[c] - hi);
      (*probs)(r, c) = e;
      total += e;
    }
    for (Index c = 0; c < classes; ++c) (*probs)(r, c) /= total;
    loss += std::log(total) + hi - row[labels[static_cast<std::size_t>(r)]];
  }
  loss /= static_cast<Scalar>(batch);

  Tensor<Scalar> result = Tensor<Scalar>::scalar(loss);
  auto ln = logits.node_ptr();
  auto on = result.node_ptr();
  detail::maybe_record<Scalar>(
      result,
      [ln, on, probs, labels, batch, classes]() {
        if (!ln->requires_grad) return;
        ln->ensure_grad();
        const Scalar scale = on->grad[0] / static_cast<Scalar>(batch);
        for (Index r = 0; r < batch; ++r) {
          Scalar* grow = ln->grad.data() + r * classes;
          for (Index c = 0; c < classes; ++c) grow[c] += scale * (*probs)(r, c);
          grow[labels[static_cast<std::size_t>(r)]] -= scale;
        }
      },
      logits);
  return result;
}

}  // namespace tcgan
