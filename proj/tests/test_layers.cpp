#include <cmath>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "tcgan/layers.hpp"

using namespace tcgan;

namespace {

Conv1DParams<double> random_conv(Index kernel_w, Index cin, Index cout, Index stride, Rng& rng) {
  auto p = make_conv1d_params<double>(kernel_w, cin, cout, stride, rng, 1.0);
  for (Index i = 0; i < p.bias.size(); ++i) p.bias.values_mut()[i] = rng.normal();
  return p;
}

std::vector<double> to_vec(const ArrayX<double>& a) { return {a.data(), a.data() + a.size()}; }

double inner(const Tensor<double>& a, const Tensor<double>& b) {
  return (a.values() * b.values()).sum();
}

}  // namespace

TEST_SUITE("layers") {

TEST_CASE("conv1d identity kernel and sliding sums") {
  // kernel [1], stride 1 -> identity
  Rng rng(1);
  auto p = make_conv1d_params<double>(1, 1, 1, 1, rng);
  p.weights.values_mut()[0] = 1.0;
  auto x = Tensor<double>::from_vector({1, 4, 1}, {1, 2, 3, 4});
  auto y = conv1d(x, p);
  for (Index i = 0; i < 4; ++i) CHECK(y.values()[i] == x.values()[i]);

  // kernel [1,1], stride 1: same-ceil padding keeps length 4
  auto p2 = make_conv1d_params<double>(2, 1, 1, 1, rng);
  p2.weights.values_mut() << 1, 1;
  auto y2 = conv1d(x, p2);
  const auto expected = oracle::conv1d_direct(to_vec(x.values()), 1, 4, 1,
                                              to_vec(p2.weights.values()), 2, 1, 1, {0.0});
  REQUIRE(y2.size() == static_cast<Index>(expected.size()));
  for (Index i = 0; i < y2.size(); ++i)
    CHECK(y2.values()[i] == doctest::Approx(expected[static_cast<std::size_t>(i)]));
}

TEST_CASE("conv1d stride-2 length chain 100 -> 50,25,13,7") {
  Rng rng(2);
  Index len = 100;
  auto x = oracle::random_tensor({2, len, 1}, rng, false);
  std::vector<Index> expect{50, 25, 13, 7};
  Index cin = 1;
  for (Index stage = 0; stage < 4; ++stage) {
    auto p = random_conv(10, cin, 3, 2, rng);
    x = conv1d(x, p);
    CHECK(x.dim(1) == expect[static_cast<std::size_t>(stage)]);
    cin = 3;
    len = x.dim(1);
  }
}

TEST_CASE("conv1d output length is ceil(L/stride) for all L in [1,64], stride in {1,2,3}") {
  Rng rng(3);
  for (Index stride = 1; stride <= 3; ++stride) {
    auto p = random_conv(5, 1, 1, stride, rng);
    for (Index len = 1; len <= 64; ++len) {
      auto x = oracle::random_tensor({1, len, 1}, rng, false);
      CHECK(conv1d(x, p).dim(1) == (len + stride - 1) / stride);
    }
  }
}

TEST_CASE("conv1d matches direct summation on 100 random instances") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Index batch = 1 + static_cast<Index>(rng.below(3));
    const Index len = 1 + static_cast<Index>(rng.below(12));
    const Index cin = 1 + static_cast<Index>(rng.below(3));
    const Index cout = 1 + static_cast<Index>(rng.below(3));
    const Index kernel = 1 + static_cast<Index>(rng.below(5));
    const Index stride = 1 + static_cast<Index>(rng.below(3));
    auto x = oracle::random_tensor({batch, len, cin}, rng, false);
    auto p = random_conv(kernel, cin, cout, stride, rng);
    auto y = conv1d(x, p);
    const auto expected =
        oracle::conv1d_direct(to_vec(x.values()), batch, len, cin, to_vec(p.weights.values()),
                              kernel, cout, stride, to_vec(p.bias.values()));
    REQUIRE(y.size() == static_cast<Index>(expected.size()));
    for (Index i = 0; i < y.size(); ++i)
      CHECK(std::abs(y.values()[i] - expected[static_cast<std::size_t>(i)]) < 1e-10);
  }
}

TEST_CASE("conv1d rejects channel mismatch") {
  Rng rng(5);
  auto p = random_conv(3, 2, 1, 1, rng);
  auto x = oracle::random_tensor({1, 5, 3}, rng, false);
  CHECK_THROWS_AS(conv1d(x, p), std::invalid_argument);
}

TEST_CASE("conv1d_transpose identity, length rule, and direct-summation equivalence") {
  Rng rng(6);
  auto p = make_conv1d_params<double>(1, 1, 1, 1, rng);
  p.weights.values_mut()[0] = 1.0;
  auto x = Tensor<double>::from_vector({1, 3, 1}, {5, 6, 7});
  auto y = conv1d_transpose(x, p);
  for (Index i = 0; i < 3; ++i) CHECK(y.values()[i] == x.values()[i]);

  auto p2 = random_conv(4, 1, 2, 2, rng);
  auto x2 = oracle::random_tensor({2, 7, 1}, rng, false);
  auto y2 = conv1d_transpose(x2, p2);
  CHECK(y2.dim(1) == 14);

  for (int trial = 0; trial < 100; ++trial) {
    const Index batch = 1 + static_cast<Index>(rng.below(2));
    const Index len = 1 + static_cast<Index>(rng.below(9));
    const Index cin = 1 + static_cast<Index>(rng.below(3));
    const Index cout = 1 + static_cast<Index>(rng.below(3));
    const Index kernel = 1 + static_cast<Index>(rng.below(5));
    const Index stride = 1 + static_cast<Index>(rng.below(3));
    auto xr = oracle::random_tensor({batch, len, cin}, rng, false);
    auto pr = random_conv(kernel, cin, cout, stride, rng);
    auto yr = conv1d_transpose(xr, pr);
    CHECK(yr.dim(1) == len * stride);
    const auto expected = oracle::conv1d_transpose_direct(
        to_vec(xr.values()), batch, len, cin, to_vec(pr.weights.values()), kernel, cout, stride,
        to_vec(pr.bias.values()));
    REQUIRE(yr.size() == static_cast<Index>(expected.size()));
    for (Index i = 0; i < yr.size(); ++i)
      CHECK(std::abs(yr.values()[i] - expected[static_cast<std::size_t>(i)]) < 1e-10);
  }
}

TEST_CASE("adjoint identity <conv(x), y> == <x, conv_transpose(y)> to 1e-10") {
  Rng rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const Index stride = 1 + static_cast<Index>(rng.below(3));
    const Index out_len = 1 + static_cast<Index>(rng.below(6));
    const Index in_len = out_len * stride;  // adjoint pairing needs L divisible by stride
    const Index cin = 1 + static_cast<Index>(rng.below(3));
    const Index cout = 1 + static_cast<Index>(rng.below(3));
    const Index kernel = 1 + static_cast<Index>(rng.below(6));
    const Index batch = 1 + static_cast<Index>(rng.below(2));

    auto forward = random_conv(kernel, cin, cout, stride, rng);
    forward.bias.values_mut().setZero();
    // transpose uses the same kernel values with in/out channel roles swapped
    Conv1DParams<double> adjoint;
    adjoint.stride = stride;
    {
      ArrayX<double> swapped(kernel * cout * cin);
      for (Index i = 0; i < kernel; ++i)
        for (Index c = 0; c < cin; ++c)
          for (Index o = 0; o < cout; ++o)
            swapped[(i * cout + o) * cin + c] = forward.weights.values()[(i * cin + c) * cout + o];
      adjoint.weights = Tensor<double>::from_array({kernel, cout, cin}, std::move(swapped));
      adjoint.bias = Tensor<double>::from_array({cin}, ArrayX<double>::Zero(cin));
    }

    auto x = oracle::random_tensor({batch, in_len, cin}, rng, false);
    auto y = oracle::random_tensor({batch, out_len, cout}, rng, false);
    const double lhs = inner(conv1d(x, forward), y);
    const double rhs = inner(x, conv1d_transpose(y, adjoint));
    CHECK(std::abs(lhs - rhs) < 1e-10);
  }
}

TEST_CASE("conv gradients match finite differences") {
  Rng rng(8);
  for (int trial = 0; trial < 8; ++trial) {
    const Index stride = 1 + static_cast<Index>(rng.below(2));
    auto x = oracle::random_tensor({2, 6, 2}, rng);
    auto p = random_conv(3, 2, 2, stride, rng);
    auto weight = oracle::random_tensor({2, (6 + stride - 1) / stride, 2}, rng, false);
    auto check = oracle::grad_check({x, p.weights, p.bias},
                                    [&] { return sum(mul(conv1d(x, p), weight)); });
    CHECK(check.max_rel_err < 1e-4);
  }
}

TEST_CASE("conv_transpose gradients match finite differences") {
  Rng rng(9);
  for (int trial = 0; trial < 8; ++trial) {
    const Index stride = 1 + static_cast<Index>(rng.below(2));
    auto x = oracle::random_tensor({2, 4, 2}, rng);
    auto p = random_conv(3, 2, 2, stride, rng);
    auto weight = oracle::random_tensor({2, 4 * stride, 2}, rng, false);
    auto check = oracle::grad_check({x, p.weights, p.bias},
                                    [&] { return sum(mul(conv1d_transpose(x, p), weight)); });
    CHECK(check.max_rel_err < 1e-4);
  }
}

TEST_CASE("batchnorm train mode normalizes per channel") {
  Rng rng(10);
  auto x = oracle::random_tensor({4, 8, 3}, rng, false, 2.5);
  auto p = make_batchnorm1d_params<double>(3);
  auto y = batchnorm1d(x, p);
  for (Index c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (Index r = 0; r < 32; ++r) mean += y.values()[r * 3 + c];
    mean /= 32.0;
    for (Index r = 0; r < 32; ++r) {
      const double d = y.values()[r * 3 + c] - mean;
      var += d * d;
    }
    var /= 32.0;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("batchnorm constant channel collapses to beta") {
  auto x = Tensor<double>::constant({2, 3, 1}, 7.0);
  auto p = make_batchnorm1d_params<double>(1);
  p.beta.values_mut()[0] = 0.25;
  auto y = batchnorm1d(x, p);
  for (Index i = 0; i < y.size(); ++i) CHECK(y.values()[i] == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("batchnorm infer mode with unit running stats is the identity") {
  Rng rng(11);
  auto x = oracle::random_tensor({2, 4, 2}, rng, false);
  auto p = make_batchnorm1d_params<double>(2);
  p.mode = BatchNormMode::kInfer;
  auto y = batchnorm1d(x, p);
  for (Index i = 0; i < y.size(); ++i)
    CHECK(y.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-5));
}

TEST_CASE("batchnorm running stats converge to population stats on repeated batches") {
  Rng rng(12);
  auto x = oracle::random_tensor({8, 4, 2}, rng, false, 3.0);
  auto p = make_batchnorm1d_params<double>(2);
  for (int i = 0; i < 200; ++i) (void)batchnorm1d(x, p);
  ConstMapMat<double> X(x.values().data(), 32, 2);
  const Eigen::RowVectorXd mean = X.colwise().mean();
  const Eigen::RowVectorXd var = (X.rowwise() - mean).array().square().colwise().mean();
  for (Index c = 0; c < 2; ++c) {
    CHECK(p.running_mean[c] == doctest::Approx(mean[c]).epsilon(1e-6));
    CHECK(p.running_var[c] == doctest::Approx(var[c]).epsilon(1e-6));
  }
  // infer mode never touches them
  p.mode = BatchNormMode::kInfer;
  const ArrayX<double> before = p.running_mean;
  (void)batchnorm1d(x, p);
  for (Index c = 0; c < 2; ++c) CHECK(p.running_mean[c] == before[c]);
}

TEST_CASE("batchnorm rejects train mode on a single row") {
  auto x = Tensor<double>::constant({1, 1, 2}, 1.0);
  auto p = make_batchnorm1d_params<double>(2);
  CHECK_THROWS_AS(batchnorm1d(x, p), std::invalid_argument);
}

TEST_CASE("batchnorm gradients match finite differences in both modes") {
  Rng rng(13);
  for (int trial = 0; trial < 6; ++trial) {
    auto x = oracle::random_tensor({2, 3, 2}, rng);
    auto p = make_batchnorm1d_params<double>(2);
    for (Index i = 0; i < 2; ++i) {
      p.gamma.values_mut()[i] = 1.0 + 0.3 * rng.normal();
      p.beta.values_mut()[i] = 0.2 * rng.normal();
    }
    auto weight = oracle::random_tensor({2, 3, 2}, rng, false);
    p.mode = trial % 2 == 0 ? BatchNormMode::kTrain : BatchNormMode::kInfer;
    if (p.mode == BatchNormMode::kInfer) {
      p.running_mean = ArrayX<double>::Constant(2, 0.3);
      p.running_var = ArrayX<double>::Constant(2, 1.7);
    }
    auto check = oracle::grad_check({x, p.gamma, p.beta},
                                    [&] { return sum(mul(batchnorm1d(x, p), weight)); });
    CHECK(check.max_rel_err < 1e-4);
  }
}

TEST_CASE("activation values") {
  auto x = Tensor<double>::from_vector({3}, {-1.0, 0.0, 2.0});
  auto lr = leaky_relu(x, 0.2);
  CHECK(lr.values()[0] == doctest::Approx(-0.2));
  CHECK(lr.values()[1] == 0.0);
  CHECK(lr.values()[2] == 2.0);

  CHECK(sigmoid(Tensor<double>::from_vector({1}, {0.0})).values()[0] == doctest::Approx(0.5));
  CHECK(sigmoid(Tensor<double>::from_vector({1}, {100.0})).values()[0] == doctest::Approx(1.0));
  CHECK(sigmoid(Tensor<double>::from_vector({1}, {-100.0})).values()[0] ==
        doctest::Approx(0.0).epsilon(1e-30));

  auto sm = softmax(Tensor<double>::from_vector({1, 2}, {0.0, 0.0}), 1);
  CHECK(sm.values()[0] == doctest::Approx(0.5));
  CHECK(sm.values()[1] == doctest::Approx(0.5));

  Rng rng(14);
  auto rows = softmax(oracle::random_tensor({3, 4}, rng, false), 1);
  for (Index r = 0; r < 3; ++r) {
    double total = 0;
    for (Index c = 0; c < 4; ++c) total += rows.values()[r * 4 + c];
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("activation gradients match finite differences") {
  Rng rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = oracle::random_tensor({2, 5}, rng);
    auto w = oracle::random_tensor({2, 5}, rng, false);
    auto c1 = oracle::grad_check({x}, [&] { return sum(mul(relu(x), w)); });
    CHECK(c1.max_rel_err < 2e-4);  // kink at 0 is measure-zero for random input
    auto c2 = oracle::grad_check({x}, [&] { return sum(mul(leaky_relu(x, 0.2), w)); });
    CHECK(c2.max_rel_err < 2e-4);
    auto c3 = oracle::grad_check({x}, [&] { return sum(mul(sigmoid(x), w)); });
    CHECK(c3.max_rel_err < 1e-4);
    auto c4 = oracle::grad_check({x}, [&] { return sum(mul(softmax(x, 1), w)); });
    CHECK(c4.max_rel_err < 1e-4);
  }
}

TEST_CASE("maxpool windowed max, constants, and oracle equivalence") {
  auto x = Tensor<double>::from_vector({1, 4, 1}, {1, 5, 3, 2});
  auto y = maxpool1d(x, 2, 1);
  CHECK(y.dim(1) == 3);
  CHECK(y.values()[0] == 5);
  CHECK(y.values()[1] == 5);
  CHECK(y.values()[2] == 3);

  auto c = Tensor<double>::constant({1, 6, 2}, 4.0);
  auto yc = maxpool1d(c, 2, 1);
  CHECK(yc.dim(1) == 5);
  for (Index i = 0; i < yc.size(); ++i) CHECK(yc.values()[i] == 4.0);

  Rng rng(16);
  for (int trial = 0; trial < 100; ++trial) {
    const Index batch = 1 + static_cast<Index>(rng.below(3));
    const Index len = 2 + static_cast<Index>(rng.below(12));
    const Index ch = 1 + static_cast<Index>(rng.below(3));
    const Index pool = 1 + static_cast<Index>(rng.below(std::min<Index>(len, 4)));
    const Index stride = 1 + static_cast<Index>(rng.below(3));
    auto xr = oracle::random_tensor({batch, len, ch}, rng, false);
    auto yr = maxpool1d(xr, pool, stride);
    const auto expected =
        oracle::maxpool1d_direct({xr.values().data(), xr.values().data() + xr.size()}, batch, len,
                                 ch, pool, stride);
    REQUIRE(yr.size() == static_cast<Index>(expected.size()));
    for (Index i = 0; i < yr.size(); ++i)
      CHECK(yr.values()[i] == expected[static_cast<std::size_t>(i)]);
  }

  CHECK_THROWS_AS(maxpool1d(x, 5, 1), std::invalid_argument);
}

TEST_CASE("maxpool gradient matches finite differences") {
  Rng rng(17);
  for (int trial = 0; trial < 8; ++trial) {
    auto x = oracle::random_tensor({2, 6, 2}, rng);
    auto w = oracle::random_tensor({2, 5, 2}, rng, false);
    auto check = oracle::grad_check({x}, [&] { return sum(mul(maxpool1d(x, 2, 1), w)); });
    CHECK(check.max_rel_err < 1e-4);
  }
}

TEST_CASE("dense identity, flatten order, reshape round trip") {
  Rng rng(18);
  auto p = make_dense_params<double>(2, 2, rng);
  p.weights.values_mut() << 1, 0, 0, 1;
  p.bias.values_mut().setZero();
  auto x = Tensor<double>::from_vector({2, 2}, {3, 4, 5, 6});
  auto y = dense(x, p);
  for (Index i = 0; i < 4; ++i) CHECK(y.values()[i] == x.values()[i]);

  auto series = Tensor<double>::from_vector({1, 2, 2}, {1, 2, 3, 4});  // [[a,b],[c,d]]
  auto flat = flatten(series);
  CHECK(flat.shape() == Shape{1, 4});
  for (Index i = 0; i < 4; ++i) CHECK(flat.values()[i] == series.values()[i]);

  auto back = reshape(flat, {1, 2, 2});
  for (Index i = 0; i < 4; ++i) CHECK(back.values()[i] == series.values()[i]);
}

TEST_CASE("dense gradients match finite differences") {
  Rng rng(19);
  auto x = oracle::random_tensor({3, 4}, rng);
  auto p = make_dense_params<double>(4, 2, rng, 1.0);
  auto w = oracle::random_tensor({3, 2}, rng, false);
  auto check =
      oracle::grad_check({x, p.weights, p.bias}, [&] { return sum(mul(dense(x, p), w)); });
  CHECK(check.max_rel_err < 1e-4);
}

TEST_CASE("softmax cross-entropy gradient matches finite differences on a 3-class toy") {
  Rng rng(20);
  auto logits = oracle::random_tensor({5, 3}, rng);
  std::vector<int> labels{0, 2, 1, 1, 0};
  auto check =
      oracle::grad_check({logits}, [&] { return softmax_cross_entropy(logits, labels); });
  CHECK(check.max_rel_err < 1e-6);
}

}  // TEST_SUITE
