#include <cmath>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "tcgan/tensor.hpp"

using namespace tcgan;

TEST_SUITE("tensor") {

TEST_CASE("elementwise add/mul/log match componentwise definitions") {
  auto a = Tensor<double>::from_vector({2}, {1, 2});
  auto b = Tensor<double>::from_vector({2}, {3, 4});
  auto s = add(a, b);
  CHECK(s.values()[0] == 4);
  CHECK(s.values()[1] == 6);

  auto p = mul(Tensor<double>::from_vector({2}, {2, 3}), Tensor<double>::from_vector({2}, {4, 5}));
  CHECK(p.values()[0] == 8);
  CHECK(p.values()[1] == 15);

  auto l = log(Tensor<double>::from_vector({1}, {1.0}));
  CHECK(l.values()[0] == doctest::Approx(0.0));
}

TEST_CASE("log rejects non-positive input") {
  CHECK_THROWS_AS(log(Tensor<double>::from_vector({2}, {1.0, 0.0})), std::domain_error);
  CHECK_THROWS_AS(log(Tensor<double>::from_vector({1}, {-2.0})), std::domain_error);
}

TEST_CASE("binary ops reject incompatible shapes") {
  auto a = Tensor<double>::from_vector({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from_vector({3}, {1, 2, 3});
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
}

TEST_CASE("trailing-suffix broadcast with gradient reduction") {
  Rng rng(7);
  auto a = oracle::random_tensor({3, 4}, rng);
  auto bias = oracle::random_tensor({4}, rng);
  auto check = oracle::grad_check({a, bias}, [&] { return sum(mul(add(a, bias), add(a, bias))); });
  CHECK(check.max_rel_err < 1e-6);
}

TEST_CASE("matmul identities") {
  auto eye = Tensor<double>::from_vector({2, 2}, {1, 0, 0, 1});
  auto m = Tensor<double>::from_vector({2, 2}, {1, 2, 3, 4});
  auto r = matmul(eye, m);
  for (Index i = 0; i < 4; ++i) CHECK(r.values()[i] == m.values()[i]);

  auto row = Tensor<double>::from_vector({1, 2}, {1, 2});
  auto col = Tensor<double>::from_vector({2, 1}, {3, 4});
  CHECK(matmul(row, col).values()[0] == 11);

  CHECK_THROWS_AS(matmul(row, row), std::invalid_argument);
}

TEST_CASE("matmul gradient matches finite differences on random 3x4 * 4x2") {
  Rng rng(11);
  auto a = oracle::random_tensor({3, 4}, rng);
  auto b = oracle::random_tensor({4, 2}, rng);
  auto check = oracle::grad_check({a, b}, [&] { return sum(matmul(a, b)); });
  CHECK(check.max_rel_err < 1e-6);
}

TEST_CASE("reductions: mean, axis sum, max with argmax routing") {
  CHECK(mean(Tensor<double>::from_vector({3}, {2, 4, 6})).value() == doctest::Approx(4.0));

  auto m = Tensor<double>::from_vector({2, 2}, {1, 2, 3, 4});
  auto s0 = sum(m, 0);
  CHECK(s0.values()[0] == 4);
  CHECK(s0.values()[1] == 6);

  auto x = Tensor<double>::param({3}, ArrayX<double>());
  x.values_mut() << 1, 5, 3;
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    auto top = max(x);
    CHECK(top.value() == 5);
    tape.backward(top);
  }
  CHECK(x.grad()[0] == 0);
  CHECK(x.grad()[1] == 1);
  CHECK(x.grad()[2] == 0);
}

TEST_CASE("max ties route gradient to the lowest index") {
  auto x = Tensor<double>::param({4}, ArrayX<double>());
  x.values_mut() << 2, 7, 7, 1;
  Tape<double> tape;
  TapeScope<double> scope(tape);
  tape.backward(max(x));
  CHECK(x.grad()[1] == 1);
  CHECK(x.grad()[2] == 0);
}

TEST_CASE("reduce rejects invalid axis") {
  auto m = Tensor<double>::from_vector({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_AS(sum(m, 2), std::invalid_argument);
  CHECK_THROWS_AS(mean(m, -1), std::invalid_argument);
}

TEST_CASE("backward of sum(w*w) gives 2w") {
  auto w = Tensor<double>::param({2}, ArrayX<double>());
  w.values_mut() << 1, 2;
  Tape<double> tape;
  TapeScope<double> scope(tape);
  tape.backward(sum(mul(w, w)));
  CHECK(w.grad()[0] == doctest::Approx(2.0));
  CHECK(w.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward requires a scalar loss and a nonempty tape") {
  auto w = Tensor<double>::param({2}, ArrayX<double>());
  w.values_mut() << 1, 2;
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto y = mul(w, w);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
  Tape<double> empty;
  CHECK_THROWS_AS(empty.backward(sum(y)), std::invalid_argument);
}

TEST_CASE("constant tensors never accumulate gradient") {
  auto w = Tensor<double>::param({2}, ArrayX<double>());
  w.values_mut() << 1, 2;
  auto c = Tensor<double>::from_vector({2}, {5, 6});
  Tape<double> tape;
  TapeScope<double> scope(tape);
  tape.backward(sum(mul(w, c)));
  CHECK(w.has_grad());
  CHECK_FALSE(c.has_grad());
}

TEST_CASE("repeated backward calls accumulate leaf gradients") {
  auto w = Tensor<double>::param({2}, ArrayX<double>());
  w.values_mut() << 1, 2;
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto loss = sum(mul(w, w));
  tape.backward(loss);
  tape.backward(loss);
  CHECK(w.grad()[0] == doctest::Approx(4.0));
  CHECK(w.grad()[1] == doctest::Approx(8.0));
}

TEST_CASE("backward linearity: d(a*f + b*g) = a*df + b*dg") {
  Rng rng(3);
  auto w = oracle::random_tensor({5}, rng);
  const double a = 2.5, b = -1.25;

  auto run = [&](auto make_loss) {
    w.zero_grad();
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(make_loss());
    return ArrayX<double>(w.grad());
  };
  auto f = [&] { return sum(mul(w, w)); };
  auto g = [&] { return mean(exp(w)); };
  auto combined = [&] { return add(mul(f(), a), mul(g(), b)); };

  const ArrayX<double> df = run(f);
  const ArrayX<double> dg = run(g);
  const ArrayX<double> dc = run(combined);
  for (Index i = 0; i < w.size(); ++i)
    CHECK(dc[i] == doctest::Approx(a * df[i] + b * dg[i]).epsilon(1e-12));
}

TEST_CASE("composite graph gradient vs finite differences, 100 random shapes") {
  Rng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const Index rows = 1 + static_cast<Index>(rng.below(4));
    const Index cols = 1 + static_cast<Index>(rng.below(4));
    auto a = oracle::random_tensor({rows, cols}, rng);
    auto b = oracle::random_tensor({rows, cols}, rng);
    auto c = oracle::random_tensor({cols, rows}, rng);
    auto check = oracle::grad_check({a, b, c}, [&] {
      auto h = mul(add(a, b), sub(a, b));
      auto m = matmul(h, c);
      return add(mean(exp(clamp(m, -3.0, 3.0))), sum(mul(h, h)));
    });
    CAPTURE(trial);
    CHECK(check.max_rel_err < 1e-4);
  }
}

TEST_CASE("unary op gradients vs finite differences") {
  Rng rng(9);
  for (int trial = 0; trial < 25; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.below(6));
    auto x = oracle::random_tensor({n}, rng);
    // keep log's domain positive
    auto xs = oracle::random_tensor({n}, rng);
    for (Index i = 0; i < n; ++i) xs.values_mut()[i] = 0.5 + std::abs(xs.values()[i]);

    auto c1 = oracle::grad_check({x}, [&] { return sum(exp(x)); });
    CHECK(c1.max_rel_err < 1e-6);
    auto c2 = oracle::grad_check({xs}, [&] { return sum(log(xs)); });
    CHECK(c2.max_rel_err < 1e-6);
    auto c3 = oracle::grad_check({x}, [&] { return sum(neg(mul(x, 2.0))); });
    CHECK(c3.max_rel_err < 1e-6);
  }
}

TEST_CASE("reshape and slice round gradients back to the source") {
  Rng rng(15);
  auto x = oracle::random_tensor({2, 6}, rng);
  auto check = oracle::grad_check(
      {x}, [&] { return sum(mul(reshape(x, {3, 4}), reshape(x, {3, 4}))); });
  CHECK(check.max_rel_err < 1e-6);

  auto y = oracle::random_tensor({2, 5, 2}, rng);
  auto check2 =
      oracle::grad_check({y}, [&] { return sum(mul(slice(y, 1, 1, 3), slice(y, 1, 1, 3))); });
  CHECK(check2.max_rel_err < 1e-6);

  CHECK_THROWS_AS(reshape(x, Shape{5, 5}), std::invalid_argument);
  CHECK_THROWS_AS(slice(x, 1, 4, 4), std::invalid_argument);
}

TEST_CASE("detach stops gradient flow") {
  auto w = Tensor<double>::param({2}, ArrayX<double>());
  w.values_mut() << 3, 4;
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto loss = sum(mul(detach(w), w));
  tape.backward(loss);
  CHECK(w.grad()[0] == doctest::Approx(3.0));  // only the live factor contributes
  CHECK(w.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("forward and backward are bit-deterministic for a fixed seed") {
  auto run = [] {
    Rng rng(123);
    auto a = oracle::random_tensor({4, 3}, rng);
    auto b = oracle::random_tensor({3, 4}, rng);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto loss = mean(mul(matmul(a, b), matmul(a, b)));
    tape.backward(loss);
    return std::pair<double, ArrayX<double>>(loss.value(), a.grad());
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(l1 == l2);
  for (Index i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

}  // TEST_SUITE
