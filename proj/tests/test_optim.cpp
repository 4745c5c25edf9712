#include <cmath>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "tcgan/optim.hpp"

using namespace tcgan;

TEST_SUITE("optim") {

TEST_CASE("first step moves the parameter by about -alpha*sign(g)") {
  auto w = Tensor<double>::param({1}, ArrayX<double>::Constant(1, 5.0));
  Adam<double> adam({w}, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    tape.backward(mul(w, 3.0));  // g = +3
  }
  adam.step();
  CHECK(w.values()[0] == doctest::Approx(5.0 - 0.1).epsilon(1e-6));
  CHECK(adam.step_count() == 1);
}

TEST_CASE("zero gradient leaves the parameter unchanged but advances t") {
  auto w = Tensor<double>::param({2}, ArrayX<double>::Constant(2, 1.5));
  Adam<double> adam({w}, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  adam.zero_grad();
  adam.step();
  CHECK(w.values()[0] == 1.5);
  CHECK(w.values()[1] == 1.5);
  CHECK(adam.step_count() == 1);
}

TEST_CASE("missing gradient is an error") {
  auto w = Tensor<double>::param({2}, ArrayX<double>::Constant(2, 1.0));
  Adam<double> adam({w}, AdamConfig{});
  CHECK_THROWS_AS(adam.step(), std::runtime_error);
}

TEST_CASE("200 steps on (w-3)^2 converge near 3") {
  auto w = Tensor<double>::param({1}, ArrayX<double>::Zero(1));
  Adam<double> adam({w}, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 200; ++i) {
    adam.zero_grad();
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto diff = add(w, -3.0);
    tape.backward(sum(mul(diff, diff)));
    adam.step();
  }
  CHECK(std::abs(w.values()[0] - 3.0) < 0.1);
}

TEST_CASE("update magnitude stays bounded for any gradient scale") {
  Rng rng(33);
  auto w = Tensor<double>::param({1}, ArrayX<double>::Zero(1));
  const double alpha = 0.05;
  Adam<double> adam({w}, AdamConfig{alpha, 0.9, 0.999, 1e-8});
  double previous = w.values()[0];
  for (int t = 1; t <= 300; ++t) {
    const double scale = std::pow(10.0, rng.uniform(-3.0, 5.0));
    adam.zero_grad();
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(mul(w, scale * (rng.uniform() < 0.5 ? -1.0 : 1.0)));
    adam.step();
    const double delta = std::abs(w.values()[0] - previous);
    previous = w.values()[0];
    if (t >= 5) CHECK(delta <= 2.0 * alpha);
  }
}

TEST_CASE("identical streams give bit-identical trajectories") {
  auto run = [] {
    Rng rng(77);
    auto w = Tensor<double>::param({4}, ArrayX<double>::Zero(4));
    Adam<double> adam({w}, AdamConfig{0.01, 0.5, 0.9, 1e-8});
    for (int i = 0; i < 50; ++i) {
      adam.zero_grad();
      Tape<double> tape;
      TapeScope<double> scope(tape);
      auto noise = oracle::random_tensor({4}, rng, false);
      tape.backward(sum(mul(w, noise)));
      adam.step();
    }
    return ArrayX<double>(w.values());
  };
  const ArrayX<double> a = run();
  const ArrayX<double> b = run();
  for (Index i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("moment shapes always match their parameters") {
  auto w1 = Tensor<double>::param({3, 2}, ArrayX<double>::Zero(6));
  auto w2 = Tensor<double>::param({5}, ArrayX<double>::Zero(5));
  Adam<double> adam({w1, w2}, AdamConfig{});
  adam.zero_grad();
  adam.step();
  CHECK(adam.params()[0].size() == 6);
  CHECK(adam.params()[1].size() == 5);
}

}  // TEST_SUITE
