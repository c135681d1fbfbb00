// Copyright (c) the quip authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>

#include "quip/error.hpp"
#include "quip/tensor.hpp"
#include "support.hpp"

namespace {

using namespace quip::tensor;
using quip::testing::gradient_error;
using quip::testing::random_tensor;

/// Values bounded away from the kinks of relu and abs.
Tensor away_from_zero(Shape shape, std::mt19937_64& rng) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = t[i] < 0 ? t[i] - 0.1 : t[i] + 0.1;
  return t;
}

/// sum(f(x) * w) with a random constant w, so every output coordinate matters.
Var weighted_sum(Tape& tape, Var y, std::mt19937_64& rng) {
  return sum(mul(y, tape.constant(random_tensor(y.shape(), rng))));
}

double unary_error(Var (*op)(Var), std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Parameter> ps{Parameter("x", away_from_zero({4, 5}, rng))};
  const std::uint64_t wseed = rng();
  return gradient_error(ps, [&](Tape& t, std::vector<Var>& v) {
    std::mt19937_64 wr(wseed);
    return weighted_sum(t, op(v[0]), wr);
  });
}

double binary_error(Var (*op)(Var, Var), std::uint64_t seed, bool broadcast) {
  std::mt19937_64 rng(seed);
  std::vector<Parameter> ps{Parameter("a", random_tensor({3, 4, 5}, rng)),
                            Parameter("b", random_tensor(broadcast ? Shape{5} : Shape{3, 4, 5}, rng))};
  const std::uint64_t wseed = rng();
  return gradient_error(ps, [&](Tape& t, std::vector<Var>& v) {
    std::mt19937_64 wr(wseed);
    return weighted_sum(t, op(v[0], v[1]), wr);
  });
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("relu zeroes negatives") {
    Tape tape;
    Var y = relu(tape.constant(Tensor({3}, {-1.0, 0.0, 2.0})));
    CHECK(y.value().values() == std::vector<double>{0.0, 0.0, 2.0});
  }

  TEST_CASE("identity matmul returns the vector") {
    Tape tape;
    Var y = matmul(tape.constant(Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1})), tape.constant(Tensor({3}, {0.5, -2, 7})));
    CHECK(y.value().values() == std::vector<double>{0.5, -2, 7});
  }

  TEST_CASE("conv2d of ones with a ones kernel sums the neighborhood") {
    Tape tape;
    Var y = conv2d(tape.constant(Tensor({1, 1, 3, 3}, 1.0)), tape.constant(Tensor({1, 1, 3, 3}, 1.0)), Var{});
    CHECK(y.value()[4] == 9.0);
    CHECK(y.value()[0] == 4.0);
    CHECK(y.value()[1] == 6.0);
  }

  TEST_CASE("replicate padding repeats the edge") {
    Tape tape;
    Var y = conv2d(tape.constant(Tensor({1, 1, 3, 3}, 1.0)), tape.constant(Tensor({1, 1, 3, 3}, 1.0)), Var{},
                   Padding::replicate);
    for (double v : y.value().values()) CHECK(v == 9.0);
  }

  TEST_CASE("sum of squares has gradient 2p") {
    Parameter p("p", Tensor({2}, {1.0, -2.0}));
    Tape tape;
    tape.backward(sum(square(tape.parameter(p))));
    CHECK(p.grad.values() == std::vector<double>{2.0, -4.0});
  }

  TEST_CASE("relu is flat below zero") {
    Parameter p("p", Tensor({1}, {-1.0}));
    Tape tape;
    tape.backward(sum(relu(tape.parameter(p))));
    CHECK(p.grad[0] == 0.0);
  }

  TEST_CASE("relu subgradient at zero is zero") {
    Parameter p("p", Tensor({1}, {0.0}));
    Tape tape;
    tape.backward(sum(relu(tape.parameter(p))));
    CHECK(p.grad[0] == 0.0);
  }

  TEST_CASE("three-layer composition matches central differences") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed);
      std::vector<Parameter> ps{Parameter("w1", random_tensor({4, 3}, rng)), Parameter("w2", random_tensor({4, 4}, rng)),
                                Parameter("w3", random_tensor({2, 4}, rng)), Parameter("b", random_tensor({4}, rng))};
      const Tensor x = random_tensor({3, 5}, rng);
      const double err = gradient_error(ps, [&](Tape& t, std::vector<Var>& v) {
        Var h = relu(matmul(v[0], t.constant(x)));
        h = abs(add(transpose(matmul(v[1], h)), v[3]));
        return mean(square(matmul(v[2], transpose(h))));
      });
      REQUIRE(err < 1e-4);
    }
  }

  TEST_CASE("every differentiable op matches central differences over 100 seeds") {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed * 7919 + 1);
      worst = std::max(worst, unary_error(relu, rng()));
      worst = std::max(worst, unary_error(abs, rng()));
      worst = std::max(worst, unary_error(square, rng()));
      worst = std::max(worst, unary_error(transpose, rng()));
      worst = std::max(worst, binary_error(add, rng(), false));
      worst = std::max(worst, binary_error(add, rng(), true));
      worst = std::max(worst, binary_error(sub, rng(), false));
      worst = std::max(worst, binary_error(sub, rng(), true));
      worst = std::max(worst, binary_error(mul, rng(), false));
      worst = std::max(worst, binary_error(mul, rng(), true));

      {
        std::vector<Parameter> ps{Parameter("x", random_tensor({2, 3, 4}, rng)), Parameter("s", random_tensor({1}, rng))};
        const std::uint64_t w = rng();
        worst = std::max(worst, gradient_error(ps, [&](Tape& t, std::vector<Var>& v) {
                           std::mt19937_64 wr(w);
                           return weighted_sum(t, scale(v[0], v[1]), wr);
                         }));
      }
      {
        std::vector<Parameter> ps{Parameter("a", random_tensor({4, 6}, rng)), Parameter("b", random_tensor({6, 3}, rng)),
                                  Parameter("v", random_tensor({6}, rng))};
        const std::uint64_t w = rng();
        worst = std::max(worst, gradient_error(ps, [&](Tape& t, std::vector<Var>& v) {
                           std::mt19937_64 wr(w);
                           return add(weighted_sum(t, matmul(v[0], v[1]), wr), weighted_sum(t, matmul(v[0], v[2]), wr));
                         }));
      }
      {
        std::vector<Parameter> ps{Parameter("x", random_tensor({3, 4, 5}, rng))};
        const std::uint64_t w = rng();
        worst = std::max(worst, gradient_error(ps, [&](Tape& t, std::vector<Var>& v) {
                           std::mt19937_64 wr(w);
                           Var total = weighted_sum(t, sum_axis(v[0], 0), wr);
                           total = add(total, weighted_sum(t, sum_axis(v[0], 1), wr));
                           total = add(total, weighted_sum(t, sum_axis(v[0], 2), wr));
                           total = add(total, weighted_sum(t, slice(v[0], 1, 1, 3), wr));
                           total = add(total, weighted_sum(t, reshape(v[0], {12, 5}), wr));
                           return add(total, add(mean(square(v[0])), sum(v[0])));
                         }));
      }
      {
        std::vector<Parameter> ps{Parameter("a", random_tensor({2, 3}, rng)), Parameter("b", random_tensor({2, 4}, rng))};
        const std::uint64_t w = rng();
        worst = std::max(worst, gradient_error(ps, [&](Tape& t, std::vector<Var>& v) {
                           std::mt19937_64 wr(w);
                           const Var parts[] = {v[0], v[1]};
                           return weighted_sum(t, concat(parts, 1), wr);
                         }));
      }
      for (Padding pad : {Padding::zero, Padding::replicate}) {
        std::vector<Parameter> ps{Parameter("x", random_tensor({2, 2, 4, 4}, rng)),
                                  Parameter("k", random_tensor({3, 2, 3, 3}, rng)), Parameter("b", random_tensor({3}, rng))};
        const std::uint64_t w = rng();
        worst = std::max(worst, gradient_error(ps, [&](Tape& t, std::vector<Var>& v) {
                           std::mt19937_64 wr(w);
                           return weighted_sum(t, conv2d(v[0], v[1], v[2], pad), wr);
                         }));
      }
      {
        std::vector<std::uint32_t> index(24);
        for (auto& i : index) i = static_cast<std::uint32_t>(rng() % 10);
        auto plan = std::make_shared<const ScatterPlan>(ScatterPlan::build(index, 10));
        std::vector<Parameter> ps{Parameter("x", random_tensor({4, 6}, rng))};
        const std::uint64_t w = rng();
        worst = std::max(worst, gradient_error(ps, [&](Tape& t, std::vector<Var>& v) {
                           std::mt19937_64 wr(w);
                           return weighted_sum(t, scatter_mean(v[0], plan), wr);
                         }));
      }
    }
    CHECK(worst < 1e-4);
  }

  TEST_CASE("scatter_mean averages contributions") {
    auto plan = std::make_shared<const ScatterPlan>(ScatterPlan::build({0, 1, 1, 2}, 4));
    Tape tape;
    Var y = scatter_mean(tape.constant(Tensor({4}, {1.0, 0.0, 1.0, 3.0})), plan);
    CHECK(y.value().values() == std::vector<double>{1.0, 0.5, 3.0, 0.0});
  }

  TEST_CASE("forward ops are bit-identical across repeats") {
    std::mt19937_64 rng(5);
    const Tensor x = random_tensor({2, 3, 6, 6}, rng), k = random_tensor({4, 3, 3, 3}, rng);
    auto run = [&] {
      Tape tape;
      Var y = conv2d(tape.constant(x), tape.constant(k), Var{});
      return relu(matmul(reshape(y, {8, 36}), transpose(reshape(y, {8, 36})))).value();
    };
    CHECK(run() == run());
  }

  TEST_CASE("gradients accumulate across backward passes") {
    Parameter p("p", Tensor({2}, {1.0, 3.0}));
    {
      Tape tape;
      tape.backward(sum(square(tape.parameter(p))));
    }
    {
      Tape tape;
      Var v = tape.parameter(p);
      tape.backward(sum(mul(v, tape.constant(Tensor({2}, {1.0, 1.0})))));
    }
    CHECK(p.grad.values() == std::vector<double>{3.0, 7.0});
    p.zero_grad();
    CHECK(p.grad.values() == std::vector<double>{0.0, 0.0});
  }

  TEST_CASE("backward rejects a non-scalar loss and a consumed tape") {
    Parameter p("p", Tensor({2}, 1.0));
    Tape tape;
    Var v = tape.parameter(p);
    CHECK_THROWS(tape.backward(v));
    Var l = sum(v);
    tape.backward(l);
    CHECK(tape.consumed());
    CHECK_THROWS(tape.backward(l));
  }

  TEST_CASE("backward rejects a loss from another tape") {
    Tape a, b;
    Var l = sum(a.constant(Tensor({2}, 1.0)));
    CHECK_THROWS(b.backward(l));
  }

  TEST_CASE("shape errors name the op and both shapes") {
    Tape tape;
    Var a = tape.constant(Tensor({2, 3})), b = tape.constant(Tensor({4}));
    try {
      (void)add(a, b);
      FAIL("no throw");
    } catch (const quip::ShapeError& e) {
      const std::string what = e.what();
      CHECK(what.find("add") != std::string::npos);
      CHECK(what.find(to_string({2, 3})) != std::string::npos);
      CHECK(what.find(to_string({4})) != std::string::npos);
    }
    CHECK_THROWS_AS(matmul(a, a), quip::ShapeError);
    CHECK_THROWS_AS(conv2d(tape.constant(Tensor({1, 1, 3, 3})), tape.constant(Tensor({1, 1, 2, 2})), Var{}),
                    quip::ShapeError);
  }

  TEST_CASE("tensor shape and data agree") {
    CHECK_THROWS(Tensor({2, 2}, std::vector<double>{1, 2, 3}));
    CHECK(Tensor({2, 3, 4}).size() == 24);
  }

  TEST_CASE("adam first step moves by lr against the gradient") {
    Parameter p("p", Tensor({1}, {0.0}));
    p.grad[0] = 0.5;
    AdamState s(p.value.shape());
    adam_step(p, s, 1e-3);
    // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
    CHECK(p.value[0] == doctest::Approx(-1e-3 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
    CHECK(s.step == 1);
    CHECK(p.grad[0] == 0.5);
    CHECK(s.second_moment[0] >= 0.0);
  }

  TEST_CASE("adam with zero gradient leaves the parameter") {
    Parameter p("p", Tensor({3}, {0.1, -0.2, 0.3}));
    AdamState s(p.value.shape());
    adam_step(p, s, 1e-3);
    CHECK(p.value.values() == std::vector<double>{0.1, -0.2, 0.3});
  }

  TEST_CASE("two identical adam steps move monotonically") {
    Parameter p("p", Tensor({2}, {0.0, 0.0}));
    p.grad = Tensor({2}, {0.5, -2.0});
    AdamState s(p.value.shape());
    adam_step(p, s, 1e-3);
    const auto first = p.value;
    adam_step(p, s, 1e-3);
    CHECK(first[0] < 0.0);
    CHECK(p.value[0] < first[0]);
    CHECK(first[1] > 0.0);
    CHECK(p.value[1] > first[1]);
    // Constant gradient keeps m_hat = g and v_hat = g^2 at step 2 as well.
    CHECK(p.value[0] == doctest::Approx(2 * first[0]).epsilon(1e-9));
  }

  TEST_CASE("adam rejects a non-finite gradient by name") {
    Parameter p("inverse.weight", Tensor({2}, 0.0));
    p.grad[1] = std::nan("");
    AdamState s(p.value.shape());
    try {
      adam_step(p, s, 1e-3);
      FAIL("no throw");
    } catch (const quip::NumericError& e) {
      CHECK(std::string(e.what()).find("inverse.weight") != std::string::npos);
    }
  }
}
