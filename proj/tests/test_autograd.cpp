#include <catch2/catch_amalgamated.hpp>

#include "dge/ops.hpp"
#include "dge/testing/gradcheck.hpp"
#include "helpers.hpp"

using namespace dge;
using namespace dge::testing;

TEST_CASE("finite differences agree with reverse mode for every op") {
  for (const auto& name : gradcheck_op_names()) {
    DYNAMIC_SECTION("op " << name) {
      OpCase c = make_op_case(name, 3);
      Rng rng(99);
      const GradCheckResult res = gradcheck(c, rng);
      INFO(res.op << " max_rel_err " << res.max_rel_err);
      REQUIRE(res.coords_checked >= 30);
      REQUIRE(res.ok());
    }
  }
}

TEST_CASE("chain rule through a composition") {
  // y = sigmoid(2x); dy/dx = 2*s*(1-s)
  GradTape tape;
  Tensor x({3}, {-1.0f, 0.0f, 2.0f});
  Tensor two = Tensor::full({3}, 2.0f);
  Tensor y = sigmoid(mul(x, two, &tape), &tape);
  Tensor seed = Tensor::ones({3});
  tape.backward(y, seed);
  for (int64_t i = 0; i < x.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-2.0 * double(x[i])));
    REQUIRE(double(x.grad()[i]) == Catch::Approx(2.0 * s * (1.0 - s)).epsilon(1e-4));
  }
}

TEST_CASE("gradients accumulate when a tensor is reused") {
  GradTape tape;
  Tensor x({2}, {1.5f, -0.5f});
  Tensor y = add(x, x, &tape);  // dy/dx = 2
  tape.backward(y, Tensor::ones({2}));
  REQUIRE(x.grad()[0] == 2.0f);
  REQUIRE(x.grad()[1] == 2.0f);
}

TEST_CASE("mul product rule routes each factor") {
  GradTape tape;
  Tensor a({2}, {3.0f, -2.0f});
  Tensor b({2}, {4.0f, 5.0f});
  Tensor y = mul(a, b, &tape);
  tape.backward(y, Tensor::ones({2}));
  REQUIRE(a.grad()[0] == 4.0f);
  REQUIRE(a.grad()[1] == 5.0f);
  REQUIRE(b.grad()[0] == 3.0f);
  REQUIRE(b.grad()[1] == -2.0f);
}

TEST_CASE("broadcast gradients reduce over expanded axes") {
  GradTape tape;
  Tensor a({1, 3}, {1.0f, 2.0f, 3.0f});
  Tensor b({2, 1}, {10.0f, 20.0f});
  Tensor y = add(a, b, &tape);  // [2,3]
  tape.backward(y, Tensor::ones({2, 3}));
  for (int i = 0; i < 3; ++i) REQUIRE(a.grad()[i] == 2.0f);  // summed over rows
  for (int i = 0; i < 2; ++i) REQUIRE(b.grad()[i] == 3.0f);  // summed over cols
}

TEST_CASE("split routes gradient to the source slice only") {
  GradTape tape;
  Rng rng(5);
  Tensor x = th::rand_tensor({1, 6, 2, 2}, rng);
  auto parts = split(x, {2, 4}, 1, &tape);
  tape.backward(parts[1], Tensor::ones({1, 4, 2, 2}));
  for (int c = 0; c < 6; ++c)
    for (int h = 0; h < 2; ++h)
      for (int w = 0; w < 2; ++w) {
        const float want = c >= 2 ? 1.0f : 0.0f;
        REQUIRE(x.grad()[x.offset4(0, c, h, w)] == want);
      }
}

TEST_CASE("backward replays nodes in reverse recording order") {
  GradTape tape;
  Tensor x({1}, {0.5f});
  Tensor h1 = silu(x, &tape);
  Tensor h2 = silu(h1, &tape);
  Tensor h3 = silu(h2, &tape);
  tape.backward(h3, Tensor::ones({1}));

  // independent double-precision chain rule
  auto dsilu = [](double v) {
    const double s = 1.0 / (1.0 + std::exp(-v));
    return s + v * s * (1.0 - s);
  };
  const double v1 = 0.5 / (1.0 + std::exp(-0.5));
  const double v2 = v1 / (1.0 + std::exp(-v1));
  const double want = dsilu(0.5) * dsilu(v1) * dsilu(v2);
  REQUIRE(double(x.grad()[0]) == Catch::Approx(want).epsilon(1e-4));
}

TEST_CASE("backward is deterministic") {
  for (int round = 0; round < 2; ++round) {
    GradTape tape;
    Rng rng(31);
    Tensor x = th::rand_tensor({1, 4, 8, 8}, rng);
    Tensor w = th::rand_tensor({4, 4, 3, 3}, rng);
    Tensor y = conv2d(x, w, nullptr, {1, 1, 1}, &tape);
    Tensor seed = th::rand_tensor({1, 4, 8, 8}, rng);
    tape.backward(y, seed);
    static std::vector<float> first;
    if (round == 0) {
      first.assign(x.grad(), x.grad() + x.size());
    } else {
      for (int64_t i = 0; i < x.size(); ++i) REQUIRE(x.grad()[i] == first[static_cast<size_t>(i)]);
    }
  }
}

TEST_CASE("tape-free calls record nothing") {
  GradTape tape;
  Tensor x({2}, {1.0f, 2.0f});
  sigmoid(x, nullptr);
  REQUIRE(tape.size() == 0);
  sigmoid(x, &tape);
  REQUIRE(tape.size() == 1);
}
