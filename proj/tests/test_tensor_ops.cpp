#include <catch2/catch_amalgamated.hpp>

#include "dge/flops.hpp"
#include "dge/ops.hpp"
#include "dge/testing/reference.hpp"
#include "helpers.hpp"

using namespace dge;
using namespace dge::testing;

TEST_CASE("conv2d matches the naive oracle on random shapes") {
  Rng rng(11);
  struct Case {
    int n, cin, cout, h, w, k, s, p, g;
  };
  const Case cases[] = {
      {1, 3, 4, 6, 5, 3, 1, 1, 1}, {2, 4, 6, 8, 8, 3, 2, 1, 2}, {1, 1, 1, 1, 1, 1, 1, 0, 1},
      {1, 8, 8, 5, 7, 1, 1, 0, 8}, {2, 6, 9, 7, 4, 3, 1, 0, 3}, {1, 2, 5, 8, 8, 5, 2, 1, 1},
  };
  for (const auto& c : cases) {
    Tensor x = th::rand_tensor({c.n, c.cin, c.h, c.w}, rng);
    Tensor w = th::rand_tensor({c.cout, c.cin / c.g, c.k, c.k}, rng);
    Tensor b = th::rand_tensor({c.cout}, rng);
    Tensor y = conv2d(x, w, &b, {c.s, c.p, c.g});
    DTensor want = conv2d_ref(DTensor::from(x), DTensor::from(w), nullptr, c.s, c.p, c.g);
    // oracle applies bias separately to exercise both paths
    DTensor db = DTensor::from(b);
    for (int ni = 0; ni < want.extent(0); ++ni)
      for (int co = 0; co < want.extent(1); ++co)
        for (int oi = 0; oi < want.extent(2); ++oi)
          for (int oj = 0; oj < want.extent(3); ++oj)
            want.at4(ni, co, oi, oj) += db.v[static_cast<size_t>(co)];
    REQUIRE(th::max_abs_diff(y, want) < 1e-5);
  }
}

TEST_CASE("conv2d identity kernel passes input through") {
  Tensor x({1, 2, 3, 3});
  for (int64_t i = 0; i < x.size(); ++i) x[i] = float(i) * 0.25f - 1.0f;
  Tensor w({2, 2, 1, 1});
  w.at4(0, 0, 0, 0) = 1.0f;
  w.at4(1, 1, 0, 0) = 1.0f;
  Tensor y = conv2d(x, w, nullptr, {1, 0, 1});
  REQUIRE(th::bitwise_equal(x, y));
}

TEST_CASE("conv2d rejects bad geometry") {
  Tensor x({1, 4, 4, 4});
  REQUIRE_THROWS_AS(conv2d(x, Tensor({2, 3, 1, 1}), nullptr, {1, 0, 1}), std::invalid_argument);
  REQUIRE_THROWS_AS(conv2d(x, Tensor({3, 2, 1, 1}), nullptr, {1, 0, 3}), std::invalid_argument);
  Tensor b({5});
  REQUIRE_THROWS_AS(conv2d(x, Tensor({2, 4, 1, 1}), &b, {1, 0, 1}), std::invalid_argument);
}

TEST_CASE("avg_pool2d matches oracle and constants") {
  Rng rng(12);
  Tensor x = th::rand_tensor({2, 3, 6, 8}, rng);
  REQUIRE(th::max_abs_diff(avg_pool2d(x, 2, 2), avg_pool2d_ref(DTensor::from(x), 2, 2)) < 1e-6);
  REQUIRE(th::max_abs_diff(avg_pool2d(x, 3, 1), avg_pool2d_ref(DTensor::from(x), 3, 1)) < 1e-6);

  Tensor c = Tensor::full({1, 1, 4, 4}, 3.5f);
  Tensor y = avg_pool2d(c, 2, 2);
  for (int64_t i = 0; i < y.size(); ++i) REQUIRE(y[i] == 3.5f);
}

TEST_CASE("adaptive_avg_pool2d covers non-divisible windows") {
  Rng rng(13);
  for (auto [h, w, oh, ow] : {std::array{7, 5, 3, 2}, std::array{4, 4, 4, 4},
                              std::array{9, 9, 1, 1}, std::array{5, 8, 2, 3}}) {
    Tensor x = th::rand_tensor({1, 2, h, w}, rng);
    Tensor y = adaptive_avg_pool2d(x, oh, ow);
    REQUIRE(y.shape() == std::vector<int>({1, 2, oh, ow}));
    REQUIRE(th::max_abs_diff(y, adaptive_avg_pool2d_ref(DTensor::from(x), oh, ow)) < 1e-6);
  }
  // size-preserving case is the identity
  Tensor x = th::rand_tensor({1, 3, 4, 6}, rng);
  REQUIRE(th::bitwise_equal(adaptive_avg_pool2d(x, 4, 6), x));
}

TEST_CASE("directional_avg_pool reduces one axis") {
  Rng rng(14);
  Tensor x = th::rand_tensor({2, 3, 4, 5}, rng);
  Tensor along_w = directional_avg_pool(x, SpatialAxis::Width);
  Tensor along_h = directional_avg_pool(x, SpatialAxis::Height);
  REQUIRE(along_w.shape() == std::vector<int>({2, 3, 4, 1}));
  REQUIRE(along_h.shape() == std::vector<int>({2, 3, 1, 5}));
  REQUIRE(th::max_abs_diff(along_h, directional_avg_pool_ref(DTensor::from(x), true)) < 1e-6);
  REQUIRE(th::max_abs_diff(along_w, directional_avg_pool_ref(DTensor::from(x), false)) < 1e-6);
}

TEST_CASE("bilinear_resize half-pixel sampling") {
  Rng rng(15);
  Tensor x = th::rand_tensor({1, 2, 4, 3}, rng);
  for (auto [oh, ow] : {std::array{8, 6}, std::array{2, 2}, std::array{7, 5}, std::array{4, 3}}) {
    Tensor y = bilinear_resize(x, oh, ow);
    REQUIRE(th::max_abs_diff(y, bilinear_resize_ref(DTensor::from(x), oh, ow)) < 1e-6);
  }
  REQUIRE(th::bitwise_equal(bilinear_resize(x, 4, 3), x));

  // exact 2x upsample of a 2x2 plane: corners keep source values
  Tensor s({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  Tensor u = bilinear_resize(s, 4, 4);
  REQUIRE(u.at4(0, 0, 0, 0) == 1.0f);
  REQUIRE(u.at4(0, 0, 0, 3) == 2.0f);
  REQUIRE(u.at4(0, 0, 3, 0) == 3.0f);
  REQUIRE(u.at4(0, 0, 3, 3) == 4.0f);
  REQUIRE(u.at4(0, 0, 1, 1) == Catch::Approx(1.0 * 0.5625 + 2.0 * 0.1875 + 3.0 * 0.1875 + 4.0 * 0.0625));
}

TEST_CASE("pad_edge2d replicates borders") {
  Tensor x({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  Tensor y = pad_edge2d(x, 1);
  REQUIRE(y.shape() == std::vector<int>({1, 1, 4, 4}));
  REQUIRE(y.at4(0, 0, 0, 0) == 1.0f);
  REQUIRE(y.at4(0, 0, 0, 3) == 2.0f);
  REQUIRE(y.at4(0, 0, 3, 0) == 3.0f);
  REQUIRE(y.at4(0, 0, 3, 3) == 4.0f);
  REQUIRE(y.at4(0, 0, 1, 1) == 1.0f);

  Rng rng(16);
  Tensor r = th::rand_tensor({2, 3, 3, 5}, rng);
  REQUIRE(th::max_abs_diff(pad_edge2d(r, 2), pad_edge2d_ref(DTensor::from(r), 2)) == 0.0);
}

TEST_CASE("matmul and transpose2d match oracles") {
  Rng rng(17);
  Tensor a = th::rand_tensor({4, 6}, rng);
  Tensor b = th::rand_tensor({6, 3}, rng);
  REQUIRE(th::max_abs_diff(matmul(a, b), matmul_ref(DTensor::from(a), DTensor::from(b))) < 1e-5);
  REQUIRE(th::max_abs_diff(transpose2d(a), transpose2d_ref(DTensor::from(a))) == 0.0);

  Tensor i2({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  REQUIRE(th::bitwise_equal(matmul(i2, i2), i2));
  REQUIRE_THROWS_AS(matmul(a, Tensor({5, 3})), std::invalid_argument);
}

TEST_CASE("broadcast add and mul") {
  Rng rng(18);
  Tensor a = th::rand_tensor({2, 3, 4, 1}, rng);
  Tensor b = th::rand_tensor({2, 1, 4, 5}, rng);
  REQUIRE(th::max_abs_diff(add(a, b), binary_ref(DTensor::from(a), DTensor::from(b), true)) < 1e-6);
  REQUIRE(th::max_abs_diff(mul(a, b), binary_ref(DTensor::from(a), DTensor::from(b), false)) < 1e-6);

  Tensor s = Tensor::full({1, 1, 1, 1}, 2.0f);
  Tensor y = mul(b, s);
  for (int64_t i = 0; i < y.size(); ++i) REQUIRE(y[i] == b[i] * 2.0f);

  REQUIRE_THROWS_AS(add(Tensor({2, 3}), Tensor({3, 2})), std::invalid_argument);
}

TEST_CASE("activation values") {
  Tensor x({5}, {-4.0f, -1.0f, 0.0f, 1.0f, 4.0f});
  Tensor s = sigmoid(x);
  REQUIRE(s[2] == 0.5f);
  REQUIRE(s[1] == Catch::Approx(1.0 / (1.0 + std::exp(1.0))));
  REQUIRE(s[0] + s[4] == Catch::Approx(1.0).margin(1e-6));
  for (int64_t i = 0; i < s.size(); ++i) {
    REQUIRE(s[i] > 0.0f);
    REQUIRE(s[i] < 1.0f);
  }

  Tensor z = silu(x);
  REQUIRE(z[2] == 0.0f);
  REQUIRE(z[3] == Catch::Approx(1.0 / (1.0 + std::exp(-1.0))));

  Rng rng(19);
  Tensor r = th::rand_tensor({3, 7}, rng, -30.0f, 30.0f);
  REQUIRE(th::max_abs_diff(sigmoid(r), sigmoid_ref(DTensor::from(r))) < 1e-6);
  REQUIRE(th::max_abs_diff(silu(r), silu_ref(DTensor::from(r))) < 1e-4);
}

TEST_CASE("softmax normalizes along the requested axis") {
  Rng rng(20);
  Tensor x = th::rand_tensor({2, 5, 3}, rng, -8.0f, 8.0f);
  for (int axis : {0, 1, 2}) {
    Tensor y = softmax(x, axis);
    REQUIRE(th::max_abs_diff(y, softmax_ref(DTensor::from(x), axis)) < 1e-6);
  }
  Tensor y = softmax(x, 1);
  for (int n = 0; n < 2; ++n)
    for (int k = 0; k < 3; ++k) {
      double sum = 0;
      for (int j = 0; j < 5; ++j) sum += y[(int64_t(n) * 5 + j) * 3 + k];
      REQUIRE(sum == Catch::Approx(1.0).margin(1e-5));
    }
  // large-magnitude logits stay finite (max-shifted)
  Tensor big({1, 2}, {500.0f, -500.0f});
  Tensor p = softmax(big, 1);
  REQUIRE(p[0] == Catch::Approx(1.0).margin(1e-6));
  REQUIRE(std::isfinite(p[1]));
}

TEST_CASE("norm_batch_inference applies stored statistics") {
  Rng rng(21);
  Tensor x = th::rand_tensor({2, 3, 4, 4}, rng);
  Tensor mean = th::rand_tensor({3}, rng, -1.0f, 1.0f);
  Tensor rstd = th::rand_tensor({3}, rng, 0.5f, 2.0f);
  Tensor gamma = th::rand_tensor({3}, rng, 0.5f, 2.0f);
  Tensor beta = th::rand_tensor({3}, rng, -1.0f, 1.0f);
  Tensor y = norm_batch_inference(x, mean, rstd, gamma, beta);
  REQUIRE(th::max_abs_diff(y, norm_batch_inference_ref(DTensor::from(x), DTensor::from(mean),
                                                       DTensor::from(rstd), DTensor::from(gamma),
                                                       DTensor::from(beta))) < 1e-5);
  // identity statistics: y == gamma*x + beta with gamma=1, beta=0
  Tensor y_id = norm_batch_inference(x, Tensor::zeros({3}), Tensor::ones({3}), Tensor::ones({3}),
                                     Tensor::zeros({3}));
  REQUIRE(th::max_abs_diff(y_id, x) == 0.0);
}

TEST_CASE("norm_group standardizes each group") {
  Rng rng(22);
  Tensor x = th::rand_tensor({2, 6, 3, 4}, rng);
  Tensor gamma = Tensor::ones({6});
  Tensor beta = Tensor::zeros({6});
  Tensor y = norm_group(x, 3, gamma, beta);
  REQUIRE(th::max_abs_diff(y, norm_group_ref(DTensor::from(x), 3, DTensor::from(gamma),
                                             DTensor::from(beta), double(kNormEps))) < 1e-5);
  // each (sample, group) slab has near-zero mean and near-unit variance
  const int group_elems = 2 * 3 * 4;
  for (int n = 0; n < 2; ++n)
    for (int g = 0; g < 3; ++g) {
      double sum = 0, sq = 0;
      for (int c = g * 2; c < g * 2 + 2; ++c)
        for (int h = 0; h < 3; ++h)
          for (int w = 0; w < 4; ++w) {
            const double v = y.at4(n, c, h, w);
            sum += v;
            sq += v * v;
          }
      REQUIRE(sum / group_elems == Catch::Approx(0.0).margin(1e-5));
      REQUIRE(sq / group_elems == Catch::Approx(1.0).margin(1e-3));
    }
  REQUIRE_THROWS_AS(norm_group(x, 4, Tensor::ones({6}), Tensor::zeros({6})), std::invalid_argument);
}

TEST_CASE("layer_norm matches oracle") {
  Rng rng(23);
  Tensor x = th::rand_tensor({5, 8}, rng);
  Tensor gamma = th::rand_tensor({8}, rng, 0.5f, 1.5f);
  Tensor beta = th::rand_tensor({8}, rng, -0.5f, 0.5f);
  REQUIRE(th::max_abs_diff(layer_norm(x, gamma, beta),
                           layer_norm_ref(DTensor::from(x), DTensor::from(gamma),
                                          DTensor::from(beta), double(kNormEps))) < 1e-5);
}

TEST_CASE("concat and split are inverse") {
  Rng rng(24);
  Tensor a = th::rand_tensor({1, 2, 3, 4}, rng);
  Tensor b = th::rand_tensor({1, 5, 3, 4}, rng);
  Tensor c = th::rand_tensor({1, 1, 3, 4}, rng);
  Tensor whole = concat({a, b, c}, 1);
  REQUIRE(whole.shape() == std::vector<int>({1, 8, 3, 4}));
  auto parts = split(whole, {2, 5, 1}, 1);
  REQUIRE(th::bitwise_equal(parts[0], a));
  REQUIRE(th::bitwise_equal(parts[1], b));
  REQUIRE(th::bitwise_equal(parts[2], c));
  Tensor along0 = concat({a, a}, 0);
  REQUIRE(along0.shape() == std::vector<int>({2, 2, 3, 4}));
  REQUIRE_THROWS_AS(concat({a, Tensor({1, 2, 3, 5})}, 1), std::invalid_argument);
  REQUIRE_THROWS_AS(split(a, {1, 2}, 1), std::invalid_argument);
}

TEST_CASE("reshape preserves data and rejects bad sizes") {
  Rng rng(25);
  Tensor x = th::rand_tensor({2, 3, 4}, rng);
  Tensor y = reshape(x, {6, 4});
  REQUIRE(y.size() == x.size());
  for (int64_t i = 0; i < x.size(); ++i) REQUIRE(x[i] == y[i]);
  REQUIRE_THROWS_AS(reshape(x, {5, 5}), std::invalid_argument);
}

TEST_CASE("flop meter charges the documented formulas") {
  Rng rng(26);
  FlopMeter meter;
  {
    FlopScope scope(meter);
    Tensor x = th::rand_tensor({1, 2, 8, 8}, rng);
    Tensor w = th::rand_tensor({4, 2, 3, 3}, rng);
    Tensor b = th::rand_tensor({4}, rng);
    conv2d(x, w, &b, {1, 1, 1});
  }
  // 2*k*k*cin*cout*oh*ow + bias = 2*9*2*(4*64) + 256
  REQUIRE(meter.by_category[int(FlopCategory::Conv)] == 9472);
  REQUIRE(meter.total() == 9472);

  FlopMeter move;
  {
    FlopScope scope(move);
    Tensor x = th::rand_tensor({1, 4, 6, 6}, rng);
    Tensor same = bilinear_resize(x, 6, 6);
    Tensor padded = pad_edge2d(x, 1);
    auto parts = split(x, {2, 2}, 1);
    concat(parts, 1);
    reshape(x, {4, 36});
    transpose2d(reshape(x, {4, 36}));
  }
  REQUIRE(move.total() == 0);

  FlopMeter mm;
  {
    FlopScope scope(mm);
    matmul(Tensor({3, 5}), Tensor({5, 7}));
  }
  REQUIRE(mm.by_category[int(FlopCategory::MatMul)] == 2 * 3 * 5 * 7);

  FlopMeter act;
  {
    FlopScope scope(act);
    Tensor x = th::rand_tensor({2, 10}, rng);
    sigmoid(x);
    silu(x);
    softmax(x, 1);
    add(x, x);
  }
  REQUIRE(act.by_category[int(FlopCategory::Softmax)] == 80);
  REQUIRE(act.by_category[int(FlopCategory::Elementwise)] == 4 * 20 + 5 * 20 + 20);
}

TEST_CASE("kernels are repeatable within a process") {
  Rng rng(27);
  Tensor x = th::rand_tensor({2, 8, 16, 16}, rng);
  Tensor w = th::rand_tensor({8, 8, 3, 3}, rng);
  Tensor a = conv2d(x, w, nullptr, {1, 1, 1});
  Tensor b = conv2d(x, w, nullptr, {1, 1, 1});
  REQUIRE(th::bitwise_equal(a, b));
}
