#include <catch2/catch_amalgamated.hpp>

#include "dge/blocks.hpp"
#include "dge/testing/reference.hpp"
#include "helpers.hpp"

using namespace dge;
using namespace dge::testing;

namespace {

void randomize_store(WeightStore& store, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  for (const auto& [name, t] : store.entries()) {
    Tensor alias = t;  // shares storage with the module parameter
    const bool is_rstd = name.size() > 4 && name.rfind("rstd") == name.size() - 4;
    for (int64_t i = 0; i < alias.size(); ++i) {
      const float u = static_cast<float>(rng.uniform());
      alias[i] = is_rstd ? 0.25f + u * 2.0f : lo + u * (hi - lo);
    }
  }
}

}  // namespace

TEST_CASE("conv-bn fold matches the two-step forward") {
  Rng rng(41);
  WeightStore store;
  ParamRegistry reg = ParamRegistry::initializing(store, rng);
  ConvBN cb(reg, "cb", 3, 5, 3, 1, 1);
  randomize_store(store, rng);

  Tensor x = th::rand_tensor({2, 3, 6, 6}, rng);
  Tensor two_step = cb.forward(x);
  Tensor fw, fb;
  cb.fold_into(&fw, &fb);
  Tensor folded = conv2d(x, fw, &fb, cb.opts);
  REQUIRE(th::max_abs_diff(two_step, folded) < 1e-5);
}

TEST_CASE("conv-bn at fresh init is the plain convolution") {
  Rng rng(42);
  WeightStore store;
  ParamRegistry reg = ParamRegistry::initializing(store, rng);
  ConvBN cb(reg, "cb", 2, 4, 3, 1, 1);
  Tensor x = th::rand_tensor({1, 2, 5, 5}, rng);
  REQUIRE(th::max_abs_diff(cb.forward(x), conv2d(x, cb.w, nullptr, cb.opts)) == 0.0);
}

TEST_CASE("conv-bn-act applies silu and default padding") {
  Rng rng(43);
  WeightStore store;
  ParamRegistry reg = ParamRegistry::initializing(store, rng);
  ConvBNAct m(reg, "m", 3, 4, 3);
  Tensor x = th::rand_tensor({1, 3, 8, 8}, rng);
  Tensor y = m.forward(x);
  REQUIRE(y.shape() == std::vector<int>({1, 4, 8, 8}));  // pad defaults to k/2
  REQUIRE(th::max_abs_diff(y, silu(m.cb.forward(x))) == 0.0);
}

TEST_CASE("rep conv fused equals multi-branch under random parameters") {
  for (uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed * 101 + 7);
    WeightStore store;
    ParamRegistry reg = ParamRegistry::initializing(store, rng);
    const bool square = seed % 2 == 0;
    const int cin = 3 + int(seed % 4);
    const int cout = square ? cin : cin + 2;
    RepConv rc(reg, "rc", cin, cout);
    REQUIRE(rc.has_identity == square);
    randomize_store(store, rng);
    rc.fuse();

    Tensor x = th::rand_tensor({2, cin, 7, 6}, rng);
    Tensor fused = rc.forward(x, nullptr, RepMode::Fused);
    Tensor multi = rc.forward(x, nullptr, RepMode::MultiBranch);
    REQUIRE(th::max_abs_diff(fused, multi) < 1e-4);
  }
}

TEST_CASE("rep block of depth zero is the identity") {
  Rng rng(44);
  WeightStore store;
  ParamRegistry reg = ParamRegistry::initializing(store, rng);
  RepBlock block(reg, "b", 4, 4, 0);
  REQUIRE(store.size() == 0);
  Tensor x = th::rand_tensor({1, 4, 3, 3}, rng);
  REQUIRE(th::bitwise_equal(block.forward(x), x));
}

TEST_CASE("rep block stacks units in order") {
  Rng rng(45);
  WeightStore store;
  ParamRegistry reg = ParamRegistry::initializing(store, rng);
  RepBlock block(reg, "b", 3, 5, 3);
  REQUIRE(store.has("b.r0.b3.conv.w"));
  REQUIRE(store.has("b.r2.b1.bn.gamma"));
  REQUIRE(store.get("b.r0.b3.conv.w").shape() == std::vector<int>({5, 3, 3, 3}));
  REQUIRE(store.get("b.r1.b3.conv.w").shape() == std::vector<int>({5, 5, 3, 3}));

  Tensor x = th::rand_tensor({1, 3, 6, 6}, rng);
  Tensor manual = x;
  for (const auto& u : block.units) manual = u.forward(manual);
  REQUIRE(th::bitwise_equal(block.forward(x), manual));
}

TEST_CASE("bottleneck keeps the residual path") {
  Rng rng(46);
  WeightStore store;
  ParamRegistry reg = ParamRegistry::initializing(store, rng);
  Bottleneck bn(reg, "m", 4);
  Tensor x = th::rand_tensor({1, 4, 5, 5}, rng);
  Tensor want = add(x, bn.cv2.forward(bn.cv1.forward(x)));
  REQUIRE(th::bitwise_equal(bn.forward(x), want));
}

TEST_CASE("c2f depth zero reduces to expand-split-concat-project") {
  Rng rng(47);
  WeightStore store;
  ParamRegistry reg = ParamRegistry::initializing(store, rng);
  C2f stage(reg, "s", 6, 8, 0);
  Tensor x = th::rand_tensor({1, 6, 4, 4}, rng);
  Tensor y = stage.forward(x);
  REQUIRE(y.shape() == std::vector<int>({1, 8, 4, 4}));
  Tensor manual = stage.cv2.forward(stage.cv1.forward(x));
  REQUIRE(th::bitwise_equal(y, manual));
}

TEST_CASE("c2f depth three composes bottlenecks on the working half") {
  Rng rng(48);
  WeightStore store;
  ParamRegistry reg = ParamRegistry::initializing(store, rng);
  C2f stage(reg, "s", 4, 6, 3);
  REQUIRE(store.has("s.m0.cv1.conv.w"));
  REQUIRE(store.has("s.m2.cv2.conv.w"));
  REQUIRE(store.get("s.cv2.conv.w").shape() == std::vector<int>({6, (2 + 3) * 3, 1, 1}));

  Tensor x = th::rand_tensor({2, 4, 4, 4}, rng);
  Tensor expanded = stage.cv1.forward(x);
  auto parts = split(expanded, {3, 3}, 1);
  std::vector<Tensor> cat = {parts[0], parts[1]};
  Tensor cur = parts[1];
  for (const auto& b : stage.bottlenecks) {
    cur = b.forward(cur);
    cat.push_back(cur);
  }
  Tensor want = stage.cv2.forward(concat(cat, 1));
  REQUIRE(th::bitwise_equal(stage.forward(x), want));
}

TEST_CASE("linear is matmul plus bias") {
  Rng rng(49);
  WeightStore store;
  ParamRegistry reg = ParamRegistry::initializing(store, rng);
  Linear lin(reg, "l", 5, 3);
  randomize_store(store, rng);
  Tensor x = th::rand_tensor({4, 5}, rng);
  Tensor y = lin.forward(x);
  DTensor want = matmul_ref(DTensor::from(x), DTensor::from(lin.w));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) want.v[static_cast<size_t>(i * 3 + j)] += double(lin.b[j]);
  REQUIRE(th::max_abs_diff(y, want) < 1e-5);
}

TEST_CASE("attention rows are convex combinations of values") {
  Rng rng(50);
  WeightStore store;
  ParamRegistry reg = ParamRegistry::initializing(store, rng);
  MHSA attn(reg, "a", 8, 2);
  randomize_store(store, rng, -0.5f, 0.5f);
  Tensor x = th::rand_tensor({6, 8}, rng);
  Tensor y = attn.forward(x);
  REQUIRE(y.shape() == std::vector<int>({6, 8}));

  // single-head path recomputed with the double-precision reference kernels
  MHSA one(reg, "a1", 4, 1);
  randomize_store(store, rng, -0.5f, 0.5f);
  Tensor x1 = th::rand_tensor({3, 4}, rng);
  DTensor dx = DTensor::from(x1);
  auto lin_ref = [](const DTensor& in, const Linear& l) {
    DTensor out = matmul_ref(in, DTensor::from(l.w));
    for (int i = 0; i < out.extent(0); ++i)
      for (int j = 0; j < out.extent(1); ++j)
        out.v[static_cast<size_t>(i * out.extent(1) + j)] += double(l.b[j]);
    return out;
  };
  DTensor dq = lin_ref(dx, one.q), dk = lin_ref(dx, one.k), dv = lin_ref(dx, one.v);
  DTensor scores = matmul_ref(dq, transpose2d_ref(dk));
  for (auto& v : scores.v) v *= 1.0 / std::sqrt(4.0f);
  DTensor want = lin_ref(matmul_ref(softmax_ref(scores, 1), dv), one.o);
  REQUIRE(th::max_abs_diff(one.forward(x1), want) < 1e-5);
}

TEST_CASE("transformer block is a pre-norm residual pair") {
  Rng rng(51);
  WeightStore store;
  ParamRegistry reg = ParamRegistry::initializing(store, rng);
  TransformerBlock blk(reg, "t", 6, 2);
  randomize_store(store, rng, -0.5f, 0.5f);
  Tensor x = th::rand_tensor({4, 6}, rng);

  Tensor mid = add(x, blk.attn.forward(layer_norm(x, blk.ln1_gamma, blk.ln1_beta)));
  Tensor mlp = blk.mlp2.forward(silu(blk.mlp1.forward(layer_norm(mid, blk.ln2_gamma, blk.ln2_beta))));
  Tensor want = add(mid, mlp);
  REQUIRE(th::bitwise_equal(blk.forward(x), want));
}
