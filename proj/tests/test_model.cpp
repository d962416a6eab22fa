#include <catch2/catch_amalgamated.hpp>

#include "dge/model.hpp"
#include "dge/stats.hpp"
#include "helpers.hpp"

using namespace dge;

namespace {

std::pair<Tensor, Tensor> random_pair(const ModelConfig& cfg, Rng& rng) {
  return {th::rand_tensor({1, cfg.ir_channels, cfg.side, cfg.side}, rng, 0.0f, 1.0f),
          th::rand_tensor({1, cfg.rgb_channels, cfg.side, cfg.side}, rng, 0.0f, 1.0f)};
}

}  // namespace

TEST_CASE("same seed builds identical models") {
  ModelConfig cfg;
  const Model a = Model::init(cfg);
  const Model b = Model::init(cfg);
  REQUIRE(a.store().encode() == b.store().encode());

  cfg.seed = 123;
  const Model c = Model::init(cfg);
  REQUIRE(a.store().encode() != c.store().encode());
}

TEST_CASE("store round-trip rebuilds an identical model") {
  ModelConfig cfg;
  cfg.side = 32;
  const Model a = Model::init(cfg);
  const Model b = Model::from_store(cfg, WeightStore::decode(a.store().encode()));

  Rng rng(111);
  auto [ir, rgb] = random_pair(cfg, rng);
  FeatureDump da, db;
  a.raw_forward(ir, rgb, &da);
  b.raw_forward(ir, rgb, &db);
  REQUIRE(da.features.size() == db.features.size());
  for (size_t i = 0; i < da.features.size(); ++i) {
    REQUIRE(da.features[i].first == db.features[i].first);
    REQUIRE(th::bitwise_equal(da.features[i].second, db.features[i].second));
  }
}

TEST_CASE("from_store rejects stores that do not match the config") {
  ModelConfig cfg;
  const Model a = Model::init(cfg);

  ModelConfig wider = cfg;
  wider.c5 = 256;
  REQUIRE_THROWS_AS(Model::from_store(wider, a.store()), validation_error);

  WeightStore extra = WeightStore::decode(a.store().encode());
  extra.add("stray.w", Tensor::ones({2}));
  REQUIRE_THROWS_AS(Model::from_store(cfg, extra), validation_error);
}

TEST_CASE("parameter count equals the analyzer and the store") {
  for (int side : {32, 64}) {
    ModelConfig cfg;
    cfg.side = side;
    const Model m = Model::init(cfg);
    const ModelStats stats = analyze(cfg);

    int64_t store_elems = 0;
    for (const auto& [name, t] : m.store().entries()) {
      (void)name;
      store_elems += t.size();
    }
    REQUIRE(m.param_count() == store_elems);
    REQUIRE(stats.total_params == store_elems);
  }
}

TEST_CASE("executed flops equal the analytic walk exactly") {
  ModelConfig cfg;
  cfg.side = 32;  // keep the runtime small; every module still executes
  const Model m = Model::init(cfg);
  Rng rng(112);
  auto [ir, rgb] = random_pair(cfg, rng);

  FlopMeter meter;
  {
    FlopScope scope(meter);
    m.raw_forward(ir, rgb);
  }
  const ModelStats stats = analyze(cfg);
  for (int i = 0; i < kFlopCategoryCount; ++i) {
    INFO(flop_category_name(FlopCategory(i)));
    REQUIRE(meter.by_category[size_t(i)] == stats.flops_by_category[size_t(i)]);
  }
  REQUIRE(meter.total() == stats.total_flops);
}

TEST_CASE("analyzer conv subtotal scales fourfold with input side") {
  ModelConfig small, big;
  small.side = 64;
  big.side = 128;
  const ModelStats a = analyze(small);
  const ModelStats b = analyze(big);
  REQUIRE(b.conv_flops() == 4 * a.conv_flops());
  REQUIRE(a.total_params == b.total_params);  // params are resolution-free
}

TEST_CASE("forward validates input shapes") {
  ModelConfig cfg;
  cfg.side = 32;
  const Model m = Model::init(cfg);
  Rng rng(113);
  auto [ir, rgb] = random_pair(cfg, rng);

  REQUIRE_THROWS_AS(m.forward(th::rand_tensor({1, cfg.ir_channels, 64, 64}, rng), rgb),
                    validation_error);
  REQUIRE_THROWS_AS(m.forward(th::rand_tensor({1, cfg.ir_channels + 1, 32, 32}, rng), rgb),
                    validation_error);
  REQUIRE_THROWS_AS(m.forward(th::rand_tensor({2, cfg.ir_channels, 32, 32}, rng), rgb),
                    validation_error);
  REQUIRE_NOTHROW(m.forward(ir, rgb));
}

TEST_CASE("feature dump names the pyramid stages in order") {
  ModelConfig cfg;
  cfg.side = 32;
  const Model m = Model::init(cfg);
  Rng rng(114);
  auto [ir, rgb] = random_pair(cfg, rng);
  FeatureDump dump;
  m.forward(ir, rgb, &dump);

  const std::vector<std::string> want = {"b2", "b3", "b4", "b5", "p3", "n4", "n5",
                                         "head.p3.cls", "head.p3.box", "head.n4.cls",
                                         "head.n4.box", "head.n5.cls", "head.n5.box"};
  REQUIRE(dump.features.size() == want.size());
  for (size_t i = 0; i < want.size(); ++i) REQUIRE(dump.features[i].first == want[i]);
  REQUIRE(dump.features[0].second.shape() == std::vector<int>({1, cfg.c2, 8, 8}));
}

TEST_CASE("detections stay inside the frame and below the cell budget") {
  ModelConfig cfg;
  cfg.side = 64;
  cfg.score_thresh = 0.05f;
  const Model m = Model::init(cfg);
  Rng rng(115);
  auto [ir, rgb] = random_pair(cfg, rng);
  const InferenceResult res = m.forward(ir, rgb);

  const int64_t cells = 8 * 8 + 4 * 4 + 2 * 2;
  REQUIRE(res.candidates <= cells);
  REQUIRE(int64_t(res.detections.size()) <= res.candidates);
  for (const auto& d : res.detections) {
    REQUIRE(d.box.x1 >= 0.0f);
    REQUIRE(d.box.y1 >= 0.0f);
    REQUIRE(d.box.x2 <= 64.0f);
    REQUIRE(d.box.y2 <= 64.0f);
    REQUIRE(d.class_id >= 0);
    REQUIRE(d.class_id < cfg.classes);
  }
}

TEST_CASE("perturbing one backbone level moves all head inputs") {
  ModelConfig cfg;
  cfg.side = 32;
  const Model m = Model::init(cfg);
  Rng rng(116);
  auto [ir, rgb] = random_pair(cfg, rng);

  const FeaturePyramid base = m.backbone.forward(ir, rgb);
  const Neck::Out ref = m.neck.forward(base);

  for (int level = 0; level < 4; ++level) {
    FeaturePyramid bumped = base;
    Tensor* slot = level == 0 ? &bumped.b2 : level == 1 ? &bumped.b3
                              : level == 2 ? &bumped.b4 : &bumped.b5;
    Tensor copy = slot->clone();
    copy[copy.size() / 2] += 0.5f;
    *slot = copy;
    const Neck::Out out = m.neck.forward(bumped);
    INFO("level b" << level + 2);
    REQUIRE_FALSE(th::bitwise_equal(out.p3, ref.p3));
    REQUIRE_FALSE(th::bitwise_equal(out.n4, ref.n4));
    REQUIRE_FALSE(th::bitwise_equal(out.n5, ref.n5));
  }
}
