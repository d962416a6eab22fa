#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "dge/backbone.hpp"
#include "dge/config.hpp"
#include "dge/head.hpp"
#include "dge/neck.hpp"
#include "dge/params.hpp"
#include "dge/weights.hpp"

namespace dge {

/// Named per-stage activations captured during a forward pass.
struct FeatureDump {
  std::vector<std::pair<std::string, Tensor>> features;
  void add(const std::string& name, const Tensor& t) { features.emplace_back(name, t); }
};

struct InferenceResult {
  std::vector<Detection> detections;  // post-NMS, coordinates in the side x side frame
  int64_t candidates = 0;             // decoded boxes entering NMS
};

// Full detector: dual-branch backbone -> GD neck -> anchor-free head.
// Parameters live in a WeightStore; module members alias those tensors, so
// the store written by save() is always the acting parameter set.
class Model {
 public:
  ModelConfig cfg;
  Backbone backbone;
  Neck neck;
  Head head;

  static Model init(const ModelConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng(cfg.seed);
    ParamRegistry reg = ParamRegistry::initializing(m.store_, rng);
    m.build(reg);
    return m;
  }

  static Model from_store(const ModelConfig& cfg, const WeightStore& store) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    ParamRegistry reg = ParamRegistry::binding(store);
    m.build(reg);
    reg.finish();
    m.store_ = store;
    return m;
  }

  const WeightStore& store() const { return store_; }

  int64_t param_count() const {
    int64_t total = 0;
    for (const auto& [name, t] : store_.entries()) {
      (void)name;
      total += t.size();
    }
    return total;
  }

  std::array<LevelPrediction, 3> raw_forward(const Tensor& ir, const Tensor& rgb,
                                             FeatureDump* dump = nullptr,
                                             GradTape* tape = nullptr) const {
    check_input("ir", ir, cfg.ir_channels);
    check_input("rgb", rgb, cfg.rgb_channels);
    FeaturePyramid pyr = backbone.forward(ir, rgb, tape);
    Neck::Out neck_out = neck.forward(pyr, tape);
    auto preds = head.forward(neck_out, tape);
    if (dump) {
      dump->add("b2", pyr.b2);
      dump->add("b3", pyr.b3);
      dump->add("b4", pyr.b4);
      dump->add("b5", pyr.b5);
      dump->add("p3", neck_out.p3);
      dump->add("n4", neck_out.n4);
      dump->add("n5", neck_out.n5);
      const char* level_names[3] = {"p3", "n4", "n5"};
      for (int i = 0; i < 3; ++i) {
        dump->add(std::string("head.") + level_names[i] + ".cls", preds[static_cast<size_t>(i)].cls);
        dump->add(std::string("head.") + level_names[i] + ".box", preds[static_cast<size_t>(i)].box);
      }
    }
    return preds;
  }

  InferenceResult forward(const Tensor& ir, const Tensor& rgb, FeatureDump* dump = nullptr) const {
    auto preds = raw_forward(ir, rgb, dump);
    const float side = static_cast<float>(cfg.side);
    InferenceResult res;
    std::vector<Detection> candidates = decode(preds, cfg.score_thresh, side, side);
    res.candidates = static_cast<int64_t>(candidates.size());
    res.detections = nms(std::move(candidates), cfg.iou_thresh);
    return res;
  }

 private:
  Model() = default;

  void build(ParamRegistry& reg) {
    backbone = Backbone(reg, cfg);
    neck = Neck(reg, cfg);
    head = Head(reg, cfg);
  }

  void check_input(const char* which, const Tensor& t, int channels) const {
    const std::vector<int> want = {1, channels, cfg.side, cfg.side};
    if (t.rank() != 4 || t.shape() != want) {
      throw validation_error(std::string("model: ") + which + " input shape " +
                             shape_to_string(t.shape()) + ", expected " + shape_to_string(want));
    }
  }

  WeightStore store_;
};

}  // namespace dge
