#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "dge/blocks.hpp"
#include "dge/config.hpp"
#include "dge/neck.hpp"

namespace dge {

struct Box {
  float x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

inline float iou(const Box& a, const Box& b) {
  const float ix1 = std::max(a.x1, b.x1);
  const float iy1 = std::max(a.y1, b.y1);
  const float ix2 = std::min(a.x2, b.x2);
  const float iy2 = std::min(a.y2, b.y2);
  const float iw = std::max(0.0f, ix2 - ix1);
  const float ih = std::max(0.0f, iy2 - iy1);
  const float inter = iw * ih;
  if (inter <= 0.0f) return 0.0f;
  const float area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
  const float area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
  return inter / (area_a + area_b - inter);
}

struct Detection {
  int class_id = 0;
  float score = 0;
  Box box;
};

// Class logits and box offsets for one pyramid level.
struct LevelPrediction {
  Tensor cls;  // [N, K, H, W]
  Tensor box;  // [N, 4, H, W] as (tx, ty, tw, th)
  int stride = 0;
};

struct HeadLevel {
  ConvBNAct cls_t1, cls_t2, reg_t1, reg_t2;
  Tensor cls_w, cls_b, reg_w, reg_b;

  HeadLevel() = default;
  HeadLevel(ParamRegistry& reg, const std::string& prefix, int cin, int width, int classes) {
    cls_t1 = ConvBNAct(reg, prefix + ".cls0", cin, width, 3);
    cls_t2 = ConvBNAct(reg, prefix + ".cls1", width, width, 3);
    cls_w = reg.param(prefix + ".cls.w", {classes, width, 1, 1}, Init::HeNormal, width);
    cls_b = reg.param(prefix + ".cls.b", {classes}, Init::Zero);
    reg_t1 = ConvBNAct(reg, prefix + ".reg0", cin, width, 3);
    reg_t2 = ConvBNAct(reg, prefix + ".reg1", width, width, 3);
    reg_w = reg.param(prefix + ".reg.w", {4, width, 1, 1}, Init::HeNormal, width);
    reg_b = reg.param(prefix + ".reg.b", {4}, Init::Zero);
  }

  LevelPrediction forward(const Tensor& x, int stride, GradTape* tape = nullptr) const {
    LevelPrediction out;
    out.cls = conv2d(cls_t2.forward(cls_t1.forward(x, tape), tape), cls_w, &cls_b, {1, 0, 1}, tape);
    out.box = conv2d(reg_t2.forward(reg_t1.forward(x, tape), tape), reg_w, &reg_b, {1, 0, 1}, tape);
    out.stride = stride;
    return out;
  }
};

struct Head {
  HeadLevel l3, l4, l5;

  Head() = default;
  Head(ParamRegistry& reg, const ModelConfig& cfg)
      : l3(reg, "head.p3", cfg.c3, cfg.head_width, cfg.classes),
        l4(reg, "head.n4", cfg.c4, cfg.head_width, cfg.classes),
        l5(reg, "head.n5", cfg.c5, cfg.head_width, cfg.classes) {}

  std::array<LevelPrediction, 3> forward(const Neck::Out& neck, GradTape* tape = nullptr) const {
    return {l3.forward(neck.p3, 8, tape), l4.forward(neck.n4, 16, tape),
            l5.forward(neck.n5, 32, tape)};
  }
};

namespace detail {
// Matches the tensor-core sigmoid, including its open-interval clamp.
inline float decode_sigmoid(float x) { return sigmoid_scalar(x); }
}  // namespace detail

constexpr float kSizeLogitClamp = 4.0f;  // box side capped at e^4 strides

/// Per-cell anchor-free decode for a single-sample level: the best class per
/// cell survives when sigmoid(logit) > score_thresh; center = (cell +
/// sigmoid(txy)) * stride, size = exp(min(twh, 4)) * stride, box clipped to
/// the [0, img_w] x [0, img_h] frame. Emits at most one detection per cell,
/// in row-major cell order.
inline std::vector<Detection> decode_level(const LevelPrediction& p, float score_thresh,
                                           float img_w, float img_h) {
  detail::require(p.cls.extent(0) == 1 && p.box.extent(0) == 1,
                  "decode_level: expects a single-sample prediction");
  const int k = p.cls.extent(1);
  const int h = p.cls.extent(2), w = p.cls.extent(3);
  detail::require(p.box.extent(1) == 4 && p.box.extent(2) == h && p.box.extent(3) == w,
                  "decode_level: box map shape " + shape_to_string(p.box.shape()) +
                      " does not match class map " + shape_to_string(p.cls.shape()));
  std::vector<Detection> dets;
  for (int cy = 0; cy < h; ++cy) {
    for (int cx = 0; cx < w; ++cx) {
      int best = 0;
      float best_logit = p.cls.at4(0, 0, cy, cx);
      for (int c = 1; c < k; ++c) {
        const float logit = p.cls.at4(0, c, cy, cx);
        if (logit > best_logit) {
          best_logit = logit;
          best = c;
        }
      }
      const float score = detail::decode_sigmoid(best_logit);
      if (!(score > score_thresh)) continue;
      const float sx = detail::decode_sigmoid(p.box.at4(0, 0, cy, cx));
      const float sy = detail::decode_sigmoid(p.box.at4(0, 1, cy, cx));
      const float bw = std::exp(std::min(p.box.at4(0, 2, cy, cx), kSizeLogitClamp)) * float(p.stride);
      const float bh = std::exp(std::min(p.box.at4(0, 3, cy, cx), kSizeLogitClamp)) * float(p.stride);
      const float cxp = (float(cx) + sx) * float(p.stride);
      const float cyp = (float(cy) + sy) * float(p.stride);
      Detection d;
      d.class_id = best;
      d.score = score;
      d.box.x1 = std::max(0.0f, cxp - bw * 0.5f);
      d.box.y1 = std::max(0.0f, cyp - bh * 0.5f);
      d.box.x2 = std::min(img_w, cxp + bw * 0.5f);
      d.box.y2 = std::min(img_h, cyp + bh * 0.5f);
      dets.push_back(d);
    }
  }
  return dets;
}

inline std::vector<Detection> decode(const std::array<LevelPrediction, 3>& levels,
                                     float score_thresh, float img_w, float img_h) {
  std::vector<Detection> all;
  for (const auto& lvl : levels) {
    auto part = decode_level(lvl, score_thresh, img_w, img_h);
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

namespace detail {
inline bool det_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
  if (a.box.y1 != b.box.y1) return a.box.y1 < b.box.y1;
  if (a.box.x2 != b.box.x2) return a.box.x2 < b.box.x2;
  if (a.box.y2 != b.box.y2) return a.box.y2 < b.box.y2;
  return false;
}
}  // namespace detail

/// Greedy per-class suppression of boxes overlapping a kept box by more than
/// iou_thresh. Survivors are returned ordered by (score desc, x1, y1, x2, y2)
/// and do not depend on the input order.
inline std::vector<Detection> nms(std::vector<Detection> dets, float iou_thresh) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    return detail::det_before(a, b);
  });
  std::vector<Detection> kept;
  size_t i = 0;
  while (i < dets.size()) {
    size_t j = i;
    while (j < dets.size() && dets[j].class_id == dets[i].class_id) ++j;
    std::vector<bool> suppressed(j - i, false);
    for (size_t a = i; a < j; ++a) {
      if (suppressed[a - i]) continue;
      kept.push_back(dets[a]);
      for (size_t b = a + 1; b < j; ++b) {
        if (!suppressed[b - i] && iou(dets[a].box, dets[b].box) > iou_thresh) {
          suppressed[b - i] = true;
        }
      }
    }
    i = j;
  }
  std::stable_sort(kept.begin(), kept.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    return detail::det_before(a, b);
  });
  return kept;
}

}  // namespace dge
