#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dge/backbone.hpp"
#include "dge/blocks.hpp"
#include "dge/config.hpp"

namespace dge {

/// Alignment helper: identity at the target size, bilinear when growing,
/// adaptive average pooling when shrinking.
inline Tensor resize_to(const Tensor& x, int out_h, int out_w, GradTape* tape = nullptr) {
  const int h = x.extent(2), w = x.extent(3);
  if (out_h == h && out_w == w) return x;
  if (out_h >= h && out_w >= w) return bilinear_resize(x, out_h, out_w, tape);
  if (out_h <= h && out_w <= w) return adaptive_avg_pool2d(x, out_h, out_w, tape);
  throw std::invalid_argument("resize_to: mixed up/down scaling from " + shape_to_string(x.shape()) +
                              " to " + std::to_string(out_h) + "x" + std::to_string(out_w));
}

// Attention-gated information injection: the stage-global tensor F_i is
// turned into a sigmoid gate and an embedding, both resized onto the local
// level F_l, combined as lembed(F_l) * gate + embed, then refined by one
// re-parameterizable unit. The output keeps F_l's shape.
struct InjectBlock {
  Tensor act_w, act_b, gembed_w, gembed_b, lembed_w, lembed_b;
  RepBlock rep;
  int c_local = 0, c_in = 0;

  InjectBlock() = default;
  InjectBlock(ParamRegistry& reg, const std::string& prefix, int c_local_, int c_in_)
      : c_local(c_local_), c_in(c_in_) {
    act_w = reg.param(prefix + ".act.w", {c_local, c_in, 1, 1}, Init::HeNormal, c_in);
    act_b = reg.param(prefix + ".act.b", {c_local}, Init::Zero);
    gembed_w = reg.param(prefix + ".gembed.w", {c_local, c_in, 1, 1}, Init::HeNormal, c_in);
    gembed_b = reg.param(prefix + ".gembed.b", {c_local}, Init::Zero);
    lembed_w = reg.param(prefix + ".lembed.w", {c_local, c_local, 1, 1}, Init::HeNormal, c_local);
    lembed_b = reg.param(prefix + ".lembed.b", {c_local}, Init::Zero);
    rep = RepBlock(reg, prefix + ".rep", c_local, c_local, 1);
  }

  Tensor forward(const Tensor& f_l, const Tensor& f_i, GradTape* tape = nullptr,
                 RepMode mode = RepMode::Fused) const {
    const int oh = f_l.extent(2), ow = f_l.extent(3);
    Tensor gate = resize_to(sigmoid(conv2d(f_i, act_w, &act_b, {1, 0, 1}, tape), tape), oh, ow, tape);
    Tensor embed = resize_to(conv2d(f_i, gembed_w, &gembed_b, {1, 0, 1}, tape), oh, ow, tape);
    Tensor local = conv2d(f_l, lembed_w, &lembed_b, {1, 0, 1}, tape);
    return rep.forward(add(mul(local, gate, tape), embed, tape), tape, mode);
  }
};

// Gather-and-distribute neck. The low stage pools every backbone level onto
// B4's resolution, fuses the stack, and injects the split halves into B3 and
// B4; the high stage pools the low outputs onto B5's resolution, fuses them
// with a transformer, and injects into N4 and N5. P3 passes through from the
// low stage, so the head pyramid is {P3, N4, N5} at strides 8/16/32.
struct Neck {
  int c2 = 0, c3 = 0, c4 = 0, c5 = 0;
  Tensor low_reduce_w, low_reduce_b;  // 1x1: c2+c3+c4+c5 -> c3+c4
  RepBlock low_rep;
  ConvBNAct p5_conv;  // 1x1 transition of B5 into the low-stage output trio
  InjectBlock inj_p3, inj_p4;
  std::vector<TransformerBlock> high_tf;
  Tensor high_reduce_w, high_reduce_b;  // 1x1: c3+c4+c5 -> c4+c5
  InjectBlock inj_n4, inj_n5;

  struct Out {
    Tensor p3, n4, n5;
  };

  Neck() = default;
  Neck(ParamRegistry& reg, const ModelConfig& cfg)
      : c2(cfg.c2), c3(cfg.c3), c4(cfg.c4), c5(cfg.c5) {
    const int low_in = c2 + c3 + c4 + c5;
    const int low_out = c3 + c4;
    low_reduce_w = reg.param("neck.low.reduce.w", {low_out, low_in, 1, 1}, Init::HeNormal, low_in);
    low_reduce_b = reg.param("neck.low.reduce.b", {low_out}, Init::Zero);
    low_rep = RepBlock(reg, "neck.low.rep", low_out, low_out, cfg.low_rep_depth);
    p5_conv = ConvBNAct(reg, "neck.low.p5", c5, c5, 1);
    inj_p3 = InjectBlock(reg, "neck.inject.p3", c3, c3);
    inj_p4 = InjectBlock(reg, "neck.inject.p4", c4, c4);
    const int high_in = c3 + c4 + c5;
    const int high_out = c4 + c5;
    high_tf.reserve(static_cast<size_t>(cfg.high_tf_depth));
    for (int i = 0; i < cfg.high_tf_depth; ++i) {
      high_tf.emplace_back(reg, "neck.high.tf" + std::to_string(i), high_in, cfg.high_tf_heads);
    }
    high_reduce_w = reg.param("neck.high.reduce.w", {high_out, high_in, 1, 1}, Init::HeNormal, high_in);
    high_reduce_b = reg.param("neck.high.reduce.b", {high_out}, Init::Zero);
    inj_n4 = InjectBlock(reg, "neck.inject.n4", c4, c4);
    inj_n5 = InjectBlock(reg, "neck.inject.n5", c5, c5);
  }

  Tensor low_fam(const FeaturePyramid& pyr, GradTape* tape = nullptr) const {
    const int th = pyr.b4.extent(2), tw = pyr.b4.extent(3);
    return concat({resize_to(pyr.b2, th, tw, tape), resize_to(pyr.b3, th, tw, tape), pyr.b4,
                   resize_to(pyr.b5, th, tw, tape)},
                  1, tape);
  }

  std::pair<Tensor, Tensor> low_ifm(const Tensor& f, GradTape* tape = nullptr,
                                    RepMode mode = RepMode::Fused) const {
    Tensor fused = low_rep.forward(conv2d(f, low_reduce_w, &low_reduce_b, {1, 0, 1}, tape), tape, mode);
    auto parts = split(fused, {c3, c4}, 1, tape);
    return {parts[0], parts[1]};
  }

  Tensor high_fam(const Tensor& p3, const Tensor& p4, const Tensor& p5,
                  GradTape* tape = nullptr) const {
    const int th = p5.extent(2), tw = p5.extent(3);
    return concat({resize_to(p3, th, tw, tape), resize_to(p4, th, tw, tape), p5}, 1, tape);
  }

  std::pair<Tensor, Tensor> high_ifm(const Tensor& f, GradTape* tape = nullptr) const {
    const int n = f.extent(0), c = f.extent(1), h = f.extent(2), w = f.extent(3);
    Tensor cur = f;
    if (!high_tf.empty()) {
      // Flatten each sample to [tokens, channels], run the transformer
      // stack, restore the spatial layout.
      const std::vector<int> ones(static_cast<size_t>(n), 1);
      auto samples = split(cur, ones, 0, tape);
      std::vector<Tensor> outs;
      outs.reserve(static_cast<size_t>(n));
      for (Tensor s : samples) {
        Tensor tokens = transpose2d(reshape(s, {c, h * w}), tape);  // [h*w, c]
        for (const auto& blk : high_tf) tokens = blk.forward(tokens, tape);
        outs.push_back(reshape(transpose2d(tokens, tape), {1, c, h, w}));
      }
      cur = concat(outs, 0, tape);
    }
    Tensor reduced = conv2d(cur, high_reduce_w, &high_reduce_b, {1, 0, 1}, tape);
    auto parts = split(reduced, {c4, c5}, 1, tape);
    return {parts[0], parts[1]};
  }

  Out forward(const FeaturePyramid& pyr, GradTape* tape = nullptr,
              RepMode mode = RepMode::Fused) const {
    Tensor low = low_fam(pyr, tape);
    detail::require(low.extent(2) == pyr.b4.extent(2) && low.extent(3) == pyr.b4.extent(3),
                    "neck: low-stage aggregate is " + shape_to_string(low.shape()) +
                        ", expected B4 resolution " + shape_to_string(pyr.b4.shape()));
    auto [fi_p3, fi_p4] = low_ifm(low, tape, mode);
    Tensor p3 = inj_p3.forward(pyr.b3, fi_p3, tape, mode);
    Tensor p4 = inj_p4.forward(pyr.b4, fi_p4, tape, mode);
    Tensor p5 = p5_conv.forward(pyr.b5, tape);

    Tensor high = high_fam(p3, p4, p5, tape);
    detail::require(high.extent(2) == pyr.b5.extent(2) && high.extent(3) == pyr.b5.extent(3),
                    "neck: high-stage aggregate is " + shape_to_string(high.shape()) +
                        ", expected B5 resolution " + shape_to_string(pyr.b5.shape()));
    auto [fi_n4, fi_n5] = high_ifm(high, tape);
    Out out;
    out.p3 = p3;
    out.n4 = inj_n4.forward(p4, fi_n4, tape, mode);
    out.n5 = inj_n5.forward(p5, fi_n5, tape, mode);
    return out;
  }
};

}  // namespace dge
