#pragma once

#include <string>
#include <vector>

#include "dge/blocks.hpp"
#include "dge/ops.hpp"
#include "dge/params.hpp"

namespace dge {

// Efficient multi-scale attention. Channels are regrouped into the batch
// axis, two parallel descriptors are built (directional pooling followed by
// a shared channel-mixing matrix over the pooled strips, and a 3x3 conv with
// edge-replicate padding so spatially constant inputs stay constant), and
// each path re-weights the other through a softmax/dot-product across
// spatial positions. The final gate is a sigmoid, so attention weights live
// strictly inside (0,1), and the output keeps the input shape.
// Attention maps captured from a forward pass; every value is a sigmoid
// output, so each lies strictly inside (0,1).
struct EmaAttention {
  Tensor gate_h;   // [N*G, C/G, H, 1]
  Tensor gate_w;   // [N*G, C/G, 1, W]
  Tensor spatial;  // [N*G, 1, H, W]
};

struct EMA {
  int channels = 0, groups = 0;
  Tensor mix_w, mix_b, c3_w, c3_b, gn_gamma, gn_beta;

  EMA() = default;
  EMA(ParamRegistry& reg, const std::string& prefix, int channels_, int groups_)
      : channels(channels_), groups(groups_) {
    if (groups < 1 || channels % groups != 0) {
      throw validation_error("ema: groups (" + std::to_string(groups) +
                             ") must divide channels (" + std::to_string(channels) + ")");
    }
    const int c = channels / groups;
    mix_w = reg.param(prefix + ".mix.w", {c, c}, Init::HeNormal, c);
    mix_b = reg.param(prefix + ".mix.b", {c}, Init::Zero);
    c3_w = reg.param(prefix + ".conv3.w", {c, c, 3, 3}, Init::HeNormal, int64_t(c) * 9);
    c3_b = reg.param(prefix + ".conv3.b", {c}, Init::Zero);
    gn_gamma = reg.param(prefix + ".gn.gamma", {c}, Init::One);
    gn_beta = reg.param(prefix + ".gn.beta", {c}, Init::Zero);
  }

  Tensor forward(const Tensor& x, GradTape* tape = nullptr, EmaAttention* attn = nullptr) const {
    detail::require_rank(x, 4, "ema", "input");
    detail::require(x.extent(1) == channels,
                    "ema: input channel axis " + std::to_string(x.extent(1)) + ", expected " +
                        std::to_string(channels));
    const int n = x.extent(0), h = x.extent(2), w = x.extent(3);
    const int c = channels / groups;
    const int ng = n * groups;
    Tensor g = reshape(x, {ng, c, h, w});

    // Directional descriptors -> shared channel mix -> per-axis sigmoid gates.
    const std::vector<int> ones(static_cast<size_t>(ng), 1);
    Tensor ph = directional_avg_pool(g, SpatialAxis::Width, tape);                 // [ng,c,h,1]
    Tensor pw = directional_avg_pool(g, SpatialAxis::Height, tape);                // [ng,c,1,w]
    Tensor cat = concat({ph, reshape(pw, {ng, c, w, 1})}, 2, tape);                // [ng,c,h+w,1]
    Tensor bias_col = reshape(mix_b, {c, 1});
    auto strips = split(cat, ones, 0, tape);
    std::vector<Tensor> mixed;
    mixed.reserve(static_cast<size_t>(ng));
    for (int p = 0; p < ng; ++p) {
      Tensor m = matmul(mix_w, reshape(strips[static_cast<size_t>(p)], {c, h + w}), tape);
      mixed.push_back(reshape(add(m, bias_col, tape), {1, c, h + w, 1}));
    }
    Tensor t = concat(mixed, 0, tape);
    auto tparts = split(t, {h, w}, 2, tape);
    Tensor gate_h = sigmoid(tparts[0], tape);                                      // [ng,c,h,1]
    Tensor gate_w = sigmoid(reshape(tparts[1], {ng, c, 1, w}), tape);              // [ng,c,1,w]
    Tensor x1 = mul(mul(g, gate_h, tape), gate_w, tape);
    x1 = norm_group(x1, c, gn_gamma, gn_beta, tape);  // per-channel instance norm

    Tensor x2 = conv2d(pad_edge2d(g, 1, tape), c3_w, &c3_b, {1, 0, 1}, tape);

    // Cross-spatial re-weighting, per (sample, group).
    auto gs = split(g, ones, 0, tape);
    auto x1s = split(x1, ones, 0, tape);
    auto x2s = split(x2, ones, 0, tape);
    std::vector<Tensor> outs, gates;
    outs.reserve(static_cast<size_t>(ng));
    if (attn) gates.reserve(static_cast<size_t>(ng));
    const int hw = h * w;
    for (int p = 0; p < ng; ++p) {
      Tensor s1 = softmax(reshape(adaptive_avg_pool2d(x1s[static_cast<size_t>(p)], 1, 1, tape),
                                  {1, c}),
                          1, tape);
      Tensor s2 = softmax(reshape(adaptive_avg_pool2d(x2s[static_cast<size_t>(p)], 1, 1, tape),
                                  {1, c}),
                          1, tape);
      Tensor r1 = reshape(x1s[static_cast<size_t>(p)], {c, hw});
      Tensor r2 = reshape(x2s[static_cast<size_t>(p)], {c, hw});
      Tensor wsum = add(matmul(s1, r2, tape), matmul(s2, r1, tape), tape);  // [1,hw]
      Tensor gate = sigmoid(reshape(wsum, {1, 1, h, w}), tape);
      if (attn) gates.push_back(gate);
      outs.push_back(mul(gs[static_cast<size_t>(p)], gate, tape));
    }
    if (attn) {
      attn->gate_h = gate_h;
      attn->gate_w = gate_w;
      attn->spatial = concat(gates, 0, tape);
    }
    return reshape(concat(outs, 0, tape), {n, channels, h, w});
  }
};

}  // namespace dge
