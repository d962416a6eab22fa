#pragma once

#include <array>
#include <string>
#include <vector>

#include "dge/config.hpp"
#include "dge/flops.hpp"
#include "dge/ops.hpp"

// Analytic parameter/FLOP analyzer. Walks the module tree using only config
// arithmetic (no tensors), charging each simulated op with the same flopcost
// formula the executing kernel uses. Costs assume the inference
// configuration: batch 1, fused re-parameterized convolutions, no tape.
// The execution-side FlopMeter provides the independent cross-check.

namespace dge {

struct ModuleStats {
  std::string name;
  int64_t params = 0;
  int64_t flops = 0;
};

struct ModelStats {
  int64_t total_params = 0;
  int64_t total_flops = 0;
  std::array<int64_t, kFlopCategoryCount> flops_by_category{};
  std::vector<ModuleStats> modules;

  int64_t conv_flops() const { return flops_by_category[static_cast<int>(FlopCategory::Conv)]; }
};

namespace detail {

class Analyzer {
 public:
  explicit Analyzer(const ModelConfig& cfg) : cfg_(cfg) {}

  ModelStats run() {
    const int64_t side = cfg_.side;
    branch(&acc_ir_, cfg_.ir_channels, side);
    branch(&acc_rgb_, cfg_.rgb_channels, side);

    const std::array<int, 4> widths = {cfg_.c2, cfg_.c3, cfg_.c4, cfg_.c5};
    const std::array<int64_t, 4> sides = {side / 4, side / 8, side / 16, side / 32};
    for (int l = 0; l < 4; ++l) {
      const int c = widths[static_cast<size_t>(l)];
      const int64_t s = sides[static_cast<size_t>(l)];
      conv_bn_act(&acc_fuse_, {1, 2 * c, s, s}, c, 1, 1, 0);
      ema(&acc_ema_, {1, c, s, s});
    }

    neck(sides);
    head_level(widths[1], sides[1]);
    head_level(widths[2], sides[2]);
    head_level(widths[3], sides[3]);

    ModelStats out;
    const std::array<std::pair<const char*, Acc*>, 8> sections = {
        std::pair{"backbone.ir", &acc_ir_},   std::pair{"backbone.rgb", &acc_rgb_},
        std::pair{"fuse", &acc_fuse_},        std::pair{"ema", &acc_ema_},
        std::pair{"neck.low", &acc_low_},     std::pair{"neck.high", &acc_high_},
        std::pair{"neck.inject", &acc_inj_},  std::pair{"head", &acc_head_}};
    for (const auto& [name, acc] : sections) {
      out.modules.push_back({name, acc->params, acc->meter.total()});
      out.total_params += acc->params;
      out.total_flops += acc->meter.total();
      for (int i = 0; i < kFlopCategoryCount; ++i) {
        out.flops_by_category[static_cast<size_t>(i)] += acc->meter.by_category[static_cast<size_t>(i)];
      }
    }
    return out;
  }

 private:
  struct Shape {
    int64_t n, c, h, w;
    int64_t elems() const { return n * c * h * w; }
  };
  struct Acc {
    int64_t params = 0;
    FlopMeter meter;
  };

  // --- simulated kernels (one per metered op) ---

  Shape conv(Acc* a, Shape s, int cout, int k, int stride, int pad, bool bias, int groups = 1) {
    const int64_t oh = (s.h + 2 * pad - k) / stride + 1;
    const int64_t ow = (s.w + 2 * pad - k) / stride + 1;
    a->params += int64_t(cout) * (s.c / groups) * k * k + (bias ? cout : 0);
    a->meter.add(FlopCategory::Conv, flopcost::conv2d(s.n, cout, s.c / groups, k, k, oh, ow, bias));
    return {s.n, cout, oh, ow};
  }

  void bn(Acc* a, Shape s) {
    a->params += 4 * s.c;
    a->meter.add(FlopCategory::Norm, flopcost::norm_batch_inference(s.elems(), s.c));
  }

  void silu_(Acc* a, Shape s) { a->meter.add(FlopCategory::Elementwise, flopcost::silu(s.elems())); }
  void sigmoid_(Acc* a, int64_t e) { a->meter.add(FlopCategory::Elementwise, flopcost::sigmoid(e)); }
  void eltwise(Acc* a, int64_t e) { a->meter.add(FlopCategory::Elementwise, flopcost::elementwise(e)); }
  void softmax_(Acc* a, int64_t e) { a->meter.add(FlopCategory::Softmax, flopcost::softmax(e)); }
  void matmul_(Acc* a, int64_t m, int64_t k, int64_t n) {
    a->meter.add(FlopCategory::MatMul, flopcost::matmul(m, k, n));
  }

  Shape pool_adaptive(Acc* a, Shape s, int64_t oh, int64_t ow) {
    int64_t sum_h = 0, sum_w = 0;
    for (int i = 0; i < oh; ++i) {
      int lo, hi;
      adaptive_window(i, static_cast<int>(s.h), static_cast<int>(oh), &lo, &hi);
      sum_h += hi - lo;
    }
    for (int j = 0; j < ow; ++j) {
      int lo, hi;
      adaptive_window(j, static_cast<int>(s.w), static_cast<int>(ow), &lo, &hi);
      sum_w += hi - lo;
    }
    const int64_t planes = s.n * s.c;
    a->meter.add(FlopCategory::Pool, flopcost::avg_pool(planes * sum_h * sum_w, planes * oh * ow));
    return {s.n, s.c, oh, ow};
  }

  Shape pool_directional(Acc* a, Shape s, bool reduce_h) {
    const int64_t oh = reduce_h ? 1 : s.h, ow = reduce_h ? s.w : 1;
    a->meter.add(FlopCategory::Pool, flopcost::avg_pool(s.elems(), s.n * s.c * oh * ow));
    return {s.n, s.c, oh, ow};
  }

  Shape resize(Acc* a, Shape s, int64_t oh, int64_t ow) {
    if (oh == s.h && ow == s.w) return s;
    if (oh >= s.h && ow >= s.w) {
      a->meter.add(FlopCategory::Resize, flopcost::bilinear(s.n * s.c * oh * ow));
      return {s.n, s.c, oh, ow};
    }
    return pool_adaptive(a, s, oh, ow);
  }

  void group_norm(Acc* a, Shape s, int64_t groups) {
    a->params += 2 * s.c;
    a->meter.add(FlopCategory::Norm, flopcost::norm_group(s.elems(), s.n * groups));
  }

  void layer_norm_(Acc* a, int64_t rows, int64_t dim, bool count_params) {
    if (count_params) a->params += 2 * dim;
    a->meter.add(FlopCategory::Norm, flopcost::layer_norm(rows * dim, rows));
  }

  // --- composite blocks ---

  Shape conv_bn_act(Acc* a, Shape s, int cout, int k, int stride, int pad, int groups = 1) {
    Shape o = conv(a, s, cout, k, stride, pad, false, groups);
    bn(a, o);
    silu_(a, o);
    return o;
  }

  // Multi-branch parameters, fused-form execution cost.
  Shape rep_conv(Acc* a, Shape s, int cout) {
    const int64_t cin = s.c;
    a->params += cout * cin * 9 + 4 * cout;  // 3x3 branch
    a->params += cout * cin * 1 + 4 * cout;  // 1x1 branch
    if (cin == cout) a->params += 4 * cout;  // identity branch norm
    a->meter.add(FlopCategory::Conv, flopcost::conv2d(s.n, cout, cin, 3, 3, s.h, s.w, true));
    Shape o = {s.n, cout, s.h, s.w};
    silu_(a, o);
    return o;
  }

  Shape rep_block(Acc* a, Shape s, int cout, int depth) {
    Shape o = s;
    for (int i = 0; i < depth; ++i) o = rep_conv(a, o, cout);
    return o;
  }

  Shape bottleneck(Acc* a, Shape s) {
    Shape o = conv_bn_act(a, s, static_cast<int>(s.c), 3, 1, 1);
    o = conv_bn_act(a, o, static_cast<int>(s.c), 3, 1, 1);
    eltwise(a, o.elems());  // residual add
    return o;
  }

  Shape c2f(Acc* a, Shape s, int cout, int depth) {
    const int half = cout / 2;
    Shape o = conv_bn_act(a, s, 2 * half, 1, 1, 0);
    Shape branch_shape = {o.n, half, o.h, o.w};
    for (int i = 0; i < depth; ++i) branch_shape = bottleneck(a, branch_shape);
    Shape cat = {o.n, int64_t(2 + depth) * half, o.h, o.w};
    return conv_bn_act(a, cat, cout, 1, 1, 0);
  }

  void branch(Acc* a, int cin, int64_t side) {
    Shape s = {1, cin, side, side};
    s = conv_bn_act(a, s, cfg_.c2, 3, 2, 1);
    s = conv_bn_act(a, s, cfg_.c2, 3, 2, 1);
    s = c2f(a, s, cfg_.c2, cfg_.c2f_depths[0]);
    s = conv_bn_act(a, s, cfg_.c3, 3, 2, 1);
    s = c2f(a, s, cfg_.c3, cfg_.c2f_depths[1]);
    s = conv_bn_act(a, s, cfg_.c4, 3, 2, 1);
    s = c2f(a, s, cfg_.c4, cfg_.c2f_depths[2]);
    s = conv_bn_act(a, s, cfg_.c5, 3, 2, 1);
    c2f(a, s, cfg_.c5, cfg_.c2f_depths[3]);
  }

  void ema(Acc* a, Shape s) {
    const int64_t g = cfg_.ema_groups;
    const int64_t c = s.c / g;
    const int64_t ng = s.n * g;
    Shape grouped = {ng, c, s.h, s.w};
    Shape ph = pool_directional(a, grouped, false);  // [ng,c,h,1]
    pool_directional(a, grouped, true);              // [ng,c,1,w]
    const int64_t strip = s.h + s.w;
    a->params += c * c + c;  // shared channel mix over the pooled strips
    for (int64_t p = 0; p < ng; ++p) {
      matmul_(a, c, c, strip);
      eltwise(a, c * strip);  // bias add
    }
    sigmoid_(a, ph.elems());            // gate over [ng,c,h,1]
    sigmoid_(a, ng * c * s.w);          // gate over [ng,c,1,w]
    eltwise(a, grouped.elems());        // g * gate_h
    eltwise(a, grouped.elems());        // ... * gate_w
    group_norm(a, grouped, c);
    Shape padded = {ng, c, s.h + 2, s.w + 2};
    conv(a, padded, static_cast<int>(c), 3, 1, 0, true);
    const int64_t hw = s.h * s.w;
    for (int64_t p = 0; p < ng; ++p) {
      pool_adaptive(a, {1, c, s.h, s.w}, 1, 1);
      softmax_(a, c);
      pool_adaptive(a, {1, c, s.h, s.w}, 1, 1);
      softmax_(a, c);
      matmul_(a, 1, c, hw);
      matmul_(a, 1, c, hw);
      eltwise(a, hw);    // sum of the two cross terms
      sigmoid_(a, hw);   // spatial attention map
      eltwise(a, c * hw);  // gate applied to the group
    }
  }

  void inject(Acc* a, int c_local, int c_in, int64_t src_side, int64_t dst_side) {
    Shape fi = {1, c_in, src_side, src_side};
    Shape gate = conv(a, fi, c_local, 1, 1, 0, true);
    sigmoid_(a, gate.elems());
    resize(a, gate, dst_side, dst_side);
    Shape embed = conv(a, fi, c_local, 1, 1, 0, true);
    resize(a, embed, dst_side, dst_side);
    Shape local = conv(a, {1, c_local, dst_side, dst_side}, c_local, 1, 1, 0, true);
    eltwise(a, local.elems());  // local * gate
    eltwise(a, local.elems());  // + embed
    rep_block(a, local, c_local, 1);
  }

  void transformer_block(Acc* a, int64_t t, int64_t d) {
    layer_norm_(a, t, d, true);
    // attention: four linear maps, then per-head attention
    for (int i = 0; i < 4; ++i) {
      a->params += d * d + d;
      matmul_(a, t, d, d);
      eltwise(a, t * d);  // bias add
    }
    const int64_t heads = cfg_.high_tf_heads;
    const int64_t dh = d / heads;
    for (int64_t h = 0; h < heads; ++h) {
      matmul_(a, t, dh, t);
      eltwise(a, t * t);  // scale
      softmax_(a, t * t);
      matmul_(a, t, t, dh);
    }
    eltwise(a, t * d);  // residual add
    layer_norm_(a, t, d, true);
    a->params += d * 2 * d + 2 * d;
    matmul_(a, t, d, 2 * d);
    eltwise(a, t * 2 * d);                                              // bias
    a->meter.add(FlopCategory::Elementwise, flopcost::silu(t * 2 * d));  // mlp activation
    a->params += 2 * d * d + d;
    matmul_(a, t, 2 * d, d);
    eltwise(a, t * d);  // bias
    eltwise(a, t * d);  // residual add
  }

  void neck(const std::array<int64_t, 4>& sides) {
    const int64_t s2 = sides[0], s3 = sides[1], s4 = sides[2], s5 = sides[3];
    // low stage
    resize(&acc_low_, {1, cfg_.c2, s2, s2}, s4, s4);
    resize(&acc_low_, {1, cfg_.c3, s3, s3}, s4, s4);
    resize(&acc_low_, {1, cfg_.c5, s5, s5}, s4, s4);
    const int low_in = cfg_.c2 + cfg_.c3 + cfg_.c4 + cfg_.c5;
    const int low_out = cfg_.c3 + cfg_.c4;
    Shape low = conv(&acc_low_, {1, low_in, s4, s4}, low_out, 1, 1, 0, true);
    rep_block(&acc_low_, low, low_out, cfg_.low_rep_depth);
    conv_bn_act(&acc_low_, {1, cfg_.c5, s5, s5}, cfg_.c5, 1, 1, 0);  // P5 transition
    inject(&acc_inj_, cfg_.c3, cfg_.c3, s4, s3);
    inject(&acc_inj_, cfg_.c4, cfg_.c4, s4, s4);
    // high stage
    pool_adaptive(&acc_high_, {1, cfg_.c3, s3, s3}, s5, s5);
    pool_adaptive(&acc_high_, {1, cfg_.c4, s4, s4}, s5, s5);
    const int high_in = cfg_.c3 + cfg_.c4 + cfg_.c5;
    const int high_out = cfg_.c4 + cfg_.c5;
    const int64_t tokens = s5 * s5;
    for (int i = 0; i < cfg_.high_tf_depth; ++i) transformer_block(&acc_high_, tokens, high_in);
    conv(&acc_high_, {1, high_in, s5, s5}, high_out, 1, 1, 0, true);
    inject(&acc_inj_, cfg_.c4, cfg_.c4, s5, s4);
    inject(&acc_inj_, cfg_.c5, cfg_.c5, s5, s5);
  }

  void head_level(int cin, int64_t side) {
    Shape s = {1, cin, side, side};
    Shape t = conv_bn_act(&acc_head_, s, cfg_.head_width, 3, 1, 1);
    t = conv_bn_act(&acc_head_, t, cfg_.head_width, 3, 1, 1);
    conv(&acc_head_, t, cfg_.classes, 1, 1, 0, true);
    Shape r = conv_bn_act(&acc_head_, s, cfg_.head_width, 3, 1, 1);
    r = conv_bn_act(&acc_head_, r, cfg_.head_width, 3, 1, 1);
    conv(&acc_head_, r, 4, 1, 1, 0, true);
  }

  ModelConfig cfg_;
  Acc acc_ir_, acc_rgb_, acc_fuse_, acc_ema_, acc_low_, acc_high_, acc_inj_, acc_head_;
};

}  // namespace detail

/// Parameter and FLOP totals for one batch-1 forward at the config
/// resolution, with a per-section breakdown.
inline ModelStats analyze(const ModelConfig& cfg) {
  cfg.validate();
  return detail::Analyzer(cfg).run();
}

}  // namespace dge
