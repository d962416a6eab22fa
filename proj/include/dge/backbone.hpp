#pragma once

#include <array>
#include <string>

#include "dge/blocks.hpp"
#include "dge/config.hpp"
#include "dge/ema.hpp"

namespace dge {

struct FeaturePyramid {
  Tensor b2, b3, b4, b5;  // strides 4, 8, 16, 32
};

// One modality trunk: two stride-2 stem convs reach stride 4, the first C2f
// stage refines there, and each later stage halves the resolution before its
// C2f. Taps after every stage give sides R, R/2, R/4, R/8 with R = side/4.
struct BackboneBranch {
  ConvBNAct stem1, stem2;
  C2f stage1;
  ConvBNAct down2;
  C2f stage2;
  ConvBNAct down3;
  C2f stage3;
  ConvBNAct down4;
  C2f stage4;

  BackboneBranch() = default;
  BackboneBranch(ParamRegistry& reg, const std::string& prefix, int cin, const ModelConfig& cfg) {
    stem1 = ConvBNAct(reg, prefix + ".stem1", cin, cfg.c2, 3, 2);
    stem2 = ConvBNAct(reg, prefix + ".stem2", cfg.c2, cfg.c2, 3, 2);
    stage1 = C2f(reg, prefix + ".stage1", cfg.c2, cfg.c2, cfg.c2f_depths[0]);
    down2 = ConvBNAct(reg, prefix + ".down2", cfg.c2, cfg.c3, 3, 2);
    stage2 = C2f(reg, prefix + ".stage2", cfg.c3, cfg.c3, cfg.c2f_depths[1]);
    down3 = ConvBNAct(reg, prefix + ".down3", cfg.c3, cfg.c4, 3, 2);
    stage3 = C2f(reg, prefix + ".stage3", cfg.c4, cfg.c4, cfg.c2f_depths[2]);
    down4 = ConvBNAct(reg, prefix + ".down4", cfg.c4, cfg.c5, 3, 2);
    stage4 = C2f(reg, prefix + ".stage4", cfg.c5, cfg.c5, cfg.c2f_depths[3]);
  }

  FeaturePyramid forward(const Tensor& image, GradTape* tape = nullptr) const {
    FeaturePyramid pyr;
    Tensor x = stem2.forward(stem1.forward(image, tape), tape);
    pyr.b2 = stage1.forward(x, tape);
    pyr.b3 = stage2.forward(down2.forward(pyr.b2, tape), tape);
    pyr.b4 = stage3.forward(down3.forward(pyr.b3, tape), tape);
    pyr.b5 = stage4.forward(down4.forward(pyr.b4, tape), tape);
    return pyr;
  }
};

// Dual-modality backbone: independent IR and RGB trunks, per-level
// concat + 1x1 fusion back to the level width, then EMA attention on each
// fused level.
struct Backbone {
  BackboneBranch ir, rgb;
  std::array<ConvBNAct, 4> fuse;  // levels 2..5
  std::array<EMA, 4> ema;

  Backbone() = default;
  Backbone(ParamRegistry& reg, const ModelConfig& cfg) {
    ir = BackboneBranch(reg, "backbone.ir", cfg.ir_channels, cfg);
    rgb = BackboneBranch(reg, "backbone.rgb", cfg.rgb_channels, cfg);
    const std::array<int, 4> widths = {cfg.c2, cfg.c3, cfg.c4, cfg.c5};
    for (int l = 0; l < 4; ++l) {
      const std::string lv = "l" + std::to_string(l + 2);
      fuse[static_cast<size_t>(l)] = ConvBNAct(reg, "fuse." + lv, 2 * widths[static_cast<size_t>(l)],
                                               widths[static_cast<size_t>(l)], 1);
      ema[static_cast<size_t>(l)] =
          EMA(reg, "ema." + lv, widths[static_cast<size_t>(l)], cfg.ema_groups);
    }
  }

  Tensor fuse_level(int level, const Tensor& a, const Tensor& b, GradTape* tape = nullptr) const {
    detail::require(a.shape() == b.shape(),
                    "backbone fusion: level " + std::to_string(level + 2) + " shapes differ, " +
                        shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    return fuse[static_cast<size_t>(level)].forward(concat({a, b}, 1, tape), tape);
  }

  FeaturePyramid forward(const Tensor& ir_img, const Tensor& rgb_img,
                         GradTape* tape = nullptr) const {
    FeaturePyramid pa = ir.forward(ir_img, tape);
    FeaturePyramid pb = rgb.forward(rgb_img, tape);
    FeaturePyramid pc;
    pc.b2 = ema[0].forward(fuse_level(0, pa.b2, pb.b2, tape), tape);
    pc.b3 = ema[1].forward(fuse_level(1, pa.b3, pb.b3, tape), tape);
    pc.b4 = ema[2].forward(fuse_level(2, pa.b4, pb.b4, tape), tape);
    pc.b5 = ema[3].forward(fuse_level(3, pa.b5, pb.b5, tape), tape);
    return pc;
  }
};

}  // namespace dge
