#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dge/ops.hpp"
#include "dge/params.hpp"

// Composite layers. Modules are built once against a ParamRegistry (either
// drawing fresh weights or binding a loaded store) and are immutable
// afterwards; forward() never mutates module state.

namespace dge {

// conv (no bias) + stored-statistics batch norm
struct ConvBN {
  Tensor w, mean, rstd, gamma, beta;
  Conv2dOpts opts;

  ConvBN() = default;
  ConvBN(ParamRegistry& reg, const std::string& prefix, int cin, int cout, int k, int stride,
         int pad, int groups = 1) {
    opts = {stride, pad, groups};
    const int cig = cin / groups;
    w = reg.param(prefix + ".conv.w", {cout, cig, k, k}, Init::HeNormal, int64_t(cig) * k * k);
    mean = reg.param(prefix + ".bn.mean", {cout}, Init::Zero);
    rstd = reg.param(prefix + ".bn.rstd", {cout}, Init::One);
    gamma = reg.param(prefix + ".bn.gamma", {cout}, Init::One);
    beta = reg.param(prefix + ".bn.beta", {cout}, Init::Zero);
  }

  Tensor forward(const Tensor& x, GradTape* tape = nullptr) const {
    Tensor y = conv2d(x, w, nullptr, opts, tape);
    return norm_batch_inference(y, mean, rstd, gamma, beta, tape);
  }

  /// Folds the normalization into an equivalent biased convolution.
  void fold_into(Tensor* folded_w, Tensor* folded_b) const {
    *folded_w = w.clone();
    *folded_b = Tensor({w.extent(0)});
    float* fw = folded_w->data();
    float* fb = folded_b->data();
    const int cout = w.extent(0);
    const int64_t per_out = w.size() / cout;
    for (int o = 0; o < cout; ++o) {
      const float scale = gamma[o] * rstd[o];
      for (int64_t i = 0; i < per_out; ++i) fw[int64_t(o) * per_out + i] *= scale;
      fb[o] = beta[o] - mean[o] * scale;
    }
  }
};

struct ConvBNAct {
  ConvBN cb;

  ConvBNAct() = default;
  ConvBNAct(ParamRegistry& reg, const std::string& prefix, int cin, int cout, int k, int stride = 1,
            int pad = -1, int groups = 1)
      : cb(reg, prefix, cin, cout, k, stride, pad < 0 ? k / 2 : pad, groups) {}

  Tensor forward(const Tensor& x, GradTape* tape = nullptr) const {
    return silu(cb.forward(x, tape), tape);
  }
};

enum class RepMode { Fused, MultiBranch };

// Re-parameterizable unit: at build time it carries a 3x3 conv+bn branch, a
// 1x1 conv+bn branch and (when shapes allow) a bn-only identity branch; the
// constructor also folds all branches into one biased 3x3 convolution so
// inference can run the fused form.
struct RepConv {
  ConvBN b3, b1;
  Tensor id_mean, id_rstd, id_gamma, id_beta;
  bool has_identity = false;
  int cin = 0, cout = 0;
  Tensor fused_w, fused_b;

  RepConv() = default;
  RepConv(ParamRegistry& reg, const std::string& prefix, int cin_, int cout_)
      : cin(cin_), cout(cout_) {
    b3 = ConvBN(reg, prefix + ".b3", cin, cout, 3, 1, 1);
    b1 = ConvBN(reg, prefix + ".b1", cin, cout, 1, 1, 0);
    has_identity = cin == cout;
    if (has_identity) {
      id_mean = reg.param(prefix + ".bid.bn.mean", {cout}, Init::Zero);
      id_rstd = reg.param(prefix + ".bid.bn.rstd", {cout}, Init::One);
      id_gamma = reg.param(prefix + ".bid.bn.gamma", {cout}, Init::One);
      id_beta = reg.param(prefix + ".bid.bn.beta", {cout}, Init::Zero);
    }
    fuse();
  }

  void fuse() {
    Tensor w3f, b3f, w1f, b1f;
    b3.fold_into(&w3f, &b3f);
    b1.fold_into(&w1f, &b1f);
    fused_w = w3f;  // fold_into returned a fresh tensor, safe to accumulate into
    fused_b = b3f;
    float* fw = fused_w.data();
    float* fb = fused_b.data();
    // 1x1 branch lands on the center tap.
    for (int o = 0; o < cout; ++o) {
      for (int i = 0; i < cin; ++i) {
        fw[fused_w.offset4(o, i, 1, 1)] += w1f[w1f.offset4(o, i, 0, 0)];
      }
      fb[o] += b1f[o];
    }
    if (has_identity) {
      for (int o = 0; o < cout; ++o) {
        const float scale = id_gamma[o] * id_rstd[o];
        fw[fused_w.offset4(o, o, 1, 1)] += scale;
        fb[o] += id_beta[o] - id_mean[o] * scale;
      }
    }
  }

  Tensor forward(const Tensor& x, GradTape* tape = nullptr, RepMode mode = RepMode::Fused) const {
    if (mode == RepMode::Fused) {
      return silu(conv2d(x, fused_w, &fused_b, {1, 1, 1}, tape), tape);
    }
    Tensor y = add(b3.forward(x, tape), b1.forward(x, tape), tape);
    if (has_identity) {
      y = add(y, norm_batch_inference(x, id_mean, id_rstd, id_gamma, id_beta, tape), tape);
    }
    return silu(y, tape);
  }
};

struct RepBlock {
  std::vector<RepConv> units;

  RepBlock() = default;
  RepBlock(ParamRegistry& reg, const std::string& prefix, int cin, int cout, int depth) {
    units.reserve(static_cast<size_t>(depth));
    for (int i = 0; i < depth; ++i) {
      units.emplace_back(reg, prefix + ".r" + std::to_string(i), i == 0 ? cin : cout, cout);
    }
  }

  Tensor forward(const Tensor& x, GradTape* tape = nullptr, RepMode mode = RepMode::Fused) const {
    Tensor y = x;
    for (const auto& u : units) y = u.forward(y, tape, mode);
    return y;
  }
};

struct Bottleneck {
  ConvBNAct cv1, cv2;

  Bottleneck() = default;
  Bottleneck(ParamRegistry& reg, const std::string& prefix, int c)
      : cv1(reg, prefix + ".cv1", c, c, 3), cv2(reg, prefix + ".cv2", c, c, 3) {}

  Tensor forward(const Tensor& x, GradTape* tape = nullptr) const {
    return add(x, cv2.forward(cv1.forward(x, tape), tape), tape);
  }
};

// Split-transform-merge stage: a 1x1 expansion is halved, one half runs a
// chain of residual bottlenecks, and every intermediate is concatenated
// before the 1x1 output projection.
struct C2f {
  ConvBNAct cv1, cv2;
  std::vector<Bottleneck> bottlenecks;
  int half = 0;

  C2f() = default;
  C2f(ParamRegistry& reg, const std::string& prefix, int cin, int cout, int depth) {
    half = cout / 2;
    cv1 = ConvBNAct(reg, prefix + ".cv1", cin, 2 * half, 1);
    bottlenecks.reserve(static_cast<size_t>(depth));
    for (int i = 0; i < depth; ++i) {
      bottlenecks.emplace_back(reg, prefix + ".m" + std::to_string(i), half);
    }
    cv2 = ConvBNAct(reg, prefix + ".cv2", (2 + depth) * half, cout, 1);
  }

  Tensor forward(const Tensor& x, GradTape* tape = nullptr) const {
    Tensor y = cv1.forward(x, tape);
    std::vector<Tensor> parts = split(y, {half, half}, 1, tape);
    Tensor cur = parts[1];
    for (const auto& b : bottlenecks) {
      cur = b.forward(cur, tape);
      parts.push_back(cur);
    }
    return cv2.forward(concat(parts, 1, tape), tape);
  }
};

struct Linear {
  Tensor w, b;
  int dout = 0;

  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& prefix, int din, int dout_) : dout(dout_) {
    w = reg.param(prefix + ".w", {din, dout}, Init::HeNormal, din);
    b = reg.param(prefix + ".b", {dout}, Init::Zero);
  }

  Tensor forward(const Tensor& x, GradTape* tape = nullptr) const {
    return add(matmul(x, w, tape), reshape(b, {1, dout}), tape);
  }
};

// Multi-head self-attention over a [tokens, dim] sequence.
struct MHSA {
  Linear q, k, v, o;
  int heads = 0, dim = 0;

  MHSA() = default;
  MHSA(ParamRegistry& reg, const std::string& prefix, int dim_, int heads_)
      : q(reg, prefix + ".wq", dim_, dim_),
        k(reg, prefix + ".wk", dim_, dim_),
        v(reg, prefix + ".wv", dim_, dim_),
        o(reg, prefix + ".wo", dim_, dim_),
        heads(heads_),
        dim(dim_) {}

  Tensor forward(const Tensor& x, GradTape* tape = nullptr) const {
    const int dh = dim / heads;
    Tensor qm = q.forward(x, tape);
    Tensor km = k.forward(x, tape);
    Tensor vm = v.forward(x, tape);
    const std::vector<int> sizes(static_cast<size_t>(heads), dh);
    auto qs = split(qm, sizes, 1, tape);
    auto ks = split(km, sizes, 1, tape);
    auto vs = split(vm, sizes, 1, tape);
    Tensor scale = Tensor::full({1, 1}, 1.0f / std::sqrt(static_cast<float>(dh)));
    std::vector<Tensor> outs;
    outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Tensor scores = matmul(qs[static_cast<size_t>(h)],
                             transpose2d(ks[static_cast<size_t>(h)], tape), tape);
      scores = mul(scores, scale, tape);
      Tensor attn = softmax(scores, 1, tape);
      outs.push_back(matmul(attn, vs[static_cast<size_t>(h)], tape));
    }
    return o.forward(concat(outs, 1, tape), tape);
  }
};

// Pre-norm transformer encoder block with a 2x-expansion MLP.
struct TransformerBlock {
  Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  MHSA attn;
  Linear mlp1, mlp2;

  TransformerBlock() = default;
  TransformerBlock(ParamRegistry& reg, const std::string& prefix, int dim, int heads) {
    ln1_gamma = reg.param(prefix + ".ln1.gamma", {dim}, Init::One);
    ln1_beta = reg.param(prefix + ".ln1.beta", {dim}, Init::Zero);
    attn = MHSA(reg, prefix + ".attn", dim, heads);
    ln2_gamma = reg.param(prefix + ".ln2.gamma", {dim}, Init::One);
    ln2_beta = reg.param(prefix + ".ln2.beta", {dim}, Init::Zero);
    mlp1 = Linear(reg, prefix + ".mlp1", dim, 2 * dim);
    mlp2 = Linear(reg, prefix + ".mlp2", 2 * dim, dim);
  }

  Tensor forward(const Tensor& x, GradTape* tape = nullptr) const {
    Tensor y = add(x, attn.forward(layer_norm(x, ln1_gamma, ln1_beta, tape), tape), tape);
    Tensor m = mlp1.forward(layer_norm(y, ln2_gamma, ln2_beta, tape), tape);
    m = mlp2.forward(silu(m, tape), tape);
    return add(y, m, tape);
  }
};

}  // namespace dge
