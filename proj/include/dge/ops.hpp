#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "dge/flops.hpp"
#include "dge/parallel.hpp"
#include "dge/tape.hpp"
#include "dge/tensor.hpp"

// Deterministic dense-tensor kernels. Every output element is the result of
// a fixed sequential accumulation (channel-major, then row, then column for
// convolution; k ascending for matmul), so intra-op parallelism over output
// elements cannot change results. Storage and compute are 32-bit floats.
// Passing a GradTape records the adjoint step for reverse-mode gradients;
// backward runs single-threaded in reverse execution order.

namespace dge {

constexpr float kNormEps = 1e-5f;

enum class SpatialAxis { Height, Width };

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

inline void require_rank(const Tensor& t, int rank, const char* op, const char* arg) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": " + arg + " must have rank " +
                                std::to_string(rank) + ", got shape " + shape_to_string(t.shape()));
  }
}

inline float sigmoid_scalar(float x) {
  // Clamped to the open interval (0,1); float saturation would otherwise
  // land exactly on 0 or 1 for |x| beyond ~17.
  float y = 1.0f / (1.0f + std::exp(-x));
  constexpr float lo = std::numeric_limits<float>::min();
  constexpr float hi = 1.0f - std::numeric_limits<float>::epsilon() / 2.0f;
  return std::min(std::max(y, lo), hi);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

struct Conv2dOpts {
  int stride = 1;
  int pad = 0;  // zero padding
  int groups = 1;
};

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias,
                     const Conv2dOpts& opt = {}, GradTape* tape = nullptr) {
  detail::require_rank(x, 4, "conv2d", "input");
  detail::require_rank(w, 4, "conv2d", "weight");
  const int n = x.extent(0), cin = x.extent(1), h = x.extent(2), wd = x.extent(3);
  const int cout = w.extent(0), cig = w.extent(1), kh = w.extent(2), kw = w.extent(3);
  const int g = opt.groups, stride = opt.stride, pad = opt.pad;
  detail::require(stride >= 1, "conv2d: stride must be >= 1");
  detail::require(pad >= 0, "conv2d: pad must be >= 0");
  detail::require(g >= 1 && cin % g == 0,
                  "conv2d: input channel axis (" + std::to_string(cin) +
                      ") not divisible by groups (" + std::to_string(g) + ")");
  detail::require(cout % g == 0, "conv2d: output channel axis (" + std::to_string(cout) +
                                     ") not divisible by groups (" + std::to_string(g) + ")");
  detail::require(cig == cin / g, "conv2d: weight channel axis is " + std::to_string(cig) +
                                      ", expected Cin/groups = " + std::to_string(cin / g));
  if (bias) {
    detail::require_rank(*bias, 1, "conv2d", "bias");
    detail::require(bias->extent(0) == cout, "conv2d: bias axis is " +
                                                 std::to_string(bias->extent(0)) + ", expected " +
                                                 std::to_string(cout));
  }
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  detail::require(h + 2 * pad >= kh && wd + 2 * pad >= kw,
                  "conv2d: kernel exceeds padded input on spatial axes (" + std::to_string(h) +
                      "x" + std::to_string(wd) + " with pad " + std::to_string(pad) + " vs kernel " +
                      std::to_string(kh) + "x" + std::to_string(kw) + ")");

  Tensor out({n, cout, oh, ow});
  const int cout_per_g = cout / g;
  const float* xp = x.data();
  const float* wp = w.data();
  const float* bp = bias ? bias->data() : nullptr;
  float* op = out.data();

  if (auto* m = current_flop_meter()) {
    m->add(FlopCategory::Conv, flopcost::conv2d(n, cout, cig, kh, kw, oh, ow, bias != nullptr));
  }

  const int64_t total = int64_t(n) * cout * oh * ow;
  parallel_for(total, 2ll * cig * kh * kw, [&](int64_t begin, int64_t end) {
    for (int64_t idx = begin; idx < end; ++idx) {
      int owi = static_cast<int>(idx % ow);
      int ohi = static_cast<int>((idx / ow) % oh);
      int co = static_cast<int>((idx / (int64_t(ow) * oh)) % cout);
      int ni = static_cast<int>(idx / (int64_t(ow) * oh * cout));
      const int gi = co / cout_per_g;
      float acc = 0.0f;
      for (int c = 0; c < cig; ++c) {
        const int ci = gi * cig + c;
        const float* xrow = xp + (int64_t(ni) * cin + ci) * h * wd;
        const float* wrow = wp + ((int64_t(co) * cig + c) * kh) * kw;
        for (int r = 0; r < kh; ++r) {
          const int ih = ohi * stride - pad + r;
          if (ih < 0 || ih >= h) continue;
          for (int s = 0; s < kw; ++s) {
            const int iw = owi * stride - pad + s;
            if (iw < 0 || iw >= wd) continue;
            acc += xrow[int64_t(ih) * wd + iw] * wrow[int64_t(r) * kw + s];
          }
        }
      }
      if (bp) acc += bp[co];
      op[idx] = acc;
    }
  });

  if (tape) {
    x.ensure_grad();
    w.ensure_grad();
    if (bias) bias->ensure_grad();
    out.ensure_grad();
    Tensor xc = x, wc = w, oc = out;
    Tensor bc = bias ? *bias : Tensor();
    const bool has_bias = bias != nullptr;
    tape->record("conv2d", [=] {
      const float* og = oc.grad();
      float* xg = xc.grad();
      float* wg = wc.grad();
      float* bg = has_bias ? bc.grad() : nullptr;
      const float* xv = xc.data();
      const float* wv = wc.data();
      int64_t idx = 0;
      for (int ni = 0; ni < n; ++ni)
        for (int co = 0; co < cout; ++co) {
          const int gi = co / cout_per_g;
          for (int ohi = 0; ohi < oh; ++ohi)
            for (int owi = 0; owi < ow; ++owi, ++idx) {
              const float gv = og[idx];
              if (bg) bg[co] += gv;
              for (int c = 0; c < cig; ++c) {
                const int ci = gi * cig + c;
                for (int r = 0; r < kh; ++r) {
                  const int ih = ohi * stride - pad + r;
                  if (ih < 0 || ih >= h) continue;
                  for (int s = 0; s < kw; ++s) {
                    const int iw = owi * stride - pad + s;
                    if (iw < 0 || iw >= wd) continue;
                    const int64_t xi = ((int64_t(ni) * cin + ci) * h + ih) * wd + iw;
                    const int64_t wi = ((int64_t(co) * cig + c) * kh + r) * kw + s;
                    xg[xi] += gv * wv[wi];
                    wg[wi] += gv * xv[xi];
                  }
                }
              }
            }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

inline Tensor avg_pool2d(const Tensor& x, int kernel, int stride, GradTape* tape = nullptr) {
  detail::require_rank(x, 4, "avg_pool2d", "input");
  detail::require(kernel >= 1 && stride >= 1, "avg_pool2d: kernel and stride must be >= 1");
  const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  detail::require(h >= kernel && w >= kernel,
                  "avg_pool2d: kernel " + std::to_string(kernel) + " exceeds input spatial axes " +
                      std::to_string(h) + "x" + std::to_string(w));
  const int oh = (h - kernel) / stride + 1;
  const int ow = (w - kernel) / stride + 1;
  Tensor out({n, c, oh, ow});
  const float inv = 1.0f / (float(kernel) * float(kernel));
  const float* xp = x.data();
  float* op = out.data();

  if (auto* m = current_flop_meter()) {
    const int64_t out_cells = int64_t(n) * c * oh * ow;
    m->add(FlopCategory::Pool, flopcost::avg_pool(out_cells * kernel * kernel, out_cells));
  }

  const int64_t planes = int64_t(n) * c;
  parallel_for(planes, int64_t(oh) * ow * kernel * kernel, [&](int64_t b, int64_t e) {
    for (int64_t p = b; p < e; ++p) {
      const float* xpl = xp + p * h * w;
      float* opl = op + p * oh * ow;
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          float acc = 0.0f;
          for (int r = 0; r < kernel; ++r)
            for (int s = 0; s < kernel; ++s) acc += xpl[int64_t(i * stride + r) * w + j * stride + s];
          opl[int64_t(i) * ow + j] = acc * inv;
        }
    }
  });

  if (tape) {
    x.ensure_grad();
    out.ensure_grad();
    Tensor xc = x, oc = out;
    tape->record("avg_pool2d", [=] {
      const float* og = oc.grad();
      float* xg = xc.grad();
      for (int64_t p = 0; p < planes; ++p) {
        const float* ogl = og + p * oh * ow;
        float* xgl = xg + p * h * w;
        for (int i = 0; i < oh; ++i)
          for (int j = 0; j < ow; ++j) {
            const float gv = ogl[int64_t(i) * ow + j] * inv;
            for (int r = 0; r < kernel; ++r)
              for (int s = 0; s < kernel; ++s) xgl[int64_t(i * stride + r) * w + j * stride + s] += gv;
          }
      }
    });
  }
  return out;
}

namespace detail {
// Adaptive window over [0, in): start = floor(i*in/out), end = ceil((i+1)*in/out).
inline void adaptive_window(int i, int in, int out, int* start, int* end) {
  *start = static_cast<int>((int64_t(i) * in) / out);
  *end = static_cast<int>((int64_t(i + 1) * in + out - 1) / out);
}
}  // namespace detail

inline Tensor adaptive_avg_pool2d(const Tensor& x, int out_h, int out_w, GradTape* tape = nullptr) {
  detail::require_rank(x, 4, "adaptive_avg_pool2d", "input");
  const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  detail::require(out_h >= 1 && out_w >= 1, "adaptive_avg_pool2d: output extents must be >= 1");
  detail::require(out_h <= h && out_w <= w,
                  "adaptive_avg_pool2d: requested output " + std::to_string(out_h) + "x" +
                      std::to_string(out_w) + " larger than input " + std::to_string(h) + "x" +
                      std::to_string(w));
  Tensor out({n, c, out_h, out_w});
  const float* xp = x.data();
  float* op = out.data();

  if (auto* m = current_flop_meter()) {
    int64_t sum_h = 0, sum_w = 0;
    for (int i = 0; i < out_h; ++i) {
      int s, e;
      detail::adaptive_window(i, h, out_h, &s, &e);
      sum_h += e - s;
    }
    for (int j = 0; j < out_w; ++j) {
      int s, e;
      detail::adaptive_window(j, w, out_w, &s, &e);
      sum_w += e - s;
    }
    const int64_t planes = int64_t(n) * c;
    m->add(FlopCategory::Pool, flopcost::avg_pool(planes * sum_h * sum_w, planes * out_h * out_w));
  }

  const int64_t planes = int64_t(n) * c;
  parallel_for(planes, int64_t(h) * w, [&](int64_t b, int64_t e) {
    for (int64_t p = b; p < e; ++p) {
      const float* xpl = xp + p * h * w;
      float* opl = op + p * out_h * out_w;
      for (int i = 0; i < out_h; ++i) {
        int hs, he;
        detail::adaptive_window(i, h, out_h, &hs, &he);
        for (int j = 0; j < out_w; ++j) {
          int ws, we;
          detail::adaptive_window(j, w, out_w, &ws, &we);
          float acc = 0.0f;
          for (int r = hs; r < he; ++r)
            for (int s = ws; s < we; ++s) acc += xpl[int64_t(r) * w + s];
          opl[int64_t(i) * out_w + j] = acc / (float(he - hs) * float(we - ws));
        }
      }
    }
  });

  if (tape) {
    x.ensure_grad();
    out.ensure_grad();
    Tensor xc = x, oc = out;
    tape->record("adaptive_avg_pool2d", [=] {
      const float* og = oc.grad();
      float* xg = xc.grad();
      for (int64_t p = 0; p < planes; ++p) {
        const float* ogl = og + p * out_h * out_w;
        float* xgl = xg + p * h * w;
        for (int i = 0; i < out_h; ++i) {
          int hs, he;
          detail::adaptive_window(i, h, out_h, &hs, &he);
          for (int j = 0; j < out_w; ++j) {
            int ws, we;
            detail::adaptive_window(j, w, out_w, &ws, &we);
            const float gv = ogl[int64_t(i) * out_w + j] / (float(he - hs) * float(we - ws));
            for (int r = hs; r < he; ++r)
              for (int s = ws; s < we; ++s) xgl[int64_t(r) * w + s] += gv;
          }
        }
      }
    });
  }
  return out;
}

/// Mean along exactly one spatial axis; the pooled axis keeps extent 1.
/// Composing both axes equals global average pooling.
inline Tensor directional_avg_pool(const Tensor& x, SpatialAxis axis, GradTape* tape = nullptr) {
  detail::require_rank(x, 4, "directional_avg_pool", "input");
  const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  const bool pool_h = axis == SpatialAxis::Height;
  const int oh = pool_h ? 1 : h;
  const int ow = pool_h ? w : 1;
  Tensor out({n, c, oh, ow});
  const float* xp = x.data();
  float* op = out.data();
  const int64_t planes = int64_t(n) * c;

  if (auto* m = current_flop_meter()) {
    m->add(FlopCategory::Pool, flopcost::avg_pool(x.size(), planes * oh * ow));
  }

  parallel_for(planes, int64_t(h) * w, [&](int64_t b, int64_t e) {
    for (int64_t p = b; p < e; ++p) {
      const float* xpl = xp + p * h * w;
      float* opl = op + p * oh * ow;
      if (pool_h) {
        const float inv = 1.0f / float(h);
        for (int j = 0; j < w; ++j) {
          float acc = 0.0f;
          for (int i = 0; i < h; ++i) acc += xpl[int64_t(i) * w + j];
          opl[j] = acc * inv;
        }
      } else {
        const float inv = 1.0f / float(w);
        for (int i = 0; i < h; ++i) {
          float acc = 0.0f;
          for (int j = 0; j < w; ++j) acc += xpl[int64_t(i) * w + j];
          opl[i] = acc * inv;
        }
      }
    }
  });

  if (tape) {
    x.ensure_grad();
    out.ensure_grad();
    Tensor xc = x, oc = out;
    tape->record("directional_avg_pool", [=] {
      const float* og = oc.grad();
      float* xg = xc.grad();
      const float inv = pool_h ? 1.0f / float(h) : 1.0f / float(w);
      for (int64_t p = 0; p < planes; ++p) {
        const float* ogl = og + p * oh * ow;
        float* xgl = xg + p * h * w;
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j) xgl[int64_t(i) * w + j] += ogl[pool_h ? j : i] * inv;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bilinear resize (half-pixel centers, edge clamp)
// ---------------------------------------------------------------------------

namespace detail {
struct LerpCoord {
  int lo, hi;
  float frac;
};
inline LerpCoord lerp_coord(int i, int in, int out) {
  const double s = (double(i) + 0.5) * (double(in) / double(out)) - 0.5;
  const double f = std::floor(s);
  int lo = static_cast<int>(f);
  float frac = static_cast<float>(s - f);
  int hi = lo + 1;
  lo = std::clamp(lo, 0, in - 1);
  hi = std::clamp(hi, 0, in - 1);
  return {lo, hi, frac};
}
}  // namespace detail

inline Tensor bilinear_resize(const Tensor& x, int out_h, int out_w, GradTape* tape = nullptr) {
  detail::require_rank(x, 4, "bilinear_resize", "input");
  detail::require(out_h >= 1 && out_w >= 1, "bilinear_resize: output extents must be >= 1");
  const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  const int64_t planes = int64_t(n) * c;

  if (out_h == h && out_w == w) {
    // Same-size resize is an exact identity (and costs nothing).
    Tensor out = x.clone();
    if (tape) {
      x.ensure_grad();
      out.ensure_grad();
      Tensor xc = x, oc = out;
      tape->record("bilinear_resize", [=] {
        const float* og = oc.grad();
        float* xg = xc.grad();
        for (int64_t i = 0; i < xc.size(); ++i) xg[i] += og[i];
      });
    }
    return out;
  }

  Tensor out({n, c, out_h, out_w});
  std::vector<detail::LerpCoord> hc(static_cast<size_t>(out_h)), wc(static_cast<size_t>(out_w));
  for (int i = 0; i < out_h; ++i) hc[static_cast<size_t>(i)] = detail::lerp_coord(i, h, out_h);
  for (int j = 0; j < out_w; ++j) wc[static_cast<size_t>(j)] = detail::lerp_coord(j, w, out_w);
  const float* xp = x.data();
  float* op = out.data();

  if (auto* m = current_flop_meter()) {
    m->add(FlopCategory::Resize, flopcost::bilinear(planes * out_h * out_w));
  }

  parallel_for(planes, int64_t(out_h) * out_w * 8, [&](int64_t b, int64_t e) {
    for (int64_t p = b; p < e; ++p) {
      const float* xpl = xp + p * h * w;
      float* opl = op + p * out_h * out_w;
      for (int i = 0; i < out_h; ++i) {
        const auto& ch = hc[static_cast<size_t>(i)];
        for (int j = 0; j < out_w; ++j) {
          const auto& cw = wc[static_cast<size_t>(j)];
          const float top = (1.0f - cw.frac) * xpl[int64_t(ch.lo) * w + cw.lo] +
                            cw.frac * xpl[int64_t(ch.lo) * w + cw.hi];
          const float bot = (1.0f - cw.frac) * xpl[int64_t(ch.hi) * w + cw.lo] +
                            cw.frac * xpl[int64_t(ch.hi) * w + cw.hi];
          opl[int64_t(i) * out_w + j] = (1.0f - ch.frac) * top + ch.frac * bot;
        }
      }
    }
  });

  if (tape) {
    x.ensure_grad();
    out.ensure_grad();
    Tensor xc = x, oc = out;
    tape->record("bilinear_resize", [=] {
      const float* og = oc.grad();
      float* xg = xc.grad();
      for (int64_t p = 0; p < planes; ++p) {
        const float* ogl = og + p * out_h * out_w;
        float* xgl = xg + p * h * w;
        for (int i = 0; i < out_h; ++i) {
          const auto& ch = hc[static_cast<size_t>(i)];
          for (int j = 0; j < out_w; ++j) {
            const auto& cw = wc[static_cast<size_t>(j)];
            const float gv = ogl[int64_t(i) * out_w + j];
            xgl[int64_t(ch.lo) * w + cw.lo] += gv * (1.0f - ch.frac) * (1.0f - cw.frac);
            xgl[int64_t(ch.lo) * w + cw.hi] += gv * (1.0f - ch.frac) * cw.frac;
            xgl[int64_t(ch.hi) * w + cw.lo] += gv * ch.frac * (1.0f - cw.frac);
            xgl[int64_t(ch.hi) * w + cw.hi] += gv * ch.frac * cw.frac;
          }
        }
      }
    });
  }
  return out;
}

/// Replicates the border ring `pad` deep on both spatial axes. Keeps
/// spatially constant inputs constant, unlike zero padding.
inline Tensor pad_edge2d(const Tensor& x, int pad, GradTape* tape = nullptr) {
  detail::require_rank(x, 4, "pad_edge2d", "input");
  detail::require(pad >= 0, "pad_edge2d: pad must be >= 0");
  if (pad == 0) return x;
  const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  const int oh = h + 2 * pad, ow = w + 2 * pad;
  Tensor out({n, c, oh, ow});
  const float* xp = x.data();
  float* op = out.data();
  const int64_t planes = int64_t(n) * c;
  for (int64_t p = 0; p < planes; ++p) {
    const float* xpl = xp + p * h * w;
    float* opl = op + p * oh * ow;
    for (int i = 0; i < oh; ++i) {
      const int si = std::clamp(i - pad, 0, h - 1);
      for (int j = 0; j < ow; ++j) {
        const int sj = std::clamp(j - pad, 0, w - 1);
        opl[int64_t(i) * ow + j] = xpl[int64_t(si) * w + sj];
      }
    }
  }
  if (tape) {
    x.ensure_grad();
    out.ensure_grad();
    Tensor xc = x, oc = out;
    tape->record("pad_edge2d", [=] {
      const float* og = oc.grad();
      float* xg = xc.grad();
      for (int64_t p = 0; p < planes; ++p) {
        const float* ogl = og + p * oh * ow;
        float* xgl = xg + p * h * w;
        for (int i = 0; i < oh; ++i) {
          const int si = std::clamp(i - pad, 0, h - 1);
          for (int j = 0; j < ow; ++j) {
            const int sj = std::clamp(j - pad, 0, w - 1);
            xgl[int64_t(si) * w + sj] += ogl[int64_t(i) * ow + j];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matmul / transpose
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b, GradTape* tape = nullptr) {
  detail::require_rank(a, 2, "matmul", "lhs");
  detail::require_rank(b, 2, "matmul", "rhs");
  const int m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
  detail::require(k == k2, "matmul: inner extents differ (" + std::to_string(k) + " vs " +
                               std::to_string(k2) + ")");
  Tensor out({m, n});
  const float* ap = a.data();
  const float* bp = b.data();
  float* op = out.data();

  if (auto* mt = current_flop_meter()) mt->add(FlopCategory::MatMul, flopcost::matmul(m, k, n));

  parallel_for(int64_t(m) * n, 2ll * k, [&](int64_t begin, int64_t end) {
    for (int64_t idx = begin; idx < end; ++idx) {
      const int i = static_cast<int>(idx / n);
      const int j = static_cast<int>(idx % n);
      float acc = 0.0f;
      for (int t = 0; t < k; ++t) acc += ap[int64_t(i) * k + t] * bp[int64_t(t) * n + j];
      op[idx] = acc;
    }
  });

  if (tape) {
    a.ensure_grad();
    b.ensure_grad();
    out.ensure_grad();
    Tensor ac = a, bc = b, oc = out;
    tape->record("matmul", [=] {
      const float* og = oc.grad();
      float* ag = ac.grad();
      float* bg = bc.grad();
      const float* av = ac.data();
      const float* bv = bc.data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const float gv = og[int64_t(i) * n + j];
          for (int t = 0; t < k; ++t) {
            ag[int64_t(i) * k + t] += gv * bv[int64_t(t) * n + j];
            bg[int64_t(t) * n + j] += gv * av[int64_t(i) * k + t];
          }
        }
    });
  }
  return out;
}

inline Tensor transpose2d(const Tensor& a, GradTape* tape = nullptr) {
  detail::require_rank(a, 2, "transpose2d", "input");
  const int m = a.extent(0), n = a.extent(1);
  Tensor out({n, m});
  const float* ap = a.data();
  float* op = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) op[int64_t(j) * m + i] = ap[int64_t(i) * n + j];
  if (tape) {
    a.ensure_grad();
    out.ensure_grad();
    Tensor ac = a, oc = out;
    tape->record("transpose2d", [=] {
      const float* og = oc.grad();
      float* ag = ac.grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) ag[int64_t(i) * n + j] += og[int64_t(j) * m + i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise (with broadcasting where an extent is 1)
// ---------------------------------------------------------------------------

namespace detail {

struct BroadcastPlan {
  std::vector<int> out_shape;
  std::vector<int64_t> stride_a, stride_b;  // in elements; 0 on broadcast axes
  int64_t out_elems = 0;
};

inline BroadcastPlan broadcast_plan(const char* op, const Tensor& a, const Tensor& b) {
  require(a.rank() == b.rank(), std::string(op) + ": operands must share rank, got " +
                                    shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  const int r = a.rank();
  BroadcastPlan plan;
  plan.out_shape.resize(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int ea = a.extent(i), eb = b.extent(i);
    require(ea == eb || ea == 1 || eb == 1,
            std::string(op) + ": extents on axis " + std::to_string(i) + " are not broadcastable (" +
                std::to_string(ea) + " vs " + std::to_string(eb) + ")");
    plan.out_shape[static_cast<size_t>(i)] = std::max(ea, eb);
  }
  plan.out_elems = shape_product(plan.out_shape);
  auto strides_for = [&](const Tensor& t) {
    std::vector<int64_t> st(static_cast<size_t>(r), 0);
    int64_t acc = 1;
    for (int i = r - 1; i >= 0; --i) {
      st[static_cast<size_t>(i)] = (t.extent(i) == 1 && plan.out_shape[static_cast<size_t>(i)] > 1)
                                       ? 0
                                       : acc;
      acc *= t.extent(i);
    }
    return st;
  };
  plan.stride_a = strides_for(a);
  plan.stride_b = strides_for(b);
  return plan;
}

// Decomposes a row-major linear index in out_shape into operand offsets.
inline void broadcast_offsets(const BroadcastPlan& plan, int64_t lin, int64_t* oa, int64_t* ob) {
  int64_t a = 0, b = 0, rem = lin;
  for (int i = static_cast<int>(plan.out_shape.size()) - 1; i >= 0; --i) {
    const int64_t coord = rem % plan.out_shape[static_cast<size_t>(i)];
    rem /= plan.out_shape[static_cast<size_t>(i)];
    a += coord * plan.stride_a[static_cast<size_t>(i)];
    b += coord * plan.stride_b[static_cast<size_t>(i)];
  }
  *oa = a;
  *ob = b;
}

}  // namespace detail

enum class BinaryOp { Add, Mul };

inline Tensor binary_elementwise(BinaryOp kind, const Tensor& a, const Tensor& b,
                                 GradTape* tape = nullptr) {
  const char* name = kind == BinaryOp::Add ? "add" : "mul";
  const auto plan = detail::broadcast_plan(name, a, b);
  Tensor out(plan.out_shape);
  const float* ap = a.data();
  const float* bp = b.data();
  float* op = out.data();

  if (auto* m = current_flop_meter()) m->add(FlopCategory::Elementwise, flopcost::elementwise(plan.out_elems));

  parallel_for(plan.out_elems, 4, [&](int64_t begin, int64_t end) {
    for (int64_t idx = begin; idx < end; ++idx) {
      int64_t oa, ob;
      detail::broadcast_offsets(plan, idx, &oa, &ob);
      op[idx] = kind == BinaryOp::Add ? ap[oa] + bp[ob] : ap[oa] * bp[ob];
    }
  });

  if (tape) {
    a.ensure_grad();
    b.ensure_grad();
    out.ensure_grad();
    Tensor ac = a, bc = b, oc = out;
    tape->record(name, [=] {
      const float* og = oc.grad();
      float* ag = ac.grad();
      float* bg = bc.grad();
      const float* av = ac.data();
      const float* bv = bc.data();
      for (int64_t idx = 0; idx < plan.out_elems; ++idx) {
        int64_t oa, ob;
        detail::broadcast_offsets(plan, idx, &oa, &ob);
        const float gv = og[idx];
        if (kind == BinaryOp::Add) {
          ag[oa] += gv;
          bg[ob] += gv;
        } else {
          ag[oa] += gv * bv[ob];
          bg[ob] += gv * av[oa];
        }
      }
    });
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b, GradTape* tape = nullptr) {
  return binary_elementwise(BinaryOp::Add, a, b, tape);
}
inline Tensor mul(const Tensor& a, const Tensor& b, GradTape* tape = nullptr) {
  return binary_elementwise(BinaryOp::Mul, a, b, tape);
}

inline Tensor sigmoid(const Tensor& x, GradTape* tape = nullptr) {
  Tensor out(x.shape());
  const float* xp = x.data();
  float* op = out.data();
  if (auto* m = current_flop_meter()) m->add(FlopCategory::Elementwise, flopcost::sigmoid(x.size()));
  parallel_for(x.size(), 4, [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) op[i] = detail::sigmoid_scalar(xp[i]);
  });
  if (tape) {
    x.ensure_grad();
    out.ensure_grad();
    Tensor xc = x, oc = out;
    tape->record("sigmoid", [=] {
      const float* og = oc.grad();
      const float* ov = oc.data();
      float* xg = xc.grad();
      for (int64_t i = 0; i < oc.size(); ++i) xg[i] += og[i] * ov[i] * (1.0f - ov[i]);
    });
  }
  return out;
}

inline Tensor silu(const Tensor& x, GradTape* tape = nullptr) {
  Tensor out(x.shape());
  const float* xp = x.data();
  float* op = out.data();
  if (auto* m = current_flop_meter()) m->add(FlopCategory::Elementwise, flopcost::silu(x.size()));
  parallel_for(x.size(), 5, [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) op[i] = xp[i] * detail::sigmoid_scalar(xp[i]);
  });
  if (tape) {
    x.ensure_grad();
    out.ensure_grad();
    Tensor xc = x, oc = out;
    tape->record("silu", [=] {
      const float* og = oc.grad();
      const float* xv = xc.data();
      float* xg = xc.grad();
      for (int64_t i = 0; i < xc.size(); ++i) {
        const float s = detail::sigmoid_scalar(xv[i]);
        xg[i] += og[i] * s * (1.0f + xv[i] * (1.0f - s));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& x, int axis, GradTape* tape = nullptr) {
  detail::require(axis >= 0 && axis < x.rank(),
                  "softmax: axis " + std::to_string(axis) + " out of range for shape " +
                      shape_to_string(x.shape()));
  const int len = x.extent(axis);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.extent(i);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.extent(i);
  Tensor out(x.shape());
  const float* xp = x.data();
  float* op = out.data();

  if (auto* m = current_flop_meter()) m->add(FlopCategory::Softmax, flopcost::softmax(x.size()));

  parallel_for(outer * inner, 4ll * len, [&](int64_t b, int64_t e) {
    for (int64_t s = b; s < e; ++s) {
      const int64_t o = s / inner, in = s % inner;
      const float* xs = xp + o * len * inner + in;
      float* os = op + o * len * inner + in;
      float mx = xs[0];
      for (int i = 1; i < len; ++i) mx = std::max(mx, xs[int64_t(i) * inner]);
      float sum = 0.0f;
      for (int i = 0; i < len; ++i) {
        const float ev = std::exp(xs[int64_t(i) * inner] - mx);
        os[int64_t(i) * inner] = ev;
        sum += ev;
      }
      const float inv = 1.0f / sum;
      for (int i = 0; i < len; ++i) os[int64_t(i) * inner] *= inv;
    }
  });

  if (tape) {
    x.ensure_grad();
    out.ensure_grad();
    Tensor xc = x, oc = out;
    tape->record("softmax", [=] {
      const float* og = oc.grad();
      const float* ov = oc.data();
      float* xg = xc.grad();
      for (int64_t s = 0; s < outer * inner; ++s) {
        const int64_t o = s / inner, in = s % inner;
        const int64_t base = o * len * inner + in;
        float dot = 0.0f;
        for (int i = 0; i < len; ++i) dot += og[base + int64_t(i) * inner] * ov[base + int64_t(i) * inner];
        for (int i = 0; i < len; ++i) {
          const int64_t k = base + int64_t(i) * inner;
          xg[k] += ov[k] * (og[k] - dot);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Inference-form per-channel normalization: y = (x - mean) * rstd * gamma + beta
/// with stored statistics (mean, rstd). Statistics are constants; gamma and
/// beta are differentiable.
inline Tensor norm_batch_inference(const Tensor& x, const Tensor& mean, const Tensor& rstd,
                                   const Tensor& gamma, const Tensor& beta,
                                   GradTape* tape = nullptr) {
  detail::require_rank(x, 4, "norm_batch_inference", "input");
  const int c = x.extent(1);
  for (const auto* t : {&mean, &rstd, &gamma, &beta}) {
    detail::require(t->rank() == 1 && t->extent(0) == c,
                    "norm_batch_inference: parameter shape " + shape_to_string(t->shape()) +
                        " does not match channel axis " + std::to_string(c));
  }
  const int n = x.extent(0), h = x.extent(2), w = x.extent(3);
  Tensor out(x.shape());
  std::vector<float> scale(static_cast<size_t>(c)), shift(static_cast<size_t>(c));
  for (int i = 0; i < c; ++i) {
    scale[static_cast<size_t>(i)] = rstd[i] * gamma[i];
    shift[static_cast<size_t>(i)] = beta[i] - mean[i] * scale[static_cast<size_t>(i)];
  }
  const float* xp = x.data();
  float* op = out.data();
  const int64_t hw = int64_t(h) * w;

  if (auto* m = current_flop_meter()) {
    m->add(FlopCategory::Norm, flopcost::norm_batch_inference(x.size(), c));
  }

  parallel_for(int64_t(n) * c, hw, [&](int64_t b, int64_t e) {
    for (int64_t p = b; p < e; ++p) {
      const int ci = static_cast<int>(p % c);
      const float sc = scale[static_cast<size_t>(ci)], sh = shift[static_cast<size_t>(ci)];
      const float* xpl = xp + p * hw;
      float* opl = op + p * hw;
      for (int64_t i = 0; i < hw; ++i) opl[i] = xpl[i] * sc + sh;
    }
  });

  if (tape) {
    x.ensure_grad();
    gamma.ensure_grad();
    beta.ensure_grad();
    out.ensure_grad();
    Tensor xc = x, mc = mean, rc = rstd, gc = gamma, bc = beta, oc = out;
    tape->record("norm_batch_inference", [=] {
      const float* og = oc.grad();
      const float* xv = xc.data();
      float* xg = xc.grad();
      float* gg = gc.grad();
      float* bg = bc.grad();
      for (int64_t p = 0; p < int64_t(n) * c; ++p) {
        const int ci = static_cast<int>(p % c);
        const float sc = rc[ci] * gc[ci];
        const float* ogl = og + p * hw;
        const float* xvl = xv + p * hw;
        float* xgl = xg + p * hw;
        for (int64_t i = 0; i < hw; ++i) {
          xgl[i] += ogl[i] * sc;
          gg[ci] += ogl[i] * (xvl[i] - mc[ci]) * rc[ci];
          bg[ci] += ogl[i];
        }
      }
    });
  }
  return out;
}

/// Group normalization: zero mean / unit variance per (sample, group) with
/// eps = kNormEps, then per-channel affine.
inline Tensor norm_group(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                         GradTape* tape = nullptr) {
  detail::require_rank(x, 4, "norm_group", "input");
  const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  detail::require(groups >= 1 && c % groups == 0,
                  "norm_group: channel axis (" + std::to_string(c) + ") not divisible by groups (" +
                      std::to_string(groups) + ")");
  for (const auto* t : {&gamma, &beta}) {
    detail::require(t->rank() == 1 && t->extent(0) == c,
                    "norm_group: affine shape " + shape_to_string(t->shape()) +
                        " does not match channel axis " + std::to_string(c));
  }
  const int cpg = c / groups;
  const int64_t hw = int64_t(h) * w;
  const int64_t m = int64_t(cpg) * hw;  // elements per (sample, group)
  Tensor out(x.shape());
  const float* xp = x.data();
  const float* gp = gamma.data();
  const float* bp = beta.data();
  float* op = out.data();
  Tensor mean_buf({n, groups, 1, 1});  // saved for backward, indexed n*groups + g
  Tensor rstd_buf({n, groups, 1, 1});
  float* mbuf = mean_buf.data();
  float* rbuf = rstd_buf.data();

  if (auto* mt = current_flop_meter()) {
    mt->add(FlopCategory::Norm, flopcost::norm_group(x.size(), int64_t(n) * groups));
  }

  for (int ni = 0; ni < n; ++ni) {
    for (int gi = 0; gi < groups; ++gi) {
      const float* xs = xp + (int64_t(ni) * c + int64_t(gi) * cpg) * hw;
      float sum = 0.0f;
      for (int64_t i = 0; i < m; ++i) sum += xs[i];
      const float mu = sum / float(m);
      float var = 0.0f;
      for (int64_t i = 0; i < m; ++i) {
        const float d = xs[i] - mu;
        var += d * d;
      }
      var /= float(m);
      const float rstd = 1.0f / std::sqrt(var + kNormEps);
      mbuf[int64_t(ni) * groups + gi] = mu;
      rbuf[int64_t(ni) * groups + gi] = rstd;
      float* os = op + (int64_t(ni) * c + int64_t(gi) * cpg) * hw;
      for (int ch = 0; ch < cpg; ++ch) {
        const int ci = gi * cpg + ch;
        const float g = gp[ci], b = bp[ci];
        for (int64_t i = 0; i < hw; ++i) {
          os[int64_t(ch) * hw + i] = (xs[int64_t(ch) * hw + i] - mu) * rstd * g + b;
        }
      }
    }
  }

  if (tape) {
    x.ensure_grad();
    gamma.ensure_grad();
    beta.ensure_grad();
    out.ensure_grad();
    Tensor xc = x, gc = gamma, bc = beta, oc = out, mbc = mean_buf, rbc = rstd_buf;
    tape->record("norm_group", [=] {
      const float* og = oc.grad();
      const float* xv = xc.data();
      const float* gv = gc.data();
      float* xg = xc.grad();
      float* gg = gc.grad();
      float* bg = bc.grad();
      for (int ni = 0; ni < n; ++ni) {
        for (int gi = 0; gi < groups; ++gi) {
          const int64_t base = (int64_t(ni) * c + int64_t(gi) * cpg) * hw;
          const float mu = mbc[int64_t(ni) * groups + gi];
          const float rstd = rbc[int64_t(ni) * groups + gi];
          // g_i = dL/dxhat_i; dL/dx_i = rstd*(g_i - mean(g) - xhat_i*mean(g*xhat))
          float s1 = 0.0f, s2 = 0.0f;
          for (int ch = 0; ch < cpg; ++ch) {
            const int ci = gi * cpg + ch;
            for (int64_t i = 0; i < hw; ++i) {
              const int64_t k = base + int64_t(ch) * hw + i;
              const float xhat = (xv[k] - mu) * rstd;
              const float gl = og[k] * gv[ci];
              s1 += gl;
              s2 += gl * xhat;
              gg[ci] += og[k] * xhat;
              bg[ci] += og[k];
            }
          }
          const float inv_m = 1.0f / float(m);
          for (int ch = 0; ch < cpg; ++ch) {
            const int ci = gi * cpg + ch;
            for (int64_t i = 0; i < hw; ++i) {
              const int64_t k = base + int64_t(ch) * hw + i;
              const float xhat = (xv[k] - mu) * rstd;
              const float gl = og[k] * gv[ci];
              xg[k] += rstd * (gl - s1 * inv_m - xhat * s2 * inv_m);
            }
          }
        }
      }
    });
  }
  return out;
}

/// Row-wise layer normalization of a [rows, dim] matrix with eps = kNormEps
/// and per-column affine.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         GradTape* tape = nullptr) {
  detail::require_rank(x, 2, "layer_norm", "input");
  const int rows = x.extent(0), dim = x.extent(1);
  for (const auto* t : {&gamma, &beta}) {
    detail::require(t->rank() == 1 && t->extent(0) == dim,
                    "layer_norm: affine shape " + shape_to_string(t->shape()) +
                        " does not match feature axis " + std::to_string(dim));
  }
  Tensor out(x.shape());
  Tensor mean_buf({rows});
  Tensor rstd_buf({rows});
  const float* xp = x.data();
  const float* gp = gamma.data();
  const float* bp = beta.data();
  float* op = out.data();
  float* mbuf = mean_buf.data();
  float* rbuf = rstd_buf.data();

  if (auto* m = current_flop_meter()) m->add(FlopCategory::Norm, flopcost::layer_norm(x.size(), rows));

  for (int r = 0; r < rows; ++r) {
    const float* xs = xp + int64_t(r) * dim;
    float sum = 0.0f;
    for (int i = 0; i < dim; ++i) sum += xs[i];
    const float mu = sum / float(dim);
    float var = 0.0f;
    for (int i = 0; i < dim; ++i) {
      const float d = xs[i] - mu;
      var += d * d;
    }
    var /= float(dim);
    const float rstd = 1.0f / std::sqrt(var + kNormEps);
    mbuf[r] = mu;
    rbuf[r] = rstd;
    float* os = op + int64_t(r) * dim;
    for (int i = 0; i < dim; ++i) os[i] = (xs[i] - mu) * rstd * gp[i] + bp[i];
  }

  if (tape) {
    x.ensure_grad();
    gamma.ensure_grad();
    beta.ensure_grad();
    out.ensure_grad();
    Tensor xc = x, gc = gamma, bc = beta, oc = out, mbc = mean_buf, rbc = rstd_buf;
    tape->record("layer_norm", [=] {
      const float* og = oc.grad();
      const float* xv = xc.data();
      const float* gv = gc.data();
      float* xg = xc.grad();
      float* gg = gc.grad();
      float* bg = bc.grad();
      for (int r = 0; r < rows; ++r) {
        const int64_t base = int64_t(r) * dim;
        const float mu = mbc[r], rstd = rbc[r];
        float s1 = 0.0f, s2 = 0.0f;
        for (int i = 0; i < dim; ++i) {
          const float xhat = (xv[base + i] - mu) * rstd;
          const float gl = og[base + i] * gv[i];
          s1 += gl;
          s2 += gl * xhat;
          gg[i] += og[base + i] * xhat;
          bg[i] += og[base + i];
        }
        const float inv_d = 1.0f / float(dim);
        for (int i = 0; i < dim; ++i) {
          const float xhat = (xv[base + i] - mu) * rstd;
          const float gl = og[base + i] * gv[i];
          xg[base + i] += rstd * (gl - s1 * inv_d - xhat * s2 * inv_d);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Concat / split / reshape
// ---------------------------------------------------------------------------

inline Tensor concat(const std::vector<Tensor>& xs, int axis, GradTape* tape = nullptr) {
  detail::require(!xs.empty(), "concat: needs at least one tensor");
  const int rank = xs.front().rank();
  detail::require(axis >= 0 && axis < rank,
                  "concat: axis " + std::to_string(axis) + " out of range for rank " +
                      std::to_string(rank));
  std::vector<int> out_shape = xs.front().shape();
  int axis_total = 0;
  for (const Tensor& t : xs) {
    detail::require(t.rank() == rank, "concat: rank mismatch between inputs");
    for (int i = 0; i < rank; ++i) {
      if (i == axis) continue;
      detail::require(t.extent(i) == out_shape[static_cast<size_t>(i)],
                      "concat: extent mismatch on axis " + std::to_string(i) + " (" +
                          std::to_string(t.extent(i)) + " vs " +
                          std::to_string(out_shape[static_cast<size_t>(i)]) + ")");
    }
    axis_total += t.extent(axis);
  }
  out_shape[static_cast<size_t>(axis)] = axis_total;
  Tensor out(out_shape);

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
  for (int i = axis + 1; i < rank; ++i) inner *= out_shape[static_cast<size_t>(i)];

  float* op = out.data();
  int offset = 0;
  for (const Tensor& t : xs) {
    const int ext = t.extent(axis);
    const float* tp = t.data();
    for (int64_t o = 0; o < outer; ++o) {
      const float* src = tp + o * ext * inner;
      float* dst = op + (o * axis_total + offset) * inner;
      std::copy(src, src + ext * inner, dst);
    }
    offset += ext;
  }

  if (tape) {
    for (const Tensor& t : xs) t.ensure_grad();
    out.ensure_grad();
    std::vector<Tensor> xc = xs;
    Tensor oc = out;
    tape->record("concat", [=] {
      const float* og = oc.grad();
      int off = 0;
      for (const Tensor& t : xc) {
        const int ext = t.extent(axis);
        float* tg = t.grad();
        for (int64_t o = 0; o < outer; ++o) {
          const float* src = og + (o * axis_total + off) * inner;
          float* dst = tg + o * ext * inner;
          for (int64_t i = 0; i < int64_t(ext) * inner; ++i) dst[i] += src[i];
        }
        off += ext;
      }
    });
  }
  return out;
}

inline std::vector<Tensor> split(const Tensor& x, const std::vector<int>& sizes, int axis,
                                 GradTape* tape = nullptr) {
  detail::require(!sizes.empty(), "split: needs at least one size");
  detail::require(axis >= 0 && axis < x.rank(),
                  "split: axis " + std::to_string(axis) + " out of range for rank " +
                      std::to_string(x.rank()));
  int total = 0;
  for (int s : sizes) {
    detail::require(s >= 1, "split: sizes must be >= 1");
    total += s;
  }
  detail::require(total == x.extent(axis),
                  "split: sizes sum to " + std::to_string(total) + " but axis " +
                      std::to_string(axis) + " has extent " + std::to_string(x.extent(axis)));

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.extent(i);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.extent(i);

  std::vector<Tensor> parts;
  parts.reserve(sizes.size());
  const float* xp = x.data();
  int offset = 0;
  for (int s : sizes) {
    std::vector<int> shape = x.shape();
    shape[static_cast<size_t>(axis)] = s;
    Tensor part(shape);
    float* pp = part.data();
    for (int64_t o = 0; o < outer; ++o) {
      const float* src = xp + (o * total + offset) * inner;
      std::copy(src, src + int64_t(s) * inner, pp + o * s * inner);
    }
    parts.push_back(part);
    offset += s;
  }

  if (tape) {
    x.ensure_grad();
    for (const Tensor& p : parts) p.ensure_grad();
    Tensor xc = x;
    std::vector<Tensor> pc = parts;
    tape->record("split", [=] {
      float* xg = xc.grad();
      int off = 0;
      for (const Tensor& p : pc) {
        const int ext = p.extent(axis);
        const float* pg = p.grad();
        for (int64_t o = 0; o < outer; ++o) {
          float* dst = xg + (o * total + off) * inner;
          const float* src = pg + o * ext * inner;
          for (int64_t i = 0; i < int64_t(ext) * inner; ++i) dst[i] += src[i];
        }
        off += ext;
      }
    });
  }
  return parts;
}

/// Aliased reshape (shares data and gradient storage).
inline Tensor reshape(const Tensor& x, std::vector<int> shape) { return x.reshaped(std::move(shape)); }

}  // namespace dge
