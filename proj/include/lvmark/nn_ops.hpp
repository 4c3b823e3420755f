#pragma once

#include <array>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "lvmark/autograd.hpp"

namespace lvmark::nn {

// ---------------------------------------------------------------------------
// 3D convolution (zero padding), im2col + GEMM. Layouts:
//   x [B, Ci, F, H, W], w [Co, Ci, kf, kh, kw], bias [Co] (optional)
// Batch items are processed independently; weight-gradient partials are
// reduced in batch order so results do not depend on the thread count.
// ---------------------------------------------------------------------------

struct Conv3dSpec {
  int sf = 1, sh = 1, sw = 1;
  int pf = 0, ph = 0, pw = 0;
};

namespace detail {

struct ConvGeom {
  int B, Ci, F, H, W, Co, kf, kh, kw;
  Conv3dSpec s;
  int Fo, Ho, Wo;
  std::int64_t K, N;
};

inline ConvGeom conv_geom(const std::vector<int>& xs, const std::vector<int>& ws,
                          const Conv3dSpec& s) {
  require(xs.size() == 5 && ws.size() == 5, "conv3d: rank-5 input and weight expected");
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], xs[4], ws[0], ws[2], ws[3], ws[4], s, 0, 0, 0, 0, 0};
  require(ws[1] == g.Ci, "conv3d: channel mismatch");
  g.Fo = (g.F + 2 * s.pf - g.kf) / s.sf + 1;
  g.Ho = (g.H + 2 * s.ph - g.kh) / s.sh + 1;
  g.Wo = (g.W + 2 * s.pw - g.kw) / s.sw + 1;
  require(g.Fo > 0 && g.Ho > 0 && g.Wo > 0, "conv3d: kernel larger than padded input");
  g.K = static_cast<std::int64_t>(g.Ci) * g.kf * g.kh * g.kw;
  g.N = static_cast<std::int64_t>(g.Fo) * g.Ho * g.Wo;
  return g;
}

template <class T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::int64_t hw = static_cast<std::int64_t>(g.H) * g.W;
  for (int ci = 0; ci < g.Ci; ++ci)
    for (int a = 0; a < g.kf; ++a)
      for (int b = 0; b < g.kh; ++b)
        for (int c = 0; c < g.kw; ++c) {
          T* row = col + ((((static_cast<std::int64_t>(ci) * g.kf + a) * g.kh + b) * g.kw + c)) * g.N;
          std::int64_t n = 0;
          for (int fo = 0; fo < g.Fo; ++fo) {
            const int fi = fo * g.s.sf + a - g.s.pf;
            if (fi < 0 || fi >= g.F) {
              std::memset(row + n, 0, sizeof(T) * static_cast<std::size_t>(g.Ho) * g.Wo);
              n += static_cast<std::int64_t>(g.Ho) * g.Wo;
              continue;
            }
            const T* xf = x + (static_cast<std::int64_t>(ci) * g.F + fi) * hw;
            for (int ho = 0; ho < g.Ho; ++ho) {
              const int hi = ho * g.s.sh + b - g.s.ph;
              if (hi < 0 || hi >= g.H) {
                std::memset(row + n, 0, sizeof(T) * static_cast<std::size_t>(g.Wo));
                n += g.Wo;
                continue;
              }
              const T* xr = xf + static_cast<std::int64_t>(hi) * g.W;
              for (int wo = 0; wo < g.Wo; ++wo) {
                const int wi = wo * g.s.sw + c - g.s.pw;
                row[n++] = (wi >= 0 && wi < g.W) ? xr[wi] : T(0);
              }
            }
          }
        }
}

template <class T>
void col2im_accum(const T* col, const ConvGeom& g, T* gx) {
  const std::int64_t hw = static_cast<std::int64_t>(g.H) * g.W;
  for (int ci = 0; ci < g.Ci; ++ci)
    for (int a = 0; a < g.kf; ++a)
      for (int b = 0; b < g.kh; ++b)
        for (int c = 0; c < g.kw; ++c) {
          const T* row = col + ((((static_cast<std::int64_t>(ci) * g.kf + a) * g.kh + b) * g.kw + c)) * g.N;
          std::int64_t n = 0;
          for (int fo = 0; fo < g.Fo; ++fo) {
            const int fi = fo * g.s.sf + a - g.s.pf;
            if (fi < 0 || fi >= g.F) {
              n += static_cast<std::int64_t>(g.Ho) * g.Wo;
              continue;
            }
            T* xf = gx + (static_cast<std::int64_t>(ci) * g.F + fi) * hw;
            for (int ho = 0; ho < g.Ho; ++ho) {
              const int hi = ho * g.s.sh + b - g.s.ph;
              if (hi < 0 || hi >= g.H) {
                n += g.Wo;
                continue;
              }
              T* xr = xf + static_cast<std::int64_t>(hi) * g.W;
              for (int wo = 0; wo < g.Wo; ++wo) {
                const int wi = wo * g.s.sw + c - g.s.pw;
                if (wi >= 0 && wi < g.W) xr[wi] += row[n];
                ++n;
              }
            }
          }
        }
}

// Reusable per-thread scratch; im2col overwrites every entry it reads.
template <class T>
std::vector<T>& conv_scratch(int slot) {
  thread_local std::vector<T> bufs[2];
  auto& v = bufs[slot];
  return v;
}

// Direct stride-1 convolution kernels for wide rows (k along W must be 3 or
// 1, padding kw/2). An L1-resident accumulator row avoids reloading y per
// tap; the interior of each row is a clean 3-tap FMA loop that vectorises.
constexpr int kMaxDirectW = 512;

template <class T>
void conv_direct_fwd(const T* x, const T* w, T* y, const ConvGeom& g, int co, T bias_v) {
  T acc[kMaxDirectW];
  const int W = g.W, Wo = g.Wo;
  for (int fo = 0; fo < g.Fo; ++fo)
    for (int ho = 0; ho < g.Ho; ++ho) {
      for (int i = 0; i < Wo; ++i) acc[i] = bias_v;
      for (int ci = 0; ci < g.Ci; ++ci)
        for (int a = 0; a < g.kf; ++a) {
          const int fi = fo + a - g.s.pf;
          if (fi < 0 || fi >= g.F) continue;
          for (int bb = 0; bb < g.kh; ++bb) {
            const int hi = ho + bb - g.s.ph;
            if (hi < 0 || hi >= g.H) continue;
            const T* __restrict xs = x + ((static_cast<std::int64_t>(ci) * g.F + fi) * g.H + hi) * W;
            const T* wt = w + (((static_cast<std::int64_t>(co) * g.Ci + ci) * g.kf + a) * g.kh + bb) * g.kw;
            if (g.kw == 3) {
              const T w0 = wt[0], w1 = wt[1], w2 = wt[2];
              acc[0] += w1 * xs[0] + w2 * xs[1];
              for (int wo = 1; wo < Wo - 1; ++wo)
                acc[wo] += w0 * xs[wo - 1] + w1 * xs[wo] + w2 * xs[wo + 1];
              acc[Wo - 1] += w0 * xs[Wo - 2] + w1 * xs[Wo - 1];
            } else {  // kw == 1
              const T w0 = wt[0];
              for (int wo = 0; wo < Wo; ++wo) acc[wo] += w0 * xs[wo];
            }
          }
        }
      T* __restrict yrow = y + ((static_cast<std::int64_t>(co) * g.Fo + fo) * g.Ho + ho) * Wo;
      for (int i = 0; i < Wo; ++i) yrow[i] = acc[i];
    }
}

// dX for the direct path: same row structure with the kernel flipped;
// produces the full gradient row for input channel ci.
template <class T>
void conv_direct_bwd_x(const T* gy, const T* w, T* gx, const ConvGeom& g, int ci) {
  T acc[kMaxDirectW];
  const int W = g.W, Wo = g.Wo;
  for (int fi = 0; fi < g.F; ++fi)
    for (int hi = 0; hi < g.H; ++hi) {
      for (int i = 0; i < W; ++i) acc[i] = T(0);
      for (int co = 0; co < g.Co; ++co)
        for (int a = 0; a < g.kf; ++a) {
          const int fo = fi - a + g.s.pf;
          if (fo < 0 || fo >= g.Fo) continue;
          for (int bb = 0; bb < g.kh; ++bb) {
            const int ho = hi - bb + g.s.ph;
            if (ho < 0 || ho >= g.Ho) continue;
            const T* __restrict dys = gy + ((static_cast<std::int64_t>(co) * g.Fo + fo) * g.Ho + ho) * Wo;
            const T* wt = w + (((static_cast<std::int64_t>(co) * g.Ci + ci) * g.kf + a) * g.kh + bb) * g.kw;
            if (g.kw == 3) {
              // dx[wi] += sum_cc w[cc] * dy[wi - cc + pw]
              const T w0 = wt[0], w1 = wt[1], w2 = wt[2];
              acc[0] += w1 * dys[0] + w0 * dys[1];
              for (int wi = 1; wi < W - 1; ++wi)
                acc[wi] += w2 * dys[wi - 1] + w1 * dys[wi] + w0 * dys[wi + 1];
              acc[W - 1] += w2 * dys[W - 2] + w1 * dys[W - 1];
            } else {
              const T w0 = wt[0];
              for (int wi = 0; wi < W; ++wi) acc[wi] += w0 * dys[wi];
            }
          }
        }
      T* __restrict dxrow = gx + ((static_cast<std::int64_t>(ci) * g.F + fi) * g.H + hi) * W;
      for (int i = 0; i < W; ++i) dxrow[i] += acc[i];
    }
}

// dW for the direct path: per-tap shifted dot products. 16 independent
// lanes persist across all rows of a tap so the reduction vectorises
// without reassociation; lane sums fold in a fixed order at the end.
template <class T>
void conv_direct_bwd_w(const T* x, const T* gy, T* gw, const ConvGeom& g, int co) {
  const int W = g.W, Wo = g.Wo;
  for (int ci = 0; ci < g.Ci; ++ci)
    for (int a = 0; a < g.kf; ++a)
      for (int bb = 0; bb < g.kh; ++bb) {
        T l0[16] = {}, l1[16] = {}, l2[16] = {};
        T t0 = 0, t1 = 0, t2 = 0;  // scalar tail + boundary accumulators
        for (int fo = 0; fo < g.Fo; ++fo) {
          const int fi = fo + a - g.s.pf;
          if (fi < 0 || fi >= g.F) continue;
          for (int ho = 0; ho < g.Ho; ++ho) {
            const int hi = ho + bb - g.s.ph;
            if (hi < 0 || hi >= g.H) continue;
            const T* __restrict xs = x + ((static_cast<std::int64_t>(ci) * g.F + fi) * g.H + hi) * W;
            const T* __restrict dys = gy + ((static_cast<std::int64_t>(co) * g.Fo + fo) * g.Ho + ho) * Wo;
            if (g.kw == 3) {
              int wo = 1;
              for (; wo + 16 <= Wo - 1; wo += 16)
                for (int j = 0; j < 16; ++j) {
                  l0[j] += xs[wo + j - 1] * dys[wo + j];
                  l1[j] += xs[wo + j] * dys[wo + j];
                  l2[j] += xs[wo + j + 1] * dys[wo + j];
                }
              for (; wo < Wo - 1; ++wo) {
                t0 += xs[wo - 1] * dys[wo];
                t1 += xs[wo] * dys[wo];
                t2 += xs[wo + 1] * dys[wo];
              }
              t1 += xs[0] * dys[0] + xs[Wo - 1] * dys[Wo - 1];
              t2 += xs[1] * dys[0];
              t0 += xs[Wo - 2] * dys[Wo - 1];
            } else {
              int wo = 0;
              for (; wo + 16 <= Wo; wo += 16)
                for (int j = 0; j < 16; ++j) l1[j] += xs[wo + j] * dys[wo + j];
              for (; wo < Wo; ++wo) t1 += xs[wo] * dys[wo];
            }
          }
        }
        double d0 = t0, d1 = t1, d2 = t2;
        for (int j = 0; j < 16; ++j) {
          d0 += l0[j];
          d1 += l1[j];
          d2 += l2[j];
        }
        T* gwt = gw + (((static_cast<std::int64_t>(co) * g.Ci + ci) * g.kf + a) * g.kh + bb) * g.kw;
        if (g.kw == 3) {
          gwt[0] += static_cast<T>(d0);
          gwt[1] += static_cast<T>(d1);
          gwt[2] += static_cast<T>(d2);
        } else {
          gwt[0] += static_cast<T>(d1);
        }
      }
}

}  // namespace detail

template <class T>
VarT<T> conv3d(const VarT<T>& x, const VarT<T>& w, const VarT<T>& bias, const Conv3dSpec& spec) {
  const auto g = detail::conv_geom(x->val.shape(), w->val.shape(), spec);
  const bool has_bias = bias && bias->val.numel() > 0;
  if (has_bias) require(bias->val.numel() == g.Co, "conv3d: bias size mismatch");
  const bool k1 = g.kf == 1 && g.kh == 1 && g.kw == 1 && g.s.sf == 1 && g.s.sh == 1 &&
                  g.s.sw == 1 && g.s.pf == 0 && g.s.ph == 0 && g.s.pw == 0;
  // the direct row kernel beats im2col+GEMM only on wide rows; it also
  // requires same-size output (pad k/2) and kw in {1,3}
  const bool direct = !k1 && g.s.sf == 1 && g.s.sh == 1 && g.s.sw == 1 && g.Wo >= 32 &&
                      g.Wo <= detail::kMaxDirectW && g.Wo == g.W && g.Ho == g.H && g.Fo == g.F &&
                      (g.kw == 3 || g.kw == 1) && g.s.pw == g.kw / 2;
  TensorT<T> out({g.B, g.Co, g.Fo, g.Ho, g.Wo});
  const std::int64_t xsz = static_cast<std::int64_t>(g.Ci) * g.F * g.H * g.W;
  const std::int64_t osz = static_cast<std::int64_t>(g.Co) * g.N;

  if (k1) {
    // pointwise conv: plain channel GEMM per sample
#pragma omp parallel for schedule(static)
    for (int b = 0; b < g.B; ++b)
      gemm(w->val.data(), x->val.data() + b * xsz, out.data() + b * osz, g.Co, g.Ci,
           static_cast<int>(g.N));
  } else if (direct) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < g.B; ++b)
      for (int co = 0; co < g.Co; ++co)
        detail::conv_direct_fwd(x->val.data() + b * xsz, w->val.data(), out.data() + b * osz, g, co,
                                has_bias ? bias->val[co] : T(0));
  } else {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < g.B; ++b) {
      auto& col = detail::conv_scratch<T>(0);
      col.resize(static_cast<std::size_t>(g.K * g.N));
      detail::im2col(x->val.data() + b * xsz, g, col.data());
      gemm(w->val.data(), col.data(), out.data() + b * osz, g.Co, static_cast<int>(g.K),
           static_cast<int>(g.N));
    }
  }
  if (has_bias && !direct) {  // the direct kernel seeds its accumulator with the bias
#pragma omp parallel for schedule(static)
    for (int b = 0; b < g.B; ++b)
      for (int co = 0; co < g.Co; ++co) {
        const T bv = bias->val[co];
        T* row = out.data() + b * osz + co * g.N;
        for (std::int64_t n = 0; n < g.N; ++n) row[n] += bv;
      }
  }

  std::vector<VarT<T>> parents = {x, w};
  if (has_bias) parents.push_back(bias);
  return make_op(std::move(out), std::move(parents),
                 [x, w, bias, has_bias, g, xsz, osz, k1, direct](NodeT<T>& self) {
    const bool need_x = x->requires_grad;
    const bool need_w = w->requires_grad;
    const bool need_b = has_bias && bias->requires_grad;
    if (need_x) x->ensure_grad();
    if (need_w) w->ensure_grad();
    if (k1) {
      if (need_x) {
#pragma omp parallel for schedule(static)
        for (int b = 0; b < g.B; ++b)
          gemm(w->val.data(), self.grad.data() + b * osz, x->grad.data() + b * xsz, g.Ci, g.Co,
               static_cast<int>(g.N), true, true, false);
      }
      if (need_w) {
        for (int b = 0; b < g.B; ++b)  // serial: deterministic accumulation order
          gemm(self.grad.data() + b * osz, x->val.data() + b * xsz, w->grad.data(), g.Co,
               static_cast<int>(g.N), g.Ci, true, false, true);
      }
    } else if (direct) {
      if (need_x) {
#pragma omp parallel for collapse(2) schedule(static)
        for (int b = 0; b < g.B; ++b)
          for (int ci = 0; ci < g.Ci; ++ci)
            detail::conv_direct_bwd_x(self.grad.data() + b * osz, w->val.data(),
                                      x->grad.data() + b * xsz, g, ci);
      }
      if (need_w) {
        if (g.Wo >= 48) {
#pragma omp parallel for schedule(static)
          for (int co = 0; co < g.Co; ++co)
            for (int b = 0; b < g.B; ++b)
              detail::conv_direct_bwd_w(x->val.data() + b * xsz, self.grad.data() + b * osz,
                                        w->grad.data(), g, co);
        } else {
          // narrow rows: im2col + GEMM wins for the weight gradient
          std::vector<TensorT<T>> dw_part(static_cast<std::size_t>(g.B), TensorT<T>(w->val.shape()));
#pragma omp parallel for schedule(static)
          for (int b = 0; b < g.B; ++b) {
            auto& col = detail::conv_scratch<T>(0);
            col.resize(static_cast<std::size_t>(g.K * g.N));
            detail::im2col(x->val.data() + b * xsz, g, col.data());
            gemm(self.grad.data() + b * osz, col.data(), dw_part[static_cast<std::size_t>(b)].data(),
                 g.Co, static_cast<int>(g.N), static_cast<int>(g.K), false, false, true);
          }
          auto& gw = w->grad;
          for (int b = 0; b < g.B; ++b)
            for (std::int64_t i = 0; i < gw.numel(); ++i) gw[i] += dw_part[static_cast<std::size_t>(b)][i];
        }
      }
    } else {
      std::vector<TensorT<T>> dw_part;
      if (need_w) dw_part.assign(static_cast<std::size_t>(g.B), TensorT<T>(w->val.shape()));
#pragma omp parallel for schedule(static)
      for (int b = 0; b < g.B; ++b) {
        auto& col = detail::conv_scratch<T>(0);
        col.resize(static_cast<std::size_t>(g.K * g.N));
        detail::im2col(x->val.data() + b * xsz, g, col.data());
        const T* gy = self.grad.data() + b * osz;
        if (need_w)
          gemm(gy, col.data(), dw_part[static_cast<std::size_t>(b)].data(), g.Co,
               static_cast<int>(g.N), static_cast<int>(g.K), false, false, true);
        if (need_x) {
          auto& dcol = detail::conv_scratch<T>(1);
          dcol.resize(static_cast<std::size_t>(g.K * g.N));
          gemm(w->val.data(), gy, dcol.data(), static_cast<int>(g.K), g.Co, static_cast<int>(g.N),
               false, true, false);
          detail::col2im_accum(dcol.data(), g, x->grad.data() + b * xsz);
        }
      }
      if (need_w) {
        auto& gw = w->grad;
        for (int b = 0; b < g.B; ++b)
          for (std::int64_t i = 0; i < gw.numel(); ++i) gw[i] += dw_part[static_cast<std::size_t>(b)][i];
      }
    }
    if (need_b) {
      auto& gb = bias->ensure_grad();
      for (int co = 0; co < g.Co; ++co) {
        double s = 0;
        for (int b = 0; b < g.B; ++b) {
          const T* row = self.grad.data() + b * osz + co * g.N;
          for (std::int64_t n = 0; n < g.N; ++n) s += row[n];
        }
        gb[co] += static_cast<T>(s);
      }
    }
  });
}

// Nearest-neighbour upsampling by integer factors along (F, H, W).
template <class T>
VarT<T> upsample_nearest(const VarT<T>& x, int uf, int uh, int uw) {
  const auto& s = x->val.shape();
  require(s.size() == 5, "upsample_nearest: rank-5 expected");
  const int B = s[0], C = s[1], F = s[2], H = s[3], W = s[4];
  TensorT<T> out({B, C, F * uf, H * uh, W * uw});
  const int Fo = F * uf, Ho = H * uh, Wo = W * uw;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(B) * C; ++bc) {
    const T* xin = x->val.data() + bc * F * H * W;
    T* y = out.data() + bc * static_cast<std::int64_t>(Fo) * Ho * Wo;
    for (int f = 0; f < Fo; ++f)
      for (int h = 0; h < Ho; ++h) {
        const T* src = xin + (static_cast<std::int64_t>(f / uf) * H + h / uh) * W;
        T* dst = y + (static_cast<std::int64_t>(f) * Ho + h) * Wo;
        for (int w2 = 0; w2 < Wo; ++w2) dst[w2] = src[w2 / uw];
      }
  }
  return make_op(std::move(out), {x}, [x, uf, uh, uw, B, C, F, H, W, Fo, Ho, Wo](NodeT<T>& self) {
    auto& g = x->ensure_grad();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(B) * C; ++bc) {
      T* gx = g.data() + bc * F * H * W;
      const T* gy = self.grad.data() + bc * static_cast<std::int64_t>(Fo) * Ho * Wo;
      for (int f = 0; f < Fo; ++f)
        for (int h = 0; h < Ho; ++h) {
          T* dst = gx + (static_cast<std::int64_t>(f / uf) * H + h / uh) * W;
          const T* src = gy + (static_cast<std::int64_t>(f) * Ho + h) * Wo;
          for (int w2 = 0; w2 < Wo; ++w2) dst[w2 / uw] += src[w2];
        }
    }
  });
}

// Global average pool over (F, H, W): [B,C,F,H,W] -> [B,C].
template <class T>
VarT<T> global_avgpool(const VarT<T>& x) {
  const auto& s = x->val.shape();
  require(s.size() == 5, "global_avgpool: rank-5 expected");
  const int B = s[0], C = s[1];
  const std::int64_t inner = static_cast<std::int64_t>(s[2]) * s[3] * s[4];
  TensorT<T> out({B, C});
  for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(B) * C; ++bc) {
    const T* p = x->val.data() + bc * inner;
    double acc = 0;
    for (std::int64_t i = 0; i < inner; ++i) acc += p[i];
    out[bc] = static_cast<T>(acc / static_cast<double>(inner));
  }
  return make_op(std::move(out), {x}, [x, B, C, inner](NodeT<T>& self) {
    auto& g = x->ensure_grad();
    for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(B) * C; ++bc) {
      const T gv = static_cast<T>(self.grad[bc] / static_cast<double>(inner));
      T* p = g.data() + bc * inner;
      for (std::int64_t i = 0; i < inner; ++i) p[i] += gv;
    }
  });
}

// Group normalisation over [B,C,F,H,W]: per (batch, group) statistics with
// per-channel affine. Content scale is removed per sample, which is what
// lets a watermark reader separate amplitude patterns from clip content.
template <class T>
VarT<T> group_norm(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta, int groups,
                   T eps = T(1e-5)) {
  const auto& s = x->val.shape();
  require(s.size() == 5, "group_norm: rank-5 expected");
  const int B = s[0], C = s[1];
  require(C % groups == 0, "group_norm: groups must divide channels");
  require(gamma->val.numel() == C && beta->val.numel() == C, "group_norm: affine size mismatch");
  const int cg = C / groups;
  const std::int64_t inner = static_cast<std::int64_t>(s[2]) * s[3] * s[4];
  const std::int64_t gsz = cg * inner;
  TensorT<T> out(s);
  TensorT<T> mu({B, groups}), inv_sd({B, groups});
  for (int b = 0; b < B; ++b)
    for (int g = 0; g < groups; ++g) {
      const T* p = x->val.data() + (static_cast<std::int64_t>(b) * C + g * cg) * inner;
      double m = 0, q = 0;
      for (std::int64_t i = 0; i < gsz; ++i) {
        m += p[i];
        q += static_cast<double>(p[i]) * p[i];
      }
      m /= static_cast<double>(gsz);
      q = q / static_cast<double>(gsz) - m * m;
      const double inv = 1.0 / std::sqrt(std::max(q, 0.0) + static_cast<double>(eps));
      mu[static_cast<std::int64_t>(b) * groups + g] = static_cast<T>(m);
      inv_sd[static_cast<std::int64_t>(b) * groups + g] = static_cast<T>(inv);
      T* y = out.data() + (static_cast<std::int64_t>(b) * C + g * cg) * inner;
      for (int c = 0; c < cg; ++c) {
        const T gam = gamma->val[g * cg + c];
        const T bet = beta->val[g * cg + c];
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t k = static_cast<std::int64_t>(c) * inner + i;
          y[k] = static_cast<T>((p[k] - m) * inv) * gam + bet;
        }
      }
    }
  return make_op(std::move(out), {x, gamma, beta},
                 [x, gamma, beta, groups, cg, inner, gsz, B, C, mu, inv_sd](NodeT<T>& self) {
    const bool need_x = x->requires_grad;
    if (need_x) x->ensure_grad();
    auto& ggam = gamma->requires_grad ? gamma->ensure_grad() : gamma->grad;
    auto& gbet = beta->requires_grad ? beta->ensure_grad() : beta->grad;
    for (int b = 0; b < B; ++b)
      for (int g = 0; g < groups; ++g) {
        const T* p = x->val.data() + (static_cast<std::int64_t>(b) * C + g * cg) * inner;
        const T* go = self.grad.data() + (static_cast<std::int64_t>(b) * C + g * cg) * inner;
        const double m = mu[static_cast<std::int64_t>(b) * groups + g];
        const double inv = inv_sd[static_cast<std::int64_t>(b) * groups + g];
        // accumulate group sums of dxhat and dxhat*xhat
        double sum_dxh = 0, sum_dxh_xh = 0;
        for (int c = 0; c < cg; ++c) {
          const double gam = gamma->val[g * cg + c];
          for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t k = static_cast<std::int64_t>(c) * inner + i;
            const double xh = (p[k] - m) * inv;
            const double dxh = static_cast<double>(go[k]) * gam;
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh;
          }
        }
        const double n = static_cast<double>(gsz);
        for (int c = 0; c < cg; ++c) {
          const double gam = gamma->val[g * cg + c];
          double dgam = 0, dbet = 0;
          for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t k = static_cast<std::int64_t>(c) * inner + i;
            const double xh = (p[k] - m) * inv;
            const double gov = go[k];
            dgam += gov * xh;
            dbet += gov;
            if (need_x) {
              const double dxh = gov * gam;
              x->grad.data()[(static_cast<std::int64_t>(b) * C + g * cg) * inner + k] +=
                  static_cast<T>(inv * (dxh - sum_dxh / n - xh * sum_dxh_xh / n));
            }
          }
          if (gamma->requires_grad) ggam[g * cg + c] += static_cast<T>(dgam);
          if (beta->requires_grad) gbet[g * cg + c] += static_cast<T>(dbet);
        }
      }
  });
}

// Global mean + standard-deviation pooling: [B,C,F,H,W] -> [B,2C] with
// layout [mean_0..mean_C-1, std_0..std_C-1]. The std term reads amplitude
// changes that mean pooling is blind to (multiplicative watermarks live
// there).
template <class T>
VarT<T> global_mean_std_pool(const VarT<T>& x, T eps = T(1e-6)) {
  const auto& s = x->val.shape();
  require(s.size() == 5, "global_mean_std_pool: rank-5 expected");
  const int B = s[0], C = s[1];
  const std::int64_t inner = static_cast<std::int64_t>(s[2]) * s[3] * s[4];
  TensorT<T> out({B, 2 * C});
  for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(B) * C; ++bc) {
    const T* p = x->val.data() + bc * inner;
    double m = 0, q = 0;
    for (std::int64_t i = 0; i < inner; ++i) {
      m += p[i];
      q += static_cast<double>(p[i]) * p[i];
    }
    m /= static_cast<double>(inner);
    q /= static_cast<double>(inner);
    const int b = static_cast<int>(bc / C), c = static_cast<int>(bc % C);
    out[static_cast<std::int64_t>(b) * 2 * C + c] = static_cast<T>(m);
    out[static_cast<std::int64_t>(b) * 2 * C + C + c] =
        static_cast<T>(std::sqrt(std::max(q - m * m, 0.0) + static_cast<double>(eps)));
  }
  return make_op(std::move(out), {x}, [x, B, C, inner, eps](NodeT<T>& self) {
    auto& g = x->ensure_grad();
    for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(B) * C; ++bc) {
      const int b = static_cast<int>(bc / C), c = static_cast<int>(bc % C);
      const T* p = x->val.data() + bc * inner;
      T* gp = g.data() + bc * inner;
      const double gm = self.grad[static_cast<std::int64_t>(b) * 2 * C + c];
      const double gs = self.grad[static_cast<std::int64_t>(b) * 2 * C + C + c];
      const double sd = self.val[static_cast<std::int64_t>(b) * 2 * C + C + c];
      double m = 0;
      for (std::int64_t i = 0; i < inner; ++i) m += p[i];
      m /= static_cast<double>(inner);
      // d std / d x_i = (x_i - mean) / (N * std)
      const double k = gs / (static_cast<double>(inner) * sd);
      const double base = gm / static_cast<double>(inner);
      for (std::int64_t i = 0; i < inner; ++i)
        gp[i] += static_cast<T>(base + k * (static_cast<double>(p[i]) - m));
    }
  });
}

// 2x2 spatial average pooling (stride 2) per frame.
template <class T>
VarT<T> avgpool2x2(const VarT<T>& x) {
  const auto& s = x->val.shape();
  require(s.size() == 5, "avgpool2x2: rank-5 expected");
  const int B = s[0], C = s[1], F = s[2], H = s[3], W = s[4];
  require(H % 2 == 0 && W % 2 == 0, "avgpool2x2: H and W must be even");
  const int Ho = H / 2, Wo = W / 2;
  TensorT<T> out({B, C, F, Ho, Wo});
  for (std::int64_t bcf = 0; bcf < static_cast<std::int64_t>(B) * C * F; ++bcf) {
    const T* xin = x->val.data() + bcf * H * W;
    T* y = out.data() + bcf * Ho * Wo;
    for (int h = 0; h < Ho; ++h)
      for (int w2 = 0; w2 < Wo; ++w2) {
        const T* r0 = xin + (2 * h) * W + 2 * w2;
        const T* r1 = r0 + W;
        y[h * Wo + w2] = static_cast<T>(0.25) * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  }
  return make_op(std::move(out), {x}, [x, B, C, F, H, W, Ho, Wo](NodeT<T>& self) {
    auto& g = x->ensure_grad();
    for (std::int64_t bcf = 0; bcf < static_cast<std::int64_t>(B) * C * F; ++bcf) {
      T* gx = g.data() + bcf * H * W;
      const T* gy = self.grad.data() + bcf * Ho * Wo;
      for (int h = 0; h < Ho; ++h)
        for (int w2 = 0; w2 < Wo; ++w2) {
          const T q = static_cast<T>(0.25) * gy[h * Wo + w2];
          T* r0 = gx + (2 * h) * W + 2 * w2;
          r0[0] += q;
          r0[1] += q;
          r0[W] += q;
          r0[W + 1] += q;
        }
    }
  });
}

// Scales a weight tensor along its dim-1 axis (the input-channel axis of a
// conv weight): out[o, i, ...] = w[o, i, ...] * s[i].
template <class T>
VarT<T> scale_axis1(const VarT<T>& w, const VarT<T>& s) {
  const auto& ws = w->val.shape();
  require(ws.size() >= 2, "scale_axis1: rank >= 2 expected");
  const int outer = ws[0], ax = ws[1];
  require(s->val.numel() == ax, "scale_axis1: scale length must equal dim 1");
  std::int64_t inner = 1;
  for (std::size_t d = 2; d < ws.size(); ++d) inner *= ws[d];
  TensorT<T> out(ws);
  for (int o = 0; o < outer; ++o)
    for (int i = 0; i < ax; ++i) {
      const T sv = s->val[i];
      const std::int64_t base = (static_cast<std::int64_t>(o) * ax + i) * inner;
      for (std::int64_t j = 0; j < inner; ++j) out[base + j] = w->val[base + j] * sv;
    }
  return make_op(std::move(out), {w, s}, [w, s, outer, ax, inner](NodeT<T>& self) {
    if (w->requires_grad) {
      auto& gw = w->ensure_grad();
      for (int o = 0; o < outer; ++o)
        for (int i = 0; i < ax; ++i) {
          const T sv = s->val[i];
          const std::int64_t base = (static_cast<std::int64_t>(o) * ax + i) * inner;
          for (std::int64_t j = 0; j < inner; ++j) gw[base + j] += self.grad[base + j] * sv;
        }
    }
    if (s->requires_grad) {
      auto& gs = s->ensure_grad();
      for (int i = 0; i < ax; ++i) {
        double acc = 0;
        for (int o = 0; o < outer; ++o) {
          const std::int64_t base = (static_cast<std::int64_t>(o) * ax + i) * inner;
          for (std::int64_t j = 0; j < inner; ++j)
            acc += static_cast<double>(self.grad[base + j]) * w->val[base + j];
        }
        gs[i] += static_cast<T>(acc);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Fixed (non-learned) spatial filters, applied per frame and channel.
// ---------------------------------------------------------------------------

enum class PadMode { kReplicate, kReflect };

inline int pad_index(int i, int n, PadMode mode) {
  if (i < 0) return mode == PadMode::kReplicate ? 0 : -i - 1;
  if (i >= n) return mode == PadMode::kReplicate ? n - 1 : 2 * n - 1 - i;
  return i;
}

// out[h,w] = sum_k kern[k] * in[pad(h+dy_k), pad(w+dx_k)], same shape as input.
// The taps are an explicit index map, so the backward pass is its exact
// adjoint. Taps iterate outermost; interior columns form clean vector loops
// and only the <= rw edge columns take the padded scalar path.
template <class T>
VarT<T> fixed_filter2d(const VarT<T>& x, const std::vector<double>& kern, int kh, int kw,
                       PadMode pad) {
  const auto& s = x->val.shape();
  require(s.size() == 5, "fixed_filter2d: rank-5 expected");
  require(static_cast<int>(kern.size()) == kh * kw, "fixed_filter2d: kernel size mismatch");
  require(kh % 2 == 1 && kw % 2 == 1, "fixed_filter2d: odd kernel expected");
  const int B = s[0], C = s[1], F = s[2], H = s[3], W = s[4];
  const int rh = kh / 2, rw = kw / 2;
  require(W > 2 * rw && H > 2 * rh, "fixed_filter2d: kernel radius exceeds frame size");
  TensorT<T> out(s);
  const std::int64_t frames = static_cast<std::int64_t>(B) * C * F;
#pragma omp parallel for schedule(static)
  for (std::int64_t fr = 0; fr < frames; ++fr) {
    const T* xin = x->val.data() + fr * H * W;
    T* y = out.data() + fr * H * W;
    std::vector<T> acc(static_cast<std::size_t>(W));
    for (int h = 0; h < H; ++h) {
      std::fill(acc.begin(), acc.end(), T(0));
      int k = 0;
      for (int dy = -rh; dy <= rh; ++dy) {
        const int hi = pad_index(h + dy, H, pad);
        const T* __restrict row = xin + hi * W;
        for (int dx = -rw; dx <= rw; ++dx, ++k) {
          const T kv = static_cast<T>(kern[static_cast<std::size_t>(k)]);
          T* __restrict a = acc.data();
          const int lo = std::max(0, -dx), hi2 = std::min(W, W - dx);
          for (int w2 = lo; w2 < hi2; ++w2) a[w2] += kv * row[w2 + dx];
          for (int w2 = 0; w2 < lo; ++w2) a[w2] += kv * row[pad_index(w2 + dx, W, pad)];
          for (int w2 = hi2; w2 < W; ++w2) a[w2] += kv * row[pad_index(w2 + dx, W, pad)];
        }
      }
      std::copy(acc.begin(), acc.end(), y + static_cast<std::int64_t>(h) * W);
    }
  }
  return make_op(std::move(out), {x}, [x, kern, kh, kw, pad, H = s[3], W = s[4], frames](NodeT<T>& self) {
    const int rh = kh / 2, rw = kw / 2;
    auto& g = x->ensure_grad();
#pragma omp parallel for schedule(static)
    for (std::int64_t fr = 0; fr < frames; ++fr) {
      T* gx = g.data() + fr * H * W;
      const T* gy = self.grad.data() + fr * H * W;
      for (int h = 0; h < H; ++h) {
        const T* __restrict gyrow = gy + static_cast<std::int64_t>(h) * W;
        int k = 0;
        for (int dy = -rh; dy <= rh; ++dy) {
          const int hi = pad_index(h + dy, H, pad);
          T* __restrict grow = gx + hi * W;
          for (int dx = -rw; dx <= rw; ++dx, ++k) {
            const T kv = static_cast<T>(kern[static_cast<std::size_t>(k)]);
            const int lo = std::max(0, -dx), hi2 = std::min(W, W - dx);
            for (int w2 = lo; w2 < hi2; ++w2) grow[w2 + dx] += kv * gyrow[w2];
            for (int w2 = 0; w2 < lo; ++w2) grow[pad_index(w2 + dx, W, pad)] += kv * gyrow[w2];
            for (int w2 = hi2; w2 < W; ++w2) grow[pad_index(w2 + dx, W, pad)] += kv * gyrow[w2];
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Fixed bilinear resampling (crop-resize, rotation). The per-pixel sample
// plan is shared by every batch item, channel, and frame.
// ---------------------------------------------------------------------------

struct SamplePlan {
  int hi = 0, wi = 0;      // input frame size
  int ho = 0, wo = 0;      // output frame size
  // per output pixel: 4 source offsets into an hi*wi frame (or -1) + weights
  std::vector<std::array<int, 4>> src;
  std::vector<std::array<double, 4>> wgt;
  double fill = -1.0;
};

// Builds the plan entry for a single continuous source coordinate (y, x).
inline void plan_bilinear(SamplePlan& plan, double y, double x) {
  std::array<int, 4> idx{-1, -1, -1, -1};
  std::array<double, 4> w{0, 0, 0, 0};
  if (y > -1.0 && y < plan.hi && x > -1.0 && x < plan.wi) {
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const double fy = y - y0, fx = x - x0;
    const double ws[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
    const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
    const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
    for (int k = 0; k < 4; ++k) {
      if (ys[k] >= 0 && ys[k] < plan.hi && xs[k] >= 0 && xs[k] < plan.wi && ws[k] != 0.0) {
        idx[static_cast<std::size_t>(k)] = ys[k] * plan.wi + xs[k];
        w[static_cast<std::size_t>(k)] = ws[k];
      }
    }
  }
  plan.src.push_back(idx);
  plan.wgt.push_back(w);
}

template <class T>
VarT<T> grid_sample_fixed(const VarT<T>& x, const SamplePlan& plan) {
  const auto& s = x->val.shape();
  require(s.size() == 5, "grid_sample_fixed: rank-5 expected");
  require(s[3] == plan.hi && s[4] == plan.wi, "grid_sample_fixed: plan size mismatch");
  const std::int64_t frames = static_cast<std::int64_t>(s[0]) * s[1] * s[2];
  const std::int64_t npix = static_cast<std::int64_t>(plan.ho) * plan.wo;
  TensorT<T> out({s[0], s[1], s[2], plan.ho, plan.wo});
#pragma omp parallel for schedule(static)
  for (std::int64_t fr = 0; fr < frames; ++fr) {
    const T* xin = x->val.data() + fr * plan.hi * plan.wi;
    T* y = out.data() + fr * npix;
    for (std::int64_t p = 0; p < npix; ++p) {
      const auto& idx = plan.src[static_cast<std::size_t>(p)];
      const auto& wgt = plan.wgt[static_cast<std::size_t>(p)];
      double acc = 0;
      double wsum = 0;
      for (int k = 0; k < 4; ++k)
        if (idx[static_cast<std::size_t>(k)] >= 0) {
          acc += wgt[static_cast<std::size_t>(k)] * xin[idx[static_cast<std::size_t>(k)]];
          wsum += wgt[static_cast<std::size_t>(k)];
        }
      acc += (1.0 - wsum) * plan.fill;  // out-of-frame fraction
      y[p] = static_cast<T>(acc);
    }
  }
  return make_op(std::move(out), {x}, [x, plan, frames, npix](NodeT<T>& self) {
    auto& g = x->ensure_grad();
#pragma omp parallel for schedule(static)
    for (std::int64_t fr = 0; fr < frames; ++fr) {
      T* gx = g.data() + fr * plan.hi * plan.wi;
      const T* gy = self.grad.data() + fr * npix;
      for (std::int64_t p = 0; p < npix; ++p) {
        const auto& idx = plan.src[static_cast<std::size_t>(p)];
        const auto& wgt = plan.wgt[static_cast<std::size_t>(p)];
        for (int k = 0; k < 4; ++k)
          if (idx[static_cast<std::size_t>(k)] >= 0)
            gx[idx[static_cast<std::size_t>(k)]] += static_cast<T>(wgt[static_cast<std::size_t>(k)] * gy[p]);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Blockwise 8x8 2D transform: per spatial 8x8 block, Y = M X M^T.
// Used for the DCT in the JPEG surrogate; backward is dX = M^T dY M.
// ---------------------------------------------------------------------------

inline const std::array<double, 64>& dct8_basis() {
  static const std::array<double, 64> m = [] {
    std::array<double, 64> b{};
    const double pi = 3.14159265358979323846;
    for (int k = 0; k < 8; ++k) {
      const double a = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int j = 0; j < 8; ++j) b[static_cast<std::size_t>(k * 8 + j)] = a * std::cos((2 * j + 1) * k * pi / 16.0);
    }
    return b;
  }();
  return m;
}

namespace detail {

// dst = M * src * M^T when !trans, else M^T * src * M (all 8x8).
inline void block8_apply(const double* m, const double* src, double* dst, bool trans) {
  double tmp[64];
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double acc = 0;
      for (int k = 0; k < 8; ++k) acc += (trans ? m[k * 8 + i] : m[i * 8 + k]) * src[k * 8 + j];
      tmp[i * 8 + j] = acc;
    }
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double acc = 0;
      for (int k = 0; k < 8; ++k) acc += tmp[i * 8 + k] * (trans ? m[k * 8 + j] : m[j * 8 + k]);
      dst[i * 8 + j] = acc;
    }
}

}  // namespace detail

template <class T>
VarT<T> dct8_blocks(const VarT<T>& x, bool inverse) {
  const auto& s = x->val.shape();
  require(s.size() == 5, "dct8_blocks: rank-5 expected");
  const int H = s[3], W = s[4];
  require(H % 8 == 0 && W % 8 == 0, "dct8_blocks: H and W must be multiples of 8");
  const std::int64_t frames = static_cast<std::int64_t>(s[0]) * s[1] * s[2];
  const double* m = dct8_basis().data();
  TensorT<T> out(s);
  auto apply = [m, H, W, frames](const TensorT<T>& in, TensorT<T>& dst, bool trans) {
#pragma omp parallel for schedule(static)
    for (std::int64_t fr = 0; fr < frames; ++fr) {
      const T* xin = in.data() + fr * H * W;
      T* y = dst.data() + fr * H * W;
      double blk[64], res[64];
      for (int by = 0; by < H; by += 8)
        for (int bx = 0; bx < W; bx += 8) {
          for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) blk[i * 8 + j] = xin[(by + i) * W + bx + j];
          detail::block8_apply(m, blk, res, trans);
          for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) y[(by + i) * W + bx + j] = static_cast<T>(res[i * 8 + j]);
        }
    }
  };
  apply(x->val, out, inverse);
  return make_op(std::move(out), {x}, [x, apply, inverse](NodeT<T>& self) {
    TensorT<T> gx(x->val.shape());
    apply(self.grad, gx, !inverse);
    auto& g = x->ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += gx[i];
  });
}

// ---------------------------------------------------------------------------
// Frame mixing: out[b,c,t] = sum_s M[t,s] * x[b,c,s]. Covers frame swap,
// drop (with repeat padding), and window averaging as one fixed linear op.
// ---------------------------------------------------------------------------

template <class T>
VarT<T> frame_mix(const VarT<T>& x, const std::vector<double>& m, int f_out) {
  const auto& s = x->val.shape();
  require(s.size() == 5, "frame_mix: rank-5 expected");
  const int B = s[0], C = s[1], F = s[2], H = s[3], W = s[4];
  require(static_cast<int>(m.size()) == f_out * F, "frame_mix: matrix size mismatch");
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  TensorT<T> out({B, C, f_out, H, W});
  for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(B) * C; ++bc) {
    const T* xin = x->val.data() + bc * F * hw;
    T* y = out.data() + bc * f_out * hw;
    for (int t = 0; t < f_out; ++t) {
      T* yt = y + t * hw;
      std::memset(yt, 0, sizeof(T) * static_cast<std::size_t>(hw));
      for (int src = 0; src < F; ++src) {
        const double w = m[static_cast<std::size_t>(t) * F + src];
        if (w == 0.0) continue;
        const T* xs = xin + src * hw;
        for (std::int64_t i = 0; i < hw; ++i) yt[i] += static_cast<T>(w) * xs[i];
      }
    }
  }
  return make_op(std::move(out), {x}, [x, m, f_out, B, C, F, hw](NodeT<T>& self) {
    auto& g = x->ensure_grad();
    for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(B) * C; ++bc) {
      T* gx = g.data() + bc * F * hw;
      const T* gy = self.grad.data() + bc * f_out * hw;
      for (int t = 0; t < f_out; ++t)
        for (int src = 0; src < F; ++src) {
          const double w = m[static_cast<std::size_t>(t) * F + src];
          if (w == 0.0) continue;
          const T* gt = gy + t * hw;
          T* gs = gx + src * hw;
          for (std::int64_t i = 0; i < hw; ++i) gs[i] += static_cast<T>(w) * gt[i];
        }
    }
  });
}

// Replicate-pads the bottom/right spatial edges up to (H+ph, W+pw).
template <class T>
VarT<T> pad_replicate_hw(const VarT<T>& x, int ph, int pw) {
  const auto& s = x->val.shape();
  require(s.size() == 5, "pad_replicate_hw: rank-5 expected");
  if (ph == 0 && pw == 0) return x;
  const int H = s[3], W = s[4], Ho = s[3] + ph, Wo = s[4] + pw;
  const std::int64_t frames = static_cast<std::int64_t>(s[0]) * s[1] * s[2];
  TensorT<T> out({s[0], s[1], s[2], Ho, Wo});
  for (std::int64_t fr = 0; fr < frames; ++fr) {
    const T* xin = x->val.data() + fr * H * W;
    T* y = out.data() + fr * static_cast<std::int64_t>(Ho) * Wo;
    for (int h = 0; h < Ho; ++h) {
      const T* row = xin + std::min(h, H - 1) * W;
      T* dst = y + static_cast<std::int64_t>(h) * Wo;
      for (int w2 = 0; w2 < Wo; ++w2) dst[w2] = row[std::min(w2, W - 1)];
    }
  }
  return make_op(std::move(out), {x}, [x, H, W, Ho, Wo, frames](NodeT<T>& self) {
    auto& g = x->ensure_grad();
    for (std::int64_t fr = 0; fr < frames; ++fr) {
      T* gx = g.data() + fr * H * W;
      const T* gy = self.grad.data() + fr * static_cast<std::int64_t>(Ho) * Wo;
      for (int h = 0; h < Ho; ++h)
        for (int w2 = 0; w2 < Wo; ++w2)
          gx[std::min(h, H - 1) * W + std::min(w2, W - 1)] += gy[static_cast<std::int64_t>(h) * Wo + w2];
    }
  });
}

}  // namespace lvmark::nn
