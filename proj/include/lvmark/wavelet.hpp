#pragma once

#include <array>

#include "lvmark/autograd.hpp"
#include "lvmark/media.hpp"

namespace lvmark::wavelet {

// One-level separable orthonormal Haar transform. Analysis along an axis
// packs the low-pass half into [0, n/2) and the high-pass half into [n/2, n):
//   lo[i] = (x[2i] + x[2i+1]) / sqrt(2),  hi[i] = (x[2i] - x[2i+1]) / sqrt(2)
// The transform is orthogonal, so synthesis equals the adjoint.

template <class T>
void haar_axis(T* data, std::int64_t outer, int n, std::int64_t inner, bool inverse) {
  require(n % 2 == 0, "haar_axis: axis length " + std::to_string(n) + " must be even");
  const T r = static_cast<T>(0.70710678118654752440);
  const int half = n / 2;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (outer > 4)
#endif
  for (std::int64_t o = 0; o < outer; ++o) {
    std::vector<T> tmp(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < inner; ++i) {
      T* base = data + o * n * inner + i;
      for (int j = 0; j < n; ++j) tmp[static_cast<std::size_t>(j)] = base[j * inner];
      if (!inverse) {
        for (int j = 0; j < half; ++j) {
          base[j * inner] = (tmp[static_cast<std::size_t>(2 * j)] + tmp[static_cast<std::size_t>(2 * j + 1)]) * r;
          base[(half + j) * inner] = (tmp[static_cast<std::size_t>(2 * j)] - tmp[static_cast<std::size_t>(2 * j + 1)]) * r;
        }
      } else {
        for (int j = 0; j < half; ++j) {
          base[2 * j * inner] = (tmp[static_cast<std::size_t>(j)] + tmp[static_cast<std::size_t>(half + j)]) * r;
          base[(2 * j + 1) * inner] = (tmp[static_cast<std::size_t>(j)] - tmp[static_cast<std::size_t>(half + j)]) * r;
        }
      }
    }
  }
}

// In-place packed 3D transform of a [B,C,F,H,W] tensor along (F, H, W).
template <class T>
void dwt3_packed_inplace(nn::TensorT<T>& t, bool inverse) {
  const auto& s = t.shape();
  require(s.size() == 5, "dwt3_packed: rank-5 expected");
  const std::int64_t bc = static_cast<std::int64_t>(s[0]) * s[1];
  const std::int64_t hw = static_cast<std::int64_t>(s[3]) * s[4];
  if (!inverse) {
    haar_axis(t.data(), bc, s[2], hw, false);                                    // time
    haar_axis(t.data(), bc * s[2], s[3], static_cast<std::int64_t>(s[4]), false);  // height
    haar_axis(t.data(), bc * s[2] * s[3], s[4], 1, false);                       // width
  } else {
    haar_axis(t.data(), bc * s[2] * s[3], s[4], 1, true);
    haar_axis(t.data(), bc * s[2], s[3], static_cast<std::int64_t>(s[4]), true);
    haar_axis(t.data(), bc, s[2], hw, true);
  }
}

// ---------------------------------------------------------------------------
// SubbandSet: the 8 octants, named by (time, height, width) with L = low.
// Each band is stored in media layout [F/2, H/2, W/2, C].
// ---------------------------------------------------------------------------

struct SubbandSet {
  static constexpr std::array<const char*, 8> kNames = {"LLL", "LLH", "LHL", "LHH",
                                                        "HLL", "HLH", "HHL", "HHH"};
  std::array<nn::Tensor, 8> bands;

  const nn::Tensor& band(int time_high, int height_high, int width_high) const {
    return bands[static_cast<std::size_t>(time_high * 4 + height_high * 2 + width_high)];
  }

  void validate() const {
    const auto& s0 = bands[0].shape();
    require(s0.size() == 4, "subband set: rank-4 bands expected");
    for (const auto& b : bands)
      require(b.shape() == s0, "subband set: mismatched subband shapes");
  }
};

inline SubbandSet dwt3(const media::VideoClip& clip) {
  clip.validate();
  const int F = clip.frames, H = clip.height, W = clip.width, C = clip.channels;
  std::vector<float> buf = clip.data;  // media layout [F,H,W,C]
  haar_axis(buf.data(), 1, F, static_cast<std::int64_t>(H) * W * C, false);
  haar_axis(buf.data(), F, H, static_cast<std::int64_t>(W) * C, false);
  haar_axis(buf.data(), static_cast<std::int64_t>(F) * H, W, C, false);
  const int F2 = F / 2, H2 = H / 2, W2 = W / 2;
  SubbandSet out;
  for (int b = 0; b < 8; ++b) {
    const int of = (b >> 2 & 1) * F2, oh = (b >> 1 & 1) * H2, ow = (b & 1) * W2;
    nn::Tensor band({F2, H2, W2, C});
    for (int f = 0; f < F2; ++f)
      for (int h = 0; h < H2; ++h)
        for (int w = 0; w < W2; ++w)
          for (int c = 0; c < C; ++c)
            band[((static_cast<std::int64_t>(f) * H2 + h) * W2 + w) * C + c] =
                buf[static_cast<std::size_t>((((of + f) * H + oh + h) * W + ow + w) * C + c)];
    out.bands[static_cast<std::size_t>(b)] = std::move(band);
  }
  return out;
}

inline media::VideoClip idwt3(const SubbandSet& set) {
  set.validate();
  const auto& s = set.bands[0].shape();
  const int F2 = s[0], H2 = s[1], W2 = s[2], C = s[3];
  require(C == 3, "idwt3: 3-channel subbands expected");
  const int F = 2 * F2, H = 2 * H2, W = 2 * W2;
  std::vector<float> buf(static_cast<std::size_t>(F) * H * W * C);
  for (int b = 0; b < 8; ++b) {
    const int of = (b >> 2 & 1) * F2, oh = (b >> 1 & 1) * H2, ow = (b & 1) * W2;
    const auto& band = set.bands[static_cast<std::size_t>(b)];
    for (int f = 0; f < F2; ++f)
      for (int h = 0; h < H2; ++h)
        for (int w = 0; w < W2; ++w)
          for (int c = 0; c < C; ++c)
            buf[static_cast<std::size_t>((((of + f) * H + oh + h) * W + ow + w) * C + c)] =
                band[((static_cast<std::int64_t>(f) * H2 + h) * W2 + w) * C + c];
  }
  haar_axis(buf.data(), static_cast<std::int64_t>(F) * H, W, C, true);
  haar_axis(buf.data(), F, H, static_cast<std::int64_t>(W) * C, true);
  haar_axis(buf.data(), 1, F, static_cast<std::int64_t>(H) * W * C, true);
  media::VideoClip clip(F, H, W);
  // inverse reconstruction may exceed [-1,1] by float error only; leave as-is
  clip.data = std::move(buf);
  return clip;
}

inline nn::Tensor lll(const SubbandSet& set) {
  set.validate();
  return set.bands[0];
}

// ---------------------------------------------------------------------------
// Autograd ops. The transform is orthogonal, so the gradient of the forward
// transform is the inverse transform of the gradient (and vice versa).
// ---------------------------------------------------------------------------

template <class T>
nn::VarT<T> dwt3_op(const nn::VarT<T>& x) {
  nn::TensorT<T> out = x->val;
  dwt3_packed_inplace(out, false);
  return nn::make_op(std::move(out), {x}, [x](nn::NodeT<T>& self) {
    nn::TensorT<T> g = self.grad;
    dwt3_packed_inplace(g, true);
    auto& gx = x->ensure_grad();
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += g[i];
  });
}

template <class T>
nn::VarT<T> idwt3_op(const nn::VarT<T>& x) {
  nn::TensorT<T> out = x->val;
  dwt3_packed_inplace(out, true);
  return nn::make_op(std::move(out), {x}, [x](nn::NodeT<T>& self) {
    nn::TensorT<T> g = self.grad;
    dwt3_packed_inplace(g, false);
    auto& gx = x->ensure_grad();
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += g[i];
  });
}

// LLL of a packed [B,C,F,H,W] transform: the (low, low, low) corner octant.
template <class T>
nn::VarT<T> lll_op(const nn::VarT<T>& packed) {
  const auto& s = packed->val.shape();
  return nn::slice(packed, {0, 0, 0, 0, 0}, {s[0], s[1], s[2] / 2, s[3] / 2, s[4] / 2});
}

// Per-frame 2D variant (H and W axes only), for the 2D-DWT ablation.
template <class T>
void dwt2_packed_inplace(nn::TensorT<T>& t, bool inverse) {
  const auto& s = t.shape();
  require(s.size() == 5, "dwt2_packed: rank-5 expected");
  const std::int64_t bcf = static_cast<std::int64_t>(s[0]) * s[1] * s[2];
  if (!inverse) {
    haar_axis(t.data(), bcf, s[3], static_cast<std::int64_t>(s[4]), false);
    haar_axis(t.data(), bcf * s[3], s[4], 1, false);
  } else {
    haar_axis(t.data(), bcf * s[3], s[4], 1, true);
    haar_axis(t.data(), bcf, s[3], static_cast<std::int64_t>(s[4]), true);
  }
}

template <class T>
nn::VarT<T> dwt2_op(const nn::VarT<T>& x) {
  nn::TensorT<T> out = x->val;
  dwt2_packed_inplace(out, false);
  return nn::make_op(std::move(out), {x}, [x](nn::NodeT<T>& self) {
    nn::TensorT<T> g = self.grad;
    dwt2_packed_inplace(g, true);
    auto& gx = x->ensure_grad();
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += g[i];
  });
}

// LL of a per-frame 2D transform: full frame axis, low spatial octant.
template <class T>
nn::VarT<T> ll2d_op(const nn::VarT<T>& packed) {
  const auto& s = packed->val.shape();
  return nn::slice(packed, {0, 0, 0, 0, 0}, {s[0], s[1], s[2], s[3] / 2, s[4] / 2});
}

}  // namespace lvmark::wavelet
