#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "lvmark/media.hpp"
#include "lvmark/nn_ops.hpp"

namespace lvmark::metrics {

struct MetricReport {
  double psnr = 0;
  double ssim = 0;
  double perceptual = 0;
  double tlp = 0;
  double bit_accuracy = 0;  // percent
};

// ---------------------------------------------------------------------------
// PSNR with peak 2 (value range [-1, 1]); returns +inf when MSE is zero.
// ---------------------------------------------------------------------------

inline double psnr(const media::VideoClip& a, const media::VideoClip& b) {
  require(a.same_dims(b), "psnr: shape mismatch");
  double mse = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(4.0 / mse);
}

// ---------------------------------------------------------------------------
// SSIM: mean per-frame, per-channel SSIM with an 11x11 Gaussian window
// (sigma 1.5) over valid window positions; stabilizers scaled to peak L = 2.
// ---------------------------------------------------------------------------

namespace detail {

inline const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    std::vector<double> k(121);
    double s = 0;
    for (int y = 0; y < 11; ++y)
      for (int x = 0; x < 11; ++x) {
        const double dy = y - 5, dx = x - 5;
        k[static_cast<std::size_t>(y * 11 + x)] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
        s += k[static_cast<std::size_t>(y * 11 + x)];
      }
    for (auto& v : k) v /= s;
    return k;
  }();
  return w;
}

}  // namespace detail

inline double ssim(const media::VideoClip& a, const media::VideoClip& b) {
  require(a.same_dims(b), "ssim: shape mismatch");
  require(a.height >= 11 && a.width >= 11, "ssim: frames smaller than the 11x11 window");
  const auto& win = detail::ssim_window();
  const double c1 = (0.01 * 2) * (0.01 * 2);
  const double c2 = (0.03 * 2) * (0.03 * 2);
  double total = 0;
  std::int64_t count = 0;
  for (int f = 0; f < a.frames; ++f)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y + 11 <= a.height; ++y)
        for (int x = 0; x + 11 <= a.width; ++x) {
          double ma = 0, mb = 0, qa = 0, qb = 0, qab = 0;
          for (int dy = 0; dy < 11; ++dy)
            for (int dx = 0; dx < 11; ++dx) {
              const double w = win[static_cast<std::size_t>(dy * 11 + dx)];
              const double va = a.at(f, y + dy, x + dx, c);
              const double vb = b.at(f, y + dy, x + dx, c);
              ma += w * va;
              mb += w * vb;
              qa += w * va * va;
              qb += w * vb * vb;
              qab += w * va * vb;
            }
          const double var_a = qa - ma * ma;
          const double var_b = qb - mb * mb;
          const double cov = qab - ma * mb;
          total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
          ++count;
        }
  return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Perceptual proxy: a fixed multi-scale structural distance standing in for
// learned perceptual metrics. At 3 dyadic scales it compares gradient-
// magnitude maps and local 3x3 standard-deviation maps:
//   proxy = mean_scales( MAD(grad maps) + 0.5 * MAD(std maps) )
// The definition lives here as an autograd graph and is shared verbatim by
// the perceptual training loss.
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
nn::VarT<T> grad_magnitude(const nn::VarT<T>& x) {
  auto gx = nn::fixed_filter2d(x, {-0.5, 0.0, 0.5}, 1, 3, nn::PadMode::kReplicate);
  auto gy = nn::fixed_filter2d(x, {-0.5, 0.0, 0.5}, 3, 1, nn::PadMode::kReplicate);
  return nn::sqrt_op(nn::add_const(nn::add(nn::square(gx), nn::square(gy)), T(1e-6)));
}

template <class T>
nn::VarT<T> local_std(const nn::VarT<T>& x) {
  const std::vector<double> box(9, 1.0 / 9.0);
  auto m = nn::fixed_filter2d(x, box, 3, 3, nn::PadMode::kReplicate);
  auto q = nn::fixed_filter2d(nn::square(x), box, 3, 3, nn::PadMode::kReplicate);
  return nn::sqrt_op(nn::add_const(nn::relu(nn::sub(q, nn::square(m))), T(1e-6)));
}

}  // namespace detail

template <class T>
nn::VarT<T> perceptual_distance_op(nn::VarT<T> a, nn::VarT<T> b) {
  require(a->val.same_shape(b->val), "perceptual distance: shape mismatch");
  const auto& s = a->val.shape();
  require(s.size() == 5, "perceptual distance: rank-5 expected");
  require(s[3] % 4 == 0 && s[4] % 4 == 0 && s[3] >= 8 && s[4] >= 8,
          "perceptual distance: H and W must be multiples of 4 and >= 8");
  nn::VarT<T> total;
  for (int scale = 0; scale < 3; ++scale) {
    if (scale > 0) {
      a = nn::avgpool2x2(a);
      b = nn::avgpool2x2(b);
    }
    auto grad_term = nn::mean_all(nn::abs_op(nn::sub(detail::grad_magnitude(a), detail::grad_magnitude(b))));
    auto std_term = nn::mean_all(nn::abs_op(nn::sub(detail::local_std(a), detail::local_std(b))));
    auto term = nn::add(grad_term, nn::mul_const(std_term, T(0.5)));
    total = total ? nn::add(total, term) : term;
  }
  return nn::mul_const(total, T(1.0 / 3.0));
}

inline double perceptual_proxy_tensors(const nn::Tensor& a, const nn::Tensor& b) {
  auto va = nn::constant(a);
  auto vb = nn::constant(b);
  return static_cast<double>(perceptual_distance_op(va, vb)->val[0]);
}

inline double perceptual_proxy(const media::VideoClip& a, const media::VideoClip& b) {
  require(a.same_dims(b), "perceptual_proxy: shape mismatch");
  return perceptual_proxy_tensors(media::clip_to_tensor(a), media::clip_to_tensor(b));
}

// ---------------------------------------------------------------------------
// tLP stand-in: mean over adjacent frame pairs of the absolute difference of
// per-pair perceptual proxies between the two videos.
// ---------------------------------------------------------------------------

inline double tlp(const media::VideoClip& a, const media::VideoClip& b) {
  require(a.same_dims(b), "tlp: shape mismatch");
  require(a.frames >= 2, "tlp: at least 2 frames required");
  const nn::Tensor ta = media::clip_to_tensor(a);
  const nn::Tensor tb = media::clip_to_tensor(b);
  const int F = a.frames, H = a.height, W = a.width;
  auto frame_of = [&](const nn::Tensor& t, int f) {
    nn::Tensor out({1, 3, 1, H, W});
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    for (int c = 0; c < 3; ++c)
      std::copy(t.data() + (static_cast<std::int64_t>(c) * F + f) * hw,
                t.data() + (static_cast<std::int64_t>(c) * F + f + 1) * hw,
                out.data() + static_cast<std::int64_t>(c) * hw);
    return out;
  };
  double acc = 0;
  for (int f = 0; f + 1 < F; ++f) {
    const double pa = perceptual_proxy_tensors(frame_of(ta, f), frame_of(ta, f + 1));
    const double pb = perceptual_proxy_tensors(frame_of(tb, f), frame_of(tb, f + 1));
    acc += std::abs(pa - pb);
  }
  return acc / static_cast<double>(F - 1);
}

// ---------------------------------------------------------------------------
// Bit accuracy in percent.
// ---------------------------------------------------------------------------

inline double bit_accuracy(const std::vector<std::uint8_t>& m, const std::vector<std::uint8_t>& m_hat) {
  require(m.size() == m_hat.size(), "bit_accuracy: length mismatch");
  require(!m.empty(), "bit_accuracy: empty input");
  std::int64_t match = 0;
  for (std::size_t i = 0; i < m.size(); ++i)
    if ((m[i] != 0) == (m_hat[i] != 0)) ++match;
  return 100.0 * static_cast<double>(match) / static_cast<double>(m.size());
}

}  // namespace lvmark::metrics
