#include <catch2/catch_amalgamated.hpp>

#include "lvmark/metrics.hpp"
#include "lvmark/msgcodec.hpp"
#include "helpers.hpp"

using namespace lvmark;

TEST_CASE("psnr: sentinel, closed form, symmetry, monotonicity") {
  const auto a = test::random_clip(4, 16, 16, 1);
  REQUIRE(std::isinf(metrics::psnr(a, a)));

  media::VideoClip b = test::random_clip(4, 16, 16, 2, 0.5f);
  media::VideoClip shifted = b;
  for (auto& v : shifted.data) v += 0.1f;
  REQUIRE(metrics::psnr(b, shifted) == Catch::Approx(10.0 * std::log10(4.0 / 0.01)).margin(1e-3));
  REQUIRE(metrics::psnr(b, shifted) == Catch::Approx(26.0206).margin(1e-3));
  REQUIRE(metrics::psnr(b, shifted) == metrics::psnr(shifted, b));

  // strictly decreasing under growing uniform noise
  double prev = std::numeric_limits<double>::infinity();
  for (double amp : {0.02, 0.05, 0.1}) {
    media::VideoClip noisy = b;
    Rng rng(7);
    for (auto& v : noisy.data) v = std::clamp(v + static_cast<float>(rng.uniform(-amp, amp)), -1.0f, 1.0f);
    const double p = metrics::psnr(b, noisy);
    REQUIRE(p < prev);
    prev = p;
  }

  media::VideoClip wrong(4, 16, 18);
  REQUIRE_THROWS_AS(metrics::psnr(b, wrong), InvalidArgument);
}

TEST_CASE("ssim: self-similarity, sign flip, symmetry") {
  const auto c = test::random_clip(2, 16, 16, 3);
  REQUIRE(metrics::ssim(c, c) == Catch::Approx(1.0).margin(1e-9));

  // zero-mean clip vs its negation has negative structural similarity
  // (local DC removed so the luminance term stays positive while the
  // structure term flips sign)
  media::VideoClip raw = test::random_clip(2, 16, 16, 4, 0.8f);
  media::VideoClip z = raw;
  for (int f = 0; f < 2; ++f)
    for (int h = 0; h < 16; ++h)
      for (int w = 0; w < 16; ++w)
        for (int ch = 0; ch < 3; ++ch) {
          double m = 0;
          int n = 0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int y = std::clamp(h + dy, 0, 15), x = std::clamp(w + dx, 0, 15);
              m += raw.at(f, y, x, ch);
              ++n;
            }
          z.at(f, h, w, ch) = std::clamp(raw.at(f, h, w, ch) - static_cast<float>(m / n), -1.0f, 1.0f);
        }
  media::VideoClip neg = z;
  for (auto& v : neg.data) v = -v;
  REQUIRE(metrics::ssim(z, neg) < 0.0);

  const auto a = test::random_clip(2, 16, 16, 5);
  const auto b = test::random_clip(2, 16, 16, 6);
  REQUIRE(metrics::ssim(a, b) == Catch::Approx(metrics::ssim(b, a)).margin(1e-12));

  media::VideoClip tiny(2, 8, 8);
  REQUIRE_THROWS_AS(metrics::ssim(tiny, tiny), InvalidArgument);
}

namespace {

// Straight-line re-implementation of the perceptual proxy in double: per
// dyadic scale, MAD of gradient-magnitude maps + 0.5 * MAD of 3x3 std maps.
double proxy_reference(const media::VideoClip& a, const media::VideoClip& b) {
  const int F = a.frames;
  auto at = [](const std::vector<std::vector<double>>& img, int h, int w, int H, int W) {
    return img[static_cast<std::size_t>(std::clamp(h, 0, H - 1))]
              [static_cast<std::size_t>(std::clamp(w, 0, W - 1))];
  };
  double total = 0;
  for (int scale = 0; scale < 3; ++scale) {
    const int H = a.height >> scale, W = a.width >> scale;
    double mad_g = 0, mad_s = 0;
    std::int64_t count = 0;
    for (int f = 0; f < F; ++f)
      for (int c = 0; c < 3; ++c) {
        // downsample by repeated 2x2 means
        std::vector<std::vector<double>> xa(static_cast<std::size_t>(H), std::vector<double>(static_cast<std::size_t>(W)));
        std::vector<std::vector<double>> xb = xa;
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) {
            const int k = 1 << scale;
            double sa = 0, sb = 0;
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx) {
                sa += a.at(f, h * k + dy, w * k + dx, c);
                sb += b.at(f, h * k + dy, w * k + dx, c);
              }
            xa[static_cast<std::size_t>(h)][static_cast<std::size_t>(w)] = sa / (k * k);
            xb[static_cast<std::size_t>(h)][static_cast<std::size_t>(w)] = sb / (k * k);
          }
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) {
            auto gmap = [&](const std::vector<std::vector<double>>& x) {
              const double gx = 0.5 * (at(x, h, w + 1, H, W) - at(x, h, w - 1, H, W));
              const double gy = 0.5 * (at(x, h + 1, w, H, W) - at(x, h - 1, w, H, W));
              return std::sqrt(gx * gx + gy * gy + 1e-6);
            };
            auto smap = [&](const std::vector<std::vector<double>>& x) {
              double m = 0, q = 0;
              for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                  const double v = at(x, h + dy, w + dx, H, W);
                  m += v;
                  q += v * v;
                }
              m /= 9.0;
              q /= 9.0;
              return std::sqrt(std::max(q - m * m, 0.0) + 1e-6);
            };
            mad_g += std::abs(gmap(xa) - gmap(xb));
            mad_s += std::abs(smap(xa) - smap(xb));
            ++count;
          }
      }
    total += (mad_g / count) + 0.5 * (mad_s / count);
  }
  return total / 3.0;
}

}  // namespace

TEST_CASE("perceptual proxy: identity, symmetry, independent re-implementation") {
  const auto a = test::random_clip(2, 16, 16, 7);
  const auto b = test::random_clip(2, 16, 16, 8);
  REQUIRE(metrics::perceptual_proxy(a, a) == 0.0);
  REQUIRE(metrics::perceptual_proxy(a, b) ==
          Catch::Approx(metrics::perceptual_proxy(b, a)).margin(1e-9));

  // flat gray vs flat gray + bright 4x4 patch, checked against the reference
  media::VideoClip flat(2, 16, 16);
  std::fill(flat.data.begin(), flat.data.end(), 0.1f);
  media::VideoClip patch = flat;
  for (int f = 0; f < 2; ++f)
    for (int h = 4; h < 8; ++h)
      for (int w = 4; w < 8; ++w)
        for (int c = 0; c < 3; ++c) patch.at(f, h, w, c) = 0.9f;
  REQUIRE(metrics::perceptual_proxy(flat, patch) ==
          Catch::Approx(proxy_reference(flat, patch)).margin(1e-6));
  REQUIRE(metrics::perceptual_proxy(a, b) == Catch::Approx(proxy_reference(a, b)).margin(1e-6));
  REQUIRE(metrics::perceptual_proxy(flat, patch) > 0.0);
}

TEST_CASE("tlp: identity, shift invariance, flicker sensitivity") {
  const auto a = test::random_clip(4, 16, 16, 9);
  REQUIRE(metrics::tlp(a, a) == 0.0);

  // per-frame constant brightness shifts cancel in both proxy terms
  media::VideoClip shifted = a;
  for (int f = 0; f < a.frames; ++f) {
    const float c = 0.02f * static_cast<float>(f + 1);
    for (int h = 0; h < a.height; ++h)
      for (int w = 0; w < a.width; ++w)
        for (int ch = 0; ch < 3; ++ch) shifted.at(f, h, w, ch) += c;
  }
  REQUIRE(metrics::tlp(a, shifted) <= 1e-6);

  // a static video vs one with a single flickering frame
  media::VideoClip stat(4, 16, 16);
  for (int f = 0; f < 4; ++f)
    for (int h = 0; h < 16; ++h)
      for (int w = 0; w < 16; ++w)
        for (int c = 0; c < 3; ++c) stat.at(f, h, w, c) = ((h / 4 + w / 4) % 2) ? 0.4f : -0.4f;
  media::VideoClip flicker = stat;
  for (int h = 0; h < 16; ++h)
    for (int w = 0; w < 16; ++w)
      for (int c = 0; c < 3; ++c) flicker.at(2, h, w, c) = 0.0f;
  REQUIRE(metrics::tlp(stat, flicker) > 0.0);
}

TEST_CASE("bit accuracy arithmetic and the complement identity") {
  msgcodec::Bits m(32, 0), mh(32, 0);
  for (std::size_t i = 0; i < 32; ++i) m[i] = mh[i] = static_cast<std::uint8_t>(i % 2);
  REQUIRE(metrics::bit_accuracy(m, mh) == 100.0);
  for (std::size_t i = 0; i < 8; ++i) mh[i] ^= 1;
  REQUIRE(metrics::bit_accuracy(m, mh) == 75.0);
  msgcodec::Bits comp = m;
  for (auto& v : comp) v ^= 1;
  REQUIRE(metrics::bit_accuracy(m, comp) == 0.0);

  // bit_accuracy(m, x) + bit_accuracy(m, ~x) == 100 for any x
  Rng rng(4);
  msgcodec::Bits x(32);
  for (auto& v : x) v = static_cast<std::uint8_t>(rng.next_u64() & 1);
  msgcodec::Bits nx = x;
  for (auto& v : nx) v ^= 1;
  REQUIRE(metrics::bit_accuracy(m, x) + metrics::bit_accuracy(m, nx) == Catch::Approx(100.0));

  REQUIRE_THROWS_AS(metrics::bit_accuracy(m, msgcodec::Bits(16, 0)), InvalidArgument);
}
