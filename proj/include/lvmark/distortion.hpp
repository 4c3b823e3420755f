#pragma once

#include <array>
#include <cstdlib>
#include <optional>

#include "lvmark/latentcodec.hpp"
#include "lvmark/media.hpp"
#include "lvmark/nn.hpp"

namespace lvmark::distortion {

// ---------------------------------------------------------------------------
// DistortionSpec: one entry of the training pool / evaluation attack list.
// ---------------------------------------------------------------------------

struct DistortionSpec {
  enum class Kind {
    kNone,
    kCrop,          // param: kept area fraction (0, 1]
    kRotate,        // param: angle in radians, |angle| <= pi
    kBlur,          // param: Gaussian std
    kJpeg,          // param: quality percent [1, 100]
    kFrameSwap,     // param: displaced fraction [0, 1]
    kFrameAverage,  // param: window length n >= 1
    kFrameDrop,     // param: dropped fraction [0, 1)
    kCodecProxy,    // param: crf (differentiable proxy network)
    kCodecSim,      // param: crf (deterministic simulator; evaluation only)
    kCombine,       // children applied left to right
  };
  Kind kind = Kind::kNone;
  double param = 0;
  std::uint64_t seed = 0;
  std::vector<DistortionSpec> children;

  std::string label() const {
    char buf[64];
    switch (kind) {
      case Kind::kNone: return "none";
      case Kind::kCrop: std::snprintf(buf, sizeof(buf), "crop:%g", param); return buf;
      case Kind::kRotate: std::snprintf(buf, sizeof(buf), "rotate:%g", param); return buf;
      case Kind::kBlur: std::snprintf(buf, sizeof(buf), "blur:%g", param); return buf;
      case Kind::kJpeg: std::snprintf(buf, sizeof(buf), "jpeg:%g", param); return buf;
      case Kind::kFrameSwap: std::snprintf(buf, sizeof(buf), "frame_swap:%g", param); return buf;
      case Kind::kFrameAverage: std::snprintf(buf, sizeof(buf), "frame_average:%g", param); return buf;
      case Kind::kFrameDrop: std::snprintf(buf, sizeof(buf), "frame_drop:%g", param); return buf;
      case Kind::kCodecProxy: std::snprintf(buf, sizeof(buf), "h264_proxy:%g", param); return buf;
      case Kind::kCodecSim: std::snprintf(buf, sizeof(buf), "h264_sim:%g", param); return buf;
      case Kind::kCombine: {
        std::string s = "combine(";
        for (std::size_t i = 0; i < children.size(); ++i) s += (i ? "+" : "") + children[i].label();
        return s + ")";
      }
    }
    return "?";
  }
};

// Parses "crop:0.5", "none", or "combine(rotate:0.5236,frame_drop:0.5,h264_sim:24)".
inline DistortionSpec parse_spec(const std::string& text);

namespace detail {

inline DistortionSpec parse_simple(const std::string& text) {
  DistortionSpec s;
  const auto colon = text.find(':');
  const std::string name = text.substr(0, colon);
  const double param = colon == std::string::npos ? 0.0 : std::stod(text.substr(colon + 1));
  s.param = param;
  using K = DistortionSpec::Kind;
  if (name == "none") s.kind = K::kNone;
  else if (name == "crop") s.kind = K::kCrop;
  else if (name == "rotate") s.kind = K::kRotate;
  else if (name == "blur") s.kind = K::kBlur;
  else if (name == "jpeg" || name == "jpeg_proxy") s.kind = K::kJpeg;
  else if (name == "frame_swap") s.kind = K::kFrameSwap;
  else if (name == "frame_average") s.kind = K::kFrameAverage;
  else if (name == "frame_drop") s.kind = K::kFrameDrop;
  else if (name == "h264_proxy" || name == "codec_proxy") s.kind = K::kCodecProxy;
  else if (name == "h264_sim" || name == "h264" || name == "codec_sim") s.kind = K::kCodecSim;
  else
    throw InvalidArgument("unknown distortion kind '" + name +
                          "' (known: none crop rotate blur jpeg frame_swap frame_average "
                          "frame_drop h264_proxy h264_sim combine)");
  return s;
}

}  // namespace detail

inline DistortionSpec parse_spec(const std::string& text) {
  if (text.rfind("combine(", 0) == 0) {
    require(text.back() == ')', "combine spec must end with ')'");
    DistortionSpec s;
    s.kind = DistortionSpec::Kind::kCombine;
    std::string inner = text.substr(8, text.size() - 9);
    std::size_t start = 0;
    while (start < inner.size()) {
      auto comma = inner.find(',', start);
      if (comma == std::string::npos) comma = inner.size();
      s.children.push_back(detail::parse_simple(inner.substr(start, comma - start)));
      start = comma + 1;
    }
    require(s.children.size() >= 2, "combine needs at least 2 children");
    return s;
  }
  return detail::parse_simple(text);
}

// ---------------------------------------------------------------------------
// Individual differentiable attacks
// ---------------------------------------------------------------------------

inline nn::Var crop(const nn::Var& clip, double fraction, std::uint64_t seed) {
  require(fraction > 0.0 && fraction <= 1.0, "crop: fraction must be in (0, 1]");
  const auto& s = clip->val.shape();
  const int H = s[3], W = s[4];
  const int wh = static_cast<int>(std::floor(H * std::sqrt(fraction)));
  const int ww = static_cast<int>(std::floor(W * std::sqrt(fraction)));
  require(wh >= 8 && ww >= 8, "crop: window smaller than 8x8");
  Rng rng(derive_seed(seed, 0xc409));
  const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(H - wh + 1)));
  const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(W - ww + 1)));
  nn::SamplePlan plan;
  plan.hi = H;
  plan.wi = W;
  plan.ho = H;
  plan.wo = W;
  for (int oy = 0; oy < H; ++oy)
    for (int ox = 0; ox < W; ++ox) {
      double sy = y0 + (oy + 0.5) * static_cast<double>(wh) / H - 0.5;
      double sx = x0 + (ox + 0.5) * static_cast<double>(ww) / W - 0.5;
      sy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
      sx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
      nn::plan_bilinear(plan, sy, sx);
    }
  return nn::grid_sample_fixed(clip, plan);
}

inline nn::Var rotate(const nn::Var& clip, double angle) {
  require(std::abs(angle) <= 3.14159265358979323846 + 1e-12, "rotate: |angle| must be <= pi");
  const auto& s = clip->val.shape();
  const int H = s[3], W = s[4];
  const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
  const double c = std::cos(angle), sn = std::sin(angle);
  nn::SamplePlan plan;
  plan.hi = H;
  plan.wi = W;
  plan.ho = H;
  plan.wo = W;
  plan.fill = -1.0;
  for (int oy = 0; oy < H; ++oy)
    for (int ox = 0; ox < W; ++ox) {
      const double dy = oy - cy, dx = ox - cx;
      // inverse map: rotate output coords by -angle
      const double sx = cx + c * dx + sn * dy;
      const double sy = cy - sn * dx + c * dy;
      nn::plan_bilinear(plan, sy, sx);
    }
  return nn::grid_sample_fixed(clip, plan);
}

inline std::vector<double> gaussian_kernel_1d(double stddev) {
  const int radius = static_cast<int>(std::ceil(3.0 * stddev));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (stddev * stddev));
    sum += k[static_cast<std::size_t>(i + radius)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

inline nn::Var gaussian_blur(const nn::Var& clip, double stddev) {
  require(stddev >= 0.0, "gaussian_blur: std must be >= 0");
  if (stddev == 0.0) return clip;
  const auto k = gaussian_kernel_1d(stddev);
  const int n = static_cast<int>(k.size());
  auto h = nn::fixed_filter2d(clip, k, 1, n, nn::PadMode::kReflect);
  return nn::fixed_filter2d(h, k, n, 1, nn::PadMode::kReflect);
}

// Standard JPEG luminance quantisation table and its quality scaling.
inline std::array<double, 64> jpeg_table(double quality) {
  static const int kBase[64] = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                                14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                                18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                                49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
  const double s = quality < 50 ? 5000.0 / quality : 200.0 - 2.0 * quality;
  std::array<double, 64> t{};
  for (int i = 0; i < 64; ++i)
    t[static_cast<std::size_t>(i)] = std::clamp(std::floor((kBase[i] * s + 50.0) / 100.0), 1.0, 255.0);
  return t;
}

// Differentiable JPEG surrogate: 8x8 DCT, quality-scaled quantisation with a
// smooth rounding approximation round(x) ~ x - sin(2*pi*x)/(2*pi), inverse DCT.
inline nn::Var jpeg_proxy(const nn::Var& clip, double quality) {
  require(quality >= 1.0 && quality <= 100.0, "jpeg_proxy: quality must be in [1, 100]");
  const auto& s = clip->val.shape();
  const int H = s[3], W = s[4];
  const int ph = (8 - H % 8) % 8, pw = (8 - W % 8) % 8;
  nn::Var x = nn::mul_const(nn::add_const(clip, 1.0f), 127.5f);  // to [0, 255]
  x = nn::pad_replicate_hw(x, ph, pw);
  x = nn::dct8_blocks(x, /*inverse=*/false);
  const auto tbl = jpeg_table(quality);
  // tile the table over all blocks as constant tensors
  const auto& ps = x->val.shape();
  nn::Tensor tiled(ps), inv_tiled(ps);
  for (std::int64_t i = 0; i < tiled.numel(); ++i) {
    const std::int64_t hw = i % (static_cast<std::int64_t>(ps[3]) * ps[4]);
    const int h = static_cast<int>(hw / ps[4]) % 8, w = static_cast<int>(hw % ps[4]) % 8;
    const double q = tbl[static_cast<std::size_t>(h * 8 + w)];
    tiled[i] = static_cast<float>(q);
    inv_tiled[i] = static_cast<float>(1.0 / q);
  }
  x = nn::mul(x, nn::constant(inv_tiled));
  const float two_pi = 6.2831853071795864769f;
  x = nn::sub(x, nn::mul_const(nn::sin_op(nn::mul_const(x, two_pi)), 1.0f / two_pi));
  x = nn::mul(x, nn::constant(tiled));
  x = nn::dct8_blocks(x, /*inverse=*/true);
  if (ph || pw) x = nn::slice(x, {0, 0, 0, 0, 0}, {ps[0], ps[1], ps[2], H, W});
  x = nn::add_const(nn::mul_const(x, 1.0f / 127.5f), -1.0f);
  return nn::clamp(x, -1.0f, 1.0f);
}

// ---------------------------------------------------------------------------
// Frame-level attacks, expressed as fixed frame-mixing matrices.
// ---------------------------------------------------------------------------

// Permutation displacing ceil(fraction*F) frames (a cyclic shift of a seeded
// subset; a single frame cannot be displaced alone, so counts of 1 round up
// to 2). Frame multiset is preserved.
inline std::vector<int> swap_permutation(int f, double fraction, std::uint64_t seed) {
  require(fraction >= 0.0 && fraction <= 1.0, "frame_swap: fraction must be in [0, 1]");
  int d = static_cast<int>(std::ceil(fraction * f));
  if (d == 1) d = std::min(2, f);
  std::vector<int> perm(static_cast<std::size_t>(f));
  for (int i = 0; i < f; ++i) perm[static_cast<std::size_t>(i)] = i;
  if (d < 2) return perm;
  Rng rng(derive_seed(seed, 0x50a9));
  auto order = rng.permutation(f);
  std::vector<int> chosen(order.begin(), order.begin() + d);
  std::sort(chosen.begin(), chosen.end());
  for (int j = 0; j < d; ++j)
    perm[static_cast<std::size_t>(chosen[static_cast<std::size_t>(j)])] =
        chosen[static_cast<std::size_t>((j + 1) % d)];
  return perm;
}

inline nn::Var frame_swap(const nn::Var& clip, double fraction, std::uint64_t seed) {
  const int f = clip->val.dim(2);
  const auto perm = swap_permutation(f, fraction, seed);
  std::vector<double> m(static_cast<std::size_t>(f) * f, 0.0);
  for (int t = 0; t < f; ++t) m[static_cast<std::size_t>(t) * f + perm[static_cast<std::size_t>(t)]] = 1.0;
  return nn::frame_mix(clip, m, f);
}

// Trailing window mean: out[t] = mean of frames [t, min(t+n, F)).
inline nn::Var frame_average(const nn::Var& clip, int n) {
  const int f = clip->val.dim(2);
  require(n >= 1 && n <= f, "frame_average: window must be in [1, F]");
  std::vector<double> m(static_cast<std::size_t>(f) * f, 0.0);
  for (int t = 0; t < f; ++t) {
    const int hi = std::min(t + n, f);
    for (int s2 = t; s2 < hi; ++s2) m[static_cast<std::size_t>(t) * f + s2] = 1.0 / (hi - t);
  }
  return nn::frame_mix(clip, m, f);
}

// Drops floor(fraction*F) seeded frames, keeps order, repeat-pads the last
// survivor back to the original (decoder-compatible) frame count.
inline std::vector<int> drop_survivors(int f, double fraction, std::uint64_t seed) {
  require(fraction >= 0.0 && fraction < 1.0, "frame_drop: fraction must be in [0, 1)");
  const int ndrop = static_cast<int>(std::floor(fraction * f));
  require(f - ndrop >= 2, "frame_drop: fewer than 2 frames would survive");
  Rng rng(derive_seed(seed, 0xd209));
  auto order = rng.permutation(f);
  std::vector<bool> dropped(static_cast<std::size_t>(f), false);
  for (int i = 0; i < ndrop; ++i) dropped[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;
  std::vector<int> survivors;
  for (int i = 0; i < f; ++i)
    if (!dropped[static_cast<std::size_t>(i)]) survivors.push_back(i);
  return survivors;
}

inline nn::Var frame_drop(const nn::Var& clip, double fraction, std::uint64_t seed) {
  const int f = clip->val.dim(2);
  const auto surv = drop_survivors(f, fraction, seed);
  std::vector<double> m(static_cast<std::size_t>(f) * f, 0.0);
  for (int t = 0; t < f; ++t) {
    const int src = surv[static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(t), surv.size() - 1))];
    m[static_cast<std::size_t>(t) * f + src] = 1.0;
  }
  return nn::frame_mix(clip, m, f);
}

// ---------------------------------------------------------------------------
// Deterministic codec simulator (the desk-scale "real" H.264 stand-in):
// per-frame 8x8 DCT with hard quantisation step 2^((crf-4)/6) * base on the
// AC coefficients (DC preserved), then temporal low-pass mixing of the
// quantised frames. Non-differentiable by construction.
// ---------------------------------------------------------------------------

struct CodecSimParams {
  double crf = 24;             // 0..51
  int block = 8;
  double temporal_weight = 0.3;
  double base_step = 0.02;

  void validate() const {
    require(crf >= 0.0 && crf <= 51.0, "codec_simulate: crf must be in [0, 51]");
    require(block == 8, "codec_simulate: only 8x8 blocks are supported");
    require(temporal_weight >= 0.0 && temporal_weight <= 1.0,
            "codec_simulate: temporal weight must be in [0, 1]");
  }
};

inline nn::Tensor codec_simulate_tensor(const nn::Tensor& clip, const CodecSimParams& p) {
  p.validate();
  require(clip.rank() == 5, "codec_simulate: [B,C,F,H,W] expected");
  const int B = clip.dim(0), C = clip.dim(1), F = clip.dim(2), H = clip.dim(3), W = clip.dim(4);
  const int Hp = (H + 7) / 8 * 8, Wp = (W + 7) / 8 * 8;
  const double step = p.base_step * std::pow(2.0, (p.crf - 4.0) / 6.0);
  const double* m = nn::dct8_basis().data();
  nn::Tensor quant({B, C, F, H, W});
  std::vector<double> frame(static_cast<std::size_t>(Hp) * Wp);
  for (std::int64_t bcf = 0; bcf < static_cast<std::int64_t>(B) * C * F; ++bcf) {
    const float* src = clip.data() + bcf * H * W;
    for (int h = 0; h < Hp; ++h)
      for (int w = 0; w < Wp; ++w)
        frame[static_cast<std::size_t>(h) * Wp + w] = src[std::min(h, H - 1) * W + std::min(w, W - 1)];
    double blk[64], coef[64];
    for (int by = 0; by < Hp; by += 8)
      for (int bx = 0; bx < Wp; bx += 8) {
        for (int i = 0; i < 8; ++i)
          for (int j = 0; j < 8; ++j) blk[i * 8 + j] = frame[static_cast<std::size_t>(by + i) * Wp + bx + j];
        nn::detail::block8_apply(m, blk, coef, /*trans=*/false);
        for (int i = 0; i < 64; ++i)
          if (i != 0) coef[i] = std::round(coef[i] / step) * step;  // DC preserved
        nn::detail::block8_apply(m, coef, blk, /*trans=*/true);
        for (int i = 0; i < 8; ++i)
          for (int j = 0; j < 8; ++j) frame[static_cast<std::size_t>(by + i) * Wp + bx + j] = blk[i * 8 + j];
      }
    float* dst = quant.data() + bcf * H * W;
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        dst[h * W + w] = static_cast<float>(frame[static_cast<std::size_t>(h) * Wp + w]);
  }
  // temporal low-pass mixing of the quantised frames
  nn::Tensor out({B, C, F, H, W});
  const double tw = p.temporal_weight;
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(B) * C; ++bc)
    for (int t = 0; t < F; ++t) {
      const float* cur = quant.data() + (bc * F + t) * hw;
      const float* prev = quant.data() + (bc * F + std::max(t - 1, 0)) * hw;
      const float* next = quant.data() + (bc * F + std::min(t + 1, F - 1)) * hw;
      float* dst = out.data() + (bc * F + t) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        const double v = (1.0 - tw) * cur[i] + tw * (prev[i] + cur[i] + next[i]) / 3.0;
        dst[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
      }
    }
  return out;
}

inline media::VideoClip codec_simulate(const media::VideoClip& clip, const CodecSimParams& p) {
  return media::tensor_to_clip(codec_simulate_tensor(media::clip_to_tensor(clip), p));
}

// ---------------------------------------------------------------------------
// H.264 proxy: a small conditional residual CNN trained to mimic the codec
// simulator across a crf range; differentiable, identity at initialisation.
// ---------------------------------------------------------------------------

class H264ProxyNet {
 public:
  explicit H264ProxyNet(std::uint64_t init_seed = 1) {
    Rng rng(derive_seed(init_seed, 0x264));
    w1_ = params_.add("proxy.c1.w", nn::init_conv_weight(16, 4, 1, 3, 3, rng));
    b1_ = params_.add("proxy.c1.b", nn::Tensor({16}));
    w2_ = params_.add("proxy.c2.w", nn::init_conv_weight(16, 16, 3, 3, 3, rng));
    b2_ = params_.add("proxy.c2.b", nn::Tensor({16}));
    w3_ = params_.add("proxy.c3.w", nn::Tensor({3, 16, 1, 3, 3}));  // zero: identity residual
    b3_ = params_.add("proxy.c3.b", nn::Tensor({3}));
  }

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  double crf_lo = 12.0, crf_hi = 36.0;  // training range
  double heldout_psnr = 0.0;            // fidelity vs the simulator at crf 24

  nn::Var forward(const nn::Var& clip, double crf) const {
    const auto& s = clip->val.shape();
    nn::Tensor plane({s[0], 1, s[2], s[3], s[4]});
    plane.fill(static_cast<float>(crf / 51.0 * 2.0 - 1.0));
    nn::Var x = nn::concat_channels(clip, nn::constant(plane));
    x = nn::leaky_relu(nn::conv3d(x, w1_, b1_, {1, 2, 2, 0, 1, 1}), 0.1f);
    x = nn::leaky_relu(nn::conv3d(x, w2_, b2_, {1, 1, 1, 1, 1, 1}), 0.1f);
    x = nn::upsample_nearest(x, 1, 2, 2);
    nn::Var res = nn::conv3d(x, w3_, b3_, {1, 1, 1, 0, 1, 1});
    return nn::clamp(nn::add(clip, res), -1.0f, 1.0f);
  }

 private:
  nn::ParamStore params_;
  nn::Var w1_, b1_, w2_, b2_, w3_, b3_;
};

struct ProxyTrainConfig {
  int iterations = 1200;
  int batch = 2;
  double lr = 1e-3;
  std::uint64_t seed = 2;
  int val_clips = 4;
  bool verbose = false;
};

struct ProxyTrainResult {
  double heldout_psnr_crf24 = 0.0;
  std::vector<float> loss_trace;
};

inline ProxyTrainResult train_h264_proxy(H264ProxyNet& proxy, const media::DatasetManifest& train,
                                         const media::DatasetManifest& val,
                                         const ProxyTrainConfig& cfg) {
  nn::AdamWConfig oc;
  oc.lr = cfg.lr;
  oc.weight_decay = 0.0;
  nn::AdamW opt(proxy.params().all(), oc);
  ProxyTrainResult res;
  CodecSimParams sim;
  const int batch = std::min<int>(cfg.batch, static_cast<int>(train.entries.size()));
  for (int it = 0; it < cfg.iterations; ++it) {
    Rng rng(derive_seed(cfg.seed, 0x264a1, static_cast<std::uint64_t>(it)));
    const auto clips = media::sample_batch(train, batch, rng.next_u64());
    const double crf = proxy.crf_lo + rng.uniform() * (proxy.crf_hi - proxy.crf_lo);
    nn::Tensor x = media::clips_to_batch(clips);
    sim.crf = crf;
    const nn::Tensor target = codec_simulate_tensor(x, sim);
    nn::Var out = proxy.forward(nn::constant(x), crf);
    nn::Var loss = nn::mean_all(nn::abs_op(nn::sub(out, nn::constant(target))));
    const float lv = loss->val[0];
    if (!std::isfinite(lv))
      throw std::runtime_error("train_h264_proxy: non-finite loss at iteration " + std::to_string(it));
    res.loss_trace.push_back(lv);
    opt.zero_grad();
    nn::backward(loss);
    opt.step();
    if (cfg.verbose && (it + 1) % 200 == 0)
      std::fprintf(stderr, "[proxy] iter %d/%d mae %.5f\n", it + 1, cfg.iterations, lv);
  }
  // held-out fidelity at crf 24
  sim.crf = 24.0;
  double acc = 0;
  const int nval = std::min<int>(cfg.val_clips, static_cast<int>(val.entries.size()));
  for (int i = 0; i < nval; ++i) {
    const auto clip = media::load_entry(val, i);
    nn::Tensor x = media::clip_to_tensor(clip);
    const nn::Tensor target = codec_simulate_tensor(x, sim);
    const nn::Tensor got = proxy.forward(nn::constant(x), 24.0)->val;
    acc += metrics::psnr(media::tensor_to_clip(target), media::tensor_to_clip(got));
  }
  res.heldout_psnr_crf24 = acc / nval;
  proxy.heldout_psnr = res.heldout_psnr_crf24;
  return res;
}

// ---------------------------------------------------------------------------
// Dispatcher
// ---------------------------------------------------------------------------

struct ApplyContext {
  const H264ProxyNet* proxy = nullptr;
  std::uint64_t run_seed = 0;  // varies per iteration / message
  bool allow_nondifferentiable = false;
};

inline nn::Var apply_distortion(const DistortionSpec& spec, nn::Var clip, const ApplyContext& ctx) {
  const std::uint64_t seed = derive_seed(spec.seed ^ 0x9e3779b9u, ctx.run_seed);
  using K = DistortionSpec::Kind;
  switch (spec.kind) {
    case K::kNone: return clip;
    case K::kCrop: return crop(clip, spec.param, seed);
    case K::kRotate: return rotate(clip, spec.param);
    case K::kBlur: return gaussian_blur(clip, spec.param);
    case K::kJpeg: return jpeg_proxy(clip, spec.param);
    case K::kFrameSwap: return frame_swap(clip, spec.param, seed);
    case K::kFrameAverage: return frame_average(clip, static_cast<int>(spec.param));
    case K::kFrameDrop: return frame_drop(clip, spec.param, seed);
    case K::kCodecProxy: {
      require(ctx.proxy != nullptr, "h264_proxy distortion requires a trained proxy network");
      return ctx.proxy->forward(clip, spec.param);
    }
    case K::kCodecSim: {
      require(ctx.allow_nondifferentiable,
              "h264_sim is not differentiable and cannot be used in the training pool; "
              "use h264_proxy instead");
      CodecSimParams p;
      p.crf = spec.param;
      return nn::constant(codec_simulate_tensor(clip->val, p));
    }
    case K::kCombine: {
      for (const auto& child : spec.children) clip = apply_distortion(child, clip, ctx);
      return clip;
    }
  }
  return clip;
}

// Uniform seeded draw from the pool.
inline const DistortionSpec& sample_distortion(const std::vector<DistortionSpec>& pool,
                                               std::uint64_t seed) {
  require(!pool.empty(), "sample_distortion: empty pool");
  Rng rng(derive_seed(seed, 0xd15));
  return pool[static_cast<std::size_t>(rng.below(pool.size()))];
}

// ---------------------------------------------------------------------------
// Model-level attacks: per-coordinate Bernoulli masks over a weight set;
// returns a new set, inputs untouched.
// ---------------------------------------------------------------------------

inline std::vector<nn::Tensor> perturb_weights(const std::vector<nn::Tensor>& weights, double sigma,
                                               double probability, std::uint64_t seed) {
  require(probability >= 0.0 && probability <= 1.0, "perturb_weights: probability in [0,1]");
  Rng rng(derive_seed(seed, 0x9a55));
  std::vector<nn::Tensor> out = weights;
  for (auto& w : out)
    for (std::int64_t i = 0; i < w.numel(); ++i)
      if (rng.bernoulli(probability)) w[i] = static_cast<float>(w[i] + rng.normal(0.0, sigma));
  return out;
}

inline std::vector<nn::Tensor> prune_weights(const std::vector<nn::Tensor>& weights,
                                             double probability, std::uint64_t seed) {
  require(probability >= 0.0 && probability <= 1.0, "prune_weights: probability in [0,1]");
  Rng rng(derive_seed(seed, 0x9a56));
  std::vector<nn::Tensor> out = weights;
  for (auto& w : out)
    for (std::int64_t i = 0; i < w.numel(); ++i)
      if (rng.bernoulli(probability)) w[i] = 0.0f;
  return out;
}

// ---------------------------------------------------------------------------
// Optional external encoder hook. When LVMARK_H264_CMD is set it is run as
//   <cmd with {in} {out} {crf} substituted>
// where {in} is a PNG frame folder of the clip and {out} must be written by
// the command as a PNG frame folder. Absence returns nullopt and callers
// fall back to the simulator.
// ---------------------------------------------------------------------------

inline std::optional<media::VideoClip> external_h264(const media::VideoClip& clip, int crf,
                                                     const std::string& work_dir) {
  const char* tmpl = std::getenv("LVMARK_H264_CMD");
  if (!tmpl) return std::nullopt;
  namespace fs = std::filesystem;
  const fs::path in_dir = fs::path(work_dir) / "ext_in";
  const fs::path out_dir = fs::path(work_dir) / "ext_out";
  fs::remove_all(in_dir);
  fs::remove_all(out_dir);
  media::save_clip_png_folder(clip, in_dir.string());
  fs::create_directories(out_dir);
  std::string cmd = tmpl;
  auto replace_all = [&cmd](const std::string& from, const std::string& to) {
    for (std::size_t pos = 0; (pos = cmd.find(from, pos)) != std::string::npos; pos += to.size())
      cmd.replace(pos, from.size(), to);
  };
  replace_all("{in}", in_dir.string());
  replace_all("{out}", out_dir.string());
  replace_all("{crf}", std::to_string(crf));
  const int rc = std::system(cmd.c_str());
  if (rc != 0) {
    std::fprintf(stderr, "[external_h264] command failed (%d), falling back to simulator\n", rc);
    return std::nullopt;
  }
  return media::load_clip(out_dir.string());
}

}  // namespace lvmark::distortion
