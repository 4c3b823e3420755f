#pragma once

#include "lvmark/msgcodec.hpp"
#include "lvmark/nn.hpp"
#include "lvmark/wavelet.hpp"

namespace lvmark::wmdecoder {

// Which frequency-domain input feeds the decoder's query stream.
enum class FreqKind { kDwt3Lll, kDwt3Hhh, kDwt2Ll, kNone };

inline const char* freq_kind_name(FreqKind k) {
  switch (k) {
    case FreqKind::kDwt3Lll: return "dwt3_lll";
    case FreqKind::kDwt3Hhh: return "dwt3_hhh";
    case FreqKind::kDwt2Ll: return "dwt2_ll";
    case FreqKind::kNone: return "none";
  }
  return "?";
}

struct WmDecoderConfig {
  int n_bits = 32;
  int feat_ch = 128;
  int heads = 8;
  int depth = 2;
  int ffn_hidden = 256;
  bool use_norm = true;  // group-normalised extractor blocks
  FreqKind freq = FreqKind::kDwt3Lll;
  bool use_rgb = true;
};

// ---------------------------------------------------------------------------
// Multi-head cross attention along the temporal or spatial token axis.
// Queries come from the wavelet stream, keys/values from the RGB stream:
//   CA(Fq, Fkv) = softmax(Q K^T / sqrt(d_k)) V
// No positional encodings; with both inputs permuted along the frame axis
// the output permutes identically.
// ---------------------------------------------------------------------------

struct AttnProj {
  nn::Var wq, bq, wk, bk, wv, bv;
  int heads = 8;
};

namespace detail {

// [B,C,F,H,W] -> [G, S, C] where S is the attended axis.
inline nn::Var tokenize(const nn::Var& x, bool temporal) {
  const auto& s = x->val.shape();
  if (temporal) {
    auto p = nn::permute(x, {0, 3, 4, 2, 1});  // [B,H,W,F,C]
    return nn::reshape(p, {s[0] * s[3] * s[4], s[2], s[1]});
  }
  auto p = nn::permute(x, {0, 2, 3, 4, 1});  // [B,F,H,W,C]
  return nn::reshape(p, {s[0] * s[2], s[3] * s[4], s[1]});
}

inline nn::Var untokenize(const nn::Var& tok, const std::vector<int>& shape, bool temporal) {
  if (temporal) {
    auto p = nn::reshape(tok, {shape[0], shape[3], shape[4], shape[2], shape[1]});
    return nn::permute(p, {0, 4, 3, 1, 2});  // back to [B,C,F,H,W]
  }
  auto p = nn::reshape(tok, {shape[0], shape[2], shape[3], shape[4], shape[1]});
  return nn::permute(p, {0, 4, 1, 2, 3});
}

// [G,S,C] -> [G*h, S, dk]
inline nn::Var split_heads(const nn::Var& tok, int heads) {
  const auto& s = tok->val.shape();
  const int dk = s[2] / heads;
  auto r = nn::reshape(tok, {s[0], s[1], heads, dk});
  auto p = nn::permute(r, {0, 2, 1, 3});
  return nn::reshape(p, {s[0] * heads, s[1], dk});
}

inline nn::Var merge_heads(const nn::Var& x, int g, int heads) {
  const auto& s = x->val.shape();  // [G*h, S, dk]
  auto r = nn::reshape(x, {g, heads, s[1], s[2]});
  auto p = nn::permute(r, {0, 2, 1, 3});
  return nn::reshape(p, {g, s[1], heads * s[2]});
}

inline nn::Var project_tokens(const nn::Var& tok, const nn::Var& w, const nn::Var& b) {
  const auto& s = tok->val.shape();
  auto flat = nn::reshape(tok, {s[0] * s[1], s[2]});
  return nn::reshape(nn::linear(flat, w, b), {s[0], s[1], w->val.dim(0)});
}

}  // namespace detail

inline nn::Var cross_attention(const nn::Var& f_q, const nn::Var& f_kv, const AttnProj& proj,
                               bool temporal) {
  require(f_q->val.same_shape(f_kv->val), "cross_attention: query/kv shape mismatch");
  const auto shape = f_q->val.shape();
  require(shape[1] % proj.heads == 0, "cross_attention: head count must divide channels");
  const int dk = shape[1] / proj.heads;
  auto tq = detail::tokenize(f_q, temporal);
  auto tkv = detail::tokenize(f_kv, temporal);
  const int g = tq->val.dim(0);
  auto q = detail::split_heads(detail::project_tokens(tq, proj.wq, proj.bq), proj.heads);
  auto k = detail::split_heads(detail::project_tokens(tkv, proj.wk, proj.bk), proj.heads);
  auto v = detail::split_heads(detail::project_tokens(tkv, proj.wv, proj.bv), proj.heads);
  auto scores = nn::mul_const(nn::bmm(q, k, /*trans_b=*/true),
                              static_cast<float>(1.0 / std::sqrt(static_cast<double>(dk))));
  auto attn = nn::softmax_last(scores);
  auto out = nn::bmm(attn, v);
  return detail::untokenize(detail::merge_heads(out, g, proj.heads), shape, temporal);
}

// ---------------------------------------------------------------------------
// The watermark decoder: frequency and RGB feature extractors, a stack of
// (temporal CA, spatial CA, FFN) fusion blocks with residuals into the RGB
// stream, then global average pooling and a linear head to n_bits logits.
// ---------------------------------------------------------------------------

class WatermarkDecoderNet {
 public:
  WatermarkDecoderNet(const WmDecoderConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    require(cfg.feat_ch % cfg.heads == 0, "wmdecoder: heads must divide feat_ch");
    require(cfg.freq != FreqKind::kNone || cfg.use_rgb, "wmdecoder: at least one domain required");
    Rng rng(derive_seed(init_seed, 0xdec0de));
    const int c = cfg.feat_ch;
    if (cfg.freq != FreqKind::kNone) {
      // six conv blocks; dwt2 input keeps the full frame axis, so its first
      // block also strides the time axis
      const int ts = cfg.freq == FreqKind::kDwt2Ll ? 2 : 1;
      freq_blocks_ = {
          make_block("wmd.freq0", 3, c / 8, 3, {ts, 2, 2}, rng),
          make_block("wmd.freq1", c / 8, c / 4, 3, {1, 1, 1}, rng),
          make_block("wmd.freq2", c / 4, c / 2, 3, {1, 2, 2}, rng),
          make_block("wmd.freq3", c / 2, c / 2, 3, {1, 1, 1}, rng),
          make_block("wmd.freq4", c / 2, c, 3, {1, 1, 1}, rng),
          make_block("wmd.freq5", c, c, 1, {1, 1, 1}, rng),
      };
    }
    if (cfg.use_rgb) {
      rgb_blocks_ = {
          make_block("wmd.rgb0", 3, c / 8, 3, {1, 2, 2}, rng),
          make_block("wmd.rgb1", c / 8, c / 4, 3, {2, 2, 2}, rng),
          make_block("wmd.rgb2", c / 4, c / 2, 3, {1, 2, 2}, rng),
          make_block("wmd.rgb3", c / 2, c, 3, {1, 1, 1}, rng),
          make_block("wmd.rgb4", c, c, 1, {1, 1, 1}, rng),
      };
    }
    if (cfg.freq != FreqKind::kNone && cfg.use_rgb) {
      for (int d = 0; d < cfg.depth; ++d) {
        FusionBlock fb;
        fb.temporal = make_proj("wmd.fuse" + std::to_string(d) + ".t", rng);
        fb.spatial = make_proj("wmd.fuse" + std::to_string(d) + ".s", rng);
        const std::string p = "wmd.fuse" + std::to_string(d) + ".ffn";
        fb.ffn_w1 = params_.add(p + ".w1", nn::init_linear_weight(cfg.ffn_hidden, c, rng));
        fb.ffn_b1 = params_.add(p + ".b1", nn::Tensor({cfg.ffn_hidden}));
        fb.ffn_w2 = params_.add(p + ".w2", nn::init_linear_weight(c, cfg.ffn_hidden, rng));
        fb.ffn_b2 = params_.add(p + ".b2", nn::Tensor({c}));
        fusion_.push_back(fb);
      }
    }
    head_w_ = params_.add("wmd.head.w", nn::init_linear_weight(cfg.n_bits, 2 * c, rng));
    head_b_ = params_.add("wmd.head.b", nn::Tensor({cfg.n_bits}));
  }

  const WmDecoderConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  nn::Var extract_freq(const nn::Var& clip) const {
    require(cfg_.freq != FreqKind::kNone, "extract_freq: frequency domain disabled");
    nn::Var fi;
    switch (cfg_.freq) {
      case FreqKind::kDwt3Lll:
        fi = wavelet::lll_op(wavelet::dwt3_op(clip));
        break;
      case FreqKind::kDwt3Hhh: {
        auto packed = wavelet::dwt3_op(clip);
        const auto& s = packed->val.shape();
        fi = nn::slice(packed, {0, 0, s[2] / 2, s[3] / 2, s[4] / 2},
                       {s[0], s[1], s[2] / 2, s[3] / 2, s[4] / 2});
        break;
      }
      case FreqKind::kDwt2Ll:
        fi = wavelet::ll2d_op(wavelet::dwt2_op(clip));
        break;
      case FreqKind::kNone:
        break;
    }
    return run_blocks(freq_blocks_, fi);
  }

  // Feeds a precomputed frequency-domain array (the module-level API that
  // takes an LLL band directly).
  nn::Var extract_freq_features(const nn::Var& freq_input) const {
    require(cfg_.freq != FreqKind::kNone, "extract_freq_features: frequency domain disabled");
    return run_blocks(freq_blocks_, freq_input);
  }

  nn::Var extract_rgb(const nn::Var& clip) const {
    require(cfg_.use_rgb, "extract_rgb: RGB domain disabled");
    return run_blocks(rgb_blocks_, clip);
  }

  // The stacked fusion blocks: residual temporal CA, spatial CA, and FFN
  // into the RGB stream, with wavelet features as the query source.
  nn::Var fuse(const nn::Var& f_freq, const nn::Var& f_rgb) const {
    if (f_freq && f_rgb) {
      if (!f_freq->val.same_shape(f_rgb->val))
        throw std::logic_error("wmdecoder: F_freq " + f_freq->val.shape_str() + " and F_rgb " +
                               f_rgb->val.shape_str() + " must be equal-shaped before fusion");
      nn::Var x = f_rgb;
      for (const auto& fb : fusion_) {
        x = nn::add(x, cross_attention(f_freq, x, fb.temporal, /*temporal=*/true));
        x = nn::add(x, cross_attention(f_freq, x, fb.spatial, /*temporal=*/false));
        x = nn::add(x, ffn(x, fb));
      }
      return x;
    }
    return f_freq ? f_freq : f_rgb;
  }

  nn::Var fuse_and_head(const nn::Var& f_freq, const nn::Var& f_rgb) const {
    return nn::linear(nn::global_mean_std_pool(fuse(f_freq, f_rgb)), head_w_, head_b_);
  }

  // Full decode path: clip [B,3,F,H,W] -> logits [B, n_bits].
  nn::Var logits(const nn::Var& clip) const {
    require(clip->val.rank() == 5 && clip->val.dim(1) == 3, "decode_message: [B,3,F,H,W] expected");
    require(clip->val.dim(2) % 2 == 0, "decode_message: frame count must be even");
    nn::Var f_freq, f_rgb;
    if (cfg_.freq != FreqKind::kNone) f_freq = extract_freq(clip);
    if (cfg_.use_rgb) f_rgb = extract_rgb(clip);
    return fuse_and_head(f_freq, f_rgb);
  }

  static msgcodec::Bits bits_from_logits(const nn::Tensor& logits, int item = 0) {
    const int n = logits.dim(logits.rank() - 1);
    msgcodec::Bits bits(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      bits[static_cast<std::size_t>(i)] = logits[static_cast<std::int64_t>(item) * n + i] > 0.0f;
    return bits;
  }

 private:
  struct ConvBlock {
    nn::Var w, b;
    nn::Var gn_gamma, gn_beta;
    int gn_groups = 4;
    nn::Conv3dSpec spec;
  };
  struct FusionBlock {
    AttnProj temporal, spatial;
    nn::Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  };

  WmDecoderConfig cfg_;
  nn::ParamStore params_;
  std::vector<ConvBlock> freq_blocks_, rgb_blocks_;
  std::vector<FusionBlock> fusion_;
  nn::Var head_w_, head_b_;

  ConvBlock make_block(const std::string& name, int ci, int co, int k, std::array<int, 3> stride,
                       Rng& rng) {
    ConvBlock blk;
    blk.w = params_.add(name + ".w", nn::init_conv_weight(co, ci, k, k, k, rng));
    blk.b = params_.add(name + ".b", nn::Tensor({co}));
    if (cfg_.use_norm) {
      blk.gn_gamma = params_.add(name + ".gn.g", nn::Tensor::full({co}, 1.0f));
      blk.gn_beta = params_.add(name + ".gn.b", nn::Tensor({co}));
      blk.gn_groups = co % 4 == 0 ? 4 : 1;
    }
    blk.spec = {stride[0], stride[1], stride[2], k / 2, k / 2, k / 2};
    return blk;
  }

  AttnProj make_proj(const std::string& name, Rng& rng) {
    AttnProj p;
    const int c = cfg_.feat_ch;
    p.heads = cfg_.heads;
    p.wq = params_.add(name + ".wq", nn::init_linear_weight(c, c, rng));
    p.bq = params_.add(name + ".bq", nn::Tensor({c}));
    p.wk = params_.add(name + ".wk", nn::init_linear_weight(c, c, rng));
    p.bk = params_.add(name + ".bk", nn::Tensor({c}));
    p.wv = params_.add(name + ".wv", nn::init_linear_weight(c, c, rng));
    p.bv = params_.add(name + ".bv", nn::Tensor({c}));
    return p;
  }

  nn::Var ffn(const nn::Var& x, const FusionBlock& fb) const {
    const auto& s = x->val.shape();
    auto p = nn::permute(x, {0, 2, 3, 4, 1});
    auto flat = nn::reshape(p, {s[0] * s[2] * s[3] * s[4], s[1]});
    auto h = nn::relu(nn::linear(flat, fb.ffn_w1, fb.ffn_b1));
    auto o = nn::linear(h, fb.ffn_w2, fb.ffn_b2);
    auto r = nn::reshape(o, {s[0], s[2], s[3], s[4], s[1]});
    return nn::permute(r, {0, 4, 1, 2, 3});
  }

  static nn::Var run_blocks(const std::vector<ConvBlock>& blocks, nn::Var x) {
    for (const auto& blk : blocks) {
      x = nn::conv3d(x, blk.w, blk.b, blk.spec);
      if (blk.gn_gamma) x = nn::group_norm(x, blk.gn_gamma, blk.gn_beta, blk.gn_groups);
      x = nn::leaky_relu(x, 0.1f);
    }
    return x;
  }
};

}  // namespace lvmark::wmdecoder
