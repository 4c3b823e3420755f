#pragma once

#include "lvmark/media.hpp"
#include "lvmark/metrics.hpp"
#include "lvmark/nn.hpp"

namespace lvmark::latentcodec {

// Desk-scale stand-in for a pre-trained latent video codec. The encoder
// strides 2x temporally and 8x spatially down to an 8-channel latent; the
// decoder mirrors it with nearest-neighbour upsampling + convolution and
// exactly 12 weight-bearing conv layers (the modulation registry).

constexpr int kLatentChannels = 8;

struct ConvDef {
  std::string name;
  int in_ch, out_ch;
  int kf, kh, kw;
  nn::Conv3dSpec spec;
  int uf = 1, uh = 1, uw = 1;  // nearest upsample applied before the conv
  enum class Act { kLeakyRelu, kTanh, kNone } act = Act::kLeakyRelu;
};

// Registry entry consumed by the modulation module.
struct DecoderLayerInfo {
  int id = 0;
  std::string kind;        // "convolution"
  int input_channels = 0;  // d_D^(i)
  std::vector<int> weight_shape;
};

struct WeightSetVars {
  std::vector<nn::Var> w, b;
};

class LatentCodec {
 public:
  explicit LatentCodec(std::uint64_t init_seed = 1) {
    enc_ = {
        {"enc.conv0", 3, 12, 3, 3, 3, {1, 2, 2, 1, 1, 1}},
        {"enc.conv1", 12, 24, 3, 3, 3, {2, 2, 2, 1, 1, 1}},
        {"enc.conv2", 24, 32, 3, 3, 3, {1, 2, 2, 1, 1, 1}},
        {"enc.conv3", 32, kLatentChannels, 3, 3, 3, {1, 1, 1, 1, 1, 1}, 1, 1, 1, ConvDef::Act::kNone},
    };
    dec_ = {
        {"dec.conv0", kLatentChannels, 48, 3, 3, 3, {1, 1, 1, 1, 1, 1}},
        {"dec.conv1", 48, 48, 3, 3, 3, {1, 1, 1, 1, 1, 1}},
        {"dec.conv2", 48, 24, 3, 3, 3, {1, 1, 1, 1, 1, 1}, 1, 2, 2},
        {"dec.conv3", 24, 24, 3, 3, 3, {1, 1, 1, 1, 1, 1}},
        {"dec.conv4", 24, 12, 3, 3, 3, {1, 1, 1, 1, 1, 1}, 2, 2, 2},
        {"dec.conv5", 12, 12, 3, 3, 3, {1, 1, 1, 1, 1, 1}},
        {"dec.conv6", 12, 12, 3, 3, 3, {1, 1, 1, 1, 1, 1}},
        // full-resolution tail: spatial 1x3x3 kernels (temporal mixing is
        // already done by the coarser 3x3x3 stages)
        {"dec.conv7", 12, 8, 1, 3, 3, {1, 1, 1, 1, 1, 1}, 1, 2, 2},
        {"dec.conv8", 8, 8, 1, 3, 3, {1, 1, 1, 1, 1, 1}},
        {"dec.conv9", 8, 8, 1, 3, 3, {1, 1, 1, 1, 1, 1}},
        {"dec.conv10", 8, 8, 1, 3, 3, {1, 1, 1, 1, 1, 1}},
        {"dec.conv11", 8, 3, 1, 3, 3, {1, 1, 1, 1, 1, 1}, 1, 1, 1, ConvDef::Act::kTanh},
    };
    Rng rng(derive_seed(init_seed, 0xc0dec));
    for (const auto& d : enc_) register_layer(d, rng);
    for (const auto& d : dec_) register_layer(d, rng);
  }

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const std::vector<ConvDef>& decoder_defs() const { return dec_; }

  std::vector<DecoderLayerInfo> decoder_layers() const {
    std::vector<DecoderLayerInfo> out;
    for (std::size_t i = 0; i < dec_.size(); ++i) {
      const auto& d = dec_[i];
      out.push_back({static_cast<int>(i), "convolution", d.in_ch,
                     {d.out_ch, d.in_ch, d.kf, d.kh, d.kw}});
    }
    return out;
  }

  // Fresh constant-leaf views of the current decoder weights. Modulation
  // builds per-message weight sets from these; the stored base weights are
  // never mutated.
  WeightSetVars decoder_base_vars() const {
    WeightSetVars ws;
    for (const auto& d : dec_) {
      ws.w.push_back(nn::constant(params_.find(d.name + ".w")->val));
      ws.b.push_back(nn::constant(params_.find(d.name + ".b")->val));
    }
    return ws;
  }

  std::vector<nn::Tensor> decoder_base_weights() const {
    std::vector<nn::Tensor> out;
    for (const auto& d : dec_) out.push_back(params_.find(d.name + ".w")->val);
    return out;
  }

  nn::Var encode_var(nn::Var x) const {
    require(x->val.rank() == 5, "encode: [B,3,F,H,W] expected");
    require(x->val.dim(2) % 2 == 0 && x->val.dim(3) % 8 == 0 && x->val.dim(4) % 8 == 0,
            "encode: F must be divisible by 2 and H, W by 8, got " + x->val.shape_str());
    for (const auto& d : enc_) x = apply_layer(x, d, params_.find(d.name + ".w"), params_.find(d.name + ".b"));
    return x;
  }

  nn::Tensor encode(const nn::Tensor& clips) const { return encode_var(nn::constant(clips))->val; }

  nn::Var decode_with(nn::Var z, const WeightSetVars& ws) const {
    require(z->val.rank() == 5 && z->val.dim(1) == kLatentChannels,
            "decode: latent [B,8,F/2,H/8,W/8] expected");
    require(ws.w.size() == dec_.size() && ws.b.size() == dec_.size(),
            "decode: weight set must cover all decoder layers");
    nn::Var x = std::move(z);
    for (std::size_t i = 0; i < dec_.size(); ++i)
      x = apply_layer(x, dec_[i], ws.w[i], ws.b[i]);
    return x;
  }

  nn::Var decode_var(nn::Var z) const {
    WeightSetVars ws;
    for (const auto& d : dec_) {
      ws.w.push_back(params_.find(d.name + ".w"));
      ws.b.push_back(params_.find(d.name + ".b"));
    }
    return decode_with(std::move(z), ws);
  }

  nn::Tensor decode(const nn::Tensor& z) const { return decode_var(nn::constant(z))->val; }

  // Decode with one decoder layer's weights replaced (importance scans,
  // weight-level attacks).
  nn::Tensor decode_with_weights(const nn::Tensor& z, const std::vector<nn::Tensor>& w) const {
    require(w.size() == dec_.size(), "decode_with_weights: layer count mismatch");
    WeightSetVars ws;
    for (std::size_t i = 0; i < dec_.size(); ++i) {
      ws.w.push_back(nn::constant(w[i]));
      ws.b.push_back(nn::constant(params_.find(dec_[i].name + ".b")->val));
    }
    return decode_with(nn::constant(z), ws)->val;
  }

  double validation_psnr = 0.0;  // recorded by pretraining
  std::uint64_t config_hash = 0;

 private:
  std::vector<ConvDef> enc_, dec_;
  nn::ParamStore params_;

  void register_layer(const ConvDef& d, Rng& rng) {
    params_.add(d.name + ".w", nn::init_conv_weight(d.out_ch, d.in_ch, d.kf, d.kh, d.kw, rng));
    params_.add(d.name + ".b", nn::Tensor({d.out_ch}));
  }

  static nn::Var apply_layer(nn::Var x, const ConvDef& d, nn::Var w, nn::Var b) {
    if (d.uf != 1 || d.uh != 1 || d.uw != 1) x = nn::upsample_nearest(x, d.uf, d.uh, d.uw);
    nn::Conv3dSpec spec = d.spec;
    spec.pf = d.kf / 2;
    spec.ph = d.kh / 2;
    spec.pw = d.kw / 2;
    x = nn::conv3d(x, std::move(w), std::move(b), spec);
    switch (d.act) {
      case ConvDef::Act::kLeakyRelu: return nn::leaky_relu(x, 0.1f);
      case ConvDef::Act::kTanh: return nn::tanh_op(x);
      case ConvDef::Act::kNone: return x;
    }
    return x;
  }
};

// ---------------------------------------------------------------------------
// Autoencoder pretraining (plain reconstruction; the codec is frozen after
// this and only touched through modulation).
// ---------------------------------------------------------------------------

struct PretrainConfig {
  int iterations = 2000;
  int batch = 4;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  int val_clips = 8;
  int log_every = 200;
  bool verbose = false;
};

struct PretrainResult {
  double val_psnr = 0.0;
  std::vector<float> loss_trace;
};

inline double validation_psnr(const LatentCodec& codec, const media::DatasetManifest& val) {
  double acc = 0;
  for (std::size_t i = 0; i < val.entries.size(); ++i) {
    const auto clip = media::load_entry(val, static_cast<int>(i));
    const nn::Tensor x = media::clip_to_tensor(clip);
    const nn::Tensor y = codec.decode(codec.encode(x));
    acc += metrics::psnr(clip, media::tensor_to_clip(y));
  }
  return acc / static_cast<double>(val.entries.size());
}

inline PretrainResult pretrain_autoencoder(LatentCodec& codec, const media::DatasetManifest& train,
                                           const media::DatasetManifest& val,
                                           const PretrainConfig& cfg) {
  nn::AdamWConfig opt_cfg;
  opt_cfg.lr = cfg.lr;
  opt_cfg.weight_decay = 0.0;
  nn::AdamW opt(codec.params().all(), opt_cfg);
  PretrainResult res;
  const int batch = std::min<int>(cfg.batch, static_cast<int>(train.entries.size()));
  for (int it = 0; it < cfg.iterations; ++it) {
    const auto clips = media::sample_batch(train, batch, derive_seed(cfg.seed, 0xae, static_cast<std::uint64_t>(it)));
    nn::Var x = nn::constant(media::clips_to_batch(clips));
    nn::Var recon = codec.decode_var(codec.encode_var(x));
    nn::Var loss = nn::mean_all(nn::square(nn::sub(recon, x)));
    const float lv = loss->val[0];
    if (!std::isfinite(lv))
      throw std::runtime_error("pretrain_autoencoder: non-finite loss at iteration " +
                               std::to_string(it));
    res.loss_trace.push_back(lv);
    opt.zero_grad();
    nn::backward(loss);
    opt.step();
    if (cfg.verbose && (it + 1) % cfg.log_every == 0)
      std::fprintf(stderr, "[pretrain] iter %d/%d mse %.5f\n", it + 1, cfg.iterations, lv);
  }
  res.val_psnr = validation_psnr(codec, val);
  codec.validation_psnr = res.val_psnr;
  return res;
}

}  // namespace lvmark::latentcodec
