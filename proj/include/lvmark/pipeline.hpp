#pragma once

#include <iomanip>
#include <optional>

#include "lvmark/checkpoint.hpp"
#include "lvmark/config.hpp"
#include "lvmark/distortion.hpp"
#include "lvmark/latentcodec.hpp"
#include "lvmark/losses.hpp"
#include "lvmark/modulation.hpp"
#include "lvmark/wmdecoder.hpp"

namespace lvmark::pipeline {

constexpr const char* kVersion = "lvmark 0.1.0";

// ---------------------------------------------------------------------------
// TrainConfig: every knob of a watermark training run. Defaults are the
// desk-scale configuration.
// ---------------------------------------------------------------------------

struct TrainConfig {
  // message channel
  int channel_bits = 32;  // raw embedded codeword width n
  int bch_m = 0;          // 0 = auto (4 for short channels, 9 for 512-bit)
  int bch_t = 0;

  // data
  int frames = 8;
  int height = 64;
  int width = 64;
  int dataset_size = 64;
  int val_size = 8;
  int eval_size = 16;

  // losses
  losses::LossWeights weights;
  bool use_vgg = true;
  bool use_patch = true;
  bool use_mae = false;
  double lambda_mae = 1.0;
  int patch_side = 16;

  // modulation
  double modulation_rate = 50.0;  // percent of decoder layers
  double scan_variance = 0.04;
  int scan_trials = 3;
  int scan_probes = 8;
  double gamma_init = 0.05;
  int d_mprime = 128;
  int map_hidden = 256;

  // watermark decoder
  int feat_ch = 128;
  int heads = 8;
  int depth = 2;
  int ffn_hidden = 256;
  std::string domain = "low_freq+rgb";  // rgb_only | low_freq_only | high_freq_only |
                                        // high_freq+rgb | low_freq+rgb
  std::string freq_transform = "dwt3";  // dwt3 | dwt2

  // optimisation
  int iterations = 5000;
  int batch = 4;
  nn::AdamWConfig opt;     // modulation-side optimizer; betas (0.9, 0.999), decay 0.01
  double lr_wmd = 3e-4;    // watermark-decoder learning rate

  TrainConfig() {
    opt.lr = 1e-4;
    opt.clip_norm = 1.0;
    opt.warmup_steps = 200;
  }

  // distortion pool (training); h264_sim is evaluation-only
  std::vector<std::string> pool = {"none",           "crop:0.5",       "blur:1.0",
                                   "jpeg:50",        "h264_proxy:24",  "frame_swap:0.5",
                                   "frame_drop:0.5", "frame_average:6"};

  // run control
  std::uint64_t seed = 1;
  bool deterministic = true;
  int log_every = 200;
  bool verbose = false;

  void validate() const {
    require(channel_bits >= 8, "config: channel_bits must be >= 8");
    require(frames >= 2 && frames % 2 == 0, "config: frames must be even and >= 2");
    require(height % 8 == 0 && width % 8 == 0 && height >= 32 && width >= 32,
            "config: height and width must be multiples of 8 and >= 32");
    require(modulation_rate >= 0 && modulation_rate <= 100, "config: modulation_rate in [0,100]");
    require(batch >= 1 && iterations >= 0, "config: batch >= 1, iterations >= 0");
    require(height % patch_side == 0 && width % patch_side == 0,
            "config: patch_side must divide height and width");
    weights.validate();
    wmdecoder_config();  // validates domain / transform strings
  }

  wmdecoder::WmDecoderConfig wmdecoder_config() const {
    wmdecoder::WmDecoderConfig w;
    w.n_bits = channel_bits;
    w.feat_ch = feat_ch;
    w.heads = heads;
    w.depth = depth;
    w.ffn_hidden = ffn_hidden;
    require(freq_transform == "dwt3" || freq_transform == "dwt2",
            "config: freq_transform must be dwt3 or dwt2");
    const bool dwt2 = freq_transform == "dwt2";
    if (domain == "rgb_only") {
      w.freq = wmdecoder::FreqKind::kNone;
      w.use_rgb = true;
    } else if (domain == "low_freq_only") {
      w.freq = dwt2 ? wmdecoder::FreqKind::kDwt2Ll : wmdecoder::FreqKind::kDwt3Lll;
      w.use_rgb = false;
    } else if (domain == "high_freq_only") {
      w.freq = wmdecoder::FreqKind::kDwt3Hhh;
      w.use_rgb = false;
    } else if (domain == "high_freq+rgb") {
      w.freq = wmdecoder::FreqKind::kDwt3Hhh;
      w.use_rgb = true;
    } else if (domain == "low_freq+rgb") {
      w.freq = dwt2 ? wmdecoder::FreqKind::kDwt2Ll : wmdecoder::FreqKind::kDwt3Lll;
      w.use_rgb = true;
    } else {
      throw InvalidArgument("config: unknown domain '" + domain +
                            "' (rgb_only, low_freq_only, high_freq_only, high_freq+rgb, "
                            "low_freq+rgb)");
    }
    return w;
  }

  config::Config to_config() const {
    config::Config c;
    c.set("channel_bits", static_cast<std::int64_t>(channel_bits));
    c.set("bch_m", static_cast<std::int64_t>(bch_m));
    c.set("bch_t", static_cast<std::int64_t>(bch_t));
    c.set("frames", static_cast<std::int64_t>(frames));
    c.set("height", static_cast<std::int64_t>(height));
    c.set("width", static_cast<std::int64_t>(width));
    c.set("dataset_size", static_cast<std::int64_t>(dataset_size));
    c.set("val_size", static_cast<std::int64_t>(val_size));
    c.set("eval_size", static_cast<std::int64_t>(eval_size));
    c.set("lambda_msg", weights.msg);
    c.set("lambda_vgg", weights.vgg);
    c.set("lambda_patch", weights.patch);
    c.set("lambda_mae", lambda_mae);
    c.set("use_vgg", use_vgg ? "true" : "false");
    c.set("use_patch", use_patch ? "true" : "false");
    c.set("use_mae", use_mae ? "true" : "false");
    c.set("patch_side", static_cast<std::int64_t>(patch_side));
    c.set("modulation_rate", modulation_rate);
    c.set("scan_variance", scan_variance);
    c.set("scan_trials", static_cast<std::int64_t>(scan_trials));
    c.set("scan_probes", static_cast<std::int64_t>(scan_probes));
    c.set("gamma_init", gamma_init);
    c.set("d_mprime", static_cast<std::int64_t>(d_mprime));
    c.set("map_hidden", static_cast<std::int64_t>(map_hidden));
    c.set("feat_ch", static_cast<std::int64_t>(feat_ch));
    c.set("heads", static_cast<std::int64_t>(heads));
    c.set("depth", static_cast<std::int64_t>(depth));
    c.set("ffn_hidden", static_cast<std::int64_t>(ffn_hidden));
    c.set("domain", domain);
    c.set("freq_transform", freq_transform);
    c.set("iterations", static_cast<std::int64_t>(iterations));
    c.set("batch", static_cast<std::int64_t>(batch));
    c.set("lr", opt.lr);
    c.set("lr_wmd", lr_wmd);
    c.set("adam_beta1", opt.beta1);
    c.set("adam_beta2", opt.beta2);
    c.set("weight_decay", opt.weight_decay);
    c.set("grad_clip", opt.clip_norm);
    c.set("warmup_steps", static_cast<std::int64_t>(opt.warmup_steps));
    std::string p;
    for (std::size_t i = 0; i < pool.size(); ++i) p += (i ? "," : "") + pool[i];
    c.set("distortion_pool", p);
    c.set("seed", static_cast<std::int64_t>(seed));
    c.set("deterministic", deterministic ? "true" : "false");
    return c;
  }

  static TrainConfig from_config(const config::Config& c) {
    TrainConfig t;
    t.channel_bits = static_cast<int>(c.get_int("channel_bits", t.channel_bits));
    t.bch_m = static_cast<int>(c.get_int("bch_m", t.bch_m));
    t.bch_t = static_cast<int>(c.get_int("bch_t", t.bch_t));
    t.frames = static_cast<int>(c.get_int("frames", t.frames));
    t.height = static_cast<int>(c.get_int("height", t.height));
    t.width = static_cast<int>(c.get_int("width", t.width));
    t.dataset_size = static_cast<int>(c.get_int("dataset_size", t.dataset_size));
    t.val_size = static_cast<int>(c.get_int("val_size", t.val_size));
    t.eval_size = static_cast<int>(c.get_int("eval_size", t.eval_size));
    t.weights.msg = c.get_double("lambda_msg", t.weights.msg);
    t.weights.vgg = c.get_double("lambda_vgg", t.weights.vgg);
    t.weights.patch = c.get_double("lambda_patch", t.weights.patch);
    t.lambda_mae = c.get_double("lambda_mae", t.lambda_mae);
    t.use_vgg = c.get_bool("use_vgg", t.use_vgg);
    t.use_patch = c.get_bool("use_patch", t.use_patch);
    t.use_mae = c.get_bool("use_mae", t.use_mae);
    t.patch_side = static_cast<int>(c.get_int("patch_side", t.patch_side));
    t.modulation_rate = c.get_double("modulation_rate", t.modulation_rate);
    t.scan_variance = c.get_double("scan_variance", t.scan_variance);
    t.scan_trials = static_cast<int>(c.get_int("scan_trials", t.scan_trials));
    t.scan_probes = static_cast<int>(c.get_int("scan_probes", t.scan_probes));
    t.gamma_init = c.get_double("gamma_init", t.gamma_init);
    t.d_mprime = static_cast<int>(c.get_int("d_mprime", t.d_mprime));
    t.map_hidden = static_cast<int>(c.get_int("map_hidden", t.map_hidden));
    t.feat_ch = static_cast<int>(c.get_int("feat_ch", t.feat_ch));
    t.heads = static_cast<int>(c.get_int("heads", t.heads));
    t.depth = static_cast<int>(c.get_int("depth", t.depth));
    t.ffn_hidden = static_cast<int>(c.get_int("ffn_hidden", t.ffn_hidden));
    t.domain = c.get("domain", t.domain);
    t.freq_transform = c.get("freq_transform", t.freq_transform);
    t.iterations = static_cast<int>(c.get_int("iterations", t.iterations));
    t.batch = static_cast<int>(c.get_int("batch", t.batch));
    t.opt.lr = c.get_double("lr", t.opt.lr);
    t.lr_wmd = c.get_double("lr_wmd", t.lr_wmd);
    t.opt.beta1 = c.get_double("adam_beta1", t.opt.beta1);
    t.opt.beta2 = c.get_double("adam_beta2", t.opt.beta2);
    t.opt.weight_decay = c.get_double("weight_decay", t.opt.weight_decay);
    t.opt.clip_norm = c.get_double("grad_clip", t.opt.clip_norm);
    t.opt.warmup_steps = static_cast<int>(c.get_int("warmup_steps", t.opt.warmup_steps));
    if (c.has("distortion_pool")) {
      t.pool.clear();
      std::string s = c.get("distortion_pool", "");
      std::size_t start = 0;
      int depth_paren = 0;
      for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i < s.size() && s[i] == '(') ++depth_paren;
        if (i < s.size() && s[i] == ')') --depth_paren;
        if (i == s.size() || (s[i] == ',' && depth_paren == 0)) {
          if (i > start) t.pool.push_back(s.substr(start, i - start));
          start = i + 1;
        }
      }
    }
    t.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<std::int64_t>(t.seed)));
    t.deterministic = c.get_bool("deterministic", t.deterministic);
    t.validate();
    return t;
  }
};

// ---------------------------------------------------------------------------
// System: codec + importance report + modulation stack + watermark decoder +
// codec proxy, i.e. everything a run checkpoint holds.
// ---------------------------------------------------------------------------

struct System {
  TrainConfig cfg;
  latentcodec::LatentCodec codec;
  distortion::H264ProxyNet proxy;
  std::vector<modulation::LayerImportance> importance;
  std::vector<int> selected;
  nn::ParamStore mod_store;  // mapping network + modulation set
  std::optional<modulation::MappingNetwork> mapping;
  std::optional<modulation::ModulationSet> modset;
  std::optional<wmdecoder::WatermarkDecoderNet> wmd;
  std::optional<msgcodec::ChannelCode> channel;
  std::int64_t iterations_done = 0;
  std::vector<float> loss_trace;

  explicit System(const TrainConfig& config)
      : cfg(config), codec(derive_seed(config.seed, 0x10)), proxy(derive_seed(config.seed, 0x11)) {
    cfg.validate();
    channel.emplace(msgcodec::ChannelCode::for_channel(cfg.channel_bits, cfg.bch_m, cfg.bch_t));
  }

  // Builds mapping/modulation/wmdecoder once the importance report exists.
  void build_trainables() {
    require(!importance.empty() || cfg.modulation_rate == 0.0,
            "importance report required before building the modulation set");
    selected = modulation::select_layers(importance, cfg.modulation_rate);
    Rng rng(derive_seed(cfg.seed, 0x12));
    mapping.emplace(modulation::MappingNetwork::create(mod_store, cfg.channel_bits, cfg.map_hidden,
                                                       cfg.d_mprime, rng));
    modset.emplace(modulation::ModulationSet::create(mod_store, codec.decoder_layers(), selected,
                                                     cfg.d_mprime, static_cast<float>(cfg.gamma_init),
                                                     rng, cfg.channel_bits));
    wmd.emplace(cfg.wmdecoder_config(), derive_seed(cfg.seed, 0x13));
  }

  media::DatasetManifest train_manifest() const {
    return media::make_synthetic_manifest(cfg.dataset_size, cfg.frames, cfg.height, cfg.width,
                                          derive_seed(cfg.seed, 0x20), "train");
  }
  media::DatasetManifest val_manifest() const {
    return media::make_synthetic_manifest(cfg.val_size, cfg.frames, cfg.height, cfg.width,
                                          derive_seed(cfg.seed, 0x21), "val");
  }
  media::DatasetManifest eval_manifest() const {
    return media::make_synthetic_manifest(cfg.eval_size, cfg.frames, cfg.height, cfg.width,
                                          derive_seed(cfg.seed, 0x22), "eval");
  }

  std::vector<distortion::DistortionSpec> pool_specs() const {
    std::vector<distortion::DistortionSpec> specs;
    for (const auto& p : cfg.pool) specs.push_back(distortion::parse_spec(p));
    return specs;
  }

  // Decoder weight set for one codeword (the embedding path).
  latentcodec::WeightSetVars modulated_weights(const msgcodec::Bits& codeword) const {
    nn::Var mprime = mapping->forward(codeword);
    latentcodec::WeightSetVars ws;
    ws.w = modulation::modulate(codec.decoder_base_weights(), mprime, *modset);
    for (const auto& d : codec.decoder_defs())
      ws.b.push_back(nn::constant(codec.params().find(d.name + ".b")->val));
    return ws;
  }
};

// ---------------------------------------------------------------------------
// Stage runners
// ---------------------------------------------------------------------------

inline latentcodec::PretrainResult pretrain_codec(System& sys, int iterations = 2000,
                                                  double lr = 1e-3, bool verbose = false) {
  latentcodec::PretrainConfig pc;
  pc.iterations = iterations;
  pc.lr = lr;
  pc.seed = derive_seed(sys.cfg.seed, 0x30);
  pc.verbose = verbose;
  return latentcodec::pretrain_autoencoder(sys.codec, sys.train_manifest(), sys.val_manifest(), pc);
}

inline void run_importance_scan(System& sys) {
  std::vector<media::VideoClip> probes;
  const auto man = sys.val_manifest();
  for (int i = 0; i < std::min<int>(sys.cfg.scan_probes, static_cast<int>(man.entries.size())); ++i)
    probes.push_back(media::load_entry(man, i));
  sys.importance = modulation::scan_layer_importance(sys.codec, probes, sys.cfg.scan_variance,
                                                     sys.cfg.scan_trials,
                                                     derive_seed(sys.cfg.seed, 0x31));
}

inline distortion::ProxyTrainResult train_proxy(System& sys, int iterations = 1200,
                                                bool verbose = false) {
  distortion::ProxyTrainConfig pc;
  pc.iterations = iterations;
  pc.seed = derive_seed(sys.cfg.seed, 0x32);
  pc.verbose = verbose;
  return distortion::train_h264_proxy(sys.proxy, sys.train_manifest(), sys.val_manifest(), pc);
}

struct TrainResult {
  std::vector<float> loss_trace;
  std::vector<float> msg_trace;
  bool aborted = false;
  int aborted_at = -1;
};

// Joint training of the modulation stack and the watermark decoder. The base
// codec weights stay frozen; modulation is the only path that alters
// decoding.
inline TrainResult train(System& sys, bool continue_run = false) {
  require(sys.mapping && sys.wmd, "train: call build_trainables() first");
  const auto& cfg = sys.cfg;
  nn::AdamW opt_mod(sys.mod_store.all(), cfg.opt);
  nn::AdamWConfig wmd_cfg = cfg.opt;
  wmd_cfg.lr = cfg.lr_wmd;
  nn::AdamW opt_wmd(sys.wmd->params().all(), wmd_cfg);
  const auto manifest = sys.train_manifest();
  const auto pool = sys.pool_specs();
  const auto base_w = sys.codec.decoder_base_weights();
  latentcodec::WeightSetVars base_b;
  for (const auto& d : sys.codec.decoder_defs())
    base_b.b.push_back(nn::constant(sys.codec.params().find(d.name + ".b")->val));

  TrainResult res;
  std::map<std::string, nn::Tensor> last_good;
  const int snapshot_every = std::max(1, cfg.iterations / 10);
  if (!continue_run) sys.loss_trace.clear();

  const int batch = std::min<int>(cfg.batch, static_cast<int>(manifest.entries.size()));
  for (int it = 0; it < cfg.iterations; ++it) {
    const std::uint64_t it_seed = derive_seed(cfg.seed, 0x40, static_cast<std::uint64_t>(it));
    const auto clips = media::sample_batch(manifest, batch, derive_seed(it_seed, 1));

    // each batch item carries its own fresh codeword and distortion draw
    nn::Var msg_l, vgg_l, patch_l, mae_l;
    float msg_val = 0;
    for (int b = 0; b < batch; ++b) {
      const msgcodec::Bits payload = msgcodec::sample_message(
          sys.channel->payload_bits(), derive_seed(it_seed, 2 + 8 * static_cast<std::uint64_t>(b)));
      const msgcodec::Bits codeword = sys.channel->encode(payload);
      nn::Var x = nn::constant(media::clip_to_tensor(clips[static_cast<std::size_t>(b)]));
      nn::Tensor z = sys.codec.encode(x->val);
      latentcodec::WeightSetVars ws;
      ws.w = modulation::modulate(base_w, sys.mapping->forward(codeword), *sys.modset);
      ws.b = base_b.b;
      nn::Var v_hat = sys.codec.decode_with(nn::constant(z), ws);

      const auto& spec =
          distortion::sample_distortion(pool, derive_seed(it_seed, 3 + 8 * static_cast<std::uint64_t>(b)));
      distortion::ApplyContext ctx;
      ctx.proxy = &sys.proxy;
      ctx.run_seed = derive_seed(it_seed, 4 + 8 * static_cast<std::uint64_t>(b));
      nn::Var distorted = distortion::apply_distortion(spec, v_hat, ctx);
      nn::Var logits = sys.wmd->logits(distorted);

      nn::Var m = losses::message_loss(logits, codeword);
      msg_l = msg_l ? nn::add(msg_l, m) : m;
      if (cfg.use_vgg) {
        nn::Var v = losses::perceptual_loss(v_hat, x);
        vgg_l = vgg_l ? nn::add(vgg_l, v) : v;
      }
      if (cfg.use_patch) {
        nn::Var p = losses::weighted_patch_loss(v_hat, x, losses::PatchGrid{cfg.patch_side});
        patch_l = patch_l ? nn::add(patch_l, p) : p;
      }
      if (cfg.use_mae) {
        nn::Var m2 = losses::mae_loss(v_hat, x);
        mae_l = mae_l ? nn::add(mae_l, m2) : m2;
      }
    }
    const float inv_b = 1.0f / static_cast<float>(batch);
    msg_l = nn::mul_const(msg_l, inv_b);
    msg_val = msg_l->val[0];
    vgg_l = cfg.use_vgg ? nn::mul_const(vgg_l, inv_b) : nn::constant(nn::Tensor::scalar(0.0f));
    patch_l = cfg.use_patch ? nn::mul_const(patch_l, inv_b) : nn::constant(nn::Tensor::scalar(0.0f));
    nn::Var total = losses::total_loss(msg_l, vgg_l, patch_l, cfg.weights);
    if (cfg.use_mae)
      total = nn::add(total, nn::mul_const(mae_l, static_cast<float>(cfg.lambda_mae) * inv_b));

    const float lv = total->val[0];
    if (!std::isfinite(lv)) {
      // restore the last good snapshot and stop
      if (!last_good.empty()) {
        sys.mod_store.restore(last_good);
        sys.wmd->params().restore(last_good);
      }
      res.aborted = true;
      res.aborted_at = it;
      std::fprintf(stderr, "[train] non-finite loss at iteration %d; restored last good snapshot\n",
                   it);
      break;
    }
    res.loss_trace.push_back(lv);
    res.msg_trace.push_back(msg_val);
    sys.loss_trace.push_back(lv);

    opt_mod.zero_grad();
    opt_wmd.zero_grad();
    nn::backward(total);
    opt_mod.step();
    opt_wmd.step();
    ++sys.iterations_done;

    if (it % snapshot_every == 0) {
      last_good = sys.mod_store.snapshot();
      for (auto& [k, v] : sys.wmd->params().snapshot()) last_good[k] = v;
    }
    if (cfg.verbose && (it + 1) % cfg.log_every == 0)
      std::fprintf(stderr, "[train] iter %d/%d loss %.4f msg %.4f\n", it + 1, cfg.iterations, lv,
                   msg_val);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Embed / extract
// ---------------------------------------------------------------------------

inline media::VideoClip embed(const System& sys, const msgcodec::Bits& payload,
                              const media::VideoClip& source) {
  require(static_cast<int>(payload.size()) == sys.channel->payload_bits(),
          "embed: payload length " + std::to_string(payload.size()) + " != " +
              std::to_string(sys.channel->payload_bits()));
  const msgcodec::Bits codeword = sys.channel->encode(payload);
  const nn::Tensor z = sys.codec.encode(media::clip_to_tensor(source));
  const auto ws = sys.modulated_weights(codeword);
  return media::tensor_to_clip(sys.codec.decode_with(nn::constant(z), ws)->val);
}

struct ExtractResult {
  msgcodec::Bits raw_bits;
  msgcodec::ChannelDecodeResult decoded;
};

inline ExtractResult extract(const System& sys, const media::VideoClip& clip) {
  require(clip.frames == sys.cfg.frames && clip.height == sys.cfg.height &&
              clip.width == sys.cfg.width,
          "extract: clip dimensions differ from the trained configuration");
  ExtractResult res;
  const nn::Tensor logits = sys.wmd->logits(nn::constant(media::clip_to_tensor(clip)))->val;
  res.raw_bits = wmdecoder::WatermarkDecoderNet::bits_from_logits(logits);
  res.decoded = sys.channel->decode(res.raw_bits);
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct AttackRow {
  std::string label;
  double raw_accuracy = 0;      // percent, mean over messages
  double payload_accuracy = 0;  // percent of messages fully recovered after BCH
  double mean_corrected = 0;    // mean corrected bits per message
  double psnr = std::numeric_limits<double>::quiet_NaN();  // model attacks only
  int messages = 0;
};

struct EvaluationReport {
  metrics::MetricReport quality;  // watermarked vs unmodulated output
  int quality_messages = 0;
  std::vector<AttackRow> rows;
  std::uint64_t config_hash = 0;

  const AttackRow* find(const std::string& label) const {
    for (const auto& r : rows)
      if (r.label == label) return &r;
    return nullptr;
  }

  std::string csv() const {
    std::ostringstream os;
    os << "attack,messages,raw_bit_accuracy,payload_accuracy,mean_corrected,psnr\n";
    for (const auto& r : rows) {
      os << r.label << ',' << r.messages << ',' << std::setprecision(6) << r.raw_accuracy << ','
         << r.payload_accuracy << ',' << r.mean_corrected << ',';
      if (std::isnan(r.psnr))
        os << "";
      else
        os << r.psnr;
      os << '\n';
    }
    return os.str();
  }

  std::string summary() const {
    std::ostringstream os;
    os << "quality vs unmodulated output (over " << quality_messages << " messages)\n";
    os << "  psnr " << std::fixed << std::setprecision(2) << quality.psnr << " dB, ssim "
       << std::setprecision(4) << quality.ssim << ", perceptual " << quality.perceptual << ", tlp "
       << quality.tlp << "\n";
    os << "attack rows (raw bit accuracy % / payload accuracy % [/ psnr]):\n";
    for (const auto& r : rows) {
      os << "  " << std::left << std::setw(28) << r.label << std::right << std::fixed
         << std::setprecision(2) << std::setw(7) << r.raw_accuracy << "  " << std::setw(7)
         << r.payload_accuracy;
      if (!std::isnan(r.psnr)) os << "  psnr " << std::setprecision(2) << r.psnr;
      os << "\n";
    }
    return os.str();
  }
};

static const char* kDefaultAttacks[] = {
    "none",           "crop:0.5",     "rotate:0.5235987755982988",
    "blur:1.0",       "jpeg:50",      "frame_swap:0.5",
    "frame_average:6", "frame_drop:0.5", "h264_sim:24",
    "combine(rotate:0.5235987755982988,frame_drop:0.5,h264_sim:24)"};

// The three weight-level attacks of the evaluation matrix.
enum class ModelAttack { kGaussian, kPrune, kRetrain };

struct EvaluateOptions {
  std::vector<std::string> attacks;  // empty = kDefaultAttacks
  bool model_attacks = true;
  int retrain_steps = 500;
  int message_count = 100;
  int quality_messages = 20;  // ssim/proxy/tlp are costly; psnr uses all
  bool verbose = false;
};

namespace detail {

struct MessageCase {
  msgcodec::Bits payload, codeword;
  media::VideoClip source;
  nn::Tensor z;
  nn::Tensor watermarked;  // [1,3,F,H,W]
  nn::Tensor base_out;     // unmodulated decode
};

inline std::vector<MessageCase> prepare_cases(const System& sys, int count) {
  const auto eval_man = sys.eval_manifest();
  std::vector<MessageCase> cases(static_cast<std::size_t>(count));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int i = 0; i < count; ++i) {
    auto& mc = cases[static_cast<std::size_t>(i)];
    mc.payload = msgcodec::sample_message(sys.channel->payload_bits(),
                                          derive_seed(sys.cfg.seed, 0x50, static_cast<std::uint64_t>(i)));
    mc.codeword = sys.channel->encode(mc.payload);
    mc.source = media::load_entry(eval_man, i % static_cast<int>(eval_man.entries.size()));
    mc.z = sys.codec.encode(media::clip_to_tensor(mc.source));
    const auto ws = sys.modulated_weights(mc.codeword);
    mc.watermarked = sys.codec.decode_with(nn::constant(mc.z), ws)->val;
    mc.base_out = sys.codec.decode(mc.z);
  }
  return cases;
}

inline double raw_accuracy(const System& sys, const nn::Tensor& clip_t, const msgcodec::Bits& cw,
                           msgcodec::Bits* raw_out = nullptr) {
  const nn::Tensor logits = sys.wmd->logits(nn::constant(clip_t))->val;
  msgcodec::Bits raw = wmdecoder::WatermarkDecoderNet::bits_from_logits(logits);
  const double acc = metrics::bit_accuracy(cw, raw);
  if (raw_out) *raw_out = std::move(raw);
  return acc;
}

}  // namespace detail

inline AttackRow evaluate_attack(const System& sys, const std::vector<detail::MessageCase>& cases,
                                 const distortion::DistortionSpec& spec) {
  AttackRow row;
  row.label = spec.label();
  row.messages = static_cast<int>(cases.size());
  double acc = 0, corrected = 0;
  int payload_ok = 0;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) reduction(+ : acc, corrected, payload_ok)
#endif
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& mc = cases[i];
    distortion::ApplyContext ctx;
    ctx.proxy = &sys.proxy;
    ctx.run_seed = derive_seed(sys.cfg.seed, 0x51, static_cast<std::uint64_t>(i));
    ctx.allow_nondifferentiable = true;
    nn::Var attacked = distortion::apply_distortion(spec, nn::constant(mc.watermarked), ctx);
    msgcodec::Bits raw;
    acc += detail::raw_accuracy(sys, attacked->val, mc.codeword, &raw);
    const auto dec = sys.channel->decode(raw);
    corrected += dec.corrected;
    if (dec.ok && dec.payload == mc.payload) ++payload_ok;
  }
  row.raw_accuracy = acc / row.messages;
  row.payload_accuracy = 100.0 * payload_ok / row.messages;
  row.mean_corrected = corrected / row.messages;
  return row;
}

// Weight-level attack rows: perturb/prune the modulated decoder weights per
// message, decode the degraded output, then extract.
inline AttackRow evaluate_model_attack(const System& sys,
                                       const std::vector<detail::MessageCase>& cases,
                                       ModelAttack kind, double sigma, double probability) {
  AttackRow row;
  row.label = kind == ModelAttack::kGaussian
                  ? "model_gaussian:s" + std::to_string(sigma).substr(0, 4) + ",p" +
                        std::to_string(probability).substr(0, 4)
                  : "model_prune:p" + std::to_string(probability).substr(0, 4);
  row.messages = static_cast<int>(cases.size());
  double acc = 0, corrected = 0, psnr_acc = 0;
  int payload_ok = 0;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) reduction(+ : acc, corrected, payload_ok, psnr_acc)
#endif
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& mc = cases[i];
    // materialise the modulated weights, then attack them
    const auto ws = sys.modulated_weights(mc.codeword);
    std::vector<nn::Tensor> wt;
    for (const auto& w : ws.w) wt.push_back(w->val);
    const std::uint64_t aseed = derive_seed(sys.cfg.seed, 0x52, static_cast<std::uint64_t>(i));
    std::vector<nn::Tensor> attacked_w = kind == ModelAttack::kGaussian
                                             ? distortion::perturb_weights(wt, sigma, probability, aseed)
                                             : distortion::prune_weights(wt, probability, aseed);
    const nn::Tensor out = sys.codec.decode_with_weights(mc.z, attacked_w);
    msgcodec::Bits raw;
    acc += detail::raw_accuracy(sys, out, mc.codeword, &raw);
    const auto dec = sys.channel->decode(raw);
    corrected += dec.corrected;
    if (dec.ok && dec.payload == mc.payload) ++payload_ok;
    psnr_acc += metrics::psnr(media::tensor_to_clip(out), media::tensor_to_clip(mc.base_out));
  }
  row.raw_accuracy = acc / row.messages;
  row.payload_accuracy = 100.0 * payload_ok / row.messages;
  row.mean_corrected = corrected / row.messages;
  row.psnr = psnr_acc / row.messages;
  return row;
}

// Retraining attack: fine-tune the distributed (modulated) decoder weights
// directly against a fresh random key using the owner's watermark decoder as
// a white-box surrogate, then measure original-key recovery and PSNR.
inline AttackRow retrain_attack(const System& sys, const std::vector<detail::MessageCase>& cases,
                                int steps, std::uint64_t fresh_seed, int eval_messages = 20) {
  AttackRow row;
  row.label = "model_retrain:" + std::to_string(steps);
  const int n_eval = std::min<int>(eval_messages, static_cast<int>(cases.size()));
  row.messages = n_eval;
  if (steps < 0) steps = 0;

  // the attacker's fresh key
  const msgcodec::Bits fresh_payload = msgcodec::sample_message(sys.channel->payload_bits(),
                                                                derive_seed(fresh_seed, 0x60));
  const msgcodec::Bits fresh_cw = sys.channel->encode(fresh_payload);
  const auto manifest = sys.train_manifest();

  double acc = 0, corrected = 0, psnr_acc = 0;
  int payload_ok = 0;
  for (int i = 0; i < n_eval; ++i) {
    const auto& mc = cases[static_cast<std::size_t>(i)];
    // clone the distributed weight set for this key
    const auto ws0 = sys.modulated_weights(mc.codeword);
    nn::ParamStore attacker;
    std::vector<nn::Var> w_vars;
    for (std::size_t l = 0; l < ws0.w.size(); ++l)
      w_vars.push_back(attacker.add("atk.w" + std::to_string(l), ws0.w[l]->val));
    nn::AdamWConfig oc;
    oc.lr = 1e-4;
    oc.weight_decay = 0.0;
    nn::AdamW opt(attacker.all(), oc);
    latentcodec::WeightSetVars ws;
    ws.w = w_vars;
    for (const auto& d : sys.codec.decoder_defs())
      ws.b.push_back(nn::constant(sys.codec.params().find(d.name + ".b")->val));
    for (int s = 0; s < steps; ++s) {
      const auto clips = media::sample_batch(manifest, 2, derive_seed(fresh_seed, 0x61, static_cast<std::uint64_t>(s)));
      nn::Var x = nn::constant(media::clips_to_batch(clips));
      nn::Var out = sys.codec.decode_with(nn::constant(sys.codec.encode(x->val)), ws);
      nn::Var recon = nn::mean_all(nn::square(nn::sub(out, x)));
      nn::Var msg = losses::message_loss(sys.wmd->logits(out), fresh_cw);
      nn::Var loss = nn::add(nn::mul_const(recon, 10.0f), nn::mul_const(msg, 0.8f));
      opt.zero_grad();
      nn::backward(loss);
      opt.step();
    }
    std::vector<nn::Tensor> attacked_w;
    for (const auto& w : w_vars) attacked_w.push_back(w->val);
    const nn::Tensor out = sys.codec.decode_with_weights(mc.z, attacked_w);
    msgcodec::Bits raw;
    acc += detail::raw_accuracy(sys, out, mc.codeword, &raw);
    const auto dec = sys.channel->decode(raw);
    corrected += dec.corrected;
    if (dec.ok && dec.payload == mc.payload) ++payload_ok;
    psnr_acc += metrics::psnr(media::tensor_to_clip(out), media::tensor_to_clip(mc.base_out));
  }
  row.raw_accuracy = acc / n_eval;
  row.payload_accuracy = 100.0 * payload_ok / n_eval;
  row.mean_corrected = corrected / n_eval;
  row.psnr = psnr_acc / n_eval;
  return row;
}

inline EvaluationReport evaluate(const System& sys, const EvaluateOptions& opts = {}) {
  require(sys.mapping && sys.wmd, "evaluate: system has no trained components");
  EvaluationReport report;
  report.config_hash = sys.cfg.to_config().hash();
  const auto cases = detail::prepare_cases(sys, opts.message_count);

  // quality of the clean watermarked output vs the unmodulated output
  double psnr_acc = 0, ssim_acc = 0, perc_acc = 0, tlp_acc = 0;
  const int nq = std::min<int>(opts.quality_messages, static_cast<int>(cases.size()));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) reduction(+ : ssim_acc, perc_acc, tlp_acc)
#endif
  for (int i = 0; i < nq; ++i) {
    const auto wm = media::tensor_to_clip(cases[static_cast<std::size_t>(i)].watermarked);
    const auto base = media::tensor_to_clip(cases[static_cast<std::size_t>(i)].base_out);
    ssim_acc += metrics::ssim(wm, base);
    perc_acc += metrics::perceptual_proxy(wm, base);
    tlp_acc += metrics::tlp(wm, base);
  }
  for (const auto& mc : cases)
    psnr_acc += metrics::psnr(media::tensor_to_clip(mc.watermarked), media::tensor_to_clip(mc.base_out));
  report.quality.psnr = psnr_acc / static_cast<double>(cases.size());
  report.quality.ssim = ssim_acc / nq;
  report.quality.perceptual = perc_acc / nq;
  report.quality.tlp = tlp_acc / nq;
  report.quality_messages = nq;

  std::vector<std::string> attacks = opts.attacks;
  if (attacks.empty())
    attacks.assign(std::begin(kDefaultAttacks), std::end(kDefaultAttacks));
  for (const auto& a : attacks) {
    const auto spec = distortion::parse_spec(a);
    report.rows.push_back(evaluate_attack(sys, cases, spec));
    if (opts.verbose)
      std::fprintf(stderr, "[evaluate] %s -> %.2f%%\n", report.rows.back().label.c_str(),
                   report.rows.back().raw_accuracy);
  }
  if (opts.model_attacks) {
    report.rows.push_back(evaluate_model_attack(sys, cases, ModelAttack::kGaussian, 0.05, 0.2));
    report.rows.push_back(evaluate_model_attack(sys, cases, ModelAttack::kPrune, 0.0, 0.1));
    report.rows.push_back(retrain_attack(sys, cases, opts.retrain_steps,
                                         derive_seed(sys.cfg.seed, 0x53)));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoint save / load
// ---------------------------------------------------------------------------

inline void save_system(const std::string& dir, const System& sys) {
  checkpoint::Store store;
  store.put_all(sys.codec.params().snapshot());
  store.put_all(sys.mod_store.snapshot());
  if (sys.wmd) store.put_all(sys.wmd->params().snapshot());
  store.put_all(sys.proxy.params().snapshot());
  store.meta["config_hash"] = std::to_string(sys.cfg.to_config().hash());
  store.meta["iterations"] = std::to_string(sys.iterations_done);
  store.meta["codec_val_psnr"] = std::to_string(sys.codec.validation_psnr);
  store.meta["proxy_heldout_psnr"] = std::to_string(sys.proxy.heldout_psnr);
  store.meta["version"] = kVersion;
  std::string sel;
  for (std::size_t i = 0; i < sys.selected.size(); ++i)
    sel += (i ? "," : "") + std::to_string(sys.selected[i]);
  store.meta["selected_layers"] = sel;
  checkpoint::save(dir, store);
  // full config + importance report live beside the arrays
  {
    std::ofstream f(std::filesystem::path(dir) / "config.txt", std::ios::trunc);
    f << sys.cfg.to_config().canonical();
  }
  {
    std::ofstream f(std::filesystem::path(dir) / "importance.csv", std::ios::trunc);
    f << modulation::importance_csv(sys.importance);
  }
}

inline std::vector<modulation::LayerImportance> parse_importance_csv(const std::string& text) {
  std::vector<modulation::LayerImportance> out;
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    modulation::LayerImportance li;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    ls >> li.layer_id >> li.kind >> li.score >> li.trials >> li.variance;
    out.push_back(li);
  }
  return out;
}

inline System load_system(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto store = checkpoint::load(dir);
  const auto cfg = TrainConfig::from_config(config::Config::parse_file((fs::path(dir) / "config.txt").string()));
  System sys(cfg);
  {
    std::ifstream f(fs::path(dir) / "importance.csv");
    if (f) {
      std::stringstream buf;
      buf << f.rdbuf();
      sys.importance = parse_importance_csv(buf.str());
    }
  }
  sys.build_trainables();
  sys.codec.params().restore(store.arrays);
  sys.mod_store.restore(store.arrays);
  sys.wmd->params().restore(store.arrays);
  sys.proxy.params().restore(store.arrays);
  auto meta = store.meta;
  if (meta.count("iterations")) sys.iterations_done = std::stoll(meta.at("iterations"));
  if (meta.count("codec_val_psnr")) sys.codec.validation_psnr = std::stod(meta.at("codec_val_psnr"));
  if (meta.count("proxy_heldout_psnr")) sys.proxy.heldout_psnr = std::stod(meta.at("proxy_heldout_psnr"));
  // the stored selection must match what the importance report reproduces
  if (meta.count("selected_layers")) {
    std::string sel = meta.at("selected_layers");
    std::vector<int> ids;
    std::replace(sel.begin(), sel.end(), ',', ' ');
    std::istringstream ss(sel);
    int v;
    while (ss >> v) ids.push_back(v);
    require(ids == sys.selected, "checkpoint: selected layers do not match the importance report");
  }
  return sys;
}

// Writes the per-run manifest required of every pipeline run.
inline void write_run_manifest(const std::string& dir, const TrainConfig& cfg,
                               const std::string& command) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream f(fs::path(dir) / "run_manifest.txt", std::ios::trunc);
  f << "version " << kVersion << "\n";
  f << "command " << command << "\n";
  f << "config_hash " << cfg.to_config().hash() << "\n";
  f << "seed " << cfg.seed << "\n";
  f << "deterministic " << (cfg.deterministic ? "true" : "false") << "\n";
}

}  // namespace lvmark::pipeline
