#pragma once

#include <algorithm>
#include <bit>

#include "lvmark/latentcodec.hpp"
#include "lvmark/msgcodec.hpp"

namespace lvmark::modulation {

// ---------------------------------------------------------------------------
// Importance scan: perturb one decoder layer at a time with Gaussian weight
// noise and measure the perceptual impact of the perturbation on decoded
// probes. Low-impact layers are the modulation targets.
// ---------------------------------------------------------------------------

struct LayerImportance {
  int layer_id = 0;
  std::string kind;
  double score = 0;  // mean perceptual-proxy impact, >= 0
  int trials = 0;
  double variance = 0;
};

inline std::vector<LayerImportance> scan_layer_importance(
    const latentcodec::LatentCodec& codec, const std::vector<media::VideoClip>& probes,
    double noise_variance, int trials, std::uint64_t seed) {
  require(!probes.empty(), "importance scan: no probe clips");
  require(noise_variance >= 0.0, "importance scan: negative noise variance");
  require(trials >= 1, "importance scan: trials must be >= 1");
  const auto layers = codec.decoder_layers();
  const auto base = codec.decoder_base_weights();
  const double stddev = std::sqrt(noise_variance);

  std::vector<nn::Tensor> latents, clean;
  for (const auto& p : probes) {
    latents.push_back(codec.encode(media::clip_to_tensor(p)));
    clean.push_back(codec.decode(latents.back()));
  }

  std::vector<LayerImportance> report;
  for (const auto& info : layers) {
    LayerImportance li;
    li.layer_id = info.id;
    li.kind = info.kind;
    li.trials = trials;
    li.variance = noise_variance;
    double acc = 0;
    for (int t = 0; t < trials; ++t) {
      Rng rng(derive_seed(seed, 0x5ca0 + static_cast<std::uint64_t>(info.id), static_cast<std::uint64_t>(t)));
      std::vector<nn::Tensor> weights = base;
      auto& w = weights[static_cast<std::size_t>(info.id)];
      for (std::int64_t i = 0; i < w.numel(); ++i)
        w[i] = static_cast<float>(w[i] + rng.normal(0.0, stddev));
      for (std::size_t p = 0; p < probes.size(); ++p) {
        const nn::Tensor out = codec.decode_with_weights(latents[p], weights);
        acc += metrics::perceptual_proxy_tensors(out, clean[p]);
      }
    }
    li.score = acc / static_cast<double>(trials * static_cast<int>(probes.size()));
    report.push_back(li);
  }
  return report;
}

// The floor(k% * layer_count) layers with the LOWEST impact scores; ties are
// broken by ascending layer id.
inline std::vector<int> select_layers(const std::vector<LayerImportance>& report, double k_percent) {
  require(k_percent >= 0.0 && k_percent <= 100.0, "select_layers: k must be in [0, 100]");
  const int count = static_cast<int>(report.size());
  const int take = static_cast<int>(std::floor(k_percent / 100.0 * count));
  std::vector<const LayerImportance*> sorted;
  for (const auto& r : report) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](const LayerImportance* a, const LayerImportance* b) {
    if (a->score != b->score) return a->score < b->score;
    return a->layer_id < b->layer_id;
  });
  std::vector<int> ids;
  for (int i = 0; i < take; ++i) ids.push_back(sorted[static_cast<std::size_t>(i)]->layer_id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline std::string importance_csv(const std::vector<LayerImportance>& report) {
  std::string out = "layer_id,kind,score,trials,variance\n";
  char line[160];
  for (const auto& r : report) {
    std::snprintf(line, sizeof(line), "%d,%s,%.9g,%d,%.9g\n", r.layer_id, r.kind.c_str(), r.score,
                  r.trials, r.variance);
    out += line;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mapping network M(m): two fully connected layers, bits presented as +-1.
// ---------------------------------------------------------------------------

struct MappingNetwork {
  int d_in = 0, hidden = 256, d_out = 128;
  nn::Var w1, b1, w2, b2;

  // Initialised so that m' starts as the +-1 bits replicated across d_out
  // (rows i / d_in+i of the first layer select +-bit_i; the second layer
  // recombines relu(x) - relu(-x) = x), with small noise everywhere. This
  // keeps per-bit modulation directions separable from the first step while
  // remaining fully trainable.
  static MappingNetwork create(nn::ParamStore& store, int d_in, int hidden, int d_out, Rng& rng) {
    MappingNetwork net;
    net.d_in = d_in;
    net.hidden = std::max(hidden, 2 * d_in);
    net.d_out = d_out;
    nn::Tensor w1 = nn::random_normal<float>({net.hidden, d_in}, rng, 0.0, 0.02);
    for (int i = 0; i < d_in; ++i) {
      w1[static_cast<std::int64_t>(i) * d_in + i] += 1.0f;
      w1[static_cast<std::int64_t>(d_in + i) * d_in + i] += -1.0f;
    }
    nn::Tensor w2 = nn::random_normal<float>({d_out, net.hidden}, rng, 0.0, 0.02);
    for (int j = 0; j < d_out; ++j) {
      const int i = j % d_in;
      w2[static_cast<std::int64_t>(j) * net.hidden + i] += 1.0f;
      w2[static_cast<std::int64_t>(j) * net.hidden + d_in + i] += -1.0f;
    }
    net.w1 = store.add("map.w1", std::move(w1));
    net.b1 = store.add("map.b1", nn::Tensor({net.hidden}));
    net.w2 = store.add("map.w2", std::move(w2));
    net.b2 = store.add("map.b2", nn::Tensor({d_out}));
    return net;
  }

  static MappingNetwork from_store(const nn::ParamStore& store) {
    MappingNetwork net;
    net.w1 = store.find("map.w1");
    net.b1 = store.find("map.b1");
    net.w2 = store.find("map.w2");
    net.b2 = store.find("map.b2");
    net.hidden = net.w1->val.dim(0);
    net.d_in = net.w1->val.dim(1);
    net.d_out = net.w2->val.dim(0);
    return net;
  }

  // bits -> {-1,+1} -> FC -> relu -> FC, output length d_out
  nn::Var forward(const msgcodec::Bits& bits) const {
    require(static_cast<int>(bits.size()) == d_in,
            "map_message: message length " + std::to_string(bits.size()) + " != d_m=" +
                std::to_string(d_in));
    nn::Tensor m({1, d_in});
    for (int i = 0; i < d_in; ++i) m[i] = bits[static_cast<std::size_t>(i)] ? 1.0f : -1.0f;
    nn::Var h = nn::relu(nn::linear(nn::constant(m), w1, b1));
    return nn::reshape(nn::linear(h, w2, b2), {d_out});
  }
};

// ---------------------------------------------------------------------------
// ModulationSet: per selected decoder layer, a dense map FC^(i) from the
// mapped message to that layer's input-channel width, plus a learnable
// scalar scale/shift pair. modulate() applies
//   w_mod = w o ( (FC(m') - mu) / (sigma + eps) * gamma + beta )
// broadcast along the input-channel axis; unselected layers pass through
// bit-identically and base weights are never mutated.
// ---------------------------------------------------------------------------

struct ModulationSet {
  std::vector<int> selected;  // sorted decoder layer ids
  std::vector<nn::Var> fc_w, fc_b;
  std::vector<nn::Var> gamma, beta;
  float eps = 1e-5f;

  // Sylvester-Hadamard entry: +-1, rows/columns mutually orthogonal.
  static float hadamard(int i, int j) {
    return std::popcount(static_cast<unsigned>(i) & static_cast<unsigned>(j)) % 2 ? -1.0f : 1.0f;
  }

  // FC^(i) columns follow Hadamard rows, offset so consecutive selected
  // layers continue the row cycle: with the replicated +-1 mapped message,
  // each message bit then starts with an orthogonal signature across the
  // joint scale space of all selected layers. Falls back to random init when
  // the message width is not a power of two.
  static ModulationSet create(nn::ParamStore& store,
                              const std::vector<latentcodec::DecoderLayerInfo>& layers,
                              std::vector<int> selected_ids, int d_mprime, float gamma_init,
                              Rng& rng, int message_bits = 0) {
    ModulationSet set;
    std::sort(selected_ids.begin(), selected_ids.end());
    set.selected = std::move(selected_ids);
    const bool pow2 = message_bits > 0 && (message_bits & (message_bits - 1)) == 0;
    int row_offset = 0;
    for (int id : set.selected) {
      const auto& info = layers[static_cast<std::size_t>(id)];
      const std::string p = "mod.fc" + std::to_string(id);
      nn::Tensor w = nn::random_normal<float>({info.input_channels, d_mprime}, rng, 0.0,
                                              pow2 ? 0.01 : std::sqrt(1.0 / d_mprime));
      if (pow2) {
        for (int r = 0; r < info.input_channels; ++r)
          for (int j = 0; j < d_mprime; ++j)
            w[static_cast<std::int64_t>(r) * d_mprime + j] +=
                0.1f * hadamard((row_offset + r) % message_bits, j % message_bits);
        row_offset += info.input_channels;
      }
      set.fc_w.push_back(store.add(p + ".w", std::move(w)));
      set.fc_b.push_back(store.add(p + ".b", nn::Tensor({info.input_channels})));
      set.gamma.push_back(store.add("mod.gamma" + std::to_string(id),
                                    nn::Tensor::scalar(gamma_init)));
      set.beta.push_back(store.add("mod.beta" + std::to_string(id), nn::Tensor::scalar(1.0f)));
    }
    return set;
  }

  static ModulationSet from_store(const nn::ParamStore& store, const std::vector<int>& selected_ids) {
    ModulationSet set;
    set.selected = selected_ids;
    std::sort(set.selected.begin(), set.selected.end());
    for (int id : set.selected) {
      const std::string p = "mod.fc" + std::to_string(id);
      set.fc_w.push_back(store.find(p + ".w"));
      set.fc_b.push_back(store.find(p + ".b"));
      set.gamma.push_back(store.find("mod.gamma" + std::to_string(id)));
      set.beta.push_back(store.find("mod.beta" + std::to_string(id)));
    }
    return set;
  }

  bool is_selected(int id, std::size_t* pos = nullptr) const {
    const auto it = std::lower_bound(selected.begin(), selected.end(), id);
    if (it == selected.end() || *it != id) return false;
    if (pos) *pos = static_cast<std::size_t>(it - selected.begin());
    return true;
  }

  // The per-layer modulation scale vector (length d_D^(i)).
  nn::Var scale_for(std::size_t pos, const nn::Var& mprime) const {
    nn::Var s = nn::reshape(
        nn::linear(nn::reshape(mprime, {1, mprime->val.dim(0)}), fc_w[pos], fc_b[pos]),
        {fc_w[pos]->val.dim(0)});
    nn::Var mu = nn::mean_all(s);
    nn::Var diff = nn::sub(s, mu);
    nn::Var sigma = nn::sqrt_op(nn::mean_all(nn::square(diff)));  // population std
    nn::Var normalized = nn::div(diff, nn::add_const(sigma, eps));
    return nn::add(nn::mul(normalized, gamma[pos]), beta[pos]);
  }
};

// Applies the modulation to a base decoder weight set, returning one Var per
// decoder layer (selected layers modulated, the rest constant pass-through).
inline std::vector<nn::Var> modulate(const std::vector<nn::Tensor>& base_w, const nn::Var& mprime,
                                     const ModulationSet& mod) {
  std::vector<nn::Var> out;
  for (std::size_t id = 0; id < base_w.size(); ++id) {
    std::size_t pos = 0;
    if (mod.is_selected(static_cast<int>(id), &pos)) {
      require(mod.fc_w[pos]->val.dim(0) == base_w[id].dim(1),
              "modulate: FC output width != layer input channels for layer " + std::to_string(id));
      out.push_back(nn::scale_axis1(nn::constant(base_w[id]), mod.scale_for(pos, mprime)));
    } else {
      out.push_back(nn::constant(base_w[id]));
    }
  }
  return out;
}

}  // namespace lvmark::modulation
