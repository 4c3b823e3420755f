#pragma once

#include "lvmark/pipeline.hpp"

namespace lvmark::pipeline {

// ---------------------------------------------------------------------------
// Ablation sweeps: run the train/eval pipeline across one swept variable
// with shared seeds and emit a comparison table.
// ---------------------------------------------------------------------------

struct SweepRow {
  std::string variant;
  double raw_accuracy = 0;      // clean
  double payload_accuracy = 0;
  double psnr = 0;              // vs unmodulated output
  double attacked_accuracy = std::numeric_limits<double>::quiet_NaN();  // domain sweep
};

struct SweepReport {
  std::string kind;
  std::vector<SweepRow> rows;

  std::string csv() const {
    std::ostringstream os;
    os << "variant,raw_accuracy,payload_accuracy,psnr,attacked_accuracy\n";
    for (const auto& r : rows) {
      os << r.variant << ',' << r.raw_accuracy << ',' << r.payload_accuracy << ',' << r.psnr << ',';
      if (!std::isnan(r.attacked_accuracy)) os << r.attacked_accuracy;
      os << '\n';
    }
    return os.str();
  }
};

// Spearman rank correlation (ties broken by index; inputs here are distinct).
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  require(n == y.size() && n >= 2, "spearman: need two equal-length series");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) r[idx[i]] = static_cast<double>(i);
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double num = 0, dx = 0, dy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx == 0 || dy == 0) return 0;
  return num / std::sqrt(dx * dy);
}

namespace detail {

// One complete desk-scale run: pretrain reuse is the caller's job, so each
// sweep trains its own small system from the shared base artifacts.
inline System sweep_run(const TrainConfig& cfg, const System& base, bool reuse_proxy = true) {
  System sys(cfg);
  // share the pretrained codec and importance artifacts
  sys.codec.params().restore(base.codec.params().snapshot());
  sys.codec.validation_psnr = base.codec.validation_psnr;
  sys.importance = base.importance;
  if (reuse_proxy) {
    sys.proxy.params().restore(base.proxy.params().snapshot());
    sys.proxy.heldout_psnr = base.proxy.heldout_psnr;
  }
  sys.build_trainables();
  train(sys);
  return sys;
}

inline SweepRow eval_row(System& sys, const std::string& variant, bool with_codec_attack) {
  EvaluateOptions opts;
  opts.attacks = {"none"};
  if (with_codec_attack) opts.attacks.push_back("h264_sim:24");
  opts.model_attacks = false;
  opts.message_count = 50;
  opts.quality_messages = 8;
  const auto rep = evaluate(sys, opts);
  SweepRow row;
  row.variant = variant;
  row.raw_accuracy = rep.rows[0].raw_accuracy;
  row.payload_accuracy = rep.rows[0].payload_accuracy;
  row.psnr = rep.quality.psnr;
  if (with_codec_attack) row.attacked_accuracy = rep.rows[1].raw_accuracy;
  return row;
}

}  // namespace detail

// kind: modulation_rate | domain_type | loss_type | capacity | frequency_type
inline SweepReport ablation_sweep(const std::string& kind, const TrainConfig& base_cfg,
                                  const System& base_artifacts,
                                  const std::vector<std::string>& variants = {}) {
  SweepReport report;
  report.kind = kind;
  auto run_variant = [&](const std::string& name, const TrainConfig& cfg, bool codec_attack) {
    System sys = detail::sweep_run(cfg, base_artifacts);
    report.rows.push_back(detail::eval_row(sys, name, codec_attack));
  };

  if (kind == "modulation_rate") {
    std::vector<double> rates = {0, 25, 50, 75, 100};
    if (!variants.empty()) {
      rates.clear();
      for (const auto& v : variants) rates.push_back(std::stod(v));
    }
    for (double k : rates) {
      TrainConfig cfg = base_cfg;
      cfg.modulation_rate = k;
      run_variant(std::to_string(static_cast<int>(k)) + "%", cfg, false);
      // PSNR sentinel: k=0 leaves the output bit-identical to the base
    }
  } else if (kind == "domain_type") {
    std::vector<std::string> domains = {"rgb_only", "low_freq+rgb"};
    if (!variants.empty()) domains = variants;
    for (const auto& d : domains) {
      TrainConfig cfg = base_cfg;
      cfg.domain = d;
      run_variant(d, cfg, true);
    }
  } else if (kind == "loss_type") {
    std::vector<std::string> combos = {"vgg", "vgg+mae", "vgg+patch"};
    if (!variants.empty()) combos = variants;
    for (const auto& combo : combos) {
      TrainConfig cfg = base_cfg;
      cfg.use_vgg = combo.find("vgg") != std::string::npos;
      cfg.use_mae = combo.find("mae") != std::string::npos;
      cfg.use_patch = combo.find("patch") != std::string::npos;
      run_variant(combo, cfg, false);
    }
  } else if (kind == "capacity") {
    std::vector<int> caps = {32, 512};
    if (!variants.empty()) {
      caps.clear();
      for (const auto& v : variants) caps.push_back(std::stoi(v));
    }
    for (int n : caps) {
      TrainConfig cfg = base_cfg;
      cfg.channel_bits = n;
      cfg.bch_m = 0;
      cfg.bch_t = 0;
      run_variant(std::to_string(n) + "bit", cfg, false);
    }
  } else if (kind == "frequency_type") {
    std::vector<std::string> kinds = {"dwt3", "dwt2"};
    if (!variants.empty()) kinds = variants;
    for (const auto& f : kinds) {
      TrainConfig cfg = base_cfg;
      cfg.freq_transform = f;
      run_variant(f, cfg, true);
    }
  } else {
    throw InvalidArgument("ablation_sweep: unknown kind '" + kind +
                          "' (modulation_rate, domain_type, loss_type, capacity, frequency_type)");
  }
  return report;
}

}  // namespace lvmark::pipeline
