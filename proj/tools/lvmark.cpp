// lvmark command-line tool: pretrain-codec, importance-scan, train-proxy,
// train, embed, extract, evaluate, ablate, report.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "lvmark/ablation.hpp"

using namespace lvmark;
namespace fs = std::filesystem;

namespace {

pipeline::TrainConfig load_config(const std::string& path) {
  if (path.empty()) return pipeline::TrainConfig{};
  return pipeline::TrainConfig::from_config(config::Config::parse_file(path));
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

int cmd_pretrain(const std::string& config_path, const std::string& out, int iterations, bool quiet) {
  pipeline::System sys(load_config(config_path));
  pipeline::write_run_manifest(out, sys.cfg, "pretrain-codec");
  const auto res = pipeline::pretrain_codec(sys, iterations, 1e-3, !quiet);
  pipeline::run_importance_scan(sys);
  sys.build_trainables();
  pipeline::save_system(out, sys);
  std::cout << "codec pretrained: validation psnr " << res.val_psnr << " dB -> " << out << "\n";
  return 0;
}

int cmd_scan(const std::string& ckpt) {
  auto sys = pipeline::load_system(ckpt);
  pipeline::run_importance_scan(sys);
  const auto csv = modulation::importance_csv(sys.importance);
  write_text(fs::path(ckpt) / "importance.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_train_proxy(const std::string& ckpt, int iterations, bool quiet) {
  auto sys = pipeline::load_system(ckpt);
  const auto res = pipeline::train_proxy(sys, iterations, !quiet);
  pipeline::save_system(ckpt, sys);
  std::cout << "proxy held-out psnr vs simulator at crf 24: " << res.heldout_psnr_crf24 << " dB\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out, const std::string& from,
              int pretrain_iters, int proxy_iters, bool quiet) {
  pipeline::System sys = [&] {
    if (!from.empty()) {
      auto s = pipeline::load_system(from);
      if (!config_path.empty()) {
        // a fresh config replaces the training knobs but keeps the artifacts
        auto cfg = load_config(config_path);
        pipeline::System fresh(cfg);
        fresh.codec.params().restore(s.codec.params().snapshot());
        fresh.codec.validation_psnr = s.codec.validation_psnr;
        fresh.proxy.params().restore(s.proxy.params().snapshot());
        fresh.proxy.heldout_psnr = s.proxy.heldout_psnr;
        fresh.importance = s.importance;
        fresh.build_trainables();
        return fresh;
      }
      return s;
    }
    pipeline::System s(load_config(config_path));
    if (!quiet) std::fprintf(stderr, "[train] pretraining codec (%d iters)\n", pretrain_iters);
    pipeline::pretrain_codec(s, pretrain_iters, 1e-3, !quiet);
    if (!quiet) std::fprintf(stderr, "[train] importance scan\n");
    pipeline::run_importance_scan(s);
    if (!quiet) std::fprintf(stderr, "[train] codec proxy (%d iters)\n", proxy_iters);
    pipeline::train_proxy(s, proxy_iters, !quiet);
    s.build_trainables();
    return s;
  }();
  sys.cfg.verbose = !quiet;
  pipeline::write_run_manifest(out, sys.cfg, "train");
  const auto res = pipeline::train(sys);
  pipeline::save_system(out, sys);
  std::cout << "trained " << sys.iterations_done << " iterations"
            << (res.aborted ? " (aborted on non-finite loss)" : "") << " -> " << out << "\n";
  return res.aborted ? 1 : 0;
}

int cmd_embed(const std::string& ckpt, const std::string& payload, const std::string& in,
              const std::string& out, std::uint64_t clip_seed) {
  auto sys = pipeline::load_system(ckpt);
  msgcodec::Bits bits = msgcodec::bits_from_string(payload);
  media::VideoClip source;
  if (!in.empty()) {
    source = media::load_clip(in);
  } else {
    media::SyntheticSceneSpec spec;
    spec.seed = clip_seed;
    spec.frames = sys.cfg.frames;
    spec.height = sys.cfg.height;
    spec.width = sys.cfg.width;
    source = media::generate_synthetic_clip(spec);
  }
  const auto wm = pipeline::embed(sys, bits, source);
  media::save_clip(wm, out);
  std::cout << "embedded " << bits.size() << " payload bits (" << sys.channel->channel_bits()
            << "-bit codeword) -> " << out << "\n";
  return 0;
}

int cmd_extract(const std::string& ckpt, const std::string& in) {
  auto sys = pipeline::load_system(ckpt);
  const auto res = pipeline::extract(sys, media::load_clip(in));
  std::cout << "raw_bits " << msgcodec::bits_to_string(res.raw_bits) << "\n";
  if (res.decoded.ok) {
    std::cout << "payload " << msgcodec::bits_to_string(res.decoded.payload) << "\n";
    std::cout << "corrected_bits " << res.decoded.corrected << "\n";
  } else {
    std::cout << "payload DECODE-FAILED (" << res.decoded.failed_codewords
              << " codewords outside correction radius)\n";
  }
  return res.decoded.ok ? 0 : 2;
}

int cmd_evaluate(const std::string& ckpt, const std::string& attacks_file, const std::string& out,
                 int messages, bool no_model_attacks, bool quiet) {
  auto sys = pipeline::load_system(ckpt);
  pipeline::EvaluateOptions opts;
  opts.message_count = messages;
  opts.model_attacks = !no_model_attacks;
  opts.verbose = !quiet;
  if (!attacks_file.empty()) {
    std::ifstream f(attacks_file);
    if (!f) throw std::runtime_error("cannot open attacks file " + attacks_file);
    std::string line;
    while (std::getline(f, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      while (!line.empty() && (line.back() == ' ' || line.back() == '\r')) line.pop_back();
      if (!line.empty()) opts.attacks.push_back(line);
    }
  }
  const auto rep = pipeline::evaluate(sys, opts);
  if (!out.empty()) {
    write_text(fs::path(out) / "evaluation.csv", rep.csv());
    write_text(fs::path(out) / "summary.txt", rep.summary());
    pipeline::write_run_manifest(out, sys.cfg, "evaluate");
  }
  std::cout << rep.summary();
  return 0;
}

int cmd_ablate(const std::string& ckpt, const std::string& kind, const std::string& out,
               int iterations, const std::vector<std::string>& variants) {
  auto base = pipeline::load_system(ckpt);
  pipeline::TrainConfig cfg = base.cfg;
  if (iterations > 0) cfg.iterations = iterations;
  const auto rep = pipeline::ablation_sweep(kind, cfg, base, variants);
  if (!out.empty()) {
    write_text(fs::path(out) / ("ablation_" + kind + ".csv"), rep.csv());
    pipeline::write_run_manifest(out, cfg, "ablate " + kind);
  }
  std::cout << rep.csv();
  return 0;
}

int cmd_report(const std::string& dir) {
  // renders a saved evaluation directory back to stdout
  const auto summary = fs::path(dir) / "summary.txt";
  const auto csv = fs::path(dir) / "evaluation.csv";
  bool any = false;
  for (const auto& p : {summary, csv}) {
    std::ifstream f(p);
    if (!f) continue;
    any = true;
    std::cout << "== " << p.filename().string() << " ==\n" << f.rdbuf() << "\n";
  }
  if (!any) {
    std::cerr << "no evaluation.csv / summary.txt under " << dir << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LVMark-style video watermarking: importance-modulated latent decoder + "
               "spatio-temporal watermark decoder"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress progress logging");

  std::string config_path, out_dir, ckpt, in_path, payload, attacks_file, kind;
  std::vector<std::string> variants;
  int iterations = 0, messages = 100;
  std::uint64_t clip_seed = 1;
  bool no_model_attacks = false;

  auto* pre = app.add_subcommand("pretrain-codec", "train the latent autoencoder and scan layer importance");
  pre->add_option("-c,--config", config_path, "key-value config file");
  pre->add_option("-o,--out", out_dir, "checkpoint directory")->required();
  int pre_iters = 2000;
  pre->add_option("--iterations", pre_iters, "pretraining iterations (default 2000)");

  auto* scan = app.add_subcommand("importance-scan", "recompute the per-layer importance report");
  scan->add_option("ckpt", ckpt, "checkpoint directory")->required();

  auto* proxy = app.add_subcommand("train-proxy", "fit the differentiable H.264 proxy to the simulator");
  proxy->add_option("ckpt", ckpt, "checkpoint directory")->required();
  int proxy_iters = 1200;
  proxy->add_option("--iterations", proxy_iters, "proxy training iterations");

  auto* train = app.add_subcommand("train", "joint watermark training (runs all stages when starting fresh)");
  train->add_option("-c,--config", config_path, "key-value config file");
  train->add_option("-o,--out", out_dir, "output checkpoint directory")->required();
  std::string from;
  train->add_option("--from", from, "start from an existing checkpoint (reuses codec/proxy/scan)");
  int train_pre_iters = 2000, train_proxy_iters = 1200;
  train->add_option("--pretrain-iterations", train_pre_iters, "codec pretraining iterations");
  train->add_option("--proxy-iterations", train_proxy_iters, "proxy training iterations");

  auto* embed = app.add_subcommand("embed", "embed a payload into a clip");
  embed->add_option("ckpt", ckpt, "checkpoint directory")->required();
  embed->add_option("--payload", payload, "payload bits as a 0/1 string")->required();
  embed->add_option("--in", in_path, "source clip (.nvv or PNG folder); omitted = synthetic");
  embed->add_option("--clip-seed", clip_seed, "synthetic source seed when --in is omitted");
  embed->add_option("--out", out_dir, "output clip path (.nvv)")->required();

  auto* extract = app.add_subcommand("extract", "extract and decode the watermark from a clip");
  extract->add_option("ckpt", ckpt, "checkpoint directory")->required();
  extract->add_option("--in", in_path, "watermarked clip (.nvv or PNG folder)")->required();

  auto* evaluate = app.add_subcommand("evaluate", "run the attack matrix over seeded messages");
  evaluate->add_option("ckpt", ckpt, "checkpoint directory")->required();
  evaluate->add_option("--attacks", attacks_file, "file with one distortion spec per line");
  evaluate->add_option("--out", out_dir, "report directory (evaluation.csv + summary.txt)");
  evaluate->add_option("--messages", messages, "seeded message count (default 100)");
  evaluate->add_flag("--no-model-attacks", no_model_attacks, "skip weight-level attacks");

  auto* ablate = app.add_subcommand("ablate", "ablation sweep re-running train/eval per variant");
  ablate->add_option("ckpt", ckpt, "base checkpoint (codec/proxy/scan artifacts)")->required();
  ablate->add_option("--kind", kind,
                     "modulation_rate | domain_type | loss_type | capacity | frequency_type")
      ->required();
  ablate->add_option("--iterations", iterations, "override per-variant training iterations");
  ablate->add_option("--variants", variants, "explicit variant list");
  ablate->add_option("--out", out_dir, "report directory");

  auto* report = app.add_subcommand("report", "print a saved evaluation report");
  report->add_option("dir", ckpt, "report directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (pre->parsed()) return cmd_pretrain(config_path, out_dir, pre_iters, quiet);
    if (scan->parsed()) return cmd_scan(ckpt);
    if (proxy->parsed()) return cmd_train_proxy(ckpt, proxy_iters, quiet);
    if (train->parsed())
      return cmd_train(config_path, out_dir, from, train_pre_iters, train_proxy_iters, quiet);
    if (embed->parsed()) return cmd_embed(ckpt, payload, in_path, out_dir, clip_seed);
    if (extract->parsed()) return cmd_extract(ckpt, in_path);
    if (evaluate->parsed())
      return cmd_evaluate(ckpt, attacks_file, out_dir, messages, no_model_attacks, quiet);
    if (ablate->parsed()) return cmd_ablate(ckpt, kind, out_dir, iterations, variants);
    if (report->parsed()) return cmd_report(ckpt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
