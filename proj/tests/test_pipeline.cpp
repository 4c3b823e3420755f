#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "lvmark/ablation.hpp"
#include "helpers.hpp"

using namespace lvmark;
namespace fs = std::filesystem;

namespace {

pipeline::TrainConfig tiny_config() {
  pipeline::TrainConfig cfg;
  cfg.height = cfg.width = 32;
  cfg.frames = 4;
  cfg.iterations = 6;
  cfg.batch = 2;
  cfg.dataset_size = 8;
  cfg.val_size = 2;
  cfg.eval_size = 4;
  cfg.scan_trials = 1;
  cfg.scan_probes = 2;
  cfg.feat_ch = 16;
  cfg.heads = 4;
  cfg.ffn_hidden = 32;
  cfg.seed = 21;
  // 4-frame clips: the default pool's frame_average:6 window would not fit
  cfg.pool = {"none", "crop:0.5", "blur:1.0", "jpeg:50", "h264_proxy:24",
              "frame_swap:0.5", "frame_drop:0.25", "frame_average:3"};
  return cfg;
}

// Shared tiny system: pretrain + scan once for the whole file.
pipeline::System& tiny_system() {
  static pipeline::System* sys = [] {
    auto* s = new pipeline::System(tiny_config());
    pipeline::pretrain_codec(*s, 20);
    pipeline::run_importance_scan(*s);
    s->build_trainables();
    return s;
  }();
  return *sys;
}

}  // namespace

TEST_CASE("config round-trips through the key-value format and hashes stably") {
  auto cfg = tiny_config();
  cfg.domain = "high_freq+rgb";
  cfg.weights.patch = 5.5;
  const auto text = cfg.to_config().canonical();
  const auto back = pipeline::TrainConfig::from_config(config::Config::parse(text));
  REQUIRE(back.to_config().canonical() == text);
  REQUIRE(back.domain == "high_freq+rgb");
  REQUIRE(back.weights.patch == 5.5);
  REQUIRE(config::Config::parse(text).hash() == config::Config::parse(text).hash());

  // parser details: comments, whitespace, errors
  auto c = config::Config::parse("# comment\n a = 1 \nb=hello # trail\n");
  REQUIRE(c.get_int("a", 0) == 1);
  REQUIRE(c.get("b", "") == "hello");
  REQUIRE_THROWS_AS(config::Config::parse("novalue\n"), InvalidArgument);
  REQUIRE_THROWS_AS(c.get_int("b", 0), InvalidArgument);
}

TEST_CASE("checkpoint arrays round-trip bit-exactly") {
  const auto dir = fs::temp_directory_path() / "lvmark_ckpt_test";
  fs::remove_all(dir);
  checkpoint::Store store;
  Rng rng(3);
  store.arrays["a.w"] = nn::random_uniform<float>({3, 4, 5}, rng);
  store.arrays["b"] = nn::random_uniform<float>({7}, rng);
  store.meta["iterations"] = "42";
  checkpoint::save(dir.string(), store);
  const auto loaded = checkpoint::load(dir.string());
  REQUIRE(loaded.meta.at("iterations") == "42");
  REQUIRE(loaded.arrays.at("a.w").shape() == std::vector<int>{3, 4, 5});
  REQUIRE(loaded.arrays.at("a.w").vec() == store.arrays.at("a.w").vec());
  REQUIRE(loaded.arrays.at("b").vec() == store.arrays.at("b").vec());
  fs::remove_all(dir);
}

TEST_CASE("deterministic mode: identical configs give identical loss traces") {
  auto cfg = tiny_config();
  auto run = [&cfg] {
    pipeline::System sys(cfg);
    pipeline::pretrain_codec(sys, 10);
    pipeline::run_importance_scan(sys);
    sys.build_trainables();
    return pipeline::train(sys).loss_trace;
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == 6);
  REQUIRE(a == b);  // bit-exact
}

TEST_CASE("training moves the trainables but never the frozen codec") {
  auto cfg = tiny_config();
  pipeline::System sys(cfg);
  pipeline::pretrain_codec(sys, 10);
  pipeline::run_importance_scan(sys);
  sys.build_trainables();
  const auto codec_before = sys.codec.params().snapshot();
  const auto mod_before = sys.mod_store.snapshot();
  pipeline::train(sys);
  REQUIRE(sys.codec.params().snapshot() == codec_before);  // bit-identical base
  REQUIRE(sys.mod_store.snapshot() != mod_before);
}

TEST_CASE("embed: payload checks, determinism, distinct payloads separate") {
  auto& sys = tiny_system();
  const auto clip = media::load_entry(sys.eval_manifest(), 0);
  const auto p1 = msgcodec::sample_message(sys.channel->payload_bits(), 1);
  const auto p2 = msgcodec::sample_message(sys.channel->payload_bits(), 2);
  const auto w1 = pipeline::embed(sys, p1, clip);
  const auto w1b = pipeline::embed(sys, p1, clip);
  REQUIRE(w1.data == w1b.data);  // deterministic
  const auto w2 = pipeline::embed(sys, p2, clip);
  REQUIRE(max_abs_diff(media::clip_to_tensor(w1), media::clip_to_tensor(w2)) > 0.0);
  REQUIRE_THROWS_AS(pipeline::embed(sys, msgcodec::Bits(3, 0), clip), InvalidArgument);
}

TEST_CASE("extract returns raw bits of channel width and a decode status") {
  auto& sys = tiny_system();
  const auto clip = media::load_entry(sys.eval_manifest(), 1);
  const auto res = pipeline::extract(sys, clip);
  REQUIRE(res.raw_bits.size() == 32);
  // decode failure is a status, never an exception
  REQUIRE((res.decoded.ok || res.decoded.failed_codewords > 0));
  media::VideoClip wrong(4, 16, 16);
  REQUIRE_THROWS_AS(pipeline::extract(sys, wrong), InvalidArgument);
}

TEST_CASE("evaluate produces one row per configured attack; none row is clean accuracy") {
  auto& sys = tiny_system();
  pipeline::EvaluateOptions opts;
  opts.attacks = {"none", "blur:1.0", "frame_swap:0.5"};
  opts.model_attacks = false;
  opts.message_count = 6;
  opts.quality_messages = 2;
  const auto rep = pipeline::evaluate(sys, opts);
  REQUIRE(rep.rows.size() == 3);
  REQUIRE(rep.rows[0].label == "none");
  REQUIRE(rep.find("blur:1") != nullptr);
  for (const auto& r : rep.rows) REQUIRE(r.messages == 6);
  // quality block is populated
  REQUIRE(rep.quality.psnr > 0.0);
  REQUIRE(std::isfinite(rep.quality.ssim));
  // CSV has a header and one line per row
  const auto csv = rep.csv();
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 4);

  REQUIRE_THROWS_AS([&] {
    pipeline::EvaluateOptions bad;
    bad.attacks = {"sharpen:2"};
    bad.message_count = 2;
    pipeline::evaluate(sys, bad);
  }(), InvalidArgument);
}

TEST_CASE("model attacks report accuracy plus PSNR; retrain steps=0 equals clean") {
  auto& sys = tiny_system();
  pipeline::EvaluateOptions opts;
  opts.attacks = {"none"};
  opts.model_attacks = false;
  opts.message_count = 4;
  opts.quality_messages = 2;
  const auto rep = pipeline::evaluate(sys, opts);
  const auto cases = pipeline::detail::prepare_cases(sys, 4);
  const auto gauss = pipeline::evaluate_model_attack(sys, cases, pipeline::ModelAttack::kGaussian, 0.05, 0.2);
  REQUIRE(std::isfinite(gauss.psnr));
  const auto zero_retrain = pipeline::retrain_attack(sys, cases, 0, 9, 4);
  REQUIRE(zero_retrain.raw_accuracy == Catch::Approx(rep.rows[0].raw_accuracy).margin(1e-9));
  REQUIRE(zero_retrain.label == "model_retrain:0");
}

TEST_CASE("lambda_msg = 0 keeps bit accuracy at chance") {
  auto cfg = tiny_config();
  cfg.weights.msg = 0.0;
  cfg.iterations = 40;
  pipeline::System sys(cfg);
  pipeline::pretrain_codec(sys, 10);
  pipeline::run_importance_scan(sys);
  sys.build_trainables();
  pipeline::train(sys);
  pipeline::EvaluateOptions opts;
  opts.attacks = {"none"};
  opts.model_attacks = false;
  opts.message_count = 50;
  opts.quality_messages = 1;
  const auto rep = pipeline::evaluate(sys, opts);
  REQUIRE(rep.rows[0].raw_accuracy >= 42.0);
  REQUIRE(rep.rows[0].raw_accuracy <= 58.0);
}

TEST_CASE("system save / load reproduces evaluation exactly") {
  auto& sys = tiny_system();
  const auto dir = fs::temp_directory_path() / "lvmark_sys_ckpt";
  fs::remove_all(dir);
  pipeline::save_system(dir.string(), sys);
  auto loaded = pipeline::load_system(dir.string());

  pipeline::EvaluateOptions opts;
  opts.attacks = {"none", "crop:0.5"};
  opts.model_attacks = false;
  opts.message_count = 4;
  opts.quality_messages = 2;
  const auto a = pipeline::evaluate(sys, opts);
  const auto b = pipeline::evaluate(loaded, opts);
  REQUIRE(a.csv() == b.csv());
  REQUIRE(a.quality.psnr == b.quality.psnr);
  fs::remove_all(dir);
}

TEST_CASE("run manifest records version, hash, and seeds") {
  const auto dir = fs::temp_directory_path() / "lvmark_manifest";
  fs::remove_all(dir);
  const auto cfg = tiny_config();
  pipeline::write_run_manifest(dir.string(), cfg, "unit-test");
  std::ifstream f(dir / "run_manifest.txt");
  std::stringstream buf;
  buf << f.rdbuf();
  const auto text = buf.str();
  REQUIRE(text.find("version lvmark") != std::string::npos);
  REQUIRE(text.find("config_hash " + std::to_string(cfg.to_config().hash())) != std::string::npos);
  REQUIRE(text.find("seed 21") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("spearman rank correlation on monotone and anti-monotone data") {
  REQUIRE(pipeline::spearman({1, 2, 3, 4, 5}, {10, 20, 30, 40, 50}) == Catch::Approx(1.0));
  REQUIRE(pipeline::spearman({1, 2, 3, 4, 5}, {50, 40, 30, 20, 10}) == Catch::Approx(-1.0));
  REQUIRE(std::abs(pipeline::spearman({1, 2, 3, 4}, {7, 1, 9, 3})) < 1.0);
}

TEST_CASE("ablation sweep machinery runs each kind with tiny budgets") {
  auto cfg = tiny_config();
  cfg.iterations = 2;
  pipeline::System base(cfg);
  pipeline::pretrain_codec(base, 6);
  pipeline::run_importance_scan(base);
  base.build_trainables();

  const auto mod = pipeline::ablation_sweep("modulation_rate", cfg, base, {"0", "50"});
  REQUIRE(mod.rows.size() == 2);
  REQUIRE(mod.rows[0].variant == "0%");
  const auto dom = pipeline::ablation_sweep("domain_type", cfg, base, {"rgb_only"});
  REQUIRE(dom.rows.size() == 1);
  REQUIRE_FALSE(std::isnan(dom.rows[0].attacked_accuracy));
  const auto cap = pipeline::ablation_sweep("capacity", cfg, base, {"32"});
  REQUIRE(cap.rows[0].variant == "32bit");
  REQUIRE_THROWS_AS(pipeline::ablation_sweep("nonsense", cfg, base), InvalidArgument);
  // csv emission
  REQUIRE(mod.csv().find("variant,raw_accuracy") == 0);
}
