#include <catch2/catch_amalgamated.hpp>

#include "lvmark/distortion.hpp"
#include "helpers.hpp"

using namespace lvmark;
using distortion::DistortionSpec;

TEST_CASE("crop: full-area fraction is the identity, seeds fix the window") {
  Rng rng(1);
  auto x = nn::constant(nn::random_uniform<float>({1, 3, 2, 16, 16}, rng, -0.9f, 0.9f));
  REQUIRE(max_abs_diff(distortion::crop(x, 1.0, 5)->val, x->val) <= 1e-6);

  // window arithmetic: floor(64 * sqrt(0.5)) = 45
  REQUIRE(static_cast<int>(std::floor(64 * std::sqrt(0.5))) == 45);

  const auto a = distortion::crop(x, 0.5, 7)->val;
  const auto b = distortion::crop(x, 0.5, 7)->val;
  REQUIRE(a.vec() == b.vec());
  const auto c = distortion::crop(x, 0.5, 8)->val;
  REQUIRE(max_abs_diff(a, c) > 0.0);  // different seed, different offset

  REQUIRE_THROWS_AS(distortion::crop(x, 0.1, 1), InvalidArgument);  // window < 8x8
}

TEST_CASE("rotate: zero angle is identity, shape preserved, small-angle round trip") {
  Rng rng(2);
  auto x = nn::constant(nn::random_uniform<float>({1, 3, 2, 16, 16}, rng, -0.9f, 0.9f));
  REQUIRE(max_abs_diff(distortion::rotate(x, 0.0)->val, x->val) <= 1e-6);
  REQUIRE(distortion::rotate(x, 0.4)->val.shape() == x->val.shape());

  // pi/6 then -pi/6 on a smooth dark-border clip loses only interpolation
  const auto clip = test::vignette_clip(2, 64, 64, 3);
  auto v = nn::constant(media::clip_to_tensor(clip));
  const double angle = 3.14159265358979323846 / 6.0;
  auto round = distortion::rotate(distortion::rotate(v, angle), -angle);
  const auto back = media::tensor_to_clip(round->val);
  REQUIRE(metrics::psnr(clip, back) >= 30.0);

  REQUIRE_THROWS_AS(distortion::rotate(x, 4.0), InvalidArgument);
}

TEST_CASE("gaussian blur: identity at zero, mass preservation, impulse oracle") {
  Rng rng(3);
  auto x = nn::constant(nn::random_uniform<float>({1, 3, 2, 16, 16}, rng, -0.9f, 0.9f));
  REQUIRE(distortion::gaussian_blur(x, 0.0)->val.vec() == x->val.vec());

  nn::Tensor flat({1, 3, 2, 16, 16});
  flat.fill(0.25f);
  const auto blurred = distortion::gaussian_blur(nn::constant(flat), 1.0)->val;
  REQUIRE(max_abs_diff(blurred, flat) <= 1e-6);

  // unit impulse at the centre: output centre equals the kernel centre weight
  nn::Tensor impulse({1, 1, 1, 16, 16});
  impulse[static_cast<std::int64_t>(8) * 16 + 8] = 1.0f;
  const auto k = distortion::gaussian_kernel_1d(1.0);
  const double centre = k[k.size() / 2];
  const auto out = distortion::gaussian_blur(nn::constant(impulse), 1.0)->val;
  REQUIRE(out[static_cast<std::int64_t>(8) * 16 + 8] ==
          Catch::Approx(centre * centre).margin(1e-6));
}

TEST_CASE("jpeg proxy: near-lossless at q100, contraction on reapplication, constant blocks") {
  const auto clip = test::vignette_clip(2, 16, 16, 4);
  auto x = nn::constant(media::clip_to_tensor(clip));
  const auto q100 = distortion::jpeg_proxy(x, 100.0)->val;
  REQUIRE(metrics::psnr(clip, media::tensor_to_clip(q100)) >= 45.0);

  const auto p1 = distortion::jpeg_proxy(x, 50.0)->val;
  const auto p2 = distortion::jpeg_proxy(nn::constant(p1), 50.0)->val;
  const double in_to_p1 = metrics::psnr(clip, media::tensor_to_clip(p1));
  const double p1_to_p2 = metrics::psnr(media::tensor_to_clip(p1), media::tensor_to_clip(p2));
  REQUIRE(p1_to_p2 > in_to_p1);  // the second pass changes less than the first

  nn::Tensor flat({1, 3, 2, 16, 16});
  flat.fill(0.3f);
  const auto fout = distortion::jpeg_proxy(nn::constant(flat), 50.0)->val;
  REQUIRE(static_cast<double>(fout.max()) - fout.min() <= 1e-3);  // output constant
}

TEST_CASE("frame swap: permutation properties") {
  Rng rng(5);
  auto x = nn::constant(nn::random_uniform<float>({1, 3, 16, 8, 8}, rng, -0.9f, 0.9f));
  REQUIRE(distortion::frame_swap(x, 0.0, 3)->val.vec() == x->val.vec());

  const auto perm = distortion::swap_permutation(16, 0.5, 9);
  int displaced = 0;
  for (int i = 0; i < 16; ++i)
    if (perm[static_cast<std::size_t>(i)] != i) ++displaced;
  REQUIRE(displaced == 8);  // ceil(0.5 * 16) frames move

  // frame multiset is preserved for any fraction
  const auto swapped = distortion::frame_swap(x, 0.7, 11)->val;
  auto frame_sum = [](const nn::Tensor& t, int f) {
    double s = 0;
    const std::int64_t hw = 64;
    for (int c = 0; c < 3; ++c)
      for (std::int64_t i = 0; i < hw; ++i)
        s += t[(static_cast<std::int64_t>(c) * 16 + f) * hw + i];
    return s;
  };
  std::vector<double> sums_in, sums_out;
  for (int f = 0; f < 16; ++f) {
    sums_in.push_back(frame_sum(x->val, f));
    sums_out.push_back(frame_sum(swapped, f));
  }
  std::sort(sums_in.begin(), sums_in.end());
  std::sort(sums_out.begin(), sums_out.end());
  for (int f = 0; f < 16; ++f)
    REQUIRE(sums_out[static_cast<std::size_t>(f)] == Catch::Approx(sums_in[static_cast<std::size_t>(f)]).margin(1e-4));
}

TEST_CASE("frame average: identity, static invariance, window arithmetic") {
  Rng rng(6);
  auto x = nn::constant(nn::random_uniform<float>({1, 3, 8, 8, 8}, rng, -0.9f, 0.9f));
  REQUIRE(max_abs_diff(distortion::frame_average(x, 1)->val, x->val) <= 1e-7);

  // static clip unchanged
  nn::Tensor stat({1, 3, 8, 8, 8});
  Rng r2(7);
  for (int c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < 64; ++i) {
      const float v = static_cast<float>(r2.uniform(-0.9, 0.9));
      for (int f = 0; f < 8; ++f) stat[(static_cast<std::int64_t>(c) * 8 + f) * 64 + i] = v;
    }
  REQUIRE(max_abs_diff(distortion::frame_average(nn::constant(stat), 6)->val, stat) <= 1e-6);

  // scalar frames t -> first output frame is the mean of frames [0, 6)
  nn::Tensor ramp({1, 3, 8, 8, 8});
  for (int c = 0; c < 3; ++c)
    for (int f = 0; f < 8; ++f)
      for (std::int64_t i = 0; i < 64; ++i)
        ramp[(static_cast<std::int64_t>(c) * 8 + f) * 64 + i] = 0.1f * f - 0.35f;
  const auto avg = distortion::frame_average(nn::constant(ramp), 6)->val;
  const double expect0 = (0.0 + 0.1 + 0.2 + 0.3 + 0.4 + 0.5) / 6.0 - 0.35;
  REQUIRE(avg[0] == Catch::Approx(expect0).margin(1e-6));
  const double expect7 = 0.1 * 7 - 0.35;  // trailing window [7, 8)
  REQUIRE(avg[static_cast<std::int64_t>(7) * 64] == Catch::Approx(expect7).margin(1e-6));
}

TEST_CASE("frame drop: order-preserving survivors with repeat padding") {
  Rng rng(8);
  auto x = nn::constant(nn::random_uniform<float>({1, 3, 16, 8, 8}, rng, -0.9f, 0.9f));
  REQUIRE(distortion::frame_drop(x, 0.0, 3)->val.vec() == x->val.vec());

  const auto surv = distortion::drop_survivors(16, 0.5, 5);
  REQUIRE(surv.size() == 8);
  for (std::size_t i = 1; i < surv.size(); ++i) REQUIRE(surv[i] > surv[i - 1]);

  // the padded output holds the survivors in order, then repeats the last
  const auto dropped = distortion::frame_drop(x, 0.5, 5)->val;
  REQUIRE(dropped.dim(2) == 16);
  const std::int64_t hw = 64;
  for (int t = 0; t < 16; ++t) {
    const int src = surv[static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(t), surv.size() - 1))];
    for (std::int64_t i = 0; i < hw; ++i)
      REQUIRE(dropped[(static_cast<std::int64_t>(0) * 16 + t) * hw + i] ==
              x->val[(static_cast<std::int64_t>(0) * 16 + src) * hw + i]);
  }

  REQUIRE_THROWS_AS(distortion::frame_drop(x, 0.95, 1), InvalidArgument);
}

TEST_CASE("codec simulator: crf quality ladder and DC preservation") {
  const auto clip = test::vignette_clip(4, 16, 16, 9);
  distortion::CodecSimParams p;
  p.crf = 0;
  REQUIRE(metrics::psnr(clip, distortion::codec_simulate(clip, p)) >= 50.0);

  double prev = std::numeric_limits<double>::infinity();
  for (double crf : {0.0, 12.0, 24.0, 36.0}) {
    p.crf = crf;
    double acc = 0;
    for (std::uint64_t s = 0; s < 3; ++s) {
      const auto c = test::vignette_clip(4, 16, 16, 20 + s);
      acc += metrics::psnr(c, distortion::codec_simulate(c, p));
    }
    acc /= 3;
    REQUIRE(acc <= prev + 1e-9);
    prev = acc;
  }

  media::VideoClip flat(2, 16, 16);
  std::fill(flat.data.begin(), flat.data.end(), 0.42f);
  p.crf = 24;
  const auto out = distortion::codec_simulate(flat, p);
  double mx = 0;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    mx = std::max(mx, std::abs(static_cast<double>(out.data[i]) - flat.data[i]));
  REQUIRE(mx <= 1e-3);  // DC passes through untouched

  p.crf = 60;
  REQUIRE_THROWS_AS(distortion::codec_simulate(flat, p), InvalidArgument);
}

TEST_CASE("h264 proxy: identity at initialisation, quick fit improves") {
  distortion::H264ProxyNet proxy(1);
  Rng rng(10);
  const auto x = nn::random_uniform<float>({1, 3, 4, 16, 16}, rng, -0.9f, 0.9f);
  REQUIRE(proxy.forward(nn::constant(x), 24.0)->val.vec() == x.vec());  // zero residual

  const auto train = media::make_synthetic_manifest(6, 4, 32, 32, 31, "train");
  const auto val = media::make_synthetic_manifest(2, 4, 32, 32, 32, "val");
  distortion::ProxyTrainConfig cfg;
  cfg.iterations = 20;
  cfg.batch = 1;
  const auto res = distortion::train_h264_proxy(proxy, train, val, cfg);
  REQUIRE(std::isfinite(res.loss_trace.back()));
  REQUIRE(res.heldout_psnr_crf24 >= 25.0);  // identity alone is ~30 dB at crf 24
}

TEST_CASE("sample_distortion: seeded uniform choice") {
  std::vector<DistortionSpec> pool;
  for (int i = 0; i < 5; ++i) {
    DistortionSpec s;
    s.kind = DistortionSpec::Kind::kBlur;
    s.param = i;
    pool.push_back(s);
  }
  REQUIRE(&distortion::sample_distortion(pool, 4) == &distortion::sample_distortion(pool, 4));
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 10000; ++i) {
    const auto& pick = distortion::sample_distortion(pool, 1000 + static_cast<std::uint64_t>(i));
    counts[static_cast<std::size_t>(pick.param)]++;
  }
  for (int c : counts) {
    REQUIRE(c >= 1800);  // 20% +- 2%
    REQUIRE(c <= 2200);
  }
  REQUIRE_THROWS_AS(distortion::sample_distortion({}, 1), InvalidArgument);
}

TEST_CASE("weight perturbation and pruning: masks and edge probabilities") {
  Rng rng(11);
  std::vector<nn::Tensor> w = {nn::random_uniform<float>({100, 100, 10, 10, 1}, rng)};
  const auto same = distortion::perturb_weights(w, 0.05, 0.0, 3);
  REQUIRE(same[0].vec() == w[0].vec());
  const auto zeroed = distortion::prune_weights(w, 1.0, 3);
  for (std::int64_t i = 0; i < zeroed[0].numel(); ++i) REQUIRE(zeroed[0][i] == 0.0f);

  const auto pruned = distortion::prune_weights(w, 0.2, 5);
  std::int64_t changed = 0;
  for (std::int64_t i = 0; i < pruned[0].numel(); ++i)
    if (pruned[0][i] != w[0][i]) ++changed;
  const double frac = static_cast<double>(changed) / static_cast<double>(w[0].numel());
  REQUIRE(frac >= 0.19);
  REQUIRE(frac <= 0.21);
  // original untouched
  REQUIRE(w[0].max() != 0.0f);
}

TEST_CASE("every training-pool distortion passes an input-gradient check") {
  Rng rng(12);
  distortion::H264ProxyNet proxy(2);
  auto x = nn::leaf(nn::random_uniform<float>({1, 3, 4, 16, 16}, rng, -0.8f, 0.8f), true);
  distortion::ApplyContext ctx;
  ctx.proxy = &proxy;
  ctx.run_seed = 77;
  const char* specs[] = {"crop:0.6",       "rotate:0.3",      "blur:1.0",
                         "jpeg:50",        "frame_swap:0.5",  "frame_average:3",
                         "frame_drop:0.25", "h264_proxy:24"};
  for (const char* s : specs) {
    INFO("distortion " << s);
    const auto spec = distortion::parse_spec(s);
    auto loss_fn = [&]() -> nn::Var {
      return nn::mean_all(nn::square(distortion::apply_distortion(spec, x, ctx)));
    };
    test::check_gradient<float>({x}, loss_fn, 4, rng);
  }
}

TEST_CASE("spec parsing: labels, combine, unknown kinds") {
  const auto c = distortion::parse_spec("combine(rotate:0.52,frame_drop:0.5,h264_sim:24)");
  REQUIRE(c.kind == DistortionSpec::Kind::kCombine);
  REQUIRE(c.children.size() == 3);
  REQUIRE(c.children[2].kind == DistortionSpec::Kind::kCodecSim);
  REQUIRE(distortion::parse_spec("crop:0.5").label() == "crop:0.5");
  REQUIRE_THROWS_WITH(distortion::parse_spec("melt:1"), Catch::Matchers::ContainsSubstring("known:"));
}

TEST_CASE("h264_sim is rejected inside differentiable training paths") {
  Rng rng(13);
  auto x = nn::leaf(nn::random_uniform<float>({1, 3, 4, 16, 16}, rng, -0.8f, 0.8f), true);
  distortion::ApplyContext ctx;  // allow_nondifferentiable = false
  REQUIRE_THROWS_AS(distortion::apply_distortion(distortion::parse_spec("h264_sim:24"), x, ctx),
                    InvalidArgument);
  ctx.allow_nondifferentiable = true;
  REQUIRE_NOTHROW(distortion::apply_distortion(distortion::parse_spec("h264_sim:24"), x, ctx));
}

TEST_CASE("external encoder hook degrades gracefully and runs a stub command") {
  const auto clip = test::random_clip(2, 16, 16, 14);
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "lvmark_ext";
  fs::create_directories(dir);
  unsetenv("LVMARK_H264_CMD");
  REQUIRE_FALSE(distortion::external_h264(clip, 24, dir.string()).has_value());

  // identity "codec": copy frames through
  setenv("LVMARK_H264_CMD", "cp -r {in}/. {out}/", 1);
  const auto out = distortion::external_h264(clip, 24, dir.string());
  unsetenv("LVMARK_H264_CMD");
  REQUIRE(out.has_value());
  REQUIRE(out->frames == clip.frames);
  // identity round trip up to 8-bit quantisation of the PNG path
  REQUIRE(max_abs_diff(media::clip_to_tensor(clip), media::clip_to_tensor(*out)) <= 1.0 / 255.0 + 1e-6);
  fs::remove_all(dir);
}

TEST_CASE("all distortions keep outputs within [-1, 1]") {
  Rng rng(15);
  distortion::H264ProxyNet proxy(3);
  auto x = nn::constant(nn::random_uniform<float>({1, 3, 4, 16, 16}, rng, -1.0f, 1.0f));
  distortion::ApplyContext ctx;
  ctx.proxy = &proxy;
  ctx.allow_nondifferentiable = true;
  for (const char* s : {"crop:0.5", "rotate:0.5", "blur:1.5", "jpeg:30", "frame_swap:0.5",
                        "frame_average:4", "frame_drop:0.5", "h264_proxy:30", "h264_sim:30"}) {
    const auto out = distortion::apply_distortion(distortion::parse_spec(s), x, ctx)->val;
    INFO("distortion " << s);
    REQUIRE(out.min() >= -1.0f - 1e-6f);
    REQUIRE(out.max() <= 1.0f + 1e-6f);
  }
}
