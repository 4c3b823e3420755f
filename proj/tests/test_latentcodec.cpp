#include <catch2/catch_amalgamated.hpp>

#include "lvmark/latentcodec.hpp"
#include "helpers.hpp"

using namespace lvmark;

TEST_CASE("latent shape follows the stride plan: 8x64x64 -> 8ch x 4x8x8") {
  latentcodec::LatentCodec codec(1);
  Rng rng(2);
  const auto z = codec.encode(nn::random_uniform<float>({1, 3, 8, 64, 64}, rng, -0.9f, 0.9f));
  REQUIRE(z.shape() == std::vector<int>{1, 8, 4, 8, 8});
}

TEST_CASE("encode/decode are deterministic and range-bounded") {
  latentcodec::LatentCodec codec(3);
  Rng rng(4);
  const auto x = nn::random_uniform<float>({1, 3, 4, 32, 32}, rng, -0.9f, 0.9f);
  const auto z1 = codec.encode(x);
  const auto z2 = codec.encode(x);
  REQUIRE(z1.vec() == z2.vec());
  const auto y = codec.decode(z1);
  REQUIRE(y.shape() == x.shape());
  REQUIRE(y.min() >= -1.0f);
  REQUIRE(y.max() <= 1.0f);
  REQUIRE(codec.decode(z1).vec() == y.vec());
}

TEST_CASE("indivisible input dimensions are rejected") {
  latentcodec::LatentCodec codec(5);
  REQUIRE_THROWS_AS(codec.encode(nn::Tensor({1, 3, 4, 30, 32})), InvalidArgument);
  REQUIRE_THROWS_AS(codec.encode(nn::Tensor({1, 3, 5, 32, 32})), InvalidArgument);
}

TEST_CASE("zero weights in the final projection give a constant activation(bias) output") {
  latentcodec::LatentCodec codec(6);
  codec.params().find("dec.conv11.w")->val.fill(0.0f);
  codec.params().find("dec.conv11.b")->val.fill(0.3f);
  Rng rng(7);
  const auto z = codec.encode(nn::random_uniform<float>({1, 3, 4, 32, 32}, rng, -0.9f, 0.9f));
  const auto y = codec.decode(z);
  const float expect = std::tanh(0.3f);
  for (std::int64_t i = 0; i < y.numel(); ++i) REQUIRE(y[i] == Catch::Approx(expect).margin(1e-6));
}

TEST_CASE("every weight-bearing decoder layer appears exactly once in the registry") {
  latentcodec::LatentCodec codec(8);
  const auto layers = codec.decoder_layers();
  REQUIRE(layers.size() == 12);
  std::vector<int> ids;
  for (const auto& l : layers) ids.push_back(l.id);
  std::sort(ids.begin(), ids.end());
  for (int i = 0; i < 12; ++i) REQUIRE(ids[static_cast<std::size_t>(i)] == i);
  // weights exist and match the registry shapes
  const auto w = codec.decoder_base_weights();
  for (const auto& l : layers)
    REQUIRE(w[static_cast<std::size_t>(l.id)].shape() == l.weight_shape);
}

TEST_CASE("decode gradients w.r.t. weights match finite differences") {
  latentcodec::LatentCodec codec(9);
  Rng rng(10);
  const auto z = codec.encode(nn::random_uniform<float>({1, 3, 4, 32, 32}, rng, -0.8f, 0.8f));
  // one sampled weight-bearing layer per kind of stage (early, mid, final)
  for (const char* name : {"dec.conv0.w", "dec.conv5.w", "dec.conv11.w"}) {
    auto w = codec.params().find(name);
    auto loss_fn = [&]() -> nn::Var {
      return nn::mean_all(nn::square(codec.decode_var(nn::constant(z))));
    };
    test::check_gradient<float>({w}, loss_fn, 4, rng);
  }
}

TEST_CASE("short pretraining runs deterministically and reduces the loss") {
  const auto train = media::make_synthetic_manifest(8, 4, 32, 32, 42, "train");
  const auto val = media::make_synthetic_manifest(2, 4, 32, 32, 43, "val");
  latentcodec::PretrainConfig cfg;
  cfg.iterations = 25;
  cfg.batch = 2;
  cfg.seed = 5;

  latentcodec::LatentCodec a(77);
  const auto ra = latentcodec::pretrain_autoencoder(a, train, val, cfg);
  latentcodec::LatentCodec b(77);
  const auto rb = latentcodec::pretrain_autoencoder(b, train, val, cfg);
  REQUIRE(ra.loss_trace == rb.loss_trace);  // bit-exact repeat
  REQUIRE(ra.val_psnr == rb.val_psnr);
  REQUIRE(ra.loss_trace.back() < ra.loss_trace.front());

  // zero training steps leave the checkpoint at initialisation
  latentcodec::LatentCodec c(77), d(77);
  latentcodec::PretrainConfig zero = cfg;
  zero.iterations = 0;
  latentcodec::pretrain_autoencoder(c, train, val, zero);
  REQUIRE(c.params().snapshot() == d.params().snapshot());
}
