#include <catch2/catch_amalgamated.hpp>

#include "lvmark/nn_ops.hpp"
#include "helpers.hpp"

using namespace lvmark;
using namespace lvmark::nn;

namespace {

// Naive reference convolution in double, all paths (k1 / direct / im2col)
// must agree with it.
template <class T>
TensorT<T> conv3d_reference(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                            const Conv3dSpec& s) {
  const int B = x.dim(0), Ci = x.dim(1), F = x.dim(2), H = x.dim(3), W = x.dim(4);
  const int Co = w.dim(0), kf = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  const int Fo = (F + 2 * s.pf - kf) / s.sf + 1;
  const int Ho = (H + 2 * s.ph - kh) / s.sh + 1;
  const int Wo = (W + 2 * s.pw - kw) / s.sw + 1;
  TensorT<T> out({B, Co, Fo, Ho, Wo});
  for (int b = 0; b < B; ++b)
    for (int co = 0; co < Co; ++co)
      for (int fo = 0; fo < Fo; ++fo)
        for (int ho = 0; ho < Ho; ++ho)
          for (int wo = 0; wo < Wo; ++wo) {
            double acc = bias.numel() ? bias[co] : 0.0;
            for (int ci = 0; ci < Ci; ++ci)
              for (int a = 0; a < kf; ++a)
                for (int bb = 0; bb < kh; ++bb)
                  for (int cc = 0; cc < kw; ++cc) {
                    const int fi = fo * s.sf + a - s.pf;
                    const int hi = ho * s.sh + bb - s.ph;
                    const int wi = wo * s.sw + cc - s.pw;
                    if (fi < 0 || fi >= F || hi < 0 || hi >= H || wi < 0 || wi >= W) continue;
                    acc += static_cast<double>(
                               x[(((static_cast<std::int64_t>(b) * Ci + ci) * F + fi) * H + hi) * W + wi]) *
                           w[(((static_cast<std::int64_t>(co) * Ci + ci) * kf + a) * kh + bb) * kw + cc];
                  }
            out[(((static_cast<std::int64_t>(b) * Co + co) * Fo + fo) * Ho + ho) * Wo + wo] =
                static_cast<T>(acc);
          }
  return out;
}

}  // namespace

TEST_CASE("elementwise and reduction ops pass double-precision gradient checks") {
  Rng rng(1);
  auto a = leaf(random_uniform<double>({3, 5}, rng, 0.2, 1.5), true);
  auto b = leaf(random_uniform<double>({3, 5}, rng, 0.3, 1.4), true);
  auto s = leaf(TensorT<double>::scalar(0.7), true);

  test::check_gradient<double>({a, b}, [&] { return mean_all(mul(add(a, b), sub(a, b))); }, 6, rng);
  test::check_gradient<double>({a, s}, [&] { return mean_all(div(a, add_const(s, 0.5))); }, 6, rng);
  test::check_gradient<double>({a}, [&] { return sum_all(tanh_op(mul_const(a, 0.8))); }, 6, rng);
  test::check_gradient<double>({a}, [&] { return mean_all(sigmoid(neg(a))); }, 4, rng);
  test::check_gradient<double>({a}, [&] { return mean_all(exp_op(mul_const(a, 0.3))); }, 4, rng);
  test::check_gradient<double>({a}, [&] { return mean_all(log_op(add_const(a, 1.0))); }, 4, rng);
  test::check_gradient<double>({a}, [&] { return mean_all(sqrt_op(add_const(square(a), 0.1))); }, 4, rng);
  test::check_gradient<double>({a}, [&] { return mean_all(abs_op(sub(a, b))); }, 4, rng);
  test::check_gradient<double>({a}, [&] { return mean_all(leaky_relu(sub(a, b), 0.1)); }, 4, rng);
  test::check_gradient<double>({a}, [&] { return mean_all(sin_op(a)); }, 4, rng);
  test::check_gradient<double>({a}, [&] { return mean_all(square(clamp(a, 0.4, 1.2))); }, 4, rng);
}

TEST_CASE("scalar broadcast backward accumulates correctly") {
  Rng rng(2);
  auto a = leaf(random_uniform<double>({4, 4}, rng), true);
  auto s = leaf(TensorT<double>::scalar(1.3), true);
  test::check_gradient<double>({a, s}, [&] { return mean_all(square(mul(a, s))); }, 5, rng);
  test::check_gradient<double>({a, s}, [&] { return mean_all(square(add(s, a))); }, 5, rng);
  test::check_gradient<double>({a, s}, [&] { return mean_all(square(sub(s, a))); }, 5, rng);
}

TEST_CASE("matmul, linear, bmm gradients") {
  Rng rng(3);
  auto a = leaf(random_uniform<double>({4, 6}, rng), true);
  auto b = leaf(random_uniform<double>({6, 3}, rng), true);
  test::check_gradient<double>({a, b}, [&] { return mean_all(square(matmul(a, b))); }, 6, rng);

  auto x = leaf(random_uniform<double>({5, 4}, rng), true);
  auto w = leaf(random_uniform<double>({3, 4}, rng), true);
  auto bias = leaf(random_uniform<double>({3}, rng), true);
  test::check_gradient<double>({x, w, bias}, [&] { return mean_all(square(linear(x, w, bias))); }, 6,
                               rng);

  auto g1 = leaf(random_uniform<double>({3, 2, 4}, rng), true);
  auto g2 = leaf(random_uniform<double>({3, 4, 5}, rng), true);
  test::check_gradient<double>({g1, g2}, [&] { return mean_all(square(bmm(g1, g2))); }, 6, rng);
  auto g3 = leaf(random_uniform<double>({3, 5, 4}, rng), true);
  test::check_gradient<double>({g1, g3}, [&] { return mean_all(square(bmm(g1, g3, true))); }, 6, rng);
}

TEST_CASE("softmax rows sum to one and its gradient is exact") {
  Rng rng(4);
  auto a = leaf(random_uniform<double>({6, 5}, rng, -2.0, 2.0), true);
  auto y = softmax_last(a);
  for (int r = 0; r < 6; ++r) {
    double s = 0;
    for (int c = 0; c < 5; ++c) s += y->val[r * 5 + c];
    REQUIRE(s == Catch::Approx(1.0).margin(1e-9));
  }
  auto tgt = constant(random_uniform<double>({6, 5}, rng));
  test::check_gradient<double>({a}, [&] { return mean_all(mul(softmax_last(a), tgt)); }, 8, rng);
}

TEST_CASE("bce_with_logits matches the closed form and its gradient") {
  Rng rng(5);
  auto logits = leaf(random_uniform<double>({4, 8}, rng, -3.0, 3.0), true);
  TensorT<double> targets({4, 8});
  for (std::int64_t i = 0; i < targets.numel(); ++i) targets[i] = rng.next_u64() & 1 ? 1.0 : 0.0;
  double expect = 0;
  for (std::int64_t i = 0; i < targets.numel(); ++i) {
    const double x = logits->val[i], t = targets[i];
    const double sig = 1.0 / (1.0 + std::exp(-x));
    expect += -(t * std::log(sig) + (1 - t) * std::log(1 - sig));
  }
  expect /= static_cast<double>(targets.numel());
  REQUIRE(bce_with_logits(logits, targets)->val[0] == Catch::Approx(expect).margin(1e-12));
  test::check_gradient<double>({logits}, [&] { return bce_with_logits(logits, targets); }, 8, rng);
}

TEST_CASE("conv3d agrees with the naive reference on every path") {
  Rng rng(6);
  struct Case {
    std::vector<int> xs, ws;
    Conv3dSpec s;
  };
  const Case cases[] = {
      // k1 pointwise path
      {{2, 5, 2, 4, 4}, {3, 5, 1, 1, 1}, {1, 1, 1, 0, 0, 0}},
      // direct wide-row path (W >= 32)
      {{1, 3, 2, 4, 40}, {2, 3, 3, 3, 3}, {1, 1, 1, 1, 1, 1}},
      {{1, 2, 2, 4, 36}, {2, 2, 1, 3, 3}, {1, 1, 1, 0, 1, 1}},
      // im2col path: strided and small
      {{2, 3, 4, 8, 8}, {4, 3, 3, 3, 3}, {2, 2, 2, 1, 1, 1}},
      {{1, 2, 4, 6, 6}, {3, 2, 3, 3, 3}, {1, 2, 2, 1, 1, 1}},
      {{1, 2, 3, 5, 5}, {2, 2, 2, 2, 2}, {1, 1, 1, 0, 0, 0}},
  };
  for (const auto& c : cases) {
    auto x = constant(random_uniform<float>(c.xs, rng));
    auto w = constant(random_uniform<float>(c.ws, rng, -0.5f, 0.5f));
    auto b = constant(random_uniform<float>({c.ws[0]}, rng, -0.2f, 0.2f));
    const auto got = conv3d(x, w, b, c.s)->val;
    const auto want = conv3d_reference(x->val, w->val, b->val, c.s);
    REQUIRE(got.shape() == want.shape());
    REQUIRE(max_abs_diff(got, want) <= 2e-4);
  }
}

TEST_CASE("conv3d gradients (all paths, double precision)") {
  Rng rng(7);
  struct Case {
    std::vector<int> xs, ws;
    Conv3dSpec s;
  };
  const Case cases[] = {
      {{1, 3, 2, 3, 4}, {2, 3, 1, 1, 1}, {1, 1, 1, 0, 0, 0}},   // k1
      {{1, 2, 2, 3, 34}, {2, 2, 1, 3, 3}, {1, 1, 1, 0, 1, 1}},  // direct
      {{1, 2, 3, 4, 4}, {2, 2, 3, 3, 3}, {1, 2, 2, 1, 1, 1}},   // im2col strided
  };
  for (const auto& c : cases) {
    auto x = leaf(random_uniform<double>(c.xs, rng), true);
    auto w = leaf(random_uniform<double>(c.ws, rng, -0.5, 0.5), true);
    auto b = leaf(random_uniform<double>({c.ws[0]}, rng, -0.2, 0.2), true);
    test::check_gradient<double>({x, w, b}, [&] { return mean_all(square(conv3d(x, w, b, c.s))); },
                                 6, rng);
  }
}

TEST_CASE("shape ops: permute, slice, reshape, concat") {
  Rng rng(8);
  auto x = leaf(random_uniform<double>({2, 3, 2, 3, 2}, rng), true);
  test::check_gradient<double>(
      {x}, [&] { return mean_all(square(permute(x, {0, 3, 4, 2, 1}))); }, 6, rng);
  test::check_gradient<double>(
      {x}, [&] { return mean_all(square(slice(x, {0, 1, 0, 1, 0}, {2, 2, 2, 2, 2}))); }, 6, rng);
  test::check_gradient<double>({x}, [&] { return mean_all(square(reshape(x, {6, 12}))); }, 4, rng);
  auto y = leaf(random_uniform<double>({2, 2, 2, 3, 2}, rng), true);
  test::check_gradient<double>({x, y}, [&] { return mean_all(square(concat_channels(x, y))); }, 6, rng);

  // permute round trip is the identity
  auto p = permute(x, {0, 2, 1, 4, 3});
  auto back = permute(p, {0, 2, 1, 4, 3});
  REQUIRE(max_abs_diff(back->val, x->val) == 0.0);
}

TEST_CASE("pooling and upsampling ops") {
  Rng rng(9);
  auto x = leaf(random_uniform<double>({2, 3, 2, 4, 4}, rng), true);
  test::check_gradient<double>({x}, [&] { return mean_all(square(upsample_nearest(x, 2, 2, 2))); }, 6, rng);
  test::check_gradient<double>({x}, [&] { return mean_all(square(global_avgpool(x))); }, 6, rng);
  test::check_gradient<double>({x}, [&] { return mean_all(square(avgpool2x2(x))); }, 6, rng);
  test::check_gradient<double>({x}, [&] { return mean_all(square(global_mean_std_pool(x))); }, 8, rng);

  // mean+std layout sanity: constant channel has mean c and ~zero std
  TensorT<double> c({1, 1, 1, 2, 2});
  c.fill(0.4);
  auto pooled = global_mean_std_pool(constant(c));
  REQUIRE(pooled->val[0] == Catch::Approx(0.4));
  REQUIRE(pooled->val[1] == Catch::Approx(1e-3).margin(1e-4));  // sqrt(eps)
}

TEST_CASE("scale_axis1 and fixed filters") {
  Rng rng(10);
  auto w = leaf(random_uniform<double>({3, 4, 2, 2, 2}, rng), true);
  auto s = leaf(random_uniform<double>({4}, rng, 0.5, 1.5), true);
  test::check_gradient<double>({w, s}, [&] { return mean_all(square(scale_axis1(w, s))); }, 8, rng);

  auto x = leaf(random_uniform<double>({1, 2, 2, 6, 6}, rng), true);
  const std::vector<double> box(9, 1.0 / 9.0);
  test::check_gradient<double>(
      {x}, [&] { return mean_all(square(fixed_filter2d(x, box, 3, 3, PadMode::kReplicate))); }, 8, rng);
  test::check_gradient<double>(
      {x}, [&] { return mean_all(square(fixed_filter2d(x, {-0.5, 0.0, 0.5}, 1, 3, PadMode::kReflect))); },
      8, rng);
}

TEST_CASE("grid sampling, frame mixing, block DCT, padding") {
  Rng rng(11);
  auto x = leaf(random_uniform<double>({1, 2, 2, 6, 6}, rng), true);
  SamplePlan plan;
  plan.hi = plan.wi = 6;
  plan.ho = plan.wo = 5;
  Rng prng(99);
  for (int i = 0; i < 25; ++i) plan_bilinear(plan, prng.uniform(-1.0, 6.0), prng.uniform(-1.0, 6.0));
  test::check_gradient<double>({x}, [&] { return mean_all(square(grid_sample_fixed(x, plan))); }, 8, rng);

  std::vector<double> mix = {0.5, 0.5, 0, 0, 0, 1, 0.25, 0.75};  // 4 rows x 2 cols
  auto xf = leaf(random_uniform<double>({1, 2, 2, 3, 3}, rng), true);
  test::check_gradient<double>({xf}, [&] { return mean_all(square(frame_mix(xf, mix, 4))); }, 6, rng);

  auto xd = leaf(random_uniform<double>({1, 1, 1, 8, 8}, rng), true);
  test::check_gradient<double>({xd}, [&] { return mean_all(square(dct8_blocks(xd, false))); }, 6, rng);
  // forward then inverse DCT is the identity (orthonormal basis)
  auto round = dct8_blocks(dct8_blocks(xd, false), true);
  REQUIRE(max_abs_diff(round->val, xd->val) <= 1e-12);

  auto xp = leaf(random_uniform<double>({1, 1, 1, 5, 6}, rng), true);
  test::check_gradient<double>({xp}, [&] { return mean_all(square(pad_replicate_hw(xp, 3, 2))); }, 8, rng);
}

TEST_CASE("no tape is built for constant inputs") {
  Rng rng(12);
  auto x = constant(random_uniform<float>({2, 3}, rng));
  auto y = mul(tanh_op(x), x);
  REQUIRE_FALSE(y->requires_grad);
  REQUIRE(y->parents.empty());
}

TEST_CASE("ops are deterministic across repeated evaluation") {
  Rng rng(13);
  auto x = constant(random_uniform<float>({2, 8, 4, 16, 16}, rng));
  auto w = constant(random_uniform<float>({8, 8, 3, 3, 3}, rng, -0.3f, 0.3f));
  auto b = constant(random_uniform<float>({8}, rng));
  Conv3dSpec s{1, 1, 1, 1, 1, 1};
  const auto y1 = conv3d(x, w, b, s)->val;
  const auto y2 = conv3d(x, w, b, s)->val;
  REQUIRE(y1.vec() == y2.vec());
}
