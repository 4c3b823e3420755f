#pragma once

#include "lvmark/metrics.hpp"
#include "lvmark/msgcodec.hpp"

namespace lvmark::losses {

struct LossWeights {
  double msg = 0.8;
  double vgg = 0.7;
  double patch = 10.0;

  void validate() const {
    require(std::isfinite(msg) && msg >= 0.0, "loss weight msg must be finite and >= 0");
    require(std::isfinite(vgg) && vgg >= 0.0, "loss weight vgg must be finite and >= 0");
    require(std::isfinite(patch) && patch >= 0.0, "loss weight patch must be finite and >= 0");
  }
};

struct PatchGrid {
  int side = 16;

  int patch_count(int h, int w) const {
    require(side >= 1 && h % side == 0 && w % side == 0,
            "patch side " + std::to_string(side) + " must divide the " + std::to_string(h) + "x" +
                std::to_string(w) + " frame");
    return (h / side) * (w / side);
  }
};

// Mean binary cross-entropy between logits [B, N] and one codeword tiled
// over the batch (numerically stabilised log-sum-exp form).
template <class T>
nn::VarT<T> message_loss(const nn::VarT<T>& logits, const msgcodec::Bits& bits) {
  require(logits->val.rank() == 2, "message_loss: [B, N] logits expected");
  const int b = logits->val.dim(0), n = logits->val.dim(1);
  require(static_cast<int>(bits.size()) == n, "message_loss: length mismatch (logits " +
                                                  std::to_string(n) + ", message " +
                                                  std::to_string(bits.size()) + ")");
  nn::TensorT<T> targets({b, n});
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < n; ++j)
      targets[static_cast<std::int64_t>(i) * n + j] = bits[static_cast<std::size_t>(j)] ? T(1) : T(0);
  return nn::bce_with_logits(logits, targets);
}

// The perceptual term shares its definition with metrics::perceptual_proxy.
template <class T>
nn::VarT<T> perceptual_loss(const nn::VarT<T>& v_hat, const nn::VarT<T>& v) {
  return metrics::perceptual_distance_op<T>(v_hat, v);
}

template <class T>
nn::VarT<T> mae_loss(const nn::VarT<T>& v_hat, const nn::VarT<T>& v) {
  return nn::mean_all(nn::abs_op(nn::sub(v_hat, v)));
}

namespace detail {

// [B,C,F,H,W] -> [B,P]: scalar mean over each spatial patch x all frames and
// channels. P = (H/side) * (W/side).
template <class T>
nn::VarT<T> patch_mean(const nn::VarT<T>& x, int side) {
  const auto& s = x->val.shape();
  require(s.size() == 5, "patch_mean: rank-5 expected");
  const int B = s[0], C = s[1], F = s[2], H = s[3], W = s[4];
  const int py = H / side, px = W / side, p = py * px;
  const double vol = static_cast<double>(C) * F * side * side;
  nn::TensorT<T> out({B, p});
  for (int b = 0; b < B; ++b)
    for (int gy = 0; gy < py; ++gy)
      for (int gx = 0; gx < px; ++gx) {
        double acc = 0;
        for (int c = 0; c < C; ++c)
          for (int f = 0; f < F; ++f) {
            const T* fr = x->val.data() +
                          (((static_cast<std::int64_t>(b) * C + c) * F + f) * H + gy * side) * W + gx * side;
            for (int dy = 0; dy < side; ++dy)
              for (int dx = 0; dx < side; ++dx) acc += fr[static_cast<std::int64_t>(dy) * W + dx];
          }
        out[static_cast<std::int64_t>(b) * p + gy * px + gx] = static_cast<T>(acc / vol);
      }
  return nn::make_op(std::move(out), {x}, [x, side, B, C, F, H, W, py, px, p, vol](nn::NodeT<T>& self) {
    auto& g = x->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int gy = 0; gy < py; ++gy)
        for (int gx = 0; gx < px; ++gx) {
          const T gv = static_cast<T>(self.grad[static_cast<std::int64_t>(b) * p + gy * px + gx] / vol);
          for (int c = 0; c < C; ++c)
            for (int f = 0; f < F; ++f) {
              T* fr = g.data() +
                      (((static_cast<std::int64_t>(b) * C + c) * F + f) * H + gy * side) * W + gx * side;
              for (int dy = 0; dy < side; ++dy)
                for (int dx = 0; dx < side; ++dx) fr[static_cast<std::int64_t>(dy) * W + dx] += gv;
            }
        }
  });
}

}  // namespace detail

// Weighted patch loss: per-patch MAE d_i (per video), softmax over the P
// patches, loss = (1/P) * sum_i d_i * softmax(d)_i, averaged over the batch.
template <class T>
nn::VarT<T> weighted_patch_loss(const nn::VarT<T>& v_hat, const nn::VarT<T>& v, const PatchGrid& grid) {
  require(v_hat->val.same_shape(v->val), "weighted_patch_loss: shape mismatch");
  const auto& s = v_hat->val.shape();
  const int p = grid.patch_count(s[3], s[4]);
  auto d = detail::patch_mean(nn::abs_op(nn::sub(v_hat, v)), grid.side);  // [B,P]
  auto w = nn::softmax_last(d);
  auto weighted = nn::sum_all(nn::mul(d, w));
  return nn::mul_const(weighted, static_cast<T>(1.0 / (static_cast<double>(p) * s[0])));
}

// Exactly lambda_msg*msg + lambda_vgg*vgg + lambda_patch*patch. Aborts with a
// diagnostic naming the first non-finite component.
template <class T>
nn::VarT<T> total_loss(const nn::VarT<T>& msg_l, const nn::VarT<T>& vgg_l,
                       const nn::VarT<T>& patch_l, const LossWeights& w) {
  w.validate();
  const char* names[3] = {"message", "vgg", "patch"};
  const nn::VarT<T> comps[3] = {msg_l, vgg_l, patch_l};
  for (int i = 0; i < 3; ++i) {
    require(comps[i] && comps[i]->val.numel() == 1, "total_loss: scalar components expected");
    if (!std::isfinite(static_cast<double>(comps[i]->val[0])))
      throw std::runtime_error(std::string("total_loss: non-finite ") + names[i] + " component");
  }
  auto total = nn::mul_const(msg_l, static_cast<T>(w.msg));
  total = nn::add(total, nn::mul_const(vgg_l, static_cast<T>(w.vgg)));
  total = nn::add(total, nn::mul_const(patch_l, static_cast<T>(w.patch)));
  return total;
}

}  // namespace lvmark::losses
