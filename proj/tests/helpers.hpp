#pragma once

#include <functional>

#include "lvmark/autograd.hpp"
#include "lvmark/media.hpp"

namespace lvmark::test {

// Central finite-difference gradient check against the tape. `loss_fn` must
// rebuild the graph from the current leaf values and return a scalar.
// Tolerance contract: |ad - fd| <= atol + rtol * max(|ad|, |fd|).
template <class T>
void check_gradient(const std::vector<nn::VarT<T>>& leaves,
                    const std::function<nn::VarT<T>()>& loss_fn, int samples_per_leaf, Rng& rng,
                    double rtol = -1, double atol = -1, double step = -1) {
  if (rtol < 0) rtol = std::is_same_v<T, double> ? 1e-5 : 1e-3;
  if (atol < 0) atol = std::is_same_v<T, double> ? 1e-9 : 2e-5;
  if (step < 0) step = std::is_same_v<T, double> ? 1e-5 : 1e-2;

  for (auto& leaf : leaves) leaf->grad = nn::TensorT<T>();
  nn::VarT<T> loss = loss_fn();
  nn::backward(loss);
  std::vector<nn::TensorT<T>> grads;
  for (auto& leaf : leaves) {
    REQUIRE(leaf->grad.numel() == leaf->val.numel());
    grads.push_back(leaf->grad);
  }

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    for (int s = 0; s < samples_per_leaf; ++s) {
      const std::int64_t i = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(leaf->val.numel())));
      const T saved = leaf->val[i];
      const double h = step * std::max(1.0, std::abs(static_cast<double>(saved)));
      leaf->val[i] = static_cast<T>(saved + h);
      const double fp = loss_fn()->val[0];
      leaf->val[i] = static_cast<T>(saved - h);
      const double fm = loss_fn()->val[0];
      leaf->val[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = grads[li][i];
      const double err = std::abs(ad - fd);
      const double tol = atol + rtol * std::max(std::abs(ad), std::abs(fd));
      INFO("leaf " << li << " coord " << i << " ad " << ad << " fd " << fd << " err " << err
                   << " tol " << tol);
      REQUIRE(err <= tol);
    }
  }
}

inline media::VideoClip random_clip(int f, int h, int w, std::uint64_t seed, float amp = 0.8f) {
  Rng rng(seed);
  media::VideoClip clip(f, h, w);
  for (auto& v : clip.data) v = static_cast<float>(rng.uniform(-amp, amp));
  return clip;
}

// A smooth clip whose borders fade to -1 (matches the rotation fill value).
inline media::VideoClip vignette_clip(int f, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  const double phase = rng.uniform(0.0, 6.28);
  media::VideoClip clip(f, h, w);
  for (int t = 0; t < f; ++t)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double ny = 2.0 * y / (h - 1) - 1.0, nx = 2.0 * x / (w - 1) - 1.0;
        const double r2 = nx * nx + ny * ny;
        const double window = std::max(0.0, 1.0 - r2);  // 0 at corners
        const double tex = 0.5 + 0.4 * std::sin(3.0 * nx + 2.0 * ny + phase + 0.1 * t);
        const double v = -1.0 + window * tex * 1.6;
        for (int c = 0; c < 3; ++c) clip.at(t, y, x, c) = static_cast<float>(std::clamp(v, -1.0, 1.0));
      }
  return clip;
}

}  // namespace lvmark::test
