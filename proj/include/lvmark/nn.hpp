#pragma once

#include <map>
#include <string>

#include "lvmark/nn_ops.hpp"

namespace lvmark::nn {

// ---------------------------------------------------------------------------
// Named trainable parameters. Every network in the project registers its
// tensors in a ParamStore so the optimizer and the checkpoint code see one
// flat name -> tensor map.
// ---------------------------------------------------------------------------

struct Param {
  std::string name;
  Var var;
};

class ParamStore {
 public:
  Var add(const std::string& name, Tensor init, bool trainable = true) {
    for (const auto& p : params_)
      require(p.name != name, "duplicate parameter name: " + name);
    Var v = leaf(std::move(init), trainable);
    params_.push_back({name, v});
    return v;
  }

  const std::vector<Param>& all() const { return params_; }
  std::vector<Param>& all() { return params_; }

  Var find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.var;
    throw InvalidArgument("parameter not found: " + name);
  }

  void zero_grads() {
    for (auto& p : params_)
      if (p.var->grad.numel()) p.var->grad.fill(0.0f);
  }

  std::int64_t count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.var->val.numel();
    return n;
  }

  // Snapshot / restore by name (used by retraining attacks and checkpoints).
  std::map<std::string, Tensor> snapshot() const {
    std::map<std::string, Tensor> out;
    for (const auto& p : params_) out[p.name] = p.var->val;
    return out;
  }

  void restore(const std::map<std::string, Tensor>& snap, const std::string& prefix = "") {
    for (auto& p : params_) {
      auto it = snap.find(prefix + p.name);
      require(it != snap.end(), "checkpoint missing parameter " + prefix + p.name);
      require(it->second.shape() == p.var->val.shape(),
              "checkpoint shape mismatch for " + p.name);
      p.var->val = it->second;
    }
  }

 private:
  std::vector<Param> params_;
};

// He-style fan-in initialisation for convs and dense layers.
inline Tensor init_conv_weight(int co, int ci, int kf, int kh, int kw, Rng& rng) {
  const double fan_in = static_cast<double>(ci) * kf * kh * kw;
  return random_normal<float>({co, ci, kf, kh, kw}, rng, 0.0, std::sqrt(2.0 / fan_in));
}

inline Tensor init_linear_weight(int co, int ci, Rng& rng) {
  return random_normal<float>({co, ci}, rng, 0.0, std::sqrt(1.0 / ci));
}

// ---------------------------------------------------------------------------
// AdamW: adaptive moments with decoupled weight decay.
// ---------------------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 0.0;  // 0 disables global-norm gradient clipping
  int warmup_steps = 0;    // linear lr warmup; avoids the early-Adam shock
};

class AdamW {
 public:
  AdamW(std::vector<Param> params, AdamWConfig cfg) : cfg_(cfg), params_(std::move(params)) {
    for (const auto& p : params_) {
      state_.push_back({Tensor(p.var->val.shape()), Tensor(p.var->val.shape())});
    }
  }

  void zero_grad() {
    for (auto& p : params_)
      if (p.var->grad.numel()) p.var->grad.fill(0.0f);
  }

  void step() {
    ++t_;
    double scale = 1.0;
    if (cfg_.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& p : params_) {
        if (p.var->grad.numel() != p.var->val.numel()) continue;
        for (std::int64_t j = 0; j < p.var->grad.numel(); ++j) {
          const double g = p.var->grad[j];
          sq += g * g;
        }
      }
      const double norm = std::sqrt(sq);
      if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double lr = cfg_.warmup_steps > 0 && t_ < cfg_.warmup_steps
                          ? cfg_.lr * static_cast<double>(t_) / cfg_.warmup_steps
                          : cfg_.lr;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].var;
      if (p->grad.numel() != p->val.numel()) continue;  // no gradient this step
      auto& m = state_[i].m;
      auto& v = state_[i].v;
      // decoupled decay applies to weight matrices only, not biases/scalars
      const double wd = p->val.rank() >= 2 ? cfg_.weight_decay : 0.0;
      for (std::int64_t j = 0; j < p->val.numel(); ++j) {
        const double g = p->grad[j] * scale;
        m[j] = static_cast<float>(cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g);
        v[j] = static_cast<float>(cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g);
        const double mh = m[j] / bc1;
        const double vh = v[j] / bc2;
        p->val[j] = static_cast<float>(p->val[j] - lr * (mh / (std::sqrt(vh) + cfg_.eps) +
                                                         wd * p->val[j]));
      }
    }
  }

  std::int64_t steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  std::vector<Param> params_;
  struct State {
    Tensor m, v;
  };
  std::vector<State> state_;
  std::int64_t t_ = 0;
};

}  // namespace lvmark::nn
