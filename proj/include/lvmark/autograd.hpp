#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include "lvmark/tensor.hpp"

namespace lvmark::nn {

// ---------------------------------------------------------------------------
// Reverse-mode autodiff over TensorT. Graphs are built dynamically by the op
// functions below; backward() runs the tape in reverse topological order.
// Nodes whose inputs carry no gradient are constant-folded: they keep no
// parents and no backprop closure, so inference builds no tape.
// ---------------------------------------------------------------------------

template <class T>
struct NodeT {
  TensorT<T> val;
  TensorT<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<NodeT<T>>> parents;
  std::function<void(NodeT<T>&)> backprop;

  TensorT<T>& ensure_grad() {
    if (grad.numel() != val.numel()) grad = TensorT<T>(val.shape());
    return grad;
  }
};

template <class T>
using VarT = std::shared_ptr<NodeT<T>>;

using Var = VarT<float>;

template <class T>
VarT<T> leaf(TensorT<T> value, bool requires_grad = false) {
  auto n = std::make_shared<NodeT<T>>();
  n->val = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

template <class T>
VarT<T> constant(TensorT<T> value) {
  return leaf(std::move(value), false);
}

// Build an op node. `backfn` receives the finished node (with grad set) and
// must accumulate into each parent's ensure_grad(). If no parent requires a
// gradient the node is constant and the closure is dropped.
template <class T, class F>
VarT<T> make_op(TensorT<T> value, std::vector<VarT<T>> parents, F&& backfn) {
  auto n = std::make_shared<NodeT<T>>();
  n->val = std::move(value);
  for (const auto& p : parents) n->requires_grad |= p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::forward<F>(backfn);
  }
  return n;
}

// Runs backpropagation from a scalar root (grad seeded with 1).
template <class T>
void backward(const VarT<T>& root) {
  require(root->val.numel() == 1, "backward: root must be scalar");
  std::vector<NodeT<T>*> order;
  std::unordered_set<NodeT<T>*> seen;
  std::vector<std::pair<NodeT<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      NodeT<T>* p = node->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad().fill(T(0));
  root->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT<T>* n = *it;
    if (n->backprop && n->grad.numel() == n->val.numel()) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// GEMM (row-major, via Eigen)
// ---------------------------------------------------------------------------

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C[M,N] = (accum ? C : 0) + op(A) * op(B), row-major buffers.
// op(A) is A[M,K] or, when transA, A[K,M] read transposed (same for B).
template <class T>
void gemm(const T* a, const T* b, T* c, int m, int k, int n, bool accum = false,
          bool trans_a = false, bool trans_b = false) {
  using Map = Eigen::Map<const RowMat<T>>;
  using MapMut = Eigen::Map<RowMat<T>>;
  MapMut C(c, m, n);
  auto run = [&](const auto& A, const auto& B) {
    if (accum)
      C.noalias() += A * B;
    else
      C.noalias() = A * B;
  };
  if (!trans_a && !trans_b)
    run(Map(a, m, k), Map(b, k, n));
  else if (trans_a && !trans_b)
    run(Map(a, k, m).transpose(), Map(b, k, n));
  else if (!trans_a && trans_b)
    run(Map(a, m, k), Map(b, n, k).transpose());
  else
    run(Map(a, k, m).transpose(), Map(b, n, k).transpose());
}

// ---------------------------------------------------------------------------
// Elementwise ops. Binary ops accept equal shapes, or a scalar (numel == 1)
// on either side.
// ---------------------------------------------------------------------------


namespace detail {

// Elementwise loop, parallelised for large tensors. Bodies must write
// disjoint indices, so results are independent of the thread count.
template <class F>
inline void par_for(std::int64_t n, F&& f) {
#ifdef _OPENMP
  if (n > 65536) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) f(i);
    return;
  }
#endif
  for (std::int64_t i = 0; i < n; ++i) f(i);
}

template <class T>
void accum_scalar(NodeT<T>& parent, double s) {
  parent.ensure_grad()[0] += static_cast<T>(s);
}

// Deterministic parallel sum: fixed 64k chunks computed in parallel, chunk
// sums folded in index order (independent of thread count).
template <class T, class F>
double chunked_sum(std::int64_t n, F&& term) {
  constexpr std::int64_t kChunk = 1 << 16;
  const std::int64_t chunks = (n + kChunk - 1) / kChunk;
  if (chunks <= 1) {
    double s = 0;
    for (std::int64_t i = 0; i < n; ++i) s += term(i);
    return s;
  }
  std::vector<double> partial(static_cast<std::size_t>(chunks), 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t c = 0; c < chunks; ++c) {
    const std::int64_t lo = c * kChunk, hi = std::min(n, lo + kChunk);
    double s = 0;
    for (std::int64_t i = lo; i < hi; ++i) s += term(i);
    partial[static_cast<std::size_t>(c)] = s;
  }
  double s = 0;
  for (double p : partial) s += p;
  return s;
}

}  // namespace detail

template <class T>
VarT<T> add(const VarT<T>& a, const VarT<T>& b) {
  const bool sa = a->val.numel() == 1 && b->val.numel() != 1;
  const bool sb = b->val.numel() == 1 && a->val.numel() != 1;
  require(sa || sb || a->val.same_shape(b->val), "add: shape mismatch");
  const auto& big = sa ? b->val : a->val;
  TensorT<T> out(big.shape());
  detail::par_for(out.numel(), [&](std::int64_t i) {
    out[i] = (sa ? a->val[0] : a->val[i]) + (sb ? b->val[0] : b->val[i]);
  });
  return make_op(std::move(out), {a, b}, [a, b, sa, sb](NodeT<T>& self) {
    if (a->requires_grad) {
      if (sa) {
        double s = 0;
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) s += self.grad[i];
        detail::accum_scalar(*a, s);
      } else {
        auto& g = a->ensure_grad();
        detail::par_for(g.numel(), [&](std::int64_t i) { g[i] += self.grad[i]; });
      }
    }
    if (b->requires_grad) {
      if (sb) {
        double s = 0;
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) s += self.grad[i];
        detail::accum_scalar(*b, s);
      } else {
        auto& g = b->ensure_grad();
        detail::par_for(g.numel(), [&](std::int64_t i) { g[i] += self.grad[i]; });
      }
    }
  });
}

template <class T>
VarT<T> sub(const VarT<T>& a, const VarT<T>& b) {
  const bool sa = a->val.numel() == 1 && b->val.numel() != 1;
  const bool sb = b->val.numel() == 1 && a->val.numel() != 1;
  require(sa || sb || a->val.same_shape(b->val), "sub: shape mismatch");
  const auto& big = sa ? b->val : a->val;
  TensorT<T> out(big.shape());
  detail::par_for(out.numel(), [&](std::int64_t i) {
    out[i] = (sa ? a->val[0] : a->val[i]) - (sb ? b->val[0] : b->val[i]);
  });
  return make_op(std::move(out), {a, b}, [a, b, sa, sb](NodeT<T>& self) {
    if (a->requires_grad) {
      if (sa) {
        double s = 0;
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) s += self.grad[i];
        detail::accum_scalar(*a, s);
      } else {
        auto& g = a->ensure_grad();
        detail::par_for(g.numel(), [&](std::int64_t i) { g[i] += self.grad[i]; });
      }
    }
    if (b->requires_grad) {
      if (sb) {
        double s = 0;
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) s += self.grad[i];
        detail::accum_scalar(*b, -s);
      } else {
        auto& g = b->ensure_grad();
        detail::par_for(g.numel(), [&](std::int64_t i) { g[i] -= self.grad[i]; });
      }
    }
  });
}

template <class T>
VarT<T> mul(const VarT<T>& a, const VarT<T>& b) {
  const bool sa = a->val.numel() == 1 && b->val.numel() != 1;
  const bool sb = b->val.numel() == 1 && a->val.numel() != 1;
  require(sa || sb || a->val.same_shape(b->val), "mul: shape mismatch");
  const auto& big = sa ? b->val : a->val;
  TensorT<T> out(big.shape());
  detail::par_for(out.numel(), [&](std::int64_t i) {
    out[i] = (sa ? a->val[0] : a->val[i]) * (sb ? b->val[0] : b->val[i]);
  });
  return make_op(std::move(out), {a, b}, [a, b, sa, sb](NodeT<T>& self) {
    if (a->requires_grad) {
      if (sa) {
        double s = 0;
        for (std::int64_t i = 0; i < self.grad.numel(); ++i)
          s += static_cast<double>(self.grad[i]) * b->val[i];
        detail::accum_scalar(*a, s);
      } else {
        auto& g = a->ensure_grad();
        detail::par_for(g.numel(), [&](std::int64_t i) { g[i] += self.grad[i] * (sb ? b->val[0] : b->val[i]); });
      }
    }
    if (b->requires_grad) {
      if (sb) {
        double s = 0;
        for (std::int64_t i = 0; i < self.grad.numel(); ++i)
          s += static_cast<double>(self.grad[i]) * a->val[i];
        detail::accum_scalar(*b, s);
      } else {
        auto& g = b->ensure_grad();
        detail::par_for(g.numel(), [&](std::int64_t i) { g[i] += self.grad[i] * (sa ? a->val[0] : a->val[i]); });
      }
    }
  });
}

// a / b with b scalar or equal shape.
template <class T>
VarT<T> div(const VarT<T>& a, const VarT<T>& b) {
  const bool sb = b->val.numel() == 1 && a->val.numel() != 1;
  require(sb || a->val.same_shape(b->val), "div: shape mismatch");
  TensorT<T> out(a->val.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a->val[i] / (sb ? b->val[0] : b->val[i]);
  return make_op(std::move(out), {a, b}, [a, b, sb](NodeT<T>& self) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] / (sb ? b->val[0] : b->val[i]);
    }
    if (b->requires_grad) {
      if (sb) {
        double s = 0;
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
          const double bv = b->val[0];
          s += -static_cast<double>(self.grad[i]) * a->val[i] / (bv * bv);
        }
        detail::accum_scalar(*b, s);
      } else {
        auto& g = b->ensure_grad();
        for (std::int64_t i = 0; i < g.numel(); ++i)
          g[i] += -self.grad[i] * a->val[i] / (b->val[i] * b->val[i]);
      }
    }
  });
}

template <class T>
VarT<T> add_const(const VarT<T>& a, T c) {
  TensorT<T> out = a->val;
  detail::par_for(out.numel(), [&](std::int64_t i) { out[i] += c; });
  return make_op(std::move(out), {a}, [a](NodeT<T>& self) {
    auto& g = a->ensure_grad();
    detail::par_for(g.numel(), [&](std::int64_t i) { g[i] += self.grad[i]; });
  });
}

template <class T>
VarT<T> mul_const(const VarT<T>& a, T c) {
  TensorT<T> out = a->val;
  detail::par_for(out.numel(), [&](std::int64_t i) { out[i] *= c; });
  return make_op(std::move(out), {a}, [a, c](NodeT<T>& self) {
    auto& g = a->ensure_grad();
    detail::par_for(g.numel(), [&](std::int64_t i) { g[i] += self.grad[i] * c; });
  });
}

template <class T>
VarT<T> neg(const VarT<T>& a) {
  return mul_const(a, T(-1));
}

namespace detail {

// Unary elementwise helper: fwd(x) -> y, dfn(x, y) -> dy/dx. The derivative
// may use the op's own output (self.val), so nothing extra is saved.
template <class T, class Fwd, class Dfn>
VarT<T> unary(const VarT<T>& a, Fwd&& fwd, Dfn&& dfn) {
  TensorT<T> out(a->val.shape());
  detail::par_for(out.numel(), [&](std::int64_t i) { out[i] = fwd(a->val[i]); });
  return make_op(std::move(out), {a}, [a, dfn](NodeT<T>& self) {
    auto& g = a->ensure_grad();
    detail::par_for(g.numel(), [&](std::int64_t i) { g[i] += self.grad[i] * dfn(a->val[i], self.val[i]); });
  });
}

}  // namespace detail

template <class T>
VarT<T> relu(const VarT<T>& a) {
  return detail::unary(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
VarT<T> leaky_relu(const VarT<T>& a, T slope = T(0.1)) {
  return detail::unary(
      a, [slope](T x) { return x > T(0) ? x : slope * x; },
      [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <class T>
VarT<T> tanh_op(const VarT<T>& a) {
  return detail::unary(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
VarT<T> sigmoid(const VarT<T>& a) {
  return detail::unary(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
VarT<T> exp_op(const VarT<T>& a) {
  return detail::unary(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
VarT<T> log_op(const VarT<T>& a) {
  return detail::unary(
      a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
VarT<T> sqrt_op(const VarT<T>& a) {
  return detail::unary(
      a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <class T>
VarT<T> sin_op(const VarT<T>& a) {
  return detail::unary(
      a, [](T x) { return std::sin(x); }, [](T x, T) { return std::cos(x); });
}

template <class T>
VarT<T> square(const VarT<T>& a) {
  return detail::unary(
      a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <class T>
VarT<T> abs_op(const VarT<T>& a) {
  return detail::unary(
      a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <class T>
VarT<T> clamp(const VarT<T>& a, T lo, T hi) {
  return detail::unary(
      a, [lo, hi](T x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Reductions (double accumulation)
// ---------------------------------------------------------------------------

template <class T>
VarT<T> sum_all(const VarT<T>& a) {
  TensorT<T> out = TensorT<T>::scalar(
      static_cast<T>(detail::chunked_sum<T>(a->val.numel(), [&](std::int64_t i) { return static_cast<double>(a->val[i]); })));
  return make_op(std::move(out), {a}, [a](NodeT<T>& self) {
    auto& g = a->ensure_grad();
    const T gv = self.grad[0];
    detail::par_for(g.numel(), [&](std::int64_t i) { g[i] += gv; });
  });
}

template <class T>
VarT<T> mean_all(const VarT<T>& a) {
  const double n = static_cast<double>(a->val.numel());
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(
      detail::chunked_sum<T>(a->val.numel(), [&](std::int64_t i) { return static_cast<double>(a->val[i]); }) / n));
  return make_op(std::move(out), {a}, [a, n](NodeT<T>& self) {
    auto& g = a->ensure_grad();
    const T gv = static_cast<T>(self.grad[0] / n);
    detail::par_for(g.numel(), [&](std::int64_t i) { g[i] += gv; });
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class T>
VarT<T> reshape(const VarT<T>& a, std::vector<int> shape) {
  TensorT<T> out = a->val.reshaped(std::move(shape));
  return make_op(std::move(out), {a}, [a](NodeT<T>& self) {
    auto& g = a->ensure_grad();
    detail::par_for(g.numel(), [&](std::int64_t i) { g[i] += self.grad[i]; });
  });
}

namespace detail {

inline std::vector<std::int64_t> strides_of(const std::vector<int>& shape) {
  std::vector<std::int64_t> s(shape.size());
  std::int64_t acc = 1;
  for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = acc;
    acc *= shape[static_cast<std::size_t>(i)];
  }
  return s;
}

// out[idx] = in[perm applied]; walks the output index space once.
template <class T>
void permute_copy(const TensorT<T>& in, TensorT<T>& out, const std::vector<int>& perm,
                  bool accumulate) {
  const auto& oshape = out.shape();
  const auto istr = strides_of(in.shape());
  const int r = static_cast<int>(oshape.size());
  std::vector<std::int64_t> ostr_in(static_cast<std::size_t>(r));
  // stride in the input for a step along output dim d
  for (int d = 0; d < r; ++d) ostr_in[static_cast<std::size_t>(d)] = istr[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];
  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  std::int64_t iin = 0;
  const std::int64_t n = out.numel();
  for (std::int64_t io = 0; io < n; ++io) {
    if (accumulate)
      out[io] += in[iin];
    else
      out[io] = in[iin];
    for (int d = r - 1; d >= 0; --d) {
      auto du = static_cast<std::size_t>(d);
      if (++idx[du] < oshape[du]) {
        iin += ostr_in[du];
        break;
      }
      idx[du] = 0;
      iin -= ostr_in[du] * (oshape[du] - 1);
    }
  }
}

}  // namespace detail

// permute: out dim d comes from input dim perm[d].
template <class T>
VarT<T> permute(const VarT<T>& a, std::vector<int> perm) {
  const auto& ishape = a->val.shape();
  require(perm.size() == ishape.size(), "permute: rank mismatch");
  std::vector<int> oshape(perm.size());
  for (std::size_t d = 0; d < perm.size(); ++d) oshape[d] = ishape[static_cast<std::size_t>(perm[d])];
  TensorT<T> out(oshape);
  detail::permute_copy<T>(a->val, out, perm, false);
  return make_op(std::move(out), {a}, [a, perm](NodeT<T>& self) {
    // inverse permutation of the gradient
    std::vector<int> inv(perm.size());
    for (std::size_t d = 0; d < perm.size(); ++d) inv[static_cast<std::size_t>(perm[d])] = static_cast<int>(d);
    auto& g = a->ensure_grad();
    detail::permute_copy<T>(self.grad, g, inv, true);
  });
}

// Generic slice: out = a[start[d] .. start[d]+size[d]) per dim.
template <class T>
VarT<T> slice(const VarT<T>& a, std::vector<int> start, std::vector<int> size) {
  const auto& ishape = a->val.shape();
  require(start.size() == ishape.size() && size.size() == ishape.size(), "slice: rank mismatch");
  for (std::size_t d = 0; d < start.size(); ++d)
    require(start[d] >= 0 && size[d] >= 0 && start[d] + size[d] <= ishape[d], "slice: out of range");
  TensorT<T> out(size);
  const auto istr = detail::strides_of(ishape);
  const int r = static_cast<int>(ishape.size());
  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  for (std::int64_t io = 0; io < out.numel(); ++io) {
    std::int64_t ii = 0;
    for (int d = 0; d < r; ++d) ii += (start[static_cast<std::size_t>(d)] + idx[static_cast<std::size_t>(d)]) * istr[static_cast<std::size_t>(d)];
    out[io] = a->val[ii];
    for (int d = r - 1; d >= 0; --d) {
      auto du = static_cast<std::size_t>(d);
      if (++idx[du] < size[du]) break;
      idx[du] = 0;
    }
  }
  return make_op(std::move(out), {a}, [a, start, size](NodeT<T>& self) {
    auto& g = a->ensure_grad();
    const auto istr = detail::strides_of(a->val.shape());
    const int r = static_cast<int>(start.size());
    std::vector<int> idx(static_cast<std::size_t>(r), 0);
    for (std::int64_t io = 0; io < self.grad.numel(); ++io) {
      std::int64_t ii = 0;
      for (int d = 0; d < r; ++d) ii += (start[static_cast<std::size_t>(d)] + idx[static_cast<std::size_t>(d)]) * istr[static_cast<std::size_t>(d)];
      g[ii] += self.grad[io];
      for (int d = r - 1; d >= 0; --d) {
        auto du = static_cast<std::size_t>(d);
        if (++idx[du] < size[du]) break;
        idx[du] = 0;
      }
    }
  });
}

// Concatenate two rank-5 tensors along the channel axis (dim 1).
template <class T>
VarT<T> concat_channels(const VarT<T>& a, const VarT<T>& b) {
  const auto& sa = a->val.shape();
  const auto& sb = b->val.shape();
  require(sa.size() == 5 && sb.size() == 5, "concat_channels: rank-5 expected");
  for (int d = 0; d < 5; ++d)
    require(d == 1 || sa[static_cast<std::size_t>(d)] == sb[static_cast<std::size_t>(d)], "concat_channels: shape mismatch");
  std::vector<int> os = sa;
  os[1] = sa[1] + sb[1];
  TensorT<T> out(os);
  const std::int64_t inner = static_cast<std::int64_t>(sa[2]) * sa[3] * sa[4];
  for (int bi = 0; bi < sa[0]; ++bi) {
    T* dst = out.data() + static_cast<std::int64_t>(bi) * os[1] * inner;
    std::memcpy(dst, a->val.data() + static_cast<std::int64_t>(bi) * sa[1] * inner,
                sizeof(T) * static_cast<std::size_t>(sa[1] * inner));
    std::memcpy(dst + static_cast<std::int64_t>(sa[1]) * inner,
                b->val.data() + static_cast<std::int64_t>(bi) * sb[1] * inner,
                sizeof(T) * static_cast<std::size_t>(sb[1] * inner));
  }
  return make_op(std::move(out), {a, b}, [a, b, inner](NodeT<T>& self) {
    const auto& sa = a->val.shape();
    const auto& sb = b->val.shape();
    const int oc = sa[1] + sb[1];
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (int bi = 0; bi < sa[0]; ++bi) {
        const T* src = self.grad.data() + static_cast<std::int64_t>(bi) * oc * inner;
        T* dst = g.data() + static_cast<std::int64_t>(bi) * sa[1] * inner;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(sa[1]) * inner; ++i) dst[i] += src[i];
      }
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (int bi = 0; bi < sb[0]; ++bi) {
        const T* src = self.grad.data() + static_cast<std::int64_t>(bi) * oc * inner + static_cast<std::int64_t>(sa[1]) * inner;
        T* dst = g.data() + static_cast<std::int64_t>(bi) * sb[1] * inner;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(sb[1]) * inner; ++i) dst[i] += src[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

// [M,K] x [K,N] -> [M,N]
template <class T>
VarT<T> matmul(const VarT<T>& a, const VarT<T>& b) {
  require(a->val.rank() == 2 && b->val.rank() == 2, "matmul: rank-2 expected");
  const int m = a->val.dim(0), k = a->val.dim(1), n = b->val.dim(1);
  require(b->val.dim(0) == k, "matmul: inner dim mismatch");
  TensorT<T> out({m, n});
  gemm(a->val.data(), b->val.data(), out.data(), m, k, n);
  return make_op(std::move(out), {a, b}, [a, b, m, k, n](NodeT<T>& self) {
    if (a->requires_grad)
      gemm(self.grad.data(), b->val.data(), a->ensure_grad().data(), m, n, k, true, false, true);
    if (b->requires_grad)
      gemm(a->val.data(), self.grad.data(), b->ensure_grad().data(), k, m, n, true, true, false);
  });
}

// x[N,Ci] * w[Co,Ci]^T + bias -> [N,Co]; the dense layer primitive.
template <class T>
VarT<T> linear(const VarT<T>& x, const VarT<T>& w, const VarT<T>& bias) {
  require(x->val.rank() == 2 && w->val.rank() == 2, "linear: rank-2 expected");
  const int n = x->val.dim(0), ci = x->val.dim(1), co = w->val.dim(0);
  require(w->val.dim(1) == ci, "linear: input width mismatch");
  const bool has_bias = bias && bias->val.numel() > 0;
  if (has_bias) require(bias->val.numel() == co, "linear: bias size mismatch");
  TensorT<T> out({n, co});
  gemm(x->val.data(), w->val.data(), out.data(), n, ci, co, false, false, true);
  if (has_bias)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < co; ++j) out[static_cast<std::int64_t>(i) * co + j] += bias->val[j];
  std::vector<VarT<T>> parents = {x, w};
  if (has_bias) parents.push_back(bias);
  return make_op(std::move(out), std::move(parents), [x, w, bias, has_bias, n, ci, co](NodeT<T>& self) {
    if (x->requires_grad)
      gemm(self.grad.data(), w->val.data(), x->ensure_grad().data(), n, co, ci, true);
    if (w->requires_grad)
      gemm(self.grad.data(), x->val.data(), w->ensure_grad().data(), co, n, ci, true, true, false);
    if (has_bias && bias->requires_grad) {
      auto& g = bias->ensure_grad();
      for (int j = 0; j < co; ++j) {
        double s = 0;
        for (int i = 0; i < n; ++i) s += self.grad[static_cast<std::int64_t>(i) * co + j];
        g[j] += static_cast<T>(s);
      }
    }
  });
}

// Batched matmul: [G,M,K] x [G,K,N] -> [G,M,N]; optional transpose of b ([G,N,K]).
template <class T>
VarT<T> bmm(const VarT<T>& a, const VarT<T>& b, bool trans_b = false) {
  require(a->val.rank() == 3 && b->val.rank() == 3, "bmm: rank-3 expected");
  const int g = a->val.dim(0), m = a->val.dim(1), k = a->val.dim(2);
  const int n = trans_b ? b->val.dim(1) : b->val.dim(2);
  require(b->val.dim(0) == g && (trans_b ? b->val.dim(2) : b->val.dim(1)) == k,
          "bmm: shape mismatch");
  TensorT<T> out({g, m, n});
  const std::int64_t sa = static_cast<std::int64_t>(m) * k, sb = static_cast<std::int64_t>(k) * n,
                     so = static_cast<std::int64_t>(m) * n;
  for (int i = 0; i < g; ++i)
    gemm(a->val.data() + i * sa, b->val.data() + i * sb, out.data() + i * so, m, k, n, false, false,
         trans_b);
  return make_op(std::move(out), {a, b}, [a, b, trans_b, g, m, k, n, sa, sb, so](NodeT<T>& self) {
    for (int i = 0; i < g; ++i) {
      const T* go = self.grad.data() + i * so;
      if (a->requires_grad) {
        // dA = dY * op(B)^T
        gemm(go, b->val.data() + i * sb, a->ensure_grad().data() + i * sa, m, n, k, true, false,
             !trans_b);
      }
      if (b->requires_grad) {
        T* gb = b->ensure_grad().data() + i * sb;
        if (trans_b)  // B stored [N,K]; dB = dY^T * A
          gemm(go, a->val.data() + i * sa, gb, n, m, k, true, true, false);
        else  // dB = A^T * dY
          gemm(a->val.data() + i * sa, go, gb, k, m, n, true, true, false);
      }
    }
  });
}

// Softmax over the last dimension.
template <class T>
VarT<T> softmax_last(const VarT<T>& a) {
  const int last = a->val.dim(a->val.rank() - 1);
  const std::int64_t rows = a->val.numel() / last;
  TensorT<T> out(a->val.shape());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows > 64)
#endif
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* x = a->val.data() + r * last;
    T* y = out.data() + r * last;
    T mx = x[0];
    for (int i = 1; i < last; ++i) mx = std::max(mx, x[i]);
    double s = 0;
    for (int i = 0; i < last; ++i) {
      y[i] = std::exp(x[i] - mx);
      s += y[i];
    }
    const T inv = static_cast<T>(1.0 / s);
    for (int i = 0; i < last; ++i) y[i] *= inv;
  }
  TensorT<T> saved = out;
  return make_op(std::move(out), {a}, [a, saved = std::move(saved), last, rows](NodeT<T>& self) {
    auto& g = a->ensure_grad();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows > 64)
#endif
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* y = saved.data() + r * last;
      const T* go = self.grad.data() + r * last;
      double dot = 0;
      for (int i = 0; i < last; ++i) dot += static_cast<double>(go[i]) * y[i];
      for (int i = 0; i < last; ++i)
        g[r * last + i] += y[i] * (go[i] - static_cast<T>(dot));
    }
  });
}

// Numerically stable mean binary cross-entropy between logits and {0,1} targets.
template <class T>
VarT<T> bce_with_logits(const VarT<T>& logits, const TensorT<T>& targets) {
  require(logits->val.same_shape(targets), "bce_with_logits: shape mismatch");
  const std::int64_t n = logits->val.numel();
  const double acc = detail::chunked_sum<T>(n, [&](std::int64_t i) {
    const double x = logits->val[i];
    const double t = targets[i];
    return std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  });
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
  return make_op(std::move(out), {logits}, [logits, targets, n](NodeT<T>& self) {
    auto& g = logits->ensure_grad();
    const double gv = self.grad[0] / static_cast<double>(n);
    detail::par_for(n, [&](std::int64_t i) {
      const double x = logits->val[i];
      const double sig = 1.0 / (1.0 + std::exp(-x));
      g[i] += static_cast<T>(gv * (sig - targets[i]));
    });
  });
}

}  // namespace lvmark::nn
