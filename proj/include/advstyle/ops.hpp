#pragma once

// Differentiable tensor operations. Broadcasting is positional (shapes align
// at the trailing axis, the smaller operand may carry 1s) and deliberately
// restricted to the two layouts the models actually use: trailing size-1 axes
// (per-instance/per-channel stats expanded over spatial positions, e.g.
// B x C x 1 x 1 against B x C x H x W) and leading size-1 axes (per-channel
// vectors tiled under batch axes, e.g. C against B x C). Scalars are the
// degenerate case of both. Anything else is a ShapeError, never a silent
// expansion.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "advstyle/tensor.hpp"

namespace advstyle {

namespace detail {

enum class BcKind { same, block, tile };

struct BcPlan {
  BcKind kind = BcKind::same;
  bool small_is_rhs = true;
  std::size_t nsmall = 0;  // elements of the smaller operand
  std::size_t block = 0;   // block: contiguous run per small element
  std::size_t rep = 0;     // tile: repeat count of the small operand
};

// Aligns shapes at the trailing axis (the smaller operand is padded with
// leading 1s) and classifies which contiguous layout the broadcast maps to:
//   block - size-1 axes trail the matched axes (stats over spatial positions)
//   tile  - size-1 axes lead the matched axes (channel vectors under a batch)
// Size-1 axes anywhere else have no contiguous layout and are rejected.
inline BcPlan broadcast_plan(const char* op, const Shape& a, const Shape& b) {
  BcPlan p;
  if (a == b) {
    p.kind = BcKind::same;
    p.nsmall = shape_numel(a);
    return p;
  }
  const std::size_t na = shape_numel(a), nb = shape_numel(b);
  p.small_is_rhs = nb < na || (nb == na && b.size() <= a.size());
  const Shape& small = p.small_is_rhs ? b : a;
  const Shape& big = p.small_is_rhs ? a : b;
  p.nsmall = shape_numel(small);
  const std::size_t nbig = shape_numel(big);
  const auto reject = [&] {
    throw ShapeError(std::string(op) + ": unsupported broadcast " + shape_str(a) + " vs " +
                     shape_str(b));
  };
  if (small.size() > big.size()) reject();
  Shape ps(big.size(), std::size_t{1});
  std::copy(small.begin(), small.end(), ps.end() - static_cast<std::ptrdiff_t>(small.size()));
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps[i] != big[i] && ps[i] != 1) reject();
  if (p.nsmall == 1) {
    p.kind = BcKind::block;
    p.block = nbig;
    return p;
  }
  std::size_t t = ps.size();
  while (t > 0 && ps[t - 1] == 1) --t;
  if (std::equal(ps.begin(), ps.begin() + static_cast<std::ptrdiff_t>(t), big.begin())) {
    p.kind = BcKind::block;
    p.block = nbig / p.nsmall;
    return p;
  }
  std::size_t f = 0;
  while (f < ps.size() && ps[f] == 1) ++f;
  if (std::equal(ps.begin() + static_cast<std::ptrdiff_t>(f), ps.end(),
                 big.begin() + static_cast<std::ptrdiff_t>(f))) {
    p.kind = BcKind::tile;
    p.rep = nbig / p.nsmall;
    return p;
  }
  reject();
  return p;  // unreachable
}

// Generic broadcast binary op. FwdFn(a,b)->v; DaFn/DbFn(g,a,b)->grad
// contribution for the respective operand.
template <typename T, typename FwdFn, typename DaFn, typename DbFn>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, FwdFn fwd, DaFn da,
                    DbFn db) {
  const BcPlan plan = broadcast_plan(name, a.shape(), b.shape());
  const Shape& out_shape = plan.small_is_rhs ? a.shape() : b.shape();
  const std::size_t n = shape_numel(out_shape);
  std::vector<T> out(n);
  const T* pa = a.data().data();
  const T* pb = b.data().data();

  switch (plan.kind) {
    case BcKind::same:
      for (std::size_t i = 0; i < n; ++i) out[i] = fwd(pa[i], pb[i]);
      break;
    case BcKind::block: {
      const std::size_t ns = plan.nsmall, blk = plan.block;
      if (plan.small_is_rhs) {
        for (std::size_t s = 0; s < ns; ++s) {
          const T bv = pb[s];
          const T* ai = pa + s * blk;
          T* oi = out.data() + s * blk;
          for (std::size_t j = 0; j < blk; ++j) oi[j] = fwd(ai[j], bv);
        }
      } else {
        for (std::size_t s = 0; s < ns; ++s) {
          const T av = pa[s];
          const T* bi = pb + s * blk;
          T* oi = out.data() + s * blk;
          for (std::size_t j = 0; j < blk; ++j) oi[j] = fwd(av, bi[j]);
        }
      }
      break;
    }
    case BcKind::tile: {
      const std::size_t ns = plan.nsmall, rep = plan.rep;
      if (plan.small_is_rhs) {
        for (std::size_t r = 0; r < rep; ++r) {
          const T* ai = pa + r * ns;
          T* oi = out.data() + r * ns;
          for (std::size_t j = 0; j < ns; ++j) oi[j] = fwd(ai[j], pb[j]);
        }
      } else {
        for (std::size_t r = 0; r < rep; ++r) {
          const T* bi = pb + r * ns;
          T* oi = out.data() + r * ns;
          for (std::size_t j = 0; j < ns; ++j) oi[j] = fwd(pa[j], bi[j]);
        }
      }
      break;
    }
  }

  auto an = a.node();
  auto bn = b.node();
  return Tensor<T>::make_op(
      out_shape, std::move(out), name, {an, bn}, [an, bn, plan, da, db](Node<T>& node) {
        const T* g = node.grad.data();
        const T* pa = an->data.data();
        const T* pb = bn->data.data();
        const std::size_t n = node.data.size();
        T* ga = nullptr;
        T* gb = nullptr;
        if (an->requires_grad) {
          an->ensure_grad();
          ga = an->grad.data();
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          gb = bn->grad.data();
        }
        switch (plan.kind) {
          case BcKind::same:
            for (std::size_t i = 0; i < n; ++i) {
              if (ga) ga[i] += da(g[i], pa[i], pb[i]);
              if (gb) gb[i] += db(g[i], pa[i], pb[i]);
            }
            break;
          case BcKind::block: {
            const std::size_t ns = plan.nsmall, blk = plan.block;
            if (plan.small_is_rhs) {
              for (std::size_t s = 0; s < ns; ++s) {
                const T bv = pb[s];
                const T* ai = pa + s * blk;
                const T* gi = g + s * blk;
                if (ga) {
                  T* gai = ga + s * blk;
                  for (std::size_t j = 0; j < blk; ++j) gai[j] += da(gi[j], ai[j], bv);
                }
                if (gb) {
                  T acc = T(0);
                  for (std::size_t j = 0; j < blk; ++j) acc += db(gi[j], ai[j], bv);
                  gb[s] += acc;
                }
              }
            } else {
              for (std::size_t s = 0; s < ns; ++s) {
                const T av = pa[s];
                const T* bi = pb + s * blk;
                const T* gi = g + s * blk;
                if (ga) {
                  T acc = T(0);
                  for (std::size_t j = 0; j < blk; ++j) acc += da(gi[j], av, bi[j]);
                  ga[s] += acc;
                }
                if (gb) {
                  T* gbi = gb + s * blk;
                  for (std::size_t j = 0; j < blk; ++j) gbi[j] += db(gi[j], av, bi[j]);
                }
              }
            }
            break;
          }
          case BcKind::tile: {
            const std::size_t ns = plan.nsmall, rep = plan.rep;
            if (plan.small_is_rhs) {
              for (std::size_t r = 0; r < rep; ++r) {
                const T* ai = pa + r * ns;
                const T* gi = g + r * ns;
                if (ga) {
                  T* gai = ga + r * ns;
                  for (std::size_t j = 0; j < ns; ++j) gai[j] += da(gi[j], ai[j], pb[j]);
                }
                if (gb)
                  for (std::size_t j = 0; j < ns; ++j) gb[j] += db(gi[j], ai[j], pb[j]);
              }
            } else {
              for (std::size_t r = 0; r < rep; ++r) {
                const T* bi = pb + r * ns;
                const T* gi = g + r * ns;
                if (ga)
                  for (std::size_t j = 0; j < ns; ++j) ga[j] += da(gi[j], pa[j], bi[j]);
                if (gb) {
                  T* gbi = gb + r * ns;
                  for (std::size_t j = 0; j < ns; ++j) gbi[j] += db(gi[j], pa[j], bi[j]);
                }
              }
            }
            break;
          }
        }
      });
}

// C[M,N] += A[M,K] * B[K,N], saxpy form: deterministic and vectorizable.
template <typename T>
void gemm_nn_acc(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    T* c = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = a[k];
      const T* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M,K] += A[M,N] * B[K,N]^T (dot products over N).
template <typename T>
void gemm_nt_acc(const T* A, const T* B, T* C, std::size_t M, std::size_t N, std::size_t K) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * N;
    T* c = C + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T* b = B + k * N;
      T s = T(0);
      for (std::size_t j = 0; j < N; ++j) s += a[j] * b[j];
      c[k] += s;
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N].
template <typename T>
void gemm_tn_acc(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    const T* b = B + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = a[k];
      T* c = C + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      "add", a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
      [](T g, T x, T) { return g * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  for (T v : b.data())
    if (v == T(0)) throw ValueError("div: division by exact zero");
  return detail::binary_op(
      "div", a, b, [](T x, T y) { return x / y; }, [](T g, T, T y) { return g / y; },
      [](T g, T x, T y) { return -g * x / (y * y); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.data());
  for (T& v : out) v += c;
  auto an = a.node();
  return Tensor<T>::make_op(a.shape(), std::move(out), "add_scalar", {an}, [an](Node<T>& node) {
    an->ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i) an->grad[i] += node.grad[i];
  });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.data());
  for (T& v : out) v *= c;
  auto an = a.node();
  return Tensor<T>::make_op(a.shape(), std::move(out), "mul_scalar", {an}, [an, c](Node<T>& node) {
    an->ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i) an->grad[i] += c * node.grad[i];
  });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul_scalar(a, T(-1));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.data());
  for (T& v : out) v = v > T(0) ? v : T(0);
  auto an = a.node();
  return Tensor<T>::make_op(a.shape(), std::move(out), "relu", {an}, [an](Node<T>& node) {
    an->ensure_grad();
    const T* x = an->data.data();
    for (std::size_t i = 0; i < node.grad.size(); ++i)
      if (x[i] > T(0)) an->grad[i] += node.grad[i];  // derivative at 0 is 0
  });
}

// Elementwise square root. Negative input is a domain error; the derivative
// at exactly 0 is defined as 0 (subgradient floor, like relu at 0) so that
// constant channels with zero variance do not poison gradients.
template <typename T>
Tensor<T> sqrt_t(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a.data()[i] < T(0)) throw ValueError("sqrt: negative input");
    out[i] = std::sqrt(a.data()[i]);
  }
  auto an = a.node();
  return Tensor<T>::make_op(a.shape(), std::move(out), "sqrt", {an}, [an](Node<T>& node) {
    an->ensure_grad();
    const T* y = node.data.data();
    for (std::size_t i = 0; i < node.grad.size(); ++i)
      if (y[i] > T(0)) an->grad[i] += node.grad[i] * T(0.5) / y[i];
  });
}

// max(x, lo) elementwise; gradient passes only where x > lo.
template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T lo) {
  std::vector<T> out(a.data());
  for (T& v : out) v = v > lo ? v : lo;
  auto an = a.node();
  return Tensor<T>::make_op(a.shape(), std::move(out), "clamp_min", {an},
                            [an, lo](Node<T>& node) {
                              an->ensure_grad();
                              const T* x = an->data.data();
                              for (std::size_t i = 0; i < node.grad.size(); ++i)
                                if (x[i] > lo) an->grad[i] += node.grad[i];
                            });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  auto an = a.node();
  return Tensor<T>::make_op(std::move(shape), a.data(), "reshape", {an}, [an](Node<T>& node) {
    an->ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i) an->grad[i] += node.grad[i];
  });
}

// Materializes `a` broadcast up to `target` under the prefix/suffix rules.
template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& a, const Shape& target) {
  Tensor<T> anchor = Tensor<T>::zeros(target);
  return add(anchor, a);
}

// Sum of all elements -> scalar (shape {}).
template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  auto an = a.node();
  return Tensor<T>::make_op(Shape{}, {acc}, "sum_all", {an}, [an](Node<T>& node) {
    an->ensure_grad();
    const T g = node.grad[0];
    for (T& gv : an->grad) gv += g;
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return mul_scalar(sum_all(a), T(1) / static_cast<T>(a.size()));
}

namespace detail {
template <typename T>
Tensor<T> reduce_trailing(const Tensor<T>& a, std::size_t keep, bool mean, const char* name) {
  if (keep >= a.ndim())
    throw ShapeError(std::string(name) + ": keep=" + std::to_string(keep) +
                     " must be below rank of " + shape_str(a.shape()));
  Shape out_shape(a.shape().begin(), a.shape().begin() + keep);
  const std::size_t ns = shape_numel(out_shape);
  const std::size_t blk = a.size() / ns;
  const T scale = mean ? T(1) / static_cast<T>(blk) : T(1);
  std::vector<T> out(ns);
  const T* x = a.data().data();
  for (std::size_t s = 0; s < ns; ++s) {
    T acc = T(0);
    const T* xi = x + s * blk;
    for (std::size_t j = 0; j < blk; ++j) acc += xi[j];
    out[s] = acc * scale;
  }
  auto an = a.node();
  return Tensor<T>::make_op(std::move(out_shape), std::move(out), name, {an},
                            [an, ns, blk, scale](Node<T>& node) {
                              an->ensure_grad();
                              for (std::size_t s = 0; s < ns; ++s) {
                                const T g = node.grad[s] * scale;
                                T* gi = an->grad.data() + s * blk;
                                for (std::size_t j = 0; j < blk; ++j) gi[j] += g;
                              }
                            });
}
}  // namespace detail

// Sum / mean over all trailing axes beyond the first `keep`.
template <typename T>
Tensor<T> sum_trailing(const Tensor<T>& a, std::size_t keep) {
  return detail::reduce_trailing(a, keep, false, "sum_trailing");
}

template <typename T>
Tensor<T> mean_trailing(const Tensor<T>& a, std::size_t keep) {
  return detail::reduce_trailing(a, keep, true, "mean_trailing");
}

// Population variance over trailing axes (divide by N, Eq. (2) convention).
template <typename T>
Tensor<T> var_trailing(const Tensor<T>& a, std::size_t keep) {
  Shape keep_ones = a.shape();
  std::fill(keep_ones.begin() + static_cast<std::ptrdiff_t>(keep), keep_ones.end(),
            std::size_t{1});
  Tensor<T> m = reshape(mean_trailing(a, keep), keep_ones);
  Tensor<T> d = sub(a, m);
  return mean_trailing(mul(d, d), keep);
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0])
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const std::size_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
  std::vector<T> out(M * N, T(0));
  detail::gemm_nn_acc(a.data().data(), b.data().data(), out.data(), M, K, N);
  auto an = a.node();
  auto bn = b.node();
  return Tensor<T>::make_op(Shape{M, N}, std::move(out), "matmul", {an, bn},
                            [an, bn, M, K, N](Node<T>& node) {
                              const T* g = node.grad.data();
                              if (an->requires_grad) {
                                an->ensure_grad();
                                detail::gemm_nt_acc(g, bn->data.data(), an->grad.data(), M, N, K);
                              }
                              if (bn->requires_grad) {
                                bn->ensure_grad();
                                detail::gemm_tn_acc(an->data.data(), g, bn->grad.data(), M, K, N);
                              }
                            });
}

// Gathers rows of the leading axis: out[i] = a[perm[i]].
template <typename T>
Tensor<T> permute_rows(const Tensor<T>& a, const std::vector<std::size_t>& perm) {
  if (a.ndim() < 1) throw ShapeError("permute_rows: rank-0 tensor");
  const std::size_t B = a.shape()[0];
  if (perm.size() != B)
    throw ValueError("permute_rows: permutation length " + std::to_string(perm.size()) +
                     " does not match leading axis " + std::to_string(B));
  std::vector<bool> seen(B, false);
  for (std::size_t p : perm) {
    if (p >= B || seen[p]) throw ValueError("permute_rows: not a permutation");
    seen[p] = true;
  }
  const std::size_t blk = a.size() / B;
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < B; ++i)
    std::copy_n(a.data().data() + perm[i] * blk, blk, out.data() + i * blk);
  auto an = a.node();
  return Tensor<T>::make_op(a.shape(), std::move(out), "permute_rows", {an},
                            [an, perm, B, blk](Node<T>& node) {
                              an->ensure_grad();
                              for (std::size_t i = 0; i < B; ++i) {
                                const T* g = node.grad.data() + i * blk;
                                T* dst = an->grad.data() + perm[i] * blk;
                                for (std::size_t j = 0; j < blk; ++j) dst[j] += g[j];
                              }
                            });
}

// Gradient reverse layer: identity forward, -lambda * upstream backward.
template <typename T>
Tensor<T> grl(const Tensor<T>& a, T lambda) {
  if (lambda < T(0)) throw ValueError("grl: lambda must be non-negative");
  auto an = a.node();
  return Tensor<T>::make_op(a.shape(), a.data(), "grl", {an}, [an, lambda](Node<T>& node) {
    an->ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i) an->grad[i] -= lambda * node.grad[i];
  });
}

// Mean cross-entropy with a numerically stable fused log-softmax.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2)
    throw ShapeError("softmax_cross_entropy: logits must be 2-D, got " + shape_str(logits.shape()));
  const std::size_t B = logits.shape()[0], K = logits.shape()[1];
  if (labels.size() != B)
    throw ValueError("softmax_cross_entropy: batch " + std::to_string(B) + " vs labels " +
                     std::to_string(labels.size()));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= K)
      throw ValueError("softmax_cross_entropy: label " + std::to_string(y) + " out of range");

  const T* z = logits.data().data();
  T total = T(0);
  for (std::size_t i = 0; i < B; ++i) {
    const T* zi = z + i * K;
    T m = zi[0];
    for (std::size_t k = 1; k < K; ++k) m = std::max(m, zi[k]);
    T se = T(0);
    for (std::size_t k = 0; k < K; ++k) se += std::exp(zi[k] - m);
    total += m + std::log(se) - zi[labels[i]];
  }
  total /= static_cast<T>(B);

  auto ln = logits.node();
  return Tensor<T>::make_op(Shape{}, {total}, "softmax_cross_entropy", {ln},
                            [ln, labels, B, K](Node<T>& node) {
                              ln->ensure_grad();
                              const T g = node.grad[0] / static_cast<T>(B);
                              const T* z = ln->data.data();
                              T* gz = ln->grad.data();
                              for (std::size_t i = 0; i < B; ++i) {
                                const T* zi = z + i * K;
                                T m = zi[0];
                                for (std::size_t k = 1; k < K; ++k) m = std::max(m, zi[k]);
                                T se = T(0);
                                for (std::size_t k = 0; k < K; ++k) se += std::exp(zi[k] - m);
                                for (std::size_t k = 0; k < K; ++k) {
                                  T p = std::exp(zi[k] - m) / se;
                                  gz[i * K + k] +=
                                      g * (p - (static_cast<std::size_t>(labels[i]) == k ? T(1)
                                                                                         : T(0)));
                                }
                              }
                            });
}

// Row-wise argmax (no gradient), for accuracy computations.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& t) {
  if (t.ndim() != 2) throw ShapeError("argmax_rows: expected 2-D tensor");
  const std::size_t B = t.shape()[0], K = t.shape()[1];
  std::vector<int> out(B);
  for (std::size_t i = 0; i < B; ++i) {
    const T* row = t.data().data() + i * K;
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (row[k] > row[best]) best = k;
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace advstyle
