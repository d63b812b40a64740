#pragma once

// Spatial ops for B x C x H x W tensors: stride-1 zero-padded convolution via
// im2col + the saxpy GEMM kernels, 2x2 max pooling with argmax memo, and
// global average pooling.

#include <vector>

#include "advstyle/ops.hpp"
#include "advstyle/tensor.hpp"

namespace advstyle {

namespace detail {

// col is (C*kh*kw) x (H*W) for one image, with zero padding `pad`.
template <typename T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
            std::size_t kw, std::size_t pad, T* col) {
  const std::size_t HW = H * W;
  std::size_t row = 0;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t di = 0; di < kh; ++di) {
      for (std::size_t dj = 0; dj < kw; ++dj, ++row) {
        T* out = col + row * HW;
        const std::ptrdiff_t oi = static_cast<std::ptrdiff_t>(di) - static_cast<std::ptrdiff_t>(pad);
        const std::ptrdiff_t oj = static_cast<std::ptrdiff_t>(dj) - static_cast<std::ptrdiff_t>(pad);
        for (std::size_t i = 0; i < H; ++i) {
          const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i) + oi;
          T* orow = out + i * W;
          if (si < 0 || si >= static_cast<std::ptrdiff_t>(H)) {
            for (std::size_t j = 0; j < W; ++j) orow[j] = T(0);
            continue;
          }
          const T* xrow = x + c * HW + static_cast<std::size_t>(si) * W;
          for (std::size_t j = 0; j < W; ++j) {
            const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j) + oj;
            orow[j] = (sj < 0 || sj >= static_cast<std::ptrdiff_t>(W))
                          ? T(0)
                          : xrow[static_cast<std::size_t>(sj)];
          }
        }
      }
    }
  }
}

// Scatter-add of a col buffer back into an image gradient.
template <typename T>
void col2im_acc(const T* col, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
                std::size_t kw, std::size_t pad, T* gx) {
  const std::size_t HW = H * W;
  std::size_t row = 0;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t di = 0; di < kh; ++di) {
      for (std::size_t dj = 0; dj < kw; ++dj, ++row) {
        const T* in = col + row * HW;
        const std::ptrdiff_t oi = static_cast<std::ptrdiff_t>(di) - static_cast<std::ptrdiff_t>(pad);
        const std::ptrdiff_t oj = static_cast<std::ptrdiff_t>(dj) - static_cast<std::ptrdiff_t>(pad);
        for (std::size_t i = 0; i < H; ++i) {
          const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i) + oi;
          if (si < 0 || si >= static_cast<std::ptrdiff_t>(H)) continue;
          T* grow = gx + c * HW + static_cast<std::size_t>(si) * W;
          const T* irow = in + i * W;
          for (std::size_t j = 0; j < W; ++j) {
            const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j) + oj;
            if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(W)) continue;
            grow[static_cast<std::size_t>(sj)] += irow[j];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Stride-1 convolution with symmetric zero padding; bias is per output
// channel. x: B x C x H x W, w: O x C x kh x kw, bias: O.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t pad) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw ShapeError("conv2d: expected 4-D input and weight, got " + shape_str(x.shape()) +
                     " and " + shape_str(w.shape()));
  const std::size_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t O = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  require_shape(w.shape()[1] == C, "conv2d", x.shape(), w.shape());
  require_shape(bias.ndim() == 1 && bias.shape()[0] == O, "conv2d bias", bias.shape(), w.shape());
  if (kh > H + 2 * pad || kw > W + 2 * pad)
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " exceeds padded input " +
                     shape_str(x.shape()));

  const std::size_t HW = H * W;
  const std::size_t CKK = C * kh * kw;
  std::vector<T> out(B * O * HW);
  std::vector<T> col(CKK * HW);
  const T* px = x.data().data();
  const T* pw = w.data().data();
  const T* pb = bias.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    detail::im2col(px + b * C * HW, C, H, W, kh, kw, pad, col.data());
    T* ob = out.data() + b * O * HW;
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t j = 0; j < HW; ++j) ob[o * HW + j] = pb[o];
    detail::gemm_nn_acc(pw, col.data(), ob, O, CKK, HW);
  }

  auto xn = x.node();
  auto wn = w.node();
  auto bn = bias.node();
  return Tensor<T>::make_op(
      Shape{B, O, H, W}, std::move(out), "conv2d", {xn, wn, bn},
      [xn, wn, bn, B, C, H, W, O, kh, kw, pad](Node<T>& node) {
        const std::size_t HW = H * W;
        const std::size_t CKK = C * kh * kw;
        std::vector<T> col(CKK * HW);
        std::vector<T> gcol(CKK * HW);
        const T* g = node.grad.data();
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < O; ++o) {
              const T* gi = g + (b * O + o) * HW;
              T acc = T(0);
              for (std::size_t j = 0; j < HW; ++j) acc += gi[j];
              bn->grad[o] += acc;
            }
        }
        if (wn->requires_grad) wn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        for (std::size_t b = 0; b < B; ++b) {
          const T* gb = g + b * O * HW;
          if (wn->requires_grad || xn->requires_grad)
            detail::im2col(xn->data.data() + b * C * HW, C, H, W, kh, kw, pad, col.data());
          if (wn->requires_grad)
            detail::gemm_nt_acc(gb, col.data(), wn->grad.data(), O, HW, CKK);
          if (xn->requires_grad) {
            std::fill(gcol.begin(), gcol.end(), T(0));
            detail::gemm_tn_acc(wn->data.data(), gb, gcol.data(), O, CKK, HW);
            detail::col2im_acc(gcol.data(), C, H, W, kh, kw, pad,
                               xn->grad.data() + b * C * HW);
          }
        }
      });
}

// 2x2 max pooling with stride 2; first maximum wins on ties.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x) {
  if (x.ndim() != 4) throw ShapeError("maxpool2d: expected 4-D input, got " + shape_str(x.shape()));
  const std::size_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  if (H < 2 || W < 2)
    throw ShapeError("maxpool2d: spatial size underflow, input " + shape_str(x.shape()));
  const std::size_t Ho = H / 2, Wo = W / 2;
  const std::size_t BC = B * C;
  std::vector<T> out(BC * Ho * Wo);
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(BC * Ho * Wo);
  const T* px = x.data().data();
  for (std::size_t bc = 0; bc < BC; ++bc) {
    const T* xi = px + bc * H * W;
    T* oi = out.data() + bc * Ho * Wo;
    std::uint32_t* ai = argmax->data() + bc * Ho * Wo;
    for (std::size_t i = 0; i < Ho; ++i) {
      for (std::size_t j = 0; j < Wo; ++j) {
        const std::size_t base = (2 * i) * W + 2 * j;
        std::size_t best = base;
        T bv = xi[base];
        const std::size_t cands[3] = {base + 1, base + W, base + W + 1};
        for (std::size_t c : cands)
          if (xi[c] > bv) {
            bv = xi[c];
            best = c;
          }
        oi[i * Wo + j] = bv;
        ai[i * Wo + j] = static_cast<std::uint32_t>(best);
      }
    }
  }
  auto xn = x.node();
  return Tensor<T>::make_op(Shape{B, C, Ho, Wo}, std::move(out), "maxpool2d", {xn},
                            [xn, argmax, BC, H, W, Ho, Wo](Node<T>& node) {
                              xn->ensure_grad();
                              for (std::size_t bc = 0; bc < BC; ++bc) {
                                const T* g = node.grad.data() + bc * Ho * Wo;
                                const std::uint32_t* ai = argmax->data() + bc * Ho * Wo;
                                T* gx = xn->grad.data() + bc * H * W;
                                for (std::size_t p = 0; p < Ho * Wo; ++p) gx[ai[p]] += g[p];
                              }
                            });
}

// Global average pool: B x C x H x W -> B x C.
template <typename T>
Tensor<T> avgpool_global(const Tensor<T>& x) {
  if (x.ndim() != 4)
    throw ShapeError("avgpool_global: expected 4-D input, got " + shape_str(x.shape()));
  return mean_trailing(x, 2);
}

}  // namespace advstyle
