#pragma once

// Channel statistics (Eq. (1)-(2)) and AdaIN-style statistic replacement
// (Eq. (3)). Statistics are per instance and per channel over the spatial
// axes; variance uses the population convention (divide by N).

#include "advstyle/ops.hpp"
#include "advstyle/tensor.hpp"

namespace advstyle {

template <typename T>
struct ChannelStats {
  Tensor<T> mu;     // B x C
  Tensor<T> sigma;  // B x C, non-negative
};

template <typename T>
ChannelStats<T> channel_stats(const Tensor<T>& x) {
  if (x.ndim() != 4)
    throw ShapeError("channel_stats: expected B x C x H x W, got " + shape_str(x.shape()));
  ChannelStats<T> s;
  s.mu = mean_trailing(x, 2);
  s.sigma = sqrt_t(var_trailing(x, 2));
  return s;
}

// x_t = target_sigma * (x - mu(x)) / sigma(x) + target_mu. To keep the
// division defined for constant channels, sigma(x) is floored at eps_floor;
// for any channel with sigma >= eps_floor the normalization is exact, so
// replacing a feature's statistics with its own is an identity.
template <typename T>
Tensor<T> adain_replace(const Tensor<T>& x, const Tensor<T>& target_mu,
                        const Tensor<T>& target_sigma, T eps_floor = T(1e-6)) {
  if (eps_floor <= T(0)) throw ValueError("adain_replace: eps_floor must be positive");
  ChannelStats<T> s = channel_stats(x);
  require_shape(target_mu.shape() == s.mu.shape(), "adain_replace target_mu", target_mu.shape(),
                s.mu.shape());
  require_shape(target_sigma.shape() == s.sigma.shape(), "adain_replace target_sigma",
                target_sigma.shape(), s.sigma.shape());
  const Shape bc11{x.shape()[0], x.shape()[1], std::size_t{1}, std::size_t{1}};
  Tensor<T> normed =
      div(sub(x, reshape(s.mu, bc11)), reshape(clamp_min(s.sigma, eps_floor), bc11));
  return add(mul(normed, reshape(target_sigma, bc11)), reshape(target_mu, bc11));
}

}  // namespace advstyle
