#pragma once

// The AdvStyle module (Eq. (8)-(10)) and the three statistics-perturbation
// baselines: pAdaIN (swap), MixStyle (interpolate), DSU (batch-estimated
// Gaussian). All of them are train-time only; in eval mode every forward
// here returns its input handle untouched.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "advstyle/random.hpp"
#include "advstyle/stats.hpp"

namespace advstyle {

enum class Mode { train, eval };

enum class AdvVariant { full, direction_only, intensity_only };

inline const char* variant_name(AdvVariant v) {
  switch (v) {
    case AdvVariant::full: return "full";
    case AdvVariant::direction_only: return "direction_only";
    case AdvVariant::intensity_only: return "intensity_only";
  }
  return "full";
}

inline AdvVariant variant_from_name(const std::string& s) {
  if (s == "full") return AdvVariant::full;
  if (s == "direction_only") return AdvVariant::direction_only;
  if (s == "intensity_only") return AdvVariant::intensity_only;
  throw ConfigError("unknown advstyle variant '" + s + "'");
}

// Verification controls threaded through forwards: freeze the Gaussian noise
// (either to explicit values or to a per-call reseeded stream) and/or replace
// the GRL with an identity. Used by the gradient-sign checks, the
// finite-difference oracles, and the iterative trainer (which handles the
// minimax signs explicitly instead of through the GRL).
template <typename T>
struct PerturbHooks {
  const std::vector<T>* frozen_eps_mu = nullptr;
  const std::vector<T>* frozen_eps_sigma = nullptr;
  std::optional<std::uint64_t> frozen_noise_seed;  // redraws identically on every call
  bool grl_identity = false;
};

// Learnable perturbation scales for one insertion point.
template <typename T>
struct AdvStyleState {
  Tensor<T> sigma_mu;     // length C, requires_grad
  Tensor<T> sigma_sigma;  // length C, requires_grad
  T lambda = T(5);
  AdvVariant variant = AdvVariant::full;

  // The full variant starts at Sigma = 0 (identity module, nonzero gradient).
  // direction_only instead learns a direction, which a zero vector cannot
  // represent; it starts at the uniform unit direction 1/sqrt(C). For
  // intensity_only only sigma_mu[0]/sigma_sigma[0] are used, as the learned
  // scalar intensities; they start at 0.
  static AdvStyleState init(std::size_t channels, AdvVariant variant, T lambda) {
    AdvStyleState st;
    st.lambda = lambda;
    st.variant = variant;
    T fill = T(0);
    if (variant == AdvVariant::direction_only)
      fill = T(1) / std::sqrt(static_cast<T>(channels));
    st.sigma_mu = Tensor<T>::full({channels}, fill, true);
    st.sigma_sigma = Tensor<T>::full({channels}, fill, true);
    return st;
  }
};

namespace detail {

// Population std over the batch axis of a B x C value matrix, computed
// outside the graph: the DSU scales are statistics, not parameters, and are
// never differentiated through.
template <typename T>
std::vector<T> batch_std(const std::vector<T>& v, std::size_t B, std::size_t C) {
  std::vector<T> out(C, T(0));
  for (std::size_t c = 0; c < C; ++c) {
    T mean = T(0);
    for (std::size_t b = 0; b < B; ++b) mean += v[b * C + c];
    mean /= static_cast<T>(B);
    T acc = T(0);
    for (std::size_t b = 0; b < B; ++b) {
      const T d = v[b * C + c] - mean;
      acc += d * d;
    }
    out[c] = std::sqrt(acc / static_cast<T>(B));
  }
  return out;
}

template <typename T>
Tensor<T> draw_eps(std::size_t B, std::size_t C, RngStream& rng, const std::vector<T>* frozen) {
  if (frozen) {
    if (frozen->size() != B * C)
      throw ValueError("frozen eps has wrong length " + std::to_string(frozen->size()));
    return Tensor<T>::from_data({B, C}, *frozen);
  }
  std::vector<T> e(B * C);
  for (T& v : e) v = static_cast<T>(rng.normal());
  return Tensor<T>::from_data({B, C}, std::move(e));
}

template <typename T>
Tensor<T> maybe_grl(const Tensor<T>& v, T lambda, bool identity) {
  return identity ? v : grl(v, lambda);
}

}  // namespace detail

// Projects the learned state onto the Table-5 ablation variants, given the
// DSU batch-estimated scale for the same insertion point. GRL wraps only the
// learned factor. Returns the effective length-C scale used by Eq. (4)-(5).
template <typename T>
Tensor<T> variant_project(const Tensor<T>& learned, AdvVariant variant,
                          const std::vector<T>& batch_sigma, T lambda, bool grl_identity) {
  const std::size_t C = learned.shape()[0];
  if (batch_sigma.size() != C)
    throw ShapeError("variant_project: batch scale length " + std::to_string(batch_sigma.size()) +
                     " vs C=" + std::to_string(C));
  T batch_norm = T(0);
  for (T v : batch_sigma) batch_norm += v * v;
  batch_norm = std::sqrt(batch_norm);

  if (variant == AdvVariant::direction_only) {
    T ln = T(0);
    for (T v : learned.data()) ln += v * v;
    ln = std::sqrt(ln);
    if (ln == T(0)) return Tensor<T>::from_data({C}, batch_sigma);  // fallback, no grad path
    Tensor<T> dir = div(learned, sqrt_t(sum_all(mul(learned, learned))));
    return mul_scalar(detail::maybe_grl(dir, lambda, grl_identity), batch_norm);
  }
  if (variant == AdvVariant::intensity_only) {
    std::vector<T> dir(C, T(0));
    if (batch_norm > T(0))
      for (std::size_t c = 0; c < C; ++c) dir[c] = batch_sigma[c] / batch_norm;
    // learned[0] carries the scalar intensity; its sign is immaterial because
    // the Gaussian noise it multiplies is symmetric.
    std::vector<T> mask(C, T(0));
    mask[0] = T(1);
    Tensor<T> s0 = sum_all(mul(detail::maybe_grl(learned, lambda, grl_identity),
                               Tensor<T>::from_data({C}, std::move(mask))));
    return mul(Tensor<T>::from_data({C}, std::move(dir)), s0);
  }
  throw ValueError("variant_project: called with variant=full");
}

// AdvStyle forward (Eq. (8)-(10)): perturb the channel statistics with
// learnable scales behind a gradient reversal layer, then re-style via
// AdaIN replacement. Fresh per-call noise of shape B x C.
template <typename T>
Tensor<T> advstyle_forward(const Tensor<T>& x, AdvStyleState<T>& state, Mode mode, RngStream& rng,
                           T eps_floor = T(1e-6), const PerturbHooks<T>* hooks = nullptr) {
  if (mode == Mode::eval) return x;
  const std::size_t B = x.shape()[0], C = x.shape()[1];
  ChannelStats<T> s = channel_stats(x);

  Tensor<T> eps_mu, eps_sigma;
  if (hooks && hooks->frozen_noise_seed) {
    RngStream frozen(*hooks->frozen_noise_seed);
    eps_mu = detail::draw_eps<T>(B, C, frozen, hooks->frozen_eps_mu);
    eps_sigma = detail::draw_eps<T>(B, C, frozen, hooks->frozen_eps_sigma);
  } else {
    eps_mu = detail::draw_eps<T>(B, C, rng, hooks ? hooks->frozen_eps_mu : nullptr);
    eps_sigma = detail::draw_eps<T>(B, C, rng, hooks ? hooks->frozen_eps_sigma : nullptr);
  }
  const bool grl_id = hooks && hooks->grl_identity;

  Tensor<T> scale_mu, scale_sigma;
  if (state.variant == AdvVariant::full) {
    scale_mu = detail::maybe_grl(state.sigma_mu, state.lambda, grl_id);
    scale_sigma = detail::maybe_grl(state.sigma_sigma, state.lambda, grl_id);
  } else {
    const std::vector<T> bs_mu = detail::batch_std(s.mu.data(), B, C);
    const std::vector<T> bs_sigma = detail::batch_std(s.sigma.data(), B, C);
    scale_mu = variant_project(state.sigma_mu, state.variant, bs_mu, state.lambda, grl_id);
    scale_sigma =
        variant_project(state.sigma_sigma, state.variant, bs_sigma, state.lambda, grl_id);
  }

  Tensor<T> mu_adv = add(s.mu, mul(eps_mu, scale_mu));
  Tensor<T> sigma_adv = add(s.sigma, mul(eps_sigma, scale_sigma));
  return adain_replace(x, mu_adv, sigma_adv, eps_floor);
}

// DSU: with probability p, perturb statistics with scales equal to the
// batch-wise standard deviations of mu and sigma (Gaussian estimated from
// the current mini-batch).
template <typename T>
Tensor<T> dsu_forward(const Tensor<T>& x, T p, Mode mode, RngStream& rng,
                      T eps_floor = T(1e-6)) {
  if (mode == Mode::eval) return x;
  const std::size_t B = x.shape()[0], C = x.shape()[1];
  if (B < 2) return x;
  if (rng.uniform01() >= p) return x;

  ChannelStats<T> s = channel_stats(x);
  Tensor<T> scale_mu = Tensor<T>::from_data({C}, detail::batch_std(s.mu.data(), B, C));
  Tensor<T> scale_sigma = Tensor<T>::from_data({C}, detail::batch_std(s.sigma.data(), B, C));
  Tensor<T> eps_mu = detail::draw_eps<T>(B, C, rng, nullptr);
  Tensor<T> eps_sigma = detail::draw_eps<T>(B, C, rng, nullptr);
  Tensor<T> mu_adv = add(s.mu, mul(eps_mu, scale_mu));
  Tensor<T> sigma_adv = add(s.sigma, mul(eps_sigma, scale_sigma));
  return adain_replace(x, mu_adv, sigma_adv, eps_floor);
}

// MixStyle: with probability p, interpolate statistics with a shuffled
// partner using a Beta(alpha, alpha) weight. Draw order: gate, weight,
// permutation.
template <typename T>
Tensor<T> mixstyle_forward(const Tensor<T>& x, T alpha, T p, Mode mode, RngStream& rng,
                           T eps_floor = T(1e-6)) {
  if (mode == Mode::eval) return x;
  const std::size_t B = x.shape()[0];
  if (B < 2) return x;
  if (rng.uniform01() >= p) return x;
  const T w = static_cast<T>(rng.beta(alpha, alpha));
  const std::vector<std::size_t> perm = rng.permutation(B);

  ChannelStats<T> s = channel_stats(x);
  Tensor<T> mu_mix = add(mul_scalar(s.mu, w), mul_scalar(permute_rows(s.mu, perm), T(1) - w));
  Tensor<T> sigma_mix =
      add(mul_scalar(s.sigma, w), mul_scalar(permute_rows(s.sigma, perm), T(1) - w));
  return adain_replace(x, mu_mix, sigma_mix, eps_floor);
}

// pAdaIN: with probability p, adopt the statistics of a random permutation
// partner outright (MixStyle's w = 0 special case).
template <typename T>
Tensor<T> padain_forward(const Tensor<T>& x, T p, Mode mode, RngStream& rng,
                         T eps_floor = T(1e-6)) {
  if (mode == Mode::eval) return x;
  const std::size_t B = x.shape()[0];
  if (B < 2) return x;
  if (rng.uniform01() >= p) return x;
  const std::vector<std::size_t> perm = rng.permutation(B);

  ChannelStats<T> s = channel_stats(x);
  return adain_replace(x, permute_rows(s.mu, perm), permute_rows(s.sigma, perm), eps_floor);
}

}  // namespace advstyle
