#pragma once

// MiniNet: a small plain CNN standing in for the ResNet/VGG backbones. Six
// named insertion points mirror the Table-3 ablation positions:
//   conv1  after the first conv + relu
//   pool1  after the first max pool
//   block1..block4  after each subsequent conv + relu (pool after blocks 1-2)
// There are deliberately no normalization layers: batch norm would
// re-standardize features and mask the statistics-perturbation mechanism.
// Perturbation modules sit directly after the activation of their stage.

#include <array>
#include <map>
#include <string>
#include <vector>

#include "advstyle/conv.hpp"
#include "advstyle/perturb.hpp"
#include "advstyle/registry.hpp"

namespace advstyle {

enum class Method { none, advstyle, dsu, mixstyle, padain };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::none: return "none";
    case Method::advstyle: return "advstyle";
    case Method::dsu: return "dsu";
    case Method::mixstyle: return "mixstyle";
    case Method::padain: return "padain";
  }
  return "none";
}

inline Method method_from_name(const std::string& s) {
  if (s == "none") return Method::none;
  if (s == "advstyle") return Method::advstyle;
  if (s == "dsu") return Method::dsu;
  if (s == "mixstyle") return Method::mixstyle;
  if (s == "padain") return Method::padain;
  throw ConfigError("unknown method '" + s + "'");
}

inline const std::array<std::string, 6>& insertion_point_names() {
  static const std::array<std::string, 6> names = {"conv1",  "pool1",  "block1",
                                                   "block2", "block3", "block4"};
  return names;
}

struct ModelSpec {
  std::size_t in_channels = 3;
  std::size_t in_h = 32;
  std::size_t in_w = 32;
  std::size_t num_classes = 7;
  // conv1 width followed by the four block widths.
  std::array<std::size_t, 5> widths = {8, 16, 32, 32, 32};
  std::array<bool, 6> insert = {false, false, false, false, false, false};
  Method method = Method::none;
  AdvVariant variant = AdvVariant::full;
  double lambda = 5.0;
  double mixstyle_alpha = 0.1;
  double perturb_prob = 0.5;  // gate for dsu/mixstyle/padain; advstyle always fires
  double eps_floor = 1e-6;

  void validate() const {
    if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
    for (std::size_t w : widths)
      if (w == 0) throw ConfigError("model: widths must be positive");
    if (lambda < 0) throw ConfigError("model: lambda must be >= 0");
    if (perturb_prob < 0 || perturb_prob > 1)
      throw ConfigError("model: perturb_prob must be in [0,1]");
    if (eps_floor <= 0) throw ConfigError("model: eps_floor must be > 0");
  }

  bool any_insertion() const {
    for (bool b : insert)
      if (b) return true;
    return false;
  }

  // Channel width seen by each insertion point.
  std::size_t point_channels(std::size_t point) const {
    return point <= 1 ? widths[0] : widths[point - 1];
  }

  // conv1: Cin*w0*9 + w0; block i: w_{i-1}*w_i*9 + w_i; head: w4*K + K;
  // plus 2*C per advstyle insertion point.
  std::size_t param_count() const {
    std::size_t n = in_channels * widths[0] * 9 + widths[0];
    for (std::size_t i = 1; i < 5; ++i) n += widths[i - 1] * widths[i] * 9 + widths[i];
    n += widths[4] * num_classes + num_classes;
    if (method == Method::advstyle)
      for (std::size_t p = 0; p < 6; ++p)
        if (insert[p]) n += 2 * point_channels(p);
    return n;
  }
};

template <typename T>
class MiniNet {
public:
  MiniNet(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    // Three 2x2 pools need floor(floor(in/2)/2) >= 2.
    if (spec_.in_h < 8 || spec_.in_w < 8)
      throw ShapeError("build_mininet: spatial size underflow from pooling, input " +
                       shape_str({spec_.in_channels, spec_.in_h, spec_.in_w}));
    RngStream rng(derive_seed(seed, "init"));

    auto make_conv = [&](const std::string& name, std::size_t cin, std::size_t cout) {
      // Kaiming-uniform fan-in with relu gain: bound = sqrt(6 / fan_in).
      const std::size_t fan_in = cin * 9;
      const T bound = std::sqrt(T(6) / static_cast<T>(fan_in));
      std::vector<T> w(cout * cin * 9);
      for (T& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
      conv_w_.push_back(Tensor<T>::from_data({cout, cin, 3, 3}, std::move(w), true));
      conv_b_.push_back(Tensor<T>::zeros({cout}, true));
      registry_.add(name + ".weight", conv_w_.back(), ParamTag::theta);
      registry_.add(name + ".bias", conv_b_.back(), ParamTag::theta);
    };

    make_conv("conv1", spec_.in_channels, spec_.widths[0]);
    for (std::size_t i = 1; i < 5; ++i)
      make_conv("block" + std::to_string(i), spec_.widths[i - 1], spec_.widths[i]);

    {
      const std::size_t fan_in = spec_.widths[4];
      const T bound = std::sqrt(T(3) / static_cast<T>(fan_in));
      std::vector<T> w(fan_in * spec_.num_classes);
      for (T& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
      fc_w_ = Tensor<T>::from_data({fan_in, spec_.num_classes}, std::move(w), true);
      fc_b_ = Tensor<T>::zeros({spec_.num_classes}, true);
      registry_.add("fc.weight", fc_w_, ParamTag::theta);
      registry_.add("fc.bias", fc_b_, ParamTag::theta);
    }

    if (spec_.method == Method::advstyle) {
      for (std::size_t p = 0; p < 6; ++p) {
        if (!spec_.insert[p]) continue;
        const std::string& point = insertion_point_names()[p];
        auto st = AdvStyleState<T>::init(spec_.point_channels(p), spec_.variant,
                                         static_cast<T>(spec_.lambda));
        registry_.add("advstyle." + point + ".sigma_mu", st.sigma_mu, ParamTag::sigma);
        registry_.add("advstyle." + point + ".sigma_sigma", st.sigma_sigma, ParamTag::sigma);
        adv_states_.emplace(p, std::move(st));
      }
    }
  }

  const ModelSpec& spec() const { return spec_; }
  ParameterRegistry<T>& registry() { return registry_; }
  const ParameterRegistry<T>& registry() const { return registry_; }

  struct ForwardResult {
    Tensor<T> logits;    // B x K
    Tensor<T> features;  // B x widths[4], the global-average-pooled embedding
  };

  Tensor<T> forward(const Tensor<T>& images, Mode mode, RngStream& rng,
                    const PerturbHooks<T>* hooks = nullptr) {
    return forward_with_features(images, mode, rng, hooks).logits;
  }

  ForwardResult forward_with_features(const Tensor<T>& images, Mode mode, RngStream& rng,
                                      const PerturbHooks<T>* hooks = nullptr) {
    if (images.ndim() != 4 || images.shape()[1] != spec_.in_channels ||
        images.shape()[2] != spec_.in_h || images.shape()[3] != spec_.in_w)
      throw ShapeError("forward: batch shape " + shape_str(images.shape()) +
                       " does not match model input " +
                       shape_str({0, spec_.in_channels, spec_.in_h, spec_.in_w}));

    Tensor<T> h = relu(conv2d(images, conv_w_[0], conv_b_[0], 1));
    h = perturb(h, 0, mode, rng, hooks);  // conv1
    h = maxpool2d(h);
    h = perturb(h, 1, mode, rng, hooks);  // pool1
    for (std::size_t i = 1; i < 5; ++i) {
      h = relu(conv2d(h, conv_w_[i], conv_b_[i], 1));
      h = perturb(h, 1 + i, mode, rng, hooks);  // block1..block4
      if (i <= 2) h = maxpool2d(h);
    }
    ForwardResult r;
    r.features = avgpool_global(h);
    r.logits = add(matmul(r.features, fc_w_), fc_b_);
    return r;
  }

  AdvStyleState<T>& advstyle_state(const std::string& point) {
    for (std::size_t p = 0; p < 6; ++p)
      if (insertion_point_names()[p] == point) {
        auto it = adv_states_.find(p);
        if (it == adv_states_.end())
          throw ValueError("no advstyle module at point '" + point + "'");
        return it->second;
      }
    throw ValueError("unknown insertion point '" + point + "'");
  }

private:
  Tensor<T> perturb(const Tensor<T>& h, std::size_t point, Mode mode, RngStream& rng,
                    const PerturbHooks<T>* hooks) {
    if (!spec_.insert[point] || spec_.method == Method::none) return h;
    const T eps = static_cast<T>(spec_.eps_floor);
    const T p = static_cast<T>(spec_.perturb_prob);
    switch (spec_.method) {
      case Method::advstyle: {
        // A frozen pass seed fans out per point, so the six modules draw
        // decorrelated noise while the whole pass stays replayable.
        if (hooks && hooks->frozen_noise_seed) {
          PerturbHooks<T> local = *hooks;
          local.frozen_noise_seed =
              derive_seed(*hooks->frozen_noise_seed, insertion_point_names()[point]);
          return advstyle_forward(h, adv_states_.at(point), mode, rng, eps, &local);
        }
        return advstyle_forward(h, adv_states_.at(point), mode, rng, eps, hooks);
      }
      case Method::dsu:
        return dsu_forward(h, p, mode, rng, eps);
      case Method::mixstyle:
        return mixstyle_forward(h, static_cast<T>(spec_.mixstyle_alpha), p, mode, rng, eps);
      case Method::padain:
        return padain_forward(h, p, mode, rng, eps);
      case Method::none:
        return h;
    }
    return h;
  }

  ModelSpec spec_;
  ParameterRegistry<T> registry_;
  std::vector<Tensor<T>> conv_w_;
  std::vector<Tensor<T>> conv_b_;
  Tensor<T> fc_w_;
  Tensor<T> fc_b_;
  std::map<std::size_t, AdvStyleState<T>> adv_states_;
};

}  // namespace advstyle
