#pragma once

// Optimizers over registry entries. Weight decay never touches sigma-tagged
// parameters (it would act as an extra, unmodeled force on the adversary).

#include <cmath>
#include <string>
#include <vector>

#include "advstyle/registry.hpp"
#include "advstyle/tensor.hpp"

namespace advstyle {

enum class OptKind { sgd_momentum, adam };

inline const char* opt_kind_name(OptKind k) {
  return k == OptKind::sgd_momentum ? "sgd_momentum" : "adam";
}

inline OptKind opt_kind_from_name(const std::string& s) {
  if (s == "sgd_momentum") return OptKind::sgd_momentum;
  if (s == "adam") return OptKind::adam;
  throw ConfigError("unknown optimizer: " + s);
}

template <typename T>
struct OptConfig {
  OptKind kind = OptKind::sgd_momentum;
  T momentum = T(0.9);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T adam_eps = T(1e-8);
  T weight_decay = T(0);  // theta tags only
};

// Steps a fixed set of parameters; per-parameter state is positional, so the
// entry list must be the same every call. `ascend` flips the update direction
// (used for the explicit max phase of iterative training).
template <typename T>
class Optimizer {
 public:
  Optimizer(OptConfig<T> cfg, std::vector<ParamEntry<T>> entries, bool ascend = false)
      : cfg_(cfg), entries_(std::move(entries)), ascend_(ascend) {
    v_.resize(entries_.size());
    m_.resize(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      v_[i].assign(entries_[i].tensor.size(), T(0));
      if (cfg_.kind == OptKind::adam) m_[i].assign(entries_[i].tensor.size(), T(0));
    }
  }

  const std::vector<ParamEntry<T>>& entries() const { return entries_; }

  void step(T lr) {
    ++t_;
    const T dir = ascend_ ? T(-1) : T(1);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto& e = entries_[i];
      if (e.tensor.grad().size() != e.tensor.size())
        throw ValueError("optimizer: missing gradient on " + e.name);
      const T wd = e.tag == ParamTag::sigma ? T(0) : cfg_.weight_decay;
      T* p = e.tensor.data().data();
      const T* g = e.tensor.grad().data();
      T* v = v_[i].data();
      const std::size_t n = e.tensor.size();
      if (cfg_.kind == OptKind::sgd_momentum) {
        // v <- m*v + g ; p <- p - lr*(v + wd*p)
        for (std::size_t j = 0; j < n; ++j) {
          v[j] = cfg_.momentum * v[j] + g[j];
          p[j] -= dir * lr * (v[j] + wd * p[j]);
        }
      } else {
        T* mm = m_[i].data();
        const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(t_));
        for (std::size_t j = 0; j < n; ++j) {
          mm[j] = cfg_.beta1 * mm[j] + (T(1) - cfg_.beta1) * g[j];
          v[j] = cfg_.beta2 * v[j] + (T(1) - cfg_.beta2) * g[j] * g[j];
          const T mhat = mm[j] / bc1;
          const T vhat = v[j] / bc2;
          p[j] -= dir * lr * (mhat / (std::sqrt(vhat) + cfg_.adam_eps) + wd * p[j]);
        }
      }
    }
  }

 private:
  OptConfig<T> cfg_;
  std::vector<ParamEntry<T>> entries_;
  bool ascend_;
  std::size_t t_ = 0;
  std::vector<std::vector<T>> v_;  // sgd velocity / adam second moment
  std::vector<std::vector<T>> m_;  // adam first moment
};

enum class LrSchedule { constant, cosine };

inline const char* lr_schedule_name(LrSchedule s) {
  return s == LrSchedule::constant ? "constant" : "cosine";
}

inline LrSchedule lr_schedule_from_name(const std::string& s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "cosine") return LrSchedule::cosine;
  throw ConfigError("unknown lr_schedule: " + s);
}

// Per-epoch factor; epoch in [0, epochs). Cosine starts at 1 and decays
// toward 0 (exclusive) across the run.
template <typename T>
T lr_factor(LrSchedule s, std::size_t epoch, std::size_t epochs) {
  if (s == LrSchedule::constant) return T(1);
  const T x = static_cast<T>(epoch) / static_cast<T>(epochs);
  return T(0.5) * (T(1) + std::cos(static_cast<T>(M_PI) * x));
}

}  // namespace advstyle
