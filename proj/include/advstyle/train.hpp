#pragma once

// The two ASA training procedures over MiniNet: end-to-end GRL training
// (one optimizer step over theta and Sigma together, GRL supplying the sign
// flip) and explicit iterative minimax (k ascent steps on Sigma, then one
// descent step on theta, GRL disabled).

#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "advstyle/data.hpp"
#include "advstyle/mininet.hpp"
#include "advstyle/optim.hpp"

namespace advstyle {

enum class AsaMode { grl, iterative };

inline const char* asa_mode_name(AsaMode m) { return m == AsaMode::grl ? "grl" : "iterative"; }

inline AsaMode asa_mode_from_name(const std::string& s) {
  if (s == "grl") return AsaMode::grl;
  if (s == "iterative") return AsaMode::iterative;
  throw ConfigError("unknown asa_mode: " + s);
}

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  OptKind optimizer = OptKind::sgd_momentum;
  double lr = 0.05;
  double sigma_lr = 0.05;  // iterative max phase only; grl mode shares lr
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;  // theta only, enforced by the optimizer
  LrSchedule lr_schedule = LrSchedule::cosine;
  AsaMode asa_mode = AsaMode::grl;
  std::size_t inner_steps = 1;  // iterative ascent steps k
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // epochs; 0 = final only

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(lr > 0)) throw ConfigError("train: lr must be > 0");
    if (sigma_lr < 0) throw ConfigError("train: sigma_lr must be >= 0");
    if (inner_steps < 1) throw ConfigError("train: inner_steps must be >= 1");
    if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
  }

  template <typename T>
  OptConfig<T> opt_config() const {
    OptConfig<T> oc;
    oc.kind = optimizer;
    oc.momentum = static_cast<T>(momentum);
    oc.beta1 = static_cast<T>(adam_beta1);
    oc.beta2 = static_cast<T>(adam_beta2);
    oc.adam_eps = static_cast<T>(adam_eps);
    oc.weight_decay = static_cast<T>(weight_decay);
    return oc;
  }
};

// Raised when training hits a non-finite loss; never silently re-seeded.
struct TrainAbort : std::runtime_error {
  std::size_t step;
  explicit TrainAbort(std::size_t step_index)
      : std::runtime_error("training aborted: non-finite loss at step " +
                           std::to_string(step_index)),
        step(step_index) {}
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0;       // mean over steps, weighted by batch size
  double train_acc = 0;  // percent
  std::vector<std::pair<std::string, double>> sigma_norms;  // per-Sigma L2
};

struct RunLog {
  std::vector<EpochRecord> epochs;
  std::uint64_t seed = 0;
  std::string config_snapshot;  // canonical config text
  std::size_t total_steps = 0;
  // Wall clock is kept in memory only: serialized logs must be byte-identical
  // across reruns (determinism criterion), and elapsed time never is.
  double wall_clock_sec = 0;

  // JSON lines: one record per epoch plus a trailing summary record.
  std::string to_jsonl() const {
    std::ostringstream os;
    for (const auto& e : epochs) {
      nlohmann::ordered_json j;
      j["record"] = "epoch";
      j["epoch"] = e.epoch;
      j["loss"] = e.loss;
      j["train_acc"] = e.train_acc;
      nlohmann::ordered_json norms = nlohmann::ordered_json::object();
      for (const auto& [name, v] : e.sigma_norms) norms[name] = v;
      j["sigma_norms"] = norms;
      os << j.dump() << "\n";
    }
    nlohmann::ordered_json s;
    s["record"] = "summary";
    s["seed"] = seed;
    s["epochs"] = epochs.size();
    s["total_steps"] = total_steps;
    s["final_loss"] = epochs.empty() ? 0.0 : epochs.back().loss;
    s["final_train_acc"] = epochs.empty() ? 0.0 : epochs.back().train_acc;
    s["config_hash"] = fnv1a64(config_snapshot);
    s["config"] = config_snapshot;
    os << s.dump() << "\n";
    return os.str();
  }
};

namespace detail {

template <typename T>
Tensor<T> batch_images(const Split& data, const std::vector<std::size_t>& idx) {
  const std::size_t px = 3 * kImageSize * kImageSize;
  std::vector<T> buf(idx.size() * px);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < px; ++j)
      buf[i * px + j] = static_cast<T>(data.images[idx[i] * px + j]);
  return Tensor<T>::from_data({idx.size(), 3, kImageSize, kImageSize}, std::move(buf));
}

inline std::vector<int> batch_labels(const Split& data, const std::vector<std::size_t>& idx) {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = data.labels[idx[i]];
  return out;
}

template <typename T>
std::vector<std::pair<std::string, double>> sigma_norms(const MiniNet<T>& model) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& e : model.registry().entries()) {
    if (e.tag != ParamTag::sigma) continue;
    double s = 0;
    for (T v : e.tensor.data()) s += static_cast<double>(v) * static_cast<double>(v);
    out.emplace_back(e.name, std::sqrt(s));
  }
  return out;
}

template <typename T>
std::size_t count_correct(const Tensor<T>& logits, const std::vector<int>& labels) {
  const std::vector<int> pred = argmax_rows(logits);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (pred[i] == labels[i]) ++correct;
  return correct;
}

}  // namespace detail

// Optional per-epoch callback (checkpointing hooks); receives the 1-based
// epoch index after its optimizer steps.
template <typename T>
using EpochCallback = std::function<void(std::size_t, MiniNet<T>&)>;

template <typename T>
RunLog train_model(MiniNet<T>& model, const Split& data, const TrainConfig& cfg,
                   const std::string& config_snapshot = "",
                   const EpochCallback<T>& on_epoch = nullptr) {
  cfg.validate();
  if (data.n == 0) throw ValueError("train: empty dataset");
  if (cfg.asa_mode == AsaMode::iterative && model.spec().method != Method::advstyle)
    throw ConfigError("train: asa_mode=iterative requires method=advstyle");
  const auto t0 = std::chrono::steady_clock::now();

  RunLog log;
  log.seed = cfg.seed;
  log.config_snapshot = config_snapshot;

  RngStream order_rng(derive_seed(cfg.seed, "order"));
  RngStream noise_rng(derive_seed(cfg.seed, "noise"));

  const bool iterative = cfg.asa_mode == AsaMode::iterative;
  const bool advstyle = model.spec().method == Method::advstyle;

  // GRL mode: one optimizer over every registered parameter. Iterative mode:
  // disjoint optimizers, explicit ascent for Sigma.
  std::unique_ptr<Optimizer<T>> opt_all, opt_theta, opt_sigma;
  if (iterative) {
    opt_theta = std::make_unique<Optimizer<T>>(cfg.template opt_config<T>(),
                                               model.registry().by_tag(ParamTag::theta));
    opt_sigma = std::make_unique<Optimizer<T>>(cfg.template opt_config<T>(),
                                               model.registry().by_tag(ParamTag::sigma),
                                               /*ascend=*/true);
  } else {
    opt_all = std::make_unique<Optimizer<T>>(cfg.template opt_config<T>(),
                                             model.registry().entries());
  }

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const T lr_e = static_cast<T>(cfg.lr) * lr_factor<T>(cfg.lr_schedule, epoch, cfg.epochs);
    const T slr_e =
        static_cast<T>(cfg.sigma_lr) * lr_factor<T>(cfg.lr_schedule, epoch, cfg.epochs);
    const std::vector<std::size_t> perm = order_rng.permutation(data.n);

    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < data.n; start += cfg.batch_size) {
      const std::size_t stop = std::min(data.n, start + cfg.batch_size);
      const std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                         perm.begin() + static_cast<std::ptrdiff_t>(stop));
      Tensor<T> x = detail::batch_images<T>(data, idx);
      const std::vector<int> labels = detail::batch_labels(data, idx);

      const auto run_pass = [&](std::uint64_t eps_seed, bool grl_identity) {
        PerturbHooks<T> hooks;
        hooks.grl_identity = grl_identity;
        if (advstyle) hooks.frozen_noise_seed = eps_seed;
        model.registry().zero_grads();
        Tensor<T> logits = model.forward(x, Mode::train, noise_rng, &hooks);
        Tensor<T> loss = softmax_cross_entropy(logits, labels);
        const double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv)) throw TrainAbort(step);
        loss.backward();
        return std::pair<double, Tensor<T>>(lv, logits);
      };

      if (iterative) {
        // Max phase: k ascent steps on Sigma with fresh noise each, theta
        // frozen. GRL runs as identity; the ascent direction is explicit.
        std::uint64_t eps_seed = 0;
        for (std::size_t k = 0; k < cfg.inner_steps; ++k) {
          eps_seed = noise_rng.bits();
          run_pass(eps_seed, /*grl_identity=*/true);
          opt_sigma->step(slr_e);
        }
        // Min phase: one descent step on theta against the last sampled
        // perturbation (replayed noise).
        auto [lv, logits] = run_pass(eps_seed, /*grl_identity=*/true);
        opt_theta->step(lr_e);
        loss_sum += lv * static_cast<double>(idx.size());
        correct += detail::count_correct(logits, labels);
      } else {
        const std::uint64_t eps_seed = noise_rng.bits();
        auto [lv, logits] = run_pass(eps_seed, /*grl_identity=*/false);
        opt_all->step(lr_e);
        loss_sum += lv * static_cast<double>(idx.size());
        correct += detail::count_correct(logits, labels);
      }
      ++step;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(data.n);
    rec.train_acc = 100.0 * static_cast<double>(correct) / static_cast<double>(data.n);
    rec.sigma_norms = detail::sigma_norms(model);
    log.epochs.push_back(rec);
    if (on_epoch) on_epoch(epoch + 1, model);
  }
  log.total_steps = step;
  log.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

}  // namespace advstyle
