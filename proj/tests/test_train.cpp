// Training-loop tests: optimizer hand oracles, the GRL sign contract at the
// update level, iterative/GRL degeneracy, tag separation, determinism, and
// the non-finite-loss abort path.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advstyle/data.hpp"
#include "advstyle/mininet.hpp"
#include "advstyle/optim.hpp"
#include "advstyle/train.hpp"

using namespace advstyle;

namespace {

ParamEntry<double> make_entry(const std::string& name, double value, ParamTag tag) {
  return {name, Tensor<double>::from_data({1}, {value}, /*requires_grad=*/true), tag};
}

void set_grad(ParamEntry<double>& e, double g) {
  auto& grad = e.tensor.grad();
  std::fill(grad.begin(), grad.end(), g);
}

// Small benchmark split; images are 3x32x32, the shape MiniNet defaults to.
Split small_split(std::size_t n, std::uint64_t seed) {
  DataGenConfig cfg;
  cfg.seed = seed;
  cfg.train_size = n;
  cfg.target_size = 4;
  return make_benchmark(cfg).train;
}

template <typename T>
ModelSpec tiny_advstyle_spec(double lambda) {
  ModelSpec spec;
  spec.widths = {4, 4, 4, 4, 4};
  spec.method = Method::advstyle;
  spec.insert = {true, true, true, true, true, true};
  spec.lambda = lambda;
  (void)sizeof(T);
  return spec;
}

template <typename T>
std::vector<std::vector<T>> snapshot(const std::vector<ParamEntry<T>>& entries) {
  std::vector<std::vector<T>> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.tensor.data());
  return out;
}

// One forward/backward with frozen perturbation noise and GRL as identity,
// mirroring the trainer's iterative max/min passes.
template <typename T>
double frozen_pass(MiniNet<T>& model, const Tensor<T>& x, const std::vector<int>& labels,
                   std::uint64_t eps_seed, bool do_backward) {
  PerturbHooks<T> hooks;
  hooks.grl_identity = true;
  hooks.frozen_noise_seed = eps_seed;
  RngStream inert(0);
  model.registry().zero_grads();
  Tensor<T> logits = model.forward(x, Mode::train, inert, &hooks);
  Tensor<T> loss = softmax_cross_entropy(logits, labels);
  if (do_backward) loss.backward();
  return static_cast<double>(loss.item());
}

}  // namespace

TEST_CASE("sgd step matches the hand example") {
  // m=0, lr=0.1, p=1, g=2 -> p=0.8
  auto e = make_entry("w", 1.0, ParamTag::theta);
  OptConfig<double> oc;
  oc.momentum = 0.0;
  Optimizer<double> opt(oc, {e});
  set_grad(e, 2.0);
  opt.step(0.1);
  CHECK_THAT(e.tensor.data()[0], Catch::Matchers::WithinAbs(0.8, 1e-15));
}

TEST_CASE("momentum accumulates the hand-computed total step") {
  // Two identical grads g=1, m=0.9, lr=1: v walks 1 then 1.9, total 2.9.
  auto e = make_entry("w", 5.0, ParamTag::theta);
  OptConfig<double> oc;
  oc.momentum = 0.9;
  Optimizer<double> opt(oc, {e});
  set_grad(e, 1.0);
  opt.step(1.0);
  CHECK_THAT(e.tensor.data()[0], Catch::Matchers::WithinAbs(4.0, 1e-15));
  set_grad(e, 1.0);
  opt.step(1.0);
  CHECK_THAT(e.tensor.data()[0], Catch::Matchers::WithinAbs(5.0 - 2.9, 1e-15));
}

TEST_CASE("weight decay applies to theta and never to sigma") {
  OptConfig<double> oc;
  oc.momentum = 0.0;
  oc.weight_decay = 0.1;

  SECTION("theta shrinks under decay with zero gradient") {
    auto e = make_entry("w", 1.0, ParamTag::theta);
    Optimizer<double> opt(oc, {e});
    set_grad(e, 0.0);
    opt.step(0.1);
    CHECK_THAT(e.tensor.data()[0], Catch::Matchers::WithinAbs(0.99, 1e-15));
  }

  SECTION("sigma with zero gradient is bitwise unchanged") {
    auto e = make_entry("s", 1.0, ParamTag::sigma);
    Optimizer<double> opt(oc, {e});
    set_grad(e, 0.0);
    opt.step(0.1);
    CHECK(e.tensor.data()[0] == 1.0);
  }

  SECTION("sigma with a gradient moves by the pure-gradient step") {
    auto e = make_entry("s", 1.0, ParamTag::sigma);
    OptConfig<double> heavy = oc;
    heavy.weight_decay = 0.5;
    Optimizer<double> opt(heavy, {e});
    set_grad(e, 2.0);
    opt.step(0.1);
    CHECK_THAT(e.tensor.data()[0], Catch::Matchers::WithinAbs(0.8, 1e-15));
  }
}

TEST_CASE("adam follows the bias-corrected recurrences") {
  // With a constant gradient the bias-corrected moments are exactly g and
  // g^2 every step, so each update is lr * g / (|g| + eps).
  auto e = make_entry("w", 1.0, ParamTag::theta);
  OptConfig<double> oc;
  oc.kind = OptKind::adam;
  Optimizer<double> opt(oc, {e});
  const double delta = 0.1 * (2.0 / (std::sqrt(4.0) + 1e-8));
  set_grad(e, 2.0);
  opt.step(0.1);
  CHECK_THAT(e.tensor.data()[0], Catch::Matchers::WithinAbs(1.0 - delta, 1e-15));
  set_grad(e, 2.0);
  opt.step(0.1);
  CHECK_THAT(e.tensor.data()[0], Catch::Matchers::WithinAbs(1.0 - 2.0 * delta, 1e-12));
}

TEST_CASE("ascend flips the update direction") {
  auto e = make_entry("s", 1.0, ParamTag::sigma);
  OptConfig<double> oc;
  oc.momentum = 0.0;
  Optimizer<double> opt(oc, {e}, /*ascend=*/true);
  set_grad(e, 2.0);
  opt.step(0.1);
  CHECK_THAT(e.tensor.data()[0], Catch::Matchers::WithinAbs(1.2, 1e-15));
}

TEST_CASE("registry rejects parameters that cannot carry gradients") {
  ParameterRegistry<double> reg;
  CHECK_THROWS_AS(reg.add("w", Tensor<double>::zeros({2}), ParamTag::theta), ValueError);
  reg.add("w", Tensor<double>::zeros({2}, /*requires_grad=*/true), ParamTag::theta);
  CHECK_THROWS_AS(reg.add("w", Tensor<double>::zeros({2}, true), ParamTag::theta), ValueError);
}

TEST_CASE("cosine schedule starts at one and decays smoothly") {
  CHECK(lr_factor<double>(LrSchedule::cosine, 0, 60) == 1.0);
  CHECK_THAT(lr_factor<double>(LrSchedule::cosine, 30, 60),
             Catch::Matchers::WithinAbs(0.5, 1e-12));
  double prev = 2.0;
  for (std::size_t e = 0; e < 60; ++e) {
    const double f = lr_factor<double>(LrSchedule::cosine, e, 60);
    CHECK(f > 0.0);
    CHECK(f < prev);
    prev = f;
  }
  for (std::size_t e = 0; e < 5; ++e) CHECK(lr_factor<double>(LrSchedule::constant, e, 60) == 1.0);
}

TEST_CASE("train config validation rejects degenerate settings") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.sigma_lr = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.inner_steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.weight_decay = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("iterative mode requires the advstyle method") {
  const Split data = small_split(8, 1);
  ModelSpec spec;
  spec.widths = {4, 4, 4, 4, 4};
  MiniNet<float> model(spec, 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.asa_mode = AsaMode::iterative;
  CHECK_THROWS_AS(train_model(model, data, cfg), ConfigError);
}

TEST_CASE("empty dataset is rejected") {
  ModelSpec spec;
  spec.widths = {4, 4, 4, 4, 4};
  MiniNet<float> model(spec, 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train_model(model, Split{}, cfg), ValueError);
}

TEST_CASE("lambda zero leaves every scale at exactly zero for the whole run") {
  const Split data = small_split(24, 2);
  MiniNet<float> model(tiny_advstyle_spec<float>(0.0), 7);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.lr = 0.05;
  cfg.seed = 2;
  const RunLog log = train_model(model, data, cfg);

  for (const auto& e : model.registry().by_tag(ParamTag::sigma))
    for (float v : e.tensor.data()) CHECK(v == 0.0f);
  for (const auto& rec : log.epochs) {
    REQUIRE(rec.sigma_norms.size() == 12);  // 6 insertion points x {mu, sigma}
    for (const auto& [name, norm] : rec.sigma_norms) {
      CHECK(name.find("advstyle.") == 0);
      CHECK(norm == 0.0);
    }
  }
}

TEST_CASE("grl single step moves scales along the unreversed gradient") {
  // One SGD step (momentum 0) at lambda=1: Delta Sigma must equal
  // +lr * dL/dSigma measured on the identity-GRL graph (ascent direction).
  const std::uint64_t seed = 5;
  const Split data = small_split(16, 3);

  MiniNet<double> trained(tiny_advstyle_spec<double>(1.0), 9);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.lr = 0.01;
  cfg.momentum = 0.0;
  cfg.lr_schedule = LrSchedule::constant;
  cfg.seed = seed;
  train_model(trained, data, cfg);

  // Reference gradient: same init, same batch order, same frozen noise, GRL
  // forced to identity so the measured gradient carries no sign flip.
  MiniNet<double> ref(tiny_advstyle_spec<double>(1.0), 9);
  RngStream order_rng(derive_seed(seed, "order"));
  RngStream noise_rng(derive_seed(seed, "noise"));
  const std::vector<std::size_t> idx = order_rng.permutation(data.n);
  const Tensor<double> x = detail::batch_images<double>(data, idx);
  const std::vector<int> labels = detail::batch_labels(data, idx);
  frozen_pass(ref, x, labels, noise_rng.bits(), /*do_backward=*/true);

  const auto trained_sigma = trained.registry().by_tag(ParamTag::sigma);
  const auto ref_sigma = ref.registry().by_tag(ParamTag::sigma);
  REQUIRE(trained_sigma.size() == ref_sigma.size());
  double max_abs_grad = 0.0;
  for (std::size_t i = 0; i < ref_sigma.size(); ++i) {
    REQUIRE(trained_sigma[i].name == ref_sigma[i].name);
    const auto& got = trained_sigma[i].tensor.data();
    const auto& g = ref_sigma[i].tensor.grad();
    for (std::size_t j = 0; j < got.size(); ++j) {
      CHECK_THAT(got[j], Catch::Matchers::WithinAbs(0.01 * g[j], 1e-12));
      max_abs_grad = std::max(max_abs_grad, std::abs(g[j]));
    }
  }
  CHECK(max_abs_grad > 0.0);  // the comparison must not be vacuous
}

TEST_CASE("iterative degenerate adversary matches grl with lambda zero") {
  // k=1 and sigma_lr=0 reduce iterative training to the lambda=0 GRL run:
  // identical theta trajectory and identical serialized logs.
  const Split data = small_split(24, 4);

  MiniNet<float> grl_model(tiny_advstyle_spec<float>(0.0), 11);
  TrainConfig grl_cfg;
  grl_cfg.epochs = 3;
  grl_cfg.batch_size = 8;
  grl_cfg.lr = 0.05;
  grl_cfg.seed = 6;
  const RunLog grl_log = train_model(grl_model, data, grl_cfg, "snapshot");

  // lambda=5 on the iterative model: the mode must ignore it entirely.
  MiniNet<float> iter_model(tiny_advstyle_spec<float>(5.0), 11);
  TrainConfig iter_cfg = grl_cfg;
  iter_cfg.asa_mode = AsaMode::iterative;
  iter_cfg.inner_steps = 1;
  iter_cfg.sigma_lr = 0.0;
  const RunLog iter_log = train_model(iter_model, data, iter_cfg, "snapshot");

  CHECK(grl_log.to_jsonl() == iter_log.to_jsonl());
  const auto& a = grl_model.registry().entries();
  const auto& b = iter_model.registry().entries();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].name == b[i].name);
    CHECK(a[i].tensor.data() == b[i].tensor.data());
  }
}

TEST_CASE("iterative max phase increases the frozen-noise loss") {
  // Ascent property at sigma_lr=1e-4: with theta frozen and the same frozen
  // epsilon, the post-step loss is no smaller than the pre-step loss.
  const Split data = small_split(16, 5);
  RngStream order(derive_seed(1, "order"));
  const std::vector<std::size_t> idx = order.permutation(data.n);
  const Tensor<double> x = detail::batch_images<double>(data, idx);
  const std::vector<int> labels = detail::batch_labels(data, idx);

  MiniNet<double> model(tiny_advstyle_spec<double>(1.0), 13);
  OptConfig<double> oc;
  oc.momentum = 0.0;
  Optimizer<double> opt_sigma(oc, model.registry().by_tag(ParamTag::sigma), /*ascend=*/true);

  // Checked both from the Sigma=0 init and from a displaced starting point.
  for (int trial = 0; trial < 2; ++trial) {
    if (trial == 1) {
      RngStream jitter(99);
      for (auto& e : model.registry().by_tag(ParamTag::sigma))
        for (auto& v : e.tensor.data()) v = 0.2 * (jitter.uniform01() - 0.5);
    }
    const std::uint64_t eps_seed = 12345 + static_cast<std::uint64_t>(trial);
    const double before = frozen_pass(model, x, labels, eps_seed, /*do_backward=*/true);
    opt_sigma.step(1e-4);
    const double after = frozen_pass(model, x, labels, eps_seed, /*do_backward=*/false);
    CHECK(after >= before);
  }
}

TEST_CASE("tag separation: sigma steps leave theta bitwise intact and vice versa") {
  const Split data = small_split(16, 6);
  RngStream order(derive_seed(2, "order"));
  const std::vector<std::size_t> idx = order.permutation(data.n);
  const Tensor<double> x = detail::batch_images<double>(data, idx);
  const std::vector<int> labels = detail::batch_labels(data, idx);

  MiniNet<double> model(tiny_advstyle_spec<double>(1.0), 17);
  const auto theta = model.registry().by_tag(ParamTag::theta);
  const auto sigma = model.registry().by_tag(ParamTag::sigma);
  REQUIRE(theta.size() + sigma.size() == model.registry().entries().size());

  OptConfig<double> oc;
  oc.momentum = 0.0;
  Optimizer<double> opt_theta(oc, theta);
  Optimizer<double> opt_sigma(oc, sigma, /*ascend=*/true);

  frozen_pass(model, x, labels, 777, /*do_backward=*/true);
  const auto theta_before = snapshot(theta);
  opt_sigma.step(0.01);
  for (std::size_t i = 0; i < theta.size(); ++i) CHECK(theta[i].tensor.data() == theta_before[i]);

  frozen_pass(model, x, labels, 778, /*do_backward=*/true);
  const auto sigma_before = snapshot(sigma);
  opt_theta.step(0.01);
  bool sigma_same = true;
  for (std::size_t i = 0; i < sigma.size(); ++i)
    sigma_same = sigma_same && sigma[i].tensor.data() == sigma_before[i];
  CHECK(sigma_same);
}

TEST_CASE("two runs with the same configuration are identical") {
  const Split data = small_split(24, 7);
  const auto run = [&](std::uint64_t seed) {
    MiniNet<float> model(tiny_advstyle_spec<float>(5.0), 21);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = seed;
    RunLog log = train_model(model, data, cfg, "cfg-snapshot");
    std::vector<std::vector<float>> params;
    for (const auto& e : model.registry().entries()) params.push_back(e.tensor.data());
    return std::pair<std::string, std::vector<std::vector<float>>>(log.to_jsonl(), params);
  };
  const auto [log_a, params_a] = run(9);
  const auto [log_b, params_b] = run(9);
  CHECK(log_a == log_b);
  CHECK(params_a == params_b);
  const auto [log_c, params_c] = run(10);
  CHECK(log_a != log_c);
}

TEST_CASE("runlog serialization carries epochs, summary, and config hash") {
  const Split data = small_split(16, 8);
  MiniNet<float> model(tiny_advstyle_spec<float>(5.0), 23);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  const RunLog log = train_model(model, data, cfg, "[train]\nepochs = 2\n");

  REQUIRE(log.epochs.size() == 2);
  CHECK(log.total_steps == 4);  // 16 samples / batch 8 x 2 epochs
  CHECK(log.wall_clock_sec > 0.0);

  const std::string text = log.to_jsonl();
  CHECK(text.find("wall_clock") == std::string::npos);

  std::vector<nlohmann::json> lines;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);)
    if (!line.empty()) lines.push_back(nlohmann::json::parse(line));
  REQUIRE(lines.size() == 3);

  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(lines[i].at("record") == "epoch");
    CHECK(lines[i].at("epoch") == i);
    CHECK(lines[i].at("loss").is_number());
    CHECK(lines[i].at("train_acc").is_number());
    CHECK(lines[i].at("sigma_norms").size() == 12);
  }
  const auto& summary = lines.back();
  CHECK(summary.at("record") == "summary");
  CHECK(summary.at("total_steps") == 4);
  CHECK(summary.at("config") == "[train]\nepochs = 2\n");
  CHECK(summary.at("config_hash") == fnv1a64("[train]\nepochs = 2\n"));
}

TEST_CASE("non-finite loss aborts with the offending step index") {
  Split data = small_split(8, 9);
  ModelSpec spec;
  spec.widths = {4, 4, 4, 4, 4};
  MiniNet<float> model(spec, 25);
  // A non-finite parameter guarantees a non-finite loss on the first batch;
  // NaN pixels alone can be masked by relu/maxpool comparisons.
  model.registry().find("fc.bias").data()[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  try {
    train_model(model, data, cfg);
    FAIL("expected TrainAbort");
  } catch (const TrainAbort& e) {
    CHECK(e.step == 0);
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("training memorizes a small dataset with the plain model") {
  // 64-sample smoke run, method=none, seed 0: the loss must fall below 0.1
  // within 200 epochs.
  const Split data = small_split(64, 0);
  ModelSpec spec;  // default widths, method=none
  MiniNet<float> model(spec, derive_seed(0, "model"));
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 64;
  cfg.seed = 0;
  const RunLog log = train_model(model, data, cfg);
  const bool memorized = std::any_of(log.epochs.begin(), log.epochs.end(),
                                     [](const EpochRecord& r) { return r.loss < 0.1; });
  CHECK(memorized);
  CHECK(log.epochs.back().loss < 0.1);
}
