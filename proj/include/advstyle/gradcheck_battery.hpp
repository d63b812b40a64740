#pragma once

// Seeded finite-difference batteries shared by the test suite, the
// `gradcheck` CLI subcommand, and the acceptance suite. Everything runs in
// double precision. The GRL is the one op whose analytic gradient is
// intentionally -lambda times the numeric one, so it gets a dedicated sign
// check instead of a plain comparison; the full-backbone check likewise runs
// with the GRL replaced by an identity (the sign contract is verified
// separately).

#include <functional>
#include <sstream>

#include "advstyle/gradcheck.hpp"
#include "advstyle/mininet.hpp"

namespace advstyle {

struct BatteryEntry {
  std::string name;
  bool pass = false;
  std::size_t checked = 0;
  std::size_t excluded = 0;
  double max_rel_err = 0.0;
  std::string detail;
};

namespace detail {

inline Tensor<double> rand_tensor(Shape shape, RngStream& rng, bool requires_grad, double lo,
                                  double hi) {
  std::vector<double> d(shape_numel(shape));
  for (double& v : d) v = rng.uniform(lo, hi);
  return Tensor<double>::from_data(std::move(shape), std::move(d), requires_grad);
}

// Projects a tensor-valued op to a scalar with fixed random weights so the
// finite-difference probe exercises a generic direction of the Jacobian.
inline Tensor<double> weighted_sum(const Tensor<double>& t, RngStream& rng) {
  std::vector<double> w(t.size());
  for (double& v : w) v = rng.uniform(-1.0, 1.0);
  return sum_all(mul(t, Tensor<double>::from_data(t.shape(), std::move(w))));
}

inline BatteryEntry run_entry(
    const std::string& name, std::uint64_t seed, std::size_t instances,
    const std::function<GradCheckReport<double>(RngStream&)>& one_instance) {
  BatteryEntry e;
  e.name = name;
  e.pass = true;
  RngStream rng(derive_seed(seed, "battery:" + name));
  for (std::size_t i = 0; i < instances; ++i) {
    GradCheckReport<double> r = one_instance(rng);
    e.checked += r.checked;
    e.excluded += r.excluded;
    e.max_rel_err = std::max(e.max_rel_err, r.max_rel_err);
    if (!r.pass()) {
      e.pass = false;
      if (e.detail.empty() && !r.failures.empty()) {
        std::ostringstream os;
        const auto& f = r.failures.front();
        os << "input " << f.input_index << " coord " << f.coord << ": analytic " << f.analytic
           << " vs numeric " << f.numeric;
        e.detail = os.str();
      }
    }
  }
  return e;
}

}  // namespace detail

// Per-op battery: `instances` random small tensors per op at rtol 1e-4.
inline std::vector<BatteryEntry> gradcheck_ops_battery(std::uint64_t seed,
                                                       std::size_t instances = 20) {
  using detail::rand_tensor;
  using detail::weighted_sum;
  std::vector<BatteryEntry> out;
  const double rtol = 1e-4;

  auto simple = [&](const std::string& name,
                    std::function<Tensor<double>(const std::vector<Tensor<double>>&, RngStream&)>
                        make_loss,
                    std::function<std::vector<Tensor<double>>(RngStream&)> make_inputs) {
    out.push_back(detail::run_entry(name, seed, instances, [&](RngStream& rng) {
      std::vector<Tensor<double>> inputs = make_inputs(rng);
      // Freeze the projection weights across the FD probes of one instance.
      const std::uint64_t wseed = rng.bits();
      auto f = [&, wseed](const std::vector<Tensor<double>>& xs) {
        RngStream wr(wseed);
        return make_loss(xs, wr);
      };
      return check_gradients<double>(f, std::move(inputs), 1e-4, rtol);
    }));
  };

  // Binary ops over the three supported broadcast layouts.
  struct BinSpec {
    const char* name;
    Tensor<double> (*op)(const Tensor<double>&, const Tensor<double>&);
    double lo, hi;  // operand range (div needs to stay away from zero)
  };
  const BinSpec bins[] = {
      {"add", &add<double>, -2.0, 2.0},
      {"sub", &sub<double>, -2.0, 2.0},
      {"mul", &mul<double>, -2.0, 2.0},
      {"div", &div<double>, 0.5, 2.5},
  };
  for (const auto& b : bins) {
    simple(
        std::string(b.name) + " (same shape)",
        [op = b.op](const std::vector<Tensor<double>>& xs, RngStream& wr) {
          return weighted_sum(op(xs[0], xs[1]), wr);
        },
        [&, b](RngStream& rng) {
          return std::vector<Tensor<double>>{rand_tensor({3, 4}, rng, true, b.lo, b.hi),
                                             rand_tensor({3, 4}, rng, true, b.lo, b.hi)};
        });
    simple(
        std::string(b.name) + " (block broadcast)",
        [op = b.op](const std::vector<Tensor<double>>& xs, RngStream& wr) {
          return weighted_sum(op(xs[0], xs[1]), wr);
        },
        [&, b](RngStream& rng) {
          return std::vector<Tensor<double>>{rand_tensor({2, 3, 4}, rng, true, b.lo, b.hi),
                                             rand_tensor({2, 3, 1}, rng, true, b.lo, b.hi)};
        });
    simple(
        std::string(b.name) + " (tile broadcast)",
        [op = b.op](const std::vector<Tensor<double>>& xs, RngStream& wr) {
          return weighted_sum(op(xs[0], xs[1]), wr);
        },
        [&, b](RngStream& rng) {
          return std::vector<Tensor<double>>{rand_tensor({4, 3}, rng, true, b.lo, b.hi),
                                             rand_tensor({3}, rng, true, b.lo, b.hi)};
        });
    simple(
        std::string(b.name) + " (scalar broadcast)",
        [op = b.op](const std::vector<Tensor<double>>& xs, RngStream& wr) {
          return weighted_sum(op(xs[0], xs[1]), wr);
        },
        [&, b](RngStream& rng) {
          return std::vector<Tensor<double>>{rand_tensor({3, 4}, rng, true, b.lo, b.hi),
                                             rand_tensor({}, rng, true, b.lo, b.hi)};
        });
  }

  simple(
      "relu",
      [](const std::vector<Tensor<double>>& xs, RngStream& wr) {
        return weighted_sum(relu(xs[0]), wr);
      },
      [&](RngStream& rng) {
        return std::vector<Tensor<double>>{rand_tensor({5, 7}, rng, true, -1.5, 1.5)};
      });
  simple(
      "sqrt",
      [](const std::vector<Tensor<double>>& xs, RngStream& wr) {
        return weighted_sum(sqrt_t(xs[0]), wr);
      },
      [&](RngStream& rng) {
        return std::vector<Tensor<double>>{rand_tensor({4, 5}, rng, true, 0.3, 3.0)};
      });
  simple(
      "clamp_min",
      [](const std::vector<Tensor<double>>& xs, RngStream& wr) {
        return weighted_sum(clamp_min(xs[0], 0.25), wr);
      },
      [&](RngStream& rng) {
        return std::vector<Tensor<double>>{rand_tensor({4, 5}, rng, true, -1.0, 1.5)};
      });
  simple(
      "add_scalar/mul_scalar",
      [](const std::vector<Tensor<double>>& xs, RngStream& wr) {
        return weighted_sum(mul_scalar(add_scalar(xs[0], 0.7), -1.3), wr);
      },
      [&](RngStream& rng) {
        return std::vector<Tensor<double>>{rand_tensor({6}, rng, true, -2.0, 2.0)};
      });
  simple(
      "reshape",
      [](const std::vector<Tensor<double>>& xs, RngStream& wr) {
        return weighted_sum(reshape(xs[0], {4, 3}), wr);
      },
      [&](RngStream& rng) {
        return std::vector<Tensor<double>>{rand_tensor({2, 6}, rng, true, -2.0, 2.0)};
      });
  simple(
      "broadcast_to",
      [](const std::vector<Tensor<double>>& xs, RngStream& wr) {
        return weighted_sum(broadcast_to(xs[0], {4, 3, 2}), wr);
      },
      [&](RngStream& rng) {
        return std::vector<Tensor<double>>{rand_tensor({3, 2}, rng, true, -2.0, 2.0)};
      });
  simple(
      "sum_all/mean_all",
      [](const std::vector<Tensor<double>>& xs, RngStream&) {
        return add(sum_all(xs[0]), mean_all(xs[0]));
      },
      [&](RngStream& rng) {
        return std::vector<Tensor<double>>{rand_tensor({3, 5}, rng, true, -2.0, 2.0)};
      });
  simple(
      "sum/mean_trailing",
      [](const std::vector<Tensor<double>>& xs, RngStream& wr) {
        return add(weighted_sum(sum_trailing(xs[0], 2), wr), weighted_sum(mean_trailing(xs[0], 1), wr));
      },
      [&](RngStream& rng) {
        return std::vector<Tensor<double>>{rand_tensor({2, 3, 4}, rng, true, -2.0, 2.0)};
      });
  simple(
      "var_trailing",
      [](const std::vector<Tensor<double>>& xs, RngStream& wr) {
        return weighted_sum(var_trailing(xs[0], 2), wr);
      },
      [&](RngStream& rng) {
        return std::vector<Tensor<double>>{rand_tensor({2, 3, 6}, rng, true, -2.0, 2.0)};
      });
  simple(
      "matmul",
      [](const std::vector<Tensor<double>>& xs, RngStream& wr) {
        return weighted_sum(matmul(xs[0], xs[1]), wr);
      },
      [&](RngStream& rng) {
        return std::vector<Tensor<double>>{rand_tensor({3, 4}, rng, true, -1.5, 1.5),
                                           rand_tensor({4, 5}, rng, true, -1.5, 1.5)};
      });
  simple(
      "permute_rows",
      [](const std::vector<Tensor<double>>& xs, RngStream& wr) {
        const std::vector<std::size_t> perm = {3, 1, 0, 2};
        return weighted_sum(permute_rows(xs[0], perm), wr);
      },
      [&](RngStream& rng) {
        return std::vector<Tensor<double>>{rand_tensor({4, 3}, rng, true, -2.0, 2.0)};
      });
  simple(
      "softmax_cross_entropy",
      [](const std::vector<Tensor<double>>& xs, RngStream&) {
        return softmax_cross_entropy(xs[0], {2, 0, 4});
      },
      [&](RngStream& rng) {
        return std::vector<Tensor<double>>{rand_tensor({3, 5}, rng, true, -2.0, 2.0)};
      });
  simple(
      "conv2d",
      [](const std::vector<Tensor<double>>& xs, RngStream& wr) {
        return weighted_sum(conv2d(xs[0], xs[1], xs[2], 1), wr);
      },
      [&](RngStream& rng) {
        return std::vector<Tensor<double>>{rand_tensor({2, 2, 5, 5}, rng, true, -1.0, 1.0),
                                           rand_tensor({3, 2, 3, 3}, rng, true, -1.0, 1.0),
                                           rand_tensor({3}, rng, true, -0.5, 0.5)};
      });
  simple(
      "maxpool2d",
      [](const std::vector<Tensor<double>>& xs, RngStream& wr) {
        return weighted_sum(maxpool2d(xs[0]), wr);
      },
      [&](RngStream& rng) {
        return std::vector<Tensor<double>>{rand_tensor({2, 2, 4, 4}, rng, true, -2.0, 2.0)};
      });
  simple(
      "avgpool_global",
      [](const std::vector<Tensor<double>>& xs, RngStream& wr) {
        return weighted_sum(avgpool_global(xs[0]), wr);
      },
      [&](RngStream& rng) {
        return std::vector<Tensor<double>>{rand_tensor({2, 3, 4, 4}, rng, true, -2.0, 2.0)};
      });
  simple(
      "channel_stats",
      [](const std::vector<Tensor<double>>& xs, RngStream& wr) {
        ChannelStats<double> s = channel_stats(xs[0]);
        return add(weighted_sum(s.mu, wr), weighted_sum(s.sigma, wr));
      },
      [&](RngStream& rng) {
        return std::vector<Tensor<double>>{rand_tensor({2, 3, 4, 4}, rng, true, -2.0, 2.0)};
      });
  simple(
      "adain_replace",
      [](const std::vector<Tensor<double>>& xs, RngStream& wr) {
        return weighted_sum(adain_replace(xs[0], xs[1], xs[2], 1e-6), wr);
      },
      [&](RngStream& rng) {
        return std::vector<Tensor<double>>{rand_tensor({2, 3, 4, 4}, rng, true, -2.0, 2.0),
                                           rand_tensor({2, 3}, rng, true, -1.0, 1.0),
                                           rand_tensor({2, 3}, rng, true, 0.2, 2.0)};
      });

  // GRL: forward identity, backward exactly -lambda times the upstream
  // gradient. Verified against the identity graph rather than against finite
  // differences (the sign flip is the whole point of the op).
  {
    BatteryEntry e;
    e.name = "grl (sign contract)";
    e.pass = true;
    RngStream rng(derive_seed(seed, "battery:grl"));
    for (std::size_t i = 0; i < instances; ++i) {
      const double lambda = rng.uniform(0.0, 8.0);
      Tensor<double> x = detail::rand_tensor({6}, rng, true, -2.0, 2.0);
      Tensor<double> w = detail::rand_tensor({6}, rng, false, -2.0, 2.0);
      Tensor<double> y = sum_all(mul(grl(x, lambda), w));
      if (y.data() != sum_all(mul(x, w)).data()) {
        e.pass = false;
        e.detail = "forward is not the identity";
      }
      x.zero_grad();
      y.backward();
      for (std::size_t c = 0; c < x.size(); ++c) {
        const double expect = -lambda * w.data()[c];
        const double rel = std::abs(x.grad()[c] - expect) /
                           std::max(1e-6, std::abs(expect));
        e.max_rel_err = std::max(e.max_rel_err, rel);
        ++e.checked;
        if (rel >= 1e-9) {
          e.pass = false;
          e.detail = "backward is not -lambda * upstream";
        }
      }
    }
    out.push_back(e);
  }

  return out;
}

// Perturbation-module battery: gradcheck through each style op with frozen
// randomness (gates forced open, noise reseeded per call).
inline std::vector<BatteryEntry> gradcheck_advstyle_battery(std::uint64_t seed,
                                                            std::size_t instances = 10) {
  using detail::rand_tensor;
  using detail::weighted_sum;
  std::vector<BatteryEntry> out;

  auto style_entry = [&](const std::string& name, AdvVariant variant, bool identity_grl) {
    out.push_back(detail::run_entry(name, seed, instances, [&](RngStream& rng) {
      const std::size_t B = 3, C = 4;
      Tensor<double> x = rand_tensor({B, C, 4, 4}, rng, true, -2.0, 2.0);
      AdvStyleState<double> st = AdvStyleState<double>::init(C, variant, 5.0);
      if (variant == AdvVariant::full) {
        for (double& v : st.sigma_mu.data()) v = rng.uniform(-0.5, 0.5);
        for (double& v : st.sigma_sigma.data()) v = rng.uniform(-0.5, 0.5);
      } else if (variant == AdvVariant::intensity_only) {
        st.sigma_mu.data()[0] = rng.uniform(-0.5, 0.5);
        st.sigma_sigma.data()[0] = rng.uniform(-0.5, 0.5);
      }
      const std::uint64_t eps_seed = rng.bits();
      const std::uint64_t wseed = rng.bits();
      // Probed tensors share buffers with the captures, so f can ignore its
      // argument list.
      auto f = [&, eps_seed, wseed](const std::vector<Tensor<double>>&) {
        PerturbHooks<double> hooks;
        hooks.frozen_noise_seed = eps_seed;
        hooks.grl_identity = identity_grl;
        RngStream unused(0);
        Tensor<double> y = advstyle_forward(x, st, Mode::train, unused, 1e-6, &hooks);
        RngStream wr(wseed);
        return weighted_sum(y, wr);
      };
      // The restricted variants modulate the learned parameters by a
      // batch-statistic envelope that is held out of the graph, so numeric
      // probes of x see a dependence the tape deliberately omits; for them the
      // check covers the learned parameters only (the x path is identical to
      // the full variant's, which checks everything).
      std::vector<Tensor<double>> probed = variant == AdvVariant::full
                                               ? std::vector<Tensor<double>>{x, st.sigma_mu,
                                                                             st.sigma_sigma}
                                               : std::vector<Tensor<double>>{st.sigma_mu,
                                                                             st.sigma_sigma};
      return check_gradients<double>(f, probed, 1e-4, 1e-4);
    }));
  };
  style_entry("advstyle_forward (grl identity, full)", AdvVariant::full, true);
  style_entry("advstyle_forward (direction_only)", AdvVariant::direction_only, true);
  style_entry("advstyle_forward (intensity_only)", AdvVariant::intensity_only, true);

  // dsu_forward is not finite-difference checked: its perturbation scales are
  // batch statistics held out of the graph, so numeric probes see a
  // dependence the analytic gradient deliberately omits. Its constituent tape
  // ops are all covered above; its values are pinned by unit oracles.
  out.push_back(detail::run_entry("mixstyle_forward", seed, instances, [&](RngStream& rng) {
    Tensor<double> x = rand_tensor({3, 4, 4, 4}, rng, true, -2.0, 2.0);
    const std::uint64_t inner = rng.bits();
    const std::uint64_t wseed = rng.bits();
    auto f = [&, inner, wseed](const std::vector<Tensor<double>>& xs) {
      RngStream r(inner);
      RngStream wr(wseed);
      return weighted_sum(mixstyle_forward(xs[0], 0.1, 1.0, Mode::train, r), wr);
    };
    return check_gradients<double>(f, {x}, 1e-4, 1e-4);
  }));
  out.push_back(detail::run_entry("padain_forward", seed, instances, [&](RngStream& rng) {
    Tensor<double> x = rand_tensor({3, 4, 4, 4}, rng, true, -2.0, 2.0);
    const std::uint64_t inner = rng.bits();
    const std::uint64_t wseed = rng.bits();
    auto f = [&, inner, wseed](const std::vector<Tensor<double>>& xs) {
      RngStream r(inner);
      RngStream wr(wseed);
      return weighted_sum(padain_forward(xs[0], 1.0, Mode::train, r), wr);
    };
    return check_gradients<double>(f, {x}, 1e-4, 1e-4);
  }));
  return out;
}

// Full-backbone battery: cross-entropy through an AdvStyle-equipped MiniNet,
// all parameters checked, noise frozen, GRL as identity (its sign contract
// is covered by the dedicated check above and by the acceptance suite).
//
// The probe step is 1e-5 rather than the per-op 1e-4: a composed net crosses
// a ReLU/maxpool kink inside a +-1e-4 interval often enough to swamp the
// central-difference estimate, while at 1e-5 the estimate is clean and still
// an order of magnitude above double-precision cancellation noise.
inline constexpr double kBackboneFdStep = 1e-5;

inline std::vector<BatteryEntry> gradcheck_backbone_battery(std::uint64_t seed,
                                                            std::size_t instances = 3) {
  using detail::rand_tensor;
  std::vector<BatteryEntry> out;
  out.push_back(detail::run_entry("mininet full advstyle", seed, instances, [&](RngStream& rng) {
    ModelSpec spec;
    spec.in_h = 8;
    spec.in_w = 8;
    spec.widths = {3, 3, 4, 4, 4};
    spec.num_classes = 3;
    spec.method = Method::advstyle;
    spec.insert = {true, true, true, true, true, true};
    MiniNet<double> model(spec, rng.bits());

    const std::size_t B = 2;
    Tensor<double> x = rand_tensor({B, 3, 8, 8}, rng, false, 0.0, 1.0);
    const std::vector<int> labels = {static_cast<int>(rng.uniform_int(3)),
                                     static_cast<int>(rng.uniform_int(3))};
    const std::uint64_t eps_seed = rng.bits();

    std::vector<Tensor<double>> params;
    for (const auto& e : model.registry().entries()) params.push_back(e.tensor);
    auto f = [&, eps_seed](const std::vector<Tensor<double>>&) {
      PerturbHooks<double> hooks;
      hooks.frozen_noise_seed = eps_seed;
      hooks.grl_identity = true;
      RngStream unused(0);
      Tensor<double> logits = model.forward(x, Mode::train, unused, &hooks);
      return softmax_cross_entropy(logits, labels);
    };
    return check_gradients<double>(f, params, kBackboneFdStep, 1e-4);
  }));

  // Theta gradients with the GRL live (reversal only touches Sigma paths).
  out.push_back(detail::run_entry("mininet theta, grl live", seed, 2, [&](RngStream& rng) {
    ModelSpec spec;
    spec.in_h = 8;
    spec.in_w = 8;
    spec.widths = {3, 3, 4, 4, 4};
    spec.num_classes = 3;
    spec.method = Method::advstyle;
    spec.insert = {true, false, false, true, false, true};
    MiniNet<double> model(spec, rng.bits());

    Tensor<double> x = rand_tensor({2, 3, 8, 8}, rng, false, 0.0, 1.0);
    const std::vector<int> labels = {static_cast<int>(rng.uniform_int(3)),
                                     static_cast<int>(rng.uniform_int(3))};
    const std::uint64_t eps_seed = rng.bits();

    std::vector<Tensor<double>> params;
    for (const auto& e : model.registry().by_tag(ParamTag::theta)) params.push_back(e.tensor);
    auto f = [&, eps_seed](const std::vector<Tensor<double>>&) {
      PerturbHooks<double> hooks;
      hooks.frozen_noise_seed = eps_seed;
      RngStream unused(0);
      Tensor<double> logits = model.forward(x, Mode::train, unused, &hooks);
      return softmax_cross_entropy(logits, labels);
    };
    return check_gradients<double>(f, params, kBackboneFdStep, 1e-4);
  }));
  return out;
}

}  // namespace advstyle
