// advstyle: command-line laboratory for adversarial style augmentation.
//
// Subcommands: gen-data, train, eval, gradcheck, sweep, adistance. Every
// experiment knob lives in a sectioned config file; flags override file
// values, and --set section.key=value reaches any key. Exit codes: 0 success,
// 1 validation error (flags/config/paths), 2 runtime failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "advstyle/commands.hpp"

namespace {

using advstyle::RunConfig;

// Base config = file if given, schema defaults otherwise; then generic
// --set overrides, then dedicated flags (highest precedence).
RunConfig base_config(const std::string& config_path, const std::vector<std::string>& sets) {
  RunConfig cfg = config_path.empty() ? RunConfig() : advstyle::load_config_file(config_path);
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    const auto dot = s.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw advstyle::ConfigError("--set expects section.key=value, got '" + s + "'");
    cfg.set(s.substr(0, dot), s.substr(dot + 1, eq - dot - 1), s.substr(eq + 1));
  }
  return cfg;
}

void apply_if(RunConfig& cfg, const std::string& section, const std::string& key,
              const std::optional<std::string>& v) {
  if (v) cfg.set(section, key, *v);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"advstyle: adversarial style augmentation laboratory"};
  app.require_subcommand(1);
  int rc = 0;

  // ---- gen-data ----------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "Generate the multi-domain benchmark dataset");
  std::string gen_out, gen_config;
  std::vector<std::string> gen_sets;
  std::optional<std::string> gen_seed, gen_train_size, gen_target_size;
  gen->add_option("--out", gen_out, "Output dataset directory")->required();
  gen->add_option("--config", gen_config, "Config file providing the [data] section");
  gen->add_option("--seed", gen_seed, "Dataset seed (overrides [data] seed)");
  gen->add_option("--train-size", gen_train_size, "Source split size (overrides config)");
  gen->add_option("--target-size", gen_target_size, "Per-target split size (overrides config)");
  gen->add_option("--set", gen_sets, "Override any config key: section.key=value");
  gen->callback([&] {
    RunConfig cfg = base_config(gen_config, gen_sets);
    apply_if(cfg, "data", "seed", gen_seed);
    apply_if(cfg, "data", "train_size", gen_train_size);
    apply_if(cfg, "data", "target_size", gen_target_size);
    advstyle::cmd_gen_data(cfg.data_config(), gen_out);
    std::cout << "wrote dataset to " << gen_out << "\n";
  });

  // ---- train --------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "Train a model on the source split");
  std::string tr_data, tr_out, tr_config;
  std::vector<std::string> tr_sets;
  std::optional<std::string> tr_seed, tr_epochs, tr_method, tr_lambda, tr_mode, tr_insert;
  tr->add_option("--data", tr_data, "Dataset directory (from gen-data)")->required();
  tr->add_option("--out", tr_out, "Output directory for checkpoint/runlog")->required();
  tr->add_option("--config", tr_config, "Config file (schema defaults if omitted)");
  tr->add_option("--seed", tr_seed, "Training seed (overrides [train] seed)");
  tr->add_option("--epochs", tr_epochs, "Epoch count (overrides [train] epochs)");
  tr->add_option("--method", tr_method, "none|advstyle|dsu|mixstyle|padain");
  tr->add_option("--lambda", tr_lambda, "GRL strength (overrides [method] lambda)");
  tr->add_option("--asa-mode", tr_mode, "grl|iterative (overrides [train] asa_mode)");
  tr->add_option("--insert", tr_insert, "Insertion points: all, none, or name list");
  tr->add_option("--set", tr_sets, "Override any config key: section.key=value");
  tr->callback([&] {
    RunConfig cfg = base_config(tr_config, tr_sets);
    apply_if(cfg, "train", "seed", tr_seed);
    apply_if(cfg, "train", "epochs", tr_epochs);
    apply_if(cfg, "method", "name", tr_method);
    apply_if(cfg, "method", "lambda", tr_lambda);
    apply_if(cfg, "train", "asa_mode", tr_mode);
    apply_if(cfg, "model", "insert", tr_insert);
    std::filesystem::create_directories(tr_out);
    const auto out = advstyle::cmd_train<float>(cfg, tr_data, tr_out);
    std::cout << "checkpoint: " << out.checkpoint_path << "\n"
              << "runlog:     " << out.runlog_path << "\n"
              << "final train acc: " << out.log.epochs.back().train_acc << "%\n";
  });

  // ---- eval ---------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint across domains");
  std::string ev_ckpt, ev_data, ev_out, ev_domains = "t1,t2,t3";
  std::optional<std::string> ev_batch;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file (.advt)")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--out", ev_out, "Output directory for metrics.{json,csv}")->required();
  ev->add_option("--domains", ev_domains, "Comma list from d0,t1,t2,t3 (default t1,t2,t3)");
  ev->add_option("--batch-size", ev_batch, "Evaluation batch size (overrides [eval])");
  ev->callback([&] {
    RunConfig cfg;
    apply_if(cfg, "eval", "batch_size", ev_batch);
    std::filesystem::create_directories(ev_out);
    const auto rep = advstyle::cmd_eval<float>(ev_ckpt, ev_data,
                                               advstyle::parse_domain_list(ev_domains), ev_out,
                                               cfg.eval_config().batch_size);
    std::cout << rep.to_json().dump(2) << "\n";
  });

  // ---- gradcheck ------------------------------------------------------------
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient batteries");
  std::string gc_scope = "all";
  std::uint64_t gc_seed = 0;
  gc->add_option("--scope", gc_scope, "ops|advstyle|backbone|all (default all)");
  gc->add_option("--seed", gc_seed, "Battery seed (default 0)");
  gc->callback([&] {
    if (!advstyle::cmd_gradcheck(gc_scope, std::cout, gc_seed)) rc = 2;
  });

  // ---- sweep ----------------------------------------------------------------
  auto* sw = app.add_subcommand("sweep", "Train/eval a preset grid of configs");
  std::string sw_data, sw_out, sw_config, sw_grid = "lambda";
  std::size_t sw_seeds = 5, sw_workers = 0;
  std::vector<std::string> sw_sets;
  sw->add_option("--data", sw_data, "Dataset directory")->required();
  sw->add_option("--out", sw_out, "Output CSV path")->required();
  sw->add_option("--config", sw_config, "Base config file for every cell");
  sw->add_option("--grid", sw_grid, "lambda|methods|insertion|variants (default lambda)");
  sw->add_option("--seeds", sw_seeds, "Seeds per grid cell (default 5)");
  sw->add_option("--workers", sw_workers,
                 "Parallel workers (default: ADVSTYLE_WORKERS env, else 1)");
  sw->add_option("--set", sw_sets, "Override any config key: section.key=value");
  sw->callback([&] {
    advstyle::SweepOptions opt;
    opt.grid = sw_grid;
    opt.seeds = sw_seeds;
    // The env fallback applies only when the flag is absent.
    opt.workers = sw->count("--workers") > 0 ? std::max<std::size_t>(sw_workers, 1) : 0;
    advstyle::cmd_sweep<float>(base_config(sw_config, sw_sets), sw_data, sw_out, opt);
    std::cout << "wrote sweep results to " << sw_out << "\n";
  });

  // ---- adistance -------------------------------------------------------------
  auto* ad = app.add_subcommand("adistance", "Proxy A-distance + PCA export");
  std::string ad_ckpt, ad_data, ad_out, ad_pairs = "d0:t1,d0:t2,d0:t3";
  std::uint64_t ad_seed = 0;
  ad->add_option("--checkpoint", ad_ckpt, "Checkpoint file (.advt)")->required();
  ad->add_option("--data", ad_data, "Dataset directory")->required();
  ad->add_option("--out", ad_out, "Output directory for adistance.json/pca.csv")->required();
  ad->add_option("--pairs", ad_pairs, "source:target pairs (default d0:t1,d0:t2,d0:t3)");
  ad->add_option("--seed", ad_seed, "Probe split seed (default 0)");
  ad->callback([&] {
    std::filesystem::create_directories(ad_out);
    const auto doc = advstyle::cmd_adistance<float>(ad_ckpt, ad_data,
                                                    advstyle::parse_pair_list(ad_pairs), ad_out,
                                                    ad_seed);
    std::cout << doc.dump(2) << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exits 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the parse diagnostic
    return 1;     // flag/argument problems are validation errors
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return advstyle::exit_code_for(e);
  }
  return rc;
}
