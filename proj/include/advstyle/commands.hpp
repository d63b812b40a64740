#pragma once

// Library-level implementations of the CLI subcommands, shared by the binary
// and the tests: dataset generation, training (with checkpoint output),
// evaluation into a MetricsReport, gradient-check batteries, config sweeps,
// and A-distance/PCA export. Functions throw on failure; exit_code_for()
// maps exception types onto the documented process exit codes.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "advstyle/config.hpp"
#include "advstyle/gradcheck_battery.hpp"
#include "advstyle/metrics.hpp"

namespace advstyle {

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

// ModelSpec as key = value lines, embedded in checkpoints so a model can be
// rebuilt from the file alone.
inline std::string model_spec_text(const ModelSpec& spec) {
  std::ostringstream os;
  os << "in_channels = " << spec.in_channels << "\n";
  os << "in_h = " << spec.in_h << "\n";
  os << "in_w = " << spec.in_w << "\n";
  os << "num_classes = " << spec.num_classes << "\n";
  os << "widths = ";
  for (std::size_t i = 0; i < spec.widths.size(); ++i)
    os << (i ? "," : "") << spec.widths[i];
  os << "\n";
  os << "insert = ";
  bool first = true;
  bool any = false;
  for (std::size_t p = 0; p < spec.insert.size(); ++p) {
    if (!spec.insert[p]) continue;
    os << (first ? "" : ",") << insertion_point_names()[p];
    first = false;
    any = true;
  }
  if (!any) os << "none";
  os << "\n";
  os << "method = " << method_name(spec.method) << "\n";
  os << "variant = " << variant_name(spec.variant) << "\n";
  os << "lambda = " << detail::fmt_double(spec.lambda) << "\n";
  os << "perturb_prob = " << detail::fmt_double(spec.perturb_prob) << "\n";
  os << "mixstyle_alpha = " << detail::fmt_double(spec.mixstyle_alpha) << "\n";
  os << "eps_floor = " << detail::fmt_double(spec.eps_floor) << "\n";
  return os.str();
}

inline ModelSpec model_spec_from_text(const std::string& text) {
  // Reuse the config parser: wrap the flat key list in the sections it spans.
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("model spec record line " + std::to_string(lineno) +
                        ": expected key = value: " + line);
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key == "method")
      cfg.set("method", "name", value);
    else if (key == "variant" || key == "lambda" || key == "perturb_prob" ||
             key == "mixstyle_alpha" || key == "eps_floor")
      cfg.set("method", key, value);
    else
      cfg.set("model", key, value);
  }
  return cfg.model_spec();
}

inline constexpr const char* kCheckpointMetaRecord = "meta.model_spec";

template <typename T>
void save_checkpoint(const std::string& path, const MiniNet<T>& model) {
  RecordFile<T> rf;
  rf.add_text(kCheckpointMetaRecord, model_spec_text(model.spec()));
  for (const auto& e : model.registry().entries())
    rf.add_tensor(e.name, e.tensor.shape(),
                  std::vector<T>(e.tensor.data().begin(), e.tensor.data().end()));
  rf.save(path);
}

template <typename T>
MiniNet<T> load_checkpoint(const std::string& path) {
  RecordFile<T> rf = RecordFile<T>::load(path);
  if (!rf.contains(kCheckpointMetaRecord))
    throw IoError(path + ": missing " + std::string(kCheckpointMetaRecord) + " record");
  const ModelSpec spec = model_spec_from_text(rf.find(kCheckpointMetaRecord).text);
  MiniNet<T> model(spec, 0);  // init seed is irrelevant; weights are overwritten
  for (const auto& e : model.registry().entries()) {
    if (!rf.contains(e.name)) throw IoError(path + ": missing tensor record '" + e.name + "'");
    const auto& rec = rf.find(e.name);
    if (rec.shape != e.tensor.shape())
      throw IoError(path + ": tensor '" + e.name + "' has shape " + shape_str(rec.shape) +
                    ", model expects " + shape_str(e.tensor.shape()));
    Tensor<T> dst = e.tensor;  // handle copy: shares the parameter buffer
    std::copy(rec.data.begin(), rec.data.end(), dst.data().begin());
  }
  return model;
}

// ---------------------------------------------------------------------------
// Domain naming
// ---------------------------------------------------------------------------

// External domain names d0 (source) and t1..t3 (targets) map onto the split
// files written by save_benchmark.
inline const std::vector<std::string>& domain_names() {
  static const std::vector<std::string> names = {"d0", "t1", "t2", "t3"};
  return names;
}

inline std::string split_for_domain(const std::string& domain) {
  for (std::size_t i = 0; i < domain_names().size(); ++i)
    if (domain == domain_names()[i]) return split_name(i);
  throw ConfigError("unknown domain '" + domain + "' (expected one of d0,t1,t2,t3)");
}

inline std::vector<std::string> parse_domain_list(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(csv);
  while (std::getline(is, cur, ',')) {
    cur = detail::trim(cur);
    if (cur.empty()) continue;
    split_for_domain(cur);  // validates
    out.push_back(cur);
  }
  if (out.empty()) throw ConfigError("empty domain list '" + csv + "'");
  return out;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

inline void cmd_gen_data(const DataGenConfig& cfg, const std::string& out_dir) {
  const Benchmark b = make_benchmark(cfg);
  save_benchmark(out_dir, b);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOutputs {
  std::string checkpoint_path;
  std::string runlog_path;
  std::string config_path;
  RunLog log;
};

template <typename T = float>
TrainOutputs cmd_train(const RunConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir) {
  const ModelSpec spec = cfg.model_spec();
  const TrainConfig tc = cfg.train_config();
  const Split train = load_split(data_dir, "train");

  MiniNet<T> model(spec, derive_seed(tc.seed, "model"));
  EpochCallback<T> on_epoch = nullptr;
  if (tc.checkpoint_every > 0) {
    on_epoch = [&, out_dir](std::size_t epoch, MiniNet<T>& m) {
      if (epoch % tc.checkpoint_every != 0) return;
      std::ostringstream name;
      name << out_dir << "/checkpoint_epoch" << std::setw(4) << std::setfill('0') << epoch
           << ".advt";
      save_checkpoint(name.str(), m);
    };
  }
  const std::string snapshot = cfg.serialize();
  RunLog log = train_model(model, train, tc, snapshot, on_epoch);

  TrainOutputs out;
  out.checkpoint_path = out_dir + "/checkpoint.advt";
  out.runlog_path = out_dir + "/runlog.jsonl";
  out.config_path = out_dir + "/config.ini";
  save_checkpoint(out.checkpoint_path, model);
  atomic_write_file(out.runlog_path, log.to_jsonl());
  atomic_write_file(out.config_path, snapshot);
  out.log = std::move(log);
  return out;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

template <typename T = float>
MetricsReport eval_checkpoint(MiniNet<T>& model, const std::string& data_dir,
                              const std::vector<std::string>& domains,
                              std::size_t batch_size, std::uint64_t config_hash,
                              std::uint64_t seed) {
  MetricsReport rep;
  rep.config_hash = config_hash;
  rep.seed = seed;
  rep.method = method_name(model.spec().method);
  std::vector<double> target_accs;
  for (const std::string& d : domains) {
    const Split split = load_split(data_dir, split_for_domain(d));
    const double acc = evaluate(model, split, batch_size);
    if (d == "d0")
      rep.source_acc = acc;
    else
      rep.target_acc.emplace_back(d, acc);
  }
  if (rep.target_acc.size() >= 2) {
    rep.finalize();
  } else if (rep.target_acc.size() == 1) {
    rep.mean_acc = rep.target_acc[0].second;
    rep.std_acc = 0;
  }
  return rep;
}

template <typename T = float>
MetricsReport cmd_eval(const std::string& checkpoint_path, const std::string& data_dir,
                       const std::vector<std::string>& domains, const std::string& out_dir,
                       std::size_t batch_size = 256) {
  MiniNet<T> model = load_checkpoint<T>(checkpoint_path);
  MetricsReport rep = eval_checkpoint(model, data_dir, domains, batch_size, 0, 0);
  atomic_write_file(out_dir + "/metrics.json", rep.to_json().dump(2) + "\n");
  atomic_write_file(out_dir + "/metrics.csv",
                    MetricsReport::csv_header() + "\n" + rep.csv_row() + "\n");
  return rep;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

// Runs the requested battery scope, printing one line per entry; returns
// true when every entry passes.
inline bool cmd_gradcheck(const std::string& scope, std::ostream& os, std::uint64_t seed = 0) {
  std::vector<BatteryEntry> entries;
  if (scope == "ops") {
    entries = gradcheck_ops_battery(seed);
  } else if (scope == "advstyle") {
    entries = gradcheck_advstyle_battery(seed);
  } else if (scope == "backbone") {
    entries = gradcheck_backbone_battery(seed);
  } else if (scope == "all") {
    entries = gradcheck_ops_battery(seed);
    for (auto& e : gradcheck_advstyle_battery(seed)) entries.push_back(std::move(e));
    for (auto& e : gradcheck_backbone_battery(seed)) entries.push_back(std::move(e));
  } else {
    throw ConfigError("gradcheck: unknown scope '" + scope +
                      "' (expected ops, advstyle, backbone, or all)");
  }
  bool all_pass = true;
  for (const auto& e : entries) {
    os << (e.pass ? "PASS" : "FAIL") << "  " << e.name << "  (checked " << e.checked
       << ", excluded " << e.excluded << ", max rel err " << e.max_rel_err << ")";
    if (!e.pass && !e.detail.empty()) os << "  [" << e.detail << "]";
    os << "\n";
    all_pass = all_pass && e.pass;
  }
  os << (all_pass ? "gradcheck: all entries passed" : "gradcheck: FAILURES above") << "\n";
  return all_pass;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepOptions {
  std::string grid = "lambda";  // lambda | methods | insertion | variants
  std::size_t seeds = 5;
  // 0 = flag absent: fall back to the ADVSTYLE_WORKERS environment variable,
  // then to 1.
  std::size_t workers = 0;
};

namespace detail {

struct SweepJob {
  RunConfig cfg;
  std::string label;  // grid-cell description for the CSV
};

inline std::vector<SweepJob> sweep_jobs(const RunConfig& base, const std::string& grid,
                                        std::size_t seeds) {
  std::vector<SweepJob> cells;
  if (grid == "lambda") {
    for (const char* lam : {"0.1", "0.5", "1", "5", "10", "20"}) {
      SweepJob j{base, std::string("lambda=") + lam};
      j.cfg.set("method", "name", "advstyle");
      j.cfg.set("method", "lambda", lam);
      cells.push_back(std::move(j));
    }
  } else if (grid == "methods") {
    for (const char* m : {"none", "advstyle", "dsu", "mixstyle", "padain"}) {
      SweepJob j{base, std::string("method=") + m};
      j.cfg.set("method", "name", m);
      cells.push_back(std::move(j));
    }
  } else if (grid == "insertion") {
    for (const std::string& p : insertion_point_names()) {
      SweepJob j{base, "insert=" + p};
      j.cfg.set("method", "name", "advstyle");
      j.cfg.set("model", "insert", p);
      cells.push_back(std::move(j));
    }
    SweepJob j{base, "insert=all"};
    j.cfg.set("method", "name", "advstyle");
    j.cfg.set("model", "insert", "all");
    cells.push_back(std::move(j));
  } else if (grid == "variants") {
    for (const char* v : {"full", "direction_only", "intensity_only"}) {
      SweepJob j{base, std::string("variant=") + v};
      j.cfg.set("method", "name", "advstyle");
      j.cfg.set("method", "variant", v);
      cells.push_back(std::move(j));
    }
  } else {
    throw ConfigError("sweep: unknown grid '" + grid +
                      "' (expected lambda, methods, insertion, or variants)");
  }
  std::vector<SweepJob> jobs;
  for (const SweepJob& cell : cells)
    for (std::size_t s = 0; s < seeds; ++s) {
      SweepJob j = cell;
      j.cfg.set("train", "seed", std::to_string(s));
      jobs.push_back(std::move(j));
    }
  return jobs;
}

inline std::size_t resolve_workers(std::size_t flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("ADVSTYLE_WORKERS")) {
    try {
      const unsigned long n = std::stoul(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
      throw ConfigError(std::string("ADVSTYLE_WORKERS: expected a positive integer, got '") +
                        env + "'");
    }
    throw ConfigError("ADVSTYLE_WORKERS: expected a positive integer, got '" + std::string(env) +
                      "'");
  }
  return 1;
}

}  // namespace detail

inline const char* sweep_csv_header() {
  return "cell,method,variant,insert,lambda,asa_mode,seed,acc_t1,acc_t2,acc_t3,mean_acc,std_acc,"
         "config_hash";
}

// Trains and evaluates every grid cell x seed; rows are merged in job order
// regardless of worker count, so the CSV is deterministic.
template <typename T = float>
std::string cmd_sweep(const RunConfig& base, const std::string& data_dir,
                      const std::string& out_csv, const SweepOptions& opt) {
  const std::vector<detail::SweepJob> jobs = detail::sweep_jobs(base, opt.grid, opt.seeds);
  const std::size_t workers = std::min(detail::resolve_workers(opt.workers), jobs.size());
  const Split train = load_split(data_dir, "train");
  std::vector<Split> targets;
  for (std::size_t d = 1; d <= 3; ++d) targets.push_back(load_split(data_dir, split_name(d)));

  std::vector<std::string> rows(jobs.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(jobs.size());
  auto run_job = [&](std::size_t ji) {
    const detail::SweepJob& job = jobs[ji];
    const ModelSpec spec = job.cfg.model_spec();
    const TrainConfig tc = job.cfg.train_config();
    MiniNet<T> model(spec, derive_seed(tc.seed, "model"));
    train_model(model, train, tc, job.cfg.serialize());
    std::vector<double> accs;
    for (const Split& tgt : targets) accs.push_back(evaluate(model, tgt, 256));
    const Aggregate agg = aggregate(accs);
    std::ostringstream os;
    os.precision(17);
    std::string insert_desc;
    for (std::size_t p = 0; p < 6; ++p)
      if (spec.insert[p]) insert_desc += (insert_desc.empty() ? "" : "+") +
                                         std::string(insertion_point_names()[p]);
    if (insert_desc.empty()) insert_desc = "none";
    os << job.label << "," << method_name(spec.method) << "," << variant_name(spec.variant) << ","
       << insert_desc << "," << spec.lambda << "," << asa_mode_name(tc.asa_mode) << "," << tc.seed
       << "," << accs[0] << "," << accs[1] << "," << accs[2] << "," << agg.mean << ","
       << agg.stddev << "," << job.cfg.hash();
    rows[ji] = os.str();
  };

  if (workers <= 1) {
    for (std::size_t ji = 0; ji < jobs.size(); ++ji) run_job(ji);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t ji = next.fetch_add(1);
          if (ji >= jobs.size()) return;
          try {
            run_job(ji);
          } catch (const std::exception& e) {
            errors[ji] = e.what();
          }
        }
      });
    for (auto& t : pool) t.join();
    for (std::size_t ji = 0; ji < jobs.size(); ++ji)
      if (!errors[ji].empty())
        throw std::runtime_error("sweep job " + std::to_string(ji) + " (" + jobs[ji].label +
                                 ") failed: " + errors[ji]);
  }

  std::ostringstream csv;
  csv << sweep_csv_header() << "\n";
  for (const std::string& r : rows) csv << r << "\n";
  atomic_write_file(out_csv, csv.str());
  return csv.str();
}

// ---------------------------------------------------------------------------
// adistance
// ---------------------------------------------------------------------------

inline std::vector<std::pair<std::string, std::string>> parse_pair_list(const std::string& csv) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream is(csv);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = detail::trim(item);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos)
      throw ConfigError("adistance: expected source:target pairs, got '" + item + "'");
    std::pair<std::string, std::string> p{detail::trim(item.substr(0, colon)),
                                          detail::trim(item.substr(colon + 1))};
    split_for_domain(p.first);
    split_for_domain(p.second);
    out.push_back(std::move(p));
  }
  if (out.empty()) throw ConfigError("adistance: empty pair list '" + csv + "'");
  return out;
}

template <typename T = float>
nlohmann::ordered_json cmd_adistance(const std::string& checkpoint_path,
                                     const std::string& data_dir,
                                     const std::vector<std::pair<std::string, std::string>>& pairs,
                                     const std::string& out_dir, std::uint64_t seed = 0) {
  MiniNet<T> model = load_checkpoint<T>(checkpoint_path);

  // Extract features once per distinct domain (order of first mention).
  std::vector<std::string> order;
  std::vector<Tensor<T>> feats;
  const auto features_of = [&](const std::string& d) -> const Tensor<T>& {
    for (std::size_t i = 0; i < order.size(); ++i)
      if (order[i] == d) return feats[i];
    const Split split = load_split(data_dir, split_for_domain(d));
    order.push_back(d);
    feats.push_back(extract_features(model, split, 256));
    return feats.back();
  };

  nlohmann::ordered_json table = nlohmann::ordered_json::object();
  for (const auto& [src, tgt] : pairs) {
    const Tensor<T> a = features_of(src);  // copy: features_of may reallocate feats
    const Tensor<T>& b = features_of(tgt);
    table[src + "->" + tgt] = a_distance(a, b, seed);
  }
  nlohmann::ordered_json doc;
  doc["seed"] = seed;
  doc["a_distance"] = table;
  atomic_write_file(out_dir + "/adistance.json", doc.dump(2) + "\n");

  // Pooled 2-D PCA projection across every referenced domain, for plotting.
  std::size_t total = 0;
  for (const Tensor<T>& f : feats) total += f.shape()[0];
  const std::size_t dim = feats.front().shape()[1];
  Tensor<T> pooled = Tensor<T>::zeros({total, dim});
  std::vector<std::string> point_domains;
  point_domains.reserve(total);
  std::size_t row = 0;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    std::copy(feats[i].data().begin(), feats[i].data().end(),
              pooled.data().begin() + row * dim);
    for (std::size_t r = 0; r < feats[i].shape()[0]; ++r) point_domains.push_back(order[i]);
    row += feats[i].shape()[0];
  }
  const PcaResult pca = pca_project(pooled, 2);
  atomic_write_file(out_dir + "/pca.csv", pca_csv(pca, point_domains));
  return doc;
}

// ---------------------------------------------------------------------------
// Exit codes
// ---------------------------------------------------------------------------

// 0 success, 1 validation error (bad config/flags/paths), 2 runtime failure
// (shape errors, aborted training, unexpected exceptions).
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 1;
  if (dynamic_cast<const ValueError*>(&e)) return 1;
  if (dynamic_cast<const IoError*>(&e)) return 1;
  return 2;
}

}  // namespace advstyle
