#pragma once

// Run configuration: a sectioned key=value text document covering the model,
// method, training, data, and eval knobs. The schema below is the single
// source of truth: parsing rejects unknown sections/keys, serialization
// always emits every key in schema order (so parse -> serialize -> parse is
// the identity on documents), and the config hash is FNV-1a over that
// canonical form.

#include <algorithm>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "advstyle/data.hpp"
#include "advstyle/mininet.hpp"
#include "advstyle/train.hpp"

namespace advstyle {

struct EvalConfig {
  std::size_t batch_size = 256;

  void validate() const {
    if (batch_size < 1) throw ConfigError("eval: batch_size must be >= 1");
  }
};

namespace detail {

struct ConfigKey {
  const char* section;
  const char* key;
  const char* default_value;
};

inline const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      {"model", "in_channels", "3"},
      {"model", "in_h", "32"},
      {"model", "in_w", "32"},
      {"model", "num_classes", "7"},
      {"model", "widths", "8,16,32,32,32"},
      {"model", "insert", "all"},
      {"method", "name", "none"},
      {"method", "variant", "full"},
      {"method", "lambda", "5"},
      {"method", "perturb_prob", "0.5"},
      {"method", "mixstyle_alpha", "0.1"},
      {"method", "eps_floor", "1e-6"},
      {"train", "epochs", "60"},
      {"train", "batch_size", "64"},
      {"train", "optimizer", "sgd_momentum"},
      {"train", "lr", "0.05"},
      {"train", "sigma_lr", "0.05"},
      {"train", "momentum", "0.9"},
      {"train", "adam_beta1", "0.9"},
      {"train", "adam_beta2", "0.999"},
      {"train", "adam_eps", "1e-8"},
      {"train", "weight_decay", "0"},
      {"train", "lr_schedule", "cosine"},
      {"train", "asa_mode", "grl"},
      {"train", "inner_steps", "1"},
      {"train", "seed", "0"},
      {"train", "checkpoint_every", "0"},
      {"data", "seed", "0"},
      {"data", "train_size", "2048"},
      {"data", "target_size", "1024"},
      {"data", "gain_jitter", "0.04"},
      {"data", "bias_jitter", "0.03"},
      {"data", "contrast_lo", "0.85"},
      {"data", "contrast_hi", "1.15"},
      {"eval", "batch_size", "256"},
  };
  return schema;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : detail::config_schema())
      values_[full_key(k.section, k.key)] = k.default_value;
  }

  static std::string full_key(const std::string& section, const std::string& key) {
    return section + "." + key;
  }

  const std::string& get(const std::string& section, const std::string& key) const {
    const auto it = values_.find(full_key(section, key));
    if (it == values_.end())
      throw ConfigError("unknown config key [" + section + "] " + key);
    return it->second;
  }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    const auto it = values_.find(full_key(section, key));
    if (it == values_.end())
      throw ConfigError("unknown config key [" + section + "] " + key);
    it->second = detail::trim(value);
  }

  // Parses `[section]` / `key = value` lines; '#' and ';' start comments.
  static RunConfig parse(const std::string& text, const std::string& origin = "<config>") {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line.erase(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const std::string where = origin + ":" + std::to_string(lineno);
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(where + ": malformed section header: " + line);
        section = detail::trim(line.substr(1, line.size() - 2));
        if (!known_section(section))
          throw ConfigError(where + ": unknown config section [" + section + "]");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected key = value: " + line);
      if (section.empty()) throw ConfigError(where + ": key before any [section]");
      const std::string key = detail::trim(line.substr(0, eq));
      const std::string value = detail::trim(line.substr(eq + 1));
      try {
        cfg.set(section, key, value);
      } catch (const ConfigError&) {
        throw ConfigError(where + ": unknown config key [" + section + "] " + key);
      }
    }
    return cfg;
  }

  // Canonical form: sections and keys in schema order, every key present.
  std::string serialize() const {
    std::ostringstream os;
    std::string current;
    for (const auto& k : detail::config_schema()) {
      if (k.section != current) {
        if (!current.empty()) os << "\n";
        os << "[" << k.section << "]\n";
        current = k.section;
      }
      os << k.key << " = " << values_.at(full_key(k.section, k.key)) << "\n";
    }
    return os.str();
  }

  std::uint64_t hash() const { return fnv1a64(serialize()); }

  // ---- typed views -----------------------------------------------------

  ModelSpec model_spec() const {
    ModelSpec m;
    m.in_channels = get_size("model", "in_channels");
    m.in_h = get_size("model", "in_h");
    m.in_w = get_size("model", "in_w");
    m.num_classes = get_size("model", "num_classes");
    const std::vector<std::string> w = split_list(get("model", "widths"));
    if (w.size() != m.widths.size())
      throw ConfigError("[model] widths: expected " + std::to_string(m.widths.size()) +
                        " comma-separated values, got " + std::to_string(w.size()));
    for (std::size_t i = 0; i < w.size(); ++i)
      m.widths[i] = parse_size("model", "widths", w[i]);
    m.insert = parse_insert(get("model", "insert"));
    m.method = method_from_name(get("method", "name"));
    m.variant = variant_from_name(get("method", "variant"));
    m.lambda = get_real("method", "lambda");
    m.perturb_prob = get_real("method", "perturb_prob");
    m.mixstyle_alpha = get_real("method", "mixstyle_alpha");
    m.eps_floor = get_real("method", "eps_floor");
    m.validate();
    return m;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.epochs = get_size("train", "epochs");
    t.batch_size = get_size("train", "batch_size");
    t.optimizer = opt_kind_from_name(get("train", "optimizer"));
    t.lr = get_real("train", "lr");
    t.sigma_lr = get_real("train", "sigma_lr");
    t.momentum = get_real("train", "momentum");
    t.adam_beta1 = get_real("train", "adam_beta1");
    t.adam_beta2 = get_real("train", "adam_beta2");
    t.adam_eps = get_real("train", "adam_eps");
    t.weight_decay = get_real("train", "weight_decay");
    t.lr_schedule = lr_schedule_from_name(get("train", "lr_schedule"));
    t.asa_mode = asa_mode_from_name(get("train", "asa_mode"));
    t.inner_steps = get_size("train", "inner_steps");
    t.seed = get_u64("train", "seed");
    t.checkpoint_every = get_size("train", "checkpoint_every");
    t.validate();
    return t;
  }

  DataGenConfig data_config() const {
    DataGenConfig d;
    d.seed = get_u64("data", "seed");
    d.train_size = get_size("data", "train_size");
    d.target_size = get_size("data", "target_size");
    d.gain_jitter = get_real("data", "gain_jitter");
    d.bias_jitter = get_real("data", "bias_jitter");
    d.contrast_lo = get_real("data", "contrast_lo");
    d.contrast_hi = get_real("data", "contrast_hi");
    d.validate();
    return d;
  }

  EvalConfig eval_config() const {
    EvalConfig e;
    e.batch_size = get_size("eval", "batch_size");
    e.validate();
    return e;
  }

 private:
  static bool known_section(const std::string& s) {
    for (const auto& k : detail::config_schema())
      if (s == k.section) return true;
    return false;
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        out.push_back(detail::trim(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!detail::trim(cur).empty() || !out.empty()) out.push_back(detail::trim(cur));
    return out;
  }

  std::size_t parse_size(const std::string& sec, const std::string& key,
                         const std::string& v) const {
    try {
      std::size_t pos = 0;
      const unsigned long long n = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
      throw ConfigError("[" + sec + "] " + key + ": expected a non-negative integer, got '" + v +
                        "'");
    }
  }

  std::size_t get_size(const std::string& sec, const std::string& key) const {
    return parse_size(sec, key, get(sec, key));
  }

  std::uint64_t get_u64(const std::string& sec, const std::string& key) const {
    return static_cast<std::uint64_t>(parse_size(sec, key, get(sec, key)));
  }

  double get_real(const std::string& sec, const std::string& key) const {
    const std::string& v = get(sec, key);
    try {
      std::size_t pos = 0;
      const double x = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("[" + sec + "] " + key + ": expected a real number, got '" + v + "'");
    }
  }

  static std::array<bool, 6> parse_insert(const std::string& v) {
    std::array<bool, 6> flags{};
    if (v == "none" || v.empty()) return flags;
    if (v == "all") {
      flags.fill(true);
      return flags;
    }
    for (const std::string& name : split_list(v)) {
      bool found = false;
      for (std::size_t p = 0; p < insertion_point_names().size(); ++p) {
        if (insertion_point_names()[p] == name) {
          flags[p] = true;
          found = true;
          break;
        }
      }
      if (!found)
        throw ConfigError("[model] insert: unknown insertion point '" + name +
                          "' (expected all, none, or names from "
                          "conv1,pool1,block1,block2,block3,block4)");
    }
    return flags;
  }

  std::map<std::string, std::string> values_;
};

inline RunConfig load_config_file(const std::string& path) {
  return RunConfig::parse(read_file(path), path);
}

}  // namespace advstyle
