// Copyright 2026 The fedqs-sim Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fedqs/bounds.hpp"
#include "fedqs/datagen.hpp"
#include "fedqs/engine.hpp"
#include "fedqs/error.hpp"
#include "fedqs/metrics.hpp"
#include "fedqs/numcore.hpp"

namespace fedqs {

enum class DatasetKind { Synthetic, Csv };
enum class PartitionKind { IID, Dirichlet, LogNormal };

struct CsvSource {
  std::string path;
  CsvSchema schema;
  double test_fraction = 0.2;
  std::string group_column;  // lognormal groups; empty means label-based

  friend bool operator==(const CsvSource&, const CsvSource&) = default;
};

struct ExperimentConfig {
  std::string profile = "paper";
  std::string run_id = "run";
  std::string out_dir = "results";
  int repeats = 1;
  double target_fraction = 0.95;
  int threads = 1;  // 0 = hardware concurrency

  SimConfig sim;

  ModelKind model = ModelKind::LogReg;
  int hidden_dim = 32;

  DatasetKind dataset = DatasetKind::Synthetic;
  SyntheticSpec synth{10, 20, 200, 2.5, 1.0};
  int test_per_class = 100;
  CsvSource csv;

  PartitionKind partition = PartitionKind::Dirichlet;
  double dirichlet_x = 0.5;
  double lognormal_sigma = 1.0;
  int lognormal_groups = 1;
  double train_fraction = 0.8;
  int min_samples = 2;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// ---------------------------------------------------------------------------
// Profiles

/// Defaults of the original evaluation: N=100, K=10, T=400, E=2, speed ratio 50.
inline ExperimentConfig paper_profile() { return ExperimentConfig{}; }

/// Laptop-scale task: 10-class synthetic blobs, N=20, K=4, T=150, speed ratio 10.
inline ExperimentConfig desk_profile() {
  ExperimentConfig c;
  c.profile = "desk";
  c.sim.N = 20;
  c.sim.K = 4;
  c.sim.T = 150;
  c.sim.speed_ratio = 10.0;
  return c;
}

inline ExperimentConfig profile_defaults(std::string_view name) {
  if (name == "paper") return paper_profile();
  if (name == "desk") return desk_profile();
  throw ConfigError(detail::concat("key 'profile': unknown profile '", name, "' (expected paper or desk)"));
}

// ---------------------------------------------------------------------------
// Key registry

namespace detail {

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

template <class T>
T parse_number(std::string_view key, std::string_view text, const char* what) {
  T v{};
  const char* b = text.data();
  const char* e = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (text.empty() || ec != std::errc{} || ptr != e) {
    throw ConfigError(concat("key '", key, "': expected ", what, ", got '", text, "'"));
  }
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  const std::string t = lower(text);
  if (t == "true" || t == "1" || t == "on" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "off" || t == "no") return false;
  throw ConfigError(concat("key '", key, "': expected boolean, got '", text, "'"));
}

template <class E>
E parse_enum(std::string_view key, std::string_view text, std::initializer_list<std::pair<const char*, E>> options) {
  const std::string t = lower(text);
  std::string valid;
  for (const auto& [name, value] : options) {
    if (t == name) return value;
    valid += valid.empty() ? name : std::string("|") + name;
  }
  throw ConfigError(concat("key '", key, "': expected one of ", valid, ", got '", text, "'"));
}

template <class E>
std::string enum_name(E v, std::initializer_list<std::pair<const char*, E>> options) {
  for (const auto& [name, value] : options) {
    if (value == v) return name;
  }
  return "?";
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(csv::trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

// "col:a|b|c;col2:x|y"
inline std::map<std::string, std::vector<std::string>> parse_categorical(std::string_view key, std::string_view text) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& entry : split(text, ';')) {
    if (entry.empty()) continue;
    const auto colon = entry.find(':');
    if (colon == std::string::npos || colon == 0) {
      throw ConfigError(concat("key '", key, "': expected column:cat1|cat2, got '", entry, "'"));
    }
    auto cats = split(std::string_view(entry).substr(colon + 1), '|');
    if (cats.empty()) throw ConfigError(concat("key '", key, "': column '", entry.substr(0, colon), "' lists no categories"));
    out[csv::trim(entry.substr(0, colon))] = std::move(cats);
  }
  return out;
}

inline std::string emit_categorical(const std::map<std::string, std::vector<std::string>>& m) {
  std::vector<std::string> parts;
  for (const auto& [col, cats] : m) parts.push_back(col + ":" + join(cats, '|'));
  return join(parts, ';');
}

inline constexpr std::initializer_list<std::pair<const char*, Strategy>> kStrategies = {
    {"fedqs-sgd", Strategy::FedQS_SGD}, {"fedqs-avg", Strategy::FedQS_Avg},
    {"fedsgd", Strategy::FedSGD}, {"fedavg", Strategy::FedAvg}};
inline constexpr std::initializer_list<std::pair<const char*, Mode>> kModes = {{"safl", Mode::SAFL},
                                                                                {"sync", Mode::Sync}};
inline constexpr std::initializer_list<std::pair<const char*, SimilarityKind>> kSimKinds = {
    {"cosine", SimilarityKind::Cosine}, {"euclidean", SimilarityKind::Euclidean},
    {"manhattan", SimilarityKind::Manhattan}};
inline constexpr std::initializer_list<std::pair<const char*, ModelKind>> kModels = {{"logreg", ModelKind::LogReg},
                                                                                     {"mlp", ModelKind::MLP}};
inline constexpr std::initializer_list<std::pair<const char*, DatasetKind>> kDatasets = {
    {"synthetic", DatasetKind::Synthetic}, {"csv", DatasetKind::Csv}};
inline constexpr std::initializer_list<std::pair<const char*, PartitionKind>> kPartitions = {
    {"iid", PartitionKind::IID}, {"dirichlet", PartitionKind::Dirichlet}, {"lognormal", PartitionKind::LogNormal}};

struct Field {
  const char* section;
  const char* name;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define FEDQS_INT(sec, key, expr)                                                                   \
  Field {                                                                                           \
    sec, key, [](ExperimentConfig& c, std::string_view v) { expr = parse_number<int>(key, v, "integer"); }, \
        [](const ExperimentConfig& c) { return std::to_string(expr); }                              \
  }
#define FEDQS_REAL(sec, key, expr)                                                                      \
  Field {                                                                                               \
    sec, key, [](ExperimentConfig& c, std::string_view v) { expr = parse_number<double>(key, v, "number"); }, \
        [](const ExperimentConfig& c) { return format_real(expr); }                                     \
  }
#define FEDQS_BOOL(sec, key, expr)                                                            \
  Field {                                                                                     \
    sec, key, [](ExperimentConfig& c, std::string_view v) { expr = parse_bool(key, v); },     \
        [](const ExperimentConfig& c) { return std::string((expr) ? "true" : "false"); }      \
  }
#define FEDQS_ENUM(sec, key, expr, table)                                                          \
  Field {                                                                                          \
    sec, key, [](ExperimentConfig& c, std::string_view v) { expr = parse_enum(key, v, table); },   \
        [](const ExperimentConfig& c) { return enum_name(expr, table); }                           \
  }
#define FEDQS_STR(sec, key, expr)                                                          \
  Field {                                                                                  \
    sec, key, [](ExperimentConfig& c, std::string_view v) { expr = std::string(v); },      \
        [](const ExperimentConfig& c) { return std::string(expr); }                        \
  }

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      // `profile` is handled before every other key; listed here for emission.
      FEDQS_STR("run", "profile", c.profile),
      FEDQS_STR("run", "run_id", c.run_id),
      FEDQS_STR("run", "out_dir", c.out_dir),
      Field{"run", "seed",
            [](ExperimentConfig& c, std::string_view v) {
              c.sim.seed = parse_number<std::uint64_t>("seed", v, "unsigned integer");
            },
            [](const ExperimentConfig& c) { return std::to_string(c.sim.seed); }},
      FEDQS_INT("run", "repeats", c.repeats),
      FEDQS_REAL("run", "target_fraction", c.target_fraction),
      FEDQS_INT("run", "threads", c.threads),

      FEDQS_ENUM("sim", "strategy", c.sim.strategy, kStrategies),
      FEDQS_ENUM("sim", "mode", c.sim.mode, kModes),
      FEDQS_INT("sim", "N", c.sim.N),
      FEDQS_INT("sim", "K", c.sim.K),
      FEDQS_INT("sim", "T", c.sim.T),
      FEDQS_INT("sim", "E", c.sim.E),
      FEDQS_REAL("sim", "speed_ratio", c.sim.speed_ratio),
      FEDQS_INT("sim", "activation_count", c.sim.activation_count),
      FEDQS_REAL("sim", "eta_g", c.sim.eta_g),
      FEDQS_REAL("sim", "g_max", c.sim.g_max),
      FEDQS_REAL("sim", "c0", c.sim.cost.c0),
      FEDQS_REAL("sim", "c1", c.sim.cost.c1),

      FEDQS_REAL("client", "eta0", c.sim.hyper.eta0),
      FEDQS_REAL("client", "a", c.sim.hyper.a),
      FEDQS_REAL("client", "m0", c.sim.hyper.m0),
      FEDQS_REAL("client", "k", c.sim.hyper.k),
      FEDQS_REAL("client", "eta_min", c.sim.hyper.eta_min),
      FEDQS_REAL("client", "eta_max", c.sim.hyper.eta_max),
      FEDQS_REAL("client", "theta", c.sim.hyper.theta_cap),
      FEDQS_REAL("client", "G_c", c.sim.hyper.G_c),
      FEDQS_REAL("client", "spread_threshold", c.sim.hyper.spread_threshold),
      FEDQS_ENUM("client", "sim_kind", c.sim.hyper.sim_kind, kSimKinds),
      FEDQS_BOOL("client", "feedback", c.sim.hyper.feedback_enabled),
      FEDQS_BOOL("client", "momentum", c.sim.hyper.momentum_allowed),
      FEDQS_BOOL("client", "momentum_carryover", c.sim.hyper.momentum_carryover),

      FEDQS_ENUM("model", "model", c.model, kModels),
      FEDQS_INT("model", "hidden_dim", c.hidden_dim),

      FEDQS_ENUM("data", "dataset", c.dataset, kDatasets),
      FEDQS_INT("data", "num_classes", c.synth.num_classes),
      FEDQS_INT("data", "dim", c.synth.dim),
      FEDQS_INT("data", "per_class", c.synth.per_class),
      FEDQS_REAL("data", "class_sep", c.synth.class_sep),
      FEDQS_REAL("data", "noise_sd", c.synth.noise_sd),
      FEDQS_INT("data", "test_per_class", c.test_per_class),
      FEDQS_STR("data", "csv_path", c.csv.path),
      Field{"data", "csv_features",
            [](ExperimentConfig& c, std::string_view v) { c.csv.schema.feature_columns = split(v, ','); },
            [](const ExperimentConfig& c) { return join(c.csv.schema.feature_columns, ','); }},
      FEDQS_STR("data", "csv_label", c.csv.schema.label_column),
      Field{"data", "csv_categorical",
            [](ExperimentConfig& c, std::string_view v) {
              c.csv.schema.categorical = parse_categorical("csv_categorical", v);
            },
            [](const ExperimentConfig& c) { return emit_categorical(c.csv.schema.categorical); }},
      FEDQS_REAL("data", "csv_test_fraction", c.csv.test_fraction),
      FEDQS_STR("data", "csv_group_column", c.csv.group_column),

      FEDQS_ENUM("partition", "partition", c.partition, kPartitions),
      FEDQS_REAL("partition", "dirichlet_x", c.dirichlet_x),
      FEDQS_REAL("partition", "lognormal_sigma", c.lognormal_sigma),
      FEDQS_INT("partition", "lognormal_groups", c.lognormal_groups),
      FEDQS_REAL("partition", "train_fraction", c.train_fraction),
      FEDQS_INT("partition", "min_samples", c.min_samples),
  };
  return table;
}

#undef FEDQS_INT
#undef FEDQS_REAL
#undef FEDQS_BOOL
#undef FEDQS_ENUM
#undef FEDQS_STR

inline std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

}  // namespace detail

/// Every recognised config key, in emission order.
inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : detail::fields()) out.emplace_back(f.name);
  return out;
}

inline std::string nearest_key(std::string_view key) {
  std::string best;
  std::size_t best_d = std::string::npos;
  for (const auto& f : detail::fields()) {
    const std::size_t d = detail::edit_distance(detail::lower(key), detail::lower(f.name));
    if (d < best_d) {
      best_d = d;
      best = f.name;
    }
  }
  return best;
}

inline void set_key(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& f : detail::fields()) {
    if (key == f.name) {
      f.set(cfg, csv::trim(value));
      return;
    }
  }
  throw ConfigError(detail::concat("unknown key '", key, "' (did you mean '", nearest_key(key), "'?)"));
}

inline std::string get_key(const ExperimentConfig& cfg, std::string_view key) {
  for (const auto& f : detail::fields()) {
    if (key == f.name) return f.get(cfg);
  }
  throw ConfigError(detail::concat("unknown key '", key, "' (did you mean '", nearest_key(key), "'?)"));
}

/// Semantic checks beyond per-key typing. Throws ConfigError naming the key.
inline void validate(const ExperimentConfig& c) {
  auto need = [](bool ok, auto&&... msg) {
    if (!ok) throw ConfigError(detail::concat(msg...));
  };
  need(!c.run_id.empty() && c.run_id != "." && c.run_id != ".." &&
           std::all_of(c.run_id.begin(), c.run_id.end(),
                       [](unsigned char ch) { return std::isalnum(ch) || ch == '_' || ch == '-' || ch == '.'; }),
       "key 'run_id': '", c.run_id, "' is not filesystem-safe (use letters, digits, '.', '_', '-')");
  need(!c.out_dir.empty(), "key 'out_dir': must not be empty");
  need(c.repeats >= 1, "key 'repeats': must be >= 1, got ", c.repeats);
  need(c.target_fraction > 0.0 && c.target_fraction <= 1.0, "key 'target_fraction': must be in (0,1]");
  need(c.threads >= 0, "key 'threads': must be >= 0");
  need(c.train_fraction > 0.0 && c.train_fraction < 1.0, "key 'train_fraction': must be in (0,1)");
  need(c.min_samples >= 2, "key 'min_samples': must be >= 2 so every client has train and validation rows");
  need(c.dirichlet_x > 0.0, "key 'dirichlet_x': must be positive");
  need(c.lognormal_sigma > 0.0, "key 'lognormal_sigma': must be positive");
  need(c.lognormal_groups >= 1, "key 'lognormal_groups': must be >= 1");
  need(c.model != ModelKind::MLP || c.hidden_dim >= 1, "key 'hidden_dim': MLP needs hidden_dim >= 1");
  need(c.test_per_class >= 1, "key 'test_per_class': must be >= 1");
  if (c.dataset == DatasetKind::Synthetic) {
    need(c.synth.num_classes >= 2, "key 'num_classes': must be >= 2");
    need(c.synth.dim >= 1, "key 'dim': must be >= 1");
    need(c.synth.per_class >= 1, "key 'per_class': must be >= 1");
    need(c.synth.class_sep > 0.0, "key 'class_sep': must be positive");
    need(c.synth.noise_sd > 0.0, "key 'noise_sd': must be positive");
  } else {
    need(!c.csv.path.empty(), "missing required key 'csv_path' (dataset = csv)");
    need(!c.csv.schema.label_column.empty(), "missing required key 'csv_label' (dataset = csv)");
    need(!c.csv.schema.feature_columns.empty(), "missing required key 'csv_features' (dataset = csv)");
    need(c.csv.test_fraction > 0.0 && c.csv.test_fraction < 1.0, "key 'csv_test_fraction': must be in (0,1)");
  }
  if (c.partition == PartitionKind::LogNormal && c.csv.group_column.empty()) {
    need(c.sim.N % c.lognormal_groups == 0, "key 'lognormal_groups': N = ", c.sim.N, " is not a multiple of ",
         c.lognormal_groups);
  }
  try {
    c.sim.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
}

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Parses `key = value` text. `profile` (from overrides first, then the text)
/// picks the defaults; remaining keys apply in file order, then overrides.
inline ExperimentConfig parse_config_text(std::string_view text, std::string_view origin = "<config>",
                                          const Overrides& overrides = {}) {
  struct Entry {
    std::string key, value;
    int line;
  };
  std::vector<Entry> entries;
  std::map<std::string, int> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (line_no == 1 && raw.starts_with("\xEF\xBB\xBF")) raw.erase(0, 3);
    const auto hash = raw.find('#');
    const std::string line = csv::trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ConfigError(detail::concat(origin, ":", line_no, ": malformed section header '", line, "'"));
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(detail::concat(origin, ":", line_no, ": expected 'key = value', got '", line, "'"));
    }
    std::string key = csv::trim(std::string_view(line).substr(0, eq));
    std::string value = csv::trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError(detail::concat(origin, ":", line_no, ": missing key before '='"));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (auto [it, fresh] = seen.emplace(key, line_no); !fresh) {
      throw ConfigError(detail::concat(origin, ":", line_no, ": duplicate key '", key, "' (first set on line ",
                                       it->second, ")"));
    }
    entries.push_back({std::move(key), std::move(value), line_no});
  }

  std::string profile = "paper";
  for (const auto& e : entries) {
    if (e.key == "profile") profile = e.value;
  }
  for (const auto& [k, v] : overrides) {
    if (k == "profile") profile = csv::trim(v);
  }
  ExperimentConfig cfg = profile_defaults(profile);
  for (const auto& e : entries) {
    if (e.key == "profile") continue;
    try {
      set_key(cfg, e.key, e.value);
    } catch (const ConfigError& err) {
      throw ConfigError(detail::concat(origin, ":", e.line, ": ", err.what()));
    }
  }
  for (const auto& [k, v] : overrides) {
    if (k != "profile") set_key(cfg, k, v);
  }
  validate(cfg);
  return cfg;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path, const Overrides& overrides = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(detail::concat("cannot open config file '", path.string(), "'"));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string(), overrides);
}

/// Defaults plus overrides, no file.
inline ExperimentConfig parse_config(const Overrides& overrides) { return parse_config_text("", "<flags>", overrides); }

inline std::string emit_config(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : detail::fields()) {
    if (section != f.section) {
      if (!section.empty()) out += '\n';
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += std::string(f.name) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Data

struct PreparedData {
  ModelSpec spec;
  std::vector<ClientData> clients;
  LabeledDataset test;
};

/// Builds the pooled data, test set and per-client train/validation shards
/// for one seed. Depends only on the data/partition keys and the seed, so
/// runs that differ only in strategy see identical shards.
inline PreparedData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  LabeledDataset pool;
  PreparedData out;
  std::vector<int> groups;
  int num_classes = 0;
  if (cfg.dataset == DatasetKind::Synthetic) {
    pool = gen_synthetic(cfg.synth, derive_seed(seed, seed_stream::kData));
    SyntheticSpec ts = cfg.synth;
    ts.per_class = cfg.test_per_class;
    out.test = gen_synthetic(ts, derive_seed(seed, seed_stream::kTest));
    num_classes = cfg.synth.num_classes;
  } else {
    const CsvTable table = load_csv_table(cfg.csv.path, cfg.csv.schema);
    FEDQS_REQUIRE(table.label_names.size() >= 2, "csv: need at least two label values");
    const auto [keep, held] = split_indices(table.data.size(), 1.0 - cfg.csv.test_fraction,
                                            derive_seed(seed, seed_stream::kTest));
    pool = table.data.subset(keep);
    out.test = table.data.subset(held);
    num_classes = static_cast<int>(table.label_names.size());
    if (cfg.partition == PartitionKind::LogNormal && !cfg.csv.group_column.empty()) {
      const auto all = csv_groups(table, cfg.csv.group_column);
      // Re-densify over the kept rows so every group id is populated.
      std::map<int, int> remap;
      for (std::size_t i : keep) {
        auto [it, fresh] = remap.emplace(all[i], static_cast<int>(remap.size()));
        groups.push_back(it->second);
      }
    }
  }
  const auto n_clients = static_cast<std::size_t>(cfg.sim.N);
  const auto min_samples = static_cast<std::size_t>(cfg.min_samples);
  FEDQS_REQUIRE(pool.size() >= n_clients * min_samples, "data: ", pool.size(), " training rows cannot give ",
                n_clients, " clients ", min_samples, " rows each");
  const std::uint64_t part_seed = derive_seed(seed, seed_stream::kPartition);
  PartitionPlan plan;
  switch (cfg.partition) {
    case PartitionKind::IID: plan = partition_iid(pool, n_clients, part_seed); break;
    case PartitionKind::Dirichlet:
      plan = partition_dirichlet(pool, n_clients, cfg.dirichlet_x, part_seed, min_samples);
      break;
    case PartitionKind::LogNormal: {
      if (groups.empty()) {
        groups.resize(pool.size());
        for (std::size_t i = 0; i < pool.size(); ++i) groups[i] = pool.labels[i] % cfg.lognormal_groups;
      }
      const int num_groups = *std::max_element(groups.begin(), groups.end()) + 1;
      if (cfg.sim.N % num_groups != 0) {
        throw ConfigError(detail::concat("key 'N': ", cfg.sim.N, " clients cannot be split evenly over ", num_groups,
                                         " lognormal groups"));
      }
      plan = partition_lognormal(pool, groups, cfg.lognormal_sigma, n_clients / static_cast<std::size_t>(num_groups),
                                 part_seed, min_samples);
      break;
    }
  }
  const auto shards = apply_plan(pool, plan);
  const std::uint64_t split_seed = derive_seed(seed, seed_stream::kSplit);
  out.clients.reserve(shards.size());
  for (std::size_t c = 0; c < shards.size(); ++c) {
    FEDQS_REQUIRE(shards[c].size() >= 2, "data: client ", c, " received ", shards[c].size(),
                  " rows; need 2 for a train/validation split");
    auto [train, val] = split_train_val(shards[c], cfg.train_fraction, derive_seed(split_seed, c));
    out.clients.push_back(ClientData{std::move(train), std::move(val)});
  }
  out.spec = cfg.model == ModelKind::LogReg ? ModelSpec::logreg(static_cast<int>(pool.dim), num_classes)
                                            : ModelSpec::mlp(static_cast<int>(pool.dim), cfg.hidden_dim, num_classes);
  return out;
}

// ---------------------------------------------------------------------------
// Running

struct RepeatResult {
  int repeat = 0;
  std::uint64_t seed = 0;
  std::vector<RoundRecord> rounds;
  Summary summary;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<RepeatResult> repeats;
  nlohmann::ordered_json aggregate;
};

struct MetricStat {
  std::size_t n = 0;
  double mean = 0.0;
  std::optional<double> sd;  // sample standard deviation, needs n >= 2
};

inline MetricStat describe(const std::vector<double>& xs) {
  MetricStat s;
  s.n = xs.size();
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  if (xs.size() >= 2) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

namespace detail {

inline nlohmann::ordered_json stat_json(const MetricStat& s) {
  nlohmann::ordered_json j;
  j["n"] = s.n;
  j["mean"] = s.n ? nlohmann::ordered_json(s.mean) : nlohmann::ordered_json(nullptr);
  j["sd"] = s.sd ? nlohmann::ordered_json(*s.sd) : nlohmann::ordered_json(nullptr);
  return j;
}

// Metric extractors shared by aggregate.json and the preset tables.
inline const std::vector<std::pair<const char*, std::function<std::optional<double>(const Summary&)>>>& metric_table() {
  using Get = std::function<std::optional<double>(const Summary&)>;
  auto opt_int = [](std::optional<int> v) -> std::optional<double> {
    return v ? std::optional<double>(*v) : std::nullopt;
  };
  static const std::vector<std::pair<const char*, Get>> t = {
      {"best_acc", [](const Summary& s) { return std::optional<double>(s.best_acc); }},
      {"convergence_acc", [](const Summary& s) { return std::optional<double>(s.convergence_acc); }},
      {"T_f", [opt_int](const Summary& s) { return opt_int(s.T_f); }},
      {"T_s", [opt_int](const Summary& s) { return opt_int(s.T_s); }},
      {"stability", [opt_int](const Summary& s) { return opt_int(s.stability()); }},
      {"oscillations", [](const Summary& s) { return std::optional<double>(s.oscillations); }},
      {"final_loss", [](const Summary& s) { return std::optional<double>(s.final_loss); }},
      {"mean_staleness", [](const Summary& s) { return std::optional<double>(s.mean_staleness); }},
      {"final_vtime", [](const Summary& s) { return std::optional<double>(s.final_vtime); }},
  };
  return t;
}

}  // namespace detail

/// Mean/sd of one metric over the repeats where it is defined.
inline MetricStat metric_stat(const std::vector<RepeatResult>& reps, std::string_view metric) {
  for (const auto& [name, get] : detail::metric_table()) {
    if (metric != name) continue;
    std::vector<double> xs;
    for (const auto& r : reps) {
      if (auto v = get(r.summary)) xs.push_back(*v);
    }
    return describe(xs);
  }
  throw ContractViolation(detail::concat("metric_stat: unknown metric '", metric, "'"));
}

inline nlohmann::ordered_json aggregate_json(const ExperimentConfig& cfg, const std::vector<RepeatResult>& reps) {
  nlohmann::ordered_json j;
  j["run_id"] = cfg.run_id;
  j["strategy"] = std::string(to_string(cfg.sim.strategy));
  j["mode"] = std::string(to_string(cfg.sim.mode));
  j["repeats"] = reps.size();
  nlohmann::ordered_json seeds = nlohmann::ordered_json::array();
  for (const auto& r : reps) seeds.push_back(r.seed);
  j["seeds"] = seeds;
  nlohmann::ordered_json metrics;
  for (const auto& [name, get] : detail::metric_table()) metrics[name] = detail::stat_json(metric_stat(reps, name));
  j["metrics"] = metrics;
  return j;
}

inline std::filesystem::path run_dir(const ExperimentConfig& cfg) {
  return std::filesystem::path(cfg.out_dir) / cfg.run_id;
}

/// One repeat: seed + r drives data, speeds and initialisation.
inline RepeatResult run_repeat(const ExperimentConfig& cfg, int r, const EngineObserver* obs = nullptr) {
  RepeatResult out;
  out.repeat = r;
  out.seed = cfg.sim.seed + static_cast<std::uint64_t>(r);
  const PreparedData data = prepare_data(cfg, out.seed);
  SimConfig sim = cfg.sim;
  sim.seed = out.seed;
  Trace trace = run(sim, data.spec, data.clients, data.test, obs);
  out.rounds = std::move(trace.rounds);
  out.summary = summarize(out.rounds, cfg.target_fraction);
  return out;
}

inline void write_repeat(const ExperimentConfig& cfg, const RepeatResult& rep) {
  const auto dir = run_dir(cfg) / std::to_string(rep.repeat);
  emit(rep.rounds, rep.summary, dir / (cfg.run_id + ".csv"), dir / (cfg.run_id + ".json"));
}

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs job(0..n-1) on up to `threads` workers. The first failure (by job
/// index) is rethrown after all workers stop; jobs not yet started are skipped.
inline void run_jobs(std::size_t n, int threads, const std::function<void(std::size_t)>& job) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(resolve_threads(threads)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (!failed.load()) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) break;
        try {
          job(i);
        } catch (...) {
          errors[i] = std::current_exception();
          failed.store(true);
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Runs every (config, repeat) pair, writes per-repeat CSV/JSON and each
/// config's aggregate.json plus a config snapshot.
inline std::vector<ExperimentResult> run_experiments(const std::vector<ExperimentConfig>& cfgs, int threads,
                                                     bool write = true) {
  std::vector<std::pair<std::size_t, int>> jobs;
  std::vector<ExperimentResult> results(cfgs.size());
  for (std::size_t c = 0; c < cfgs.size(); ++c) {
    validate(cfgs[c]);
    results[c].config = cfgs[c];
    results[c].repeats.resize(static_cast<std::size_t>(cfgs[c].repeats));
    for (int r = 0; r < cfgs[c].repeats; ++r) jobs.emplace_back(c, r);
  }
  run_jobs(jobs.size(), threads, [&](std::size_t j) {
    const auto [c, r] = jobs[j];
    RepeatResult rep;
    try {
      rep = run_repeat(cfgs[c], r);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(detail::concat("run '", cfgs[c].run_id, "' repeat ", r, ": ", e.what()));
    }
    if (write) write_repeat(cfgs[c], rep);
    results[c].repeats[static_cast<std::size_t>(r)] = std::move(rep);
  });
  for (auto& res : results) {
    res.aggregate = aggregate_json(res.config, res.repeats);
    if (write) {
      write_text_file(run_dir(res.config) / "aggregate.json", res.aggregate.dump(2) + "\n");
      write_text_file(run_dir(res.config) / "config.conf", emit_config(res.config));
    }
  }
  return results;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write = true) {
  return std::move(run_experiments({cfg}, cfg.threads, write).front());
}

// ---------------------------------------------------------------------------
// Presets

struct MotivationCell {
  Mode mode = Mode::SAFL;
  bool non_iid = false;
  double gradient_acc = 0.0;  // mean best accuracy, FedSGD
  double model_acc = 0.0;     // mean best accuracy, FedAvg
  double gap = 0.0;           // |gradient - model|
  double mean_staleness = 0.0;
};

struct MotivationResult {
  std::vector<MotivationCell> cells;  // (SFL,IID), (SAFL,IID), (SFL,non-IID), (SAFL,non-IID)
  std::vector<ExperimentResult> runs;
};

namespace detail {

inline std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace detail

/// Grid of {sync, SAFL} x {IID, non-IID}, FedSGD vs FedAvg in each
/// cell. Non-IID cells use the base dirichlet_x.
inline MotivationResult preset_motivation(const ExperimentConfig& base) {
  validate(base);
  const std::filesystem::path root = run_dir(base);
  std::vector<ExperimentConfig> cfgs;
  const std::pair<Mode, bool> layout[] = {
      {Mode::Sync, false}, {Mode::SAFL, false}, {Mode::Sync, true}, {Mode::SAFL, true}};
  for (const auto& [mode, non_iid] : layout) {
    for (Strategy s : {Strategy::FedSGD, Strategy::FedAvg}) {
      ExperimentConfig c = base;
      c.sim.mode = mode;
      c.sim.strategy = s;
      c.sim.activation_count = 0;
      c.partition = non_iid ? PartitionKind::Dirichlet : PartitionKind::IID;
      c.out_dir = root.string();
      c.run_id = detail::concat(to_string(mode), non_iid ? "-noniid-" : "-iid-", to_string(s));
      cfgs.push_back(std::move(c));
    }
  }
  MotivationResult out;
  out.runs = run_experiments(cfgs, base.threads);
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& g = out.runs[2 * k];
    const auto& m = out.runs[2 * k + 1];
    MotivationCell cell;
    cell.mode = layout[k].first;
    cell.non_iid = layout[k].second;
    cell.gradient_acc = metric_stat(g.repeats, "best_acc").mean;
    cell.model_acc = metric_stat(m.repeats, "best_acc").mean;
    cell.gap = std::abs(cell.gradient_acc - cell.model_acc);
    cell.mean_staleness =
        0.5 * (metric_stat(g.repeats, "mean_staleness").mean + metric_stat(m.repeats, "mean_staleness").mean);
    out.cells.push_back(cell);
  }
  return out;
}

inline std::string motivation_csv(const MotivationResult& r) {
  std::string s = "staleness,non_iid,mode,partition,gradient_best_acc_pct,model_best_acc_pct,gap_pct,mean_staleness\n";
  for (const auto& c : r.cells) {
    s += detail::concat(c.mode == Mode::SAFL ? 1 : 0, ',', c.non_iid ? 1 : 0, ',', to_string(c.mode), ',',
                        c.non_iid ? "dirichlet" : "iid", ',', format_real(100.0 * c.gradient_acc), ',',
                        format_real(100.0 * c.model_acc), ',', format_real(100.0 * c.gap), ',',
                        format_real(c.mean_staleness), '\n');
  }
  return s;
}

inline std::string motivation_table(const MotivationResult& r) {
  std::ostringstream os;
  os << "staleness  non-IID  gradient_acc%  model_acc%  gap%\n";
  for (const auto& c : r.cells) {
    char line[128];
    std::snprintf(line, sizeof line, "%-9s  %-7s  %13s  %10s  %5s\n", c.mode == Mode::SAFL ? "yes" : "no",
                  c.non_iid ? "yes" : "no", detail::pct(c.gradient_acc).c_str(), detail::pct(c.model_acc).c_str(),
                  detail::pct(c.gap).c_str());
    os << line;
  }
  return os.str();
}

struct ComparisonRow {
  Strategy strategy;
  MetricStat best_acc, convergence_acc, T_f, oscillations, stability, final_loss;
};

struct ComparisonResult {
  std::vector<ComparisonRow> rows;  // FedQS-SGD, FedSGD, FedQS-Avg, FedAvg
  std::vector<ExperimentResult> runs;
};

/// All four strategies in SAFL mode on identical seeds. Ablation keys
/// (sim_kind, momentum, feedback) in the base apply to the FedQS rows.
inline ComparisonResult preset_comparison(const ExperimentConfig& base) {
  validate(base);
  const std::filesystem::path root = run_dir(base);
  std::vector<ExperimentConfig> cfgs;
  for (Strategy s : {Strategy::FedQS_SGD, Strategy::FedSGD, Strategy::FedQS_Avg, Strategy::FedAvg}) {
    ExperimentConfig c = base;
    c.sim.mode = Mode::SAFL;
    c.sim.strategy = s;
    c.out_dir = root.string();
    c.run_id = std::string(to_string(s));
    cfgs.push_back(std::move(c));
  }
  ComparisonResult out;
  out.runs = run_experiments(cfgs, base.threads);
  for (const auto& run : out.runs) {
    ComparisonRow row{run.config.sim.strategy, {}, {}, {}, {}, {}, {}};
    row.best_acc = metric_stat(run.repeats, "best_acc");
    row.convergence_acc = metric_stat(run.repeats, "convergence_acc");
    row.T_f = metric_stat(run.repeats, "T_f");
    row.oscillations = metric_stat(run.repeats, "oscillations");
    row.stability = metric_stat(run.repeats, "stability");
    row.final_loss = metric_stat(run.repeats, "final_loss");
    out.rows.push_back(row);
  }
  return out;
}

namespace detail {

inline std::string opt_real(const MetricStat& s) { return s.n ? format_real(s.mean) : std::string(); }
inline std::string opt_sd(const MetricStat& s) { return s.sd ? format_real(*s.sd) : std::string(); }

}  // namespace detail

inline std::string comparison_csv(const ComparisonResult& r) {
  std::string s =
      "strategy,best_acc_mean,best_acc_sd,convergence_acc_mean,T_f_mean,T_f_n,oscillations_mean,stability_mean,"
      "final_loss_mean\n";
  for (const auto& row : r.rows) {
    s += detail::concat(to_string(row.strategy), ',', detail::opt_real(row.best_acc), ',',
                        detail::opt_sd(row.best_acc), ',', detail::opt_real(row.convergence_acc), ',',
                        detail::opt_real(row.T_f), ',', row.T_f.n, ',', detail::opt_real(row.oscillations), ',',
                        detail::opt_real(row.stability), ',', detail::opt_real(row.final_loss), '\n');
  }
  return s;
}

inline std::string comparison_table(const ComparisonResult& r) {
  std::ostringstream os;
  os << "strategy    best_acc%  conv_acc%     T_f  oscillations\n";
  for (const auto& row : r.rows) {
    char line[160];
    const std::string tf = row.T_f.n ? detail::concat(static_cast<long long>(std::llround(row.T_f.mean))) : "-";
    std::snprintf(line, sizeof line, "%-10s  %9s  %9s  %6s  %12.2f\n", std::string(to_string(row.strategy)).c_str(),
                  detail::pct(row.best_acc.mean).c_str(), detail::pct(row.convergence_acc.mean).c_str(), tf.c_str(),
                  row.oscillations.mean);
    os << line;
  }
  return os.str();
}

inline void write_motivation(const ExperimentConfig& base, const MotivationResult& r) {
  write_text_file(run_dir(base) / "motivation.csv", motivation_csv(r));
}

inline void write_comparison(const ExperimentConfig& base, const ComparisonResult& r) {
  write_text_file(run_dir(base) / "comparison.csv", comparison_csv(r));
}

struct SweepRow {
  std::string value;
  ExperimentResult result;
};

/// One run per value of `key`; writes sweep.csv under out_dir/run_id.
inline std::vector<SweepRow> sweep(const ExperimentConfig& base, const std::string& key,
                                   const std::vector<std::string>& values) {
  validate(base);
  if (values.empty()) throw ConfigError("sweep: no values given");
  get_key(base, key);  // rejects unknown keys up front
  const std::filesystem::path root = run_dir(base);
  std::vector<ExperimentConfig> cfgs;
  for (const auto& v : values) {
    ExperimentConfig c = base;
    if (key == "profile") throw ConfigError("sweep: 'profile' cannot be swept");
    set_key(c, key, v);
    c.out_dir = root.string();
    std::string safe = key + "-" + v;
    for (char& ch : safe) {
      if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-' || ch == '.')) ch = '_';
    }
    c.run_id = safe;
    validate(c);
    cfgs.push_back(std::move(c));
  }
  auto runs = run_experiments(cfgs, base.threads);
  std::vector<SweepRow> out;
  std::string csv = "key,value,best_acc_mean,best_acc_sd,convergence_acc_mean,T_f_mean,oscillations_mean\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& reps = runs[i].repeats;
    csv += detail::concat(key, ',', values[i], ',', detail::opt_real(metric_stat(reps, "best_acc")), ',',
                          detail::opt_sd(metric_stat(reps, "best_acc")), ',',
                          detail::opt_real(metric_stat(reps, "convergence_acc")), ',',
                          detail::opt_real(metric_stat(reps, "T_f")), ',',
                          detail::opt_real(metric_stat(reps, "oscillations")), '\n');
    out.push_back({values[i], std::move(runs[i])});
  }
  write_text_file(root / "sweep.csv", csv);
  return out;
}

// ---------------------------------------------------------------------------
// Bounds grid

struct BoundsGrid {
  std::vector<bounds::Theorem> theorems{bounds::Theorem::SGD, bounds::Theorem::Avg};
  std::vector<int> K{10};
  std::vector<int> E{2};
  std::vector<double> theta{0.5};
  std::vector<double> beta{0.33};
  std::vector<int> Q_t{0};
  bounds::BoundParams base;
};

/// CSV over the cartesian product of the grid; rows that violate the
/// parameter contract carry the message in `flags`.
inline std::string bounds_table(const BoundsGrid& grid) {
  std::string s = "theorem,K,E,theta,beta,Q_t,R,beta_lo,beta_hi,V,U,W,lead,flags\n";
  for (auto th : grid.theorems) {
    for (int K : grid.K) {
      for (int E : grid.E) {
        for (double theta : grid.theta) {
          for (double beta : grid.beta) {
            for (int Q : grid.Q_t) {
              bounds::BoundParams bp = grid.base;
              bp.K = K;
              bp.E = E;
              bp.theta = theta;
              bp.beta = beta;
              bp.Q_t = Q;
              bp.N = std::max(bp.N, K);
              const char* name = th == bounds::Theorem::SGD ? "sgd" : "avg";
              try {
                const auto r = bounds::evaluate(bp, th);
                auto rng = [](double v) { return std::isnan(v) ? std::string() : format_real(v); };
                s += detail::concat(name, ',', K, ',', E, ',', format_real(theta), ',', format_real(beta), ',', Q,
                                    ',', format_real(r.R), ',', rng(r.range.lo), ',', rng(r.range.hi), ',',
                                    format_real(r.V), ',', format_real(r.U), ',', format_real(r.W), ',',
                                    format_real(r.lead), ',', r.flags.to_string(), '\n');
              } catch (const ContractViolation& e) {
                std::string msg = e.what();
                std::replace(msg.begin(), msg.end(), ',', ';');
                s += detail::concat(name, ',', K, ',', E, ',', format_real(theta), ',', format_real(beta), ',', Q,
                                    ",,,,,,,,invalid: ", msg, '\n');
              }
            }
          }
        }
      }
    }
  }
  return s;
}

}  // namespace fedqs
