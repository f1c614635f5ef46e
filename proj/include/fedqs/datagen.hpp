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
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fedqs/error.hpp"
#include "fedqs/numcore.hpp"

namespace fedqs {

/// assignments[c] lists the source-row indices owned by client c.
struct PartitionPlan {
  std::vector<std::vector<std::size_t>> assignments;

  std::size_t num_clients() const noexcept { return assignments.size(); }

  std::size_t total() const noexcept {
    std::size_t n = 0;
    for (const auto& a : assignments) n += a.size();
    return n;
  }

  // True iff the plan covers {0..n-1} exactly once.
  bool is_exact_partition(std::size_t n) const {
    std::vector<char> seen(n, 0);
    for (const auto& a : assignments) {
      for (std::size_t idx : a) {
        if (idx >= n || seen[idx]) return false;
        seen[idx] = 1;
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](char s) { return s != 0; });
  }

  friend bool operator==(const PartitionPlan&, const PartitionPlan&) = default;
};

struct SyntheticSpec {
  int num_classes = 10;
  int dim = 20;
  int per_class = 200;
  double class_sep = 1.0;
  double noise_sd = 1.0;

  void validate() const {
    FEDQS_REQUIRE(num_classes >= 2, "SyntheticSpec: num_classes must be >= 2");
    FEDQS_REQUIRE(dim >= 1, "SyntheticSpec: dim must be >= 1");
    FEDQS_REQUIRE(per_class >= 1, "SyntheticSpec: per_class must be >= 1");
    FEDQS_REQUIRE(class_sep > 0.0, "SyntheticSpec: class_sep must be positive");
    FEDQS_REQUIRE(noise_sd > 0.0, "SyntheticSpec: noise_sd must be positive");
  }

  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

/// Gaussian blobs. Class c is centred at class_sep * e_{c mod dim}; when there
/// are more classes than axes the sign flips on every wrap so centres stay
/// distinct. Rows are grouped by class in ascending order.
inline LabeledDataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spec.noise_sd);
  LabeledDataset ds;
  ds.dim = static_cast<std::size_t>(spec.dim);
  std::vector<double> x(ds.dim);
  for (int c = 0; c < spec.num_classes; ++c) {
    const int axis = c % spec.dim;
    const double sign = ((c / spec.dim) % 2 == 0) ? 1.0 : -1.0;
    for (int s = 0; s < spec.per_class; ++s) {
      for (std::size_t j = 0; j < ds.dim; ++j) x[j] = noise(rng);
      x[static_cast<std::size_t>(axis)] += sign * spec.class_sep;
      ds.push_back(x, c);
    }
  }
  return ds;
}

namespace detail {

// Splits `total` items by `weights` (nonnegative, positive sum) using
// largest-remainder rounding. Ties on the remainder go to the lower index.
inline std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<double>& weights) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  FEDQS_REQUIRE(sum > 0.0, "largest_remainder: weights sum to zero");
  std::vector<std::size_t> counts(weights.size());
  std::vector<std::pair<double, std::size_t>> rem(weights.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / sum;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    rem[i] = {exact - static_cast<double>(counts[i]), i};
  }
  // Floating error can push the floor sum past `total`; trim from the back.
  for (std::size_t i = counts.size(); assigned > total && i-- > 0;) {
    const std::size_t take = std::min(counts[i], assigned - total);
    counts[i] -= take;
    assigned -= take;
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; k = (k + 1) % rem.size()) {
    ++counts[rem[k].second];
    ++assigned;
  }
  return counts;
}

// Gives every client at least `min_samples` rows by moving rows off the
// currently largest client.
inline void ensure_min_samples(PartitionPlan& plan, std::size_t min_samples) {
  FEDQS_REQUIRE(plan.total() >= min_samples * plan.num_clients(), "not enough samples to give each of ",
                plan.num_clients(), " clients ", min_samples, " rows");
  for (auto& a : plan.assignments) {
    while (a.size() < min_samples) {
      auto largest = std::max_element(plan.assignments.begin(), plan.assignments.end(),
                                      [](const auto& x, const auto& y) { return x.size() < y.size(); });
      a.push_back(largest->back());
      largest->pop_back();
    }
  }
}

inline std::vector<double> sample_dirichlet(std::size_t k, double x, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(x, 1.0);
  std::vector<double> p(k);
  double sum = 0.0;
  for (auto& v : p) {
    v = gamma(rng);
    sum += v;
  }
  if (!(sum > 0.0)) {
    // Every gamma draw underflowed (tiny x): all mass goes to one client.
    std::uniform_int_distribution<std::size_t> pick(0, k - 1);
    std::fill(p.begin(), p.end(), 0.0);
    p[pick(rng)] = 1.0;
  }
  return p;
}

}  // namespace detail

/// Per-class Dirichlet(x) shares over clients. Smaller x means more skewed
/// label distributions.
inline PartitionPlan partition_dirichlet(const LabeledDataset& ds, std::size_t num_clients, double x,
                                         std::uint64_t seed, std::size_t min_samples = 1) {
  FEDQS_REQUIRE(x > 0.0, "partition_dirichlet: concentration must be positive, got ", x);
  FEDQS_REQUIRE(num_clients >= 1, "partition_dirichlet: need at least one client");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
  FEDQS_REQUIRE(!by_class.empty(), "partition_dirichlet: empty dataset");

  std::mt19937_64 rng(seed);
  PartitionPlan plan;
  plan.assignments.resize(num_clients);
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto share = detail::sample_dirichlet(num_clients, x, rng);
    const auto counts = detail::largest_remainder(idx.size(), share);
    std::size_t pos = 0;
    for (std::size_t c = 0; c < num_clients; ++c) {
      for (std::size_t k = 0; k < counts[c]; ++k) plan.assignments[c].push_back(idx[pos++]);
    }
  }
  detail::ensure_min_samples(plan, min_samples);
  return plan;
}

/// Clients are grouped; client sizes inside a group follow LogNormal(0, sigma^2)
/// weights. group_of[i] is the group of row i; groups are numbered densely
/// from 0 and client g*clients_per_group + j belongs to group g.
inline PartitionPlan partition_lognormal(const LabeledDataset& ds, const std::vector<int>& group_of, double sigma,
                                         std::size_t clients_per_group, std::uint64_t seed,
                                         std::size_t min_samples = 1) {
  FEDQS_REQUIRE(sigma > 0.0, "partition_lognormal: sigma must be positive, got ", sigma);
  FEDQS_REQUIRE(clients_per_group >= 1, "partition_lognormal: clients_per_group must be >= 1");
  FEDQS_REQUIRE(group_of.size() == ds.size(), "partition_lognormal: group_of has ", group_of.size(),
                " entries for ", ds.size(), " rows");
  int num_groups = 0;
  for (int g : group_of) {
    FEDQS_REQUIRE(g >= 0, "partition_lognormal: negative group id");
    num_groups = std::max(num_groups, g + 1);
  }
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(num_groups));
  for (std::size_t i = 0; i < ds.size(); ++i) members[static_cast<std::size_t>(group_of[i])].push_back(i);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  PartitionPlan plan;
  plan.assignments.resize(members.size() * clients_per_group);
  for (std::size_t g = 0; g < members.size(); ++g) {
    auto& idx = members[g];
    if (idx.empty()) throw ContractViolation(detail::concat("partition_lognormal: group ", g, " is empty"));
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<double> w(clients_per_group);
    for (auto& v : w) v = std::exp(sigma * z(rng));
    const auto counts = detail::largest_remainder(idx.size(), w);
    std::size_t pos = 0;
    PartitionPlan local;
    local.assignments.resize(clients_per_group);
    for (std::size_t c = 0; c < clients_per_group; ++c) {
      for (std::size_t k = 0; k < counts[c]; ++k) local.assignments[c].push_back(idx[pos++]);
    }
    detail::ensure_min_samples(local, min_samples);
    for (std::size_t c = 0; c < clients_per_group; ++c) {
      plan.assignments[g * clients_per_group + c] = std::move(local.assignments[c]);
    }
  }
  return plan;
}

/// Shuffled round-robin split into equal-as-possible shards.
inline PartitionPlan partition_iid(const LabeledDataset& ds, std::size_t num_clients, std::uint64_t seed) {
  FEDQS_REQUIRE(num_clients >= 1, "partition_iid: need at least one client");
  FEDQS_REQUIRE(ds.size() >= num_clients, "partition_iid: fewer rows than clients");
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  PartitionPlan plan;
  plan.assignments.resize(num_clients);
  for (std::size_t i = 0; i < idx.size(); ++i) plan.assignments[i % num_clients].push_back(idx[i]);
  return plan;
}

inline std::vector<LabeledDataset> apply_plan(const LabeledDataset& ds, const PartitionPlan& plan) {
  std::vector<LabeledDataset> out;
  out.reserve(plan.num_clients());
  for (const auto& a : plan.assignments) out.push_back(ds.subset(a));
  return out;
}

/// Seeded shuffle of 0..n-1 split after round(train_fraction * n) entries;
/// both sides are kept nonempty.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n,
                                                                                   double train_fraction,
                                                                                   std::uint64_t seed) {
  FEDQS_REQUIRE(train_fraction > 0.0 && train_fraction < 1.0, "split: fraction ", train_fraction, " outside (0,1)");
  FEDQS_REQUIRE(n >= 2, "split: need at least 2 rows, got ", n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  std::vector<std::size_t> val(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  idx.resize(n_train);
  return {std::move(idx), std::move(val)};
}

/// Seeded shuffle, then the first round(train_fraction * n) rows train.
inline std::pair<LabeledDataset, LabeledDataset> split_train_val(const LabeledDataset& ds, double train_fraction,
                                                                 std::uint64_t seed) {
  FEDQS_REQUIRE(train_fraction > 0.0 && train_fraction < 1.0, "split_train_val: fraction ", train_fraction,
                " outside (0,1)");
  FEDQS_REQUIRE(ds.size() >= 2, "split_train_val: need at least 2 rows, got ", ds.size());
  const auto [train, val] = split_indices(ds.size(), train_fraction, seed);
  return {ds.subset(train), ds.subset(val)};
}

// ---------------------------------------------------------------------------
// CSV ingestion

namespace csv {

/// RFC-4180 record reader: quoted fields, doubled quotes, CRLF or LF.
inline std::vector<std::vector<std::string>> parse(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, field_started = false;
  char ch;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
  };
  while (in.get(ch)) {
    if (quoted) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get(ch);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
      continue;
    }
    if (ch == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (ch == ',') {
      end_field();
    } else if (ch == '\r') {
      if (in.peek() == '\n') in.get(ch);
      end_row();
    } else if (ch == '\n') {
      end_row();
    } else {
      field.push_back(ch);
      field_started = true;
    }
  }
  if (quoted) throw ConfigError("csv: unterminated quoted field");
  if (!field.empty() || !row.empty()) end_row();
  return rows;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace csv

/// Declares which CSV columns feed the model. Columns listed in
/// `categorical` are one-hot encoded in the given category order; every
/// other feature column is numeric and min-max scaled to [0,1].
struct CsvSchema {
  std::vector<std::string> feature_columns;
  std::string label_column;
  std::map<std::string, std::vector<std::string>> categorical;

  friend bool operator==(const CsvSchema&, const CsvSchema&) = default;
};

struct CsvTable {
  LabeledDataset data;
  std::vector<std::string> label_names;  // id -> original label text
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> raw_rows;  // kept for group lookups
};

namespace detail {

inline std::size_t column_index(const std::vector<std::string>& header, const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ConfigError(concat("csv: column '", name, "' not in header"));
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace detail

inline CsvTable load_csv_table(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(detail::concat("csv: cannot open '", path, "'"));
  auto rows = csv::parse(in);
  if (rows.empty()) throw ConfigError(detail::concat("csv: '", path, "' has no header row"));

  CsvTable out;
  out.header.reserve(rows[0].size());
  for (const auto& h : rows[0]) out.header.push_back(csv::trim(h));
  const std::size_t label_col = detail::column_index(out.header, schema.label_column);
  std::vector<std::size_t> cols;
  for (const auto& name : schema.feature_columns) cols.push_back(detail::column_index(out.header, name));

  const std::size_t n = rows.size() - 1;
  // First pass: numeric values and label strings.
  std::vector<std::vector<double>> numeric(cols.size(), std::vector<double>(n, 0.0));
  std::vector<std::string> label_text(n);
  std::set<std::string> label_set;
  for (std::size_t r = 0; r < n; ++r) {
    const auto& row = rows[r + 1];
    const std::size_t line = r + 2;  // 1-based, header is line 1
    if (row.size() != out.header.size()) {
      throw ConfigError(detail::concat("csv: row ", line, " has ", row.size(), " fields, expected ",
                                       out.header.size()));
    }
    label_text[r] = csv::trim(row[label_col]);
    if (label_text[r].empty()) {
      throw ConfigError(detail::concat("csv: missing label in column '", schema.label_column, "' at row ", line));
    }
    label_set.insert(label_text[r]);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const auto& name = schema.feature_columns[k];
      const std::string cell = csv::trim(row[cols[k]]);
      if (auto cat = schema.categorical.find(name); cat != schema.categorical.end()) {
        const auto& cats = cat->second;
        auto it = std::find(cats.begin(), cats.end(), cell);
        if (it == cats.end()) {
          throw ConfigError(detail::concat("csv: unknown category '", cell, "' in column '", name, "' at row ", line));
        }
        numeric[k][r] = static_cast<double>(it - cats.begin());
        continue;
      }
      double v = 0.0;
      const auto* first = cell.data();
      const auto* last = cell.data() + cell.size();
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
        throw ConfigError(detail::concat("csv: unparsable numeric value '", cell, "' in column '", name,
                                         "' at row ", line));
      }
      numeric[k][r] = v;
    }
  }

  out.label_names.assign(label_set.begin(), label_set.end());
  std::map<std::string, int> label_id;
  for (std::size_t i = 0; i < out.label_names.size(); ++i) label_id[out.label_names[i]] = static_cast<int>(i);

  // Second pass: encode.
  std::size_t dim = 0;
  for (const auto& name : schema.feature_columns) {
    auto cat = schema.categorical.find(name);
    dim += (cat != schema.categorical.end()) ? cat->second.size() : 1;
  }
  out.data.dim = dim;
  std::vector<double> lo(cols.size()), hi(cols.size());
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (n == 0) break;
    auto [mn, mx] = std::minmax_element(numeric[k].begin(), numeric[k].end());
    lo[k] = *mn;
    hi[k] = *mx;
  }
  std::vector<double> x(dim);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t pos = 0;
    for (std::size_t k = 0; k < cols.size(); ++k) {
      auto cat = schema.categorical.find(schema.feature_columns[k]);
      if (cat != schema.categorical.end()) {
        for (std::size_t j = 0; j < cat->second.size(); ++j) x[pos + j] = 0.0;
        x[pos + static_cast<std::size_t>(numeric[k][r])] = 1.0;
        pos += cat->second.size();
      } else {
        const double span = hi[k] - lo[k];
        x[pos++] = span > 0.0 ? (numeric[k][r] - lo[k]) / span : 0.0;
      }
    }
    out.data.push_back(x, label_id[label_text[r]]);
  }
  out.raw_rows.assign(rows.begin() + 1, rows.end());
  return out;
}

inline LabeledDataset load_csv(const std::string& path, const CsvSchema& schema) {
  return load_csv_table(path, schema).data;
}

/// Dense group ids (in order of first appearance) from one column of a table.
inline std::vector<int> csv_groups(const CsvTable& table, const std::string& column) {
  const std::size_t col = detail::column_index(table.header, column);
  std::map<std::string, int> ids;
  std::vector<int> out;
  out.reserve(table.raw_rows.size());
  for (const auto& row : table.raw_rows) {
    auto [it, inserted] = ids.emplace(csv::trim(row[col]), static_cast<int>(ids.size()));
    out.push_back(it->second);
  }
  return out;
}

}  // namespace fedqs
