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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedqs/datagen.hpp"
#include "fedqs/error.hpp"

namespace fedqs {

/// One global round as observed after aggregation and test evaluation.
struct RoundRecord {
  int round = 0;
  double vtime = 0.0;
  double test_acc = 0.0;
  double test_loss = 0.0;
  double mean_staleness = 0.0;
  int num_feedback = 0;
  double f_bar = 0.0;
  double s_bar = 0.0;

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

struct Summary {
  int rounds = 0;
  double best_acc = 0.0;
  double convergence_acc = 0.0;  // mean accuracy over the last 20 rounds
  double target_acc = 0.0;
  std::optional<int> T_f;        // first round reaching target
  std::optional<int> T_s;        // first round after which acc stays >= target
  int oscillations = 0;
  double final_loss = 0.0;
  double mean_staleness = 0.0;
  double final_vtime = 0.0;

  std::optional<int> stability() const {
    if (!T_f || !T_s) return std::nullopt;
    return *T_s - *T_f;
  }

  friend bool operator==(const Summary&, const Summary&) = default;
};

inline constexpr double kOscillationThresholdPct = 15.0;
inline constexpr int kConvergenceWindow = 20;

/// Smallest 1-based round index with acc >= target.
inline std::optional<int> conv_speed(const std::vector<double>& accs, double target) {
  FEDQS_REQUIRE(target > 0.0 && target <= 1.0, "conv_speed: target ", target, " outside (0,1]");
  for (std::size_t i = 0; i < accs.size(); ++i) {
    if (accs[i] >= target) return static_cast<int>(i + 1);
  }
  return std::nullopt;
}

/// Smallest 1-based round index from which acc never drops below target.
inline std::optional<int> stability_T_s(const std::vector<double>& accs, double target) {
  FEDQS_REQUIRE(target > 0.0 && target <= 1.0, "stability_T_s: target ", target, " outside (0,1]");
  std::optional<int> ts;
  for (std::size_t i = accs.size(); i-- > 0;) {
    if (accs[i] < target) break;
    ts = static_cast<int>(i + 1);
  }
  return ts;
}

/// Rounds whose accuracy fell more than `threshold` below the previous round.
/// Both are on the same scale (percentage points by default).
inline int oscillations(const std::vector<double>& accs, double threshold = kOscillationThresholdPct) {
  FEDQS_REQUIRE(threshold > 0.0, "oscillations: threshold must be positive");
  int count = 0;
  for (std::size_t t = 1; t < accs.size(); ++t) {
    if (accs[t - 1] - accs[t] > threshold) ++count;
  }
  return count;
}

inline Summary summarize(const std::vector<RoundRecord>& records, double target_fraction) {
  FEDQS_REQUIRE(!records.empty(), "summarize: empty trace");
  FEDQS_REQUIRE(target_fraction > 0.0 && target_fraction <= 1.0, "summarize: target fraction ", target_fraction,
                " outside (0,1]");
  std::vector<double> accs, pct;
  accs.reserve(records.size());
  pct.reserve(records.size());
  double staleness = 0.0;
  for (const auto& r : records) {
    accs.push_back(r.test_acc);
    pct.push_back(100.0 * r.test_acc);
    staleness += r.mean_staleness;
  }
  Summary s;
  s.rounds = static_cast<int>(records.size());
  s.best_acc = *std::max_element(accs.begin(), accs.end());
  const std::size_t window = std::min<std::size_t>(kConvergenceWindow, accs.size());
  double tail = 0.0;
  for (std::size_t i = accs.size() - window; i < accs.size(); ++i) tail += accs[i];
  s.convergence_acc = tail / static_cast<double>(window);
  s.target_acc = target_fraction * s.convergence_acc;
  if (s.target_acc > 0.0) {
    s.T_f = conv_speed(accs, s.target_acc);
    s.T_s = stability_T_s(accs, s.target_acc);
  }
  s.oscillations = oscillations(pct, kOscillationThresholdPct);
  s.final_loss = records.back().test_loss;
  s.mean_staleness = staleness / static_cast<double>(records.size());
  s.final_vtime = records.back().vtime;
  return s;
}

// ---------------------------------------------------------------------------
// Result files

inline constexpr const char* kTraceCsvHeader = "round,vtime,test_acc,test_loss,mean_staleness,num_feedback,f_bar,s_bar";

// Shortest text that parses back to the same double.
inline std::string format_real(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string trace_csv(const std::vector<RoundRecord>& records) {
  std::string out = kTraceCsvHeader;
  out += '\n';
  for (const auto& r : records) {
    out += std::to_string(r.round);
    for (double v : {r.vtime, r.test_acc, r.test_loss, r.mean_staleness}) out += ',' + format_real(v);
    out += ',' + std::to_string(r.num_feedback);
    out += ',' + format_real(r.f_bar);
    out += ',' + format_real(r.s_bar);
    out += '\n';
  }
  return out;
}

inline std::vector<RoundRecord> parse_trace_csv(std::istream& in) {
  const auto rows = csv::parse(in);
  if (rows.empty()) throw IoError("trace csv: missing header");
  std::vector<RoundRecord> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i];
    if (f.size() != 8) throw IoError(detail::concat("trace csv: row ", i + 1, " has ", f.size(), " fields"));
    RoundRecord r;
    r.round = std::stoi(f[0]);
    r.vtime = std::stod(f[1]);
    r.test_acc = std::stod(f[2]);
    r.test_loss = std::stod(f[3]);
    r.mean_staleness = std::stod(f[4]);
    r.num_feedback = std::stoi(f[5]);
    r.f_bar = std::stod(f[6]);
    r.s_bar = std::stod(f[7]);
    out.push_back(r);
  }
  return out;
}

inline nlohmann::ordered_json summary_json(const Summary& s) {
  auto opt = [](const std::optional<int>& v) -> nlohmann::ordered_json {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["rounds"] = s.rounds;
  j["best_acc"] = s.best_acc;
  j["convergence_acc"] = s.convergence_acc;
  j["target_acc"] = s.target_acc;
  j["T_f"] = opt(s.T_f);
  j["T_s"] = opt(s.T_s);
  j["stability"] = opt(s.stability());
  j["oscillations"] = s.oscillations;
  j["final_loss"] = s.final_loss;
  j["mean_staleness"] = s.mean_staleness;
  j["final_vtime"] = s.final_vtime;
  return j;
}

inline Summary summary_from_json(const nlohmann::ordered_json& j) {
  auto opt = [&](const char* key) -> std::optional<int> {
    if (j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<int>();
  };
  Summary s;
  s.rounds = j.at("rounds").get<int>();
  s.best_acc = j.at("best_acc").get<double>();
  s.convergence_acc = j.at("convergence_acc").get<double>();
  s.target_acc = j.at("target_acc").get<double>();
  s.T_f = opt("T_f");
  s.T_s = opt("T_s");
  s.oscillations = j.at("oscillations").get<int>();
  s.final_loss = j.at("final_loss").get<double>();
  s.mean_staleness = j.at("mean_staleness").get<double>();
  s.final_vtime = j.at("final_vtime").get<double>();
  return s;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError(detail::concat("cannot create directory '", path.parent_path().string(), "': ", ec.message()));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(detail::concat("cannot open '", path.string(), "' for writing"));
  out << text;
  out.flush();
  if (!out) throw IoError(detail::concat("write failed for '", path.string(), "'"));
}

inline void emit(const std::vector<RoundRecord>& records, const Summary& summary, const std::filesystem::path& csv_path,
                 const std::filesystem::path& json_path) {
  write_text_file(csv_path, trace_csv(records));
  write_text_file(json_path, summary_json(summary).dump(2) + "\n");
}

}  // namespace fedqs
