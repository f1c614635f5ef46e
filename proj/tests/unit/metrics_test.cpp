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

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "fedqs/metrics.hpp"

using namespace fedqs;
namespace fs = std::filesystem;

namespace {

std::vector<RoundRecord> records_from(const std::vector<double>& accs) {
  std::vector<RoundRecord> out;
  for (std::size_t i = 0; i < accs.size(); ++i) {
    RoundRecord r;
    r.round = static_cast<int>(i + 1);
    r.vtime = 0.5 * static_cast<double>(i + 1);
    r.test_acc = accs[i];
    r.test_loss = 2.0 / static_cast<double>(i + 1);
    r.mean_staleness = static_cast<double>(i % 3);
    r.num_feedback = static_cast<int>(i % 2);
    r.f_bar = 0.05;
    r.s_bar = 0.1 * static_cast<double>(i);
    out.push_back(r);
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(ConvSpeed, Examples) {
  EXPECT_EQ(conv_speed({0.2, 0.4, 0.55}, 0.5), 3);
  EXPECT_EQ(conv_speed({0.2, 0.4, 0.55}, 0.6), std::nullopt);
  EXPECT_EQ(conv_speed({0.6, 0.4, 0.7}, 0.5), 1);
  EXPECT_THROW(conv_speed({0.5}, 0.0), ContractViolation);
  EXPECT_THROW(conv_speed({0.5}, 1.5), ContractViolation);
}

TEST(StabilityTs, Examples) {
  const std::vector<double> a{0.6, 0.4, 0.7, 0.8};
  EXPECT_EQ(stability_T_s(a, 0.5), 3);
  EXPECT_EQ(conv_speed(a, 0.5), 1);
  const std::vector<double> mono{0.1, 0.3, 0.3, 0.6, 0.9};
  EXPECT_EQ(stability_T_s(mono, 0.3), conv_speed(mono, 0.3));
  EXPECT_EQ(stability_T_s({0.6, 0.7, 0.4}, 0.5), std::nullopt);
  EXPECT_EQ(stability_T_s({}, 0.5), std::nullopt);
}

TEST(Oscillations, Examples) {
  EXPECT_EQ(oscillations({10, 30, 10, 40}, 15), 1);
  EXPECT_EQ(oscillations({10, 30, 10, 40}), 1);
  EXPECT_EQ(kOscillationThresholdPct, 15.0);
  EXPECT_EQ(oscillations({1, 2, 3, 50, 90}), 0);
  EXPECT_EQ(oscillations({50, 35}), 0);  // exactly 15 is not "more than"
  EXPECT_EQ(oscillations({50, 34.9}), 1);
  EXPECT_THROW(oscillations({1, 2}, 0.0), ContractViolation);
}

TEST(Oscillations, ShiftInvariant) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 100);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a(30);
    for (auto& v : a) v = u(rng);
    auto b = a;
    for (auto& v : b) v += 17.0;
    EXPECT_EQ(oscillations(a), oscillations(b));
  }
}

TEST(Metrics, TfNotAfterTs) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> a(1 + rng() % 30);
    for (auto& v : a) v = u(rng);
    const double target = 0.05 + 0.9 * u(rng);
    const auto tf = conv_speed(a, target), ts = stability_T_s(a, target);
    if (ts) {
      ASSERT_TRUE(tf);
      EXPECT_LE(*tf, *ts);
    }
  }
}

TEST(Summarize, ConstantTrace) {
  const auto s = summarize(records_from(std::vector<double>(40, 0.8)), 0.95);
  EXPECT_EQ(s.rounds, 40);
  EXPECT_DOUBLE_EQ(s.convergence_acc, 0.8);
  EXPECT_DOUBLE_EQ(s.target_acc, 0.76);
  EXPECT_EQ(s.T_f, 1);
  EXPECT_EQ(s.T_s, 1);
  EXPECT_EQ(s.stability(), 0);
  EXPECT_EQ(s.best_acc, 0.8);
  EXPECT_EQ(s.final_vtime, 20.0);
  EXPECT_EQ(s.final_loss, 2.0 / 40);
}

TEST(Summarize, WindowAndFallback) {
  std::vector<double> a(19);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = 0.01 * static_cast<double>(i + 1);
  const auto short_run = summarize(records_from(a), 0.98);
  EXPECT_NEAR(short_run.convergence_acc, 0.10, 1e-15);
  EXPECT_NEAR(short_run.target_acc, 0.098, 1e-15);
  EXPECT_EQ(short_run.T_f, 10);

  std::vector<double> b(25, 0.0);
  for (std::size_t i = 5; i < 25; ++i) b[i] = 0.5;
  b[0] = 0.9;
  const auto s = summarize(records_from(b), 0.95);
  EXPECT_DOUBLE_EQ(s.convergence_acc, 0.5);  // first five rounds fall outside the window
  EXPECT_EQ(s.best_acc, 0.9);
  EXPECT_EQ(s.T_f, 1);
  EXPECT_EQ(s.T_s, 6);
  EXPECT_EQ(s.stability(), 5);
  EXPECT_EQ(s.oscillations, 1);
}

TEST(Summarize, Errors) {
  EXPECT_THROW(summarize({}, 0.95), ContractViolation);
  EXPECT_THROW(summarize(records_from({0.5}), 0.0), ContractViolation);
  const auto zero = summarize(records_from({0.0, 0.0}), 0.95);
  EXPECT_EQ(zero.T_f, std::nullopt);
}

TEST(Emit, CsvAndJson) {
  const auto dir = fs::temp_directory_path() / "fedqs_emit_test";
  fs::remove_all(dir);
  const auto recs = records_from({0.1 / 3.0});
  const auto sum = summarize(recs, 0.95);
  emit(recs, sum, dir / "a" / "run.csv", dir / "a" / "run.json");
  const auto csv = slurp(dir / "a" / "run.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "round,vtime,test_acc,test_loss,mean_staleness,num_feedback,f_bar,s_bar");
  std::istringstream in(csv);
  EXPECT_EQ(parse_trace_csv(in), recs);

  const auto json = nlohmann::ordered_json::parse(slurp(dir / "a" / "run.json"));
  EXPECT_EQ(summary_from_json(json), sum);

  emit(recs, sum, dir / "b.csv", dir / "b.json");
  EXPECT_EQ(slurp(dir / "b.csv"), csv);
  EXPECT_EQ(slurp(dir / "b.json"), slurp(dir / "a" / "run.json"));
  fs::remove_all(dir);
}

TEST(Emit, NullForUndefinedRounds) {
  const auto s = summarize(records_from({0.0, 0.0}), 0.95);
  const auto j = summary_json(s);
  EXPECT_TRUE(j.at("T_f").is_null());
  EXPECT_TRUE(j.at("T_s").is_null());
  EXPECT_TRUE(j.at("stability").is_null());
  EXPECT_EQ(summary_from_json(j), s);
}

TEST(Emit, RoundTripsRandomTraces) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> a(1 + rng() % 50);
    for (auto& v : a) v = u(rng);
    auto recs = records_from(a);
    for (auto& r : recs) r.test_loss = u(rng) * 1e-7 + u(rng);
    std::istringstream in(trace_csv(recs));
    EXPECT_EQ(parse_trace_csv(in), recs);
    const auto s = summarize(recs, 0.95);
    EXPECT_EQ(summary_from_json(nlohmann::ordered_json::parse(summary_json(s).dump())), s);
  }
}

TEST(Emit, UnwritablePathNamesIt) {
  const auto blocker = fs::temp_directory_path() / "fedqs_emit_blocker";
  fs::remove_all(blocker);
  std::ofstream(blocker) << "x";
  try {
    write_text_file(blocker / "sub" / "f.csv", "x");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("fedqs_emit_blocker"), std::string::npos);
  }
  fs::remove_all(blocker);
}
