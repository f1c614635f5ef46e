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

// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion, with the
// measured numbers, and exits nonzero if any criterion fails.
//
// usage: fedqs_acceptance [scratch_dir]

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <string>

#include "../unit/oracles.hpp"
#include "fedqs/fedqs.hpp"

using namespace fedqs;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_scratch;

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ExperimentConfig desk(const std::string& run_id, int repeats) {
  auto c = desk_profile();
  c.run_id = run_id;
  c.repeats = repeats;
  c.out_dir = (g_scratch / run_id).string();
  c.threads = 0;
  return c;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[fs::relative(e.path(), root).string()] = {std::istreambuf_iterator<char>(in), {}};
  }
  return out;
}

// 1 -------------------------------------------------------------------------

Outcome gradient_oracle() {
  double worst = 0;
  int triples = 0;
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    const int d = 1 + static_cast<int>(rng() % 8), c = 2 + static_cast<int>(rng() % 6);
    const int h = 1 + static_cast<int>(rng() % 8), n = 1 + static_cast<int>(rng() % 16);
    for (auto spec : {ModelSpec::logreg(d, c), ModelSpec::mlp(d, h, c)}) {
      const auto ds = oracle::random_dataset(d, c, n, seed * 7 + 1);
      const auto p = oracle::random_params(spec.param_count(), seed * 7 + 2);
      const auto a = gradient(spec, p, ds);
      const auto fd = oracle::fd_gradient(spec, p, ds, 1e-5L);
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double den = std::max({std::abs(a[i]), std::abs(fd[i]), 1e-4});
        worst = std::max(worst, std::abs(a[i] - fd[i]) / den);
      }
      ++triples;
    }
  }
  return {triples == 50 && worst < 1e-5, fmt("%d triples, max rel err %.3g (< 1e-5)", triples, worst)};
}

// 2 -------------------------------------------------------------------------

Outcome golden_values() {
  // Second derivation: long-double straight-line formulas.
  const long double R = oracle::R_of(0.5L, 2);
  const long double lo = std::sqrt(1.0L / (R * 10 - 1)), hi = std::sqrt(3.0L / (2 * R * 10 - 3));
  const long double v_sgd = oracle::sgd(1, 0, 1, 2, 0.5L, 10, 0.33L, 0).V;
  const long double v_avg = oracle::avg(1, 0, 1, 2, 0.5L, 10, 0.5L, 0, 1).V;
  const long double fb = std::exp(-0.9L) / std::pow(2.0L, -0.9L) * 4.0L / 10.0L;

  const double r = bounds::momentum_factor_R(0.5, 2);
  const auto range = bounds::beta_range(10, r, 2, bounds::Theorem::SGD);
  const double vs = bounds::rate_V(bounds::Theorem::SGD, 0.33, 10, r, 2);
  const double va = bounds::rate_V(bounds::Theorem::Avg, 0.5, 10, r, 2);
  const double w = raw_feedback_weight(0.1, 1.0, 1.0, 10);

  // Frozen from a 40-digit evaluation of the same formulas.
  constexpr double kVsgd = 0.5448642799170349, kFeedback = 0.3034743247166985;
  const bool ok = std::abs(r - 1.25) <= 1e-12 && std::abs(R - 1.25L) <= 1e-15L &&
                  std::abs(range.lo - 0.294884) <= 1e-6 && std::abs(range.hi - 0.369274) <= 1e-6 &&
                  std::abs(range.lo - static_cast<double>(lo)) <= 1e-12 &&
                  std::abs(range.hi - static_cast<double>(hi)) <= 1e-12 && std::abs(vs - kVsgd) <= 1e-6 &&
                  std::abs(vs - static_cast<double>(v_sgd)) <= 1e-12 && std::abs(va - 0.9) <= 1e-9 &&
                  std::abs(va - static_cast<double>(v_avg)) <= 1e-12 && std::abs(w - kFeedback) <= 1e-6 &&
                  std::abs(w - static_cast<double>(fb)) <= 1e-12;
  return {ok, fmt("R=%.15g range=(%.6f,%.6f) V_sgd=%.10f V_avg=%.12f feedback=%.10f; printed constants 0.544824 and "
                  "0.3034655 differ from the formulas by %.2g and %.2g",
                  r, range.lo, range.hi, vs, va, w, std::abs(vs - 0.544824), std::abs(w - 0.3034655))};
}

// 3 -------------------------------------------------------------------------

Outcome reduction() {
  int pairs = 0, identical = 0;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    auto base = desk("reduction", 1);
    const auto data = prepare_data(base, seed);
    for (auto [qs, plain] : {std::pair{Strategy::FedQS_SGD, Strategy::FedSGD}, std::pair{Strategy::FedQS_Avg, Strategy::FedAvg}}) {
      SimConfig a = base.sim, b = base.sim;
      a.seed = b.seed = seed;
      a.record_batches = b.record_batches = true;
      a.strategy = qs;
      a.hyper.a = a.hyper.m0 = a.hyper.k = 0;
      a.hyper.feedback_enabled = false;
      b.strategy = plain;
      const auto ta = run_safl(a, data.spec, data.clients, data.test);
      const auto tb = run_safl(b, data.spec, data.clients, data.test);
      ++pairs;
      if (encode_trace_dump(ta) == encode_trace_dump(tb) && trace_csv(ta.rounds) == trace_csv(tb.rounds) &&
          ta.final_params == tb.final_params) {
        ++identical;
      }
    }
  }
  return {pairs == identical, fmt("%d/%d (strategy, seed) pairs byte-identical, T=%d", identical, pairs, desk_profile().sim.T)};
}

// 4 -------------------------------------------------------------------------

Outcome determinism() {
  int same = 0, files = 0;
  std::string bad;
  auto check = [&](const std::string& name, const std::function<void(const ExperimentConfig&)>& preset) {
    auto cfg = desk(name, 3);
    fs::remove_all(cfg.out_dir);
    preset(cfg);
    const auto first = read_tree(cfg.out_dir);
    fs::remove_all(cfg.out_dir);
    preset(cfg);
    const auto second = read_tree(cfg.out_dir);
    files += static_cast<int>(first.size());
    if (first == second) ++same;
    else bad += name + " ";
  };
  check("det-run", [](const ExperimentConfig& c) { run_experiment(c); });
  check("det-motivation", [](const ExperimentConfig& c) { write_motivation(c, preset_motivation(c)); });
  check("det-comparison", [](const ExperimentConfig& c) { write_comparison(c, preset_comparison(c)); });
  check("det-sweep", [](const ExperimentConfig& c) { sweep(c, "speed_ratio", {"1", "50"}); });
  return {same == 4, fmt("4 presets re-run, %d/4 byte-identical over %d files %s", same, files, bad.c_str())};
}

// 5 -------------------------------------------------------------------------

Outcome invariants() {
  long aggs = 0, records = 0, adapts = 0, violations = 0;
  std::string first;
  auto fail = [&](const std::string& what) {
    if (violations++ == 0) first = what;
  };
  const auto base = desk("invariants", 5);
  const std::vector<std::pair<Strategy, Mode>> runs = {
      {Strategy::FedQS_SGD, Mode::SAFL}, {Strategy::FedSGD, Mode::SAFL}, {Strategy::FedQS_Avg, Mode::SAFL},
      {Strategy::FedAvg, Mode::SAFL},    {Strategy::FedSGD, Mode::Sync}, {Strategy::FedAvg, Mode::Sync}};
  for (const auto& [strategy, mode] : runs) {
    auto cfg = base;
    cfg.sim.strategy = strategy;
    cfg.sim.mode = mode;
    const auto& h = cfg.sim.hyper;
    const int N = cfg.sim.N;
    const int per_round = mode == Mode::SAFL ? cfg.sim.K : (cfg.sim.activation_count ? cfg.sim.activation_count : cfg.sim.K);
    EngineObserver obs;
    obs.on_record = [&](const StateTable& t) {
      ++records;
      if (averages(t).f_bar != 1.0 / N) fail("f_bar != 1/N");
    };
    obs.on_adapt = [&](const ClientRuntime& rt) {
      ++adapts;
      const auto& s = rt.state;
      if (s.eta < h.eta_min || s.eta > h.eta_max) fail(fmt("eta %.17g outside clamp", s.eta));
      if (s.momentum < 0 || s.momentum > h.theta_cap) fail(fmt("momentum %.17g outside clamp", s.momentum));
    };
    obs.on_aggregate = [&](const AggregationView& v) {
      ++aggs;
      double sum = 0;
      for (double p : v.weights) sum += p;
      if (std::abs(sum - 1.0) > 1e-12) fail(fmt("weights sum to %.17g", sum));
      if (v.table.total() != static_cast<std::int64_t>(per_round) * v.after.round) fail("update count != K*rounds");
      for (int s : v.staleness) {
        if (s < 0 || (v.mode == Mode::Sync && s != 0)) fail(fmt("staleness %d in %s mode", s, std::string(to_string(v.mode)).c_str()));
      }
      if (v.batch.front().payload.kind == PayloadKind::Params) {
        for (std::size_t j = 0; j < v.after.w.size(); ++j) {
          double lo = v.batch.front().payload.values[j], hi = lo;
          for (const auto& u : v.batch) {
            lo = std::min(lo, u.payload.values[j]);
            hi = std::max(hi, u.payload.values[j]);
          }
          if (v.after.w[j] < lo || v.after.w[j] > hi) fail("model average outside payload hull");
        }
      }
    };
    for (int r = 0; r < cfg.repeats; ++r) run_repeat(cfg, r, &obs);
  }
  return {violations == 0 && aggs > 0 && adapts > 0,
          fmt("%ld aggregations, %ld records, %ld adapts over 6 configs x 5 seeds; %ld violations %s", aggs, records,
              adapts, violations, first.c_str())};
}

// 6 -------------------------------------------------------------------------

Outcome motivation() {
  auto cfg = desk("motivation", 5);
  cfg.dirichlet_x = 0.1;
  const auto res = preset_motivation(cfg);
  write_motivation(cfg, res);
  double others = 0;
  std::string cells;
  for (const auto& c : res.cells) {
    cells += fmt("%s/%s %.2f%% ", std::string(to_string(c.mode)).c_str(), c.non_iid ? "noniid" : "iid", 100 * c.gap);
    if (!(c.mode == Mode::SAFL && c.non_iid)) others = std::max(others, c.gap);
  }
  const double target = res.cells[3].gap;
  return {target >= 2 * others, fmt("gaps %s; SAFL/non-IID %.2f%% vs 2 x %.2f%%", cells.c_str(), 100 * target, 100 * others)};
}

// 7 -------------------------------------------------------------------------

Outcome improvement() {
  auto cfg = desk("comparison", 5);
  const auto res = preset_comparison(cfg);
  write_comparison(cfg, res);
  std::map<Strategy, const ComparisonRow*> row;
  for (const auto& r : res.rows) row[r.strategy] = &r;
  const auto& qsg = *row[Strategy::FedQS_SGD];
  const auto& sgd = *row[Strategy::FedSGD];
  const auto& qsa = *row[Strategy::FedQS_Avg];
  const auto& avg = *row[Strategy::FedAvg];
  const bool acc_avg = qsa.best_acc.mean >= avg.best_acc.mean;
  const bool acc_sgd = qsg.best_acc.mean >= sgd.best_acc.mean;
  const bool osc = qsg.oscillations.mean <= sgd.oscillations.mean;
  // T_f is compared only when every seed reached the target on both sides.
  const bool tf_defined = qsa.T_f.n == 5 && avg.T_f.n == 5;
  const bool tf = tf_defined && qsa.T_f.mean <= avg.T_f.mean;
  auto mark = [](bool b) { return b ? "ok" : "VIOLATED"; };
  return {acc_avg && acc_sgd && osc && tf,
          fmt("best_acc FedQS-Avg %.4f vs FedAvg %.4f [%s]; FedQS-SGD %.4f vs FedSGD %.4f [%s]; oscillations %.2f vs "
              "%.2f [%s]; T_f FedQS-Avg %.1f (n=%zu) vs FedAvg %.1f (n=%zu) [%s]",
              qsa.best_acc.mean, avg.best_acc.mean, mark(acc_avg), qsg.best_acc.mean, sgd.best_acc.mean,
              mark(acc_sgd), qsg.oscillations.mean, sgd.oscillations.mean, mark(osc), qsa.T_f.mean, qsa.T_f.n,
              avg.T_f.mean, avg.T_f.n, mark(tf))};
}

// 8 -------------------------------------------------------------------------

Outcome convex_sanity() {
  auto cfg = desk("convex", 1);
  cfg.sim.N = cfg.sim.K = 1;
  cfg.sim.strategy = Strategy::FedQS_SGD;
  cfg.partition = PartitionKind::IID;
  cfg.sim.T = 2500;  // long enough for both to reach the convex optimum
  const auto data = prepare_data(cfg, 1);
  SimConfig sim = cfg.sim;
  sim.seed = 1;
  const auto tr = run_safl(sim, data.spec, data.clients, data.test);
  const auto& train = data.clients[0].train;
  ParamVec w = tr.initial_params;
  const int steps = sim.T * sim.E;
  for (int s = 0; s < steps; ++s) w.axpy(-sim.hyper.eta0, clip_gradient(gradient(data.spec, w, train), sim.hyper.G_c));
  const double fl = forward_eval(data.spec, tr.final_params, train).loss;
  const double gd = forward_eval(data.spec, w, train).loss;
  return {std::abs(fl - gd) <= 1e-3,
          fmt("%d steps: FedQS-SGD train loss %.6f, full-batch GD %.6f, |diff| %.2g (<= 1e-3)", steps, fl, gd,
              std::abs(fl - gd))};
}

// 9 -------------------------------------------------------------------------

Outcome metrics_examples() {
  int ok = 0, total = 0;
  auto expect = [&](bool b) { ok += b, ++total; };
  expect(conv_speed({0.2, 0.4, 0.55}, 0.5) == 3);
  expect(!conv_speed({0.2, 0.4, 0.55}, 0.6));
  expect(conv_speed({0.6, 0.4, 0.7, 0.8}, 0.5) == 1);
  expect(stability_T_s({0.6, 0.4, 0.7, 0.8}, 0.5) == 3);
  expect(!stability_T_s({0.6, 0.7, 0.4}, 0.5));
  expect(oscillations({10, 30, 10, 40}, 15) == 1);
  expect(oscillations({10, 30, 10, 40}) == 1);
  expect(kOscillationThresholdPct == 15.0);
  expect(oscillations({50, 35}) == 0);
  expect(oscillations({50, 34.9}) == 1);
  expect(oscillations({1, 2, 3, 50, 90}) == 0);
  return {ok == total, fmt("%d/%d worked examples reproduced", ok, total)};
}

// 10 ------------------------------------------------------------------------

Outcome bound_curves() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0, 1);
  int accepted = 0, tries = 0, good = 0;
  double worst_floor = 0;
  while (accepted < 20 && tries < 100000) {
    ++tries;
    bounds::BoundParams bp;
    const auto th = rng() % 2 ? bounds::Theorem::SGD : bounds::Theorem::Avg;
    bp.E = 1 + static_cast<int>(rng() % 4);
    bp.theta = 0.9 * u(rng);
    bp.K = 1 + static_cast<int>(rng() % 20);
    bp.N = bp.K + static_cast<int>(rng() % 50);
    bp.L = 0.1 + 10 * u(rng);
    bp.delta = 2 * u(rng);
    bp.G_c = 0.5 + 20 * u(rng);
    bp.Q_t = static_cast<int>(rng() % (bp.K + 1));
    bp.p = 0.05 + 0.95 * u(rng);
    bp.q = bp.p * u(rng);
    bp.init_gap = 0.1 + 10 * u(rng);
    const auto range = bounds::beta_range(bp.K, bounds::momentum_factor_R(bp.theta, bp.E), bp.E, th);
    if (range.empty) continue;
    bp.beta = range.lo + (range.hi - range.lo) * (0.05 + 0.9 * u(rng));
    const auto r = bounds::evaluate(bp, th);
    if (!(r.V > 0 && r.V <= 0.95)) continue;
    ++accepted;
    const auto b = bounds::bound_curve(bp, 2000, th);
    const double floor = r.U + r.W;
    bool dec = true;
    for (std::size_t t = 0; t + 1 < b.size(); ++t) {
      if (b[t + 1] > b[t]) dec = false;
      if (b[t] - floor > 1e-12 * std::max(1.0, std::abs(floor)) && !(b[t + 1] < b[t])) dec = false;
    }
    worst_floor = std::max(worst_floor, std::abs(b.back() - floor));
    if (dec && std::abs(b.back() - floor) <= 1e-9) ++good;
  }
  return {accepted == 20 && good == 20,
          fmt("%d/%d random parameter sets decreasing and within 1e-9 of U+W at t=2000 (worst %.2g, %d draws)", good,
              accepted, worst_floor, tries)};
}

}  // namespace

int main(int argc, char** argv) {
  g_scratch = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "fedqs_acceptance";
  fs::remove_all(g_scratch);
  fs::create_directories(g_scratch);

  struct Criterion {
    int id;
    const char* name;
    double limit_s;  // 0 = no runtime limit
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {1, "gradient oracle", 10, gradient_oracle},   {2, "formula golden values", 0, golden_values},
      {3, "reduction equivalence", 30, reduction},   {4, "determinism", 0, determinism},
      {5, "protocol invariants", 120, invariants},   {6, "motivation trend", 300, motivation},
      {7, "improvement trend", 300, improvement},    {8, "convex sanity", 0, convex_sanity},
      {9, "metrics examples", 0, metrics_examples},  {10, "bound curve property", 0, bound_curves},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0 && secs > c.limit_s) {
      o.pass = false;
      o.detail += fmt(" [over time limit %.0f s]", c.limit_s);
    }
    failed += !o.pass;
    std::printf("%s %2d %-22s %7.2fs  %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/10 criteria passed\n", 10 - failed);
  return failed == 0 ? 0 : 1;
}
