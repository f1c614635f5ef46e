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
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <queue>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedqs/client.hpp"
#include "fedqs/error.hpp"
#include "fedqs/metrics.hpp"
#include "fedqs/numcore.hpp"
#include "fedqs/serialize.hpp"
#include "fedqs/server.hpp"

namespace fedqs {

enum class Strategy { FedQS_SGD, FedQS_Avg, FedSGD, FedAvg };
enum class Mode { SAFL, Sync };

inline bool is_fedqs(Strategy s) noexcept { return s == Strategy::FedQS_SGD || s == Strategy::FedQS_Avg; }

inline AggStrategy aggregation_of(Strategy s) noexcept {
  return (s == Strategy::FedQS_SGD || s == Strategy::FedSGD) ? AggStrategy::SGD : AggStrategy::Avg;
}

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::FedQS_SGD: return "fedqs-sgd";
    case Strategy::FedQS_Avg: return "fedqs-avg";
    case Strategy::FedSGD: return "fedsgd";
    case Strategy::FedAvg: return "fedavg";
  }
  return "?";
}

inline std::string_view to_string(Mode m) { return m == Mode::SAFL ? "safl" : "sync"; }

/// Virtual training time of one local round: (c0 + c1 * n_i * E) / speed.
struct CostModel {
  double c0 = 1.0;
  double c1 = 0.01;

  friend bool operator==(const CostModel&, const CostModel&) = default;
};

struct SimConfig {
  int N = 100;
  int K = 10;
  int T = 400;
  int E = 2;
  Strategy strategy = Strategy::FedQS_SGD;
  Mode mode = Mode::SAFL;
  double speed_ratio = 50.0;
  int activation_count = 0;  // Sync only; 0 means K
  ClientHyper hyper;
  double eta_g = 1.0;
  double g_max = 100.0;
  CostModel cost;
  std::uint64_t seed = 1;
  bool record_batches = false;

  void validate() const {
    FEDQS_REQUIRE(N >= 1, "SimConfig: N must be >= 1");
    FEDQS_REQUIRE(K >= 1 && K <= N, "SimConfig: K must be in [1, N], got K=", K, " N=", N);
    FEDQS_REQUIRE(T >= 1, "SimConfig: T must be >= 1");
    FEDQS_REQUIRE(E >= 1, "SimConfig: E must be >= 1");
    FEDQS_REQUIRE(speed_ratio >= 1.0, "SimConfig: speed_ratio must be >= 1");
    FEDQS_REQUIRE(hyper.eta_min > 0.0 && hyper.eta_min <= hyper.eta_max, "SimConfig: bad learning-rate bounds");
    FEDQS_REQUIRE(hyper.theta_cap >= 0.0 && hyper.theta_cap < 1.0, "SimConfig: theta_cap must be in [0,1)");
    FEDQS_REQUIRE(hyper.eta0 > 0.0, "SimConfig: eta0 must be positive");
    FEDQS_REQUIRE(activation_count >= 0 && activation_count <= N, "SimConfig: activation_count must be in [0, N]");
    FEDQS_REQUIRE(mode == Mode::SAFL || !is_fedqs(strategy), "SimConfig: sync mode runs baselines only");
  }

  friend bool operator==(const SimConfig&, const SimConfig&) = default;
};

struct ClientData {
  LabeledDataset train;
  LabeledDataset val;
};

struct Trace {
  std::vector<RoundRecord> rounds;
  ParamVec initial_params;
  ParamVec final_params;
  std::vector<double> speeds;
  std::vector<std::vector<LocalUpdate>> batches;  // filled when record_batches is set
};

/// Read-only view handed to observers after each aggregation.
struct AggregationView {
  Mode mode;
  std::span<const LocalUpdate> batch;
  std::span<const double> weights;
  std::span<const int> staleness;
  const StateTable& table;
  const GlobalState& before;
  const GlobalState& after;
};

/// Optional hooks for instrumentation and invariant checking.
struct EngineObserver {
  std::function<void(double vtime)> on_event;
  std::function<void(const StateTable&)> on_record;
  std::function<void(const ClientRuntime&)> on_adapt;
  std::function<void(const AggregationView&)> on_aggregate;
};

// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Independent stream seed for one purpose of one run.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return detail::splitmix64(detail::splitmix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL));
}

namespace seed_stream {
inline constexpr std::uint64_t kSpeeds = 1, kInit = 2, kActivation = 3, kData = 4, kTest = 5, kPartition = 6,
                               kSplit = 7;
}

/// Per-client speed multipliers, uniform on [1, ratio].
inline std::vector<double> assign_speeds(int N, double ratio, std::uint64_t seed) {
  FEDQS_REQUIRE(ratio >= 1.0, "assign_speeds: ratio must be >= 1, got ", ratio);
  FEDQS_REQUIRE(N >= 1, "assign_speeds: N must be >= 1");
  std::vector<double> speeds(static_cast<std::size_t>(N), 1.0);
  if (ratio == 1.0) return speeds;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(1.0, ratio);
  for (auto& s : speeds) s = u(rng);
  return speeds;
}

inline int staleness_of(const LocalUpdate& u, int current_round) {
  const int s = current_round - u.base_round;
  if (s < 0) {
    throw ContractViolation(detail::concat("staleness_of: update from client ", u.client_id, " has base round ",
                                           u.base_round, " ahead of current round ", current_round));
  }
  return s;
}

inline double training_duration(const CostModel& cost, std::size_t n_i, int E, double speed) {
  return (cost.c0 + cost.c1 * static_cast<double>(n_i) * E) / speed;
}

namespace detail {

struct Event {
  double time;
  int client;
  // min-heap on (time, client)
  friend bool operator>(const Event& a, const Event& b) {
    return a.time != b.time ? a.time > b.time : a.client > b.client;
  }
};

class Simulation {
 public:
  Simulation(const SimConfig& cfg, const ModelSpec& spec, const std::vector<ClientData>& data,
             const LabeledDataset& test, const EngineObserver* obs)
      : cfg_(cfg), spec_(spec), test_(test), obs_(obs), table_(static_cast<std::size_t>(cfg.N)) {
    cfg_.validate();
    spec_.validate();
    FEDQS_REQUIRE(data.size() == static_cast<std::size_t>(cfg.N), "engine: ", data.size(),
                  " client datasets for N = ", cfg.N);
    FEDQS_REQUIRE(!test.empty(), "engine: empty test set");
    global_.w = init_params(spec_, derive_seed(cfg_.seed, seed_stream::kInit));
    global_.eta_g = cfg_.eta_g;
    trace_.initial_params = global_.w;
    trace_.speeds = assign_speeds(cfg_.N, cfg_.speed_ratio, derive_seed(cfg_.seed, seed_stream::kSpeeds));
    clients_.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      FEDQS_REQUIRE(!data[i].train.empty(), "engine: client ", i, " has no training data");
      auto& rt = clients_[i];
      rt.id = static_cast<int>(i);
      rt.train_set = data[i].train;
      rt.val_set = data[i].val;
      rt.state.eta = cfg_.hyper.eta0;
      rt.global_now = global_.w;
      rt.base_round = 0;
      rt.local_params = global_.w;
    }
    pending_.resize(data.size());
  }

  Trace run_safl() {
    const bool fedqs = is_fedqs(cfg_.strategy);
    for (std::size_t i = 0; i < clients_.size(); ++i) {
      if (fedqs) adapt_client(i);
      start_training(i, 0.0);
    }
    double last_time = 0.0;
    std::vector<std::size_t> arrived;
    while (global_.round < cfg_.T) {
      FEDQS_REQUIRE(!events_.empty(), "engine: event queue drained at round ", global_.round);
      const double now = events_.top().time;
      FEDQS_REQUIRE(now >= last_time, "engine: virtual clock moved backwards");
      last_time = now;
      // Every client finishing at this instant pushes before any of them
      // pulls, so simultaneous finishers all see the aggregate they complete.
      arrived.clear();
      while (!events_.empty() && events_.top().time == now && global_.round < cfg_.T) {
        const auto i = static_cast<std::size_t>(events_.top().client);
        events_.pop();
        if (obs_ && obs_->on_event) obs_->on_event(now);
        LocalUpdate u = std::move(pending_[i]);
        table_.record(u);
        if (obs_ && obs_->on_record) obs_->on_record(table_);
        buffer_.push(std::move(u));
        while (buffer_.ready(static_cast<std::size_t>(cfg_.K)) && global_.round < cfg_.T) {
          aggregate_safl(now);
        }
        arrived.push_back(i);
      }
      if (global_.round >= cfg_.T) break;

      for (std::size_t i : arrived) {
        if (pull_latest(i) && fedqs) adapt_client(i);
        start_training(i, now);
      }
    }
    trace_.final_params = global_.w;
    return std::move(trace_);
  }

  Trace run_sync() {
    const int active = cfg_.activation_count > 0 ? cfg_.activation_count : cfg_.K;
    std::mt19937_64 rng(derive_seed(cfg_.seed, seed_stream::kActivation));
    std::vector<int> ids(clients_.size());
    double vtime = 0.0;
    const auto agg = aggregation_of(cfg_.strategy);
    while (global_.round < cfg_.T) {
      std::iota(ids.begin(), ids.end(), 0);
      std::shuffle(ids.begin(), ids.end(), rng);
      std::vector<int> chosen(ids.begin(), ids.begin() + active);
      std::sort(chosen.begin(), chosen.end());

      std::vector<LocalUpdate> batch;
      double round_time = 0.0;
      for (int id : chosen) {
        const auto i = static_cast<std::size_t>(id);
        pull_latest(i);
        round_time = std::max(round_time, train_once(i));
        batch.push_back(std::move(pending_[i]));
        table_.record(batch.back());
        if (obs_ && obs_->on_record) obs_->on_record(table_);
      }
      vtime += round_time;
      if (obs_ && obs_->on_event) obs_->on_event(vtime);

      std::vector<int> stale(batch.size());
      for (std::size_t j = 0; j < batch.size(); ++j) stale[j] = staleness_of(batch[j], global_.round);
      const GlobalState before = global_;
      global_ = aggregate_sync(std::move(global_), batch, agg);
      finish_round(vtime, batch, data_size_weights(batch), stale, before);
    }
    trace_.final_params = global_.w;
    return std::move(trace_);
  }

 private:
  // Takes the newest global if the client's copy is older. Returns true on pull.
  bool pull_latest(std::size_t i) {
    auto& rt = clients_[i];
    if (global_.round <= rt.base_round) return false;
    rt.global_prev = std::move(rt.global_now);
    rt.global_now = global_.w;
    rt.base_round = global_.round;
    rt.local_params = global_.w;
    return true;
  }

  void adapt_client(std::size_t i) {
    const Averages avg = averages(table_);
    const BroadcastInfo info = make_broadcast(global_, avg, i);
    adapt(clients_[i], info, spec_, cfg_.hyper);
    if (obs_ && obs_->on_adapt) obs_->on_adapt(clients_[i]);
  }

  // Trains client i from its current start point, parks the update and
  // returns the virtual duration.
  double train_once(std::size_t i) {
    auto& rt = clients_[i];
    const bool fedqs = is_fedqs(cfg_.strategy);
    const double eta = fedqs ? rt.state.eta : cfg_.hyper.eta0;
    const bool momentum = fedqs && rt.state.momentum_enabled;
    auto* carry = (fedqs && cfg_.hyper.momentum_carryover) ? &rt.momentum_history : nullptr;
    TrainResult res =
        local_train(spec_, rt.local_params, rt.train_set, eta, rt.state.momentum, cfg_.E, cfg_.hyper.G_c, momentum,
                    carry);
    const double s_i = local_similarity(rt, res.params_end, cfg_.hyper.sim_kind);
    rt.last_similarity = s_i;
    pending_[i] = build_update(rt, res, s_i, aggregation_of(cfg_.strategy));
    pending_[i].eta_used = eta;
    rt.local_params = std::move(res.params_end);
    return training_duration(cfg_.cost, rt.train_set.size(), cfg_.E, trace_.speeds[i]);
  }

  void start_training(std::size_t i, double now) {
    const double duration = train_once(i);
    events_.push(Event{now + duration, static_cast<int>(i)});
  }

  void aggregate_safl(double vtime) {
    auto batch = buffer_.take(static_cast<std::size_t>(cfg_.K));
    std::vector<int> stale(batch.size());
    for (std::size_t j = 0; j < batch.size(); ++j) stale[j] = staleness_of(batch[j], global_.round);
    const auto p = compute_weights(batch, table_, cfg_.K, WeightOptions{cfg_.g_max});
    const GlobalState before = global_;
    if (aggregation_of(cfg_.strategy) == AggStrategy::SGD) {
      const double scale = is_fedqs(cfg_.strategy) ? 1.0 : global_.eta_g;
      global_ = aggregate_sgd(std::move(global_), batch, p, scale);
    } else {
      global_ = aggregate_avg(std::move(global_), batch, p);
    }
    finish_round(vtime, batch, p, stale, before);
  }

  void finish_round(double vtime, std::vector<LocalUpdate>& batch, const std::vector<double>& p,
                    const std::vector<int>& stale, const GlobalState& before) {
    FEDQS_REQUIRE(global_.w.all_finite(), "engine: global model diverged (non-finite) at round ", global_.round);
    if (obs_ && obs_->on_aggregate) {
      obs_->on_aggregate(AggregationView{cfg_.mode, batch, p, stale, table_, before, global_});
    }
    const EvalResult ev = forward_eval(spec_, global_.w, test_);
    const Averages avg = averages(table_);
    RoundRecord r;
    r.round = global_.round;
    r.vtime = vtime;
    r.test_acc = ev.accuracy;
    r.test_loss = ev.loss;
    r.mean_staleness = std::accumulate(stale.begin(), stale.end(), 0.0) / static_cast<double>(stale.size());
    r.num_feedback = static_cast<int>(std::count_if(batch.begin(), batch.end(), [](const auto& u) { return u.feedback; }));
    r.f_bar = avg.f_bar;
    r.s_bar = avg.s_bar;
    trace_.rounds.push_back(r);
    if (cfg_.record_batches) trace_.batches.push_back(std::move(batch));
  }

  SimConfig cfg_;
  ModelSpec spec_;
  const LabeledDataset& test_;
  const EngineObserver* obs_;
  StateTable table_;
  AggBuffer buffer_;
  GlobalState global_;
  std::vector<ClientRuntime> clients_;
  std::vector<LocalUpdate> pending_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  Trace trace_;
};

}  // namespace detail

/// Semi-asynchronous run: clients train continuously at their own speed and
/// the server aggregates every K arrivals until T rounds are done.
inline Trace run_safl(const SimConfig& cfg, const ModelSpec& spec, const std::vector<ClientData>& data,
                      const LabeledDataset& test, const EngineObserver* obs = nullptr) {
  FEDQS_REQUIRE(cfg.mode == Mode::SAFL, "run_safl: config mode is not SAFL");
  return detail::Simulation(cfg, spec, data, test, obs).run_safl();
}

/// Synchronous run: each round a seeded subset trains from the current global
/// and the round lasts as long as its slowest member.
inline Trace run_sync(const SimConfig& cfg, const ModelSpec& spec, const std::vector<ClientData>& data,
                      const LabeledDataset& test, const EngineObserver* obs = nullptr) {
  FEDQS_REQUIRE(cfg.mode == Mode::Sync, "run_sync: config mode is not Sync");
  return detail::Simulation(cfg, spec, data, test, obs).run_sync();
}

inline Trace run(const SimConfig& cfg, const ModelSpec& spec, const std::vector<ClientData>& data,
                 const LabeledDataset& test, const EngineObserver* obs = nullptr) {
  return cfg.mode == Mode::SAFL ? run_safl(cfg, spec, data, test, obs) : run_sync(cfg, spec, data, test, obs);
}

/// Largest distance between any client's full-batch gradient and the
/// sample-weighted global gradient at `params`; an empirical heterogeneity
/// level for the bounds calculator.
inline double estimate_heterogeneity(const ModelSpec& spec, const ParamVec& params,
                                     const std::vector<ClientData>& data) {
  FEDQS_REQUIRE(!data.empty(), "estimate_heterogeneity: no clients");
  std::vector<ParamVec> grads;
  ParamVec global(params.size());
  double total = 0.0;
  for (const auto& c : data) {
    grads.push_back(gradient(spec, params, c.train));
    const auto n = static_cast<double>(c.train.size());
    global.axpy(n, grads.back());
    total += n;
  }
  global *= 1.0 / total;
  double worst = 0.0;
  for (const auto& g : grads) worst = std::max(worst, norm2(g - global));
  return worst;
}

// ---------------------------------------------------------------------------
// Trace replay dump: every aggregated batch followed by its round record.

inline constexpr char kTraceMagic[8] = {'F', 'Q', 'S', 'T', 'R', 'C', '0', '1'};

inline std::vector<std::byte> encode_trace_dump(const Trace& trace) {
  FEDQS_REQUIRE(trace.batches.size() == trace.rounds.size(), "trace dump needs recorded batches");
  wire::Writer w;
  for (char c : kTraceMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u64(trace.initial_params.size());
  for (double v : trace.initial_params) w.f64(v);
  w.u64(trace.rounds.size());
  for (std::size_t r = 0; r < trace.rounds.size(); ++r) {
    w.u64(trace.batches[r].size());
    for (const auto& u : trace.batches[r]) wire::write_update(w, u);
    const auto& rec = trace.rounds[r];
    w.i64(rec.round);
    w.f64(rec.vtime);
    w.f64(rec.test_acc);
    w.f64(rec.test_loss);
    w.f64(rec.mean_staleness);
    w.i64(rec.num_feedback);
    w.f64(rec.f_bar);
    w.f64(rec.s_bar);
  }
  return w.take();
}

inline Trace decode_trace_dump(std::span<const std::byte> data) {
  wire::Reader r(data);
  for (char c : kTraceMagic) {
    if (r.u8() != static_cast<std::uint8_t>(c)) throw IoError("trace dump: bad magic");
  }
  Trace t;
  const auto dim = r.u64();
  if (dim > r.remaining() / 8) throw IoError("trace dump: truncated initial parameters");
  std::vector<double> init(dim);
  for (auto& v : init) v = r.f64();
  t.initial_params = ParamVec(std::move(init));
  const auto rounds = r.u64();
  for (std::uint64_t k = 0; k < rounds; ++k) {
    const auto n = r.u64();
    std::vector<LocalUpdate> batch;
    for (std::uint64_t j = 0; j < n; ++j) batch.push_back(wire::read_update(r));
    t.batches.push_back(std::move(batch));
    RoundRecord rec;
    rec.round = static_cast<int>(r.i64());
    rec.vtime = r.f64();
    rec.test_acc = r.f64();
    rec.test_loss = r.f64();
    rec.mean_staleness = r.f64();
    rec.num_feedback = static_cast<int>(r.i64());
    rec.f_bar = r.f64();
    rec.s_bar = r.f64();
    t.rounds.push_back(rec);
  }
  if (!r.done()) throw IoError("trace dump: trailing bytes");
  return t;
}

/// Re-aggregates a recorded SAFL trace from its initial parameters and returns
/// the resulting global model.
inline ParamVec replay_safl(const Trace& dump, const SimConfig& cfg) {
  StateTable table(static_cast<std::size_t>(cfg.N));
  GlobalState g{0, dump.initial_params, cfg.eta_g};
  for (const auto& batch : dump.batches) {
    for (const auto& u : batch) table.record(u);
    const auto p = compute_weights(batch, table, cfg.K, WeightOptions{cfg.g_max});
    if (aggregation_of(cfg.strategy) == AggStrategy::SGD) {
      g = aggregate_sgd(std::move(g), batch, p, is_fedqs(cfg.strategy) ? 1.0 : g.eta_g);
    } else {
      g = aggregate_avg(std::move(g), batch, p);
    }
  }
  return g.w;
}

inline void write_binary_file(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(detail::concat("cannot open '", path.string(), "' for writing"));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(detail::concat("write failed for '", path.string(), "'"));
}

inline std::vector<std::byte> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(detail::concat("cannot open '", path.string(), "'"));
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(raw.size());
  std::transform(raw.begin(), raw.end(), out.begin(), [](char c) { return static_cast<std::byte>(c); });
  return out;
}

}  // namespace fedqs
