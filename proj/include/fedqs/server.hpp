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
#include <cstddef>
#include <cstdint>
#include <deque>
#include <numeric>
#include <span>
#include <vector>

#include "fedqs/client.hpp"
#include "fedqs/error.hpp"
#include "fedqs/param_vec.hpp"

namespace fedqs {

/// Per-client participation count n(i) and latest similarity s_g(i).
class StateTable {
 public:
  explicit StateTable(std::size_t num_clients) : n_(num_clients, 0), s_g_(num_clients, 0.0) {
    FEDQS_REQUIRE(num_clients >= 1, "StateTable: need at least one client");
  }

  std::size_t num_clients() const noexcept { return n_.size(); }
  std::int64_t count(std::size_t i) const { return n_.at(i); }
  double similarity(std::size_t i) const { return s_g_.at(i); }
  std::int64_t total() const noexcept { return total_; }

  void record(const LocalUpdate& u) {
    if (u.client_id < 0 || static_cast<std::size_t>(u.client_id) >= n_.size()) {
      throw ContractViolation(detail::concat("record_update: unknown client id ", u.client_id, " (N = ",
                                             n_.size(), ")"));
    }
    const auto i = static_cast<std::size_t>(u.client_id);
    n_[i] += 1;
    s_g_[i] = u.similarity;
    total_ += 1;
  }

 private:
  std::vector<std::int64_t> n_;
  std::vector<double> s_g_;
  std::int64_t total_ = 0;
};

inline void record_update(StateTable& table, const LocalUpdate& u) { table.record(u); }

struct Averages {
  std::vector<double> f;  // per-client update share
  double f_bar = 0.0;
  double s_bar = 0.0;
};

/// Update shares f_i = n(i)/sum n (uniform 1/N before any update), their
/// mean, and the mean of the latest similarities over all N clients.
inline Averages averages(const StateTable& table) {
  const std::size_t N = table.num_clients();
  const double inv_n = 1.0 / static_cast<double>(N);
  Averages out;
  out.f.assign(N, inv_n);
  if (table.total() > 0) {
    const double total = static_cast<double>(table.total());
    for (std::size_t i = 0; i < N; ++i) out.f[i] = static_cast<double>(table.count(i)) / total;
  }
  // The shares sum to one by construction, so their mean is exactly 1/N;
  // summing them in floating point would only add rounding noise.
  out.f_bar = inv_n;
  double ss = 0.0;
  for (std::size_t i = 0; i < N; ++i) ss += table.similarity(i);
  out.s_bar = ss / static_cast<double>(N);
  return out;
}

/// Pending updates, consumed oldest-first.
class AggBuffer {
 public:
  void push(LocalUpdate u) { pending_.push_back(std::move(u)); }
  std::size_t size() const noexcept { return pending_.size(); }
  bool ready(std::size_t K) const noexcept { return pending_.size() >= K; }

  std::vector<LocalUpdate> take(std::size_t K) {
    FEDQS_REQUIRE(pending_.size() >= K, "AggBuffer: ", pending_.size(), " pending, ", K, " requested");
    std::vector<LocalUpdate> out(std::make_move_iterator(pending_.begin()),
                                 std::make_move_iterator(pending_.begin() + static_cast<std::ptrdiff_t>(K)));
    pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(K));
    return out;
  }

 private:
  std::deque<LocalUpdate> pending_;
};

struct GlobalState {
  int round = 0;
  ParamVec w;
  double eta_g = 1.0;
};

/// exp(phi - F) / 2^(phi - F) * (1 + G)^2 / K
inline double raw_feedback_weight(double phi, double F, double G, int K) {
  const double x = phi - F;
  return std::exp(x) / std::exp2(x) * (1.0 + G) * (1.0 + G) / static_cast<double>(K);
}

/// G = s_bar / s_u, kept inside [-g_max, g_max]; both zero gives 1.
inline double similarity_ratio(double s_u, double s_bar, double g_max) {
  if (s_u == 0.0) {
    if (s_bar == 0.0) return 1.0;
    return s_bar > 0.0 ? g_max : -g_max;
  }
  return std::clamp(s_bar / s_u, -g_max, g_max);
}

struct WeightOptions {
  double g_max = 100.0;
  double floor = 1e-6;  // applied to feedback weights before normalising
};

namespace detail {

inline std::vector<double> normalise(std::vector<double> raw) {
  double sum = 0.0;
  for (double v : raw) sum += v;
  FEDQS_REQUIRE(sum > 0.0 && std::isfinite(sum), "aggregation weights sum to ", sum);
  for (double& v : raw) v /= sum;
  return raw;
}

inline std::vector<double> size_shares(std::span<const LocalUpdate> batch) {
  std::int64_t n = 0;
  for (const auto& u : batch) n += u.n_i;
  FEDQS_REQUIRE(n > 0, "aggregation weights: total sample count is zero");
  std::vector<double> raw(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) raw[j] = static_cast<double>(batch[j].n_i) / static_cast<double>(n);
  return raw;
}

}  // namespace detail

/// Plain n_i / n weights, normalised.
inline std::vector<double> data_size_weights(std::span<const LocalUpdate> batch) {
  return detail::normalise(detail::size_shares(batch));
}

/// FedQS aggregation weights. The table must already contain the batch.
/// Updates flagged for feedback get the speed/similarity weight in place of
/// their n_i / n share; the result is normalised to sum 1.
inline std::vector<double> compute_weights(std::span<const LocalUpdate> batch, const StateTable& table, int K,
                                           const WeightOptions& opt = {}) {
  FEDQS_REQUIRE(K >= 1 && batch.size() == static_cast<std::size_t>(K), "compute_weights: batch of ",
                batch.size(), " for K = ", K);
  auto raw = detail::size_shares(batch);
  const bool any_feedback = std::any_of(batch.begin(), batch.end(), [](const auto& u) { return u.feedback; });
  if (any_feedback) {
    const Averages avg = averages(table);
    const double phi = static_cast<double>(K) / static_cast<double>(table.num_clients());
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const auto& u = batch[j];
      if (!u.feedback) continue;
      const double f_u = avg.f.at(static_cast<std::size_t>(u.client_id));
      FEDQS_REQUIRE(f_u > 0.0, "compute_weights: client ", u.client_id, " has no recorded updates");
      const double F = avg.f_bar / f_u;
      const double G = similarity_ratio(u.similarity, avg.s_bar, opt.g_max);
      raw[j] = std::max(raw_feedback_weight(phi, F, G, K), opt.floor);
    }
  }
  return detail::normalise(std::move(raw));
}

namespace detail {

inline void check_batch(std::span<const LocalUpdate> batch, std::span<const double> p, PayloadKind kind,
                        std::size_t dim) {
  FEDQS_REQUIRE(!batch.empty(), "aggregate: empty batch");
  FEDQS_REQUIRE(batch.size() == p.size(), "aggregate: ", batch.size(), " updates but ", p.size(), " weights");
  for (const auto& u : batch) {
    FEDQS_REQUIRE(u.payload.kind == kind, "aggregate: client ", u.client_id, " sent the wrong payload kind");
    FEDQS_REQUIRE(u.payload.values.size() == dim, "aggregate: client ", u.client_id, " payload length ",
                  u.payload.values.size(), " != ", dim);
  }
}

}  // namespace detail

/// w <- w - sum_u p_u * scale * eta_u * U_u
inline GlobalState aggregate_sgd(GlobalState g, std::span<const LocalUpdate> batch, std::span<const double> p,
                                 double scale = 1.0) {
  detail::check_batch(batch, p, PayloadKind::PseudoGrad, g.w.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    g.w.axpy(-(p[j] * batch[j].eta_used * scale), batch[j].payload.values);
  }
  g.round += 1;
  return g;
}

/// w <- sum_u p_u * w_u, snapped into the coordinatewise hull of the payloads
/// so rounding never leaves it.
inline GlobalState aggregate_avg(GlobalState g, std::span<const LocalUpdate> batch, std::span<const double> p) {
  detail::check_batch(batch, p, PayloadKind::Params, g.w.size());
  ParamVec out(g.w.size());
  for (std::size_t j = 0; j < batch.size(); ++j) out.axpy(p[j], batch[j].payload.values);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double lo = batch[0].payload.values[i], hi = lo;
    for (const auto& u : batch) {
      lo = std::min(lo, u.payload.values[i]);
      hi = std::max(hi, u.payload.values[i]);
    }
    out[i] = std::clamp(out[i], lo, hi);
  }
  g.w = std::move(out);
  g.round += 1;
  return g;
}

/// Synchronous round: one fresh update per activated client, n_i / n weights,
/// no feedback.
inline GlobalState aggregate_sync(GlobalState g, std::span<const LocalUpdate> batch, AggStrategy strategy) {
  std::vector<int> seen;
  for (const auto& u : batch) {
    FEDQS_REQUIRE(u.base_round == g.round, "aggregate_sync: stale update from client ", u.client_id, " (base ",
                  u.base_round, ", round ", g.round, ")");
    FEDQS_REQUIRE(std::find(seen.begin(), seen.end(), u.client_id) == seen.end(),
                  "aggregate_sync: duplicate update from client ", u.client_id);
    seen.push_back(u.client_id);
  }
  const auto p = data_size_weights(batch);
  const double eta_g = g.eta_g;
  return strategy == AggStrategy::SGD ? aggregate_sgd(std::move(g), batch, p, eta_g)
                                      : aggregate_avg(std::move(g), batch, p);
}

inline BroadcastInfo make_broadcast(const GlobalState& g, const Averages& avg, std::size_t client) {
  return BroadcastInfo{g.round, g.w, avg.f_bar, avg.s_bar, avg.f.at(client)};
}

inline std::vector<BroadcastInfo> make_broadcast(const GlobalState& g, const StateTable& table) {
  const Averages avg = averages(table);
  std::vector<BroadcastInfo> out;
  out.reserve(table.num_clients());
  for (std::size_t i = 0; i < table.num_clients(); ++i) out.push_back(make_broadcast(g, avg, i));
  return out;
}

}  // namespace fedqs
