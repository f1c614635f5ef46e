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
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedqs/error.hpp"
#include "fedqs/numcore.hpp"
#include "fedqs/param_vec.hpp"

namespace fedqs {

enum class SimilarityKind { Cosine, Euclidean, Manhattan };

// Fast/straggling by update share f_i vs the mean; biased/unbiased by
// similarity s_i vs the mean.
enum class Quadrant { FBC, FUC, SUC, SBC };

enum class AggStrategy { SGD, Avg };

inline std::string_view to_string(Quadrant q) {
  switch (q) {
    case Quadrant::FBC: return "FBC";
    case Quadrant::FUC: return "FUC";
    case Quadrant::SUC: return "SUC";
    case Quadrant::SBC: return "SBC";
  }
  return "?";
}

inline std::string_view to_string(SimilarityKind k) {
  switch (k) {
    case SimilarityKind::Cosine: return "cosine";
    case SimilarityKind::Euclidean: return "euclidean";
    case SimilarityKind::Manhattan: return "manhattan";
  }
  return "?";
}

/// Client-side knobs. Defaults are the published FedQS settings.
struct ClientHyper {
  double eta0 = 0.1;
  double a = 0.002;       // learning-rate change rate
  double m0 = 0.1;        // base momentum
  double k = 0.2;         // momentum sensitivity to similarity
  double eta_min = 0.001;
  double eta_max = 0.2;
  double theta_cap = 0.9; // momentum ceiling
  double G_c = 20.0;      // gradient clipping bound
  double spread_threshold = 0.2;
  SimilarityKind sim_kind = SimilarityKind::Cosine;
  bool momentum_carryover = false;
  bool feedback_enabled = true;
  bool momentum_allowed = true;

  friend bool operator==(const ClientHyper&, const ClientHyper&) = default;
};

/// What the server tells one client after an aggregation.
struct BroadcastInfo {
  int round = 0;
  ParamVec global_params;
  double f_bar = 0.0;
  double s_bar = 0.0;
  double f_i = 0.0;
};

enum class PayloadKind : std::uint8_t { PseudoGrad = 0, Params = 1 };

struct Payload {
  PayloadKind kind = PayloadKind::PseudoGrad;
  ParamVec values;

  friend bool operator==(const Payload&, const Payload&) = default;
};

/// One client push.
struct LocalUpdate {
  int client_id = 0;
  int base_round = 0;
  Payload payload;
  double eta_used = 0.0;
  double similarity = 1.0;
  bool feedback = false;
  std::int64_t n_i = 0;

  friend bool operator==(const LocalUpdate&, const LocalUpdate&) = default;
};

/// The adaptable part of a client: learning rate, momentum and the flags
/// derived from its quadrant.
struct AdaptState {
  double eta = 0.1;
  double momentum = 0.0;
  std::optional<Quadrant> quadrant;
  bool feedback = false;
  bool momentum_enabled = false;

  friend bool operator==(const AdaptState&, const AdaptState&) = default;
};

struct ClientRuntime {
  int id = 0;
  LabeledDataset train_set;
  LabeledDataset val_set;
  AdaptState state;
  std::optional<ParamVec> global_now;
  std::optional<ParamVec> global_prev;
  int base_round = 0;
  ParamVec local_params;       // where the next local_train starts
  double last_similarity = 1.0;
  std::vector<ParamVec> momentum_history;  // only used with carryover
};

// ---------------------------------------------------------------------------
// Global aggregation estimation

/// L_g = now - prev; the zero vector when there is no previous global yet.
inline ParamVec pseudo_global_gradient(const ParamVec& now, const std::optional<ParamVec>& prev) {
  if (!prev) return ParamVec(now.size());
  FEDQS_REQUIRE(prev->size() == now.size(), "pseudo_global_gradient: length mismatch ", now.size(), " vs ",
                prev->size());
  return now - *prev;
}

/// Larger is more aligned for every kind. Cosine is 1 when either vector is zero.
inline double similarity(const ParamVec& u, const ParamVec& v, SimilarityKind kind) {
  FEDQS_REQUIRE(u.size() == v.size(), "similarity: length mismatch ", u.size(), " vs ", v.size());
  switch (kind) {
    case SimilarityKind::Cosine: {
      const double nu = norm2(u), nv = norm2(v);
      if (nu == 0.0 || nv == 0.0) return 1.0;
      return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
    }
    case SimilarityKind::Euclidean: {
      double s = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) s += (u[i] - v[i]) * (u[i] - v[i]);
      return 1.0 / (1.0 + std::sqrt(s));
    }
    case SimilarityKind::Manhattan: {
      double s = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) s += std::abs(u[i] - v[i]);
      return 1.0 / (1.0 + s);
    }
  }
  return 1.0;
}

/// s_i: the client's displacement from its base global against the last
/// global move.
inline double local_similarity(const ClientRuntime& rt, const ParamVec& params_end, SimilarityKind kind) {
  FEDQS_REQUIRE(rt.global_now.has_value(), "local_similarity: client ", rt.id, " has no global model");
  if (!rt.global_prev) return 1.0;
  return similarity(params_end - *rt.global_now, pseudo_global_gradient(*rt.global_now, rt.global_prev), kind);
}

// ---------------------------------------------------------------------------
// Local training adaptation

/// fast iff f_i > f_bar; unbiased iff s_i >= s_bar.
inline Quadrant classify(double f_i, double f_bar, double s_i, double s_bar) {
  const bool fast = f_i > f_bar;
  const bool unbiased = s_i >= s_bar;
  if (fast) return unbiased ? Quadrant::FUC : Quadrant::FBC;
  return unbiased ? Quadrant::SUC : Quadrant::SBC;
}

/// max - min per-class recall over the classes present in `val`.
inline double validation_spread(const ModelSpec& spec, const ParamVec& params, const LabeledDataset& val) {
  FEDQS_REQUIRE(!val.empty(), "validation_spread: empty validation set");
  const auto pred = predict(spec, params, val);
  std::map<int, std::pair<std::size_t, std::size_t>> hits;  // label -> (correct, total)
  for (std::size_t i = 0; i < val.size(); ++i) {
    auto& h = hits[val.labels[i]];
    h.second += 1;
    if (pred[i] == val.labels[i]) h.first += 1;
  }
  double lo = 1.0, hi = 0.0;
  for (const auto& [label, h] : hits) {
    const double recall = static_cast<double>(h.first) / static_cast<double>(h.second);
    lo = std::min(lo, recall);
    hi = std::max(hi, recall);
  }
  return hi - lo;
}

/// 1/G = s_i / s_bar with the zero cases pinned: both zero gives 1, a zero
/// s_bar gives +-inf by the sign of s_i.
inline double inverse_similarity_ratio(double s_i, double s_bar) {
  if (s_bar == 0.0) {
    if (s_i == 0.0) return 1.0;
    return s_i > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  }
  return s_i / s_bar;
}

inline double momentum_rate(double s_i, double s_bar, const ClientHyper& h) {
  const double inv_g = inverse_similarity_ratio(s_i, s_bar);
  const double term = (h.k == 0.0) ? 0.0 : h.k * (inv_g - 1.0);
  return std::clamp(h.m0 + term, 0.0, h.theta_cap);
}

/// Quadrant-driven update of learning rate, momentum and feedback flag.
/// `spread` is only evaluated for straggling-and-biased clients.
inline AdaptState adapt(const AdaptState& prev, const BroadcastInfo& info, double s_i, const ClientHyper& h,
                        const std::function<double()>& spread) {
  FEDQS_REQUIRE(info.f_i > 0.0, "adapt: f_i must be positive, got ", info.f_i);
  FEDQS_REQUIRE(h.a >= 0.0 && h.m0 >= 0.0 && h.k >= 0.0, "adapt: a, m0, k must be nonnegative");
  AdaptState next = prev;
  const Quadrant q = classify(info.f_i, info.f_bar, s_i, info.s_bar);
  next.quadrant = q;
  const double F = info.f_bar / info.f_i;
  const auto clamp_eta = [&](double eta) { return std::clamp(eta, h.eta_min, h.eta_max); };
  const auto use_momentum = [&] {
    next.momentum = momentum_rate(s_i, info.s_bar, h);
    next.momentum_enabled = h.momentum_allowed;
    next.feedback = false;
  };
  const auto use_feedback = [&] {
    next.feedback = h.feedback_enabled;
    next.momentum_enabled = false;
  };

  switch (q) {
    case Quadrant::FBC:
      next.eta = clamp_eta(prev.eta);
      use_feedback();
      break;
    case Quadrant::FUC:
      next.eta = clamp_eta(prev.eta - h.a * F);
      use_momentum();
      break;
    case Quadrant::SUC:
      next.eta = clamp_eta(prev.eta + h.a * F);
      use_momentum();
      break;
    case Quadrant::SBC:
      next.eta = clamp_eta(prev.eta + h.a * F);
      if (spread() <= h.spread_threshold) {
        use_momentum();  // situation 1: staleness
      } else {
        use_feedback();  // situation 2: skewed local data
      }
      break;
  }
  return next;
}

/// Runtime-level wrapper: evaluates the validation spread of the client's
/// current global model lazily.
inline void adapt(ClientRuntime& rt, const BroadcastInfo& info, const ModelSpec& spec, const ClientHyper& h) {
  const auto spread = [&] {
    if (rt.val_set.empty()) return 0.0;
    return validation_spread(spec, info.global_params, rt.val_set);
  };
  rt.state = adapt(rt.state, info, rt.last_similarity, h, spread);
}

struct TrainResult {
  ParamVec params_end;
  ParamVec accumulated;  // sum of the per-epoch steps
};

/// E full-batch epochs of momentum descent on an arbitrary objective:
///   step_e = g_e + sum_{r=1}^{e-1} m^r g_{e-r},  w_e = w_0 - eta * sum_{j<=e} step_j.
/// `carry` (optional) holds gradients from the previous call; when given, the
/// momentum sum extends into it and it is replaced by this call's gradients.
template <class GradFn>
TrainResult momentum_descent(GradFn&& grad, const ParamVec& start, double eta, double m, int E, double G_c,
                             bool momentum_enabled, std::vector<ParamVec>* carry = nullptr) {
  FEDQS_REQUIRE(E >= 1, "local_train: E must be >= 1, got ", E);
  FEDQS_REQUIRE(eta > 0.0, "local_train: eta must be positive, got ", eta);
  FEDQS_REQUIRE(m >= 0.0 && m < 1.0, "local_train: momentum must be in [0,1), got ", m);
  const bool use_momentum = momentum_enabled && m != 0.0;

  std::vector<ParamVec> grads;
  if (use_momentum && carry != nullptr) grads = *carry;
  const std::size_t carried = grads.size();

  TrainResult out{start, ParamVec(start.size())};
  for (int e = 1; e <= E; ++e) {
    ParamVec step = clip_gradient(grad(out.params_end), G_c);
    FEDQS_REQUIRE(step.size() == start.size(), "local_train: gradient has wrong length");
    grads.push_back(step);
    if (use_momentum) {
      double mr = 1.0;
      const std::size_t cur = grads.size() - 1;
      for (std::size_t r = 1; r <= cur; ++r) {
        mr *= m;
        step.axpy(mr, grads[cur - r]);
      }
    }
    out.accumulated += step;
    // Recomputed from the start point so params_end == start - eta * accumulated bit for bit.
    out.params_end = start;
    out.params_end.axpy(-eta, out.accumulated);
  }
  if (carry != nullptr) {
    if (use_momentum) {
      carry->assign(grads.begin() + static_cast<std::ptrdiff_t>(carried), grads.end());
    } else {
      carry->clear();
    }
  }
  return out;
}

inline TrainResult local_train(const ModelSpec& spec, const ParamVec& start, const LabeledDataset& data, double eta,
                               double m, int E, double G_c, bool momentum_enabled,
                               std::vector<ParamVec>* carry = nullptr) {
  FEDQS_REQUIRE(start.size() == spec.param_count(), "local_train: start has wrong length");
  return momentum_descent([&](const ParamVec& w) { return gradient(spec, w, data); }, start, eta, m, E, G_c,
                          momentum_enabled, carry);
}

inline LocalUpdate build_update(const ClientRuntime& rt, const TrainResult& trained, double s_i,
                                AggStrategy strategy) {
  LocalUpdate u;
  u.client_id = rt.id;
  u.base_round = rt.base_round;
  u.payload = strategy == AggStrategy::SGD ? Payload{PayloadKind::PseudoGrad, trained.accumulated}
                                           : Payload{PayloadKind::Params, trained.params_end};
  u.eta_used = rt.state.eta;
  u.similarity = s_i;
  u.feedback = rt.state.feedback;
  u.n_i = static_cast<std::int64_t>(rt.train_set.size());
  return u;
}

}  // namespace fedqs
