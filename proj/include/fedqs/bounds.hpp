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

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fedqs/error.hpp"

namespace fedqs::bounds {

enum class Theorem { SGD, Avg };

/// Inputs of the convergence bounds. `beta` is the largest learning rate,
/// `theta` the largest momentum rate, `Q_t` the number of clients running
/// momentum updates in a round, `init_gap` the initial squared distance to
/// the optimum. p and q bound the aggregation weights (model aggregation).
struct BoundParams {
  double L = 1.0;
  double delta = 0.0;
  double G_c = 20.0;
  int E = 2;
  double theta = 0.9;
  int K = 10;
  int N = 100;
  double beta = 0.1;
  double p = 1.0;
  double q = 0.0;
  int Q_t = 0;
  double init_gap = 1.0;

  void validate() const {
    FEDQS_REQUIRE(L > 0.0, "BoundParams: L must be positive");
    FEDQS_REQUIRE(delta >= 0.0, "BoundParams: delta must be nonnegative");
    FEDQS_REQUIRE(G_c > 0.0, "BoundParams: G_c must be positive");
    FEDQS_REQUIRE(E >= 1, "BoundParams: E must be >= 1");
    FEDQS_REQUIRE(theta >= 0.0 && theta < 1.0, "BoundParams: theta must be in [0,1)");
    FEDQS_REQUIRE(K >= 1 && N >= K, "BoundParams: need 1 <= K <= N");
    FEDQS_REQUIRE(beta > 0.0, "BoundParams: beta must be positive");
    FEDQS_REQUIRE(q >= 0.0 && q <= p && p <= 1.0, "BoundParams: need 0 <= q <= p <= 1");
    FEDQS_REQUIRE(Q_t >= 0, "BoundParams: Q_t must be nonnegative");
    FEDQS_REQUIRE(init_gap >= 0.0, "BoundParams: init_gap must be nonnegative");
  }
};

/// R = (E*theta - E*theta^2 - theta^2 + theta^(E+2)) / (1 - theta)^2
inline double momentum_factor_R(double theta, int E) {
  FEDQS_REQUIRE(theta >= 0.0 && theta < 1.0, "momentum_factor_R: theta must be in [0,1), got ", theta);
  FEDQS_REQUIRE(E >= 1, "momentum_factor_R: E must be >= 1");
  const double e = static_cast<double>(E);
  const double num = e * theta - e * theta * theta - theta * theta + std::pow(theta, E + 2);
  const double den = (1.0 - theta) * (1.0 - theta);
  return std::max(0.0, num / den);
}

/// Contraction rate V as a function of beta.
inline double rate_V(Theorem th, double beta, int K, double R, int E) {
  const double b2 = beta * beta;
  const double e2 = static_cast<double>(E) * E;
  return th == Theorem::SGD ? 3.0 - 2.0 * b2 * K * R / (b2 + 1.0) : 3.0 - 2.0 * b2 * (R + e2) / (b2 + 1.0);
}

struct BetaRange {
  double lo = std::numeric_limits<double>::quiet_NaN();
  double hi = std::numeric_limits<double>::quiet_NaN();
  bool empty = true;
  // Whether V(midpoint) actually lands in (0,1); false flags a range that
  // disagrees with its own rate formula.
  bool consistent = false;
};

/// The admissible learning-rate interval stated with each theorem.
///   SGD: sqrt(1/(RK-1)) < beta < sqrt(3/(2RK-3))
///   Avg: sqrt(1/(KR+E^2-1)) < beta < sqrt(3/(2RK+2E^2-3))
inline BetaRange beta_range(int K, double R, int E, Theorem th) {
  const double rk = R * K;
  const double e2 = static_cast<double>(E) * E;
  const double lo_den = th == Theorem::SGD ? rk - 1.0 : rk + e2 - 1.0;
  const double hi_den = th == Theorem::SGD ? 2.0 * rk - 3.0 : 2.0 * rk + 2.0 * e2 - 3.0;
  BetaRange out;
  if (!(lo_den > 0.0) || !(hi_den > 0.0)) return out;
  out.lo = std::sqrt(1.0 / lo_den);
  out.hi = std::sqrt(3.0 / hi_den);
  out.empty = !(out.lo < out.hi);
  if (!out.empty) {
    const double v = rate_V(th, 0.5 * (out.lo + out.hi), K, R, E);
    out.consistent = v > 0.0 && v < 1.0;
  }
  return out;
}

struct BoundFlags {
  bool v_in_unit = false;       // 0 < V < 1
  bool beta_in_range = false;   // beta inside the theorem's stated interval
  bool range_consistent = false;
  bool denominator_ok = false;  // the U/W denominator is nonzero and finite
  bool denominator_negative = false;

  std::string to_string() const {
    std::string s;
    auto add = [&](bool cond, const char* name) {
      if (!cond) return;
      if (!s.empty()) s += '|';
      s += name;
    };
    add(!v_in_unit, "V_out_of_unit");
    add(!beta_in_range, "beta_outside_range");
    add(!range_consistent, "range_inconsistent");
    add(!denominator_ok, "zero_denominator");
    add(denominator_negative, "negative_denominator");
    return s.empty() ? "ok" : s;
  }
};

struct BoundResult {
  double R = 0.0;
  double V = 0.0;
  double U = 0.0;
  double W = 0.0;     // upper bound on the gradient-variation term
  double lead = 0.0;  // coefficient of V^t * init_gap
  BetaRange range;
  BoundFlags flags;
};

namespace detail {

inline void finish_flags(BoundResult& r, double beta, double den) {
  r.flags.v_in_unit = r.V > 0.0 && r.V < 1.0;
  r.flags.beta_in_range = !r.range.empty && beta > r.range.lo && beta < r.range.hi;
  r.flags.range_consistent = r.range.consistent;
  r.flags.denominator_ok = den != 0.0 && std::isfinite(den);
  r.flags.denominator_negative = den < 0.0;
}

}  // namespace detail

/// Gradient-aggregation constants:
///   V = 3 - 2 b^2 K R / (b^2 + 1)
///   U = [2 L b^2 + 6 b^2 (b^2 L + L) / D] E^2 delta^2
///   W <= [4 L E^2 + 4 L R Q + (b^2 L + L)(2 R Q + 3 E^2) / D] b^2 G_c^2
/// with D = 2 b^2 R - 2 b^2 - 2 and lead coefficient L.
inline BoundResult V_U_W_sgd(const BoundParams& bp) {
  bp.validate();
  BoundResult r;
  r.R = momentum_factor_R(bp.theta, bp.E);
  const double b2 = bp.beta * bp.beta;
  const double L = bp.L, R = r.R, Q = bp.Q_t;
  const double E2 = static_cast<double>(bp.E) * bp.E;
  const double den = 2.0 * b2 * R - 2.0 * b2 - 2.0;
  r.V = rate_V(Theorem::SGD, bp.beta, bp.K, R, bp.E);
  r.U = (2.0 * L * b2 + 6.0 * b2 * (b2 * L + L) / den) * E2 * bp.delta * bp.delta;
  r.W = (4.0 * L * E2 + 4.0 * L * R * Q + (b2 * L + L) * (2.0 * R * Q + 3.0 * E2) / den) * b2 * bp.G_c * bp.G_c;
  r.lead = L;
  r.range = beta_range(bp.K, R, bp.E, Theorem::SGD);
  detail::finish_flags(r, bp.beta, den);
  return r;
}

/// Model-aggregation constants:
///   V = 3 - 2 b^2 (R + E^2) / (b^2 + 1)
///   U = [3 p^2 K L + 8 (3 p K^2 + 1)(b^2 L + L) / D'] b^2 E^2 delta^2
///   W <= [p^2 K L (2 E^2 + 3 R Q) + (3 p^2 K + 1)(b^2 L + L)(E^2 + R Q) / D'] b^2 G_c^2
/// with D' = 2 b^2 (R + E^2) - 2 b^2 - 2 and lead coefficient 3 L p K^2 + L.
inline BoundResult V_U_W_avg(const BoundParams& bp) {
  bp.validate();
  BoundResult r;
  r.R = momentum_factor_R(bp.theta, bp.E);
  const double b2 = bp.beta * bp.beta;
  const double L = bp.L, R = r.R, Q = bp.Q_t, p = bp.p;
  const double K = bp.K;
  const double E2 = static_cast<double>(bp.E) * bp.E;
  const double den = 2.0 * b2 * (R + E2) - 2.0 * b2 - 2.0;
  r.V = rate_V(Theorem::Avg, bp.beta, bp.K, R, bp.E);
  r.U = (3.0 * p * p * K * L + 8.0 * (3.0 * p * K * K + 1.0) * (b2 * L + L) / den) * b2 * E2 * bp.delta * bp.delta;
  r.W = (p * p * K * L * (2.0 * E2 + 3.0 * R * Q) + (3.0 * p * p * K + 1.0) * (b2 * L + L) * (E2 + R * Q) / den) *
        b2 * bp.G_c * bp.G_c;
  r.lead = 3.0 * L * p * K * K + L;
  r.range = beta_range(bp.K, R, bp.E, Theorem::Avg);
  detail::finish_flags(r, bp.beta, den);
  return r;
}

inline BoundResult evaluate(const BoundParams& bp, Theorem th) {
  return th == Theorem::SGD ? V_U_W_sgd(bp) : V_U_W_avg(bp);
}

/// b(t) = lead * V^t * init_gap + U + W for t = 0..t_max.
inline std::vector<double> bound_curve(const BoundParams& bp, int t_max, Theorem th) {
  FEDQS_REQUIRE(t_max >= 0, "bound_curve: t_max must be nonnegative");
  const BoundResult r = evaluate(bp, th);
  const double floor = r.U + r.W;
  const double scale = r.lead * bp.init_gap;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(t_max) + 1);
  double vt = 1.0;
  for (int t = 0; t <= t_max; ++t) {
    out.push_back(scale * vt + floor);
    vt *= r.V;
  }
  return out;
}

}  // namespace fedqs::bounds
