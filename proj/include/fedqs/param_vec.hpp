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
#include <cstddef>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "fedqs/error.hpp"

namespace fedqs {

/// Flat parameter (or gradient) vector. Its length is fixed at construction;
/// arithmetic between vectors of different length is a contract violation.
class ParamVec {
 public:
  ParamVec() = default;
  explicit ParamVec(std::size_t n, double fill = 0.0) : values_(n, fill) {}
  explicit ParamVec(std::vector<double> values) : values_(std::move(values)) {}
  ParamVec(std::initializer_list<double> init) : values_(init) {}

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  std::span<double> span() noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  bool all_finite() const noexcept {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  // this += alpha * x
  ParamVec& axpy(double alpha, const ParamVec& x) {
    check_same(x);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += alpha * x.values_[i];
    return *this;
  }

  ParamVec& operator+=(const ParamVec& x) {
    check_same(x);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += x.values_[i];
    return *this;
  }

  ParamVec& operator-=(const ParamVec& x) {
    check_same(x);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= x.values_[i];
    return *this;
  }

  ParamVec& operator*=(double s) noexcept {
    for (double& v : values_) v *= s;
    return *this;
  }

  friend ParamVec operator+(ParamVec a, const ParamVec& b) { return a += b; }
  friend ParamVec operator-(ParamVec a, const ParamVec& b) { return a -= b; }
  friend ParamVec operator*(double s, ParamVec a) { return a *= s; }

  friend bool operator==(const ParamVec&, const ParamVec&) = default;

 private:
  void check_same(const ParamVec& x) const {
    FEDQS_REQUIRE(x.size() == size(), "ParamVec length mismatch: ", size(), " vs ", x.size());
  }

  std::vector<double> values_;
};

inline double dot(const ParamVec& a, const ParamVec& b) {
  FEDQS_REQUIRE(a.size() == b.size(), "dot: length mismatch ", a.size(), " vs ", b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const ParamVec& a) { return std::sqrt(dot(a, a)); }

}  // namespace fedqs
