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
#include <random>
#include <span>
#include <vector>

#include "fedqs/error.hpp"
#include "fedqs/param_vec.hpp"

namespace fedqs {

enum class ModelKind { LogReg, MLP };

// Parameter layout, fixed so that vector arithmetic across clients lines up:
//   LogReg: W[c][d] row-major, then b[c]
//   MLP:    W1[h][d], b1[h], W2[c][h], b2[c]   (tanh hidden layer)
struct ModelSpec {
  ModelKind kind = ModelKind::LogReg;
  int input_dim = 1;
  int hidden_dim = 0;
  int num_classes = 2;

  static ModelSpec logreg(int input_dim, int num_classes) {
    return {ModelKind::LogReg, input_dim, 0, num_classes};
  }
  static ModelSpec mlp(int input_dim, int hidden_dim, int num_classes) {
    return {ModelKind::MLP, input_dim, hidden_dim, num_classes};
  }

  void validate() const {
    FEDQS_REQUIRE(input_dim >= 1, "ModelSpec: input_dim must be positive");
    FEDQS_REQUIRE(num_classes >= 2, "ModelSpec: num_classes must be >= 2");
    FEDQS_REQUIRE(kind != ModelKind::MLP || hidden_dim >= 1, "ModelSpec: MLP needs hidden_dim >= 1");
  }

  std::size_t param_count() const {
    const auto d = static_cast<std::size_t>(input_dim);
    const auto c = static_cast<std::size_t>(num_classes);
    if (kind == ModelKind::LogReg) return c * d + c;
    const auto h = static_cast<std::size_t>(hidden_dim);
    return h * d + h + c * h + c;
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Row-major feature matrix with one integer label per row.
struct LabeledDataset {
  std::size_t dim = 0;
  std::vector<double> features;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(features).subspan(i * dim, dim);
  }

  void push_back(std::span<const double> x, int y) {
    FEDQS_REQUIRE(x.size() == dim, "LabeledDataset: row width ", x.size(), " != dim ", dim);
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(y);
  }

  LabeledDataset subset(std::span<const std::size_t> indices) const {
    LabeledDataset out;
    out.dim = dim;
    out.features.reserve(indices.size() * dim);
    out.labels.reserve(indices.size());
    for (std::size_t idx : indices) {
      FEDQS_REQUIRE(idx < size(), "subset index ", idx, " out of range ", size());
      out.push_back(row(idx), labels[idx]);
    }
    return out;
  }

  void validate() const {
    FEDQS_REQUIRE(features.size() == labels.size() * dim, "LabeledDataset: feature/label count mismatch");
  }

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

namespace detail {

inline void check_inputs(const ModelSpec& spec, const ParamVec& params, const LabeledDataset& data) {
  spec.validate();
  FEDQS_REQUIRE(params.size() == spec.param_count(), "parameter length ", params.size(),
                " does not match model (", spec.param_count(), ")");
  FEDQS_REQUIRE(!data.empty(), "dataset is empty");
  FEDQS_REQUIRE(data.dim == static_cast<std::size_t>(spec.input_dim), "dataset dim ", data.dim,
                " does not match model input_dim ", spec.input_dim);
  data.validate();
  for (int y : data.labels) {
    FEDQS_REQUIRE(y >= 0 && y < spec.num_classes, "label ", y, " outside [0, ", spec.num_classes, ")");
  }
}

// out[r] = bias[r] + sum_j W[r][j] * x[j]
inline void affine(std::span<const double> W, std::span<const double> bias, std::span<const double> x,
                   std::span<double> out) {
  const std::size_t cols = x.size();
  for (std::size_t r = 0; r < out.size(); ++r) {
    double s = bias[r];
    const double* w = W.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) s += w[j] * x[j];
    out[r] = s;
  }
}

// Converts logits to probabilities in place; returns log-sum-exp.
inline double softmax_inplace(std::span<double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return mx + std::log(sum);
}

// Per-sample forward pass. Fills `hidden` (MLP only) and `logits`.
inline void forward_one(const ModelSpec& spec, const ParamVec& params, std::span<const double> x,
                        std::vector<double>& hidden, std::vector<double>& logits) {
  const auto d = static_cast<std::size_t>(spec.input_dim);
  const auto c = static_cast<std::size_t>(spec.num_classes);
  auto p = params.span();
  logits.assign(c, 0.0);
  if (spec.kind == ModelKind::LogReg) {
    affine(p.subspan(0, c * d), p.subspan(c * d, c), x, logits);
    return;
  }
  const auto h = static_cast<std::size_t>(spec.hidden_dim);
  hidden.assign(h, 0.0);
  affine(p.subspan(0, h * d), p.subspan(h * d, h), x, hidden);
  for (double& v : hidden) v = std::tanh(v);
  const std::size_t off = h * d + h;
  affine(p.subspan(off, c * h), p.subspan(off + c * h, c), hidden, logits);
}

inline int argmax(std::span<const double> z) {
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

}  // namespace detail

/// Mean cross-entropy and argmax accuracy over `data`.
inline EvalResult forward_eval(const ModelSpec& spec, const ParamVec& params, const LabeledDataset& data) {
  detail::check_inputs(spec, params, data);
  std::vector<double> hidden, logits;
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    detail::forward_one(spec, params, data.row(i), hidden, logits);
    const int y = data.labels[i];
    if (detail::argmax(logits) == y) ++correct;
    const double zy = logits[static_cast<std::size_t>(y)];
    const double lse = detail::softmax_inplace(logits);
    loss += lse - zy;
  }
  const double n = static_cast<double>(data.size());
  return {loss / n, static_cast<double>(correct) / n};
}

inline std::vector<int> predict(const ModelSpec& spec, const ParamVec& params, const LabeledDataset& data) {
  detail::check_inputs(spec, params, data);
  std::vector<double> hidden, logits;
  std::vector<int> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    detail::forward_one(spec, params, data.row(i), hidden, logits);
    out[i] = detail::argmax(logits);
  }
  return out;
}

/// Analytic gradient of the mean cross-entropy, in the same layout as params.
inline ParamVec gradient(const ModelSpec& spec, const ParamVec& params, const LabeledDataset& data) {
  detail::check_inputs(spec, params, data);
  const auto d = static_cast<std::size_t>(spec.input_dim);
  const auto c = static_cast<std::size_t>(spec.num_classes);
  const auto h = static_cast<std::size_t>(spec.hidden_dim);
  ParamVec grad(params.size());
  std::vector<double> hidden, logits, dhidden;
  auto p = params.span();
  auto g = grad.span();

  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x = data.row(i);
    detail::forward_one(spec, params, x, hidden, logits);
    detail::softmax_inplace(logits);
    logits[static_cast<std::size_t>(data.labels[i])] -= 1.0;  // dL/dz = softmax - onehot
    const auto& dz = logits;

    if (spec.kind == ModelKind::LogReg) {
      for (std::size_t r = 0; r < c; ++r) {
        double* gw = g.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) gw[j] += dz[r] * x[j];
        g[c * d + r] += dz[r];
      }
      continue;
    }

    const std::size_t off = h * d + h;
    dhidden.assign(h, 0.0);
    for (std::size_t r = 0; r < c; ++r) {
      double* gw = g.data() + off + r * h;
      const double* w2 = p.data() + off + r * h;
      for (std::size_t j = 0; j < h; ++j) {
        gw[j] += dz[r] * hidden[j];
        dhidden[j] += w2[j] * dz[r];
      }
      g[off + c * h + r] += dz[r];
    }
    for (std::size_t j = 0; j < h; ++j) {
      const double da = dhidden[j] * (1.0 - hidden[j] * hidden[j]);
      double* gw = g.data() + j * d;
      for (std::size_t k = 0; k < d; ++k) gw[k] += da * x[k];
      g[h * d + j] += da;
    }
  }
  grad *= 1.0 / static_cast<double>(data.size());
  return grad;
}

/// Rescales g onto the L2 ball of radius `bound` when it lies outside.
inline ParamVec clip_gradient(ParamVec g, double bound) {
  FEDQS_REQUIRE(bound > 0.0, "clip_gradient: bound must be positive, got ", bound);
  const double n = norm2(g);
  if (n <= bound) return g;
  // Rounding can leave the rescaled norm one ulp above the bound, which would
  // break idempotence; shrink the factor until the result is inside.
  double scale = bound / n;
  ParamVec out = g;
  for (;;) {
    out = g;
    out *= scale;
    if (norm2(out) <= bound) return out;
    scale = std::nextafter(scale, 0.0);
  }
}

/// Small uniform initialization in [-0.05, 0.05].
inline ParamVec init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  ParamVec p(spec.param_count());
  for (double& v : p) v = u(rng);
  return p;
}

}  // namespace fedqs
