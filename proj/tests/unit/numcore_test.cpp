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

#include <algorithm>
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "fedqs/numcore.hpp"
#include "oracles.hpp"

using namespace fedqs;

namespace {

LabeledDataset one_row(std::vector<double> x, int y) {
  LabeledDataset ds;
  ds.dim = x.size();
  ds.push_back(x, y);
  return ds;
}

double max_rel_err(const ParamVec& a, const std::vector<double>& n) {
  double worst = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    const double den = std::max({std::abs(a[i]), std::abs(n[i]), 1e-4});
    worst = std::max(worst, std::abs(a[i] - n[i]) / den);
  }
  return worst;
}

}  // namespace

TEST(ParamVec, ArithmeticAndLengthChecks) {
  ParamVec a{1.0, 2.0, 3.0};
  ParamVec b{0.5, -1.0, 2.0};
  EXPECT_EQ(a + b, (ParamVec{1.5, 1.0, 5.0}));
  EXPECT_EQ(a - b, (ParamVec{0.5, 3.0, 1.0}));
  EXPECT_EQ(2.0 * a, (ParamVec{2.0, 4.0, 6.0}));
  EXPECT_DOUBLE_EQ(dot(a, b), 0.5 - 2.0 + 6.0);
  EXPECT_DOUBLE_EQ(norm2(ParamVec{3.0, 4.0}), 5.0);
  a.axpy(2.0, b);
  EXPECT_EQ(a, (ParamVec{2.0, 0.0, 7.0}));
  EXPECT_THROW(a += ParamVec{1.0}, ContractViolation);
  EXPECT_THROW(dot(a, ParamVec{1.0}), ContractViolation);
  EXPECT_TRUE(a.all_finite());
  a[1] = std::nan("");
  EXPECT_FALSE(a.all_finite());
}

TEST(ModelSpec, ParamCount) {
  EXPECT_EQ(ModelSpec::logreg(3, 4).param_count(), 16u);
  EXPECT_EQ(ModelSpec::mlp(3, 5, 4).param_count(), 5u * 3 + 5 + 4 * 5 + 4);
  EXPECT_THROW(ModelSpec::logreg(3, 1).validate(), ContractViolation);
  EXPECT_THROW(ModelSpec::mlp(3, 0, 2).validate(), ContractViolation);
}

TEST(ForwardEval, ZeroLogRegIsUniform) {
  const auto spec = ModelSpec::logreg(1, 2);
  const auto r = forward_eval(spec, ParamVec(spec.param_count()), one_row({3.7}, 1));
  EXPECT_NEAR(r.loss, std::numbers::ln2, 1e-15);
  EXPECT_NEAR(r.loss, 0.693147, 1e-6);
}

TEST(ForwardEval, ZeroMlpGivesLogC) {
  for (int c : {2, 3, 7}) {
    const auto spec = ModelSpec::mlp(4, 6, c);
    const auto ds = oracle::random_dataset(4, c, 9, 11u + c);
    EXPECT_NEAR(forward_eval(spec, ParamVec(spec.param_count()), ds).loss, std::log(static_cast<double>(c)), 1e-14);
  }
}

TEST(ForwardEval, LogRegMatchesLongDoubleReference) {
  const auto spec = ModelSpec::logreg(2, 3);
  const auto ds = oracle::random_dataset(2, 3, 5, 2024);
  const auto p = oracle::random_params(spec.param_count(), 7, 1.0);
  const std::vector<oracle::Real> pl(p.begin(), p.end());
  EXPECT_NEAR(forward_eval(spec, p, ds).loss, static_cast<double>(oracle::loss(spec, pl, ds)), 1e-12);
}

TEST(ForwardEval, MlpMatchesLongDoubleReference) {
  const auto spec = ModelSpec::mlp(3, 4, 3);
  const auto ds = oracle::random_dataset(3, 3, 12, 99);
  const auto p = oracle::random_params(spec.param_count(), 5, 0.8);
  const std::vector<oracle::Real> pl(p.begin(), p.end());
  EXPECT_NEAR(forward_eval(spec, p, ds).loss, static_cast<double>(oracle::loss(spec, pl, ds)), 1e-12);
}

TEST(ForwardEval, AccuracyAndArgmaxTies) {
  // Zero parameters tie every logit; ties go to class 0.
  const auto spec = ModelSpec::logreg(2, 3);
  LabeledDataset ds;
  ds.dim = 2;
  ds.push_back(std::vector<double>{1.0, 2.0}, 0);
  ds.push_back(std::vector<double>{-1.0, 0.5}, 2);
  const auto r = forward_eval(spec, ParamVec(spec.param_count()), ds);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.5);
  EXPECT_EQ(predict(spec, ParamVec(spec.param_count()), ds), (std::vector<int>{0, 0}));
}

TEST(ForwardEval, StableForHugeLogits) {
  const auto spec = ModelSpec::logreg(1, 2);
  ParamVec p{1e4, -1e4, 0.0, 0.0};
  const auto r = forward_eval(spec, p, one_row({1.0}, 1));
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, 2e4, 1e-9);
}

TEST(ForwardEval, Contracts) {
  const auto spec = ModelSpec::logreg(2, 2);
  EXPECT_THROW(forward_eval(spec, ParamVec(5), one_row({1, 2}, 0)), ContractViolation);
  EXPECT_THROW(forward_eval(spec, ParamVec(6), LabeledDataset{2, {}, {}}), ContractViolation);
  EXPECT_THROW(forward_eval(spec, ParamVec(6), one_row({1, 2, 3}, 0)), ContractViolation);
  EXPECT_THROW(forward_eval(spec, ParamVec(6), one_row({1, 2}, 2)), ContractViolation);
}

TEST(Gradient, BinaryLogRegClosedForm) {
  const auto spec = ModelSpec::logreg(1, 2);
  const auto g = gradient(spec, ParamVec(spec.param_count()), one_row({1.0}, 1));
  // Layout W[0][0], W[1][0], b[0], b[1]; softmax(0,0) = (0.5, 0.5).
  EXPECT_DOUBLE_EQ(g[1], -0.5);
  EXPECT_DOUBLE_EQ(g[0], 0.5);
  EXPECT_DOUBLE_EQ(g[3], -0.5);
  EXPECT_DOUBLE_EQ(g[2], 0.5);
}

TEST(Gradient, ZeroFeaturesOnlyBiasesMove) {
  for (auto spec : {ModelSpec::logreg(3, 4), ModelSpec::mlp(3, 2, 4)}) {
    LabeledDataset ds;
    ds.dim = 3;
    for (int y : {0, 1, 1, 3}) ds.push_back(std::vector<double>{0, 0, 0}, y);
    const auto p = oracle::random_params(spec.param_count(), 3, 0.3);
    const auto g = gradient(spec, p, ds);
    if (spec.kind == ModelKind::LogReg) {
      for (int i = 0; i < 12; ++i) EXPECT_EQ(g[i], 0.0);
      // bias gradient = mean(softmax(b) - onehot)
      std::vector<double> z{p[12], p[13], p[14], p[15]};
      double mx = *std::max_element(z.begin(), z.end()), se = 0;
      for (double v : z) se += std::exp(v - mx);
      const double counts[4] = {1, 2, 0, 1};
      for (int k = 0; k < 4; ++k) {
        EXPECT_NEAR(g[12 + k], std::exp(z[k] - mx) / se - counts[k] / 4.0, 1e-15);
      }
    } else {
      for (int i = 0; i < 6; ++i) EXPECT_EQ(g[i], 0.0);  // first-layer weights
    }
  }
}

TEST(Gradient, LogRegMatchesFiniteDifferences) {
  const auto spec = ModelSpec::logreg(3, 4);
  const auto ds = oracle::random_dataset(3, 4, 8, 17);
  const auto p = oracle::random_params(spec.param_count(), 18);
  EXPECT_LT(max_rel_err(gradient(spec, p, ds), oracle::fd_gradient(spec, p, ds)), 1e-5);
}

TEST(Gradient, PropertySweepBothModels) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const int d = 1 + static_cast<int>(rng() % 5), c = 2 + static_cast<int>(rng() % 4), h = 1 + static_cast<int>(rng() % 6);
    for (auto spec : {ModelSpec::logreg(d, c), ModelSpec::mlp(d, h, c)}) {
      const auto ds = oracle::random_dataset(d, c, 1 + static_cast<int>(rng() % 10), seed * 31 + 1);
      const auto p = oracle::random_params(spec.param_count(), seed * 31 + 2);
      EXPECT_LT(max_rel_err(gradient(spec, p, ds), oracle::fd_gradient(spec, p, ds)), 1e-5)
          << "seed " << seed << " kind " << static_cast<int>(spec.kind);
    }
  }
}

TEST(Gradient, SmallStepDecreasesLoss) {
  for (auto spec : {ModelSpec::logreg(4, 3), ModelSpec::mlp(4, 5, 3)}) {
    const auto ds = oracle::random_dataset(4, 3, 30, 8);
    auto p = oracle::random_params(spec.param_count(), 9);
    const double before = forward_eval(spec, p, ds).loss;
    p.axpy(-1e-3, gradient(spec, p, ds));
    EXPECT_LT(forward_eval(spec, p, ds).loss, before);
  }
}

TEST(ClipGradient, Examples) {
  const ParamVec small{3.0, 4.0};
  EXPECT_EQ(clip_gradient(small, 20.0), small);
  const auto c = clip_gradient(ParamVec{30.0, 40.0}, 20.0);
  EXPECT_NEAR(c[0], 12.0, 1e-12);
  EXPECT_NEAR(c[1], 16.0, 1e-12);
  EXPECT_EQ(clip_gradient(ParamVec(3), 1.0), ParamVec(3));
  EXPECT_THROW(clip_gradient(small, 0.0), ContractViolation);
  EXPECT_THROW(clip_gradient(small, -1.0), ContractViolation);
}

TEST(ClipGradient, IdempotentAndBounded) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> b(0.01, 50.0);
  for (int t = 0; t < 500; ++t) {
    const auto g = oracle::random_params(1 + rng() % 40, rng(), 100.0);
    const double bound = b(rng);
    const auto once = clip_gradient(g, bound);
    EXPECT_LE(norm2(once), bound);
    EXPECT_EQ(clip_gradient(once, bound), once);
  }
}

TEST(InitParams, DeterministicAndSmall) {
  const auto spec = ModelSpec::mlp(5, 7, 3);
  const auto a = init_params(spec, 42), b = init_params(spec, 42), c = init_params(spec, 43);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_EQ(a.size(), spec.param_count());
  for (double v : a) {
    EXPECT_GE(v, -0.05);
    EXPECT_LE(v, 0.05);
  }
}
