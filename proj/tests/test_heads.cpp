// Copyright 2026 The DSAN Authors. All Rights Reserved.
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
// ==============================================================================

#include <doctest.h>

#include <cmath>

#include "dsan/errors.hpp"
#include "dsan/heads.hpp"
#include "dsan/selfcheck.hpp"

using namespace dsan;
using check::random_tensor;

namespace {

double row_sum(const ProbSequence& p, std::size_t t) {
  double s = 0;
  for (std::size_t k = 0; k < p.classes(); ++k) s += p.at(t, k);
  return s;
}

bool rows_equal(const ProbSequence& a, const ProbSequence& b, std::size_t t) {
  for (std::size_t k = 0; k < a.classes(); ++k) {
    if (a.at(t, k) != b.at(t, k)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("blstm output width is twice the hidden size") {
  CHECK(BlstmConfig{32}.output_dim() == 64);
  CHECK(BlstmConfig{256}.output_dim() == 512);
  Rng rng(1);
  ContextBranch head(6, BlstmConfig{5}, 4, rng);
  NoGradGuard no_grad;
  HiddenSequence h = head.encode(FeatureSequence{random_tensor({7, 6}, rng, -1, 1, false)});
  CHECK(h.h.shape() == Shape{7, 10});
}

TEST_CASE("both branches preserve length and normalize rows") {
  Rng rng(2);
  ContextBranch ctx(6, BlstmConfig{4}, 5, rng);
  SupervisionBranch sup(6, 5, rng);
  NoGradGuard no_grad;
  for (std::size_t t : {1, 3, 9}) {
    FeatureSequence seq{random_tensor({t, 6}, rng, -2, 2, false)};
    for (const ProbSequence& p : {ctx.forward(seq), sup.forward(seq)}) {
      CHECK(p.length() == t);
      CHECK(p.classes() == 5);
      for (std::size_t i = 0; i < t; ++i) CHECK(std::abs(row_sum(p, i) - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("branches reject undefined and malformed sequences") {
  Rng rng(3);
  ContextBranch ctx(6, BlstmConfig{4}, 5, rng);
  SupervisionBranch sup(6, 5, rng);
  CHECK_THROWS_AS(ctx.forward(FeatureSequence{}), ContractError);
  CHECK_THROWS_AS(sup.forward(FeatureSequence{}), ContractError);
  CHECK_THROWS_AS(ctx.forward(FeatureSequence{Tensor({6})}), ContractError);
  CHECK_THROWS(sup.forward(FeatureSequence{Tensor({3, 5})}));
}

TEST_CASE("context branch output at the last step depends on the first input") {
  Rng rng(4);
  ContextBranch ctx(6, BlstmConfig{4}, 5, rng);
  NoGradGuard no_grad;
  Tensor x = random_tensor({6, 6}, rng, -1, 1, false);
  ProbSequence a = ctx.forward(FeatureSequence{x});
  Tensor y = x.clone();
  y.data()[0] += 0.5;
  ProbSequence b = ctx.forward(FeatureSequence{y});
  CHECK_FALSE(rows_equal(a, b, 5));
  // And the first step depends on the last input through the backward direction.
  Tensor z = x.clone();
  z.data()[5 * 6 + 1] += 0.5;
  CHECK_FALSE(rows_equal(a, ctx.forward(FeatureSequence{z}), 0));
}

TEST_CASE("context branch Jacobian block between distinct steps is nonzero") {
  Rng rng(5);
  ContextBranch ctx(6, BlstmConfig{4}, 5, rng);
  Tensor x = random_tensor({5, 6}, rng);
  Tensor logits = ctx.logits(FeatureSequence{x});
  backward(ops::sum(ops::slice(logits, 0, 1, 2)));
  double norm = 0;
  for (std::size_t j = 0; j < 6; ++j) norm += std::abs(x.grad()[3 * 6 + j]);
  CHECK(norm > 0.0);
}

TEST_CASE("supervision branch rows depend only on their own input") {
  Rng rng(6);
  SupervisionBranch sup(6, 5, rng);
  NoGradGuard no_grad;
  Tensor x = random_tensor({5, 6}, rng, -1, 1, false);
  ProbSequence a = sup.forward(FeatureSequence{x});
  for (std::size_t t = 0; t < 5; ++t) {
    Tensor y = x.clone();
    y.data()[t * 6 + 2] += 0.75;
    ProbSequence b = sup.forward(FeatureSequence{y});
    for (std::size_t s = 0; s < 5; ++s) CHECK(rows_equal(a, b, s) == (s != t));
  }
}

TEST_CASE("identical inputs at different steps give identical supervision rows") {
  Rng rng(7);
  SupervisionBranch sup(6, 5, rng);
  NoGradGuard no_grad;
  Tensor x = random_tensor({4, 6}, rng, -1, 1, false);
  std::copy_n(x.data().begin(), 6, x.data().begin() + 3 * 6);
  ProbSequence p = sup.forward(FeatureSequence{x});
  for (std::size_t k = 0; k < 5; ++k) CHECK(p.at(0, k) == p.at(3, k));
}

TEST_CASE("supervision gradient from one row reaches only that input vector") {
  Rng rng(8);
  SupervisionBranch sup(6, 5, rng);
  Tensor x = random_tensor({5, 6}, rng);
  backward(ops::sum(ops::slice(sup.logits(FeatureSequence{x}), 0, 2, 3)));
  for (std::size_t t = 0; t < 5; ++t) {
    double norm = 0;
    for (std::size_t j = 0; j < 6; ++j) norm += std::abs(x.grad()[t * 6 + j]);
    CHECK((norm > 0.0) == (t == 2));
  }
}

TEST_CASE("lstm initialization: forget bias one, everything else within 0.08") {
  Rng rng(9);
  ContextBranch ctx(6, BlstmConfig{4}, 5, rng);
  StateList s;
  ctx.collect(s, "context");
  for (const auto& t : s) {
    if (t.name.ends_with(".bias") && t.name.find(".fc.") == std::string::npos) {
      for (std::size_t i = 0; i < 16; ++i) {
        const double v = t.tensor.data()[i];
        if (i >= 4 && i < 8) {
          CHECK(v == 1.0);
        } else {
          CHECK(std::abs(v) <= 0.08);
        }
      }
    } else if (t.name.ends_with(".w_input") || t.name.ends_with(".w_hidden")) {
      for (double v : t.tensor.data()) CHECK(std::abs(v) <= 0.08);
    }
  }
  CHECK(s.size() == 2 * 2 * 3 + 2);
}

TEST_CASE("second layer consumes the concatenated first-layer output") {
  Rng rng(10);
  ContextBranch ctx(6, BlstmConfig{4}, 5, rng);
  StateList s;
  ctx.collect(s, "context");
  for (const auto& t : s) {
    if (t.name == "context.layer0.fwd.w_input") CHECK(t.tensor.shape() == Shape{16, 6});
    if (t.name == "context.layer1.bwd.w_input") CHECK(t.tensor.shape() == Shape{16, 8});
    if (t.name == "context.fc.weight") CHECK(t.tensor.shape() == Shape{5, 8});
  }
}

TEST_CASE("both heads match central differences at toy size") {
  const auto ctx = check::context_head_gradient_check(21);
  INFO(ctx.detail);
  CHECK(ctx.max_error <= 1e-5);
  const auto sup = check::supervision_head_gradient_check(22);
  CHECK(sup.max_error <= 1e-6);
}
