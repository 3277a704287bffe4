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

#include <algorithm>
#include <cmath>

#include "dsan/errors.hpp"
#include "dsan/ops.hpp"
#include "dsan/selfcheck.hpp"

using namespace dsan;

namespace {

Path path_of(std::vector<std::size_t> steps) { return Path{std::move(steps)}; }
Label label_of(std::vector<std::size_t> symbols) { return Label{std::move(symbols)}; }

ProbSequence probs_of(std::size_t t, std::size_t a, std::vector<double> values) {
  return ProbSequence{Tensor({t, a}, std::move(values))};
}

}  // namespace

TEST_CASE("alphabet reserves blank at zero and folds case") {
  Alphabet full = Alphabet::full();
  CHECK(full.classes() == 37);
  Alphabet a("abC1");
  CHECK(a.classes() == 5);
  CHECK(a.index_of('a') == 1);
  CHECK(a.index_of('C') == 3);
  CHECK(a.index_of('c') == 3);
  CHECK(a.decode(a.encode("Ab1")) == "ab1");
  CHECK_THROWS_AS(Alphabet("aa"), DataError);
  CHECK_THROWS_WITH_AS(a.encode("ax"), doctest::Contains("'x'"), DataError);
}

TEST_CASE("collapse merges runs then drops blanks") {
  CHECK(collapse(path_of({0, 1, 1, 0, 2})) == label_of({1, 2}));
  CHECK(collapse(path_of({1, 0, 1})) == label_of({1, 1}));
  CHECK(collapse(path_of({0, 0, 0, 0})).empty());
  CHECK(collapse(path_of({})).empty());
}

TEST_CASE("collapse is the identity on blank-free, repeat-free paths") {
  Rng rng(2);
  std::uniform_int_distribution<std::size_t> sym(1, 4);
  for (int trial = 0; trial < 100; ++trial) {
    Path p;
    for (int i = 0; i < 6; ++i) {
      std::size_t s = sym(rng);
      if (!p.steps.empty() && s == p.steps.back()) s = s % 4 + 1;
      p.steps.push_back(s);
    }
    CHECK(collapse(p).symbols == p.steps);
  }
}

TEST_CASE("minimum frames account for adjacent repeats") {
  CHECK(min_frames(label_of({})) == 0);
  CHECK(min_frames(label_of({1, 2, 3})) == 3);
  CHECK(min_frames(label_of({1, 1, 2, 2})) == 6);
  CHECK(is_feasible(label_of({1, 1}), 3));
  CHECK_FALSE(is_feasible(label_of({1, 1}), 2));
}

TEST_CASE("ctc single admissible path at T=1") {
  const auto r = ctc_loss(probs_of(1, 2, {0.3, 0.7}), label_of({1}));
  CHECK(r.loss == doctest::Approx(-std::log(0.7)).epsilon(1e-12));
  CHECK(r.loss == doctest::Approx(0.356675).epsilon(1e-6));
}

TEST_CASE("ctc over uniform T=2 counts three admissible paths") {
  const auto r = ctc_loss(probs_of(2, 2, {0.5, 0.5, 0.5, 0.5}), label_of({1}));
  CHECK(r.loss == doctest::Approx(0.287682).epsilon(1e-6));
}

TEST_CASE("ctc of the empty label is the all-blank path") {
  const auto r = ctc_loss(probs_of(2, 2, {0.6, 0.4, 0.9, 0.1}), label_of({}));
  CHECK(r.loss == doctest::Approx(-std::log(0.54)).epsilon(1e-12));
}

TEST_CASE("ctc rejects infeasible labels explicitly") {
  const ProbSequence p = probs_of(2, 2, {0.5, 0.5, 0.5, 0.5});
  CHECK_THROWS_AS(ctc_loss(p, label_of({1, 1})), InfeasibleLabelError);
  CHECK_THROWS_AS(ctc_loss(p, label_of({1, 1, 1})), InfeasibleLabelError);
  Tensor logp({2, 2}, std::log(0.5));
  CHECK_THROWS_AS(ctc_loss_op(logp, label_of({1, 1})), InfeasibleLabelError);
}

TEST_CASE("ctc validates its inputs") {
  CHECK_THROWS_AS(ctc_loss(probs_of(1, 2, {0.3, 0.3}), label_of({1})), ContractError);
  CHECK_THROWS_AS(ctc_loss(probs_of(1, 2, {0.3, 0.7}), label_of({0})), ContractError);
  CHECK_THROWS_AS(ctc_loss(probs_of(1, 2, {0.3, 0.7}), label_of({2})), ContractError);
}

TEST_CASE("forward-backward equals path enumeration on every small case") {
  const auto r = check::ctc_oracle_check(5, 10, 3, 99);
  INFO(r.detail);
  CHECK(r.max_error <= 1e-10);
}

TEST_CASE("label probabilities partition the path space") {
  const auto r = check::ctc_conservation_check(4, 3, 10, 98);
  CHECK(r.max_error <= 1e-9);
}

TEST_CASE("analytic probability gradient matches the enumeration oracle") {
  Rng rng(17);
  const ProbSequence p = check::random_prob_sequence(4, 3, rng);
  const Label l = label_of({1, 2});
  const auto r = ctc_loss(p, l);
  constexpr double h = 1e-7;
  for (std::size_t i = 0; i < p.probs.numel(); ++i) {
    ProbSequence plus{p.probs.clone()}, minus{p.probs.clone()};
    plus.probs.data()[i] += h;
    minus.probs.data()[i] -= h;
    // Perturbation of single unnormalized entries: enumeration needs no
    // normalization, so compare against it directly.
    const double numeric = (check::brute_force_ctc_loss(plus, l) - check::brute_force_ctc_loss(minus, l)) / (2 * h);
    CHECK(r.grad[i] == doctest::Approx(numeric).epsilon(1e-6));
  }
}

TEST_CASE("ctc gradient through softmax matches central differences") {
  const auto r = check::ctc_gradient_check(5, false, 5);
  CHECK(r.max_error <= 1e-6);
}

TEST_CASE("injected sign error is caught by the gradient check") {
  const auto r = check::ctc_gradient_check(5, true, 1);
  CHECK_FALSE(r.passed);
}

TEST_CASE("scaling up any entry of an unnormalized sequence never increases the loss") {
  Rng rng(21);
  const Label l = label_of({1, 2});
  std::uniform_int_distribution<std::size_t> pick(0, 14);
  for (int trial = 0; trial < 100; ++trial) {
    ProbSequence p = check::random_prob_sequence(5, 3, rng);
    std::vector<double> logp(p.probs.data().begin(), p.probs.data().end());
    for (double& v : logp) v = std::log(v);
    const double before = ctc_from_log_probs(logp, 5, 3, l).loss;
    logp[pick(rng)] += std::log(1.5);
    CHECK(ctc_from_log_probs(logp, 5, 3, l).loss <= before + 1e-12);
  }
}

TEST_CASE("moving row mass toward the steepest admissible entry never increases the loss") {
  // Label probability is linear in each row; the most negative gradient
  // entry carries the largest path coefficient.
  Rng rng(22);
  const Label l = label_of({1, 2});
  std::uniform_int_distribution<std::size_t> pick_row(0, 4);
  for (int trial = 0; trial < 100; ++trial) {
    ProbSequence p = check::random_prob_sequence(5, 3, rng);
    const auto r = ctc_loss(p, l);
    const std::size_t t = pick_row(rng);
    const auto g = std::span<const double>(r.grad).subspan(t * 3, 3);
    const std::size_t k = static_cast<std::size_t>(std::min_element(g.begin(), g.end()) - g.begin());
    auto row = p.probs.data().subspan(t * 3, 3);
    row[k] += 0.3;
    for (double& v : row) v /= 1.3;
    CHECK(ctc_loss(p, l).loss <= r.loss + 1e-12);
  }
}

TEST_CASE("greedy decoding collapses the per-row argmax") {
  // Rows with argmaxes a, a, blank, b, b over {blank, a, b}.
  const ProbSequence p = probs_of(5, 3, {0.1, 0.8, 0.1, 0.2, 0.7, 0.1, 0.9, 0.05, 0.05, 0.1, 0.1, 0.8, 0.2, 0.2, 0.6});
  CHECK(greedy_decode(p) == label_of({1, 2}));
  const ProbSequence blanks = probs_of(2, 3, {0.9, 0.05, 0.05, 0.5, 0.25, 0.25});
  CHECK(greedy_decode(blanks).empty());
}

TEST_CASE("argmax ties go to the lowest class index") {
  const ProbSequence p = probs_of(2, 3, {0.4, 0.4, 0.2, 0.2, 0.4, 0.4});
  CHECK(argmax_rows(p).steps == std::vector<std::size_t>{0, 1});
}

TEST_CASE("greedy decode equals collapse of the argmax path on random inputs") {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const ProbSequence p = check::random_prob_sequence(7, 4, rng);
    CHECK(greedy_decode(p) == collapse(argmax_rows(p)));
  }
}
