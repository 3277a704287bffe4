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
#include <limits>
#include <map>

#include "dsan/datagen.hpp"
#include "dsan/errors.hpp"
#include "dsan/experiment.hpp"
#include "dsan/io.hpp"
#include "dsan/ops.hpp"
#include "dsan/selfcheck.hpp"
#include "dsan/training.hpp"

using namespace dsan;

namespace {

Dataset small_split(std::size_t n, std::uint64_t seed = 3) {
  GenConfig gc;
  gc.min_length = 3;
  gc.max_length = 5;
  return make_split(gc, n, 1, seed).train;
}

ModelConfig small_model(bool supervision = true, bool attention = true) {
  ModelConfig mc;
  mc.blstm.hidden_size = 8;
  mc.supervision = supervision;
  mc.attention = attention;
  return mc;
}

// Mean combined loss over the samples; backward is run on it.
void accumulate_gradients(DsanModel& model, const Dataset& data, double lambda) {
  std::vector<Tensor> images;
  std::vector<std::size_t> frames;
  for (const auto& s : data) {
    images.push_back(s.image);
    frames.push_back(s.image.dim(3) / 8);
  }
  auto out = model.forward(stack_padded(images, 1.0), frames, true);
  std::vector<Tensor> terms;
  for (std::size_t n = 0; n < data.size(); ++n) {
    Tensor chars = out.char_logits.empty() ? Tensor() : out.char_logits[n];
    terms.push_back(combined_loss(out.context_logits[n], chars, data[n].label, lambda).total);
  }
  backward(ops::scale(ops::add_n(terms), 1.0 / static_cast<double>(data.size())));
}

std::map<std::string, std::vector<double>> gradients_with_prefix(const DsanModel& model, const std::string& prefix) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& p : model.parameters()) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    auto g = p.tensor.grad();
    out[p.name].assign(g.begin(), g.end());
  }
  return out;
}

}  // namespace

TEST_CASE("combined loss arithmetic") {
  const auto b = make_breakdown(2.0, 3.0, 0.1);
  CHECK(b.l_total == doctest::Approx(2.3).epsilon(1e-15));
  for (double lambda : {0.0, 0.05, 0.1, 0.15}) {
    const auto r = make_breakdown(1.7, 2.9, lambda);
    CHECK(r.l_total - (r.l_context + r.lambda * r.l_char) == 0.0);
  }
}

TEST_CASE("combined loss on probability sequences") {
  Rng rng(1);
  const ProbSequence p = check::random_prob_sequence(6, 4, rng), q = check::random_prob_sequence(6, 4, rng);
  const Label l{{1, 2, 2}};
  const auto same = combined_loss(p, p, l, 1.0);
  CHECK(same.l_total == 2.0 * same.l_context);
  const auto zero = combined_loss(p, q, l, 0.0);
  CHECK(zero.l_total == zero.l_context);
  CHECK_THROWS_AS(combined_loss(p, check::random_prob_sequence(5, 4, rng), l, 0.1), DimensionError);
  CHECK_THROWS_AS(combined_loss(p, q, l, -0.1), ContractError);
  CHECK_THROWS_AS(combined_loss(p, q, Label{{1, 1, 1, 1}}, 0.1), InfeasibleLabelError);
}

TEST_CASE("combined loss graph total equals the breakdown for the sweep values") {
  Rng rng(2);
  Tensor a = check::random_tensor({6, 4}, rng), b = check::random_tensor({6, 4}, rng);
  for (double lambda : {0.0, 0.05, 0.1, 0.15}) {
    const auto r = combined_loss(a, b, Label{{1, 3}}, lambda);
    CHECK(r.total.item() == r.breakdown.l_total);
    CHECK(r.breakdown.l_total - (r.breakdown.l_context + lambda * r.breakdown.l_char) == 0.0);
  }
  Tape::active().clear();
}

TEST_CASE("learning rate divides by ten each epoch") {
  TrainConfig tc;
  CHECK(learning_rate(tc, 0) == 0.1);
  CHECK(learning_rate(tc, 1) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(learning_rate(tc, 2) == doctest::Approx(0.001).epsilon(1e-15));
  tc.lr_decay = 1.0;
  CHECK(learning_rate(tc, 7) == 0.1);
}

TEST_CASE("momentum zero is plain gradient descent and momentum accumulates") {
  Tensor w({3}, std::vector<double>{1.0, -2.0, 0.5});
  w.set_requires_grad(true);
  MomentumOptimizer plain({{"w", w, true}}, 0.0);
  w.grad()[0] = 0.5;
  w.grad()[1] = -1.0;
  w.grad()[2] = 2.0;
  plain.step(0.1);
  CHECK(w.data()[0] == 1.0 - 0.1 * 0.5);
  CHECK(w.data()[1] == -2.0 - 0.1 * -1.0);
  CHECK(w.data()[2] == 0.5 - 0.1 * 2.0);

  Tensor u({1}, 0.0);
  u.set_requires_grad(true);
  MomentumOptimizer heavy({{"u", u, true}}, 0.9);
  u.grad()[0] = 1.0;
  heavy.step(0.1);
  CHECK(u.data()[0] == doctest::Approx(-0.1));
  heavy.step(0.1);
  CHECK(u.data()[0] == doctest::Approx(-0.1 + (0.9 * -0.1 - 0.1)));
}

TEST_CASE("lambda zero backbone gradients equal the branch-removed model") {
  const Dataset data = small_split(3);
  DsanModel with(small_model(true), 11), without(small_model(false), 11);
  copy_matching_state(with.state(), without.state());
  accumulate_gradients(with, data, 0.0);
  accumulate_gradients(without, data, 0.0);
  const auto a = gradients_with_prefix(with, "backbone."), b = gradients_with_prefix(without, "backbone.");
  REQUIRE(a.size() == b.size());
  REQUIRE_FALSE(a.empty());
  bool any_nonzero = false;
  for (const auto& [name, ga] : a) {
    INFO(name);
    CHECK(ga == b.at(name));
    for (double v : ga) any_nonzero |= v != 0.0;
  }
  CHECK(any_nonzero);
}

TEST_CASE("supervision classifier gradients are zero exactly when lambda is zero") {
  const Dataset data = small_split(2);
  for (double lambda : {0.0, 0.1}) {
    DsanModel model(small_model(true), 12);
    accumulate_gradients(model, data, lambda);
    double norm = 0.0;
    for (const auto& [name, g] : gradients_with_prefix(model, "supervision.")) {
      for (double v : g) norm += std::abs(v);
    }
    if (lambda == 0.0) {
      CHECK(norm == 0.0);
    } else {
      CHECK(norm > 0.0);
    }
  }
}

TEST_CASE("augmentation stays within its bounds") {
  const Dataset data = small_split(4);
  AugmentationPolicy policy;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const AugmentedImage a = augment(data[seed % 4].image, policy, seed);
    CHECK(a.image.dim(2) == 32);
    CHECK(a.image.dim(3) % 8 == 0);
    CHECK(a.rotation_deg >= -3.0);
    CHECK(a.rotation_deg <= 3.0);
    CHECK(a.zoom >= 0.9);
    CHECK(a.zoom <= 1.0);
    for (double v : a.image.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK_THROWS_AS(augment_with(data[0].image, policy, 0.0, 0.0), ContractError);
}

TEST_CASE("identity augmentation leaves the image unchanged") {
  const Dataset data = small_split(1);
  const AugmentedImage a = augment_with(data[0].image, AugmentationPolicy{}, 0.0, 1.0);
  CHECK(std::equal(a.image.data().begin(), a.image.data().end(), data[0].image.data().begin()));
}

TEST_CASE("resize keeps the aspect ratio at stride granularity") {
  CHECK(scaled_width(48, 100, 32) == 64);
  CHECK(scaled_width(32, 72, 32) == 72);
  CHECK(scaled_width(32, 3, 32) == 8);
  CHECK(scaled_width(64, 100, 32) == 48);
  Tensor big({1, 1, 48, 100}, 0.25);
  Tensor r = resize_to_height(big, 32);
  CHECK(r.shape() == Shape{1, 1, 32, 64});
  for (double v : r.data()) CHECK(v == doctest::Approx(0.25));
  CHECK_THROWS_AS(resize_to_height(Tensor({32, 32}), 32), DimensionError);
}

TEST_CASE("padded batches give each sample its own sequence length") {
  GenConfig gc;
  const Sample s3 = render("abc", gc, 1), s5 = render("abcde", gc, 2);
  DsanModel model(small_model(), 3);
  const std::array<Tensor, 2> images{s3.image, s5.image};
  const std::array<std::size_t, 2> frames{s3.image.dim(3) / 8, s5.image.dim(3) / 8};
  NoGradGuard no_grad;
  auto out = model.forward(stack_padded(images, 1.0), frames, true);
  CHECK(out.context_logits[0].dim(0) == frames[0]);
  CHECK(out.context_logits[1].dim(0) == frames[1]);
  CHECK(out.char_logits[0].dim(0) == frames[0]);
  const std::array<std::size_t, 2> bad{frames[0], 99};
  CHECK_THROWS_AS(model.forward(stack_padded(images, 1.0), bad, true), ContractError);
}

TEST_CASE("training is bitwise deterministic given the seed") {
  const Dataset data = small_split(6);
  TrainConfig tc;
  tc.batch_size = 3;
  tc.epochs = 1;
  tc.initial_lr = 0.01;
  auto run = [&](std::uint64_t seed) {
    tc.seed = seed;
    DsanModel model(small_model(), seed);
    run_training(model, data, {}, tc);
    return encode_checkpoint(model);
  };
  const std::string a = run(5), b = run(5), c = run(6);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("infeasible samples abort naming the sample") {
  Dataset data = small_split(2);
  data[1].id = "narrow_one";
  data[1].image = Tensor({1, 1, 32, 16}, 1.0);
  DsanModel model(small_model(), 1);
  Trainer trainer(model, TrainConfig{});
  CHECK_THROWS_WITH_AS(trainer.train_epoch(data, 0), doctest::Contains("narrow_one"), InfeasibleLabelError);
  CHECK_THROWS_WITH_AS(check_dataset_feasible(data), doctest::Contains("narrow_one"), InfeasibleLabelError);
}

TEST_CASE("a NaN loss aborts with a numeric error") {
  const Dataset data = small_split(2);
  DsanModel model(small_model(), 1);
  for (auto& p : model.parameters()) {
    if (p.name == "context.fc.bias") p.tensor.data()[0] = std::numeric_limits<double>::quiet_NaN();
  }
  Trainer trainer(model, TrainConfig{});
  CHECK_THROWS_AS(trainer.train_epoch(data, 0), NumericError);
  CHECK(Tape::active().size() == 0);
}

TEST_CASE("trainer and combined loss reject invalid settings") {
  DsanModel model(small_model(), 1);
  TrainConfig tc;
  tc.batch_size = 0;
  CHECK_THROWS_AS(Trainer(model, tc), ContractError);
  tc.batch_size = 2;
  tc.lambda = -1;
  CHECK_THROWS_AS(Trainer(model, tc), ContractError);
  Trainer ok(model, TrainConfig{});
  CHECK_THROWS_AS(ok.train_epoch({}, 0), ContractError);
}

TEST_CASE("word accuracy counts exact case-insensitive matches") {
  Dataset data(10);
  std::vector<std::string> truth(10), empty(10);
  for (std::size_t i = 0; i < 10; ++i) data[i].text = truth[i] = "ab" + std::to_string(i % 3 + 1);
  CHECK(word_accuracy(truth, data) == 1.0);
  CHECK(word_accuracy(empty, data) == 0.0);
  std::vector<std::string> nine = truth;
  nine[4] = "zz";
  CHECK(word_accuracy(nine, data) == doctest::Approx(0.9));
  std::vector<std::string> upper = truth;
  for (auto& s : upper) s[0] = 'A';
  CHECK(word_accuracy(upper, data) == 1.0);
  CHECK_THROWS_AS(word_accuracy(empty, Dataset(3)), ContractError);
}

TEST_CASE("evaluation is independent of grouping into batches") {
  const Dataset data = small_split(5);
  DsanModel model(small_model(), 9);
  const auto together = transcribe_all(model, data);
  for (std::size_t i = 0; i < data.size(); ++i) CHECK(together[i] == model.transcribe(data[i].image));
}

TEST_CASE("metrics line has seven tab-separated fields") {
  EpochMetrics m;
  m.epoch = 2;
  m.lr = 0.001;
  m.mean = make_breakdown(1.5, 2.5, 0.1);
  m.train_accuracy = 0.5;
  const std::string line = format_metrics(m);
  CHECK(std::count(line.begin(), line.end(), '\t') == 6);
  CHECK(line.ends_with("nan"));
  m.eval_accuracy = 0.25;
  CHECK(format_metrics(m).ends_with("0.2500"));
}

TEST_CASE("median and ablation report layout") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0}) == 2.5);
  CHECK_THROWS_AS(median({}), ContractError);
  AblationCell cell;
  cell.lambda = 0.05;
  cell.attention = false;
  cell.seeds = {1, 2, 3};
  cell.accuracies = {0.5, 0.75, 0.25};
  const std::string report = format_ablation({cell});
  CHECK(report.starts_with("lambda\tattention\tseed_1\tseed_2\tseed_3\tmedian\n"));
  CHECK(report.find("0.05\toff\t0.5000\t0.7500\t0.2500\t0.5000") != std::string::npos);
}
