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
#include <set>

#include "dsan/errors.hpp"
#include "dsan/features.hpp"
#include "dsan/io.hpp"
#include "dsan/selfcheck.hpp"

using namespace dsan;
using check::random_tensor;

TEST_CASE("backbone reduces 32x128 to a 128x4x16 volume") {
  Rng rng(1);
  Backbone backbone(BackboneConfig::toy(), rng);
  NoGradGuard no_grad;
  Tensor image = random_tensor({1, 1, 32, 128}, rng, 0, 1, false);
  FeatureReps f = extract_features(image, backbone, false);
  CHECK(f.volume.shape() == Shape{1, 128, 4, 16});
}

TEST_CASE("stride is exactly 8 for every valid size and configuration") {
  Rng rng(2);
  NoGradGuard no_grad;
  for (const auto& config : {BackboneConfig::toy(), BackboneConfig{1, {2, 1, 1, 2}, {8, 8, 16, 24}}}) {
    Backbone backbone(config, rng);
    for (std::size_t h : {32, 40, 48}) {
      for (std::size_t w : {8, 32, 56, 96}) {
        FeatureReps f = extract_features(random_tensor({1, 1, h, w}, rng, 0, 1, false), backbone, true);
        CHECK(f.volume.dim(1) == config.output_channels());
        CHECK(f.volume.dim(2) == h / 8);
        CHECK(f.volume.dim(3) == w / 8);
      }
    }
  }
}

TEST_CASE("full-scale layout has 512 output channels") {
  CHECK(BackboneConfig::full_scale().output_channels() == 512);
  CHECK(BackboneConfig::full_scale().stage_blocks == std::array<std::size_t, 4>{3, 4, 6, 3});
}

TEST_CASE("input geometry is checked before any compute") {
  Rng rng(3);
  Backbone backbone(BackboneConfig::toy(), rng);
  CHECK_THROWS_AS(extract_features(Tensor({1, 1, 32, 30}), backbone, false), ContractError);
  CHECK_THROWS_AS(extract_features(Tensor({1, 1, 24, 32}), backbone, false), ContractError);
  CHECK_THROWS_AS(extract_features(Tensor({1, 1, 36, 32}), backbone, false), ContractError);
  CHECK_THROWS_AS(extract_features(Tensor({1, 3, 32, 32}), backbone, false), DimensionError);
  CHECK(Tape::active().size() == 0);
}

TEST_CASE("zero input with zero biases gives all-zero features") {
  Rng rng(4);
  Backbone backbone(BackboneConfig::toy(), rng);
  NoGradGuard no_grad;
  for (bool training : {false, true}) {
    FeatureReps f = extract_features(Tensor({1, 1, 32, 32}, 0.0), backbone, training);
    for (double v : f.volume.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("zero attention weights give a mask of exactly one half") {
  Rng rng(5);
  TextAttention attention(16, rng);
  std::fill(attention.weight().data().begin(), attention.weight().data().end(), 0.0);
  NoGradGuard no_grad;
  AttentionMask m = attention_mask(FeatureReps{random_tensor({1, 16, 4, 6}, rng, -3, 3, false)}, attention);
  CHECK(m.mask.shape() == Shape{1, 1, 4, 6});
  for (double v : m.mask.data()) CHECK(v == 0.5);
}

TEST_CASE("the attention kernel spans height 3 and width 1") {
  Rng rng(6);
  TextAttention attention(4, rng);
  CHECK(attention.weight().shape() == Shape{1, 4, 3, 1});
  NoGradGuard no_grad;
  Tensor f = random_tensor({1, 4, 4, 6}, rng, -1, 1, false);
  AttentionMask before = attention_mask(FeatureReps{f}, attention);
  Tensor g = f.clone();
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t h = 0; h < 4; ++h) g.data()[(c * 4 + h) * 6 + 2] += 1.0;
  AttentionMask after = attention_mask(FeatureReps{g}, attention);
  for (std::size_t h = 0; h < 4; ++h)
    for (std::size_t w = 0; w < 6; ++w) {
      const bool same = before.mask.data()[h * 6 + w] == after.mask.data()[h * 6 + w];
      CHECK(same == (w != 2));
    }
}

TEST_CASE("apply attention with constant masks") {
  Rng rng(7);
  Tensor f = random_tensor({1, 3, 2, 5}, rng, -1, 1, false);
  NoGradGuard no_grad;
  FeatureReps ones = apply_attention(FeatureReps{f}, AttentionMask{Tensor({1, 1, 2, 5}, 1.0)});
  FeatureReps half = apply_attention(FeatureReps{f}, AttentionMask{Tensor({1, 1, 2, 5}, 0.5)});
  for (std::size_t i = 0; i < f.numel(); ++i) {
    CHECK(ones.volume.data()[i] == f.data()[i]);
    CHECK(half.volume.data()[i] == 0.5 * f.data()[i]);
  }
  CHECK_THROWS_AS(apply_attention(FeatureReps{f}, AttentionMask{Tensor({1, 1, 2, 4}, 1.0)}), DimensionError);
}

TEST_CASE("a near-zero mask position shrinks only its fiber") {
  Rng rng(8);
  Tensor f = random_tensor({1, 3, 2, 5}, rng, -1, 1, false);
  Tensor m({1, 1, 2, 5}, 1.0);
  m.data()[1 * 5 + 3] = 1e-3;
  NoGradGuard no_grad;
  FeatureReps out = apply_attention(FeatureReps{f}, AttentionMask{m});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t w = 0; w < 5; ++w) {
        const std::size_t i = (c * 2 + h) * 5 + w;
        const double expected = (h == 1 && w == 3) ? 1e-3 * f.data()[i] : f.data()[i];
        CHECK(out.volume.data()[i] == expected);
      }
}

TEST_CASE("map to sequence shape and ordering") {
  Rng rng(9);
  Tensor v = random_tensor({1, 8, 4, 16}, rng, -1, 1, false);
  FeatureSequence s = map_to_sequence(FeatureReps{v});
  CHECK(s.length() == 16);
  CHECK(s.dim() == 32);
  // Un-flattening row w reproduces column w.
  for (std::size_t w = 0; w < 16; ++w)
    for (std::size_t h = 0; h < 4; ++h)
      for (std::size_t c = 0; c < 8; ++c) {
        CHECK(s.sequence.data()[w * 32 + h * 8 + c] == v.data()[(c * 4 + h) * 16 + w]);
      }
  CHECK_THROWS_AS(map_to_sequence(FeatureReps{Tensor({2, 8, 4, 16})}), DimensionError);
}

TEST_CASE("perturbing one width column changes only its sequence vector") {
  Rng rng(10);
  Tensor v = random_tensor({1, 8, 4, 16}, rng, -1, 1, false);
  FeatureSequence a = map_to_sequence(FeatureReps{v});
  Tensor u = v.clone();
  u.data()[(5 * 4 + 2) * 16 + 3] += 0.25;
  FeatureSequence b = map_to_sequence(FeatureReps{u});
  for (std::size_t w = 0; w < 16; ++w) {
    bool changed = false;
    for (std::size_t j = 0; j < 32; ++j) changed |= a.sequence.data()[w * 32 + j] != b.sequence.data()[w * 32 + j];
    CHECK(changed == (w == 3));
  }
}

TEST_CASE("gradient of sum(mask) matches finite differences") {
  Rng rng(11);
  TextAttention attention(6, rng);
  Tensor f = random_tensor({1, 6, 4, 5}, rng);
  std::array<Tensor, 3> inputs{f, attention.weight(), attention.bias()};
  const auto r = check::check_gradient([&] { return ops::sum(attention_mask(FeatureReps{f}, attention).mask); }, inputs);
  CHECK(r.max_rel_error <= 1e-6);
}

TEST_CASE("attention invariants and the end-to-end pipeline gradient") {
  for (const auto& r : check::attention_invariant_checks(3)) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.passed);
  }
  const auto g = check::pipeline_gradient_check(4);
  INFO(g.detail);
  CHECK(g.max_error <= 1e-5);
}

TEST_CASE("mask values stay inside (0,1) for large finite features") {
  Rng rng(12);
  TextAttention attention(16, rng);
  NoGradGuard no_grad;
  AttentionMask m = attention_mask(FeatureReps{random_tensor({1, 16, 4, 9}, rng, -20, 20, false)}, attention);
  for (double v : m.mask.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("state names are stable and unique") {
  Rng rng(13);
  Backbone backbone(BackboneConfig::toy(), rng);
  StateList s;
  backbone.collect(s, "backbone");
  std::set<std::string> names;
  for (const auto& t : s) CHECK(names.insert(t.name).second);
  CHECK(names.count("backbone.stem.weight") == 1);
  CHECK(names.count("backbone.stem.bn.running_var") == 1);
  const auto stat = std::find_if(s.begin(), s.end(), [](const NamedTensor& t) { return t.name == "backbone.stem.bn.running_mean"; });
  REQUIRE(stat != s.end());
  CHECK_FALSE(stat->trainable);
}
