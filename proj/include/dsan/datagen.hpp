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

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dsan/training.hpp"

namespace dsan {

/// Procedural text-strip generator built on 5x7 bitmap glyphs.
struct GenConfig {
  std::string alphabet_subset = "abcde123";
  std::size_t min_length = 3;
  std::size_t max_length = 5;
  std::size_t glyph_scale = 3;  // integer upscale of the 5x7 cell
  std::size_t spacing = 1;      // blank columns after each glyph, in pixels
  double noise = 0.1;           // per-pixel uniform noise amplitude in [0, noise]
  std::size_t margin = 4;       // background columns left and right
  std::size_t height = 32;
  std::size_t jitter = 1;       // max random glyph offset in pixels
  std::vector<std::string> words;  // optional fixed vocabulary
  double word_fraction = 0.0;      // share of each split drawn from `words`
};

// Built-in vocabulary over the default character subset.
const std::vector<std::string>& default_words();

// True if a 5x7 glyph exists for the (case-folded) character.
bool has_glyph(char c);
// Row-major 5x7 bitmap, 1 = ink.
const std::array<std::uint8_t, 35>& glyph(char c);

// Canvas width for a label of `length` symbols: margins plus one cell per
// glyph, rounded up to a multiple of 8.
std::size_t rendered_width(std::size_t length, const GenConfig& config);

// Dark glyphs (near 0) on a light background (near 1). Deterministic in
// (text, config, seed).
Sample render(std::string_view text, const GenConfig& config, std::uint64_t seed);

struct Split {
  Dataset train;
  Dataset test;
};

// Train and test label strings are drawn without replacement and never
// shared between the splits.
Split make_split(const GenConfig& config, std::size_t n_train, std::size_t n_test, std::uint64_t seed);

}  // namespace dsan
