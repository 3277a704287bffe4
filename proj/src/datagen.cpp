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

#include "dsan/datagen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "dsan/errors.hpp"
#include "dsan/module.hpp"

namespace dsan {

namespace {

constexpr std::size_t kGlyphW = 5;
constexpr std::size_t kGlyphH = 7;

struct GlyphRows {
  char symbol;
  const char* rows[kGlyphH];
};

// '#' is ink.
constexpr GlyphRows kFont[] = {
    {'a', {".....", ".....", ".###.", "....#", ".####", "#...#", ".####"}},
    {'b', {"#....", "#....", "####.", "#...#", "#...#", "#...#", "####."}},
    {'c', {".....", ".....", ".###.", "#....", "#....", "#...#", ".###."}},
    {'d', {"....#", "....#", ".####", "#...#", "#...#", "#...#", ".####"}},
    {'e', {".....", ".....", ".###.", "#...#", "#####", "#....", ".###."}},
    {'f', {"..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#..."}},
    {'g', {".....", ".####", "#...#", "#...#", ".####", "....#", ".###."}},
    {'h', {"#....", "#....", "#.##.", "##..#", "#...#", "#...#", "#...#"}},
    {'i', {"..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."}},
    {'j', {"...#.", ".....", "..##.", "...#.", "...#.", "#..#.", ".##.."}},
    {'k', {"#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."}},
    {'l', {".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."}},
    {'m', {".....", ".....", "##.#.", "#.#.#", "#.#.#", "#...#", "#...#"}},
    {'n', {".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#"}},
    {'o', {".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."}},
    {'p', {".....", "####.", "#...#", "#...#", "####.", "#....", "#...."}},
    {'q', {".....", ".####", "#...#", "#...#", ".####", "....#", "....#"}},
    {'r', {".....", ".....", "#.##.", "##..#", "#....", "#....", "#...."}},
    {'s', {".....", ".....", ".####", "#....", ".###.", "....#", "####."}},
    {'t', {".#...", ".#...", "###..", ".#...", ".#...", ".#..#", "..##."}},
    {'u', {".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#"}},
    {'v', {".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."}},
    {'w', {".....", ".....", "#...#", "#...#", "#.#.#", "#.#.#", ".#.#."}},
    {'x', {".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"}},
    {'y', {".....", "#...#", "#...#", "#...#", ".####", "....#", ".###."}},
    {'z', {".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"}},
    {'0', {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."}},
    {'1', {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."}},
    {'2', {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"}},
    {'3', {"#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."}},
    {'4', {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."}},
    {'5', {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."}},
    {'6', {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."}},
    {'7', {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."}},
    {'8', {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."}},
    {'9', {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."}},
};

using Bitmap = std::array<std::uint8_t, kGlyphW * kGlyphH>;

const std::map<char, Bitmap>& font() {
  static const std::map<char, Bitmap> table = [] {
    std::map<char, Bitmap> m;
    for (const auto& g : kFont) {
      Bitmap b{};
      for (std::size_t y = 0; y < kGlyphH; ++y)
        for (std::size_t x = 0; x < kGlyphW; ++x) b[y * kGlyphW + x] = g.rows[y][x] == '#' ? 1 : 0;
      m.emplace(g.symbol, b);
    }
    return m;
  }();
  return table;
}

char fold(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

std::size_t cell_width(const GenConfig& config) { return kGlyphW * config.glyph_scale + config.spacing; }

void validate(const GenConfig& config) {
  if (config.glyph_scale == 0) throw ContractError("glyph scale must be >= 1");
  if (config.min_length == 0 || config.min_length > config.max_length) {
    throw ContractError("label length range must satisfy 1 <= min <= max");
  }
  if (kGlyphH * config.glyph_scale + 2 * config.jitter > config.height) {
    throw ContractError("glyphs of scale " + std::to_string(config.glyph_scale) + " do not fit height " +
                        std::to_string(config.height));
  }
  if (config.height % 8 != 0 || config.height < 32) throw ContractError("render height must be a multiple of 8 and >= 32");
  // Two frames per glyph keeps every label feasible, adjacent repeats included.
  if (cell_width(config) < 2 * BackboneConfig::kStride) {
    throw ContractError("glyph cell of " + std::to_string(cell_width(config)) +
                        " px is narrower than two frames; raise glyph scale or spacing");
  }
  if (config.noise < 0.0 || config.noise > 0.5) throw ContractError("noise amplitude must lie in [0, 0.5]");
  for (char c : config.alphabet_subset) {
    if (!has_glyph(c)) throw DataError(std::string("no glyph for character '") + c + "'");
  }
}

}  // namespace

const std::vector<std::string>& default_words() {
  static const std::vector<std::string> words = {
      "abed", "ace", "aced", "add", "bad", "bade", "bead", "bed", "bee", "cab", "cad", "dab",
      "dace", "dad", "deed", "ebb", "ebbed", "baa", "cede", "ceded", "dead", "abbe", "babe",
  };
  return words;
}

bool has_glyph(char c) { return font().count(fold(c)) > 0; }

const std::array<std::uint8_t, 35>& glyph(char c) {
  auto it = font().find(fold(c));
  if (it == font().end()) throw DataError(std::string("no glyph for character '") + c + "'");
  return it->second;
}

std::size_t rendered_width(std::size_t length, const GenConfig& config) {
  const std::size_t raw = 2 * config.margin + length * cell_width(config);
  return (raw + 7) / 8 * 8;
}

Sample render(std::string_view text, const GenConfig& config, std::uint64_t seed) {
  validate(config);
  const Alphabet alphabet(config.alphabet_subset);
  for (char c : text) {
    if (!alphabet.contains(c)) {
      throw DataError(std::string("unsupported character '") + c + "' (charset: " + config.alphabet_subset + ")");
    }
  }
  if (text.size() < config.min_length || text.size() > config.max_length) {
    throw ContractError("label '" + std::string(text) + "' length outside [" + std::to_string(config.min_length) +
                        ", " + std::to_string(config.max_length) + "]");
  }
  const std::size_t height = config.height;
  const std::size_t width = rendered_width(text.size(), config);
  const std::size_t scale = config.glyph_scale;
  Rng rng(seed);
  const auto jitter = static_cast<long>(config.jitter);
  std::uniform_int_distribution<long> offset(-jitter, jitter);
  std::uniform_real_distribution<double> noise(0.0, config.noise);

  std::vector<std::uint8_t> ink(height * width, 0);
  const long top = static_cast<long>((height - kGlyphH * scale) / 2) + offset(rng);
  for (std::size_t i = 0; i < text.size(); ++i) {
    const Bitmap& g = glyph(text[i]);
    const long left = static_cast<long>(config.margin + i * cell_width(config)) + offset(rng);
    for (std::size_t gy = 0; gy < kGlyphH; ++gy)
      for (std::size_t gx = 0; gx < kGlyphW; ++gx) {
        if (!g[gy * kGlyphW + gx]) continue;
        for (std::size_t sy = 0; sy < scale; ++sy)
          for (std::size_t sx = 0; sx < scale; ++sx) {
            const long y = top + static_cast<long>(gy * scale + sy);
            const long x = left + static_cast<long>(gx * scale + sx);
            if (y < 0 || x < 0 || y >= static_cast<long>(height) || x >= static_cast<long>(width)) continue;
            ink[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)] = 1;
          }
      }
  }

  Sample s;
  s.image = Tensor({1, 1, height, width});
  auto px = s.image.data();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double u = config.noise > 0.0 ? noise(rng) : 0.0;
    px[i] = ink[i] ? u : 1.0 - u;
  }
  s.text.reserve(text.size());
  for (char c : text) s.text.push_back(fold(c));
  s.label = alphabet.encode(s.text);
  s.seed = seed;
  return s;
}

namespace {

// Number of distinct strings with lengths in [min, max]; saturates.
double string_space(const GenConfig& config) {
  const auto base = static_cast<double>(config.alphabet_subset.size());
  double total = 0.0;
  for (std::size_t len = config.min_length; len <= config.max_length; ++len) total += std::pow(base, static_cast<double>(len));
  return total;
}

std::string random_string(const GenConfig& config, Rng& rng) {
  // Length weighted by the number of strings of that length, making the
  // draw uniform over the whole string space.
  std::vector<double> weights;
  const auto base = static_cast<double>(config.alphabet_subset.size());
  for (std::size_t len = config.min_length; len <= config.max_length; ++len) weights.push_back(std::pow(base, static_cast<double>(len)));
  std::discrete_distribution<std::size_t> length(weights.begin(), weights.end());
  std::uniform_int_distribution<std::size_t> symbol(0, config.alphabet_subset.size() - 1);
  const std::size_t n = config.min_length + length(rng);
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(fold(config.alphabet_subset[symbol(rng)]));
  return s;
}

Dataset render_all(const std::vector<std::string>& texts, const GenConfig& config, std::uint64_t seed,
                   const std::string& prefix, std::uint64_t stream) {
  Dataset out;
  out.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    Sample s = render(texts[i], config, derive_seed(derive_seed(seed, stream), i));
    char id[32];
    std::snprintf(id, sizeof(id), "%s_%06zu", prefix.c_str(), i);
    s.id = id;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

Split make_split(const GenConfig& config, std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
  validate(config);
  if (n_train < 1 || n_test < 1) throw ContractError("n_train and n_test must be >= 1");
  if (config.word_fraction < 0.0 || config.word_fraction > 1.0) throw ContractError("word fraction must lie in [0,1]");
  Rng rng(derive_seed(seed, 77));
  std::set<std::string> used;

  std::vector<std::string> words;
  for (const auto& w : config.words) {
    std::string folded;
    for (char c : w) folded.push_back(fold(c));
    const Alphabet alphabet(config.alphabet_subset);
    const bool usable = std::all_of(folded.begin(), folded.end(), [&](char c) { return alphabet.contains(c); }) &&
                        folded.size() >= config.min_length && folded.size() <= config.max_length;
    if (usable && std::find(words.begin(), words.end(), folded) == words.end()) words.push_back(folded);
  }
  std::shuffle(words.begin(), words.end(), rng);
  const auto word_count = [&](std::size_t n) {
    return words.empty() ? std::size_t{0} : static_cast<std::size_t>(std::llround(config.word_fraction * static_cast<double>(n)));
  };
  const std::size_t test_words = word_count(n_test), train_words = word_count(n_train);
  if (test_words + train_words > words.size()) {
    throw DataError("word list has " + std::to_string(words.size()) + " usable words but the split needs " +
                    std::to_string(test_words + train_words));
  }
  for (const auto& w : words) used.insert(w);

  const double space = string_space(config);
  if (static_cast<double>(n_train + n_test) > space) {
    throw DataError("only " + std::to_string(static_cast<long long>(space)) +
                    " distinct label strings exist for a disjoint split of " + std::to_string(n_train + n_test) +
                    "; use longer labels or a larger charset");
  }

  auto draw = [&](std::size_t n, std::size_t from_words, std::size_t word_offset) {
    std::vector<std::string> texts(words.begin() + static_cast<long>(word_offset),
                                   words.begin() + static_cast<long>(word_offset + from_words));
    while (texts.size() < n) {
      std::string s = random_string(config, rng);
      if (used.insert(s).second) texts.push_back(std::move(s));
    }
    std::shuffle(texts.begin(), texts.end(), rng);
    return texts;
  };
  // Strings that only the word list occupies are excluded from random
  // draws, so the space check above may be optimistic by the word count.
  if (static_cast<double>(n_train + n_test - test_words - train_words + used.size()) > space) {
    throw DataError("not enough distinct label strings left after reserving the word list");
  }
  std::vector<std::string> test_texts = draw(n_test, test_words, 0);
  std::vector<std::string> train_texts = draw(n_train, train_words, test_words);

  Split split;
  split.test = render_all(test_texts, config, seed, "test", 2);
  split.train = render_all(train_texts, config, seed, "train", 1);
  return split;
}

}  // namespace dsan
