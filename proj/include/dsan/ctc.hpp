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

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "dsan/tensor.hpp"

namespace dsan {

/// Character indices of a transcription; never contains the blank.
struct Label {
  std::vector<std::size_t> symbols;

  std::size_t size() const { return symbols.size(); }
  bool empty() const { return symbols.empty(); }
  bool operator==(const Label&) const = default;
};

/// Per-frame class choice, blanks included.
struct Path {
  std::vector<std::size_t> steps;

  std::size_t size() const { return steps.size(); }
};

/// T rows of per-frame distributions over the alphabet (blank at column 0).
struct ProbSequence {
  Tensor probs;  // [T, A]

  std::size_t length() const { return probs.dim(0); }
  std::size_t classes() const { return probs.dim(1); }
  double at(std::size_t t, std::size_t k) const { return probs.data()[t * classes() + k]; }
};

/// Ordered character set with the blank reserved at index 0.
class Alphabet {
 public:
  static constexpr std::size_t kBlank = 0;

  // Characters are case-folded to lowercase; duplicates are rejected.
  explicit Alphabet(std::string_view characters);

  // 26 lowercase letters and 10 digits: 37 classes with the blank.
  static Alphabet full();

  std::size_t classes() const { return characters_.size() + 1; }
  std::size_t num_characters() const { return characters_.size(); }
  const std::string& characters() const { return characters_; }

  bool contains(char c) const;
  // Class index (>= 1) of a character; throws DataError when unsupported.
  std::size_t index_of(char c) const;
  char symbol(std::size_t class_index) const;

  Label encode(std::string_view text) const;
  std::string decode(const Label& label) const;

  bool operator==(const Alphabet&) const = default;

 private:
  std::string characters_;
};

// Mapping B: merge runs of identical symbols, then drop blanks.
Label collapse(const Path& path, std::size_t blank = Alphabet::kBlank);

// Minimum number of frames able to emit `label`: one per symbol plus one
// separating blank for every adjacent repeat.
std::size_t min_frames(const Label& label);
bool is_feasible(const Label& label, std::size_t frames);

struct CtcResult {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d input, same layout as the input
};

// Negative log-likelihood of `label` given log-probabilities [T,A] (rows
// need not be normalized) using log-space forward-backward over the
// blank-interleaved label. The gradient is with respect to the log
// probabilities. Throws InfeasibleLabelError when T is too short.
CtcResult ctc_from_log_probs(std::span<const double> log_probs, std::size_t frames,
                             std::size_t classes, const Label& label,
                             std::size_t blank = Alphabet::kBlank);

// loss = -ln sum over paths with B(path) = label of prod_t probs[t, path_t],
// with gradient with respect to probs. Rows must sum to 1.
CtcResult ctc_loss(const ProbSequence& probs, const Label& label);

// Differentiable CTC on log-probabilities [T,A]; returns a scalar tensor.
Tensor ctc_loss_op(const Tensor& log_probs, const Label& label);

Path argmax_rows(const ProbSequence& probs);
// Best-path transcription: per-frame argmax (lowest index wins ties), then B.
Label greedy_decode(const ProbSequence& probs);

}  // namespace dsan
