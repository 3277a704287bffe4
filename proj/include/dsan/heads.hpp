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
#include <string>

#include "dsan/ctc.hpp"
#include "dsan/features.hpp"
#include "dsan/module.hpp"

namespace dsan {

struct BlstmConfig {
  std::size_t hidden_size = 32;  // 256 at full scale
  static constexpr std::size_t kLayers = 2;
  std::size_t output_dim() const { return 2 * hidden_size; }
  bool operator==(const BlstmConfig&) const = default;
};

struct HiddenSequence {
  Tensor h;  // [T, 2*hidden]
};

class LstmDirection {
 public:
  LstmDirection(std::size_t input, std::size_t hidden, Rng& rng);
  Tensor forward(const Tensor& x, bool reverse) const;
  void collect(StateList& out, const std::string& prefix) const;

 private:
  Tensor w_input_;   // [4H, I]
  Tensor w_hidden_;  // [4H, H]
  Tensor bias_;      // [4H], forget block starts at 1
};

/// Context-level branch: two stacked bidirectional LSTM layers, then a
/// per-step fully connected layer over the alphabet.
class ContextBranch {
 public:
  ContextBranch(std::size_t input_dim, const BlstmConfig& config, std::size_t classes, Rng& rng);

  HiddenSequence encode(const FeatureSequence& seq) const;
  Tensor logits(const FeatureSequence& seq) const;  // [T, A]
  ProbSequence forward(const FeatureSequence& seq) const;
  void collect(StateList& out, const std::string& prefix) const;

 private:
  BlstmConfig config_;
  std::array<LstmDirection, 2> forward_dirs_;
  std::array<LstmDirection, 2> backward_dirs_;
  Tensor fc_weight_;  // [A, 2H]
  Tensor fc_bias_;    // [A]
};

/// Supervision enhancement branch: one linear classifier shared by every
/// step, applied to each feature vector independently.
class SupervisionBranch {
 public:
  SupervisionBranch(std::size_t input_dim, std::size_t classes, Rng& rng);

  Tensor logits(const FeatureSequence& seq) const;  // [T, A]
  ProbSequence forward(const FeatureSequence& seq) const;
  void collect(StateList& out, const std::string& prefix) const;

 private:
  Tensor weight_;
  Tensor bias_;
};

}  // namespace dsan
