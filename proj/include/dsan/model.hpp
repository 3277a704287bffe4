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

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsan/ctc.hpp"
#include "dsan/features.hpp"
#include "dsan/heads.hpp"

namespace dsan {

struct ModelConfig {
  BackboneConfig backbone;
  BlstmConfig blstm;
  bool attention = true;
  bool supervision = true;  // false removes the supervision branch entirely
  std::string alphabet = "abcde123";
  std::size_t image_height = 32;

  bool operator==(const ModelConfig&) const = default;
};

class DsanModel {
 public:
  struct Output {
    FeatureReps features;                // backbone output, before attention
    std::optional<AttentionMask> mask;   // absent when attention is disabled
    std::vector<Tensor> context_logits;  // per sample, [T_n, A]
    std::vector<Tensor> char_logits;     // per sample, empty without supervision
  };

  DsanModel(const ModelConfig& config, std::uint64_t seed);

  // images [N,C,H,W]. frames[n] is sample n's valid sequence length (its
  // unpadded width / 8); pass an empty span to use the full width.
  Output forward(const Tensor& images, std::span<const std::size_t> frames, bool training);

  // Context-branch distributions for one [1,C,H,W] image in evaluation mode.
  ProbSequence predict(const Tensor& image);
  std::string transcribe(const Tensor& image);

  const ModelConfig& config() const { return config_; }
  const Alphabet& alphabet() const { return alphabet_; }

  StateList state() const;       // every named tensor, fixed order
  StateList parameters() const;  // trainable subset of state()

  Backbone& backbone() { return backbone_; }
  std::optional<TextAttention>& attention() { return attention_; }
  ContextBranch& context() { return context_; }
  std::optional<SupervisionBranch>& supervision() { return supervision_; }

 private:
  struct Components;
  DsanModel(const ModelConfig& config, Components parts);

  ModelConfig config_;
  Alphabet alphabet_;
  Backbone backbone_;
  std::optional<TextAttention> attention_;
  ContextBranch context_;
  std::optional<SupervisionBranch> supervision_;
};

// Sequence feature dimension H'*D.
std::size_t sequence_dim(const ModelConfig& config);

// Copies values of every tensor whose name appears in both lists.
void copy_matching_state(const StateList& from, const StateList& to);

}  // namespace dsan
