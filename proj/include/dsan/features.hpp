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
#include <optional>
#include <string>
#include <vector>

#include "dsan/module.hpp"
#include "dsan/ops.hpp"
#include "dsan/tensor.hpp"

namespace dsan {

/// Residual backbone layout. The stem is a stride-1 3x3 same convolution
/// (no max pooling) and the four stages use strides 1, 2, 2, 2, giving an
/// overall stride of 8 for any configuration.
struct BackboneConfig {
  std::size_t input_channels = 1;
  std::array<std::size_t, 4> stage_blocks{1, 1, 1, 1};
  std::array<std::size_t, 4> stage_channels{16, 32, 64, 128};

  static BackboneConfig toy() { return {}; }
  // ResNet-34 block counts with 512 output channels.
  static BackboneConfig full_scale() { return {1, {3, 4, 6, 3}, {64, 128, 256, 512}}; }

  std::size_t output_channels() const { return stage_channels[3]; }
  static constexpr std::size_t kStride = 8;
  bool operator==(const BackboneConfig&) const = default;
};

struct FeatureReps {
  Tensor volume;  // [N, D, H/8, W/8]
};

struct AttentionMask {
  Tensor mask;  // [N, 1, H/8, W/8], values in (0,1)
};

struct FeatureSequence {
  Tensor sequence;  // [W', H'*D]
  std::size_t length() const { return sequence.dim(0); }
  std::size_t dim() const { return sequence.dim(1); }
};

// conv (no bias) -> batch norm.
class ConvBn {
 public:
  ConvBn(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng);
  Tensor forward(const Tensor& x, bool training);
  void collect(StateList& out, const std::string& prefix) const;

 private:
  Tensor weight_;
  Tensor gamma_;
  Tensor beta_;
  ops::BatchNormState stats_;
  std::size_t stride_;
};

// conv-bn-relu, conv-bn, add shortcut, relu. The shortcut is a 1x1
// projection whenever channels or stride change.
class ResidualBlock {
 public:
  ResidualBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& rng);
  Tensor forward(const Tensor& x, bool training);
  void collect(StateList& out, const std::string& prefix) const;

 private:
  ConvBn conv1_;
  ConvBn conv2_;
  std::optional<ConvBn> projection_;
};

class Backbone {
 public:
  Backbone(const BackboneConfig& config, Rng& rng);

  // image [N,C,H,W] with H, W multiples of 8 and H >= 32.
  FeatureReps forward(const Tensor& image, bool training);
  void collect(StateList& out, const std::string& prefix) const;
  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  ConvBn stem_;
  std::vector<std::vector<ResidualBlock>> stages_;
};

// 3x1 (height 3, width 1) same convolution to one channel, then sigmoid.
class TextAttention {
 public:
  TextAttention(std::size_t channels, Rng& rng);
  AttentionMask forward(const FeatureReps& features) const;
  void collect(StateList& out, const std::string& prefix) const;

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

 private:
  Tensor weight_;  // [1, D, 3, 1]
  Tensor bias_;    // [1]
};

// Throws ContractError unless H, W are multiples of 8 and H >= 32.
void check_input_geometry(const Tensor& image);

FeatureReps extract_features(const Tensor& image, Backbone& backbone, bool training);
AttentionMask attention_mask(const FeatureReps& features, const TextAttention& attention);
// output[c,h,w] = features[c,h,w] * mask[0,h,w]
FeatureReps apply_attention(const FeatureReps& features, const AttentionMask& mask);
// Single-sample volume [1,D,H',W'] to W' vectors of H'*D components.
FeatureSequence map_to_sequence(const FeatureReps& features);

}  // namespace dsan
