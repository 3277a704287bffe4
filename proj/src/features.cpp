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

#include "dsan/features.hpp"

#include <cmath>

#include "dsan/errors.hpp"

namespace dsan {

ConvBn::ConvBn(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng)
    : weight_(uniform_parameter({out, in, kernel, kernel},
                                std::sqrt(6.0 / static_cast<double>(in * kernel * kernel)), rng)),
      gamma_(constant_parameter({out}, 1.0)),
      beta_(constant_parameter({out}, 0.0)),
      stats_{Tensor({out}, 0.0), Tensor({out}, 1.0)},
      stride_(stride) {}

Tensor ConvBn::forward(const Tensor& x, bool training) {
  Tensor y = ops::conv2d(x, weight_, {stride_, stride_}, ops::Padding::same);
  return ops::batch_norm(y, gamma_, beta_, stats_, training);
}

void ConvBn::collect(StateList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight_, true});
  out.push_back({prefix + ".bn.gamma", gamma_, true});
  out.push_back({prefix + ".bn.beta", beta_, true});
  out.push_back({prefix + ".bn.running_mean", stats_.running_mean, false});
  out.push_back({prefix + ".bn.running_var", stats_.running_var, false});
}

ResidualBlock::ResidualBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& rng)
    : conv1_(in, out, 3, stride, rng), conv2_(out, out, 3, 1, rng) {
  if (in != out || stride != 1) projection_.emplace(in, out, 1, stride, rng);
}

Tensor ResidualBlock::forward(const Tensor& x, bool training) {
  Tensor y = ops::relu(conv1_.forward(x, training));
  y = conv2_.forward(y, training);
  Tensor shortcut = projection_ ? projection_->forward(x, training) : x;
  return ops::relu(ops::add(y, shortcut));
}

void ResidualBlock::collect(StateList& out, const std::string& prefix) const {
  conv1_.collect(out, prefix + ".conv1");
  conv2_.collect(out, prefix + ".conv2");
  if (projection_) projection_->collect(out, prefix + ".projection");
}

namespace {

constexpr std::array<std::size_t, 4> kStageStrides{1, 2, 2, 2};

}  // namespace

Backbone::Backbone(const BackboneConfig& config, Rng& rng)
    : config_(config), stem_(config.input_channels, config.stage_channels[0], 3, 1, rng) {
  for (std::size_t i = 0; i < 4; ++i) {
    if (config.stage_blocks[i] == 0 || config.stage_channels[i] == 0) {
      throw ContractError("backbone stages need at least one block and one channel");
    }
  }
  std::size_t in = config.stage_channels[0];
  for (std::size_t s = 0; s < 4; ++s) {
    std::vector<ResidualBlock> blocks;
    for (std::size_t b = 0; b < config.stage_blocks[s]; ++b) {
      blocks.emplace_back(in, config.stage_channels[s], b == 0 ? kStageStrides[s] : 1, rng);
      in = config.stage_channels[s];
    }
    stages_.push_back(std::move(blocks));
  }
}

FeatureReps Backbone::forward(const Tensor& image, bool training) {
  check_input_geometry(image);
  if (image.dim(1) != config_.input_channels) {
    throw DimensionError("backbone expects " + std::to_string(config_.input_channels) +
                         " input channels, got " + std::to_string(image.dim(1)));
  }
  Tensor x = ops::relu(stem_.forward(image, training));
  for (auto& stage : stages_) {
    for (auto& block : stage) x = block.forward(x, training);
  }
  return {x};
}

void Backbone::collect(StateList& out, const std::string& prefix) const {
  stem_.collect(out, prefix + ".stem");
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      stages_[s][b].collect(out, prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b));
    }
  }
}

TextAttention::TextAttention(std::size_t channels, Rng& rng)
    : weight_(uniform_parameter({1, channels, 3, 1}, 1.0 / std::sqrt(3.0 * static_cast<double>(channels)), rng)),
      bias_(constant_parameter({1}, 0.0)) {}

AttentionMask TextAttention::forward(const FeatureReps& features) const {
  return {ops::sigmoid(ops::conv2d(features.volume, weight_, bias_, {1, 1}, ops::Padding::same))};
}

void TextAttention::collect(StateList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight_, true});
  out.push_back({prefix + ".bias", bias_, true});
}

void check_input_geometry(const Tensor& image) {
  if (image.rank() != 4) throw DimensionError("image must be [N,C,H,W], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(2), w = image.dim(3);
  if (h % BackboneConfig::kStride != 0 || w % BackboneConfig::kStride != 0 || h < 32) {
    throw ContractError("image height and width must be multiples of 8 with height >= 32, got " +
                        std::to_string(h) + "x" + std::to_string(w));
  }
}

FeatureReps extract_features(const Tensor& image, Backbone& backbone, bool training) {
  return backbone.forward(image, training);
}

AttentionMask attention_mask(const FeatureReps& features, const TextAttention& attention) {
  return attention.forward(features);
}

FeatureReps apply_attention(const FeatureReps& features, const AttentionMask& mask) {
  return {ops::channel_broadcast_mul(features.volume, mask.mask)};
}

FeatureSequence map_to_sequence(const FeatureReps& features) {
  return {ops::map_to_sequence(features.volume)};
}

}  // namespace dsan
