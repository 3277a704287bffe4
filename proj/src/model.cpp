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

#include "dsan/model.hpp"

#include <algorithm>
#include <map>

#include "dsan/errors.hpp"
#include "dsan/ops.hpp"

namespace dsan {

namespace {

Rng seeded(std::uint64_t seed) { return Rng(derive_seed(seed, 0)); }

}  // namespace

std::size_t sequence_dim(const ModelConfig& config) {
  return config.image_height / BackboneConfig::kStride * config.backbone.output_channels();
}

struct DsanModel::Components {
  Backbone backbone;
  std::optional<TextAttention> attention;
  ContextBranch context;
  std::optional<SupervisionBranch> supervision;
};

namespace {

// Components draw from one RNG stream in this order, so models differing
// only in trailing components share their leading weights.
template <typename Parts>
Parts build_components(const ModelConfig& config, std::uint64_t seed) {
  if (config.image_height % BackboneConfig::kStride != 0 || config.image_height < 32) {
    throw ContractError("model image height must be a multiple of 8 and >= 32");
  }
  const std::size_t classes = Alphabet(config.alphabet).classes();
  Rng rng = seeded(seed);
  Backbone backbone(config.backbone, rng);
  std::optional<TextAttention> attention;
  if (config.attention) attention.emplace(config.backbone.output_channels(), rng);
  ContextBranch context(sequence_dim(config), config.blstm, classes, rng);
  std::optional<SupervisionBranch> supervision;
  if (config.supervision) supervision.emplace(sequence_dim(config), classes, rng);
  return Parts{std::move(backbone), std::move(attention), std::move(context), std::move(supervision)};
}

}  // namespace

DsanModel::DsanModel(const ModelConfig& config, std::uint64_t seed)
    : DsanModel(config, build_components<Components>(config, seed)) {}

DsanModel::DsanModel(const ModelConfig& config, Components parts)
    : config_(config),
      alphabet_(config.alphabet),
      backbone_(std::move(parts.backbone)),
      attention_(std::move(parts.attention)),
      context_(std::move(parts.context)),
      supervision_(std::move(parts.supervision)) {}

DsanModel::Output DsanModel::forward(const Tensor& images, std::span<const std::size_t> frames,
                                     bool training) {
  check_input_geometry(images);
  if (images.dim(2) != config_.image_height) {
    throw DimensionError("model expects image height " + std::to_string(config_.image_height) + ", got " +
                         std::to_string(images.dim(2)));
  }
  const std::size_t batch = images.dim(0);
  if (!frames.empty() && frames.size() != batch) {
    throw ContractError("forward: one frame count per sample required");
  }
  Output out;
  out.features = extract_features(images, backbone_, training);
  FeatureReps attended = out.features;
  if (attention_) {
    out.mask = attention_mask(out.features, *attention_);
    attended = apply_attention(out.features, *out.mask);
  }
  const std::size_t full = attended.volume.dim(3);
  for (std::size_t n = 0; n < batch; ++n) {
    const std::size_t t = frames.empty() ? full : frames[n];
    if (t == 0 || t > full) throw ContractError("forward: invalid frame count " + std::to_string(t));
    Tensor sample = batch == 1 ? attended.volume : ops::slice(attended.volume, 0, n, n + 1);
    if (t != full) sample = ops::slice(sample, 3, 0, t);
    FeatureSequence seq = map_to_sequence(FeatureReps{sample});
    out.context_logits.push_back(context_.logits(seq));
    if (supervision_) out.char_logits.push_back(supervision_->logits(seq));
  }
  return out;
}

ProbSequence DsanModel::predict(const Tensor& image) {
  NoGradGuard no_grad;
  Output out = forward(image, {}, false);
  return {ops::softmax_rows(out.context_logits.front())};
}

std::string DsanModel::transcribe(const Tensor& image) { return alphabet_.decode(greedy_decode(predict(image))); }

StateList DsanModel::state() const {
  StateList out;
  backbone_.collect(out, "backbone");
  if (attention_) attention_->collect(out, "attention");
  context_.collect(out, "context");
  if (supervision_) supervision_->collect(out, "supervision");
  return out;
}

StateList DsanModel::parameters() const {
  StateList all = state();
  StateList out;
  std::copy_if(all.begin(), all.end(), std::back_inserter(out), [](const NamedTensor& t) { return t.trainable; });
  return out;
}

void copy_matching_state(const StateList& from, const StateList& to) {
  std::map<std::string, Tensor> index;
  for (const auto& t : from) index.emplace(t.name, t.tensor);
  for (const auto& t : to) {
    auto it = index.find(t.name);
    if (it == index.end()) continue;
    if (it->second.shape() != t.tensor.shape()) {
      throw DimensionError("state '" + t.name + "' has mismatched shapes");
    }
    auto dst = const_cast<Tensor&>(t.tensor).data();
    std::copy(it->second.data().begin(), it->second.data().end(), dst.begin());
  }
}

}  // namespace dsan
