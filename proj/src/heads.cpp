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

#include "dsan/heads.hpp"

#include <cmath>

#include "dsan/errors.hpp"
#include "dsan/ops.hpp"

namespace dsan {

namespace {

constexpr double kLstmInitBound = 0.08;

void require_nonempty(const FeatureSequence& seq, const char* who) {
  if (!seq.sequence.defined() || seq.sequence.rank() != 2) {
    throw ContractError(std::string(who) + ": feature sequence must be [T, dim]");
  }
}

Tensor lstm_bias(std::size_t hidden, Rng& rng) {
  Tensor b = uniform_parameter({4 * hidden}, kLstmInitBound, rng);
  auto v = b.data();
  for (std::size_t j = hidden; j < 2 * hidden; ++j) v[j] = 1.0;
  return b;
}

}  // namespace

LstmDirection::LstmDirection(std::size_t input, std::size_t hidden, Rng& rng)
    : w_input_(uniform_parameter({4 * hidden, input}, kLstmInitBound, rng)),
      w_hidden_(uniform_parameter({4 * hidden, hidden}, kLstmInitBound, rng)),
      bias_(lstm_bias(hidden, rng)) {}

Tensor LstmDirection::forward(const Tensor& x, bool reverse) const {
  return ops::lstm(x, w_input_, w_hidden_, bias_, reverse);
}

void LstmDirection::collect(StateList& out, const std::string& prefix) const {
  out.push_back({prefix + ".w_input", w_input_, true});
  out.push_back({prefix + ".w_hidden", w_hidden_, true});
  out.push_back({prefix + ".bias", bias_, true});
}

ContextBranch::ContextBranch(std::size_t input_dim, const BlstmConfig& config, std::size_t classes, Rng& rng)
    : config_(config),
      forward_dirs_{LstmDirection(input_dim, config.hidden_size, rng),
                    LstmDirection(config.output_dim(), config.hidden_size, rng)},
      backward_dirs_{LstmDirection(input_dim, config.hidden_size, rng),
                     LstmDirection(config.output_dim(), config.hidden_size, rng)},
      fc_weight_(uniform_parameter({classes, config.output_dim()},
                                   1.0 / std::sqrt(static_cast<double>(config.output_dim())), rng)),
      fc_bias_(constant_parameter({classes}, 0.0)) {}

HiddenSequence ContextBranch::encode(const FeatureSequence& seq) const {
  require_nonempty(seq, "context_branch");
  Tensor x = seq.sequence;
  for (std::size_t layer = 0; layer < BlstmConfig::kLayers; ++layer) {
    const std::array<Tensor, 2> parts{forward_dirs_[layer].forward(x, false),
                                      backward_dirs_[layer].forward(x, true)};
    x = ops::concat(parts, 1);
  }
  return {x};
}

Tensor ContextBranch::logits(const FeatureSequence& seq) const {
  return ops::linear(encode(seq).h, fc_weight_, fc_bias_);
}

ProbSequence ContextBranch::forward(const FeatureSequence& seq) const {
  return {ops::softmax_rows(logits(seq))};
}

void ContextBranch::collect(StateList& out, const std::string& prefix) const {
  for (std::size_t layer = 0; layer < BlstmConfig::kLayers; ++layer) {
    const std::string p = prefix + ".layer" + std::to_string(layer);
    forward_dirs_[layer].collect(out, p + ".fwd");
    backward_dirs_[layer].collect(out, p + ".bwd");
  }
  out.push_back({prefix + ".fc.weight", fc_weight_, true});
  out.push_back({prefix + ".fc.bias", fc_bias_, true});
}

SupervisionBranch::SupervisionBranch(std::size_t input_dim, std::size_t classes, Rng& rng)
    : weight_(uniform_parameter({classes, input_dim}, 1.0 / std::sqrt(static_cast<double>(input_dim)), rng)),
      bias_(constant_parameter({classes}, 0.0)) {}

Tensor SupervisionBranch::logits(const FeatureSequence& seq) const {
  require_nonempty(seq, "supervision_branch");
  return ops::linear(seq.sequence, weight_, bias_);
}

ProbSequence SupervisionBranch::forward(const FeatureSequence& seq) const {
  return {ops::softmax_rows(logits(seq))};
}

void SupervisionBranch::collect(StateList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight_, true});
  out.push_back({prefix + ".bias", bias_, true});
}

}  // namespace dsan
