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
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsan/ctc.hpp"
#include "dsan/model.hpp"
#include "dsan/tensor.hpp"

namespace dsan {

struct LossBreakdown {
  double l_context = 0.0;
  double l_char = 0.0;
  double lambda = 0.0;
  double l_total = 0.0;  // l_context + lambda * l_char
};

LossBreakdown make_breakdown(double l_context, double l_char, double lambda);

/// Rotation, zoom-out and resize applied to each training image.
struct AugmentationPolicy {
  double max_rotation_deg = 3.0;  // rotation ~ U(-max, +max)
  double min_zoom = 0.9;
  double max_zoom = 1.0;
  std::size_t target_height = 32;
  double background = 1.0;
};

struct AugmentedImage {
  Tensor image;  // [1,1,target_height,W], W a multiple of 8
  double rotation_deg = 0.0;
  double zoom = 1.0;
};

// Bilinear resize to `height`, width scaled by aspect ratio then rounded to
// the nearest multiple of 8 (at least 8).
Tensor resize_to_height(const Tensor& image, std::size_t height);
std::size_t scaled_width(std::size_t height, std::size_t width, std::size_t target_height);

// Rotation and zoom about the image centre on the same canvas (exposed
// area filled with background), then resize_to_height.
AugmentedImage augment(const Tensor& image, const AugmentationPolicy& policy, std::uint64_t seed);
AugmentedImage augment_with(const Tensor& image, const AugmentationPolicy& policy, double rotation_deg,
                            double zoom);

struct TrainConfig {
  double lambda = 0.1;
  std::size_t batch_size = 32;
  double initial_lr = 0.1;
  double lr_decay = 10.0;  // lr for epoch e is initial_lr / lr_decay^e
  double momentum = 0.9;
  std::size_t epochs = 5;
  std::uint64_t seed = 1;
  bool augment = true;
  AugmentationPolicy augmentation;
};

double learning_rate(const TrainConfig& config, std::size_t epoch);

/// Dataset entry: [1,1,H,W] grayscale image in [0,1] and its transcription.
struct Sample {
  std::string id;
  Tensor image;
  std::string text;
  Label label;
  std::uint64_t seed = 0;  // generation seed, 0 when unknown
};

using Dataset = std::vector<Sample>;

/// Result of combined_loss on one sample: scalar graph node plus values.
struct CombinedLoss {
  LossBreakdown breakdown;
  Tensor total;
};

// l_total = ctc(context) + lambda * ctc(char) on logits [T,A]. Passing an
// undefined char_logits tensor gives the context-only objective.
CombinedLoss combined_loss(const Tensor& context_logits, const Tensor& char_logits, const Label& label,
                           double lambda);
// Value-only form on probability sequences.
LossBreakdown combined_loss(const ProbSequence& context, const ProbSequence& chars, const Label& label,
                            double lambda);

/// v <- momentum * v - lr * g;  w <- w + v
class MomentumOptimizer {
 public:
  MomentumOptimizer(StateList parameters, double momentum);
  void zero_grad();
  void step(double lr);
  const StateList& parameters() const { return params_; }

 private:
  StateList params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
};

struct StepResult {
  LossBreakdown mean;     // batch means, l_total recomputed from the means
  std::size_t correct = 0;  // context-branch greedy decodes matching the label
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  LossBreakdown mean;
  double train_accuracy = 0.0;
  std::optional<double> eval_accuracy;
};

// One tab-separated metrics line: epoch, lr, l_context, l_char, l_total,
// train accuracy, eval accuracy ("nan" when absent).
std::string format_metrics(const EpochMetrics& m);

class Trainer {
 public:
  Trainer(DsanModel& model, TrainConfig config);

  // Batch of images right-padded to the widest with background, each
  // sample's padded frames dropped before both CTC losses.
  StepResult train_step(std::span<const Sample* const> batch, double lr);
  EpochMetrics train_epoch(const Dataset& data, std::size_t epoch);

  const TrainConfig& config() const { return config_; }
  DsanModel& model() { return model_; }

 private:
  DsanModel& model_;
  TrainConfig config_;
  MomentumOptimizer optimizer_;
};

// Pads images [1,C,H,W_i] to one [N,C,H,max W] batch filled with `background`.
Tensor stack_padded(std::span<const Tensor> images, double background);

// Fraction of samples whose context-branch greedy transcription equals the
// ground truth exactly (case-insensitive).
double evaluate(DsanModel& model, const Dataset& data);
std::vector<std::string> transcribe_all(DsanModel& model, const Dataset& data);
double word_accuracy(std::span<const std::string> predictions, const Dataset& data);

// Throws ContractError naming the first sample whose label cannot be
// emitted at its image's sequence length.
void check_dataset_feasible(const Dataset& data);

}  // namespace dsan
