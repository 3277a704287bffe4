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

#include "dsan/training.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "dsan/errors.hpp"
#include "dsan/ops.hpp"

namespace dsan {

LossBreakdown make_breakdown(double l_context, double l_char, double lambda) {
  return {l_context, l_char, lambda, l_context + lambda * l_char};
}

double learning_rate(const TrainConfig& config, std::size_t epoch) {
  return config.initial_lr / std::pow(config.lr_decay, static_cast<double>(epoch));
}

CombinedLoss combined_loss(const Tensor& context_logits, const Tensor& char_logits, const Label& label,
                           double lambda) {
  if (lambda < 0.0) throw ContractError("lambda must be non-negative");
  Tensor l_context = ctc_loss_op(ops::log_softmax_rows(context_logits), label);
  if (!char_logits.defined()) {
    return {make_breakdown(l_context.item(), 0.0, lambda), l_context};
  }
  if (char_logits.shape() != context_logits.shape()) {
    throw DimensionError("combined_loss: branch outputs differ in shape " + shape_str(context_logits.shape()) +
                         " vs " + shape_str(char_logits.shape()));
  }
  Tensor l_char = ctc_loss_op(ops::log_softmax_rows(char_logits), label);
  Tensor total = ops::add(l_context, ops::scale(l_char, lambda));
  return {make_breakdown(l_context.item(), l_char.item(), lambda), total};
}

LossBreakdown combined_loss(const ProbSequence& context, const ProbSequence& chars, const Label& label,
                            double lambda) {
  if (lambda < 0.0) throw ContractError("lambda must be non-negative");
  if (context.probs.shape() != chars.probs.shape()) {
    throw DimensionError("combined_loss: branch outputs differ in shape");
  }
  return make_breakdown(ctc_loss(context, label).loss, ctc_loss(chars, label).loss, lambda);
}

MomentumOptimizer::MomentumOptimizer(StateList parameters, double momentum)
    : params_(std::move(parameters)), momentum_(momentum) {
  for (const auto& p : params_) velocity_.emplace_back(p.tensor.numel(), 0.0);
}

void MomentumOptimizer::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void MomentumOptimizer::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& w = params_[i].tensor;
    if (!w.has_grad()) continue;
    auto g = w.grad();
    auto v = w.data();
    auto& vel = velocity_[i];
    for (std::size_t j = 0; j < vel.size(); ++j) {
      vel[j] = momentum_ * vel[j] - lr * g[j];
      v[j] += vel[j];
    }
  }
}

std::string format_metrics(const EpochMetrics& m) {
  std::ostringstream os;
  os << m.epoch << '\t' << std::setprecision(6) << m.lr << '\t' << std::fixed << std::setprecision(6)
     << m.mean.l_context << '\t' << m.mean.l_char << '\t' << m.mean.l_total << '\t' << std::setprecision(4)
     << m.train_accuracy << '\t';
  if (m.eval_accuracy) {
    os << *m.eval_accuracy;
  } else {
    os << "nan";
  }
  return os.str();
}

Tensor stack_padded(std::span<const Tensor> images, double background) {
  if (images.empty()) throw ContractError("stack_padded: empty batch");
  const std::size_t c = images[0].dim(1), h = images[0].dim(2);
  std::size_t w = 0;
  for (const auto& im : images) {
    if (im.rank() != 4 || im.dim(0) != 1 || im.dim(1) != c || im.dim(2) != h) {
      throw DimensionError("stack_padded: images must share [1,C,H,*], got " + shape_str(im.shape()));
    }
    w = std::max(w, im.dim(3));
  }
  Tensor out({images.size(), c, h, w}, background);
  auto dst = out.data();
  for (std::size_t n = 0; n < images.size(); ++n) {
    const std::size_t iw = images[n].dim(3);
    auto src = images[n].data();
    for (std::size_t row = 0; row < c * h; ++row) {
      std::copy_n(src.data() + row * iw, iw, dst.data() + (n * c * h + row) * w);
    }
  }
  return out;
}

namespace {

std::size_t frames_of(const Tensor& image) { return image.dim(3) / BackboneConfig::kStride; }

Label decode_logits(const Tensor& logits) { return greedy_decode(ProbSequence{logits}); }

}  // namespace

void check_dataset_feasible(const Dataset& data) {
  for (const auto& s : data) {
    const std::size_t frames = frames_of(s.image);
    if (!is_feasible(s.label, frames)) {
      throw InfeasibleLabelError("sample '" + s.id + "' (label '" + s.text + "') needs " +
                                 std::to_string(min_frames(s.label)) + " frames but its image gives " +
                                 std::to_string(frames));
    }
  }
}

Trainer::Trainer(DsanModel& model, TrainConfig config)
    : model_(model), config_(config), optimizer_(model.parameters(), config.momentum) {
  if (config_.batch_size < 1) throw ContractError("batch_size must be >= 1");
  if (config_.lambda < 0.0) throw ContractError("lambda must be non-negative");
}

StepResult Trainer::train_step(std::span<const Sample* const> batch, double lr) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  std::vector<Tensor> images;
  std::vector<std::size_t> frames;
  for (const Sample* s : batch) {
    images.push_back(s->image);
    frames.push_back(frames_of(s->image));
    if (!is_feasible(s->label, frames.back())) {
      throw InfeasibleLabelError("sample '" + s->id + "' (label '" + s->text + "') is infeasible at " +
                                 std::to_string(frames.back()) + " frames");
    }
  }
  Tensor x = stack_padded(images, config_.augmentation.background);
  DsanModel::Output out = model_.forward(x, frames, true);

  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<Tensor> terms;
  double sum_context = 0.0, sum_char = 0.0;
  StepResult result;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    Tensor chars = out.char_logits.empty() ? Tensor() : out.char_logits[n];
    CombinedLoss loss = combined_loss(out.context_logits[n], chars, batch[n]->label, config_.lambda);
    if (!std::isfinite(loss.breakdown.l_total)) {
      Tape::active().clear();
      throw NumericError("non-finite loss on sample '" + batch[n]->id + "'");
    }
    terms.push_back(loss.total);
    sum_context += loss.breakdown.l_context;
    sum_char += loss.breakdown.l_char;
    if (decode_logits(out.context_logits[n]) == batch[n]->label) ++result.correct;
  }
  Tensor total = ops::scale(ops::add_n(terms), inv_n);
  result.mean = make_breakdown(sum_context * inv_n, sum_char * inv_n, config_.lambda);

  optimizer_.zero_grad();
  backward(total);
  optimizer_.step(lr);
  return result;
}

EpochMetrics Trainer::train_epoch(const Dataset& data, std::size_t epoch) {
  if (data.empty()) throw ContractError("train_epoch: empty dataset");
  const double lr = learning_rate(config_, epoch);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(derive_seed(config_.seed, 1000 + epoch));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  const std::uint64_t aug_seed = derive_seed(config_.seed, 2000 + epoch);
  EpochMetrics metrics;
  metrics.epoch = epoch;
  metrics.lr = lr;
  double sum_context = 0.0, sum_char = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
    const std::size_t end = std::min(order.size(), start + config_.batch_size);
    std::vector<Sample> augmented;
    augmented.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) {
      const Sample& s = data[order[i]];
      Sample copy = s;
      if (config_.augment) {
        copy.image = augment(s.image, config_.augmentation, derive_seed(aug_seed, order[i])).image;
      } else if (s.image.dim(2) != config_.augmentation.target_height || s.image.dim(3) % 8 != 0) {
        copy.image = resize_to_height(s.image, config_.augmentation.target_height);
      }
      augmented.push_back(std::move(copy));
    }
    std::vector<const Sample*> ptrs;
    for (const auto& s : augmented) ptrs.push_back(&s);
    StepResult step = train_step(ptrs, lr);
    const auto n = static_cast<double>(ptrs.size());
    sum_context += step.mean.l_context * n;
    sum_char += step.mean.l_char * n;
    correct += step.correct;
  }
  const auto total = static_cast<double>(data.size());
  metrics.mean = make_breakdown(sum_context / total, sum_char / total, config_.lambda);
  metrics.train_accuracy = static_cast<double>(correct) / total;
  return metrics;
}

std::vector<std::string> transcribe_all(DsanModel& model, const Dataset& data) {
  NoGradGuard no_grad;
  std::vector<std::string> predictions(data.size());
  // Evaluation-mode batch norm is per-sample, so equal-width batches give
  // the same results as one-at-a-time inference.
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> by_size;
  for (std::size_t i = 0; i < data.size(); ++i) {
    by_size[{data[i].image.dim(2), data[i].image.dim(3)}].push_back(i);
  }
  constexpr std::size_t kChunk = 32;
  for (const auto& [size, indices] : by_size) {
    for (std::size_t start = 0; start < indices.size(); start += kChunk) {
      const std::size_t end = std::min(indices.size(), start + kChunk);
      std::vector<Tensor> images;
      for (std::size_t i = start; i < end; ++i) {
        const Tensor& im = data[indices[i]].image;
        const bool fits = im.dim(2) == model.config().image_height && im.dim(3) % 8 == 0;
        images.push_back(fits ? im : resize_to_height(im, model.config().image_height));
      }
      Tensor x = stack_padded(images, 1.0);
      DsanModel::Output out = model.forward(x, {}, false);
      for (std::size_t i = start; i < end; ++i) {
        predictions[indices[i]] = model.alphabet().decode(decode_logits(out.context_logits[i - start]));
      }
    }
  }
  return predictions;
}

double word_accuracy(std::span<const std::string> predictions, const Dataset& data) {
  if (data.empty()) return 0.0;
  if (predictions.size() != data.size()) throw ContractError("word_accuracy: size mismatch");
  auto lower = [](std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
  };
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (lower(predictions[i]) == lower(data[i].text)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double evaluate(DsanModel& model, const Dataset& data) {
  const auto predictions = transcribe_all(model, data);
  return word_accuracy(predictions, data);
}

}  // namespace dsan
