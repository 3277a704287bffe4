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
#include <functional>
#include <string>
#include <vector>

#include "dsan/model.hpp"
#include "dsan/training.hpp"

namespace dsan {

struct RunResult {
  std::vector<EpochMetrics> log;  // one entry per epoch, eval on the test split
  double test_accuracy = 0.0;
  double seconds = 0.0;
};

using EpochCallback = std::function<void(const EpochMetrics&, const DsanModel&)>;

// Trains `model` for config.epochs epochs, evaluating on `test` after each.
RunResult run_training(DsanModel& model, const Dataset& train, const Dataset& test, const TrainConfig& config,
                       const EpochCallback& on_epoch = {});

// Fresh model seeded with config.seed, trained with run_training.
RunResult train_fresh(const ModelConfig& model_config, const Dataset& train, const Dataset& test,
                      const TrainConfig& config);

struct AblationCell {
  double lambda = 0.0;
  bool attention = true;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;  // parallel to seeds
  std::vector<double> seconds;
  double median() const;
};

struct AblationOptions {
  std::vector<double> lambdas{0.0, 0.05, 0.1, 0.15};
  std::vector<bool> attention{true, false};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  ModelConfig model;
  TrainConfig train;
};

using RunCallback = std::function<void(const AblationCell&, std::uint64_t seed, const RunResult&)>;

// Every (lambda, attention) cell trained once per seed; a cell's supervision
// branch is present exactly when lambda > 0.
std::vector<AblationCell> run_ablation(const Dataset& train, const Dataset& test, const AblationOptions& options,
                                       const RunCallback& on_run = {});

// Tab-separated table: lambda, attention, one column per seed, median.
std::string format_ablation(const std::vector<AblationCell>& cells);

double median(std::vector<double> values);

}  // namespace dsan
