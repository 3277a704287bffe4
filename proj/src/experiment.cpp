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

#include "dsan/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "dsan/errors.hpp"

namespace dsan {

RunResult run_training(DsanModel& model, const Dataset& train, const Dataset& test, const TrainConfig& config,
                       const EpochCallback& on_epoch) {
  check_dataset_feasible(train);
  const auto start = std::chrono::steady_clock::now();
  Trainer trainer(model, config);
  RunResult result;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    EpochMetrics m = trainer.train_epoch(train, e);
    if (!test.empty()) m.eval_accuracy = evaluate(model, test);
    result.log.push_back(m);
    if (on_epoch) on_epoch(m, model);
  }
  result.test_accuracy = test.empty() ? 0.0 : evaluate(model, test);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

RunResult train_fresh(const ModelConfig& model_config, const Dataset& train, const Dataset& test,
                      const TrainConfig& config) {
  DsanModel model(model_config, config.seed);
  return run_training(model, train, test, config);
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double AblationCell::median() const { return dsan::median(accuracies); }

std::vector<AblationCell> run_ablation(const Dataset& train, const Dataset& test, const AblationOptions& options,
                                       const RunCallback& on_run) {
  if (options.seeds.empty()) throw ContractError("ablation needs at least one seed");
  std::vector<AblationCell> cells;
  for (double lambda : options.lambdas) {
    for (bool attention : options.attention) {
      AblationCell cell;
      cell.lambda = lambda;
      cell.attention = attention;
      ModelConfig mc = options.model;
      mc.attention = attention;
      mc.supervision = lambda > 0.0;
      for (std::uint64_t seed : options.seeds) {
        TrainConfig tc = options.train;
        tc.lambda = lambda;
        tc.seed = seed;
        const RunResult r = train_fresh(mc, train, test, tc);
        cell.seeds.push_back(seed);
        cell.accuracies.push_back(r.test_accuracy);
        cell.seconds.push_back(r.seconds);
        if (on_run) on_run(cell, seed, r);
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

std::string format_ablation(const std::vector<AblationCell>& cells) {
  std::ostringstream os;
  os << "lambda\tattention";
  const std::size_t columns = cells.empty() ? 0 : cells.front().seeds.size();
  for (std::size_t i = 0; i < columns; ++i) os << "\tseed_" << cells.front().seeds[i];
  os << "\tmedian\n" << std::fixed;
  for (const auto& c : cells) {
    os << std::setprecision(2) << c.lambda << '\t' << (c.attention ? "on" : "off") << std::setprecision(4);
    for (double a : c.accuracies) os << '\t' << a;
    os << '\t' << c.median() << '\n';
  }
  return os.str();
}

}  // namespace dsan
