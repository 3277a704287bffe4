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
#include <span>
#include <string>
#include <vector>

#include "dsan/ctc.hpp"
#include "dsan/module.hpp"
#include "dsan/tensor.hpp"

/// Independent verification routines: exhaustive CTC path enumeration and
/// central finite differences. Nothing here calls the forward-backward
/// recursion except to compare against it.
namespace dsan::check {

struct GradCheckResult {
  double max_rel_error = 0.0;  // per input: max |analytic - numeric| / max |numeric|
  double max_abs_error = 0.0;
  std::size_t entries = 0;
};

struct GradCheckOptions {
  double step = 1e-6;
  // Check at most this many randomly chosen entries per input (0 = all).
  std::size_t max_entries_per_input = 0;
  std::uint64_t seed = 1;
  // Negates the analytic gradient before comparison (negative control).
  bool flip_analytic_sign = false;
};

// `loss` must rebuild its scalar output from the current values of `inputs`
// on every call. Inputs must require gradients.
GradCheckResult check_gradient(const std::function<Tensor()>& loss, std::span<Tensor> inputs,
                               const GradCheckOptions& options = {});

// Random tensor with entries uniform in [lo, hi].
Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0, bool requires_grad = true);
// [T,A] rows drawn from a flat Dirichlet-like distribution (normalized
// uniforms bounded away from zero).
ProbSequence random_prob_sequence(std::size_t frames, std::size_t classes, Rng& rng);

// -ln of the summed probability of all A^T paths that collapse to `label`.
double brute_force_ctc_loss(const ProbSequence& probs, const Label& label);
// Calls fn(path) for every one of the A^T paths.
void for_each_path(std::size_t frames, std::size_t classes, const std::function<void(const Path&)>& fn);
// Every label over classes-1 characters with length <= max_length.
std::vector<Label> all_labels(std::size_t characters, std::size_t max_length);

struct CheckResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct SuiteOptions {
  bool inject_ctc_sign_error = false;
  std::uint64_t seed = 2024;
  // Reduced instance counts for quick runs (CLI default).
  bool quick = true;
};

// CTC oracle equivalence, probability conservation, per-op gradient checks,
// pipeline/head gradient checks and attention invariants.
std::vector<CheckResult> run_suite(const SuiteOptions& options);

// Individual suite members, shared with the test binaries.
CheckResult ctc_oracle_check(std::size_t max_frames, std::size_t instances, std::size_t max_label, std::uint64_t seed);
CheckResult ctc_conservation_check(std::size_t max_frames, std::size_t max_classes, std::size_t instances,
                                   std::uint64_t seed);
CheckResult ctc_gradient_check(std::uint64_t seed, bool inject_sign_error, std::size_t instances = 3);
std::vector<CheckResult> op_gradient_checks(std::uint64_t seed);
CheckResult pipeline_gradient_check(std::uint64_t seed);
CheckResult context_head_gradient_check(std::uint64_t seed);
CheckResult supervision_head_gradient_check(std::uint64_t seed);
std::vector<CheckResult> attention_invariant_checks(std::uint64_t seed);

std::string format_report(const std::vector<CheckResult>& results);

}  // namespace dsan::check
