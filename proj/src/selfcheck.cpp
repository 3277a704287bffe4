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

#include "dsan/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "dsan/errors.hpp"
#include "dsan/features.hpp"
#include "dsan/heads.hpp"
#include "dsan/io.hpp"
#include "dsan/ops.hpp"

namespace dsan::check {

GradCheckResult check_gradient(const std::function<Tensor()>& loss, std::span<Tensor> inputs,
                               const GradCheckOptions& options) {
  Tape::active().clear();
  for (auto& t : inputs) {
    if (!t.requires_grad()) throw ContractError("check_gradient: every input must require a gradient");
    t.zero_grad();
  }
  Tensor out = loss();
  backward(out);
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    std::vector<double> g(t.grad().begin(), t.grad().end());
    if (options.flip_analytic_sign) {
      for (double& v : g) v = -v;
    }
    analytic.push_back(std::move(g));
  }
  auto evaluate = [&]() {
    NoGradGuard no_grad;
    return loss().item();
  };

  Rng rng(options.seed);
  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].data();
    std::vector<std::size_t> entries(values.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries_per_input && entries.size() > options.max_entries_per_input) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries_per_input);
    }
    double max_diff = 0.0, max_numeric = 0.0;
    for (auto idx : entries) {
      const double original = values[idx];
      values[idx] = original + options.step;
      const double plus = evaluate();
      values[idx] = original - options.step;
      const double minus = evaluate();
      values[idx] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      max_diff = std::max(max_diff, std::abs(numeric - analytic[i][idx]));
      max_numeric = std::max(max_numeric, std::abs(numeric));
    }
    result.entries += entries.size();
    result.max_abs_error = std::max(result.max_abs_error, max_diff);
    result.max_rel_error = std::max(result.max_rel_error, max_diff / std::max(max_numeric, 1e-8));
  }
  return result;
}

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(rng);
  t.set_requires_grad(requires_grad);
  return t;
}

ProbSequence random_prob_sequence(std::size_t frames, std::size_t classes, Rng& rng) {
  Tensor p({frames, classes});
  std::uniform_real_distribution<double> dist(0.05, 1.0);
  auto v = p.data();
  for (std::size_t t = 0; t < frames; ++t) {
    double z = 0.0;
    for (std::size_t k = 0; k < classes; ++k) z += (v[t * classes + k] = dist(rng));
    for (std::size_t k = 0; k < classes; ++k) v[t * classes + k] /= z;
  }
  return {p};
}

void for_each_path(std::size_t frames, std::size_t classes, const std::function<void(const Path&)>& fn) {
  Path path;
  path.steps.assign(frames, 0);
  while (true) {
    fn(path);
    std::size_t t = 0;
    while (t < frames && ++path.steps[t] == classes) path.steps[t++] = 0;
    if (t == frames) break;
  }
}

double brute_force_ctc_loss(const ProbSequence& probs, const Label& label) {
  double total = 0.0;
  for_each_path(probs.length(), probs.classes(), [&](const Path& path) {
    if (collapse(path) != label) return;
    double p = 1.0;
    for (std::size_t t = 0; t < path.size(); ++t) p *= probs.at(t, path.steps[t]);
    total += p;
  });
  return -std::log(total);
}

std::vector<Label> all_labels(std::size_t characters, std::size_t max_length) {
  std::vector<Label> out{Label{}};
  std::vector<Label> frontier{Label{}};
  for (std::size_t len = 1; len <= max_length; ++len) {
    std::vector<Label> next;
    for (const auto& base : frontier) {
      for (std::size_t c = 1; c <= characters; ++c) {
        Label l = base;
        l.symbols.push_back(c);
        next.push_back(l);
      }
    }
    out.insert(out.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return out;
}

CheckResult ctc_oracle_check(std::size_t max_frames, std::size_t instances, std::size_t max_label, std::uint64_t seed) {
  CheckResult r{"ctc forward-backward vs path enumeration", true, 0.0, 1e-10, ""};
  Rng rng(seed);
  std::size_t cases = 0;
  for (std::size_t frames = 1; frames <= max_frames; ++frames) {
    for (std::size_t classes = 2; classes <= 3; ++classes) {
      const auto labels = all_labels(classes - 1, max_label);
      for (std::size_t i = 0; i < instances; ++i) {
        const ProbSequence probs = random_prob_sequence(frames, classes, rng);
        for (const auto& label : labels) {
          if (!is_feasible(label, frames)) continue;
          const double fb = ctc_loss(probs, label).loss;
          const double oracle = brute_force_ctc_loss(probs, label);
          r.max_error = std::max(r.max_error, std::abs(fb - oracle));
          ++cases;
        }
      }
    }
  }
  r.passed = r.max_error <= r.tolerance;
  r.detail = std::to_string(cases) + " (probs, label) cases";
  return r;
}

CheckResult ctc_conservation_check(std::size_t max_frames, std::size_t max_classes, std::size_t instances,
                                   std::uint64_t seed) {
  CheckResult r{"ctc probability conservation over all labels", true, 0.0, 1e-9, ""};
  Rng rng(seed);
  std::size_t cases = 0;
  for (std::size_t frames = 1; frames <= max_frames; ++frames) {
    for (std::size_t classes = 2; classes <= max_classes; ++classes) {
      const auto labels = all_labels(classes - 1, frames);
      for (std::size_t i = 0; i < instances; ++i) {
        const ProbSequence probs = random_prob_sequence(frames, classes, rng);
        double total = 0.0;
        for (const auto& label : labels) {
          if (is_feasible(label, frames)) total += std::exp(-ctc_loss(probs, label).loss);
        }
        r.max_error = std::max(r.max_error, std::abs(total - 1.0));
        ++cases;
      }
    }
  }
  r.passed = r.max_error <= r.tolerance;
  r.detail = std::to_string(cases) + " distributions";
  return r;
}

namespace {

// Scalar probe sum(out * weights) with fixed random weights, so that ops
// with constant sums (softmax) still have informative gradients.
Tensor probe(const Tensor& out, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = random_tensor(out.shape(), rng, -1.0, 1.0, false);
  return ops::sum(ops::mul(out, w));
}

CheckResult grad_result(std::string name, const GradCheckResult& g, double tolerance) {
  CheckResult r;
  r.name = std::move(name);
  r.max_error = g.max_rel_error;
  r.tolerance = tolerance;
  r.passed = g.max_rel_error <= tolerance;
  std::ostringstream os;
  os << g.entries << " entries, max abs " << std::scientific << std::setprecision(2) << g.max_abs_error;
  r.detail = os.str();
  return r;
}

constexpr double kOpTolerance = 1e-6;
constexpr double kCompositeTolerance = 1e-5;

}  // namespace

CheckResult ctc_gradient_check(std::uint64_t seed, bool inject_sign_error, std::size_t instances) {
  Rng rng(seed);
  GradCheckResult worst;
  GradCheckOptions options;
  options.flip_analytic_sign = inject_sign_error;
  for (std::size_t i = 0; i < instances; ++i) {
    constexpr std::size_t kFrames = 8, kClasses = 5;
    std::uniform_int_distribution<std::size_t> symbol(1, kClasses - 1);
    std::uniform_int_distribution<std::size_t> length(1, 4);
    Label label;
    const std::size_t n = length(rng);
    for (std::size_t k = 0; k < n; ++k) label.symbols.push_back(symbol(rng));
    Tensor logits = random_tensor({kFrames, kClasses}, rng);
    std::array<Tensor, 1> inputs{logits};
    // Through softmax on probabilities, as the contract is stated.
    const auto g = check_gradient(
        [&] {
          Tensor probs = ops::softmax_rows(logits);
          return ctc_loss_op(ops::log(probs), label);
        },
        inputs, options);
    worst.entries += g.entries;
    worst.max_abs_error = std::max(worst.max_abs_error, g.max_abs_error);
    worst.max_rel_error = std::max(worst.max_rel_error, g.max_rel_error);
  }
  return grad_result("grad ctc through softmax (T=8, A=5)", worst, kOpTolerance);
}

std::vector<CheckResult> op_gradient_checks(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  auto run = [&](std::string name, std::vector<Tensor> inputs, const std::function<Tensor()>& forward) {
    const std::uint64_t probe_seed = rng();
    const auto g = check_gradient([&] { return probe(forward(), probe_seed); }, inputs);
    out.push_back(grad_result("grad " + name, g, kOpTolerance));
  };
  {
    Tensor x = random_tensor({1, 2, 5, 5}, rng), k = random_tensor({3, 2, 3, 1}, rng);
    run("conv2d same 3x1", {x, k}, [=] { return ops::conv2d(x, k, {1, 1}, ops::Padding::same); });
  }
  {
    Tensor x = random_tensor({2, 3, 6, 7}, rng), k = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
    run("conv2d same stride 2 + bias", {x, k, b}, [=] { return ops::conv2d(x, k, b, {2, 2}, ops::Padding::same); });
  }
  {
    Tensor x = random_tensor({1, 2, 5, 6}, rng), k = random_tensor({2, 2, 2, 3}, rng);
    run("conv2d valid", {x, k}, [=] { return ops::conv2d(x, k, {1, 2}, ops::Padding::valid); });
  }
  {
    Tensor x = random_tensor({2, 3, 4, 4}, rng), k = random_tensor({5, 3, 1, 1}, rng);
    run("conv2d 1x1", {x, k}, [=] { return ops::conv2d(x, k, {1, 1}, ops::Padding::same); });
  }
  {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    run("matmul", {a, b}, [=] { return ops::matmul(a, b); });
  }
  {
    Tensor x = random_tensor({3, 4}, rng), w = random_tensor({5, 4}, rng), b = random_tensor({5}, rng);
    run("linear", {x, w, b}, [=] { return ops::linear(x, w, b); });
  }
  {
    Tensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng);
    run("add", {a, b}, [=] { return ops::add(a, b); });
    run("sub", {a, b}, [=] { return ops::sub(a, b); });
    run("mul", {a, b}, [=] { return ops::mul(a, b); });
    run("scale", {a}, [=] { return ops::scale(a, -1.7); });
    run("sum", {a}, [=] { return ops::sum(ops::mul(a, a)); });
  }
  {
    Tensor x = random_tensor({3, 5}, rng);
    run("relu", {x}, [=] { return ops::relu(x); });
    run("sigmoid", {x}, [=] { return ops::sigmoid(x); });
    run("tanh", {x}, [=] { return ops::tanh(x); });
    Tensor pos = random_tensor({3, 5}, rng, 0.5, 2.0);
    run("log", {pos}, [=] { return ops::log(pos); });
  }
  {
    Tensor x = random_tensor({4, 5}, rng);
    run("softmax_rows", {x}, [=] { return ops::softmax_rows(x); });
    run("log_softmax_rows", {x}, [=] { return ops::log_softmax_rows(x); });
  }
  {
    Tensor a = random_tensor({3, 2}, rng), b = random_tensor({3, 4}, rng);
    run("concat", {a, b}, [=] {
      const std::array<Tensor, 2> parts{a, b};
      return ops::concat(parts, 1);
    });
    Tensor x = random_tensor({2, 3, 4, 5}, rng);
    run("slice", {x}, [=] { return ops::slice(ops::slice(x, 3, 1, 4), 0, 1, 2); });
  }
  {
    Tensor f = random_tensor({2, 3, 2, 4}, rng), m = random_tensor({2, 1, 2, 4}, rng, 0.0, 1.0);
    run("channel_broadcast_mul", {f, m}, [=] { return ops::channel_broadcast_mul(f, m); });
    Tensor v = random_tensor({1, 3, 2, 4}, rng);
    run("map_to_sequence", {v}, [=] { return ops::map_to_sequence(v); });
  }
  {
    Tensor x = random_tensor({2, 3, 3, 2}, rng), g = random_tensor({3}, rng, 0.5, 1.5), b = random_tensor({3}, rng);
    auto state = std::make_shared<ops::BatchNormState>(ops::BatchNormState{Tensor({3}, 0.1), Tensor({3}, 0.8)});
    run("batch_norm train", {x, g, b}, [=] { return ops::batch_norm(x, g, b, *state, true); });
    run("batch_norm eval", {x, g, b}, [=] { return ops::batch_norm(x, g, b, *state, false); });
  }
  {
    Tensor x = random_tensor({4, 6}, rng), wi = random_tensor({12, 6}, rng, -0.5, 0.5),
           wh = random_tensor({12, 3}, rng, -0.5, 0.5), b = random_tensor({12}, rng, -0.5, 0.5);
    run("lstm forward", {x, wi, wh, b}, [=] { return ops::lstm(x, wi, wh, b, false); });
    run("lstm reverse", {x, wi, wh, b}, [=] { return ops::lstm(x, wi, wh, b, true); });
  }
  return out;
}

CheckResult pipeline_gradient_check(std::uint64_t seed) {
  Rng rng(seed);
  Backbone backbone(BackboneConfig::toy(), rng);
  TextAttention attention(BackboneConfig::toy().output_channels(), rng);
  Tensor image = random_tensor({1, 1, 32, 32}, rng, 0.0, 1.0);
  StateList params;
  backbone.collect(params, "backbone");
  attention.collect(params, "attention");
  std::vector<Tensor> inputs{image};
  for (const auto& p : params) {
    if (p.name == "backbone.stem.weight" || p.name == "attention.weight" ||
        p.name == "backbone.stage4.block0.conv2.bn.gamma") {
      inputs.push_back(p.tensor);
    }
  }
  const std::uint64_t probe_seed = rng();
  GradCheckOptions options;
  options.max_entries_per_input = 96;
  const auto g = check_gradient(
      [&] {
        FeatureReps f = extract_features(image, backbone, true);
        AttentionMask m = attention_mask(f, attention);
        return probe(map_to_sequence(apply_attention(f, m)).sequence, probe_seed);
      },
      inputs, options);
  return grad_result("grad feature pipeline 32x32 (extract, mask, apply, map)", g, kCompositeTolerance);
}

CheckResult context_head_gradient_check(std::uint64_t seed) {
  Rng rng(seed);
  ContextBranch head(6, BlstmConfig{3}, 4, rng);
  Tensor seq = random_tensor({4, 6}, rng);
  StateList params;
  head.collect(params, "context");
  std::vector<Tensor> inputs{seq};
  for (const auto& p : params) inputs.push_back(p.tensor);
  const std::uint64_t probe_seed = rng();
  const auto g = check_gradient([&] { return probe(head.forward(FeatureSequence{seq}).probs, probe_seed); }, inputs);
  return grad_result("grad context branch BPTT (T=4, dim 6)", g, kCompositeTolerance);
}

CheckResult supervision_head_gradient_check(std::uint64_t seed) {
  Rng rng(seed);
  SupervisionBranch head(6, 4, rng);
  Tensor seq = random_tensor({5, 6}, rng);
  StateList params;
  head.collect(params, "supervision");
  std::vector<Tensor> inputs{seq};
  for (const auto& p : params) inputs.push_back(p.tensor);
  const std::uint64_t probe_seed = rng();
  const auto g = check_gradient([&] { return probe(head.forward(FeatureSequence{seq}).probs, probe_seed); }, inputs);
  return grad_result("grad supervision branch (T=5, dim 6)", g, kOpTolerance);
}

std::vector<CheckResult> attention_invariant_checks(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  NoGradGuard no_grad;
  TextAttention attention(16, rng);
  {
    CheckResult r{"attention mask range (0,1) and single channel", true, 0.0, 0.0, ""};
    for (double amplitude : {1.0, 10.0, 30.0}) {
      FeatureReps f{random_tensor({1, 16, 4, 9}, rng, -amplitude, amplitude, false)};
      AttentionMask m = attention_mask(f, attention);
      const bool shape_ok = m.mask.dim(1) == 1 && m.mask.dim(2) == 4 && m.mask.dim(3) == 9;
      const bool range_ok = std::all_of(m.mask.data().begin(), m.mask.data().end(),
                                        [](double v) { return v > 0.0 && v < 1.0; });
      r.passed = r.passed && shape_ok && range_ok;
    }
    r.detail = r.passed ? "ok" : "mask value outside (0,1) or wrong shape";
    out.push_back(r);
  }
  {
    CheckResult r{"attention masked-position locality", true, 0.0, 0.0, ""};
    FeatureReps f{random_tensor({1, 16, 4, 9}, rng, -2.0, 2.0, false)};
    AttentionMask m = attention_mask(f, attention);
    AttentionMask zeroed{m.mask.clone()};
    const std::size_t zh = 2, zw = 5;
    zeroed.mask.data()[zh * 9 + zw] = 0.0;
    FeatureReps a = apply_attention(f, m), b = apply_attention(f, zeroed);
    for (std::size_t c = 0; c < 16; ++c)
      for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t w = 0; w < 9; ++w) {
          const std::size_t i = (c * 4 + h) * 9 + w;
          const bool masked = h == zh && w == zw;
          if (masked && b.volume.data()[i] != 0.0) r.passed = false;
          if (!masked && b.volume.data()[i] != a.volume.data()[i]) r.passed = false;
        }
    r.detail = r.passed ? "only the zeroed fiber changed" : "locality violated";
    out.push_back(r);
  }
  {
    CheckResult r{"heatmap PGM dims equal (H/8, W/8)", true, 0.0, 0.0, ""};
    Backbone backbone(BackboneConfig::toy(), rng);
    TextAttention att(BackboneConfig::toy().output_channels(), rng);
    Tensor image = random_tensor({1, 1, 32, 72}, rng, 0.0, 1.0, false);
    AttentionMask m = attention_mask(extract_features(image, backbone, false), att);
    const auto pgm = decode_pgm(encode_pgm(m.mask));
    r.passed = pgm.dim(2) == 32 / 8 && pgm.dim(3) == 72 / 8;
    r.detail = "PGM " + std::to_string(pgm.dim(3)) + "x" + std::to_string(pgm.dim(2)) + " for a 72x32 input";
    out.push_back(r);
  }
  return out;
}

std::vector<CheckResult> run_suite(const SuiteOptions& options) {
  std::vector<CheckResult> results;
  const std::size_t instances = options.quick ? 5 : 50;
  results.push_back(ctc_oracle_check(5, instances, 3, options.seed));
  results.push_back(ctc_conservation_check(4, 3, options.quick ? 5 : 20, options.seed + 1));
  results.push_back(ctc_gradient_check(options.seed + 2, options.inject_ctc_sign_error));
  for (auto& r : op_gradient_checks(options.seed + 3)) results.push_back(std::move(r));
  results.push_back(pipeline_gradient_check(options.seed + 4));
  results.push_back(context_head_gradient_check(options.seed + 5));
  results.push_back(supervision_head_gradient_check(options.seed + 6));
  for (auto& r : attention_invariant_checks(options.seed + 7)) results.push_back(std::move(r));
  return results;
}

std::string format_report(const std::vector<CheckResult>& results) {
  std::ostringstream os;
  std::size_t failed = 0;
  for (const auto& r : results) {
    os << (r.passed ? "PASS" : "FAIL") << "  " << std::left << std::setw(58) << r.name << " max_err=" << std::scientific
       << std::setprecision(3) << r.max_error << " tol=" << r.tolerance << "  " << r.detail << '\n';
    if (!r.passed) ++failed;
  }
  os << (failed == 0 ? "all " + std::to_string(results.size()) + " checks passed"
                     : std::to_string(failed) + " of " + std::to_string(results.size()) + " checks failed")
     << '\n';
  return os.str();
}

}  // namespace dsan::check
