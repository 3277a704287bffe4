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

#include "dsan/ctc.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "dsan/errors.hpp"

namespace dsan {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

char fold(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

}  // namespace

Alphabet::Alphabet(std::string_view characters) {
  for (char raw : characters) {
    const char c = fold(raw);
    if (characters_.find(c) != std::string::npos) {
      throw DataError(std::string("alphabet lists '") + c + "' twice");
    }
    characters_.push_back(c);
  }
  if (characters_.empty()) throw DataError("alphabet needs at least one character");
}

Alphabet Alphabet::full() { return Alphabet("abcdefghijklmnopqrstuvwxyz0123456789"); }

bool Alphabet::contains(char c) const { return characters_.find(fold(c)) != std::string::npos; }

std::size_t Alphabet::index_of(char c) const {
  const auto pos = characters_.find(fold(c));
  if (pos == std::string::npos) {
    throw DataError(std::string("unsupported character '") + c + "' (alphabet: " + characters_ + ")");
  }
  return pos + 1;
}

char Alphabet::symbol(std::size_t class_index) const {
  if (class_index == kBlank || class_index > characters_.size()) {
    throw ContractError("class index " + std::to_string(class_index) + " is not a character");
  }
  return characters_[class_index - 1];
}

Label Alphabet::encode(std::string_view text) const {
  Label label;
  label.symbols.reserve(text.size());
  for (char c : text) label.symbols.push_back(index_of(c));
  return label;
}

std::string Alphabet::decode(const Label& label) const {
  std::string out;
  out.reserve(label.size());
  for (auto s : label.symbols) out.push_back(symbol(s));
  return out;
}

Label collapse(const Path& path, std::size_t blank) {
  Label out;
  for (std::size_t t = 0; t < path.size(); ++t) {
    const auto s = path.steps[t];
    if (t > 0 && s == path.steps[t - 1]) continue;
    if (s != blank) out.symbols.push_back(s);
  }
  return out;
}

std::size_t min_frames(const Label& label) {
  std::size_t n = label.size();
  for (std::size_t i = 1; i < label.size(); ++i) {
    if (label.symbols[i] == label.symbols[i - 1]) ++n;
  }
  return n;
}

bool is_feasible(const Label& label, std::size_t frames) { return frames >= min_frames(label); }

CtcResult ctc_from_log_probs(std::span<const double> log_probs, std::size_t frames,
                             std::size_t classes, const Label& label, std::size_t blank) {
  if (log_probs.size() != frames * classes || frames == 0) {
    throw DimensionError("ctc: expected " + std::to_string(frames) + "x" + std::to_string(classes) +
                         " log-probabilities");
  }
  for (auto s : label.symbols) {
    if (s == blank || s >= classes) {
      throw ContractError("ctc: label index " + std::to_string(s) + " invalid for " +
                          std::to_string(classes) + " classes");
    }
  }
  if (!is_feasible(label, frames)) {
    throw InfeasibleLabelError("ctc: label needs " + std::to_string(min_frames(label)) +
                               " frames but only " + std::to_string(frames) + " are available");
  }

  // Extended label: blank, l1, blank, l2, ..., blank.
  const std::size_t states = 2 * label.size() + 1;
  std::vector<std::size_t> ext(states, blank);
  for (std::size_t i = 0; i < label.size(); ++i) ext[2 * i + 1] = label.symbols[i];
  auto lp = [&](std::size_t t, std::size_t s) { return log_probs[t * classes + ext[s]]; };
  auto can_skip = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  std::vector<double> alpha(frames * states, kNegInf);
  std::vector<double> beta(frames * states, kNegInf);
  alpha[0] = lp(0, 0);
  if (states > 1) alpha[1] = lp(0, 1);
  for (std::size_t t = 1; t < frames; ++t) {
    const double* prev = alpha.data() + (t - 1) * states;
    double* cur = alpha.data() + t * states;
    for (std::size_t s = 0; s < states; ++s) {
      double a = prev[s];
      if (s >= 1) a = log_add(a, prev[s - 1]);
      if (can_skip(s)) a = log_add(a, prev[s - 2]);
      cur[s] = a == kNegInf ? kNegInf : a + lp(t, s);
    }
  }
  const std::size_t last = frames - 1;
  beta[last * states + states - 1] = lp(last, states - 1);
  if (states > 1) beta[last * states + states - 2] = lp(last, states - 2);
  for (std::size_t t = last; t-- > 0;) {
    const double* next = beta.data() + (t + 1) * states;
    double* cur = beta.data() + t * states;
    for (std::size_t s = 0; s < states; ++s) {
      double b = next[s];
      if (s + 1 < states) b = log_add(b, next[s + 1]);
      if (s + 2 < states && can_skip(s + 2)) b = log_add(b, next[s + 2]);
      cur[s] = b == kNegInf ? kNegInf : b + lp(t, s);
    }
  }

  double log_likelihood = alpha[last * states + states - 1];
  if (states > 1) log_likelihood = log_add(log_likelihood, alpha[last * states + states - 2]);

  CtcResult result;
  result.loss = -log_likelihood;
  result.grad.assign(frames * classes, 0.0);
  if (log_likelihood == kNegInf) {
    throw NumericError("ctc: label has zero probability under the given distribution");
  }
  // alpha_t(s) * beta_t(s) counts y_t twice; d(-ln p)/d(ln y_tk) is
  // -sum_{s: ext[s]=k} alpha*beta / (y_tk * p).
  std::vector<double> acc(classes);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(acc.begin(), acc.end(), kNegInf);
    for (std::size_t s = 0; s < states; ++s) {
      const double ab = alpha[t * states + s] + beta[t * states + s];
      acc[ext[s]] = log_add(acc[ext[s]], ab);
    }
    for (std::size_t k = 0; k < classes; ++k) {
      if (acc[k] == kNegInf) continue;
      result.grad[t * classes + k] = -std::exp(acc[k] - log_probs[t * classes + k] - log_likelihood);
    }
  }
  return result;
}

CtcResult ctc_loss(const ProbSequence& probs, const Label& label) {
  if (probs.probs.rank() != 2) throw DimensionError("ctc_loss: probabilities must be [T,A]");
  const std::size_t frames = probs.length();
  const std::size_t classes = probs.classes();
  auto p = probs.probs.data();
  std::vector<double> logs(p.size());
  for (std::size_t t = 0; t < frames; ++t) {
    double row = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      const double v = p[t * classes + k];
      if (!(v >= 0.0 && v <= 1.0)) throw ContractError("ctc_loss: probabilities must lie in [0,1]");
      row += v;
      logs[t * classes + k] = std::log(v);
    }
    if (std::abs(row - 1.0) > 1e-9) {
      throw ContractError("ctc_loss: row " + std::to_string(t) + " sums to " + std::to_string(row));
    }
  }
  CtcResult r = ctc_from_log_probs(logs, frames, classes, label);
  // d/dy = d/d(ln y) / y; zero-probability entries carry no admissible path
  // mass and keep a zero gradient.
  for (std::size_t i = 0; i < r.grad.size(); ++i) {
    r.grad[i] = p[i] > 0.0 ? r.grad[i] / p[i] : 0.0;
  }
  return r;
}

Tensor ctc_loss_op(const Tensor& log_probs, const Label& label) {
  if (log_probs.rank() != 2) throw DimensionError("ctc_loss_op: log-probabilities must be [T,A]");
  CtcResult r = ctc_from_log_probs(log_probs.data(), log_probs.dim(0), log_probs.dim(1), label);
  Tensor out = Tensor::scalar(r.loss);
  if (detail::should_record({&log_probs})) {
    out.impl()->requires_grad = true;
    auto in = log_probs.shared_impl();
    auto oi = out.shared_impl();
    Tape::active().record("ctc_loss", [in, oi, grad = std::move(r.grad)]() {
      if (oi->grad.empty() || !in->requires_grad) return;
      auto& g = in->grad_buffer();
      const double upstream = oi->grad[0];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += upstream * grad[i];
    });
  }
  return out;
}

Path argmax_rows(const ProbSequence& probs) {
  Path path;
  const std::size_t classes = probs.classes();
  auto p = probs.probs.data();
  for (std::size_t t = 0; t < probs.length(); ++t) {
    const double* row = p.data() + t * classes;
    // max_element returns the first maximum: lowest index wins ties.
    path.steps.push_back(static_cast<std::size_t>(std::max_element(row, row + classes) - row));
  }
  return path;
}

Label greedy_decode(const ProbSequence& probs) { return collapse(argmax_rows(probs)); }

}  // namespace dsan
