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

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "dsan/datagen.hpp"
#include "dsan/errors.hpp"
#include "dsan/experiment.hpp"
#include "dsan/io.hpp"
#include "dsan/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace dsan;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct SharedFlags {
  std::uint64_t seed = 1;
  std::string out;
  double lambda = 0.1;
  bool no_attention = false;
  std::size_t hidden = 32;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double lr = 0.1;
  double lr_decay = 10.0;
  double momentum = 0.9;
  bool no_augment = false;
  std::string charset = "abcde123";
};

void add_train_flags(CLI::App* cmd, SharedFlags& f) {
  cmd->add_option("--seed", f.seed, "Model initialisation and shuffling seed")->capture_default_str();
  cmd->add_option("--lambda", f.lambda, "Weight of the character-level loss (0 removes that branch)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  cmd->add_flag("--no-attention", f.no_attention, "Drop the text attention module");
  cmd->add_option("--hidden", f.hidden, "BLSTM hidden size per direction")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--epochs", f.epochs, "Training epochs")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--batch-size", f.batch_size, "Mini-batch size")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--lr", f.lr, "Initial learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--lr-decay", f.lr_decay, "Learning rate divisor applied after each epoch")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--momentum", f.momentum, "Momentum coefficient")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  cmd->add_flag("--no-augment", f.no_augment, "Disable rotation and zoom augmentation");
  cmd->add_option("--charset", f.charset, "Model alphabet (case-folded)")->capture_default_str();
}

ModelConfig model_config(const SharedFlags& f) {
  ModelConfig mc;
  mc.blstm.hidden_size = f.hidden;
  mc.attention = !f.no_attention;
  mc.supervision = f.lambda > 0.0;
  mc.alphabet = f.charset;
  return mc;
}

TrainConfig train_config(const SharedFlags& f) {
  TrainConfig tc;
  tc.lambda = f.lambda;
  tc.batch_size = f.batch_size;
  tc.initial_lr = f.lr;
  tc.lr_decay = f.lr_decay;
  tc.momentum = f.momentum;
  tc.epochs = f.epochs;
  tc.seed = f.seed;
  tc.augment = !f.no_augment;
  return tc;
}

// A directory holding labels.tsv is one split; otherwise train/ and test/.
std::pair<Dataset, Dataset> load_splits(const fs::path& dir, const Alphabet& alphabet) {
  if (fs::exists(dir / "labels.tsv")) return {read_dataset(dir, alphabet), {}};
  Dataset train = read_dataset(dir / "train", alphabet);
  Dataset test = fs::exists(dir / "test" / "labels.tsv") ? read_dataset(dir / "test", alphabet) : Dataset{};
  return {std::move(train), std::move(test)};
}

Tensor fit_to_model(const Tensor& image, const DsanModel& model) {
  const bool fits = image.dim(2) == model.config().image_height && image.dim(3) % BackboneConfig::kStride == 0;
  return fits ? image : resize_to_height(image, model.config().image_height);
}

int cmd_gen(GenConfig gc, std::size_t n_train, std::size_t n_test, std::uint64_t seed, const fs::path& out) {
  Alphabet(gc.alphabet_subset);
  if (gc.word_fraction > 0.0) gc.words = default_words();
  for (char c : gc.alphabet_subset) {
    if (!has_glyph(c)) throw DataError("character '" + std::string(1, c) + "' has no glyph");
  }
  const Split split = make_split(gc, n_train, n_test, seed);
  write_dataset(out / "train", split.train);
  write_dataset(out / "test", split.test);
  std::cout << "wrote " << split.train.size() << " train and " << split.test.size() << " test samples to " << out.string()
            << '\n';
  return kOk;
}

int cmd_train(const SharedFlags& f, const fs::path& data, const fs::path& out) {
  const ModelConfig mc = model_config(f);
  const auto [train, test] = load_splits(data, Alphabet(mc.alphabet));
  fs::create_directories(out);
  const fs::path metrics_path = out / "metrics.tsv";
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw DataError("cannot write '" + metrics_path.string() + "'");
  DsanModel model(mc, f.seed);
  const RunResult r = run_training(model, train, test, train_config(f), [&](const EpochMetrics& m, const DsanModel& md) {
    save_checkpoint(out / "model.ckpt", md);
    metrics << format_metrics(m) << '\n';
    metrics.flush();
    std::cout << format_metrics(m) << std::endl;
  });
  std::cout << "checkpoint " << (out / "model.ckpt").string() << " (" << std::fixed << std::setprecision(1) << r.seconds
            << " s)\n";
  return kOk;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data) {
  DsanModel model = load_checkpoint(checkpoint);
  Dataset samples = read_dataset(data, model.alphabet());
  std::cout << "accuracy " << std::fixed << std::setprecision(4) << evaluate(model, samples) << '\n';
  return kOk;
}

int cmd_decode(const fs::path& checkpoint, const fs::path& image_path, const std::string& heatmap) {
  DsanModel model = load_checkpoint(checkpoint);
  const Tensor image = fit_to_model(read_image(image_path), model);
  std::cout << model.transcribe(image) << '\n';
  if (!heatmap.empty()) {
    if (!model.attention()) throw ContractError("--heatmap needs a model with the attention module");
    NoGradGuard no_grad;
    const DsanModel::Output out = model.forward(image, {}, false);
    write_pgm(heatmap, out.mask->mask);
  }
  return kOk;
}

int cmd_selfcheck(bool full, bool inject) {
  check::SuiteOptions options;
  options.quick = !full;
  options.inject_ctc_sign_error = inject;
  const auto results = check::run_suite(options);
  std::cout << check::format_report(results);
  const bool ok = std::all_of(results.begin(), results.end(), [](const check::CheckResult& r) { return r.passed; });
  return ok ? kOk : kData;
}

int cmd_ablate(const SharedFlags& f, const fs::path& data, const fs::path& out, const std::vector<std::uint64_t>& seeds,
               const std::vector<double>& lambdas, bool attention_only) {
  AblationOptions options;
  options.model = model_config(f);
  options.train = train_config(f);
  options.seeds = seeds;
  options.lambdas = lambdas;
  if (attention_only) options.attention = {true};
  const auto [train, test] = load_splits(data, Alphabet(options.model.alphabet));
  if (test.empty()) throw DataError("ablate needs a test split under '" + data.string() + "'");
  fs::create_directories(out);
  std::ofstream runs(out / "runs.tsv", std::ios::trunc);
  runs << "lambda\tattention\tseed\tepoch\tlr\tl_context\tl_char\tl_total\ttrain_acc\teval_acc\tseconds\n";
  const auto cells = run_ablation(train, test, options, [&](const AblationCell& c, std::uint64_t seed, const RunResult& r) {
    for (const auto& m : r.log) {
      runs << c.lambda << '\t' << (c.attention ? "on" : "off") << '\t' << seed << '\t' << format_metrics(m) << '\t'
           << r.seconds << '\n';
    }
    runs.flush();
    std::cout << "lambda=" << c.lambda << " attention=" << (c.attention ? "on" : "off") << " seed=" << seed
              << " accuracy=" << std::fixed << std::setprecision(4) << r.test_accuracy << " (" << std::setprecision(1)
              << r.seconds << " s)" << std::defaultfloat << std::endl;
  });
  const std::string report = format_ablation(cells);
  write_file(out / "report.tsv", report);
  std::cout << report;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-supervised attention network for text-strip recognition"};
  app.require_subcommand(1);
  SharedFlags flags;

  auto* gen = app.add_subcommand("gen", "Render a synthetic train/test dataset");
  GenConfig gc;
  std::size_t n_train = 2000, n_test = 200;
  std::uint64_t gen_seed = 7;
  std::string gen_out = "data";
  gen->add_option("--n-train", n_train)->capture_default_str();
  gen->add_option("--n-test", n_test)->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--charset", gc.alphabet_subset)->capture_default_str();
  gen->add_option("--min-len", gc.min_length)->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--max-len", gc.max_length)->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--noise", gc.noise)->capture_default_str()->check(CLI::Range(0.0, 0.5));
  gen->add_option("--word-fraction", gc.word_fraction, "Share of labels drawn from the built-in word list")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  gen->add_option("--out", gen_out)->capture_default_str();

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint each epoch");
  add_train_flags(train, flags);
  std::string data_dir, train_out = "run";
  train->add_option("data", data_dir, "Dataset directory (train/ and test/, or one labels.tsv)")->required();
  train->add_option("--out", train_out, "Output directory for model.ckpt and metrics.tsv")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "Word accuracy of a checkpoint on a dataset");
  std::string ckpt, eval_data;
  eval->add_option("checkpoint", ckpt)->required();
  eval->add_option("data", eval_data, "Directory with labels.tsv")->required();

  auto* decode = app.add_subcommand("decode", "Transcribe one image file");
  std::string image_path, heatmap;
  decode->add_option("checkpoint", ckpt)->required();
  decode->add_option("image", image_path)->required();
  decode->add_option("--heatmap", heatmap, "Write the attention mask as a binary PGM");

  auto* selfcheck = app.add_subcommand("selfcheck", "Oracle, gradient and invariant checks");
  bool full = false, inject = false;
  selfcheck->add_flag("--full", full, "Use the full instance counts");
  selfcheck->add_flag("--inject-ctc-sign-error", inject)->group("");

  auto* ablate = app.add_subcommand("ablate", "Lambda sweep and attention on/off experiment");
  add_train_flags(ablate, flags);
  std::string ablate_data, ablate_out = "ablation";
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<double> lambdas{0.0, 0.05, 0.1, 0.15};
  bool attention_only = false;
  ablate->add_option("data", ablate_data, "Dataset directory with train/ and test/")->required();
  ablate->add_option("--seeds", seeds)->capture_default_str()->delimiter(',');
  ablate->add_option("--lambdas", lambdas)->capture_default_str()->delimiter(',');
  ablate->add_flag("--attention-only", attention_only, "Skip the attention-off half of the sweep");
  ablate->add_option("--out", ablate_out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen) return cmd_gen(gc, n_train, n_test, gen_seed, gen_out);
    if (*train) return cmd_train(flags, data_dir, train_out);
    if (*eval) return cmd_eval(ckpt, eval_data);
    if (*decode) return cmd_decode(ckpt, image_path, heatmap);
    if (*selfcheck) return cmd_selfcheck(full, inject);
    if (*ablate) return cmd_ablate(flags, ablate_data, ablate_out, seeds, lambdas, attention_only);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
