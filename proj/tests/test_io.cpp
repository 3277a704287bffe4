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

#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "dsan/datagen.hpp"
#include "dsan/errors.hpp"
#include "dsan/io.hpp"
#include "dsan/ops.hpp"

using namespace dsan;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("dsan_io_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ModelConfig small_model() {
  ModelConfig mc;
  mc.blstm.hidden_size = 8;
  return mc;
}

Tensor probe_input() {
  GenConfig gc;
  return render("ab3d", gc, 77).image;
}

}  // namespace

TEST_CASE("image files round trip at 32-bit precision") {
  const fs::path dir = scratch_dir("image");
  Tensor im({1, 1, 2, 3}, std::vector<double>{0.0, 0.1, 0.2, 0.3, 0.4, 1.0});
  write_image(dir / "x.img", im);
  const std::string bytes = read_file(dir / "x.img");
  CHECK(bytes.size() == 4 + 8 + 6 * 4);
  CHECK(bytes.substr(0, 4) == "DSIM");
  std::uint32_t h = 0, w = 0;
  std::memcpy(&h, bytes.data() + 4, 4);
  std::memcpy(&w, bytes.data() + 8, 4);
  CHECK(h == 2);
  CHECK(w == 3);
  Tensor back = read_image(dir / "x.img");
  CHECK(back.shape() == im.shape());
  for (std::size_t i = 0; i < 6; ++i) CHECK(back.data()[i] == static_cast<double>(static_cast<float>(im.data()[i])));
  fs::remove_all(dir);
}

TEST_CASE("malformed image files are rejected") {
  const fs::path dir = scratch_dir("badimage");
  write_file(dir / "magic.img", "XXXX\x01\0\0\0\x01\0\0\0\0\0\0\0");
  CHECK_THROWS_AS(read_image(dir / "magic.img"), DataError);
  write_image(dir / "ok.img", Tensor({1, 1, 2, 2}, 0.5));
  std::string bytes = read_file(dir / "ok.img");
  write_file(dir / "short.img", bytes.substr(0, bytes.size() - 1));
  CHECK_THROWS_AS(read_image(dir / "short.img"), DataError);
  write_file(dir / "long.img", bytes + "x");
  CHECK_THROWS_AS(read_image(dir / "long.img"), DataError);
  CHECK_THROWS_AS(read_image(dir / "missing.img"), DataError);
  CHECK_THROWS_AS(write_image(dir / "rgb.img", Tensor({1, 3, 2, 2})), DimensionError);
  fs::remove_all(dir);
}

TEST_CASE("dataset directories round trip") {
  const fs::path dir = scratch_dir("dataset");
  GenConfig gc;
  const Split split = make_split(gc, 5, 2, 1);
  write_dataset(dir, split.train);
  const std::string tsv = read_file(dir / "labels.tsv");
  CHECK(tsv.starts_with("train_000000\t" + split.train[0].text + "\n"));
  const Dataset back = read_dataset(dir, Alphabet(gc.alphabet_subset));
  REQUIRE(back.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(back[i].id == split.train[i].id);
    CHECK(back[i].label == split.train[i].label);
    CHECK(back[i].image.shape() == split.train[i].image.shape());
  }
  fs::remove_all(dir);
}

TEST_CASE("dataset labels outside the alphabet are named") {
  const fs::path dir = scratch_dir("badlabels");
  write_image(dir / "s1.img", Tensor({1, 1, 32, 32}, 1.0));
  write_file(dir / "labels.tsv", "s1\tab%\n");
  CHECK_THROWS_WITH_AS(read_dataset(dir, Alphabet("abc")), doctest::Contains("'%'"), DataError);
  write_file(dir / "labels.tsv", "no tab here\n");
  CHECK_THROWS_AS(read_dataset(dir, Alphabet("abc")), DataError);
  CHECK_THROWS_AS(read_dataset(dir / "nowhere", Alphabet("abc")), DataError);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint save, load, save is byte identical") {
  DsanModel model(small_model(), 4);
  const std::string first = encode_checkpoint(model);
  CHECK(first.substr(0, 4) == "DSAN");
  const DsanModel loaded = decode_checkpoint(first);
  CHECK(encode_checkpoint(loaded) == first);
  CHECK(loaded.config() == model.config());
}

TEST_CASE("checkpoint round trip preserves probe outputs at 32-bit precision") {
  DsanModel model(small_model(), 5);
  DsanModel loaded = decode_checkpoint(encode_checkpoint(model));
  const Tensor input = probe_input();
  const ProbSequence a = model.predict(input), b = loaded.predict(input);
  REQUIRE(a.probs.shape() == b.probs.shape());
  for (std::size_t i = 0; i < a.probs.numel(); ++i) CHECK(std::abs(a.probs.data()[i] - b.probs.data()[i]) <= 1e-6);
  // Rounding the source parameters to float32 makes the outputs bitwise equal.
  for (const auto& t : model.state()) {
    Tensor alias = t.tensor;
    for (double& v : alias.data()) v = static_cast<double>(static_cast<float>(v));
  }
  const ProbSequence c = model.predict(input);
  CHECK(std::equal(c.probs.data().begin(), c.probs.data().end(), b.probs.data().begin()));
}

TEST_CASE("checkpoint stores configuration variants") {
  for (bool attention : {true, false}) {
    for (bool supervision : {true, false}) {
      ModelConfig mc = small_model();
      mc.attention = attention;
      mc.supervision = supervision;
      mc.alphabet = "xyz019";
      DsanModel model(mc, 2);
      const DsanModel loaded = decode_checkpoint(encode_checkpoint(model));
      CHECK(loaded.config() == mc);
      CHECK(loaded.state().size() == model.state().size());
    }
  }
}

TEST_CASE("corrupted checkpoints are rejected") {
  DsanModel model(small_model(), 6);
  const std::string good = encode_checkpoint(model);
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), DataError);
  std::string bad_version = good;
  bad_version[4] = 9;
  CHECK_THROWS_WITH_AS(decode_checkpoint(bad_version), doctest::Contains("version"), DataError);
  CHECK_THROWS_AS(decode_checkpoint(good.substr(0, good.size() - 4)), DataError);
  CHECK_THROWS_AS(decode_checkpoint(good + "tail"), DataError);
  CHECK_THROWS_AS(decode_checkpoint(good.substr(0, 10)), DataError);

  std::uint32_t header_len = 0;
  std::memcpy(&header_len, good.data() + 8, 4);
  const std::string header = good.substr(12, header_len);
  auto with_header = [&](std::string h, std::size_t payload_delta_floats) {
    std::string out = good.substr(0, 8);
    const auto len = static_cast<std::uint32_t>(h.size());
    out.append(reinterpret_cast<const char*>(&len), 4);
    out += h;
    std::string payload = good.substr(12 + header_len);
    payload.resize(payload.size() + payload_delta_floats * 4, '\0');
    return out + payload;
  };
  // A renamed tensor: the expected name is missing.
  std::string renamed = header;
  renamed.replace(renamed.find("context.fc.bias"), 15, "context.fc.bogs");
  CHECK_THROWS_WITH_AS(decode_checkpoint(with_header(renamed, 0)), doctest::Contains("context.fc.bias"), DataError);
  // A reshaped tensor with the same element count.
  std::string reshaped = header;
  const auto pos = reshaped.find("attention.weight:1x128x3x1");
  REQUIRE(pos != std::string::npos);
  reshaped.replace(pos, 26, "attention.weight:1x128x1x3");
  CHECK_THROWS_WITH_AS(decode_checkpoint(with_header(reshaped, 0)), doctest::Contains("attention.weight"), DataError);
  // An extra tensor.
  CHECK_THROWS_AS(decode_checkpoint(with_header(header + "extra.tensor:2\n", 2)), DataError);
}

TEST_CASE("checkpoint files on disk") {
  const fs::path dir = scratch_dir("ckpt");
  DsanModel model(small_model(), 7);
  save_checkpoint(dir / "m.ckpt", model);
  const DsanModel loaded = load_checkpoint(dir / "m.ckpt");
  save_checkpoint(dir / "again.ckpt", loaded);
  CHECK(read_file(dir / "m.ckpt") == read_file(dir / "again.ckpt"));
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("PGM export scales the mask to 8 bits") {
  Tensor m({1, 1, 2, 3}, std::vector<double>{0.0, 0.5, 1.0, 0.25, 0.75, 0.999});
  const std::string pgm = encode_pgm(m);
  CHECK(pgm.starts_with("P5\n3 2\n255\n"));
  const std::string payload = pgm.substr(pgm.size() - 6);
  CHECK(static_cast<unsigned char>(payload[0]) == 0);
  CHECK(static_cast<unsigned char>(payload[1]) == 128);
  CHECK(static_cast<unsigned char>(payload[2]) == 255);
  const Tensor back = decode_pgm(pgm);
  CHECK(back.shape() == m.shape());
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(back.data()[i] - m.data()[i]) <= 0.5 / 255.0 + 1e-12);
  CHECK_THROWS_AS(decode_pgm("P2\n1 1\n255\n0"), DataError);
  CHECK_THROWS_AS(decode_pgm(pgm.substr(0, pgm.size() - 1)), DataError);
  CHECK_THROWS_AS(encode_pgm(Tensor({2, 2})), DimensionError);
}
