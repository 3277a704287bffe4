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

#include "dsan/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "dsan/errors.hpp"

namespace dsan {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

constexpr std::string_view kImageMagic = "DSIM";
constexpr std::string_view kCheckpointMagic = "DSAN";

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_f32(std::string& out, double v) {
  const auto f = static_cast<float>(v);
  char b[4];
  std::memcpy(b, &f, 4);
  out.append(b, 4);
}

class Reader {
 public:
  Reader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw DataError(what_ + ": truncated");
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4).data(), 4);
    return v;
  }
  double f32() {
    float f;
    std::memcpy(&f, take(4).data(), 4);
    return static_cast<double>(f);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
  std::string what_;
};

void require_image_shape(const Tensor& image, const char* who) {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 1) {
    throw DimensionError(std::string(who) + ": expected [1,1,H,W], got " + shape_str(image.shape()));
  }
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

void write_image(const fs::path& path, const Tensor& image) {
  require_image_shape(image, "write_image");
  std::string out(kImageMagic);
  put_u32(out, static_cast<std::uint32_t>(image.dim(2)));
  put_u32(out, static_cast<std::uint32_t>(image.dim(3)));
  for (double v : image.data()) put_f32(out, v);
  write_file(path, out);
}

Tensor read_image(const fs::path& path) {
  const std::string bytes = read_file(path);
  Reader r(bytes, "image '" + path.string() + "'");
  if (r.take(4) != kImageMagic) throw DataError("image '" + path.string() + "': bad magic");
  const std::size_t h = r.u32(), w = r.u32();
  if (h == 0 || w == 0) throw DataError("image '" + path.string() + "': zero size");
  Tensor image({1, 1, h, w});
  for (double& v : image.data()) {
    v = r.f32();
    if (!std::isfinite(v)) throw DataError("image '" + path.string() + "': non-finite pixel");
  }
  if (!r.done()) throw DataError("image '" + path.string() + "': trailing bytes");
  return image;
}

void write_dataset(const fs::path& dir, const Dataset& data) {
  fs::create_directories(dir);
  std::string tsv;
  for (const auto& s : data) {
    if (s.id.find_first_of("\t\n/") != std::string::npos) throw DataError("invalid sample id '" + s.id + "'");
    write_image(dir / (s.id + ".img"), s.image);
    tsv += s.id + '\t' + s.text + '\n';
  }
  write_file(dir / "labels.tsv", tsv);
}

Dataset read_dataset(const fs::path& dir, const Alphabet& alphabet) {
  const fs::path index = dir / "labels.tsv";
  if (!fs::exists(index)) throw DataError("dataset '" + dir.string() + "' has no labels.tsv");
  std::istringstream in(read_file(index));
  Dataset data;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw DataError("labels.tsv line " + std::to_string(line_no) + ": expected '<id>\\t<label>'");
    }
    Sample s;
    s.id = line.substr(0, tab);
    s.text = line.substr(tab + 1);
    for (char c : s.text) {
      if (!alphabet.contains(c)) {
        throw DataError("sample '" + s.id + "': character '" + std::string(1, c) + "' is not in the alphabet");
      }
    }
    s.label = alphabet.encode(s.text);
    s.image = read_image(dir / (s.id + ".img"));
    data.push_back(std::move(s));
  }
  return data;
}

namespace {

Tensor record_of(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

StateList config_records(const ModelConfig& c) {
  const auto& b = c.backbone;
  std::vector<double> codepoints;
  for (unsigned char ch : c.alphabet) codepoints.push_back(ch);
  auto d = [](std::size_t v) { return static_cast<double>(v); };
  return {
      {"config.input_channels", record_of({d(b.input_channels)}), false},
      {"config.stage_blocks",
       record_of({d(b.stage_blocks[0]), d(b.stage_blocks[1]), d(b.stage_blocks[2]), d(b.stage_blocks[3])}), false},
      {"config.stage_channels",
       record_of({d(b.stage_channels[0]), d(b.stage_channels[1]), d(b.stage_channels[2]), d(b.stage_channels[3])}),
       false},
      {"config.hidden", record_of({d(c.blstm.hidden_size)}), false},
      {"config.attention", record_of({c.attention ? 1.0 : 0.0}), false},
      {"config.supervision", record_of({c.supervision ? 1.0 : 0.0}), false},
      {"config.image_height", record_of({d(c.image_height)}), false},
      {"config.alphabet", Tensor({codepoints.size()}, codepoints), false},
  };
}

std::size_t as_count(const std::map<std::string, Tensor>& t, const std::string& name, std::size_t i = 0) {
  auto it = t.find(name);
  if (it == t.end()) throw DataError("checkpoint is missing '" + name + "'");
  if (i >= it->second.numel()) throw DataError("checkpoint record '" + name + "' is too short");
  const double v = it->second.data()[i];
  if (v < 0.0 || v != std::floor(v) || v > 1e7) throw DataError("checkpoint record '" + name + "' is not a count");
  return static_cast<std::size_t>(v);
}

ModelConfig config_from(const std::map<std::string, Tensor>& t) {
  ModelConfig c;
  c.backbone.input_channels = as_count(t, "config.input_channels");
  for (std::size_t i = 0; i < 4; ++i) {
    c.backbone.stage_blocks[i] = as_count(t, "config.stage_blocks", i);
    c.backbone.stage_channels[i] = as_count(t, "config.stage_channels", i);
  }
  c.blstm.hidden_size = as_count(t, "config.hidden");
  c.attention = as_count(t, "config.attention") != 0;
  c.supervision = as_count(t, "config.supervision") != 0;
  c.image_height = as_count(t, "config.image_height");
  const auto it = t.find("config.alphabet");
  if (it == t.end()) throw DataError("checkpoint is missing 'config.alphabet'");
  c.alphabet.clear();
  for (std::size_t i = 0; i < it->second.numel(); ++i) {
    c.alphabet.push_back(static_cast<char>(as_count(t, "config.alphabet", i)));
  }
  return c;
}

std::string shape_token(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

}  // namespace

std::string encode_checkpoint(const DsanModel& model) {
  StateList all = config_records(model.config());
  for (auto& t : model.state()) all.push_back(t);
  std::string header;
  for (const auto& t : all) header += t.name + ':' + shape_token(t.tensor.shape()) + '\n';
  std::string out(kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  for (const auto& t : all) {
    for (double v : t.tensor.data()) put_f32(out, v);
  }
  return out;
}

DsanModel decode_checkpoint(std::string_view bytes) {
  Reader r(bytes, "checkpoint");
  if (r.take(4) != kCheckpointMagic) throw DataError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t header_len = r.u32();
  std::istringstream header(std::string(r.take(header_len)));
  std::vector<std::pair<std::string, Shape>> entries;
  std::string line;
  while (std::getline(header, line)) {
    const auto colon = line.rfind(':');
    if (colon == std::string::npos || colon == 0) throw DataError("checkpoint: malformed header line '" + line + "'");
    Shape shape;
    std::istringstream dims(line.substr(colon + 1));
    std::string tok;
    while (std::getline(dims, tok, 'x')) {
      if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos || tok.size() > 9) {
        throw DataError("checkpoint: malformed shape in '" + line + "'");
      }
      shape.push_back(std::stoul(tok));
    }
    if (shape.empty() || shape_numel(shape) == 0) throw DataError("checkpoint: empty shape in '" + line + "'");
    entries.emplace_back(line.substr(0, colon), shape);
  }
  std::map<std::string, Tensor> tensors;
  for (const auto& [name, shape] : entries) {
    Tensor t(shape);
    for (double& v : t.data()) v = r.f32();
    if (!tensors.emplace(name, t).second) throw DataError("checkpoint: duplicate tensor '" + name + "'");
  }
  if (!r.done()) throw DataError("checkpoint: trailing bytes after payload");

  const ModelConfig config = config_from(tensors);
  DsanModel model = [&] {
    try {
      return DsanModel(config, 0);
    } catch (const Error& e) {
      throw DataError(std::string("checkpoint: invalid configuration: ") + e.what());
    }
  }();
  std::size_t matched = 0;
  for (const auto& t : model.state()) {
    auto it = tensors.find(t.name);
    if (it == tensors.end()) throw DataError("checkpoint is missing tensor '" + t.name + "'");
    if (it->second.shape() != t.tensor.shape()) {
      throw DataError("checkpoint tensor '" + t.name + "' has shape " + shape_str(it->second.shape()) +
                      ", expected " + shape_str(t.tensor.shape()));
    }
    auto src = it->second.data();
    Tensor target = t.tensor;
    std::copy(src.begin(), src.end(), target.data().begin());
    ++matched;
  }
  const std::size_t records = config_records(config).size();
  if (matched + records != tensors.size()) throw DataError("checkpoint contains unexpected tensors");
  return model;
}

void save_checkpoint(const fs::path& path, const DsanModel& model) { write_file(path, encode_checkpoint(model)); }

DsanModel load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path)); }

std::string encode_pgm(const Tensor& map) {
  require_image_shape(map, "encode_pgm");
  const std::size_t h = map.dim(2), w = map.dim(3);
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (double v : map.data()) {
    const double clamped = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
  }
  return out;
}

Tensor decode_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw DataError("pgm: truncated header");
    return std::string(bytes.substr(start, pos - start));
  };
  if (token() != "P5") throw DataError("pgm: not a binary PGM");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::logic_error&) {
    throw DataError("pgm: malformed header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) throw DataError("pgm: unsupported dimensions or maxval");
  ++pos;
  if (bytes.size() < pos || bytes.size() - pos != w * h) throw DataError("pgm: payload size mismatch");
  Tensor out({1, 1, h, w});
  auto dst = out.data();
  for (std::size_t i = 0; i < w * h; ++i) {
    dst[i] = static_cast<unsigned char>(bytes[pos + i]) / static_cast<double>(maxval);
  }
  return out;
}

void write_pgm(const fs::path& path, const Tensor& map) { write_file(path, encode_pgm(map)); }

}  // namespace dsan
