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

#include <filesystem>
#include <string>
#include <string_view>

#include "dsan/model.hpp"
#include "dsan/training.hpp"

namespace dsan {

// Grayscale image file: "DSIM", u32 height, u32 width (little endian), then
// height*width float32 values in row-major order. Images are [1,1,H,W].
void write_image(const std::filesystem::path& path, const Tensor& image);
Tensor read_image(const std::filesystem::path& path);

// Dataset directory: labels.tsv with one "<id>\t<label>" line per sample
// and one <id>.img file per sample.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
// Every label character must belong to `alphabet`; otherwise DataError
// naming the character and the sample.
Dataset read_dataset(const std::filesystem::path& dir, const Alphabet& alphabet);

// Checkpoint: "DSAN", u32 version, u32 header length, a header of
// "name:d0xd1x..." lines, then float32 payloads in header order. The model
// configuration is stored as "config.*" tensors, so a checkpoint is
// self-describing. Saving a loaded checkpoint reproduces it byte for byte.
inline constexpr std::uint32_t kCheckpointVersion = 1;
std::string encode_checkpoint(const DsanModel& model);
DsanModel decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const DsanModel& model);
DsanModel load_checkpoint(const std::filesystem::path& path);

// Binary PGM (P5, maxval 255) of a [1,1,h,w] map with values in [0,1].
std::string encode_pgm(const Tensor& map);
Tensor decode_pgm(std::string_view bytes);
void write_pgm(const std::filesystem::path& path, const Tensor& map);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace dsan
