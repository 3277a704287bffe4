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
#include <random>
#include <string>
#include <vector>

#include "dsan/tensor.hpp"

namespace dsan {

using Rng = std::mt19937_64;

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;  // false for running statistics and config records
};

using StateList = std::vector<NamedTensor>;

// Trainable tensor filled from U(-bound, bound).
Tensor uniform_parameter(Shape shape, double bound, Rng& rng);
// Trainable tensor filled with a constant.
Tensor constant_parameter(Shape shape, double value);

// Deterministic 64-bit mixing of a seed with a stream index (splitmix64).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace dsan
