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

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "dsan/errors.hpp"
#include "dsan/module.hpp"
#include "dsan/training.hpp"

namespace dsan {

namespace {

void require_gray_image(const Tensor& image, const char* who) {
  if (image.rank() != 4 || image.dim(0) != 1) {
    throw DimensionError(std::string(who) + ": image must be [1,C,H,W], got " + shape_str(image.shape()));
  }
}

// Bilinear sample of channel plane `src` (h x w) at (y, x); `fill` outside.
double sample_bilinear(const double* src, std::size_t h, std::size_t w, double y, double x, double fill) {
  const double y0f = std::floor(y), x0f = std::floor(x);
  const auto y0 = static_cast<long>(y0f), x0 = static_cast<long>(x0f);
  const double fy = y - y0f, fx = x - x0f;
  auto at = [&](long yy, long xx) {
    if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) return fill;
    return src[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
  };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
         fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
}

}  // namespace

std::size_t scaled_width(std::size_t height, std::size_t width, std::size_t target_height) {
  const double exact = static_cast<double>(width) * static_cast<double>(target_height) / static_cast<double>(height);
  const auto rounded = static_cast<std::size_t>(std::llround(exact / 8.0)) * 8;
  return std::max<std::size_t>(rounded, 8);
}

Tensor resize_to_height(const Tensor& image, std::size_t height) {
  require_gray_image(image, "resize_to_height");
  const std::size_t c = image.dim(1), h = image.dim(2), w = image.dim(3);
  const std::size_t nw = scaled_width(h, w, height);
  if (nw == w && height == h) return image.clone();
  Tensor out({1, c, height, nw});
  const double sy = static_cast<double>(h) / static_cast<double>(height);
  const double sx = static_cast<double>(w) / static_cast<double>(nw);
  auto src = image.data();
  auto dst = out.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* plane = src.data() + ch * h * w;
    for (std::size_t y = 0; y < height; ++y) {
      const double yy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
      for (std::size_t x = 0; x < nw; ++x) {
        const double xx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
        dst[(ch * height + y) * nw + x] = sample_bilinear(plane, h, w, yy, xx, 0.0);
      }
    }
  }
  return out;
}

AugmentedImage augment_with(const Tensor& image, const AugmentationPolicy& policy, double rotation_deg,
                            double zoom) {
  require_gray_image(image, "augment");
  if (zoom <= 0.0) throw ContractError("augment: zoom must be positive");
  const std::size_t c = image.dim(1), h = image.dim(2), w = image.dim(3);
  const double theta = rotation_deg * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
  Tensor warped({1, c, h, w});
  auto src = image.data();
  auto dst = warped.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* plane = src.data() + ch * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        // Inverse map: undo zoom, then undo rotation about the centre.
        const double dx = (static_cast<double>(x) - cx) / zoom;
        const double dy = (static_cast<double>(y) - cy) / zoom;
        const double sx = cos_t * dx + sin_t * dy + cx;
        const double sy = -sin_t * dx + cos_t * dy + cy;
        dst[(ch * h + y) * w + x] = sample_bilinear(plane, h, w, sy, sx, policy.background);
      }
    }
  }
  AugmentedImage out;
  out.image = resize_to_height(warped, policy.target_height);
  out.rotation_deg = rotation_deg;
  out.zoom = zoom;
  return out;
}

AugmentedImage augment(const Tensor& image, const AugmentationPolicy& policy, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> rotation(-policy.max_rotation_deg, policy.max_rotation_deg);
  std::uniform_real_distribution<double> zoom(policy.min_zoom, policy.max_zoom);
  const double r = rotation(rng);
  const double z = zoom(rng);
  return augment_with(image, policy, r, z);
}

}  // namespace dsan
