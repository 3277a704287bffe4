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
#include <span>

#include "dsan/tensor.hpp"

/// Differentiable operations. Each op checks shapes exactly; the only
/// broadcast supported is channel_broadcast_mul.
namespace dsan::ops {

enum class Padding { same, valid };

struct Stride2d {
  std::size_t h = 1;
  std::size_t w = 1;
};

// Padding amounts for one spatial axis. Same-padding splits symmetrically and
// puts the odd pixel after (bottom/right).
struct AxisPadding {
  std::size_t out = 0;
  std::size_t before = 0;
  std::size_t after = 0;
};
AxisPadding axis_padding(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding);

// input [N,C,H,W], kernel [K,C,kh,kw] -> [N,K,H',W']; cross-correlation.
Tensor conv2d(const Tensor& input, const Tensor& kernel, Stride2d stride, Padding padding);
// Same, plus a per-output-channel bias [K].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Stride2d stride,
              Padding padding);

// a [M,K] @ b [K,N]
Tensor matmul(const Tensor& a, const Tensor& b);
// x [T,I], weight [O,I], bias [O] -> x @ weight^T + bias, shape [T,O]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
// Sum of a number of same-shape tensors, in order.
Tensor add_n(std::span<const Tensor> terms);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor log(const Tensor& x);

// Row-wise softmax over the last axis of a [T,A] tensor with max subtraction.
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

// features [N,C,H,W] * mask [N,1,H,W], mask broadcast over channels.
Tensor channel_broadcast_mul(const Tensor& features, const Tensor& mask);

// [1,D,H,W] -> [W, H*D]; row w holds column w flattened height-major, then
// channel: out[w, h*D + c] = in[0, c, h, w].
Tensor map_to_sequence(const Tensor& x);

// Running statistics for batch_norm; not trainable.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
};

// Per-channel normalization of x [N,C,H,W] followed by gamma/beta affine.
// In training mode batch statistics are used (biased variance) and the
// running statistics are updated with `momentum`; otherwise the running
// statistics are used.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training, double momentum = 0.1, double eps = 1e-5);

// One LSTM direction over x [T,I]. Gate order in the 4H rows is input,
// forget, output, candidate. `reverse` processes t = T-1 .. 0. Output [T,H]
// is indexed by original time position. Initial hidden and cell state are 0.
Tensor lstm(const Tensor& x, const Tensor& w_input, const Tensor& w_hidden, const Tensor& bias,
            bool reverse);

}  // namespace dsan::ops
