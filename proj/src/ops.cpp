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

#include "dsan/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "dsan/errors.hpp"

namespace dsan::ops {

namespace {

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;
using MapRowVec = Eigen::Map<Eigen::RowVectorXd>;
using CMapRowVec = Eigen::Map<const Eigen::RowVectorXd>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " +
                         std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

// Marks `out` as tracked and records `fn` when any input requires a gradient.
// The closure only runs if the output actually received a gradient.
template <typename Fn>
void record(std::string_view op, Tensor& out, std::initializer_list<const Tensor*> inputs, Fn fn) {
  if (!detail::should_record(inputs)) return;
  out.impl()->requires_grad = true;
  ImplPtr out_impl = out.shared_impl();
  Tape::active().record(op, [out_impl, fn = std::move(fn)]() {
    if (out_impl->grad.empty()) return;
    fn(out_impl->grad);
  });
}

// Gradient buffer of an input, or nullptr if it does not track gradients.
std::vector<double>* grad_of(const ImplPtr& impl) {
  return impl->requires_grad ? &impl->grad_buffer() : nullptr;
}

struct ConvGeometry {
  std::size_t n, c, h, w, k, kh, kw, oh, ow;
  AxisPadding pad_h, pad_w;
  Stride2d stride;
  std::size_t rows() const { return c * kh * kw; }
  std::size_t cols() const { return oh * ow; }
  bool direct() const {
    return kh == 1 && kw == 1 && stride.h == 1 && stride.w == 1 && pad_h.before == 0 &&
           pad_w.before == 0 && oh == h && ow == w;
  }
};

void im2col(const double* src, const ConvGeometry& g, double* col) {
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = col + ((c * g.kh + i) * g.kw + j) * g.cols();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride.h + i) -
                          static_cast<std::ptrdiff_t>(g.pad_h.before);
          double* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.ow, 0.0);
            continue;
          }
          const double* line = src + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride.w + j) -
                            static_cast<std::ptrdiff_t>(g.pad_w.before);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w))
                          ? 0.0
                          : line[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dst) {
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((c * g.kh + i) * g.kw + j) * g.cols();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride.h + i) -
                          static_cast<std::ptrdiff_t>(g.pad_h.before);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* line = dst + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const double* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride.w + j) -
                            static_cast<std::ptrdiff_t>(g.pad_w.before);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            line[static_cast<std::size_t>(ix)] += src[ox];
          }
        }
      }
    }
  }
}

Tensor conv2d_impl(const Tensor& input, const Tensor& kernel, const Tensor* bias, Stride2d stride,
                   Padding padding) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  if (stride.h < 1 || stride.w < 1) throw ContractError("conv2d: stride components must be >= 1");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.k = kernel.dim(0);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  if (kernel.dim(1) != g.c) {
    throw DimensionError("conv2d: input has " + std::to_string(g.c) + " channels but kernel expects " +
                         std::to_string(kernel.dim(1)));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.k)) {
    throw DimensionError("conv2d: bias must be [" + std::to_string(g.k) + "], got " +
                         shape_str(bias->shape()));
  }
  g.stride = stride;
  g.pad_h = axis_padding(g.h, g.kh, stride.h, padding);
  g.pad_w = axis_padding(g.w, g.kw, stride.w, padding);
  g.oh = g.pad_h.out;
  g.ow = g.pad_w.out;

  Tensor out({g.n, g.k, g.oh, g.ow});
  const std::size_t rows = g.rows();
  const std::size_t cols = g.cols();
  const bool direct = g.direct();
  std::vector<double> col(direct ? 0 : rows * cols);
  CMapMat weights(kernel.data().data(), static_cast<Eigen::Index>(g.k),
                  static_cast<Eigen::Index>(rows));
  const double* in = input.data().data();
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* src = in + n * g.c * g.h * g.w;
    if (!direct) im2col(src, g, col.data());
    CMapMat patches(direct ? src : col.data(), static_cast<Eigen::Index>(rows),
                    static_cast<Eigen::Index>(cols));
    MapMat o(out.data().data() + n * g.k * cols, static_cast<Eigen::Index>(g.k),
             static_cast<Eigen::Index>(cols));
    o.noalias() = weights * patches;
    if (bias) o.colwise() += CMapVec(bias->data().data(), static_cast<Eigen::Index>(g.k));
  }

  ImplPtr in_impl = input.shared_impl();
  ImplPtr k_impl = kernel.shared_impl();
  ImplPtr b_impl = bias ? bias->shared_impl() : nullptr;
  auto backward_fn = [g, in_impl, k_impl, b_impl](const std::vector<double>& go) {
    const std::size_t rows = g.rows(), cols = g.cols();
    const auto krows = static_cast<Eigen::Index>(g.k);
    const auto r = static_cast<Eigen::Index>(rows);
    const auto cl = static_cast<Eigen::Index>(cols);
    auto* gi = grad_of(in_impl);
    auto* gk = grad_of(k_impl);
    auto* gb = b_impl ? grad_of(b_impl) : nullptr;
    const bool direct = g.direct();
    std::vector<double> col(direct ? 0 : rows * cols);
    std::vector<double> dcol(gi && !direct ? rows * cols : 0);
    CMapMat weights(k_impl->data.data(), krows, r);
    for (std::size_t n = 0; n < g.n; ++n) {
      CMapMat gout(go.data() + n * g.k * cols, krows, cl);
      if (gb) MapVec(gb->data(), krows) += gout.rowwise().sum();
      const double* src = in_impl->data.data() + n * g.c * g.h * g.w;
      if (gk) {
        if (!direct) im2col(src, g, col.data());
        CMapMat patches(direct ? src : col.data(), r, cl);
        MapMat(gk->data(), krows, r).noalias() += gout * patches.transpose();
      }
      if (gi) {
        double* dst = gi->data() + n * g.c * g.h * g.w;
        if (direct) {
          MapMat(dst, r, cl).noalias() += weights.transpose() * gout;
        } else {
          MapMat(dcol.data(), r, cl).noalias() = weights.transpose() * gout;
          col2im_add(dcol.data(), g, dst);
        }
      }
    }
  };
  if (bias) {
    record("conv2d", out, {&input, &kernel, bias}, backward_fn);
  } else {
    record("conv2d", out, {&input, &kernel}, backward_fn);
  }
  return out;
}

template <typename Forward, typename Derivative>
Tensor unary(const char* name, const Tensor& x, Forward f, Derivative dydx) {
  Tensor out(x.shape());
  auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = f(xs[i]);
  ImplPtr xi = x.shared_impl();
  // The tape entry owns the output, so y_raw outlives the closure.
  TensorImpl* y_raw = out.impl();
  record(name, out, {&x}, [xi, y_raw, dydx](const std::vector<double>& go) {
    auto* gx = grad_of(xi);
    if (!gx) return;
    for (std::size_t i = 0; i < go.size(); ++i) gx->at(i) += go[i] * dydx(xi->data[i], y_raw->data[i]);
  });
  return out;
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

AxisPadding axis_padding(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  if (stride < 1) throw ContractError("stride must be >= 1");
  AxisPadding p;
  if (padding == Padding::same) {
    p.out = (in + stride - 1) / stride;
    const std::size_t needed = (p.out - 1) * stride + kernel;
    const std::size_t total = needed > in ? needed - in : 0;
    p.before = total / 2;
    p.after = total - p.before;
  } else {
    if (kernel > in) {
      throw DimensionError("kernel extent " + std::to_string(kernel) + " exceeds input extent " +
                           std::to_string(in));
    }
    p.out = (in - kernel) / stride + 1;
  }
  return p;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, Stride2d stride, Padding padding) {
  return conv2d_impl(input, kernel, nullptr, stride, padding);
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Stride2d stride,
              Padding padding) {
  return conv2d_impl(input, kernel, &bias, stride, padding);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul", "lhs");
  require_rank(b, 2, "matmul", "rhs");
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  if (b.dim(0) != a.dim(1)) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " @ " +
                         shape_str(b.shape()));
  }
  Tensor out({a.dim(0), b.dim(1)});
  MapMat(out.data().data(), m, n).noalias() =
      CMapMat(a.data().data(), m, k) * CMapMat(b.data().data(), k, n);
  ImplPtr ai = a.shared_impl(), bi = b.shared_impl();
  record("matmul", out, {&a, &b}, [ai, bi, m, k, n](const std::vector<double>& go) {
    CMapMat g(go.data(), m, n);
    if (auto* ga = grad_of(ai)) MapMat(ga->data(), m, k).noalias() += g * CMapMat(bi->data.data(), k, n).transpose();
    if (auto* gb = grad_of(bi)) MapMat(gb->data(), k, n).noalias() += CMapMat(ai->data.data(), m, k).transpose() * g;
  });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear", "input");
  require_rank(weight, 2, "linear", "weight");
  if (weight.dim(1) != x.dim(1) || bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw DimensionError("linear: incompatible shapes " + shape_str(x.shape()) + ", weight " +
                         shape_str(weight.shape()) + ", bias " + shape_str(bias.shape()));
  }
  const auto t = static_cast<Eigen::Index>(x.dim(0));
  const auto in = static_cast<Eigen::Index>(x.dim(1));
  const auto o = static_cast<Eigen::Index>(weight.dim(0));
  Tensor out({x.dim(0), weight.dim(0)});
  MapMat y(out.data().data(), t, o);
  y.noalias() = CMapMat(x.data().data(), t, in) * CMapMat(weight.data().data(), o, in).transpose();
  y.rowwise() += CMapRowVec(bias.data().data(), o);
  ImplPtr xi = x.shared_impl(), wi = weight.shared_impl(), bi = bias.shared_impl();
  record("linear", out, {&x, &weight, &bias}, [xi, wi, bi, t, in, o](const std::vector<double>& go) {
    CMapMat g(go.data(), t, o);
    if (auto* gx = grad_of(xi)) MapMat(gx->data(), t, in).noalias() += g * CMapMat(wi->data.data(), o, in);
    if (auto* gw = grad_of(wi)) MapMat(gw->data(), o, in).noalias() += g.transpose() * CMapMat(xi->data.data(), t, in);
    if (auto* gb = grad_of(bi)) MapRowVec(gb->data(), o) += g.colwise().sum();
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto av = a.data(), bv = b.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  ImplPtr ai = a.shared_impl(), bi = b.shared_impl();
  record("add", out, {&a, &b}, [ai, bi](const std::vector<double>& go) {
    if (auto* ga = grad_of(ai)) for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i];
    if (auto* gb = grad_of(bi)) for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] += go[i];
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  auto av = a.data(), bv = b.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  ImplPtr ai = a.shared_impl(), bi = b.shared_impl();
  record("sub", out, {&a, &b}, [ai, bi](const std::vector<double>& go) {
    if (auto* ga = grad_of(ai)) for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i];
    if (auto* gb = grad_of(bi)) for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] -= go[i];
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  auto av = a.data(), bv = b.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  ImplPtr ai = a.shared_impl(), bi = b.shared_impl();
  record("mul", out, {&a, &b}, [ai, bi](const std::vector<double>& go) {
    if (auto* ga = grad_of(ai)) for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] * bi->data[i];
    if (auto* gb = grad_of(bi)) for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] += go[i] * ai->data[i];
  });
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out(a.shape());
  auto av = a.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * factor;
  ImplPtr ai = a.shared_impl();
  record("scale", out, {&a}, [ai, factor](const std::vector<double>& go) {
    if (auto* ga = grad_of(ai)) for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] * factor;
  });
  return out;
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  Tensor out = Tensor::scalar(total);
  ImplPtr ai = a.shared_impl();
  record("sum", out, {&a}, [ai](const std::vector<double>& go) {
    if (auto* ga = grad_of(ai)) for (double& g : *ga) g += go[0];
  });
  return out;
}

Tensor add_n(std::span<const Tensor> terms) {
  if (terms.empty()) throw ContractError("add_n: no terms");
  Tensor acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0 ? v : 0.0; },
               [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor log(const Tensor& x) {
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows", "input");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out(x.shape());
  auto xv = x.data();
  auto yv = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double* y = yv.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (y[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
  }
  ImplPtr xi = x.shared_impl();
  TensorImpl* y_raw = out.impl();
  record("softmax_rows", out, {&x}, [xi, y_raw, rows, cols](const std::vector<double>& go) {
    auto* gx = grad_of(xi);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = y_raw->data.data() + r * cols;
      const double* g = go.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) (*gx)[r * cols + c] += y[c] * (g[c] - dot);
    }
  });
  return out;
}

Tensor log_softmax_rows(const Tensor& x) {
  require_rank(x, 2, "log_softmax_rows", "input");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out(x.shape());
  auto xv = x.data();
  auto yv = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double* y = yv.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(in[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) y[c] = in[c] - lse;
  }
  ImplPtr xi = x.shared_impl();
  TensorImpl* y_raw = out.impl();
  record("log_softmax_rows", out, {&x}, [xi, y_raw, rows, cols](const std::vector<double>& go) {
    auto* gx = grad_of(xi);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = y_raw->data.data() + r * cols;
      const double* g = go.data() + r * cols;
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) total += g[c];
      for (std::size_t c = 0; c < cols; ++c) (*gx)[r * cols + c] += g[c] - std::exp(y[c]) * total;
    }
  });
  return out;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) {
        throw DimensionError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(s));
      }
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  Tensor out(out_shape);
  const std::size_t out_chunk = out_shape[axis] * inner;
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> chunks;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t chunk = p.dim(axis) * inner;
    offsets.push_back(offset);
    chunks.push_back(chunk);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().data() + o * chunk, chunk, out.data().data() + o * out_chunk + offset);
    }
    offset += chunk;
  }
  bool track = false;
  for (const auto& p : parts) track = track || p.requires_grad();
  if (track && Tape::active().enabled()) {
    out.impl()->requires_grad = true;
    std::vector<ImplPtr> impls;
    for (const auto& p : parts) impls.push_back(p.shared_impl());
    ImplPtr oi = out.shared_impl();
    Tape::active().record("concat", [oi, impls, offsets, chunks, outer, out_chunk]() {
      if (oi->grad.empty()) return;
      for (std::size_t k = 0; k < impls.size(); ++k) {
        auto* gp = grad_of(impls[k]);
        if (!gp) continue;
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = oi->grad.data() + o * out_chunk + offsets[k];
          double* dst = gp->data() + o * chunks[k];
          for (std::size_t i = 0; i < chunks[k]; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError("slice: axis out of range for " + shape_str(s));
  if (begin >= end || end > s[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for extent " + std::to_string(s[axis]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const std::size_t in_chunk = s[axis] * inner;
  const std::size_t out_chunk = (end - begin) * inner;
  const std::size_t skip = begin * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.data().data() + o * in_chunk + skip, out_chunk, out.data().data() + o * out_chunk);
  }
  ImplPtr xi = x.shared_impl();
  record("slice", out, {&x}, [xi, outer, in_chunk, out_chunk, skip](const std::vector<double>& go) {
    auto* gx = grad_of(xi);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o) {
      double* dst = gx->data() + o * in_chunk + skip;
      const double* src = go.data() + o * out_chunk;
      for (std::size_t i = 0; i < out_chunk; ++i) dst[i] += src[i];
    }
  });
  return out;
}

Tensor channel_broadcast_mul(const Tensor& features, const Tensor& mask) {
  require_rank(features, 4, "channel_broadcast_mul", "features");
  require_rank(mask, 4, "channel_broadcast_mul", "mask");
  const std::size_t n = features.dim(0), c = features.dim(1), h = features.dim(2), w = features.dim(3);
  if (mask.dim(0) != n || mask.dim(1) != 1 || mask.dim(2) != h || mask.dim(3) != w) {
    throw DimensionError("channel_broadcast_mul: mask " + shape_str(mask.shape()) +
                         " incompatible with features " + shape_str(features.shape()));
  }
  const std::size_t plane = h * w;
  Tensor out(features.shape());
  auto f = features.data();
  auto m = mask.data();
  auto o = out.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p)
        o[(b * c + ch) * plane + p] = f[(b * c + ch) * plane + p] * m[b * plane + p];
  ImplPtr fi = features.shared_impl(), mi = mask.shared_impl();
  record("channel_broadcast_mul", out, {&features, &mask}, [fi, mi, n, c, plane](const std::vector<double>& go) {
    auto* gf = grad_of(fi);
    auto* gm = grad_of(mi);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t idx = (b * c + ch) * plane + p;
          if (gf) (*gf)[idx] += go[idx] * mi->data[b * plane + p];
          if (gm) (*gm)[b * plane + p] += go[idx] * fi->data[idx];
        }
  });
  return out;
}

Tensor map_to_sequence(const Tensor& x) {
  require_rank(x, 4, "map_to_sequence", "input");
  if (x.dim(0) != 1) throw DimensionError("map_to_sequence expects a single sample, got " + shape_str(x.shape()));
  const std::size_t d = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({w, h * d});
  auto in = x.data();
  auto o = out.data();
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t col = 0; col < w; ++col) o[col * h * d + y * d + c] = in[(c * h + y) * w + col];
  ImplPtr xi = x.shared_impl();
  record("map_to_sequence", out, {&x}, [xi, d, h, w](const std::vector<double>& go) {
    auto* gx = grad_of(xi);
    if (!gx) return;
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t col = 0; col < w; ++col) (*gx)[(c * h + y) * w + col] += go[col * h * d + y * d + c];
  });
  return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training, double momentum, double eps) {
  require_rank(x, 4, "batch_norm", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &state.running_mean, &state.running_var}) {
    if (t->rank() != 1 || t->dim(0) != c) {
      throw DimensionError("batch_norm: per-channel parameter must be [" + std::to_string(c) + "], got " +
                           shape_str(t->shape()));
    }
  }
  const std::size_t count = n * plane;
  std::vector<double> mean(c), inv_std(c);
  auto xv = x.data();
  if (training) {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = xv.data() + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = xv.data() + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      const double var = ss / static_cast<double>(count);
      mean[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(var + eps);
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      rm[ch] = (1.0 - momentum) * rm[ch] + momentum * mu;
      rv[ch] = (1.0 - momentum) * rv[ch] + momentum * unbiased;
    }
  } else {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      inv_std[ch] = 1.0 / std::sqrt(rv[ch] + eps);
    }
  }
  Tensor out(x.shape());
  std::vector<double> xhat(x.numel());
  auto gv = gamma.data();
  auto bv = beta.data();
  auto ov = out.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (xv[base + i] - mean[ch]) * inv_std[ch];
        xhat[base + i] = xh;
        ov[base + i] = gv[ch] * xh + bv[ch];
      }
    }
  ImplPtr xi = x.shared_impl(), gi = gamma.shared_impl(), bi = beta.shared_impl();
  record("batch_norm", out, {&x, &gamma, &beta},
         [xi, gi, bi, xhat = std::move(xhat), inv_std, n, c, plane, count, training](const std::vector<double>& go) {
           auto* gx = grad_of(xi);
           auto* gg = grad_of(gi);
           auto* gb = grad_of(bi);
           for (std::size_t ch = 0; ch < c; ++ch) {
             double sum_g = 0.0, sum_gx = 0.0;
             for (std::size_t b = 0; b < n; ++b) {
               const std::size_t base = (b * c + ch) * plane;
               for (std::size_t i = 0; i < plane; ++i) {
                 sum_g += go[base + i];
                 sum_gx += go[base + i] * xhat[base + i];
               }
             }
             if (gg) (*gg)[ch] += sum_gx;
             if (gb) (*gb)[ch] += sum_g;
             if (!gx) continue;
             const double g_scale = gi->data[ch] * inv_std[ch];
             const double inv_count = 1.0 / static_cast<double>(count);
             for (std::size_t b = 0; b < n; ++b) {
               const std::size_t base = (b * c + ch) * plane;
               for (std::size_t i = 0; i < plane; ++i) {
                 if (training) {
                   (*gx)[base + i] += g_scale * (go[base + i] - inv_count * sum_g - xhat[base + i] * inv_count * sum_gx);
                 } else {
                   (*gx)[base + i] += g_scale * go[base + i];
                 }
               }
             }
           }
         });
  return out;
}

Tensor lstm(const Tensor& x, const Tensor& w_input, const Tensor& w_hidden, const Tensor& bias, bool reverse) {
  require_rank(x, 2, "lstm", "input");
  const std::size_t steps = x.dim(0), in = x.dim(1);
  if (w_hidden.rank() != 2 || w_hidden.dim(0) % 4 != 0 || w_hidden.dim(1) * 4 != w_hidden.dim(0)) {
    throw DimensionError("lstm: hidden weight must be [4H,H], got " + shape_str(w_hidden.shape()));
  }
  const std::size_t hidden = w_hidden.dim(1);
  if (w_input.rank() != 2 || w_input.dim(0) != 4 * hidden || w_input.dim(1) != in) {
    throw DimensionError("lstm: input weight must be [4H,I]=[" + std::to_string(4 * hidden) + "," +
                         std::to_string(in) + "], got " + shape_str(w_input.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != 4 * hidden) {
    throw DimensionError("lstm: bias must be [4H], got " + shape_str(bias.shape()));
  }
  const auto T = static_cast<Eigen::Index>(steps);
  const auto I = static_cast<Eigen::Index>(in);
  const auto H = static_cast<Eigen::Index>(hidden);
  const auto G = 4 * H;

  // Activated gates per step: [i f o g] in original time positions.
  auto gates = std::make_shared<RowMat>(T, G);
  auto cells = std::make_shared<RowMat>(T, H);
  auto tanh_cells = std::make_shared<RowMat>(T, H);
  gates->noalias() = CMapMat(x.data().data(), T, I) * CMapMat(w_input.data().data(), G, I).transpose();
  gates->rowwise() += CMapRowVec(bias.data().data(), G);

  Tensor out({steps, hidden});
  MapMat h_out(out.data().data(), T, H);
  CMapMat wh(w_hidden.data().data(), G, H);
  Eigen::RowVectorXd h_prev = Eigen::RowVectorXd::Zero(H);
  Eigen::RowVectorXd c_prev = Eigen::RowVectorXd::Zero(H);
  for (Eigen::Index k = 0; k < T; ++k) {
    const Eigen::Index t = reverse ? T - 1 - k : k;
    auto g = gates->row(t);
    g.noalias() += h_prev * wh.transpose();
    for (Eigen::Index j = 0; j < 3 * H; ++j) g(j) = stable_sigmoid(g(j));
    for (Eigen::Index j = 3 * H; j < G; ++j) g(j) = std::tanh(g(j));
    for (Eigen::Index j = 0; j < H; ++j) {
      const double c = g(H + j) * c_prev(j) + g(j) * g(3 * H + j);
      (*cells)(t, j) = c;
      const double tc = std::tanh(c);
      (*tanh_cells)(t, j) = tc;
      h_out(t, j) = g(2 * H + j) * tc;
    }
    h_prev = h_out.row(t);
    c_prev = cells->row(t);
  }

  ImplPtr xi = x.shared_impl(), wii = w_input.shared_impl(), whi = w_hidden.shared_impl(), bi = bias.shared_impl();
  TensorImpl* h_raw = out.impl();
  record("lstm", out, {&x, &w_input, &w_hidden, &bias},
         [xi, wii, whi, bi, h_raw, gates, cells, tanh_cells, T, I, H, G, reverse](const std::vector<double>& go) {
           CMapMat gh(go.data(), T, H);
           CMapMat hs(h_raw->data.data(), T, H);
           CMapMat wh(whi->data.data(), G, H);
           RowMat dgates(T, G);
           Eigen::RowVectorXd dh_next = Eigen::RowVectorXd::Zero(H);
           Eigen::RowVectorXd dc_next = Eigen::RowVectorXd::Zero(H);
           auto* gwh = grad_of(whi);
           for (Eigen::Index k = T - 1; k >= 0; --k) {
             const Eigen::Index t = reverse ? T - 1 - k : k;
             const bool has_prev = k > 0;
             const Eigen::Index tp = reverse ? t + 1 : t - 1;
             auto g = gates->row(t);
             auto dg = dgates.row(t);
             for (Eigen::Index j = 0; j < H; ++j) {
               const double dh = gh(t, j) + dh_next(j);
               const double ig = g(j), fg = g(H + j), og = g(2 * H + j), cg = g(3 * H + j);
               const double tc = (*tanh_cells)(t, j);
               const double dc = dc_next(j) + dh * og * (1.0 - tc * tc);
               const double c_prev = has_prev ? (*cells)(tp, j) : 0.0;
               dg(j) = dc * cg * ig * (1.0 - ig);
               dg(H + j) = dc * c_prev * fg * (1.0 - fg);
               dg(2 * H + j) = dh * tc * og * (1.0 - og);
               dg(3 * H + j) = dc * ig * (1.0 - cg * cg);
               dc_next(j) = dc * fg;
             }
             if (has_prev) {
               if (gwh) MapMat(gwh->data(), G, H).noalias() += dg.transpose() * hs.row(tp);
               dh_next.noalias() = dg * wh;
             }
           }
           if (auto* gx = grad_of(xi)) MapMat(gx->data(), T, I).noalias() += dgates * CMapMat(wii->data.data(), G, I);
           if (auto* gwi = grad_of(wii)) MapMat(gwi->data(), G, I).noalias() += dgates.transpose() * CMapMat(xi->data.data(), T, I);
           if (auto* gb = grad_of(bi)) MapRowVec(gb->data(), G) += dgates.colwise().sum();
         });
  return out;
}

}  // namespace dsan::ops
