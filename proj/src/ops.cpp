#include "avatarforge/ops.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace avatarforge::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::vector<double>* grad_of(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

const std::vector<double>& value_of(const Node& self, std::size_t i) { return self.parents[i]->value; }

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("{}: shapes {} and {} differ", op, shape_str(a.shape()), shape_str(b.shape())));
}

void require_rank(const Tensor& x, int rank, const char* op) {
  if (x.rank() != rank)
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("{}: expected rank {}, got {}", op, rank, shape_str(x.shape())));
}

int normalize_axis(const Tensor& x, int axis, const char* op) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw Error(ErrorCode::kShapeMismatch, fmt::format("{}: axis out of range for {}", op, shape_str(x.shape())));
  return axis;
}

/// (outer, extent, inner) split of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};
AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
  s.extent = static_cast<std::size_t>(shape[static_cast<std::size_t>(axis)]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
    s.inner *= static_cast<std::size_t>(shape[i]);
  return s;
}

template <typename F, typename DF>
Tensor unary(const Tensor& x, const char* op, F f, DF df) {
  std::vector<double> out(x.size());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result(x.shape(), std::move(out), {x}, op, [df](Node& self) {
    auto* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& xv = value_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i] * df(xv[i], self.value[i]);
  });
}

void im2col(const double* x, int h, int w, int c, int k, bool replicate, double* col) {
  const int pad = k / 2;
  const std::size_t row_len = static_cast<std::size_t>(k) * k * c;
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < w; ++xx) {
      double* dst = col + (static_cast<std::size_t>(y) * w + xx) * row_len;
      for (int ky = 0; ky < k; ++ky) {
        const int sy = y + ky - pad;
        for (int kx = 0; kx < k; ++kx, dst += c) {
          const int sx = xx + kx - pad;
          if (replicate) {
            const double* src = x + (static_cast<std::size_t>(std::clamp(sy, 0, h - 1)) * w + std::clamp(sx, 0, w - 1)) * c;
            std::copy(src, src + c, dst);
          } else if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
            std::fill(dst, dst + c, 0.0);
          } else {
            const double* src = x + (static_cast<std::size_t>(sy) * w + sx) * c;
            std::copy(src, src + c, dst);
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int h, int w, int c, int k, bool replicate, double* dx) {
  const int pad = k / 2;
  const std::size_t row_len = static_cast<std::size_t>(k) * k * c;
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < w; ++xx) {
      const double* src = col + (static_cast<std::size_t>(y) * w + xx) * row_len;
      for (int ky = 0; ky < k; ++ky) {
        const int sy = y + ky - pad;
        for (int kx = 0; kx < k; ++kx, src += c) {
          int sx = xx + kx - pad, ty = sy;
          if (replicate) {
            sx = std::clamp(sx, 0, w - 1);
            ty = std::clamp(sy, 0, h - 1);
          } else if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
            continue;
          }
          double* dst = dx + (static_cast<std::size_t>(ty) * w + sx) * c;
          for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(out), {a, b}, "add", [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (auto* g = grad_of(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result(a.shape(), std::move(out), {a, b}, "sub", [](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result(a.shape(), std::move(out), {a, b}, "mul", [](Node& self) {
    const auto& av = value_of(self, 0);
    const auto& bv = value_of(self, 1);
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * av[i];
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(bias, 1, "add_bias");
  const auto c = static_cast<std::size_t>(bias.dim(0));
  if (x.rank() == 0 || static_cast<std::size_t>(x.dim(-1)) != c)
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("add_bias: bias {} does not match {}", shape_str(bias.shape()), shape_str(x.shape())));
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + bias[i % c];
  return make_result(x.shape(), std::move(out), {x, bias}, "add_bias", [c](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i % c] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

namespace {
thread_local std::vector<std::uint8_t>* relu_signs = nullptr;
}

ReluSignRecorder::ReluSignRecorder(std::vector<std::uint8_t>& signs) : previous_(relu_signs) { relu_signs = &signs; }
ReluSignRecorder::~ReluSignRecorder() { relu_signs = previous_; }

Tensor relu(const Tensor& x) {
  if (relu_signs)
    for (double v : x.values()) relu_signs->push_back(v > 0.0);
  return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sin(const Tensor& x) {
  return unary(x, "sin", [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Tensor cos(const Tensor& x) {
  return unary(x, "cos", [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("matmul: {} x {}", shape_str(a.shape()), shape_str(b.shape())));
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(a.values().data(), m, k) * ConstMap(b.values().data(), k, n);
  return make_result({m, n}, std::move(out), {a, b}, "matmul", [m, k, n](Node& self) {
    const ConstMap dout(self.grad.data(), m, n);
    if (auto* g = grad_of(self, 0))
      MutMap(g->data(), m, k).noalias() += dout * ConstMap(value_of(self, 1).data(), k, n).transpose();
    if (auto* g = grad_of(self, 1))
      MutMap(g->data(), k, n).noalias() += ConstMap(value_of(self, 0).data(), m, k).transpose() * dout;
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.size());
  MutMap(out.data(), n, m) = ConstMap(a.values().data(), m, n).transpose();
  return make_result({n, m}, std::move(out), {a}, "transpose", [m, n](Node& self) {
    if (auto* g = grad_of(self, 0)) MutMap(g->data(), m, n) += ConstMap(self.grad.data(), n, m).transpose();
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size())
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("reshape: {} to {}", shape_str(a.shape()), shape_str(shape)));
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result(std::move(shape), std::move(out), {a}, "reshape", [](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  });
}

Tensor softmax(const Tensor& x, int axis) {
  axis = normalize_axis(x, axis, "softmax");
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<double> out(x.size());
  const auto in = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < s.extent; ++e) mx = std::max(mx, in[base + e * s.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) total += (out[base + e * s.inner] = std::exp(in[base + e * s.inner] - mx));
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= total;
    }
  }
  return make_result(x.shape(), std::move(out), {x}, "softmax", [s](Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double dot = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) dot += self.grad[base + e * s.inner] * self.value[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t idx = base + e * s.inner;
          (*g)[idx] += self.value[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw Error(ErrorCode::kShapeMismatch, "concat: no inputs");
  axis = normalize_axis(parts[0], axis, "concat");
  Shape shape = parts[0].shape();
  int total = 0;
  for (const Tensor& p : parts) {
    Shape a = p.shape(), b = shape;
    if (a.size() != b.size())
      throw Error(ErrorCode::kShapeMismatch, fmt::format("concat: rank mismatch {} vs {}", shape_str(a), shape_str(b)));
    a[static_cast<std::size_t>(axis)] = b[static_cast<std::size_t>(axis)] = 0;
    if (a != b)
      throw Error(ErrorCode::kShapeMismatch,
                  fmt::format("concat: {} vs {} on axis {}", shape_str(p.shape()), shape_str(shape), axis));
    total += p.dim(axis);
  }
  shape[static_cast<std::size_t>(axis)] = total;
  const AxisSplit s = split_at(shape, axis);
  std::vector<std::size_t> widths;  // contiguous run length per part
  for (const Tensor& p : parts) widths.push_back(static_cast<std::size_t>(p.dim(axis)) * s.inner);
  const std::size_t row = static_cast<std::size_t>(total) * s.inner;

  std::vector<double> out(numel(shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto in = parts[p].values();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(in.data() + o * widths[p], widths[p], out.data() + o * row + offset);
    offset += widths[p];
  }
  return make_result(std::move(shape), std::move(out), parts, "concat", [widths, row, s](Node& self) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      if (auto* g = grad_of(self, p)) {
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t i = 0; i < widths[p]; ++i) (*g)[o * widths[p] + i] += self.grad[o * row + off + i];
      }
      off += widths[p];
    }
  });
}

Tensor slice(const Tensor& x, int axis, int start, int length) {
  axis = normalize_axis(x, axis, "slice");
  if (start < 0 || length < 0 || start + length > x.dim(axis))
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("slice: [{}, {}) out of range on axis {} of {}", start, start + length, axis,
                            shape_str(x.shape())));
  const AxisSplit s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[static_cast<std::size_t>(axis)] = length;
  const std::size_t run = static_cast<std::size_t>(length) * s.inner;
  const std::size_t src_row = s.extent * s.inner;
  const std::size_t off = static_cast<std::size_t>(start) * s.inner;
  std::vector<double> out(numel(shape));
  const auto in = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) std::copy_n(in.data() + o * src_row + off, run, out.data() + o * run);
  return make_result(std::move(shape), std::move(out), {x}, "slice", [s, run, src_row, off](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < run; ++i) (*g)[o * src_row + off + i] += self.grad[o * run + i];
  });
}

Tensor sum(const Tensor& x) {
  const auto v = x.values();
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  return make_result({1}, {total}, {x}, "sum", [](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (double& gi : *g) gi += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const auto v = x.values();
  const double n = static_cast<double>(v.size());
  return make_result({1}, {std::accumulate(v.begin(), v.end(), 0.0) / n}, {x}, "mean", [n](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (double& gi : *g) gi += self.grad[0] / n;
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mse");
  const double n = static_cast<double>(a.size());
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
  return make_result({1}, {total / n}, {a, b}, "mse", [n](Node& self) {
    const auto& av = value_of(self, 0);
    const auto& bv = value_of(self, 1);
    const double k = 2.0 * self.grad[0] / n;
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < av.size(); ++i) (*g)[i] += k * (av[i] - bv[i]);
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < av.size(); ++i) (*g)[i] -= k * (av[i] - bv[i]);
  });
}

Tensor weighted_mse(const Tensor& a, const Tensor& b, std::span<const double> weights) {
  require_same(a, b, "weighted_mse");
  if (weights.size() != a.size())
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("weighted_mse: {} weights for {}", weights.size(), shape_str(a.shape())));
  double wsum = 0.0, total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    wsum += weights[i];
    total += weights[i] * (a[i] - b[i]) * (a[i] - b[i]);
  }
  const double norm = wsum > 0.0 ? 1.0 / wsum : 0.0;
  std::vector<double> w(weights.begin(), weights.end());
  return make_result({1}, {total * norm}, {a, b}, "weighted_mse", [w = std::move(w), norm](Node& self) {
    const auto& av = value_of(self, 0);
    const auto& bv = value_of(self, 1);
    const double k = 2.0 * self.grad[0] * norm;
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < av.size(); ++i) (*g)[i] += k * w[i] * (av[i] - bv[i]);
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < av.size(); ++i) (*g)[i] -= k * w[i] * (av[i] - bv[i]);
  });
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, Padding padding) {
  require_rank(x, 3, "conv2d");
  require_rank(kernel, 4, "conv2d");
  const int h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const int k = kernel.dim(0), cout = kernel.dim(3);
  if (kernel.dim(1) != k || kernel.dim(2) != cin || k % 2 == 0)
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("conv2d: kernel {} for input {}", shape_str(kernel.shape()), shape_str(x.shape())));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout))
    throw Error(ErrorCode::kShapeMismatch, fmt::format("conv2d: bias {} for {} outputs", shape_str(bias.shape()), cout));
  const int pixels = h * w, patch = k * k * cin;
  const bool rep = padding == Padding::kReplicate;
  std::vector<double> col(static_cast<std::size_t>(pixels) * patch);
  im2col(x.values().data(), h, w, cin, k, rep, col.data());
  std::vector<double> out(static_cast<std::size_t>(pixels) * cout);
  MutMap om(out.data(), pixels, cout);
  om.noalias() = ConstMap(col.data(), pixels, patch) * ConstMap(kernel.values().data(), patch, cout);
  if (bias.defined()) om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), cout);

  std::vector<Tensor> parents{x, kernel};
  if (bias.defined()) parents.push_back(bias);
  return make_result({h, w, cout}, std::move(out), parents, "conv2d", [=](Node& self) {
    const ConstMap dout(self.grad.data(), pixels, cout);
    auto* gx = grad_of(self, 0);
    auto* gk = grad_of(self, 1);
    if (gk) {
      std::vector<double> c(static_cast<std::size_t>(pixels) * patch);
      im2col(value_of(self, 0).data(), h, w, cin, k, rep, c.data());
      MutMap(gk->data(), patch, cout).noalias() += ConstMap(c.data(), pixels, patch).transpose() * dout;
    }
    if (gx) {
      RowMat dcol = dout * ConstMap(value_of(self, 1).data(), patch, cout).transpose();
      col2im_add(dcol.data(), h, w, cin, k, rep, gx->data());
    }
    if (self.parents.size() > 2)
      if (auto* gb = grad_of(self, 2)) Eigen::Map<Eigen::RowVectorXd>(gb->data(), cout) += dout.colwise().sum();
  });
}

Tensor patchify(const Tensor& x, int patch) {
  require_rank(x, 3, "patchify");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (patch <= 0 || h % patch != 0 || w % patch != 0)
    throw Error(ErrorCode::kShapeMismatch, fmt::format("patchify: {} not divisible by {}", shape_str(x.shape()), patch));
  const int gh = h / patch, gw = w / patch;
  const std::size_t width = static_cast<std::size_t>(patch) * patch * c;
  // index[o] = source offset of output element o
  std::vector<std::size_t> index(x.size());
  for (int py = 0; py < gh; ++py)
    for (int px = 0; px < gw; ++px)
      for (int iy = 0; iy < patch; ++iy)
        for (int ix = 0; ix < patch; ++ix)
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t o = (static_cast<std::size_t>(py) * gw + px) * width +
                                  (static_cast<std::size_t>(iy) * patch + ix) * c + ch;
            index[o] = (static_cast<std::size_t>(py * patch + iy) * w + (px * patch + ix)) * c + ch;
          }
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = x[index[o]];
  return make_result({gh * gw, static_cast<int>(width)}, std::move(out), {x}, "patchify",
                     [index = std::move(index)](Node& self) {
                       if (auto* g = grad_of(self, 0))
                         for (std::size_t o = 0; o < index.size(); ++o) (*g)[index[o]] += self.grad[o];
                     });
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  require_rank(x, 3, "upsample_nearest");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const int oh = h * factor, ow = w * factor;
  std::vector<double> out(static_cast<std::size_t>(oh) * ow * c);
  for (int y = 0; y < oh; ++y)
    for (int xx = 0; xx < ow; ++xx)
      std::copy_n(x.values().data() + (static_cast<std::size_t>(y / factor) * w + xx / factor) * c, c,
                  out.data() + (static_cast<std::size_t>(y) * ow + xx) * c);
  return make_result({oh, ow, c}, std::move(out), {x}, "upsample_nearest", [=](Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        const double* src = self.grad.data() + (static_cast<std::size_t>(y) * ow + xx) * c;
        double* dst = g->data() + (static_cast<std::size_t>(y / factor) * w + xx / factor) * c;
        for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
      }
  });
}

Tensor gather(const Tensor& x, std::shared_ptr<const SparseRows> rows) {
  if (x.rank() == 0 || static_cast<std::size_t>(x.dim(0)) != rows->num_cols)
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("gather: plan expects {} source rows, got {}", rows->num_cols, shape_str(x.shape())));
  const std::size_t width = x.size() / rows->num_cols;
  Shape shape = x.shape();
  shape[0] = static_cast<int>(rows->num_rows());
  std::vector<double> out(numel(shape));
  apply_rows(*rows, x.values(), width, out);
  return make_result(std::move(shape), std::move(out), {x}, "gather", [rows, width](Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows->num_rows(); ++r) {
      const double* src = self.grad.data() + r * width;
      for (std::size_t k = rows->row_begin(r); k < rows->row_end(r); ++k) {
        double* dst = g->data() + rows->cols[k] * width;
        const double wk = rows->weights[k];
        for (std::size_t c = 0; c < width; ++c) dst[c] += wk * src[c];
      }
    }
  });
}

Tensor gather(const Tensor& x, const SparseRows& rows) {
  return gather(x, std::make_shared<const SparseRows>(rows));
}

Tensor clamp(const Tensor& x, std::span<const double> lo, std::span<const double> hi) {
  if (lo.size() != x.size() || hi.size() != x.size())
    throw Error(ErrorCode::kShapeMismatch, fmt::format("clamp: bounds do not match {}", shape_str(x.shape())));
  std::vector<double> out(x.size());
  std::vector<std::uint8_t> pass(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp(x[i], lo[i], hi[i]);
    pass[i] = x[i] >= lo[i] && x[i] <= hi[i];
  }
  return make_result(x.shape(), std::move(out), {x}, "clamp", [pass = std::move(pass)](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < pass.size(); ++i)
        if (pass[i]) (*g)[i] += self.grad[i];
  });
}

Tensor affine_rows(const Tensor& points, std::span<const Eigen::Matrix<double, 3, 4>> transforms) {
  require_rank(points, 2, "affine_rows");
  const int n = points.dim(0);
  if (points.dim(1) != 3 || static_cast<std::size_t>(n) != transforms.size())
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("affine_rows: {} points, {} transforms", shape_str(points.shape()), transforms.size()));
  std::vector<double> out(points.size());
  for (int v = 0; v < n; ++v) {
    const Eigen::Vector3d p(points[3 * v], points[3 * v + 1], points[3 * v + 2]);
    const auto& a = transforms[static_cast<std::size_t>(v)];
    const Eigen::Vector3d q = a.leftCols<3>() * p + a.col(3);
    for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(3 * v + c)] = q[c];
  }
  std::vector<Eigen::Matrix<double, 3, 4>> t(transforms.begin(), transforms.end());
  return make_result(points.shape(), std::move(out), {points}, "affine_rows", [t = std::move(t)](Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t v = 0; v < t.size(); ++v) {
      const Eigen::Vector3d d(self.grad[3 * v], self.grad[3 * v + 1], self.grad[3 * v + 2]);
      const Eigen::Vector3d back = t[v].leftCols<3>().transpose() * d;
      for (int c = 0; c < 3; ++c) (*g)[3 * v + static_cast<std::size_t>(c)] += back[c];
    }
  });
}

Tensor face_normal_sum(const Tensor& points, const Faces& faces) {
  require_rank(points, 2, "face_normal_sum");
  if (points.dim(1) != 3) throw Error(ErrorCode::kShapeMismatch, "face_normal_sum: points must be N x 3");
  const auto pv = points.values();
  auto at = [](std::span<const double> v, int i) { return Eigen::Vector3d(v[3 * i], v[3 * i + 1], v[3 * i + 2]); };
  std::vector<double> out(points.size(), 0.0);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const int a = faces(f, 0), b = faces(f, 1), c = faces(f, 2);
    const Eigen::Vector3d n = (at(pv, b) - at(pv, a)).cross(at(pv, c) - at(pv, a));
    for (int v : {a, b, c})
      for (int k = 0; k < 3; ++k) out[static_cast<std::size_t>(3 * v + k)] += n[k];
  }
  return make_result(points.shape(), std::move(out), {points}, "face_normal_sum", [faces, at](Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    const auto& p = value_of(self, 0);
    const std::span<const double> ps(p);
    const std::span<const double> gs(self.grad);
    for (Eigen::Index f = 0; f < faces.rows(); ++f) {
      const int a = faces(f, 0), b = faces(f, 1), c = faces(f, 2);
      const Eigen::Vector3d e1 = at(ps, b) - at(ps, a), e2 = at(ps, c) - at(ps, a);
      const Eigen::Vector3d gn = at(gs, a) + at(gs, b) + at(gs, c);
      const Eigen::Vector3d d1 = e2.cross(gn), d2 = gn.cross(e1);
      for (int k = 0; k < 3; ++k) {
        (*g)[static_cast<std::size_t>(3 * b + k)] += d1[k];
        (*g)[static_cast<std::size_t>(3 * c + k)] += d2[k];
        (*g)[static_cast<std::size_t>(3 * a + k)] -= d1[k] + d2[k];
      }
    }
  });
}

Tensor normalize_rows(const Tensor& x) {
  require_rank(x, 2, "normalize_rows");
  const auto n = static_cast<std::size_t>(x.dim(0)), c = static_cast<std::size_t>(x.dim(1));
  std::vector<double> out(x.size(), 0.0);
  std::vector<double> inv_norm(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double sq = 0.0;
    for (std::size_t k = 0; k < c; ++k) sq += x[r * c + k] * x[r * c + k];
    if (sq == 0.0) continue;
    inv_norm[r] = 1.0 / std::sqrt(sq);
    for (std::size_t k = 0; k < c; ++k) out[r * c + k] = x[r * c + k] * inv_norm[r];
  }
  return make_result(x.shape(), std::move(out), {x}, "normalize_rows", [inv_norm = std::move(inv_norm), c](Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < inv_norm.size(); ++r) {
      if (inv_norm[r] == 0.0) continue;
      double dot = 0.0;
      for (std::size_t k = 0; k < c; ++k) dot += self.grad[r * c + k] * self.value[r * c + k];
      for (std::size_t k = 0; k < c; ++k)
        (*g)[r * c + k] += inv_norm[r] * (self.grad[r * c + k] - self.value[r * c + k] * dot);
    }
  });
}

}  // namespace avatarforge::ad
