#include "bpnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace bpnet {

namespace {

using detail::TensorImpl;

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank) {
    throw ShapeError(op, "expected rank " + std::to_string(rank) + ", got shape " +
                             shape_str(x.shape()));
  }
}

bool is_broadcast_scalar(const Tensor& a, const Tensor& b) {
  return b.numel() == 1 && a.shape() != b.shape();
}

void check_elementwise(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() && b.numel() != 1) throw ShapeError(op, a.shape(), b.shape());
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename F, typename G>
Tensor unary(const Tensor& x, F f, G df) {
  auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  return make_result(x.shape(), std::move(out), {x}, [x, df](const TensorImpl& o) {
    double* gx = grad_sink(x);
    auto xs = x.data();
    for (std::size_t i = 0; i < xs.size(); ++i) gx[i] += o.grad[i] * df(xs[i], o.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_elementwise("add", a, b);
  const bool bc = is_broadcast_scalar(a, b);
  auto as = a.data(), bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] + bs[bc ? 0 : i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b, bc](const TensorImpl& o) {
    if (double* ga = grad_sink(a)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
    }
    if (double* gb = grad_sink(b)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[bc ? 0 : i] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_elementwise("sub", a, b);
  const bool bc = is_broadcast_scalar(a, b);
  auto as = a.data(), bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] - bs[bc ? 0 : i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b, bc](const TensorImpl& o) {
    if (double* ga = grad_sink(a)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
    }
    if (double* gb = grad_sink(b)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[bc ? 0 : i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_elementwise("mul", a, b);
  const bool bc = is_broadcast_scalar(a, b);
  auto as = a.data(), bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < as.size(); ++i) out[i] = as[i] * bs[bc ? 0 : i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b, bc](const TensorImpl& o) {
    auto as = a.data(), bs = b.data();
    if (double* ga = grad_sink(a)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * bs[bc ? 0 : i];
    }
    if (double* gb = grad_sink(b)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[bc ? 0 : i] += o.grad[i] * as[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [inv_sqrt2pi](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({}, {total}, {x}, [x](const TensorImpl& o) {
    double* gx = grad_sink(x);
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += o.grad[0];
  });
}

Tensor sum(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("sum", "axis out of range for " + shape_str(x.shape()));
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  auto xs = x.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += xs[(o * s.len + l) * s.inner + i];
  return make_result(out_shape, std::move(out), {x}, [x, s](const TensorImpl& g) {
    double* gx = grad_sink(x);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t i = 0; i < s.inner; ++i)
          gx[(o * s.len + l) * s.inner + i] += g.grad[o * s.inner + i];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean", "empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (numel(shape) != x.numel()) throw ShapeError("reshape", x.shape(), shape);
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(shape, std::move(out), {x}, [x](const TensorImpl& o) {
    double* gx = grad_sink(x);
    for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
  });
}

Tensor transpose(const Tensor& x) {
  require_rank("transpose", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  auto xs = x.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xs[i * c + j];
  return make_result({c, r}, std::move(out), {x}, [x, r, c](const TensorImpl& o) {
    double* gx = grad_sink(x);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += o.grad[j * r + i];
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin > end || end > x.dim(axis)) {
    throw ShapeError("slice", "range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                  ") on axis " + std::to_string(axis) + " of " +
                                  shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  const std::size_t n = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = n;
  auto xs = x.data();
  std::vector<double> out(s.outer * n * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>((o * s.len + begin) * s.inner),
                n * s.inner, out.begin() + static_cast<std::ptrdiff_t>(o * n * s.inner));
  return make_result(out_shape, std::move(out), {x}, [x, s, n, begin](const TensorImpl& g) {
    double* gx = grad_sink(x);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < n * s.inner; ++k)
        gx[(o * s.len + begin) * s.inner + k] += g.grad[o * n * s.inner + k];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw ShapeError("concat", "axis out of range for " + shape_str(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = ref;
    if (a.size() != b.size()) throw ShapeError("concat", ref, p.shape());
    a[axis] = b[axis] = 0;
    if (a != b) throw ShapeError("concat", ref, p.shape());
    out_shape[axis] += p.dim(axis);
  }
  const AxisSplit s = split_at(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.dim(axis);
    auto ps = p.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(ps.begin() + static_cast<std::ptrdiff_t>(o * len * s.inner), len * s.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * s.len + off) * s.inner));
    off += len;
  }
  return make_result(out_shape, std::move(out), parts,
                     [parts, offsets, s, axis](const TensorImpl& g) {
                       for (std::size_t k = 0; k < parts.size(); ++k) {
                         double* gp = grad_sink(parts[k]);
                         if (!gp) continue;
                         const std::size_t len = parts[k].dim(axis);
                         for (std::size_t o = 0; o < s.outer; ++o)
                           for (std::size_t i = 0; i < len * s.inner; ++i)
                             gp[o * len * s.inner + i] +=
                                 g.grad[(o * s.len + offsets[k]) * s.inner + i];
                       }
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  require_rank("gather", x, 2);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  auto xs = x.data();
  std::vector<double> out(index.size() * cols);
  for (std::size_t q = 0; q < index.size(); ++q) {
    if (index[q] >= rows) {
      throw ShapeError("gather", "index " + std::to_string(index[q]) + " out of range for " +
                                     shape_str(x.shape()));
    }
    std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>(index[q] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(q * cols));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result({index.size(), cols}, std::move(out), {x},
                     [x, idx = std::move(idx), cols](const TensorImpl& g) {
                       double* gx = grad_sink(x);
                       for (std::size_t q = 0; q < idx.size(); ++q)
                         for (std::size_t c = 0; c < cols; ++c)
                           gx[idx[q] * cols + c] += g.grad[q * cols + c];
                     });
}

Tensor scatter_add_rows(const Tensor& x, std::span<const std::size_t> index, std::size_t rows) {
  require_rank("scatter_add", x, 2);
  if (index.size() != x.dim(0)) {
    throw ShapeError("scatter_add", "index length " + std::to_string(index.size()) +
                                        " vs rows of " + shape_str(x.shape()));
  }
  const std::size_t cols = x.dim(1);
  auto xs = x.data();
  std::vector<double> out(rows * cols, 0.0);
  for (std::size_t q = 0; q < index.size(); ++q) {
    if (index[q] >= rows) {
      throw ShapeError("scatter_add", "index " + std::to_string(index[q]) + " >= " +
                                          std::to_string(rows));
    }
    for (std::size_t c = 0; c < cols; ++c) out[index[q] * cols + c] += xs[q * cols + c];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result({rows, cols}, std::move(out), {x},
                     [x, idx = std::move(idx), cols](const TensorImpl& g) {
                       double* gx = grad_sink(x);
                       for (std::size_t q = 0; q < idx.size(); ++q)
                         for (std::size_t c = 0; c < cols; ++c)
                           gx[q * cols + c] += g.grad[idx[q] * cols + c];
                     });
}

std::uint64_t& madds_counter() {
  thread_local std::uint64_t count = 0;
  return count;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul", a.shape(), b.shape(), "inner extents differ");
  auto as = a.data(), bs = b.data();
  madds_counter() += m * k * n;
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = as[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * bs[p * n + j];
    }
  return make_result({m, n}, std::move(out), {a, b}, [a, b, m, k, n](const TensorImpl& g) {
    auto as = a.data(), bs = b.data();
    if (double* ga = grad_sink(a)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g.grad[i * n + j] * bs[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (double* gb = grad_sink(b)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = as[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g.grad[i * n + j];
        }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", x, 2);
  require_rank("linear", weight, 2);
  const std::size_t m = x.dim(0), k = x.dim(1), o = weight.dim(0);
  if (weight.dim(1) != k) throw ShapeError("linear", x.shape(), weight.shape());
  if (bias.defined() && bias.shape() != Shape{o}) {
    throw ShapeError("linear", weight.shape(), bias.shape(), "bias");
  }
  auto xs = x.data(), ws = weight.data();
  madds_counter() += m * k * o;
  std::vector<double> out(m * o);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < o; ++j) {
      double acc = bias.defined() ? bias[j] : 0.0;
      const double* xr = xs.data() + i * k;
      const double* wr = ws.data() + j * k;
      for (std::size_t p = 0; p < k; ++p) acc += xr[p] * wr[p];
      out[i * o + j] = acc;
    }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result({m, o}, std::move(out), inputs,
                     [x, weight, bias, m, k, o](const TensorImpl& g) {
                       auto xs = x.data(), ws = weight.data();
                       if (double* gx = grad_sink(x)) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < o; ++j) {
                             const double gv = g.grad[i * o + j];
                             for (std::size_t p = 0; p < k; ++p) gx[i * k + p] += gv * ws[j * k + p];
                           }
                       }
                       if (double* gw = grad_sink(weight)) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < o; ++j) {
                             const double gv = g.grad[i * o + j];
                             for (std::size_t p = 0; p < k; ++p) gw[j * k + p] += gv * xs[i * k + p];
                           }
                       }
                       if (bias.defined()) {
                         if (double* gb = grad_sink(bias)) {
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < o; ++j) gb[j] += g.grad[i * o + j];
                         }
                       }
                     });
}

namespace {

// Output indices ox with 0 <= ox*stride - pad + kx < extent, as [lo, hi).
std::pair<std::size_t, std::size_t> conv_range(std::size_t out_extent, std::size_t in_extent,
                                               std::size_t stride, std::size_t pad,
                                               std::size_t kx) {
  const long long s = static_cast<long long>(stride);
  const long long shift = static_cast<long long>(kx) - static_cast<long long>(pad);
  long long lo = shift >= 0 ? 0 : (-shift + s - 1) / s;
  long long hi = (static_cast<long long>(in_extent) - 1 - shift);
  hi = hi < 0 ? 0 : hi / s + 1;
  hi = std::min<long long>(hi, static_cast<long long>(out_extent));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

inline std::ptrdiff_t sd(std::size_t v) { return static_cast<std::ptrdiff_t>(v); }

// Flat offset of tap (ky, kx) for strided row `row` in a plane of width
// `width`; may be negative before the column index is added.
inline std::ptrdiff_t tap_offset(std::size_t row, std::size_t ky, std::size_t kx,
                                 std::size_t stride, std::size_t padding, std::size_t width) {
  return (sd(row * stride + ky) - sd(padding)) * sd(width) + sd(kx) - sd(padding);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank("conv2d", x, 3);
  require_rank("conv2d", weight, 4);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t o = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c) throw ShapeError("conv2d", x.shape(), weight.shape(), "input channels");
  if (weight.dim(3) != k || k % 2 == 0) {
    throw ShapeError("conv2d", "kernel must be square and odd, got " + shape_str(weight.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d", "stride must be positive");
  if (bias.defined() && bias.shape() != Shape{o}) {
    throw ShapeError("conv2d", weight.shape(), bias.shape(), "bias");
  }
  if (h + 2 * padding < k || w + 2 * padding < k) {
    throw ShapeError("conv2d", "input " + shape_str(x.shape()) + " smaller than kernel");
  }
  const std::size_t oh = (h + 2 * padding - k) / stride + 1;
  const std::size_t ow = (w + 2 * padding - k) / stride + 1;

  auto xs = x.data(), ws = weight.data();
  madds_counter() += o * c * k * k * oh * ow;
  std::vector<double> out(o * oh * ow, 0.0);
  for (std::size_t oc = 0; oc < o; ++oc) {
    double* op = out.data() + oc * oh * ow;
    if (bias.defined()) std::fill_n(op, oh * ow, bias[oc]);
    for (std::size_t ic = 0; ic < c; ++ic) {
      const double* ip = xs.data() + ic * h * w;
      for (std::size_t ky = 0; ky < k; ++ky) {
        auto [ylo, yhi] = conv_range(oh, h, stride, padding, ky);
        for (std::size_t kx = 0; kx < k; ++kx) {
          auto [xlo, xhi] = conv_range(ow, w, stride, padding, kx);
          const double wv = ws[((oc * c + ic) * k + ky) * k + kx];
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            const std::ptrdiff_t base = tap_offset(oy, ky, kx, stride, padding, w);
            double* orow = op + oy * ow;
            if (stride == 1) {
              for (std::size_t ox = xlo; ox < xhi; ++ox) orow[ox] += wv * ip[base + sd(ox)];
            } else {
              for (std::size_t ox = xlo; ox < xhi; ++ox) orow[ox] += wv * ip[base + sd(ox * stride)];
            }
          }
        }
      }
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      {o, oh, ow}, std::move(out), inputs,
      [=](const TensorImpl& g) {
        auto xs = x.data(), ws = weight.data();
        double* gx = grad_sink(x);
        double* gw = grad_sink(weight);
        // Patch matrix, pixel-major: colT[p][j] with j = (ic, ky, kx). Both
        // products below then run axpy inner loops that vectorize.
        const std::size_t taps = c * k * k, pix = oh * ow;
        const double* gs = g.grad.data();
        std::vector<double> colT;
        if (gw) {
          colT.assign(pix * taps, 0.0);
          for (std::size_t ic = 0; ic < c; ++ic) {
            const double* ip = xs.data() + ic * h * w;
            for (std::size_t ky = 0; ky < k; ++ky) {
              auto [ylo, yhi] = conv_range(oh, h, stride, padding, ky);
              for (std::size_t kx = 0; kx < k; ++kx) {
                auto [xlo, xhi] = conv_range(ow, w, stride, padding, kx);
                const std::size_t j = (ic * k + ky) * k + kx;
                for (std::size_t oy = ylo; oy < yhi; ++oy) {
                  const std::ptrdiff_t base = tap_offset(oy, ky, kx, stride, padding, w);
                  for (std::size_t ox = xlo; ox < xhi; ++ox)
                    colT[(oy * ow + ox) * taps + j] = ip[base + sd(ox * stride)];
                }
              }
            }
          }
          for (std::size_t oc = 0; oc < o; ++oc) {
            double* gwr = gw + oc * taps;
            for (std::size_t q = 0; q < pix; ++q) {
              const double gv = gs[oc * pix + q];
              if (gv == 0.0) continue;
              const double* cr = colT.data() + q * taps;
              for (std::size_t j = 0; j < taps; ++j) gwr[j] += gv * cr[j];
            }
          }
        }
        if (gx) {
          std::vector<double> gcol(taps * pix, 0.0);
          for (std::size_t oc = 0; oc < o; ++oc) {
            const double* gp = gs + oc * pix;
            for (std::size_t j = 0; j < taps; ++j) {
              const double wv = ws[oc * taps + j];
              double* cr = gcol.data() + j * pix;
              for (std::size_t q = 0; q < pix; ++q) cr[q] += wv * gp[q];
            }
          }
          for (std::size_t ic = 0; ic < c; ++ic) {
            double* gip = gx + ic * h * w;
            for (std::size_t ky = 0; ky < k; ++ky) {
              auto [ylo, yhi] = conv_range(oh, h, stride, padding, ky);
              for (std::size_t kx = 0; kx < k; ++kx) {
                auto [xlo, xhi] = conv_range(ow, w, stride, padding, kx);
                const double* cr = gcol.data() + ((ic * k + ky) * k + kx) * pix;
                for (std::size_t oy = ylo; oy < yhi; ++oy) {
                  const std::ptrdiff_t base = tap_offset(oy, ky, kx, stride, padding, w);
                  const double* crow = cr + oy * ow;
                  if (stride == 1) {
                    double* dst = gip + base;
                    for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox] += crow[ox];
                  } else {
                    for (std::size_t ox = xlo; ox < xhi; ++ox) gip[base + sd(ox * stride)] += crow[ox];
                  }
                }
              }
            }
          }
        }
        if (bias.defined()) {
          if (double* gb = grad_sink(bias)) {
            for (std::size_t oc = 0; oc < o; ++oc)
              for (std::size_t i = 0; i < oh * ow; ++i) gb[oc] += g.grad[oc * oh * ow + i];
          }
        }
      });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride, std::size_t padding, std::size_t output_padding) {
  require_rank("deconv2d", x, 3);
  require_rank("deconv2d", weight, 4);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t o = weight.dim(1), k = weight.dim(2);
  if (weight.dim(0) != c) throw ShapeError("deconv2d", x.shape(), weight.shape(), "input channels");
  if (weight.dim(3) != k || k % 2 == 0) {
    throw ShapeError("deconv2d", "kernel must be square and odd, got " + shape_str(weight.shape()));
  }
  if (stride == 0 || output_padding >= stride) {
    throw ShapeError("deconv2d", "need stride > output_padding");
  }
  if (bias.defined() && bias.shape() != Shape{o}) {
    throw ShapeError("deconv2d", weight.shape(), bias.shape(), "bias");
  }
  const long long full_h = static_cast<long long>((h - 1) * stride + k + output_padding);
  const long long full_w = static_cast<long long>((w - 1) * stride + k + output_padding);
  if (full_h <= static_cast<long long>(2 * padding) || full_w <= static_cast<long long>(2 * padding)) {
    throw ShapeError("deconv2d", "padding too large for " + shape_str(x.shape()));
  }
  const std::size_t oh = static_cast<std::size_t>(full_h) - 2 * padding;
  const std::size_t ow = static_cast<std::size_t>(full_w) - 2 * padding;

  // Output pixel oy = iy*stride - padding + ky, i.e. the conv_range relation
  // with the roles of input and output swapped.
  auto in_range = [stride, padding](std::size_t in_extent, std::size_t out_extent, std::size_t kk) {
    // iy with 0 <= iy*stride + kk - padding < out_extent
    return conv_range(in_extent, out_extent, stride, padding, kk);
  };

  auto xs = x.data(), ws = weight.data();
  madds_counter() += c * o * k * k * h * w;
  std::vector<double> out(o * oh * ow, 0.0);
  for (std::size_t oc = 0; oc < o; ++oc) {
    if (bias.defined()) std::fill_n(out.data() + oc * oh * ow, oh * ow, bias[oc]);
  }
  for (std::size_t ic = 0; ic < c; ++ic) {
    const double* ip = xs.data() + ic * h * w;
    for (std::size_t oc = 0; oc < o; ++oc) {
      double* op = out.data() + oc * oh * ow;
      for (std::size_t ky = 0; ky < k; ++ky) {
        auto [ylo, yhi] = in_range(h, oh, ky);
        for (std::size_t kx = 0; kx < k; ++kx) {
          auto [xlo, xhi] = in_range(w, ow, kx);
          const double wv = ws[((ic * o + oc) * k + ky) * k + kx];
          for (std::size_t iy = ylo; iy < yhi; ++iy) {
            const std::ptrdiff_t base = tap_offset(iy, ky, kx, stride, padding, ow);
            const double* irow = ip + iy * w;
            for (std::size_t ix = xlo; ix < xhi; ++ix) op[base + sd(ix * stride)] += wv * irow[ix];
          }
        }
      }
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      {o, oh, ow}, std::move(out), inputs,
      [=](const TensorImpl& g) {
        auto xs = x.data(), ws = weight.data();
        double* gx = grad_sink(x);
        double* gw = grad_sink(weight);
        for (std::size_t ic = 0; ic < c; ++ic) {
          const double* ip = xs.data() + ic * h * w;
          double* gip = gx ? gx + ic * h * w : nullptr;
          for (std::size_t oc = 0; oc < o; ++oc) {
            const double* gp = g.grad.data() + oc * oh * ow;
            for (std::size_t ky = 0; ky < k; ++ky) {
              auto [ylo, yhi] = in_range(h, oh, ky);
              for (std::size_t kx = 0; kx < k; ++kx) {
                auto [xlo, xhi] = in_range(w, ow, kx);
                const std::size_t widx = ((ic * o + oc) * k + ky) * k + kx;
                const double wv = ws[widx];
                double acc = 0.0;
                for (std::size_t iy = ylo; iy < yhi; ++iy) {
                  const std::ptrdiff_t base = tap_offset(iy, ky, kx, stride, padding, ow);
                  const double* irow = ip + iy * w;
                  for (std::size_t ix = xlo; ix < xhi; ++ix) acc += gp[base + sd(ix * stride)] * irow[ix];
                  if (gip) {
                    double* girow = gip + iy * w;
                    for (std::size_t ix = xlo; ix < xhi; ++ix) girow[ix] += wv * gp[base + sd(ix * stride)];
                  }
                }
                if (gw) gw[widx] += acc;
              }
            }
          }
        }
        if (bias.defined()) {
          if (double* gb = grad_sink(bias)) {
            for (std::size_t oc = 0; oc < o; ++oc)
              for (std::size_t i = 0; i < oh * ow; ++i) gb[oc] += g.grad[oc * oh * ow + i];
          }
        }
      });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                  bool training, std::size_t channel_axis) {
  if (channel_axis >= x.rank()) {
    throw ShapeError("batch_norm", "channel axis out of range for " + shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), channel_axis);
  const std::size_t ch = s.len;
  if (gamma.shape() != Shape{ch} || beta.shape() != Shape{ch}) {
    throw ShapeError("batch_norm", x.shape(), gamma.shape(), "affine parameters");
  }
  if (stats.running_mean.size() != ch) {
    throw ShapeError("batch_norm", "running statistics sized " +
                                       std::to_string(stats.running_mean.size()) + " for " +
                                       std::to_string(ch) + " channels");
  }
  const std::size_t count = s.outer * s.inner;
  if (training && count < 2) {
    throw ShapeError("batch_norm", "training mode needs more than one value per channel, got " +
                                       shape_str(x.shape()));
  }
  auto xs = x.data();
  auto at = [&](std::size_t o, std::size_t c, std::size_t i) { return (o * ch + c) * s.inner + i; };

  std::vector<double> xhat(xs.size()), inv_std(ch), out(xs.size());
  for (std::size_t c = 0; c < ch; ++c) {
    double mu, var;
    if (training) {
      double acc = 0.0;
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) acc += xs[at(o, c, i)];
      mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
          const double d = xs[at(o, c, i)] - mu;
          sq += d * d;
        }
      var = sq / static_cast<double>(count);
      const double unbiased = sq / static_cast<double>(count - 1);
      stats.running_mean[c] = (1.0 - stats.momentum) * stats.running_mean[c] + stats.momentum * mu;
      stats.running_var[c] =
          (1.0 - stats.momentum) * stats.running_var[c] + stats.momentum * unbiased;
    } else {
      mu = stats.running_mean[c];
      var = stats.running_var[c];
    }
    inv_std[c] = 1.0 / std::sqrt(var + stats.eps);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t idx = at(o, c, i);
        xhat[idx] = (xs[idx] - mu) * inv_std[c];
        out[idx] = gamma[c] * xhat[idx] + beta[c];
      }
  }
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, s, ch, count, training, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](const TensorImpl& g) {
        auto at = [&](std::size_t o, std::size_t c, std::size_t i) {
          return (o * ch + c) * s.inner + i;
        };
        double* gx = grad_sink(x);
        double* gg = grad_sink(gamma);
        double* gb = grad_sink(beta);
        const double n = static_cast<double>(count);
        for (std::size_t c = 0; c < ch; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t i = 0; i < s.inner; ++i) {
              const std::size_t idx = at(o, c, i);
              sum_dy += g.grad[idx];
              sum_dy_xhat += g.grad[idx] * xhat[idx];
            }
          if (gg) gg[c] += sum_dy_xhat;
          if (gb) gb[c] += sum_dy;
          if (!gx) continue;
          const double gam = gamma[c];
          for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t i = 0; i < s.inner; ++i) {
              const std::size_t idx = at(o, c, i);
              if (training) {
                gx[idx] += gam * inv_std[c] *
                           (g.grad[idx] - sum_dy / n - xhat[idx] * sum_dy_xhat / n);
              } else {
                gx[idx] += gam * inv_std[c] * g.grad[idx];
              }
            }
        }
      });
}

Tensor softmax(const Tensor& x, std::size_t axis, std::span<const std::uint8_t> mask) {
  if (axis >= x.rank()) throw ShapeError("softmax", "axis out of range for " + shape_str(x.shape()));
  if (!mask.empty() && mask.size() != x.numel()) {
    throw ShapeError("softmax", "mask has " + std::to_string(mask.size()) + " entries for " +
                                    shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  auto xs = x.data();
  std::vector<double> out(xs.size(), 0.0);
  auto live = [&](std::size_t idx) { return mask.empty() || mask[idx] != 0; };
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) {
        const std::size_t idx = (o * s.len + l) * s.inner + i;
        if (live(idx)) mx = std::max(mx, xs[idx]);
      }
      if (mx == -std::numeric_limits<double>::infinity()) continue;
      double z = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const std::size_t idx = (o * s.len + l) * s.inner + i;
        if (live(idx)) z += (out[idx] = std::exp(xs[idx] - mx));
      }
      for (std::size_t l = 0; l < s.len; ++l) out[(o * s.len + l) * s.inner + i] /= z;
    }
  return make_result(x.shape(), std::move(out), {x}, [x, s](const TensorImpl& g) {
    double* gx = grad_sink(x);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        double dot = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t idx = (o * s.len + l) * s.inner + i;
          dot += g.data[idx] * g.grad[idx];
        }
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t idx = (o * s.len + l) * s.inner + i;
          gx[idx] += g.data[idx] * (g.grad[idx] - dot);
        }
      }
  });
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t factor) {
  std::vector<Tap> taps(in * factor);
  for (std::size_t d = 0; d < taps.size(); ++d) {
    double src = (static_cast<double>(d) + 0.5) / static_cast<double>(factor) - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[d] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, std::size_t factor) {
  if (x.rank() < 2) throw ShapeError("bilinear_upsample", "need rank >= 2, got " + shape_str(x.shape()));
  if (factor == 0) throw ShapeError("bilinear_upsample", "factor must be positive");
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const std::size_t planes = x.numel() / (h * w);
  const std::size_t oh = h * factor, ow = w * factor;
  Shape out_shape = x.shape();
  out_shape[x.rank() - 2] = oh;
  out_shape[x.rank() - 1] = ow;
  auto ty = bilinear_taps(h, factor), tx = bilinear_taps(w, factor);
  auto xs = x.data();
  std::vector<double> out(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* ip = xs.data() + p * h * w;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo) {
        const Tap& a = ty[y];
        const Tap& b = tx[xo];
        const double top = ip[a.i0 * w + b.i0] * (1.0 - b.frac) + ip[a.i0 * w + b.i1] * b.frac;
        const double bot = ip[a.i1 * w + b.i0] * (1.0 - b.frac) + ip[a.i1 * w + b.i1] * b.frac;
        out[(p * oh + y) * ow + xo] = top * (1.0 - a.frac) + bot * a.frac;
      }
  }
  return make_result(out_shape, std::move(out), {x},
                     [x, ty = std::move(ty), tx = std::move(tx), planes, h, w, oh,
                      ow](const TensorImpl& g) {
                       double* gx = grad_sink(x);
                       for (std::size_t p = 0; p < planes; ++p) {
                         double* gp = gx + p * h * w;
                         for (std::size_t y = 0; y < oh; ++y)
                           for (std::size_t xo = 0; xo < ow; ++xo) {
                             const Tap& a = ty[y];
                             const Tap& b = tx[xo];
                             const double gv = g.grad[(p * oh + y) * ow + xo];
                             gp[a.i0 * w + b.i0] += gv * (1.0 - a.frac) * (1.0 - b.frac);
                             gp[a.i0 * w + b.i1] += gv * (1.0 - a.frac) * b.frac;
                             gp[a.i1 * w + b.i0] += gv * a.frac * (1.0 - b.frac);
                             gp[a.i1 * w + b.i1] += gv * a.frac * b.frac;
                           }
                       }
                     });
}

Tensor pixel_shuffle(const Tensor& x, std::size_t r) {
  require_rank("pixel_shuffle", x, 3);
  if (r == 0 || x.dim(0) % (r * r) != 0) {
    throw ShapeError("pixel_shuffle", "channel count " + std::to_string(x.dim(0)) +
                                          " not divisible by " + std::to_string(r * r));
  }
  const std::size_t c = x.dim(0) / (r * r), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h * r, ow = w * r;
  auto src_index = [=](std::size_t oc, std::size_t y, std::size_t xo) {
    const std::size_t ic = oc * r * r + (y % r) * r + (xo % r);
    return (ic * h + y / r) * w + xo / r;
  };
  auto xs = x.data();
  std::vector<double> out(c * oh * ow);
  for (std::size_t oc = 0; oc < c; ++oc)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo) out[(oc * oh + y) * ow + xo] = xs[src_index(oc, y, xo)];
  return make_result({c, oh, ow}, std::move(out), {x}, [x, c, oh, ow, src_index](const TensorImpl& g) {
    double* gx = grad_sink(x);
    for (std::size_t oc = 0; oc < c; ++oc)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo)
          gx[src_index(oc, y, xo)] += g.grad[(oc * oh + y) * ow + xo];
  });
}

}  // namespace bpnet
