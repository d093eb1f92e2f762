#include "pvnow/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "pvnow/autograd.hpp"
#include "pvnow/kernels.hpp"

namespace pvnow {

namespace {

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw ShapeError(op + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

void require_same_dtype(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype()) {
    throw ShapeError(op + ": dtype mismatch " + to_string(a.dtype()) + " vs " +
                     to_string(b.dtype()));
  }
}

void require_rank(const std::string& op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank) {
    throw ShapeError(op + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(x.shape()));
  }
}

void record(std::vector<Tensor> inputs, const Tensor& out, Tape::BackwardFn fn) {
  Tape::current().record(std::move(inputs), out, std::move(fn));
}

// Binary elementwise op where `b` either matches `a` or holds a single element.
template <class Fwd, class GradA, class GradB>
Tensor binary(const std::string& name, const Tensor& a, const Tensor& b, Fwd fwd, GradA ga,
              GradB gb) {
  require_same_dtype(name, a, b);
  const bool broadcast = b.numel() == 1 && a.shape() != b.shape();
  if (!broadcast && a.shape() != b.shape()) shape_error(name, a.shape(), b.shape());
  Tensor out(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(x[i], y[broadcast ? 0 : i]);
  });
  if (any_requires_grad({&a, &b})) {
    record({a, b}, out, [a, b, out, broadcast, ga, gb]() mutable {
      dispatch(a.dtype(), [&]<class T>() {
        auto x = a.data<T>();
        auto y = b.data<T>();
        auto g = out.grad<T>();
        if (a.requires_grad()) {
          auto gx = a.grad_mut<T>();
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * ga(x[i], y[broadcast ? 0 : i]);
        }
        if (b.requires_grad()) {
          auto gy = b.grad_mut<T>();
          for (std::size_t i = 0; i < g.size(); ++i) {
            gy[broadcast ? 0 : i] += g[i] * gb(x[i], y[broadcast ? 0 : i]);
          }
        }
      });
    });
  }
  return out;
}

// Unary elementwise op; the derivative is expressed through input x and output y.
template <class Fwd, class Grad>
Tensor unary(const Tensor& x, Fwd fwd, Grad grad) {
  Tensor out(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto in = x.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(in[i]);
  });
  if (any_requires_grad({&x})) {
    record({x}, out, [x, out, grad]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        auto in = x.data<T>();
        auto o = out.data<T>();
        auto g = out.grad<T>();
        auto gx = x.grad_mut<T>();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * grad(in[i], o[i]);
      });
    });
  }
  return out;
}

template <class T>
T stable_sigmoid(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](auto x, auto y) { return x + y; },
      [](auto x, auto) { return decltype(x)(1); }, [](auto x, auto) { return decltype(x)(1); });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](auto x, auto y) { return x - y; },
      [](auto x, auto) { return decltype(x)(1); }, [](auto x, auto) { return decltype(x)(-1); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](auto x, auto y) { return x * y; }, [](auto, auto y) { return y; },
      [](auto x, auto) { return x; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](auto v) { return v * static_cast<decltype(v)>(factor); },
      [factor](auto v, auto) { return static_cast<decltype(v)>(factor); });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(
      x, [offset](auto v) { return v + static_cast<decltype(v)>(offset); },
      [](auto v, auto) { return decltype(v)(1); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](auto v) { return std::tanh(v); },
      [](auto, auto y) { return decltype(y)(1) - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](auto v) { return stable_sigmoid(v); },
      [](auto, auto y) { return y * (decltype(y)(1) - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](auto v) { return v > decltype(v)(0) ? v : decltype(v)(0); },
      [](auto v, auto) { return v > decltype(v)(0) ? decltype(v)(1) : decltype(v)(0); });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](auto v) { return std::abs(v); },
      [](auto v, auto) {
        using T = decltype(v);
        return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_same_dtype("matmul", a, b);
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_error("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n}, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    kernels::gemm<T>(false, false, m, n, k, a.data<T>().data(), b.data<T>().data(),
                     out.data<T>().data(), false);
  });
  if (any_requires_grad({&a, &b})) {
    record({a, b}, out, [a, b, out, m, n, k]() mutable {
      dispatch(a.dtype(), [&]<class T>() {
        const T* g = out.grad<T>().data();
        if (a.requires_grad()) {
          kernels::gemm<T>(false, true, m, k, n, g, b.data<T>().data(), a.grad_mut<T>().data(),
                           true);
        }
        if (b.requires_grad()) {
          kernels::gemm<T>(true, false, k, n, m, a.data<T>().data(), g, b.grad_mut<T>().data(),
                           true);
        }
      });
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_same_dtype("linear", x, weight);
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
    shape_error("linear", x.shape(), weight.shape());
  }
  const std::size_t batch = x.dim(0), in = x.dim(1), outs = weight.dim(0);
  if (bias.defined()) {
    require_same_dtype("linear", x, bias);
    if (bias.rank() != 1 || bias.dim(0) != outs) shape_error("linear(bias)", weight.shape(), bias.shape());
  }
  Tensor out({batch, outs}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    T* o = out.data<T>().data();
    kernels::gemm<T>(false, true, batch, outs, in, x.data<T>().data(), weight.data<T>().data(), o,
                     false);
    if (bias.defined()) {
      auto bv = bias.data<T>();
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t c = 0; c < outs; ++c) o[r * outs + c] += bv[c];
      }
    }
  });
  if (any_requires_grad({&x, &weight, &bias})) {
    record({x, weight, bias}, out, [x, weight, bias, out, batch, in, outs]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        const T* g = out.grad<T>().data();
        if (x.requires_grad()) {
          kernels::gemm<T>(false, false, batch, in, outs, g, weight.data<T>().data(),
                           x.grad_mut<T>().data(), true);
        }
        if (weight.requires_grad()) {
          kernels::gemm<T>(true, false, outs, in, batch, g, x.data<T>().data(),
                           weight.grad_mut<T>().data(), true);
        }
        if (bias.defined() && bias.requires_grad()) {
          auto gb = bias.grad_mut<T>();
          for (std::size_t r = 0; r < batch; ++r) {
            for (std::size_t c = 0; c < outs; ++c) gb[c] += g[r * outs + c];
          }
        }
      });
    });
  }
  return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_same_dtype("add_channel_bias", x, bias);
  if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    shape_error("add_channel_bias", x.shape(), bias.shape());
  }
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.numel() / (n * c);
  Tensor out(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto in = x.data<T>();
    auto b = bias.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t s = 0; s < inner; ++s) {
          const std::size_t idx = (i * c + ch) * inner + s;
          o[idx] = in[idx] + b[ch];
        }
  });
  if (any_requires_grad({&x, &bias})) {
    record({x, bias}, out, [x, bias, out, n, c, inner]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        auto g = out.grad<T>();
        if (x.requires_grad()) {
          auto gx = x.grad_mut<T>();
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (bias.requires_grad()) {
          auto gb = bias.grad_mut<T>();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t ch = 0; ch < c; ++ch)
              for (std::size_t s = 0; s < inner; ++s) gb[ch] += g[(i * c + ch) * inner + s];
        }
      });
    });
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dGeometry geometry) {
  require_same_dtype("conv2d", x, weight);
  if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(1)) {
    shape_error("conv2d", x.shape(), weight.shape());
  }
  kernels::ConvShape s;
  s.batch = x.dim(0);
  s.in_channels = x.dim(1);
  s.height = x.dim(2);
  s.width = x.dim(3);
  s.out_channels = weight.dim(0);
  s.kernel_h = weight.dim(2);
  s.kernel_w = weight.dim(3);
  s.stride = geometry.stride;
  s.padding = geometry.padding;
  if (s.stride == 0 || s.height + 2 * s.padding < s.kernel_h ||
      s.width + 2 * s.padding < s.kernel_w) {
    shape_error("conv2d", x.shape(), weight.shape());
  }
  if (bias.defined()) {
    require_same_dtype("conv2d", x, bias);
    if (bias.rank() != 1 || bias.dim(0) != s.out_channels) {
      shape_error("conv2d(bias)", weight.shape(), bias.shape());
    }
  }
  Tensor out({s.batch, s.out_channels, s.out_height(), s.out_width()}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    kernels::conv2d_forward<T>(s, x.data<T>().data(), weight.data<T>().data(),
                               bias.defined() ? bias.data<T>().data() : nullptr,
                               out.data<T>().data());
  });
  if (any_requires_grad({&x, &weight, &bias})) {
    record({x, weight, bias}, out, [x, weight, bias, out, s]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        T* gx = x.requires_grad() ? x.grad_mut<T>().data() : nullptr;
        T* gw = weight.requires_grad() ? weight.grad_mut<T>().data() : nullptr;
        T* gb = (bias.defined() && bias.requires_grad()) ? bias.grad_mut<T>().data() : nullptr;
        kernels::conv2d_backward<T>(s, x.data<T>().data(), weight.data<T>().data(),
                                    out.grad<T>().data(), gx, gw, gb);
      });
    });
  }
  return out;
}

Tensor max_pool2d(const Tensor& x, std::size_t window) {
  require_rank("max_pool2d", x, 4);
  if (window == 0 || x.dim(2) % window != 0 || x.dim(3) % window != 0) {
    throw ShapeError("max_pool2d: spatial size " + to_string(x.shape()) +
                     " not divisible by window " + std::to_string(window));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h / window, wo = w / window;
  Tensor out({x.dim(0), x.dim(1), ho, wo}, x.dtype());
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(planes * ho * wo);
  dispatch(x.dtype(), [&]<class T>() {
    kernels::max_pool2d_forward<T>(planes, h, w, window, x.data<T>().data(), out.data<T>().data(),
                                   argmax->data());
  });
  if (any_requires_grad({&x})) {
    record({x}, out, [x, out, argmax, planes, h, w, ho, wo]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        auto g = out.grad<T>();
        auto gx = x.grad_mut<T>();
        for (std::size_t p = 0; p < planes; ++p)
          for (std::size_t i = 0; i < ho * wo; ++i)
            gx[p * h * w + (*argmax)[p * ho * wo + i]] += g[p * ho * wo + i];
      });
    });
  }
  return out;
}

Tensor upsample_nearest2d(const Tensor& x, std::size_t factor) {
  require_rank("upsample_nearest2d", x, 4);
  if (factor == 0) throw ShapeError("upsample_nearest2d: factor must be positive");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h * factor, wo = w * factor;
  Tensor out({x.dim(0), x.dim(1), ho, wo}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto in = x.data<T>();
    auto o = out.data<T>();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xx = 0; xx < wo; ++xx)
          o[(p * ho + y) * wo + xx] = in[(p * h + y / factor) * w + xx / factor];
  });
  if (any_requires_grad({&x})) {
    record({x}, out, [x, out, planes, h, w, ho, wo, factor]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        auto g = out.grad<T>();
        auto gx = x.grad_mut<T>();
        for (std::size_t p = 0; p < planes; ++p)
          for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t xx = 0; xx < wo; ++xx)
              gx[(p * h + y / factor) * w + xx / factor] += g[(p * ho + y) * wo + xx];
      });
    });
  }
  return out;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Tensor& first = parts.front();
  if (axis >= first.rank()) throw ShapeError("concat: axis out of range for " + to_string(first.shape()));
  Shape shape = first.shape();
  shape[axis] = 0;
  for (const auto& p : parts) {
    require_same_dtype("concat", first, p);
    if (p.rank() != first.rank()) shape_error("concat", first.shape(), p.shape());
    for (std::size_t d = 0; d < p.rank(); ++d) {
      if (d != axis && p.dim(d) != first.dim(d)) shape_error("concat", first.shape(), p.shape());
    }
    shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  Tensor out(shape, first.dtype());
  const std::size_t row = shape[axis] * inner;
  dispatch(first.dtype(), [&]<class T>() {
    auto o = out.data<T>();
    std::size_t offset = 0;
    for (const auto& p : parts) {
      auto in = p.data<T>();
      const std::size_t chunk = p.dim(axis) * inner;
      for (std::size_t i = 0; i < outer; ++i) {
        std::copy_n(in.data() + i * chunk, chunk, o.data() + i * row + offset);
      }
      offset += chunk;
    }
  });
  bool needs = false;
  for (const auto& p : parts) needs = needs || any_requires_grad({&p});
  if (needs) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    record(inputs, out, [inputs, out, axis, outer, inner, row]() mutable {
      dispatch(out.dtype(), [&]<class T>() {
        auto g = out.grad<T>();
        std::size_t offset = 0;
        for (auto& p : inputs) {
          const std::size_t chunk = p.dim(axis) * inner;
          if (p.requires_grad()) {
            auto gp = p.grad_mut<T>();
            for (std::size_t i = 0; i < outer; ++i)
              for (std::size_t j = 0; j < chunk; ++j) gp[i * chunk + j] += g[i * row + offset + j];
          }
          offset += chunk;
        }
      });
    });
  }
  return out;
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || length == 0 || start + length > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + length) + ") on axis " + std::to_string(axis) +
                     " invalid for shape " + to_string(x.shape()));
  }
  Shape shape = x.shape();
  shape[axis] = length;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  const std::size_t src_row = x.dim(axis) * inner, dst_row = length * inner;
  Tensor out(shape, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto in = x.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < outer; ++i)
      std::copy_n(in.data() + i * src_row + start * inner, dst_row, o.data() + i * dst_row);
  });
  if (any_requires_grad({&x})) {
    record({x}, out, [x, out, outer, inner, start, src_row, dst_row]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        auto g = out.grad<T>();
        auto gx = x.grad_mut<T>();
        for (std::size_t i = 0; i < outer; ++i)
          for (std::size_t j = 0; j < dst_row; ++j) gx[i * src_row + start * inner + j] += g[i * dst_row + j];
      });
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) shape_error("reshape", x.shape(), shape);
  Tensor out(std::move(shape), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto in = x.data<T>();
    std::copy(in.begin(), in.end(), out.data<T>().begin());
  });
  if (any_requires_grad({&x})) {
    record({x}, out, [x, out]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        auto g = out.grad<T>();
        auto gx = x.grad_mut<T>();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      });
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  if (x.rank() < 1 || indices.empty()) throw ShapeError("gather_rows: empty input");
  const std::size_t rows = x.dim(0), width = x.numel() / rows;
  for (auto i : indices) {
    if (i >= rows) {
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range for shape " +
                       to_string(x.shape()));
    }
  }
  Shape shape = x.shape();
  shape[0] = indices.size();
  Tensor out(shape, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto in = x.data<T>();
    auto o = out.data<T>();
    for (std::size_t r = 0; r < indices.size(); ++r)
      std::copy_n(in.data() + indices[r] * width, width, o.data() + r * width);
  });
  if (any_requires_grad({&x})) {
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    record({x}, out, [x, out, idx, width]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        auto g = out.grad<T>();
        auto gx = x.grad_mut<T>();
        for (std::size_t r = 0; r < idx.size(); ++r)
          for (std::size_t j = 0; j < width; ++j) gx[idx[r] * width + j] += g[r * width + j];
      });
    });
  }
  return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormBuffers& buffers, bool training, double momentum, double eps) {
  if (x.rank() < 2) throw ShapeError("batch_norm: expected rank >= 2, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.numel() / (n * c);
  if (gamma.numel() != c || beta.numel() != c || buffers.running_mean.numel() != c ||
      buffers.running_var.numel() != c) {
    shape_error("batch_norm", x.shape(), gamma.shape());
  }
  require_same_dtype("batch_norm", x, gamma);
  require_same_dtype("batch_norm", x, beta);
  const std::size_t count = n * inner;
  Tensor out(x.shape(), x.dtype());
  // Per-channel normalized values and inverse std, kept for the backward rule.
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(c);
  dispatch(x.dtype(), [&]<class T>() {
    auto in = x.data<T>();
    auto g = gamma.data<T>();
    auto b = beta.data<T>();
    auto o = out.data<T>();
    auto rm = buffers.running_mean.data<T>();
    auto rv = buffers.running_var.data<T>();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double mu, var;
      if (training) {
        double acc = 0;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t s = 0; s < inner; ++s) acc += in[(i * c + ch) * inner + s];
        mu = acc / static_cast<double>(count);
        double sq = 0;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t s = 0; s < inner; ++s) {
            const double d = in[(i * c + ch) * inner + s] - mu;
            sq += d * d;
          }
        var = sq / static_cast<double>(count);
        const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
        rm[ch] = static_cast<T>(momentum * rm[ch] + (1.0 - momentum) * mu);
        rv[ch] = static_cast<T>(momentum * rv[ch] + (1.0 - momentum) * unbiased);
      } else {
        mu = rm[ch];
        var = rv[ch];
      }
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[ch] = is;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t s = 0; s < inner; ++s) {
          const std::size_t idx = (i * c + ch) * inner + s;
          const double h = (in[idx] - mu) * is;
          (*xhat)[idx] = h;
          o[idx] = static_cast<T>(g[ch] * h + b[ch]);
        }
    }
  });
  if (any_requires_grad({&x, &gamma, &beta})) {
    record({x, gamma, beta}, out,
           [x, gamma, beta, out, xhat, inv_std, n, c, inner, count, training]() mutable {
             dispatch(x.dtype(), [&]<class T>() {
               auto go = out.grad<T>();
               auto g = gamma.data<T>();
               for (std::size_t ch = 0; ch < c; ++ch) {
                 double sum_dy = 0, sum_dy_xhat = 0;
                 for (std::size_t i = 0; i < n; ++i)
                   for (std::size_t s = 0; s < inner; ++s) {
                     const std::size_t idx = (i * c + ch) * inner + s;
                     sum_dy += go[idx];
                     sum_dy_xhat += go[idx] * (*xhat)[idx];
                   }
                 if (gamma.requires_grad()) gamma.grad_mut<T>()[ch] += static_cast<T>(sum_dy_xhat);
                 if (beta.requires_grad()) beta.grad_mut<T>()[ch] += static_cast<T>(sum_dy);
                 if (!x.requires_grad()) continue;
                 auto gx = x.grad_mut<T>();
                 const double is = (*inv_std)[ch];
                 const double gm = g[ch];
                 const double m = static_cast<double>(count);
                 for (std::size_t i = 0; i < n; ++i)
                   for (std::size_t s = 0; s < inner; ++s) {
                     const std::size_t idx = (i * c + ch) * inner + s;
                     double d;
                     if (training) {
                       d = gm * is / m * (m * go[idx] - sum_dy - (*xhat)[idx] * sum_dy_xhat);
                     } else {
                       d = gm * is * go[idx];
                     }
                     gx[idx] += static_cast<T>(d);
                   }
               }
             });
           });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out({1}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto in = x.data<T>();
    T acc = 0;
    for (auto v : in) acc += v;
    out.data<T>()[0] = acc;
  });
  if (any_requires_grad({&x})) {
    record({x}, out, [x, out]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        const T g = out.grad<T>()[0];
        for (auto& v : x.grad_mut<T>()) v += g;
      });
    });
  }
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor l2_norm(const Tensor& x) { return row_l2_norm(reshape(x, {1, x.numel()})); }

Tensor row_l2_norm(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("row_l2_norm: rank 0 input");
  const std::size_t rows = x.dim(0), width = x.numel() / rows;
  Tensor out({rows}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto in = x.data<T>();
    auto o = out.data<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      T acc = 0;
      for (std::size_t j = 0; j < width; ++j) acc += in[r * width + j] * in[r * width + j];
      o[r] = std::sqrt(acc);
    }
  });
  if (any_requires_grad({&x})) {
    record({x}, out, [x, out, rows, width]() mutable {
      dispatch(x.dtype(), [&]<class T>() {
        auto in = x.data<T>();
        auto o = out.data<T>();
        auto g = out.grad<T>();
        auto gx = x.grad_mut<T>();
        for (std::size_t r = 0; r < rows; ++r) {
          if (o[r] == T(0)) continue;
          const T f = g[r] / o[r];
          for (std::size_t j = 0; j < width; ++j) gx[r * width + j] += f * in[r * width + j];
        }
      });
    });
  }
  return out;
}

}  // namespace pvnow
