#include <algorithm>
#include <cstdint>

#include "pvnow/kernels.hpp"

namespace pvnow::kernels::reference {

template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * m + i] : a[i * k + p];
        const T bv = trans_b ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

// Direct seven-loop convolution; the out-of-bounds taps are skipped (zero padding).
template <class T>
void conv2d_forward(const ConvShape& s, const T* x, const T* weight, const T* bias, T* out) {
  const std::size_t ho = s.out_height(), wo = s.out_width();
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t o = 0; o < s.out_channels; ++o) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          T acc = bias ? bias[o] : T(0);
          for (std::size_t c = 0; c < s.in_channels; ++c) {
            for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky) -
                              static_cast<std::ptrdiff_t>(s.padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.height)) continue;
              for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * s.stride + kx) -
                                static_cast<std::ptrdiff_t>(s.padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.width)) continue;
                acc += x[((n * s.in_channels + c) * s.height + iy) * s.width + ix] *
                       weight[((o * s.in_channels + c) * s.kernel_h + ky) * s.kernel_w + kx];
              }
            }
          }
          out[((n * s.out_channels + o) * ho + oy) * wo + ox] = acc;
        }
      }
    }
  }
}

template <class T>
void conv2d_backward(const ConvShape& s, const T* x, const T* weight, const T* grad_out,
                     T* grad_x, T* grad_weight, T* grad_bias) {
  const std::size_t ho = s.out_height(), wo = s.out_width();
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t o = 0; o < s.out_channels; ++o) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const T g = grad_out[((n * s.out_channels + o) * ho + oy) * wo + ox];
          if (grad_bias) grad_bias[o] += g;
          for (std::size_t c = 0; c < s.in_channels; ++c) {
            for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky) -
                              static_cast<std::ptrdiff_t>(s.padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.height)) continue;
              for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * s.stride + kx) -
                                static_cast<std::ptrdiff_t>(s.padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.width)) continue;
                const std::size_t xi = ((n * s.in_channels + c) * s.height + iy) * s.width + ix;
                const std::size_t wi = ((o * s.in_channels + c) * s.kernel_h + ky) * s.kernel_w + kx;
                if (grad_weight) grad_weight[wi] += g * x[xi];
                if (grad_x) grad_x[xi] += g * weight[wi];
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void max_pool2d_forward(std::size_t planes, std::size_t height, std::size_t width,
                        std::size_t window, const T* x, T* out, std::uint32_t* argmax) {
  const std::size_t ho = height / window, wo = width / window;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* plane = x + p * height * width;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = oy * window * width + ox * window;
        for (std::size_t ky = 0; ky < window; ++ky) {
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t idx = (oy * window + ky) * width + ox * window + kx;
            if (plane[idx] > plane[best]) best = idx;
          }
        }
        const std::size_t o = (p * ho + oy) * wo + ox;
        out[o] = plane[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

#define PVNOW_INSTANTIATE(T)                                                                  \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*, const T*, \
                        T*, bool);                                                            \
  template void conv2d_forward<T>(const ConvShape&, const T*, const T*, const T*, T*);        \
  template void conv2d_backward<T>(const ConvShape&, const T*, const T*, const T*, T*, T*, T*); \
  template void max_pool2d_forward<T>(std::size_t, std::size_t, std::size_t, std::size_t,     \
                                      const T*, T*, std::uint32_t*);

PVNOW_INSTANTIATE(float)
PVNOW_INSTANTIATE(double)

#undef PVNOW_INSTANTIATE

}  // namespace pvnow::kernels::reference
