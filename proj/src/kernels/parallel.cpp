#include <algorithm>
#include <cstring>
#include <vector>

#include <omp.h>

#include "pvnow/kernels.hpp"

namespace pvnow::kernels {

void set_num_threads(int threads) { omp_set_num_threads(std::max(1, threads)); }

int num_threads() { return omp_get_max_threads(); }

namespace {

template <class T>
struct Lanes;
template <>
struct Lanes<float> {
  typedef float vec __attribute__((vector_size(64)));
  static constexpr std::size_t count = 16;
};
template <>
struct Lanes<double> {
  typedef double vec __attribute__((vector_size(64)));
  static constexpr std::size_t count = 8;
};

constexpr std::size_t kMr = 6;
constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = kMr * 8;

template <class T>
constexpr std::size_t nr() {
  return 2 * Lanes<T>::count;
}

template <class T>
constexpr std::size_t nc() {
  return nr<T>() * 64;
}

// Packs op(A)[ic:ic+mc, pc:pc+kc] into row panels of kMr, p-major inside a panel.
template <class T>
void pack_a(bool trans, const T* a, std::size_t m, std::size_t k, std::size_t ic, std::size_t mc,
            std::size_t pc, std::size_t kc, T* out) {
  for (std::size_t r0 = 0; r0 < mc; r0 += kMr) {
    const std::size_t rows = std::min(kMr, mc - r0);
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t r = 0; r < kMr; ++r) {
        T v = 0;
        if (r < rows) {
          const std::size_t i = ic + r0 + r, pp = pc + p;
          v = trans ? a[pp * m + i] : a[i * k + pp];
        }
        *out++ = v;
      }
    }
  }
}

// Packs op(B)[pc:pc+kc, jc:jc+nc] into column panels of nr, p-major inside a panel.
template <class T>
void pack_b(bool trans, const T* b, std::size_t n, std::size_t k, std::size_t jc, std::size_t ncols,
            std::size_t pc, std::size_t kc, T* out) {
  constexpr std::size_t w = nr<T>();
  for (std::size_t c0 = 0; c0 < ncols; c0 += w) {
    const std::size_t cols = std::min(w, ncols - c0);
    for (std::size_t p = 0; p < kc; ++p) {
      const std::size_t pp = pc + p;
      if (!trans && cols == w) {
        std::memcpy(out, b + pp * n + jc + c0, w * sizeof(T));
        out += w;
        continue;
      }
      for (std::size_t c = 0; c < w; ++c) {
        T v = 0;
        if (c < cols) {
          const std::size_t j = jc + c0 + c;
          v = trans ? b[j * k + pp] : b[pp * n + j];
        }
        *out++ = v;
      }
    }
  }
}

template <class T>
void micro_kernel(std::size_t kc, const T* ap, const T* bp, T* c, std::size_t ldc, std::size_t rows,
                  std::size_t cols, bool accumulate) {
  using V = typename Lanes<T>::vec;
  constexpr std::size_t lanes = Lanes<T>::count;
  V acc[kMr][2];
#pragma GCC unroll 6
  for (std::size_t r = 0; r < kMr; ++r) {
    acc[r][0] = V{};
    acc[r][1] = V{};
  }
  for (std::size_t p = 0; p < kc; ++p) {
    V b0, b1;
    std::memcpy(&b0, bp, sizeof(V));
    std::memcpy(&b1, bp + lanes, sizeof(V));
#pragma GCC unroll 6
    for (std::size_t r = 0; r < kMr; ++r) {
      const V a = V{} + ap[r];
      acc[r][0] += a * b0;
      acc[r][1] += a * b1;
    }
    ap += kMr;
    bp += 2 * lanes;
  }
  alignas(64) T tile[kMr][2 * lanes];
  std::memcpy(tile, acc, sizeof(tile));
  for (std::size_t r = 0; r < rows; ++r) {
    T* crow = c + r * ldc;
    if (accumulate) {
      for (std::size_t j = 0; j < cols; ++j) crow[j] += tile[r][j];
    } else {
      for (std::size_t j = 0; j < cols; ++j) crow[j] = tile[r][j];
    }
  }
}

}  // namespace

template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    return;
  }
  constexpr std::size_t w = nr<T>();
  std::vector<T> bpack;
  for (std::size_t jc = 0; jc < n; jc += nc<T>()) {
    const std::size_t ncols = std::min(nc<T>(), n - jc);
    const std::size_t panels = (ncols + w - 1) / w;
    for (std::size_t pc = 0; pc < k; pc += kKc) {
      const std::size_t kc = std::min(kKc, k - pc);
      const bool acc = accumulate || pc > 0;
      bpack.resize(panels * w * kc);
      pack_b(trans_b, b, n, k, jc, ncols, pc, kc, bpack.data());
      const auto blocks = static_cast<std::ptrdiff_t>((m + kMc - 1) / kMc);
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
        thread_local std::vector<T> apack;
        const std::size_t ic = static_cast<std::size_t>(blk) * kMc;
        const std::size_t mc = std::min(kMc, m - ic);
        apack.resize(((mc + kMr - 1) / kMr) * kMr * kc);
        pack_a(trans_a, a, m, k, ic, mc, pc, kc, apack.data());
        for (std::size_t jp = 0; jp < panels; ++jp) {
          const std::size_t cols = std::min(w, ncols - jp * w);
          for (std::size_t r0 = 0; r0 < mc; r0 += kMr) {
            micro_kernel(kc, apack.data() + r0 * kc, bpack.data() + jp * w * kc,
                         c + (ic + r0) * n + jc + jp * w, n, std::min(kMr, mc - r0), cols, acc);
          }
        }
      }
    }
  }
}

namespace {

// im2col/col2im with an explicit row stride so several images can share one column matrix.
template <class T>
void im2col_strided(const ConvShape& s, const T* image, T* col, std::size_t ld) {
  const std::size_t ho = s.out_height(), wo = s.out_width();
  const auto h = static_cast<std::ptrdiff_t>(s.height), wd = static_cast<std::ptrdiff_t>(s.width);
  const auto pad = static_cast<std::ptrdiff_t>(s.padding);
  for (std::size_t c = 0; c < s.in_channels; ++c) {
    for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
        T* row = col + ((c * s.kernel_h + ky) * s.kernel_w + kx) * ld;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky) - pad;
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = image + (c * s.height + static_cast<std::size_t>(iy)) * s.width;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * s.stride + kx) - pad;
            dst[ox] = (ix < 0 || ix >= wd) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_strided(const ConvShape& s, const T* col, T* image, std::size_t ld) {
  const std::size_t ho = s.out_height(), wo = s.out_width();
  const auto h = static_cast<std::ptrdiff_t>(s.height), wd = static_cast<std::ptrdiff_t>(s.width);
  const auto pad = static_cast<std::ptrdiff_t>(s.padding);
  for (std::size_t c = 0; c < s.in_channels; ++c) {
    for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
        const T* row = col + ((c * s.kernel_h + ky) * s.kernel_w + kx) * ld;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky) - pad;
          if (iy < 0 || iy >= h) continue;
          T* dst = image + (c * s.height + static_cast<std::size_t>(iy)) * s.width;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * s.stride + kx) - pad;
            if (ix >= 0 && ix < wd) dst[ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

// Images per column matrix: small output planes are batched so the GEMM stays wide.
std::size_t images_per_chunk(const ConvShape& s) {
  constexpr std::size_t kMinColumns = 512;
  const std::size_t plane = s.out_height() * s.out_width();
  return std::max<std::size_t>(1, std::min(s.batch, (kMinColumns + plane - 1) / plane));
}

bool is_pointwise(const ConvShape& s) {
  return s.kernel_h == 1 && s.kernel_w == 1 && s.stride == 1 && s.padding == 0;
}

}  // namespace

template <class T>
void im2col(const ConvShape& s, const T* image, T* col) {
  im2col_strided(s, image, col, s.out_height() * s.out_width());
}

template <class T>
void col2im(const ConvShape& s, const T* col, T* image) {
  col2im_strided(s, col, image, s.out_height() * s.out_width());
}

template <class T>
void conv2d_forward(const ConvShape& s, const T* x, const T* weight, const T* bias, T* out) {
  const std::size_t plane = s.out_height() * s.out_width();
  const std::size_t patch = s.patch_size();
  const std::size_t in_size = s.in_channels * s.height * s.width;
  const std::size_t chunk = images_per_chunk(s);
  std::vector<T> col, tmp;
  for (std::size_t n0 = 0; n0 < s.batch; n0 += chunk) {
    const std::size_t nb = std::min(chunk, s.batch - n0);
    const std::size_t cols = nb * plane;
    T* dst = out + n0 * s.out_channels * plane;
    if (nb == 1) {
      const T* src = x + n0 * in_size;
      if (!is_pointwise(s)) {
        col.resize(patch * plane);
        im2col_strided(s, src, col.data(), plane);
        src = col.data();
      }
      gemm<T>(false, false, s.out_channels, plane, patch, weight, src, dst, false);
    } else {
      col.resize(patch * cols);
      tmp.resize(s.out_channels * cols);
      for (std::size_t b = 0; b < nb; ++b) {
        im2col_strided(s, x + (n0 + b) * in_size, col.data() + b * plane, cols);
      }
      gemm<T>(false, false, s.out_channels, cols, patch, weight, col.data(), tmp.data(), false);
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t o = 0; o < s.out_channels; ++o)
          std::copy_n(tmp.data() + o * cols + b * plane, plane,
                      dst + (b * s.out_channels + o) * plane);
    }
    if (bias) {
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t o = 0; o < s.out_channels; ++o) {
          T* row = dst + (b * s.out_channels + o) * plane;
          for (std::size_t p = 0; p < plane; ++p) row[p] += bias[o];
        }
    }
  }
}

template <class T>
void conv2d_backward(const ConvShape& s, const T* x, const T* weight, const T* grad_out,
                     T* grad_x, T* grad_weight, T* grad_bias) {
  const std::size_t plane = s.out_height() * s.out_width();
  const std::size_t patch = s.patch_size();
  const std::size_t in_size = s.in_channels * s.height * s.width;
  const std::size_t out_size = s.out_channels * plane;

  if (grad_bias) {
    for (std::size_t n = 0; n < s.batch; ++n) {
      for (std::size_t o = 0; o < s.out_channels; ++o) {
        const T* row = grad_out + n * out_size + o * plane;
        T acc = 0;
        for (std::size_t p = 0; p < plane; ++p) acc += row[p];
        grad_bias[o] += acc;
      }
    }
  }
  if (!grad_weight && !grad_x) return;

  // Chunks are visited in image order, so accumulated sums do not depend on thread count.
  const std::size_t chunk = images_per_chunk(s);
  std::vector<T> col, dout, dcol;
  for (std::size_t n0 = 0; n0 < s.batch; n0 += chunk) {
    const std::size_t nb = std::min(chunk, s.batch - n0);
    const std::size_t cols = nb * plane;
    const T* g = grad_out + n0 * out_size;
    if (nb > 1) {
      dout.resize(s.out_channels * cols);
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t o = 0; o < s.out_channels; ++o)
          std::copy_n(g + (b * s.out_channels + o) * plane, plane,
                      dout.data() + o * cols + b * plane);
      g = dout.data();
    }
    if (grad_weight) {
      const T* src = x + n0 * in_size;
      if (nb > 1 || !is_pointwise(s)) {
        col.resize(patch * cols);
        for (std::size_t b = 0; b < nb; ++b) {
          im2col_strided(s, x + (n0 + b) * in_size, col.data() + b * plane, cols);
        }
        src = col.data();
      }
      gemm<T>(false, true, s.out_channels, patch, cols, g, src, grad_weight, true);
    }
    if (grad_x) {
      if (nb == 1 && is_pointwise(s)) {
        gemm<T>(true, false, patch, plane, s.out_channels, weight, g, grad_x + n0 * in_size, true);
        continue;
      }
      dcol.resize(patch * cols);
      gemm<T>(true, false, patch, cols, s.out_channels, weight, g, dcol.data(), false);
      for (std::size_t b = 0; b < nb; ++b) {
        col2im_strided(s, dcol.data() + b * plane, grad_x + (n0 + b) * in_size, cols);
      }
    }
  }
}

template <class T>
void max_pool2d_forward(std::size_t planes, std::size_t height, std::size_t width,
                        std::size_t window, const T* x, T* out, std::uint32_t* argmax) {
  const std::size_t ho = height / window, wo = width / window;
  const auto count = static_cast<std::ptrdiff_t>(planes);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < count; ++p) {
    const T* plane = x + static_cast<std::size_t>(p) * height * width;
    T* dst = out + static_cast<std::size_t>(p) * ho * wo;
    std::uint32_t* arg = argmax + static_cast<std::size_t>(p) * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = oy * window * width + ox * window;
        T best_v = plane[best];
        for (std::size_t ky = 0; ky < window; ++ky) {
          const std::size_t base = (oy * window + ky) * width + ox * window;
          for (std::size_t kx = 0; kx < window; ++kx) {
            if (plane[base + kx] > best_v) {
              best_v = plane[base + kx];
              best = base + kx;
            }
          }
        }
        dst[oy * wo + ox] = best_v;
        arg[oy * wo + ox] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

#define PVNOW_INSTANTIATE(T)                                                                  \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*, const T*, \
                        T*, bool);                                                            \
  template void im2col<T>(const ConvShape&, const T*, T*);                                    \
  template void col2im<T>(const ConvShape&, const T*, T*);                                    \
  template void conv2d_forward<T>(const ConvShape&, const T*, const T*, const T*, T*);        \
  template void conv2d_backward<T>(const ConvShape&, const T*, const T*, const T*, T*, T*, T*); \
  template void max_pool2d_forward<T>(std::size_t, std::size_t, std::size_t, std::size_t,     \
                                      const T*, T*, std::uint32_t*);

PVNOW_INSTANTIATE(float)
PVNOW_INSTANTIATE(double)

#undef PVNOW_INSTANTIATE

}  // namespace pvnow::kernels
