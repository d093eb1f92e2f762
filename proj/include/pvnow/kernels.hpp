#pragma once

// Compute kernels behind the tensor ops.
//
// The default namespace holds the OpenMP-parallel implementations used in
// training. `kernels::reference` holds plain serial loops kept as the
// correctness baseline for tests and the benchmark. Parallel kernels split work
// only over independent output elements, so every output is summed in the same
// order regardless of thread count.

#include <cstddef>
#include <cstdint>

namespace pvnow::kernels {

void set_num_threads(int threads);
int num_threads();

struct ConvShape {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_height() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel_w) / stride + 1; }
  std::size_t patch_size() const { return in_channels * kernel_h * kernel_w; }
};

/// C[m,n] = op(A)[m,k] * op(B)[k,n] (+ C when accumulate). Row-major, contiguous.
/// With trans_a, A is stored [k,m]; with trans_b, B is stored [n,k].
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);

template <class T>
void im2col(const ConvShape& s, const T* image, T* col);
/// Accumulates columns back into `image` (which is not cleared).
template <class T>
void col2im(const ConvShape& s, const T* col, T* image);

/// bias may be null.
template <class T>
void conv2d_forward(const ConvShape& s, const T* x, const T* weight, const T* bias, T* out);

/// Accumulates into every non-null gradient pointer.
template <class T>
void conv2d_backward(const ConvShape& s, const T* x, const T* weight, const T* grad_out,
                     T* grad_x, T* grad_weight, T* grad_bias);

/// argmax receives the flat input index (within one N*C plane) chosen per output.
template <class T>
void max_pool2d_forward(std::size_t planes, std::size_t height, std::size_t width,
                        std::size_t window, const T* x, T* out, std::uint32_t* argmax);

namespace reference {

template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);

template <class T>
void conv2d_forward(const ConvShape& s, const T* x, const T* weight, const T* bias, T* out);

template <class T>
void conv2d_backward(const ConvShape& s, const T* x, const T* weight, const T* grad_out,
                     T* grad_x, T* grad_weight, T* grad_bias);

template <class T>
void max_pool2d_forward(std::size_t planes, std::size_t height, std::size_t width,
                        std::size_t window, const T* x, T* out, std::uint32_t* argmax);

}  // namespace reference

}  // namespace pvnow::kernels
