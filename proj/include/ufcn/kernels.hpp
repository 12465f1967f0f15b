#pragma once

// Dense CNN kernels used by both networks.
//
// Two implementations share one set of signatures:
//   ufcn::kernels             im2col + GEMM, OpenMP-parallel loops (production path)
//   ufcn::kernels::reference  plain serial loops, kept as the test oracle and
//                             the benchmark baseline
//
// Weight layouts follow the usual conventions:
//   conv2d       w[out][in][k][k], stride 1, zero "same" padding (k odd)
//   upconv2x2    w[in][out][2][2], stride 2 (transposed convolution)
//
// Backward functions accumulate into dw/db and overwrite dx (when non-null).

#include <span>
#include <vector>

#include "ufcn/tensor.hpp"

namespace ufcn::kernels {

template <typename T>
void conv2d_forward(const Tensor<T>& x, std::span<const T> w, std::span<const T> b, int out_c,
                    int k, Tensor<T>& y);
template <typename T>
void conv2d_backward(const Tensor<T>& x, std::span<const T> w, int out_c, int k,
                     const Tensor<T>& dy, Tensor<T>* dx, std::span<T> dw, std::span<T> db);

template <typename T>
void upconv2x2_forward(const Tensor<T>& x, std::span<const T> w, std::span<const T> b, int out_c,
                       Tensor<T>& y);
template <typename T>
void upconv2x2_backward(const Tensor<T>& x, std::span<const T> w, int out_c, const Tensor<T>& dy,
                        Tensor<T>* dx, std::span<T> dw, std::span<T> db);

// argmax receives, per output element, the flat input index it was taken from.
template <typename T>
void maxpool2x2_forward(const Tensor<T>& x, Tensor<T>& y, std::vector<int>& argmax);
template <typename T>
void maxpool2x2_backward(const Tensor<T>& dy, const std::vector<int>& argmax, int in_h, int in_w,
                         Tensor<T>& dx);

// Bilinear 2x upsampling with half-pixel centers (align_corners = false).
template <typename T>
void upsample_bilinear2x_forward(const Tensor<T>& x, Tensor<T>& y);
template <typename T>
void upsample_bilinear2x_backward(const Tensor<T>& dy, Tensor<T>& dx);

namespace reference {

template <typename T>
void conv2d_forward(const Tensor<T>& x, std::span<const T> w, std::span<const T> b, int out_c,
                    int k, Tensor<T>& y);
template <typename T>
void conv2d_backward(const Tensor<T>& x, std::span<const T> w, int out_c, int k,
                     const Tensor<T>& dy, Tensor<T>* dx, std::span<T> dw, std::span<T> db);
template <typename T>
void upconv2x2_forward(const Tensor<T>& x, std::span<const T> w, std::span<const T> b, int out_c,
                       Tensor<T>& y);
template <typename T>
void upconv2x2_backward(const Tensor<T>& x, std::span<const T> w, int out_c, const Tensor<T>& dy,
                        Tensor<T>* dx, std::span<T> dw, std::span<T> db);
template <typename T>
void maxpool2x2_forward(const Tensor<T>& x, Tensor<T>& y, std::vector<int>& argmax);
template <typename T>
void maxpool2x2_backward(const Tensor<T>& dy, const std::vector<int>& argmax, int in_h, int in_w,
                         Tensor<T>& dx);
template <typename T>
void upsample_bilinear2x_forward(const Tensor<T>& x, Tensor<T>& y);
template <typename T>
void upsample_bilinear2x_backward(const Tensor<T>& dy, Tensor<T>& dx);

}  // namespace reference

// Source coordinate taps for one axis of the 2x bilinear upsample.
struct BilinearTap {
  int i0;
  int i1;
  double frac;  // weight of i1
};
std::vector<BilinearTap> bilinear2x_taps(int in_len);

}  // namespace ufcn::kernels
