// Production kernels: im2col + Eigen GEMM for the convolutions, OpenMP over
// channels for the data-movement loops.

#include <Eigen/Core>
#include <algorithm>
#include <cstring>
#include <limits>

#include "ufcn/kernels.hpp"

namespace ufcn::kernels {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
Buffer<T>& scratch(int slot) {
  thread_local Buffer<T> buffers[3];
  return buffers[slot];
}

// cols[(c*k + u)*k + v][i*w + j] = x[c][i+u-pad][j+v-pad], zero outside.
template <typename T>
void im2col(const Tensor<T>& x, int k, Buffer<T>& cols) {
  const int pad = k / 2;
  const std::size_t hw = x.plane();
  cols.resize(static_cast<std::size_t>(x.c) * k * k * hw);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < x.c; ++c) {
    for (int u = 0; u < k; ++u) {
      for (int v = 0; v < k; ++v) {
        T* row = cols.data() + ((static_cast<std::size_t>(c) * k + u) * k + v) * hw;
        const int j_lo = std::max(0, pad - v);
        const int j_hi = std::min(x.w, x.w + pad - v);
        for (int i = 0; i < x.h; ++i) {
          T* dst = row + static_cast<std::size_t>(i) * x.w;
          const int yi = i + u - pad;
          if (yi < 0 || yi >= x.h) {
            std::fill(dst, dst + x.w, T(0));
            continue;
          }
          std::fill(dst, dst + j_lo, T(0));
          const T* src = &x.data[(static_cast<std::size_t>(c) * x.h + yi) * x.w];
          for (int j = j_lo; j < j_hi; ++j) dst[j] = src[j + v - pad];
          std::fill(dst + j_hi, dst + x.w, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im(const Buffer<T>& cols, int k, Tensor<T>& dx) {
  const int pad = k / 2;
  const std::size_t hw = dx.plane();
#pragma omp parallel for schedule(static)
  for (int c = 0; c < dx.c; ++c) {
    for (int u = 0; u < k; ++u) {
      for (int v = 0; v < k; ++v) {
        const T* row = cols.data() + ((static_cast<std::size_t>(c) * k + u) * k + v) * hw;
        const int j_lo = std::max(0, pad - v);
        const int j_hi = std::min(dx.w, dx.w + pad - v);
        for (int i = 0; i < dx.h; ++i) {
          const int yi = i + u - pad;
          if (yi < 0 || yi >= dx.h) continue;
          const T* src = row + static_cast<std::size_t>(i) * dx.w;
          T* dst = &dx.data[(static_cast<std::size_t>(c) * dx.h + yi) * dx.w];
          for (int j = j_lo; j < j_hi; ++j) dst[j + v - pad] += src[j];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const Tensor<T>& x, std::span<const T> w, std::span<const T> b, int out_c,
                    int k, Tensor<T>& y) {
  const Eigen::Index kk = static_cast<Eigen::Index>(x.c) * k * k;
  const Eigen::Index hw = static_cast<Eigen::Index>(x.plane());
  y = Tensor<T>(out_c, x.h, x.w);
  const T* cols_ptr = x.data.data();
  if (k != 1) {
    auto& cols = scratch<T>(0);
    im2col(x, k, cols);
    cols_ptr = cols.data();
  }
  CMapMat<T> wm(w.data(), out_c, kk);
  CMapMat<T> cm(cols_ptr, kk, hw);
  MapMat<T> ym(y.data.data(), out_c, hw);
  ym.noalias() = wm * cm;
  if (!b.empty()) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < out_c; ++o) ym.row(o).array() += b[o];
  }
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, std::span<const T> w, int out_c, int k,
                     const Tensor<T>& dy, Tensor<T>* dx, std::span<T> dw, std::span<T> db) {
  const Eigen::Index kk = static_cast<Eigen::Index>(x.c) * k * k;
  const Eigen::Index hw = static_cast<Eigen::Index>(x.plane());
  const T* cols_ptr = x.data.data();
  if (k != 1) {
    auto& cols = scratch<T>(0);
    im2col(x, k, cols);
    cols_ptr = cols.data();
  }
  CMapMat<T> dym(dy.data.data(), out_c, hw);
  CMapMat<T> cm(cols_ptr, kk, hw);
  MapMat<T> dwm(dw.data(), out_c, kk);
  dwm.noalias() += dym * cm.transpose();
  if (!db.empty()) {
    for (int o = 0; o < out_c; ++o) db[o] += dym.row(o).sum();
  }
  if (!dx) return;
  CMapMat<T> wm(w.data(), out_c, kk);
  *dx = Tensor<T>(x.c, x.h, x.w);
  if (k == 1) {
    MapMat<T> dxm(dx->data.data(), kk, hw);
    dxm.noalias() = wm.transpose() * dym;
    return;
  }
  auto& dcols = scratch<T>(1);
  dcols.resize(static_cast<std::size_t>(kk * hw));
  MapMat<T> dcm(dcols.data(), kk, hw);
  dcm.noalias() = wm.transpose() * dym;
  col2im(dcols, k, *dx);
}

template <typename T>
void upconv2x2_forward(const Tensor<T>& x, std::span<const T> w, std::span<const T> b, int out_c,
                       Tensor<T>& y) {
  const Eigen::Index hw = static_cast<Eigen::Index>(x.plane());
  RowMat<T> wr(out_c * 4, x.c);
  for (int c = 0; c < x.c; ++c)
    for (int r = 0; r < out_c * 4; ++r) wr(r, c) = w[static_cast<std::size_t>(c) * out_c * 4 + r];
  auto& z = scratch<T>(2);
  z.resize(static_cast<std::size_t>(out_c) * 4 * hw);
  MapMat<T> zm(z.data(), out_c * 4, hw);
  zm.noalias() = wr * CMapMat<T>(x.data.data(), x.c, hw);
  y = Tensor<T>(out_c, x.h * 2, x.w * 2);
#pragma omp parallel for schedule(static)
  for (int o = 0; o < out_c; ++o) {
    const T bias = b.empty() ? T(0) : b[o];
    for (int uv = 0; uv < 4; ++uv) {
      const int u = uv / 2, v = uv % 2;
      const T* src = z.data() + (static_cast<std::size_t>(o) * 4 + uv) * hw;
      for (int i = 0; i < x.h; ++i)
        for (int j = 0; j < x.w; ++j) y.at(o, 2 * i + u, 2 * j + v) = src[i * x.w + j] + bias;
    }
  }
}

template <typename T>
void upconv2x2_backward(const Tensor<T>& x, std::span<const T> w, int out_c, const Tensor<T>& dy,
                        Tensor<T>* dx, std::span<T> dw, std::span<T> db) {
  const Eigen::Index hw = static_cast<Eigen::Index>(x.plane());
  auto& dz = scratch<T>(2);
  dz.resize(static_cast<std::size_t>(out_c) * 4 * hw);
#pragma omp parallel for schedule(static)
  for (int o = 0; o < out_c; ++o) {
    for (int uv = 0; uv < 4; ++uv) {
      const int u = uv / 2, v = uv % 2;
      T* dst = dz.data() + (static_cast<std::size_t>(o) * 4 + uv) * hw;
      for (int i = 0; i < x.h; ++i)
        for (int j = 0; j < x.w; ++j) dst[i * x.w + j] = dy.at(o, 2 * i + u, 2 * j + v);
    }
  }
  if (!db.empty()) {
    for (int o = 0; o < out_c; ++o) {
      const auto ch = dy.channel(o);
      T s = 0;
      for (T g : ch) s += g;
      db[o] += s;
    }
  }
  CMapMat<T> dzm(dz.data(), out_c * 4, hw);
  CMapMat<T> xm(x.data.data(), x.c, hw);
  const RowMat<T> dwr = dzm * xm.transpose();
  for (int c = 0; c < x.c; ++c)
    for (int r = 0; r < out_c * 4; ++r) dw[static_cast<std::size_t>(c) * out_c * 4 + r] += dwr(r, c);
  if (!dx) return;
  RowMat<T> wr(out_c * 4, x.c);
  for (int c = 0; c < x.c; ++c)
    for (int r = 0; r < out_c * 4; ++r) wr(r, c) = w[static_cast<std::size_t>(c) * out_c * 4 + r];
  *dx = Tensor<T>(x.c, x.h, x.w);
  MapMat<T> dxm(dx->data.data(), x.c, hw);
  dxm.noalias() = wr.transpose() * dzm;
}

template <typename T>
void maxpool2x2_forward(const Tensor<T>& x, Tensor<T>& y, std::vector<int>& argmax) {
  if (x.h % 2 != 0 || x.w % 2 != 0) throw ShapeError("maxpool2x2: odd spatial size");
  y = Tensor<T>(x.c, x.h / 2, x.w / 2);
  argmax.assign(y.size(), 0);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < x.c; ++c) {
    for (int i = 0; i < y.h; ++i) {
      for (int j = 0; j < y.w; ++j) {
        const int base = (c * x.h + 2 * i) * x.w + 2 * j;
        const int cand[4] = {base, base + 1, base + x.w, base + x.w + 1};
        int best = cand[0];
        for (int t = 1; t < 4; ++t)
          if (x.data[cand[t]] > x.data[best]) best = cand[t];
        const int out = (c * y.h + i) * y.w + j;
        y.data[out] = x.data[best];
        argmax[out] = best;
      }
    }
  }
}

template <typename T>
void maxpool2x2_backward(const Tensor<T>& dy, const std::vector<int>& argmax, int in_h, int in_w,
                         Tensor<T>& dx) {
  dx = Tensor<T>(dy.c, in_h, in_w);
  const std::size_t plane_out = dy.plane();
#pragma omp parallel for schedule(static)
  for (int c = 0; c < dy.c; ++c) {
    for (std::size_t p = 0; p < plane_out; ++p) {
      const std::size_t i = c * plane_out + p;
      dx.data[argmax[i]] += dy.data[i];
    }
  }
}

template <typename T>
void upsample_bilinear2x_forward(const Tensor<T>& x, Tensor<T>& y) {
  const auto ty = bilinear2x_taps(x.h);
  const auto tx = bilinear2x_taps(x.w);
  y = Tensor<T>(x.c, x.h * 2, x.w * 2);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < x.c; ++c) {
    for (int i = 0; i < y.h; ++i) {
      const auto& a = ty[i];
      const T fy = static_cast<T>(a.frac);
      const T* r0 = &x.data[(static_cast<std::size_t>(c) * x.h + a.i0) * x.w];
      const T* r1 = &x.data[(static_cast<std::size_t>(c) * x.h + a.i1) * x.w];
      T* dst = &y.data[(static_cast<std::size_t>(c) * y.h + i) * y.w];
      for (int j = 0; j < y.w; ++j) {
        const auto& b = tx[j];
        const T fx = static_cast<T>(b.frac);
        dst[j] = (1 - fy) * ((1 - fx) * r0[b.i0] + fx * r0[b.i1]) +
                 fy * ((1 - fx) * r1[b.i0] + fx * r1[b.i1]);
      }
    }
  }
}

template <typename T>
void upsample_bilinear2x_backward(const Tensor<T>& dy, Tensor<T>& dx) {
  const auto ty = bilinear2x_taps(dy.h / 2);
  const auto tx = bilinear2x_taps(dy.w / 2);
  dx = Tensor<T>(dy.c, dy.h / 2, dy.w / 2);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < dy.c; ++c) {
    for (int i = 0; i < dy.h; ++i) {
      const auto& a = ty[i];
      const T fy = static_cast<T>(a.frac);
      T* r0 = &dx.data[(static_cast<std::size_t>(c) * dx.h + a.i0) * dx.w];
      T* r1 = &dx.data[(static_cast<std::size_t>(c) * dx.h + a.i1) * dx.w];
      const T* src = &dy.data[(static_cast<std::size_t>(c) * dy.h + i) * dy.w];
      for (int j = 0; j < dy.w; ++j) {
        const auto& b = tx[j];
        const T fx = static_cast<T>(b.frac);
        const T g = src[j];
        r0[b.i0] += g * (1 - fy) * (1 - fx);
        r0[b.i1] += g * (1 - fy) * fx;
        r1[b.i0] += g * fy * (1 - fx);
        r1[b.i1] += g * fy * fx;
      }
    }
  }
}

#define UFCN_INSTANTIATE_KERNELS(T)                                                            \
  template void conv2d_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>,    \
                                  int, int, Tensor<T>&);                                        \
  template void conv2d_backward<T>(const Tensor<T>&, std::span<const T>, int, int,              \
                                   const Tensor<T>&, Tensor<T>*, std::span<T>, std::span<T>);   \
  template void upconv2x2_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>, \
                                     int, Tensor<T>&);                                          \
  template void upconv2x2_backward<T>(const Tensor<T>&, std::span<const T>, int,                \
                                      const Tensor<T>&, Tensor<T>*, std::span<T>, std::span<T>); \
  template void maxpool2x2_forward<T>(const Tensor<T>&, Tensor<T>&, std::vector<int>&);         \
  template void maxpool2x2_backward<T>(const Tensor<T>&, const std::vector<int>&, int, int,     \
                                       Tensor<T>&);                                             \
  template void upsample_bilinear2x_forward<T>(const Tensor<T>&, Tensor<T>&);                   \
  template void upsample_bilinear2x_backward<T>(const Tensor<T>&, Tensor<T>&);

UFCN_INSTANTIATE_KERNELS(float)
UFCN_INSTANTIATE_KERNELS(double)

}  // namespace ufcn::kernels
