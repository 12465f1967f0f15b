// Serial reference kernels. Straight loops over the defining sums; no
// blocking, no parallelism. Used as the oracle for the optimized kernels.

#include <cmath>
#include <limits>

#include "ufcn/kernels.hpp"

namespace ufcn::kernels {

std::vector<BilinearTap> bilinear2x_taps(int in_len) {
  std::vector<BilinearTap> taps(static_cast<std::size_t>(in_len) * 2);
  for (int o = 0; o < in_len * 2; ++o) {
    double src = (o + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in_len - 1) i0 = in_len - 1;
    const int i1 = std::min(i0 + 1, in_len - 1);
    taps[o] = {i0, i1, src - i0};
  }
  return taps;
}

namespace reference {

template <typename T>
void conv2d_forward(const Tensor<T>& x, std::span<const T> w, std::span<const T> b, int out_c,
                    int k, Tensor<T>& y) {
  const int pad = k / 2;
  y = Tensor<T>(out_c, x.h, x.w);
  for (int o = 0; o < out_c; ++o) {
    for (int i = 0; i < x.h; ++i) {
      for (int j = 0; j < x.w; ++j) {
        T acc = b.empty() ? T(0) : b[o];
        for (int c = 0; c < x.c; ++c) {
          for (int u = 0; u < k; ++u) {
            const int yi = i + u - pad;
            if (yi < 0 || yi >= x.h) continue;
            for (int v = 0; v < k; ++v) {
              const int xj = j + v - pad;
              if (xj < 0 || xj >= x.w) continue;
              acc += w[((static_cast<std::size_t>(o) * x.c + c) * k + u) * k + v] * x.at(c, yi, xj);
            }
          }
        }
        y.at(o, i, j) = acc;
      }
    }
  }
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, std::span<const T> w, int out_c, int k,
                     const Tensor<T>& dy, Tensor<T>* dx, std::span<T> dw, std::span<T> db) {
  const int pad = k / 2;
  if (dx) *dx = Tensor<T>(x.c, x.h, x.w);
  for (int o = 0; o < out_c; ++o) {
    for (int i = 0; i < x.h; ++i) {
      for (int j = 0; j < x.w; ++j) {
        const T g = dy.at(o, i, j);
        if (!db.empty()) db[o] += g;
        for (int c = 0; c < x.c; ++c) {
          for (int u = 0; u < k; ++u) {
            const int yi = i + u - pad;
            if (yi < 0 || yi >= x.h) continue;
            for (int v = 0; v < k; ++v) {
              const int xj = j + v - pad;
              if (xj < 0 || xj >= x.w) continue;
              const std::size_t wi = ((static_cast<std::size_t>(o) * x.c + c) * k + u) * k + v;
              dw[wi] += g * x.at(c, yi, xj);
              if (dx) dx->at(c, yi, xj) += g * w[wi];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void upconv2x2_forward(const Tensor<T>& x, std::span<const T> w, std::span<const T> b, int out_c,
                       Tensor<T>& y) {
  y = Tensor<T>(out_c, x.h * 2, x.w * 2);
  for (int o = 0; o < out_c; ++o) {
    for (int i = 0; i < y.h; ++i) {
      for (int j = 0; j < y.w; ++j) {
        const int si = i / 2, sj = j / 2, u = i % 2, v = j % 2;
        T acc = b.empty() ? T(0) : b[o];
        for (int c = 0; c < x.c; ++c) {
          acc += x.at(c, si, sj) * w[((static_cast<std::size_t>(c) * out_c + o) * 2 + u) * 2 + v];
        }
        y.at(o, i, j) = acc;
      }
    }
  }
}

template <typename T>
void upconv2x2_backward(const Tensor<T>& x, std::span<const T> w, int out_c, const Tensor<T>& dy,
                        Tensor<T>* dx, std::span<T> dw, std::span<T> db) {
  if (dx) *dx = Tensor<T>(x.c, x.h, x.w);
  for (int o = 0; o < out_c; ++o) {
    for (int i = 0; i < dy.h; ++i) {
      for (int j = 0; j < dy.w; ++j) {
        const int si = i / 2, sj = j / 2, u = i % 2, v = j % 2;
        const T g = dy.at(o, i, j);
        if (!db.empty()) db[o] += g;
        for (int c = 0; c < x.c; ++c) {
          const std::size_t wi = ((static_cast<std::size_t>(c) * out_c + o) * 2 + u) * 2 + v;
          dw[wi] += g * x.at(c, si, sj);
          if (dx) dx->at(c, si, sj) += g * w[wi];
        }
      }
    }
  }
}

template <typename T>
void maxpool2x2_forward(const Tensor<T>& x, Tensor<T>& y, std::vector<int>& argmax) {
  if (x.h % 2 != 0 || x.w % 2 != 0) throw ShapeError("maxpool2x2: odd spatial size");
  y = Tensor<T>(x.c, x.h / 2, x.w / 2);
  argmax.assign(y.size(), 0);
  for (int c = 0; c < x.c; ++c) {
    for (int i = 0; i < y.h; ++i) {
      for (int j = 0; j < y.w; ++j) {
        T best = -std::numeric_limits<T>::infinity();
        int best_idx = 0;
        for (int u = 0; u < 2; ++u) {
          for (int v = 0; v < 2; ++v) {
            const int idx = (c * x.h + 2 * i + u) * x.w + 2 * j + v;
            if (x.data[idx] > best) {
              best = x.data[idx];
              best_idx = idx;
            }
          }
        }
        y.at(c, i, j) = best;
        argmax[(c * y.h + i) * y.w + j] = best_idx;
      }
    }
  }
}

template <typename T>
void maxpool2x2_backward(const Tensor<T>& dy, const std::vector<int>& argmax, int in_h, int in_w,
                         Tensor<T>& dx) {
  dx = Tensor<T>(dy.c, in_h, in_w);
  for (std::size_t i = 0; i < dy.size(); ++i) dx.data[argmax[i]] += dy.data[i];
}

template <typename T>
void upsample_bilinear2x_forward(const Tensor<T>& x, Tensor<T>& y) {
  const auto ty = bilinear2x_taps(x.h);
  const auto tx = bilinear2x_taps(x.w);
  y = Tensor<T>(x.c, x.h * 2, x.w * 2);
  for (int c = 0; c < x.c; ++c) {
    for (int i = 0; i < y.h; ++i) {
      for (int j = 0; j < y.w; ++j) {
        const auto& a = ty[i];
        const auto& b = tx[j];
        const T fy = static_cast<T>(a.frac), fx = static_cast<T>(b.frac);
        y.at(c, i, j) = (1 - fy) * ((1 - fx) * x.at(c, a.i0, b.i0) + fx * x.at(c, a.i0, b.i1)) +
                        fy * ((1 - fx) * x.at(c, a.i1, b.i0) + fx * x.at(c, a.i1, b.i1));
      }
    }
  }
}

template <typename T>
void upsample_bilinear2x_backward(const Tensor<T>& dy, Tensor<T>& dx) {
  const auto ty = bilinear2x_taps(dy.h / 2);
  const auto tx = bilinear2x_taps(dy.w / 2);
  dx = Tensor<T>(dy.c, dy.h / 2, dy.w / 2);
  for (int c = 0; c < dy.c; ++c) {
    for (int i = 0; i < dy.h; ++i) {
      for (int j = 0; j < dy.w; ++j) {
        const auto& a = ty[i];
        const auto& b = tx[j];
        const T fy = static_cast<T>(a.frac), fx = static_cast<T>(b.frac);
        const T g = dy.at(c, i, j);
        dx.at(c, a.i0, b.i0) += g * (1 - fy) * (1 - fx);
        dx.at(c, a.i0, b.i1) += g * (1 - fy) * fx;
        dx.at(c, a.i1, b.i0) += g * fy * (1 - fx);
        dx.at(c, a.i1, b.i1) += g * fy * fx;
      }
    }
  }
}

#define UFCN_INSTANTIATE_REFERENCE(T)                                                          \
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

UFCN_INSTANTIATE_REFERENCE(float)
UFCN_INSTANTIATE_REFERENCE(double)

}  // namespace reference
}  // namespace ufcn::kernels
