#pragma once

// Slow, direct reference computations used only by tests. They avoid every
// shortcut the library takes (separable filtering, E[x^2] - mu^2 variance).

#include <cmath>
#include <vector>

#include "ufcn/losses.hpp"

namespace ufcn::test {

inline int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

// Per-pixel SSIM with an explicit 2D Gaussian window and centered moments.
inline double ssim_loss_bruteforce(const Tensor<double>& x, const Tensor<double>& y, const SsimParams& p) {
  const int r = p.window_size / 2;
  std::vector<double> w2((2 * r + 1) * (2 * r + 1));
  double norm = 0;
  for (int u = -r; u <= r; ++u)
    for (int v = -r; v <= r; ++v) {
      const double g = std::exp(-(u * u + v * v) / (2 * p.sigma * p.sigma));
      w2[(u + r) * (2 * r + 1) + (v + r)] = g;
      norm += g;
    }
  for (auto& g : w2) g /= norm;
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = p.k2 * p.dynamic_range;

  double total = 0;
  for (int i = 0; i < x.h; ++i)
    for (int j = 0; j < x.w; ++j) {
      auto visit = [&](auto&& fn) {
        for (int u = -r; u <= r; ++u)
          for (int v = -r; v <= r; ++v) {
            const int ii = reflect_index(i + u, x.h), jj = reflect_index(j + v, x.w);
            fn(w2[(u + r) * (2 * r + 1) + (v + r)], x.at(0, ii, jj), y.at(0, ii, jj));
          }
      };
      double mx = 0, my = 0;
      visit([&](double g, double a, double b) {
        mx += g * a;
        my += g * b;
      });
      double vx = 0, vy = 0, cxy = 0;
      visit([&](double g, double a, double b) {
        vx += g * (a - mx) * (a - mx);
        vy += g * (b - my) * (b - my);
        cxy += g * (a - mx) * (b - my);
      });
      const double s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      total += 1 - s;
    }
  return total / (x.h * x.w);
}

inline double dice_loss_bruteforce(const std::vector<double>& s, const std::vector<double>& r, double eps) {
  double fg_num = eps, fg_den = eps, bg_num = eps, bg_den = eps;
  for (std::size_t i = 0; i < s.size(); ++i) {
    fg_num += 2 * s[i] * r[i];
    fg_den += s[i] + r[i];
    bg_num += 2 * (1 - s[i]) * (1 - r[i]);
    bg_den += (1 - s[i]) + (1 - r[i]);
  }
  return 1 - fg_num / fg_den - bg_num / bg_den;
}

// Binary-mask dice by set counting: 2|A n B| / (|A| + |B|), 0 when both empty.
inline double dice_sets(const std::vector<int>& a, const std::vector<int>& b) {
  int inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    na += a[i] != 0;
    nb += b[i] != 0;
  }
  if (na + nb == 0) return 0.0;
  return 2.0 * inter / (na + nb);
}

// 8-connected components of a binary mask, by explicit stack flood fill.
inline int connected_components(const Tensor<std::uint8_t>& m) {
  std::vector<int> seen(m.size(), 0);
  int count = 0;
  for (int i = 0; i < m.h; ++i)
    for (int j = 0; j < m.w; ++j) {
      if (!m.at(0, i, j) || seen[i * m.w + j]) continue;
      ++count;
      std::vector<std::pair<int, int>> stack{{i, j}};
      seen[i * m.w + j] = 1;
      while (!stack.empty()) {
        const auto [y, x] = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= m.h || xx >= m.w) continue;
            if (!m.at(0, yy, xx) || seen[yy * m.w + xx]) continue;
            seen[yy * m.w + xx] = 1;
            stack.push_back({yy, xx});
          }
      }
    }
  return count;
}

// Detection metrics recomputed from raw per-case facts with plain counting.
struct TallyCase {
  int label;
  int kind;       // 1 MASS, 2 CALC, 3 AD for cancer cases
  double dice;    // cancer cases
  double active;  // fraction of mask pixels set
};

struct Tally {
  int tp = 0, tn = 0, fp = 0, fn = 0;
  int kind_cases[4] = {0, 0, 0, 0}, kind_tp[4] = {0, 0, 0, 0};
  double kind_dice_sum[4] = {0, 0, 0, 0};
  int normals = 0;
};

inline Tally tally_oracle(const std::vector<TallyCase>& cases) {
  Tally t;
  for (const auto& c : cases) {
    if (c.label == 1) {
      const bool hit = c.dice > 0.01;
      t.tp += hit;
      t.fn += !hit;
      t.kind_cases[c.kind] += 1;
      t.kind_tp[c.kind] += hit;
      t.kind_dice_sum[c.kind] += c.dice;
    } else {
      const bool quiet = c.active < 0.01;
      t.tn += quiet;
      t.fp += !quiet;
      t.normals += 1;
    }
  }
  return t;
}

}  // namespace ufcn::test
