// Independent reference implementations used by the tests. Nothing here calls
// into the library's arithmetic; they only share the plain data types.
#ifndef FSN_TESTS_ORACLES_HPP_
#define FSN_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "fsn/attention.hpp"
#include "fsn/ops.hpp"
#include "fsn/roi.hpp"
#include "fsn/tensor.hpp"

namespace oracle {

using fsn::Box;
using fsn::Shape4;
using fsn::Tensor4;

template <typename T>
Tensor4<T> random_tensor(Shape4 s, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> d(0.0, stddev);
  Tensor4<T> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(d(rng));
  return t;
}

// Direct quadruple loop: out(o, i, j) = b(o) + sum K(o, c, u, v) x(c, i*s - p + u + dr, j*s - p + v + dc)
template <typename T>
Tensor4<T> conv(const Tensor4<T>& x, const Tensor4<T>& k, const Tensor4<T>& b, int stride,
                int pad, int dr = 0, int dc = 0) {
  const int H = static_cast<int>(x.h()), W = static_cast<int>(x.w());
  const int K = static_cast<int>(k.h());
  const int Ho = (H + 2 * pad - K) / stride + 1;
  const int Wo = (W + 2 * pad - K) / stride + 1;
  Tensor4<T> y({x.n(), k.n(), static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo)});
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t o = 0; o < k.n(); ++o) {
      for (int i = 0; i < Ho; ++i) {
        for (int j = 0; j < Wo; ++j) {
          T acc = 0;
          for (std::size_t c = 0; c < x.c(); ++c) {
            for (int u = 0; u < K; ++u) {
              for (int v = 0; v < K; ++v) {
                const int r = i * stride - pad + u + dr;
                const int q = j * stride - pad + v + dc;
                if (r < 0 || r >= H || q < 0 || q >= W) continue;
                acc += k.at(o, c, u, v) * x.at(n, c, r, q);
              }
            }
          }
          y.at(n, o, i, j) = acc + b[o];
        }
      }
    }
  }
  return y;
}

// x shifted so that out(r, c) = x(r + dr, c + dc), zero outside
template <typename T>
Tensor4<T> translate(const Tensor4<T>& x, int dr, int dc) {
  Tensor4<T> y(x.shape());
  const int H = static_cast<int>(x.h()), W = static_cast<int>(x.w());
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c)
      for (int r = 0; r < H; ++r)
        for (int q = 0; q < W; ++q) {
          const int sr = r + dr, sq = q + dc;
          if (sr >= 0 && sr < H && sq >= 0 && sq < W) y.at(n, c, r, q) = x.at(n, c, sr, sq);
        }
  return y;
}

struct Window {
  int y0, x0, y1, x1;
};

inline Window window(const Box& b, double stride, int H, int W) {
  Window w;
  w.x0 = static_cast<int>(std::floor(b.x1 / stride));
  w.y0 = static_cast<int>(std::floor(b.y1 / stride));
  w.x1 = static_cast<int>(std::ceil(b.x2 / stride));
  w.y1 = static_cast<int>(std::ceil(b.y2 / stride));
  w.x0 = std::min(std::max(w.x0, 0), W - 1);
  w.y0 = std::min(std::max(w.y0, 0), H - 1);
  w.x1 = std::min(std::max(w.x1, 0), W);
  w.y1 = std::min(std::max(w.y1, 0), H);
  if (w.x1 <= w.x0) w.x1 = w.x0 + 1;
  if (w.y1 <= w.y0) w.y1 = w.y0 + 1;
  return w;
}

// cells [lo, hi) of bin m over `extent` cells starting at `origin`
inline void bin_cells(int origin, int extent, int m, int bins, int& lo, int& hi) {
  lo = origin + static_cast<int>(std::floor(static_cast<double>(m) * extent / bins));
  hi = origin + static_cast<int>(std::ceil(static_cast<double>(m + 1) * extent / bins));
}

template <typename T>
T scan_max(const T* plane, int W, int r0, int r1, int c0, int c1, std::int64_t* where) {
  T best = -std::numeric_limits<T>::infinity();
  std::int64_t at = -1;
  for (int i = r0; i < r1; ++i)
    for (int j = c0; j < c1; ++j)
      if (at < 0 || plane[i * W + j] > best) {
        best = plane[i * W + j];
        at = i * W + j;
      }
  if (where) *where = at;
  return best;
}

template <typename T>
Tensor4<T> roi_pool(const Tensor4<T>& f, const std::vector<fsn::RoI>& rois, int ph, int pw,
                    double stride) {
  const int H = static_cast<int>(f.h()), W = static_cast<int>(f.w());
  Tensor4<T> out({rois.size(), f.c(), static_cast<std::size_t>(ph), static_cast<std::size_t>(pw)});
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const Window w = window(rois[r].box, stride, H, W);
    for (std::size_t c = 0; c < f.c(); ++c) {
      const T* plane = f.plane(static_cast<std::size_t>(rois[r].image_index), c);
      for (int m = 0; m < ph; ++m)
        for (int n = 0; n < pw; ++n) {
          int r0, r1, c0, c1;
          bin_cells(w.y0, w.y1 - w.y0, m, ph, r0, r1);
          bin_cells(w.x0, w.x1 - w.x0, n, pw, c0, c1);
          out.at(r, c, m, n) = scan_max(plane, W, r0, r1, c0, c1, nullptr);
        }
    }
  }
  return out;
}

// overlap length of [a0, a1) and [b0, b1)
inline double overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

// Region (1-based) with the largest overlap area with bin (m, n) (1-based),
// continuous boundaries, ties to the smaller index. Exhaustive over regions.
inline int majority_region(int m, int n, int h, int w, int rows, int cols) {
  const double by0 = static_cast<double>(m - 1) / h, by1 = static_cast<double>(m) / h;
  const double bx0 = static_cast<double>(n - 1) / w, bx1 = static_cast<double>(n) / w;
  int best = 0;
  double best_area = -1;
  for (int k = 1; k <= rows * cols; ++k) {
    const int r = (k - 1) / cols, c = (k - 1) % cols;
    const double area = overlap(by0, by1, static_cast<double>(r) / rows, static_cast<double>(r + 1) / rows) *
                        overlap(bx0, bx1, static_cast<double>(c) / cols, static_cast<double>(c + 1) / cols);
    if (area > best_area + 1e-12) {
      best_area = area;
      best = k;
    }
  }
  return best;
}

inline int aspect_k(const Box& b, double tall, double wide) {
  const double ratio = (b.x2 - b.x1) / (b.y2 - b.y1);
  return ratio < tall ? 1 : (ratio > wide ? 3 : 2);
}

struct Selected {
  std::vector<double> values;
  std::vector<std::int64_t> source;
};

// For every (roi, c, m, n): find k, then scan channel (k - 1) * C_s + c of the bank.
// `group_of` maps a k to the bank group that holds it (identity by default).
template <typename T>
Selected selective_pool(const fsn::AttentionBank<T>& bank, const std::vector<fsn::RoI>& rois,
                        fsn::SelectMode mode, const fsn::SelectiveGeometry& g,
                        const std::vector<int>& group_of = {}) {
  const int H = static_cast<int>(bank.values.h()), W = static_cast<int>(bank.values.w());
  const int Cs = bank.channels_per_group;
  Selected s;
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const Window w = window(rois[r].box, g.spatial_stride, H, W);
    for (int c = 0; c < Cs; ++c)
      for (int m = 1; m <= g.pooled_h; ++m)
        for (int n = 1; n <= g.pooled_w; ++n) {
          int k = mode == fsn::SelectMode::kAspect
                      ? (bank.groups == 1 ? 1 : aspect_k(rois[r].box, g.thresholds.tall, g.thresholds.wide))
                      : majority_region(m, n, g.pooled_h, g.pooled_w, g.grid.rows, g.grid.cols);
          if (!group_of.empty()) k = group_of[k];
          const std::size_t ch = static_cast<std::size_t>((k - 1) * Cs + c);
          const std::size_t img = static_cast<std::size_t>(rois[r].image_index);
          int r0, r1, c0, c1;
          bin_cells(w.y0, w.y1 - w.y0, m - 1, g.pooled_h, r0, r1);
          bin_cells(w.x0, w.x1 - w.x0, n - 1, g.pooled_w, c0, c1);
          std::int64_t at = 0;
          s.values.push_back(
              static_cast<double>(scan_max(bank.values.plane(img, ch), W, r0, r1, c0, c1, &at)));
          s.source.push_back(static_cast<std::int64_t>(bank.values.offset(img, ch, 0, 0)) + at);
        }
  }
  return s;
}

inline double box_iou(const Box& a, const Box& b) {
  const double iw = overlap(a.x1, a.x2, b.x1, b.x2);
  const double ih = overlap(a.y1, a.y2, b.y1, b.y2);
  const double inter = iw * ih;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// Quadratic NMS: full IoU matrix, then a pass in score order.
inline std::vector<std::size_t> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                                    double thr) {
  const std::size_t n = boxes.size();
  std::vector<std::vector<double>> m(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m[i][j] = box_iou(boxes[i], boxes[j]);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<bool> dead(n, false);
  std::vector<std::size_t> kept;
  for (std::size_t a = 0; a < n; ++a) {
    const std::size_t i = order[a];
    if (dead[i]) continue;
    kept.push_back(i);
    for (std::size_t j = 0; j < n; ++j)
      if (m[i][j] > thr) dead[j] = true;
  }
  return kept;
}

}  // namespace oracle

#endif  // FSN_TESTS_ORACLES_HPP_
