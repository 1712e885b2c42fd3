#include "fsn/roi.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace fsn {

Box clip_box(const Box& b, double image_w, double image_h) {
  return {std::clamp(b.x1, 0.0, image_w), std::clamp(b.y1, 0.0, image_h),
          std::clamp(b.x2, 0.0, image_w), std::clamp(b.y2, 0.0, image_h)};
}

int aspect_group(const Box& b, AspectThresholds thresholds) {
  const double ratio = b.width() / b.height();
  if (ratio < thresholds.tall) return 1;
  if (ratio > thresholds.wide) return 3;
  return 2;
}

Box SubRegionGrid::rect(int k, const Box& roi) const {
  if (k < 1 || k > count()) throw std::out_of_range("SubRegionGrid::rect: bad index");
  const int r = (k - 1) / cols;
  const int c = (k - 1) % cols;
  const double ch = roi.height() / rows;
  const double cw = roi.width() / cols;
  // outer edges are taken from the RoI itself so the tiling is exact
  const double y1 = r == 0 ? roi.y1 : roi.y1 + r * ch;
  const double y2 = r == rows - 1 ? roi.y2 : roi.y1 + (r + 1) * ch;
  const double x1 = c == 0 ? roi.x1 : roi.x1 + c * cw;
  const double x2 = c == cols - 1 ? roi.x2 : roi.x1 + (c + 1) * cw;
  return {x1, y1, x2, y2};
}

namespace {

// Index (0-based) of the part out of `parts` that overlaps bin `m` (0-based) out of
// `bins` the most. Works in units of 1 / (bins * parts) so everything is integral.
int best_part(int m, int bins, int parts) {
  const long lo = static_cast<long>(m) * parts;
  const long hi = lo + parts;
  int best = 0;
  long best_overlap = -1;
  for (int r = 0; r < parts; ++r) {
    const long plo = static_cast<long>(r) * bins;
    const long phi = plo + bins;
    const long overlap = std::max(0L, std::min(hi, phi) - std::max(lo, plo));
    if (overlap > best_overlap) {
      best_overlap = overlap;
      best = r;
    }
  }
  return best;
}

}  // namespace

int bin_subregion_index(int m, int n, int h, int w, const SubRegionGrid& grid) {
  if (m < 1 || m > h || n < 1 || n > w) {
    throw std::out_of_range("bin_subregion_index: bin (" + std::to_string(m) + ", " +
                            std::to_string(n) + ") outside " + std::to_string(h) + "x" +
                            std::to_string(w));
  }
  // overlap area is separable, so the row and column choices are independent
  const int r = best_part(m - 1, h, grid.rows);
  const int c = best_part(n - 1, w, grid.cols);
  return r * grid.cols + c + 1;
}

FeatureWindow project_roi(const Box& b, double spatial_stride, int map_h, int map_w) {
  FeatureWindow win;
  win.x0 = std::clamp(static_cast<int>(std::floor(b.x1 / spatial_stride)), 0, map_w - 1);
  win.y0 = std::clamp(static_cast<int>(std::floor(b.y1 / spatial_stride)), 0, map_h - 1);
  win.x1 = std::clamp(static_cast<int>(std::ceil(b.x2 / spatial_stride)), 0, map_w);
  win.y1 = std::clamp(static_cast<int>(std::ceil(b.y2 / spatial_stride)), 0, map_h);
  if (win.x1 <= win.x0) win.x1 = win.x0 + 1;
  if (win.y1 <= win.y0) win.y1 = win.y0 + 1;
  return win;
}

BinRange bin_range(int origin, int extent, int m, int bins) {
  const int begin = origin + (m * extent) / bins;
  const int end = origin + ((m + 1) * extent + bins - 1) / bins;
  return {begin, end};
}

template <typename T>
RoiPoolResult<T> roi_max_pool(const Tensor4<T>& feat, std::span<const RoI> rois, int pooled_h,
                              int pooled_w, double spatial_stride) {
  const std::size_t C = feat.c();
  const int H = static_cast<int>(feat.h());
  const int W = static_cast<int>(feat.w());
  const std::size_t ph = static_cast<std::size_t>(pooled_h);
  const std::size_t pw = static_cast<std::size_t>(pooled_w);
  RoiPoolResult<T> res{Tensor4<T>({rois.size(), C, ph, pw}),
                       std::vector<std::int64_t>(rois.size() * C * ph * pw)};
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const auto img = static_cast<std::size_t>(rois[r].image_index);
    if (img >= feat.n()) throw std::out_of_range("roi_max_pool: image index out of range");
    const FeatureWindow win = project_roi(rois[r].box, spatial_stride, H, W);
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = feat.offset(img, c, 0, 0);
      const T* plane = feat.ptr() + base;
      for (int m = 0; m < pooled_h; ++m) {
        const BinRange rows = bin_range(win.y0, win.height(), m, pooled_h);
        for (int n = 0; n < pooled_w; ++n) {
          const BinRange cols = bin_range(win.x0, win.width(), n, pooled_w);
          std::size_t best = static_cast<std::size_t>(rows.begin) * W + cols.begin;
          T best_v = plane[best];
          for (int i = rows.begin; i < rows.end; ++i) {
            for (int j = cols.begin; j < cols.end; ++j) {
              const std::size_t idx = static_cast<std::size_t>(i) * W + j;
              if (plane[idx] > best_v) {
                best_v = plane[idx];
                best = idx;
              }
            }
          }
          const std::size_t o = res.pooled.offset(r, c, m, n);
          res.pooled[o] = best_v;
          res.argmax[o] = static_cast<std::int64_t>(base + best);
        }
      }
    }
  }
  return res;
}

template <typename T>
Tensor4<T> roi_max_pool_backward(const Shape4& feat_shape, std::span<const std::int64_t> argmax,
                                 const Tensor4<T>& grad_pooled) {
  if (argmax.size() != grad_pooled.size()) {
    throw std::invalid_argument("roi_max_pool_backward: provenance does not match gradient");
  }
  Tensor4<T> dfeat(feat_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    dfeat[static_cast<std::size_t>(argmax[i])] += grad_pooled[i];
  }
  return dfeat;
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores,
                             double threshold) {
  if (boxes.size() != scores.size()) throw std::invalid_argument("nms: boxes/scores length");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    bool keep = true;
    for (std::size_t k : kept) {
      if (iou(boxes[idx], boxes[k]) > threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(idx);
  }
  return kept;
}

BoxDelta encode_delta(const Box& target, const Box& reference) {
  const double rw = reference.width();
  const double rh = reference.height();
  const double rcx = reference.x1 + 0.5 * rw;
  const double rcy = reference.y1 + 0.5 * rh;
  const double tw = target.width();
  const double th = target.height();
  const double tcx = target.x1 + 0.5 * tw;
  const double tcy = target.y1 + 0.5 * th;
  return {(tcx - rcx) / rw, (tcy - rcy) / rh, std::log(tw / rw), std::log(th / rh)};
}

Box decode_delta(const BoxDelta& d, const Box& reference) {
  const double rw = reference.width();
  const double rh = reference.height();
  const double cx = reference.x1 + 0.5 * rw + d.tx * rw;
  const double cy = reference.y1 + 0.5 * rh + d.ty * rh;
  const double w = rw * std::exp(d.tw);
  const double h = rh * std::exp(d.th);
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::vector<SampledRoi> sample_rois(std::span<const Box> proposals,
                                    std::span<const GroundTruth> gts, const SamplingParams& params,
                                    std::mt19937_64& rng) {
  if (proposals.empty()) throw std::invalid_argument("sample_rois: no proposals");
  std::vector<SampledRoi> labeled(proposals.size());
  std::vector<std::size_t> fg, bg;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    SampledRoi& s = labeled[i];
    s.box = proposals[i];
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double o = iou(proposals[i], gts[g].box);
      if (o > s.max_iou) {
        s.max_iou = o;
        s.gt_index = static_cast<int>(g);
      }
    }
    if (s.gt_index < 0 && !gts.empty()) s.gt_index = 0;
    if (s.gt_index >= 0 && s.max_iou >= params.fg_iou) {
      s.label = gts[static_cast<std::size_t>(s.gt_index)].label;
      fg.push_back(i);
    } else {
      bg.push_back(i);
    }
  }

  const auto fg_quota = static_cast<std::size_t>(
      std::floor(params.fg_fraction * static_cast<double>(params.batch_size)));
  const std::size_t n_fg = std::min(fg_quota, fg.size());
  const std::size_t n_bg = std::min(params.batch_size - n_fg, bg.size());

  // partial Fisher-Yates: the first k entries become a uniform sample
  auto draw = [&rng](std::vector<std::size_t>& pool, std::size_t k) {
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(k);
  };
  draw(fg, n_fg);
  draw(bg, n_bg);

  std::vector<SampledRoi> batch;
  batch.reserve(n_fg + n_bg);
  for (std::size_t i : fg) batch.push_back(labeled[i]);
  for (std::size_t i : bg) batch.push_back(labeled[i]);
  return batch;
}

#define FSN_INSTANTIATE(T)                                                                   \
  template RoiPoolResult<T> roi_max_pool(const Tensor4<T>&, std::span<const RoI>, int, int,  \
                                         double);                                            \
  template Tensor4<T> roi_max_pool_backward(const Shape4&, std::span<const std::int64_t>,    \
                                            const Tensor4<T>&);

FSN_INSTANTIATE(float)
FSN_INSTANTIATE(double)
#undef FSN_INSTANTIATE

}  // namespace fsn
