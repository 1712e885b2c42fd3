#ifndef FSN_ROI_HPP_
#define FSN_ROI_HPP_

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "fsn/tensor.hpp"

namespace fsn {

/// Axis-aligned box in input-image pixel coordinates, x2 > x1 and y2 > y1.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const { return x2 > x1 && y2 > y1; }
  bool operator==(const Box&) const = default;
};

struct RoI {
  int image_index = 0;
  Box box;
};

Box clip_box(const Box& b, double image_w, double image_h);

struct AspectThresholds {
  double tall = 0.75;  // ratio below this: group 1
  double wide = 1.3;   // ratio above this: last group
};

/// Aspect-ratio group of a box, ratio = width / height.
/// Returns 1 (tall), 2 (ratios in [tall, wide]) or 3 (wide).
int aspect_group(const Box& b, AspectThresholds thresholds = {});

/// rows x cols grid of sub-regions tiling an RoI, numbered 1..count() row-major.
struct SubRegionGrid {
  int rows = 3;
  int cols = 3;

  int count() const { return rows * cols; }
  /// Rectangle of sub-region k (1-based) inside `roi`.
  Box rect(int k, const Box& roi) const;
};

/// Sub-region (1-based) holding most of the area of pooling bin (m, n), 1-based,
/// when the RoI is split into h x w equal bins. Ties go to the smaller index.
int bin_subregion_index(int m, int n, int h, int w, const SubRegionGrid& grid);

/// Integer window of feature cells covered by an RoI, end-exclusive.
struct FeatureWindow {
  int y0 = 0, x0 = 0, y1 = 1, x1 = 1;
  int height() const { return y1 - y0; }
  int width() const { return x1 - x0; }
};

/// floor(start / stride), ceil(end / stride), clamped to the map. A window that
/// comes out empty collapses to the nearest single cell.
FeatureWindow project_roi(const Box& b, double spatial_stride, int map_h, int map_w);

/// Half-open range [begin, end) of bin `m` (0-based) out of `bins` over `extent` cells.
/// Every bin is non-empty when extent >= 1.
struct BinRange {
  int begin = 0, end = 0;
};
BinRange bin_range(int origin, int extent, int m, int bins);

template <typename T>
struct RoiPoolResult {
  Tensor4<T> pooled;                // (rois, channels, h, w)
  std::vector<std::int64_t> argmax;  // flat index into the source tensor per pooled value
};

/// Classical RoI max pooling over a (batch, C, H, W) feature map.
template <typename T>
RoiPoolResult<T> roi_max_pool(const Tensor4<T>& feat, std::span<const RoI> rois, int pooled_h,
                              int pooled_w, double spatial_stride);

/// Routes each pooled gradient to its argmax cell.
template <typename T>
Tensor4<T> roi_max_pool_backward(const Shape4& feat_shape,
                                 std::span<const std::int64_t> argmax,
                                 const Tensor4<T>& grad_pooled);

double iou(const Box& a, const Box& b);

/// Greedy NMS. Visits boxes by descending score (ties by lower index), keeps a box
/// unless its IoU with an already kept box exceeds `threshold`. Returns kept indices
/// in visiting order.
std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores,
                             double threshold = 0.3);

/// Center/size box offsets.
struct BoxDelta {
  double tx = 0, ty = 0, tw = 0, th = 0;
};

BoxDelta encode_delta(const Box& target, const Box& reference);
Box decode_delta(const BoxDelta& delta, const Box& reference);

struct GroundTruth {
  Box box;
  int label = 1;  // 1..classes, 0 is background
};

struct SampledRoi {
  Box box;
  int label = 0;      // 0 for background
  int gt_index = -1;  // best-overlap gt, -1 when there are no gts
  double max_iou = 0;
};

struct SamplingParams {
  std::size_t batch_size = 256;
  double fg_fraction = 0.25;
  double fg_iou = 0.5;
};

/// Labels proposals against ground truth and draws a minibatch: up to
/// fg_fraction * batch_size foreground RoIs, the rest background.
/// Foreground first, then background, each in sampled order.
std::vector<SampledRoi> sample_rois(std::span<const Box> proposals,
                                    std::span<const GroundTruth> gts, const SamplingParams& params,
                                    std::mt19937_64& rng);

}  // namespace fsn

#endif  // FSN_ROI_HPP_
