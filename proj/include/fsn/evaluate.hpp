#ifndef FSN_EVALUATE_HPP_
#define FSN_EVALUATE_HPP_

#include <optional>
#include <span>
#include <vector>

#include "fsn/roi.hpp"

namespace fsn {

struct Detection {
  int label = 0;  // 1..classes
  double score = 0;
  Box box;
};

struct MapResult {
  std::vector<std::optional<double>> ap;  // indexed by label; [0] unused
  double map = 0;
  std::size_t classes_evaluated = 0;
};

/// Average precision per class from the precision envelope integrated over recall.
/// Detections are ranked by score; equal scores are ordered by image, then box, so
/// the result does not depend on input order. A detection is a true positive when
/// its best-overlap gt of the same class has IoU >= iou_threshold and is still
/// unmatched. Classes without any gt are skipped in the mean.
MapResult evaluate_map(std::span<const std::vector<Detection>> detections,
                       std::span<const std::vector<GroundTruth>> gts, int classes,
                       double iou_threshold = 0.5);

/// Precision envelope integration over an already ranked TP/FP sequence.
double average_precision(const std::vector<bool>& ranked_tp, std::size_t n_gt);

}  // namespace fsn

#endif  // FSN_EVALUATE_HPP_
