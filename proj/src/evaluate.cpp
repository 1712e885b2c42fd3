#include "fsn/evaluate.hpp"

#include <algorithm>
#include <stdexcept>
#include <tuple>

namespace fsn {

double average_precision(const std::vector<bool>& ranked_tp, std::size_t n_gt) {
  if (n_gt == 0) throw std::invalid_argument("average_precision: no ground truth");
  const std::size_t n = ranked_tp.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ranked_tp[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0;
  double prev_recall = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

MapResult evaluate_map(std::span<const std::vector<Detection>> detections,
                       std::span<const std::vector<GroundTruth>> gts, int classes,
                       double iou_threshold) {
  if (detections.size() != gts.size()) {
    throw std::invalid_argument("evaluate_map: detections and ground truth cover different images");
  }
  MapResult res;
  res.ap.assign(static_cast<std::size_t>(classes) + 1, std::nullopt);
  double total = 0;
  for (int cls = 1; cls <= classes; ++cls) {
    std::size_t n_gt = 0;
    std::vector<std::vector<bool>> matched(gts.size());
    for (std::size_t img = 0; img < gts.size(); ++img) {
      matched[img].assign(gts[img].size(), false);
      for (const GroundTruth& g : gts[img]) n_gt += g.label == cls ? 1 : 0;
    }
    if (n_gt == 0) continue;

    struct Ranked {
      double score;
      std::size_t img;
      Box box;
    };
    std::vector<Ranked> ranked;
    for (std::size_t img = 0; img < detections.size(); ++img) {
      for (const Detection& d : detections[img]) {
        if (d.label == cls) ranked.push_back({d.score, img, d.box});
      }
    }
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
      if (a.score != b.score) return a.score > b.score;
      return std::tie(a.img, a.box.x1, a.box.y1, a.box.x2, a.box.y2) <
             std::tie(b.img, b.box.x1, b.box.y1, b.box.x2, b.box.y2);
    });

    std::vector<bool> tp(ranked.size(), false);
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      const auto& image_gts = gts[ranked[i].img];
      double best = 0;
      std::size_t best_j = image_gts.size();
      for (std::size_t j = 0; j < image_gts.size(); ++j) {
        if (image_gts[j].label != cls) continue;
        const double o = iou(ranked[i].box, image_gts[j].box);
        if (o > best) {
          best = o;
          best_j = j;
        }
      }
      if (best_j < image_gts.size() && best >= iou_threshold && !matched[ranked[i].img][best_j]) {
        matched[ranked[i].img][best_j] = true;
        tp[i] = true;
      }
    }
    const double ap = average_precision(tp, n_gt);
    res.ap[static_cast<std::size_t>(cls)] = ap;
    total += ap;
    ++res.classes_evaluated;
  }
  res.map = res.classes_evaluated > 0 ? total / static_cast<double>(res.classes_evaluated) : 0.0;
  return res;
}

}  // namespace fsn
