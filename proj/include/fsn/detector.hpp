#ifndef FSN_DETECTOR_HPP_
#define FSN_DETECTOR_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fsn/attention.hpp"
#include "fsn/evaluate.hpp"
#include "fsn/ops.hpp"
#include "fsn/roi.hpp"
#include "fsn/synth.hpp"
#include "fsn/tensor.hpp"

namespace fsn {

/// Which attention maps multiply the compacted RoI features.
enum class AttentionVariant { kNone, kSubRegion, kAspect, kBoth };

std::string to_string(AttentionVariant v);
AttentionVariant parse_attention_variant(const std::string& s);

struct DetectorConfig {
  int backbone_channels = 64;    // C
  int selective_channels = 40;   // C_s
  int subregion_rows = 3;        // N_sr = rows * cols
  int subregion_cols = 3;
  int aspect_groups = 3;         // N_ar, 1 or 3
  int pooled_size = 7;           // h = w
  int head_width = 0;            // 0: 500, or 100 when C_s == 1
  int classes = kNumShapeClasses;
  double aspect_tall = 0.75;
  double aspect_wide = 1.3;
  ShiftDirection shift_direction = ShiftDirection::kCenter;
  AttentionVariant variant = AttentionVariant::kBoth;
  bool attention_sigmoid = false;
  double spatial_stride = 4.0;

  double learning_rate = 1e-3;
  double momentum = 0.9;
  int iterations = 600;
  int images_per_batch = 2;
  int rois_per_image = 128;
  double fg_fraction = 0.25;
  double fg_iou = 0.5;
  int proposals = 300;
  double nms_threshold = 0.3;
  double score_threshold = 0.0;
  std::uint64_t seed = 0;

  int effective_head_width() const;
  int subregion_count() const { return subregion_rows * subregion_cols; }
  bool uses_subregion() const {
    return variant == AttentionVariant::kSubRegion || variant == AttentionVariant::kBoth;
  }
  bool uses_aspect() const {
    return variant == AttentionVariant::kAspect || variant == AttentionVariant::kBoth;
  }
  SelectiveGeometry selective_geometry() const;

  /// Throws std::invalid_argument on a non-positive count or unsupported setting.
  void validate() const;

  /// Canonical key=value form; every key is accepted back by set().
  std::map<std::string, std::string> to_key_values() const;
  /// Returns false for an unknown key; throws on a malformed value.
  bool set(const std::string& key, const std::string& value);
  std::uint64_t hash() const;
};

/// Closed-form parameter counts.
std::size_t head_first_fc_parameter_count(const DetectorConfig& cfg);
std::size_t head_parameter_count(const DetectorConfig& cfg);
std::size_t attention_parameter_count(const DetectorConfig& cfg);
std::size_t backbone_parameter_count(const DetectorConfig& cfg);
std::size_t total_parameter_count(const DetectorConfig& cfg);
/// Classic head with two 4096-d fc layers on the same pooled input, plus the
/// same classification and regression outputs.
std::size_t two_fc_head_parameter_count(const DetectorConfig& cfg, std::size_t hidden = 4096);

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor4<T>* tensor;
};

template <typename T>
struct ConstNamedTensor {
  std::string name;
  const Tensor4<T>* tensor;
};

/// Regression targets are divided by these before the loss.
inline constexpr double kDeltaStd[4] = {0.1, 0.1, 0.2, 0.2};

template <typename T>
class Detector {
 public:
  explicit Detector(const DetectorConfig& cfg);

  /// He init for backbone and reduction convolutions, N(0, 0.01) for attention
  /// convolutions and fc layers. Attention biases start so that the merged
  /// attention is about one.
  void initialize(std::uint64_t seed);

  const DetectorConfig& config() const { return cfg_; }
  std::vector<NamedTensor<T>> parameters();
  std::vector<ConstNamedTensor<T>> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  struct Cache {
    bool from_features = false;
    std::vector<Tensor4<T>> backbone_in;   // input of each backbone conv
    std::vector<Tensor4<T>> backbone_pre;  // pre-activation of each backbone conv
    Tensor4<T> feat;
    std::vector<RoI> rois;
    Tensor4<T> reduced;
    RoiPoolResult<T> compact;  // f
    AttentionBank<T> sr_bank;
    AttentionBank<T> ar_bank;
    AttentionMap<T> sr_map;
    AttentionMap<T> ar_map;
    Tensor4<T> f_hat;
    Tensor4<T> hidden_pre;
    Tensor4<T> hidden;
    Tensor4<T> logits;  // (rois, classes + 1, 1, 1)
    Tensor4<T> deltas;  // (rois, 4, 1, 1), normalized
  };

  Tensor4<T> backbone(const Tensor4<T>& images, Cache* cache = nullptr) const;
  Cache forward(const Tensor4<T>& images, std::span<const RoI> rois) const;
  /// Starts at a given (batch, C, H, W) feature map; RoIs are scaled by spatial_stride.
  Cache forward_features(const Tensor4<T>& feat, std::span<const RoI> rois) const;

  /// Accumulates parameter gradients. Returns the gradient w.r.t. the feature map.
  Tensor4<T> backward(const Cache& cache, const Tensor4<T>& dlogits, const Tensor4<T>& ddeltas);
  /// Backbone part of backward(): accumulates backbone gradients from the feature
  /// map gradient and returns the gradient w.r.t. the images.
  Tensor4<T> backbone_backward(const Cache& cache, const Tensor4<T>& dfeat);

  std::vector<ConvParams<T>> backbone_convs;
  ConvParams<T> reduce;
  SubRegionAttention<T> subregion;
  ConvParams<T> aspect;
  FcParams<T> fc_hidden;
  FcParams<T> fc_cls;
  FcParams<T> fc_reg;

 private:
  void finish_forward(Cache& c) const;

  DetectorConfig cfg_;
};

template <typename T>
struct Losses {
  T cls = 0;
  T reg = 0;
  Tensor4<T> dlogits;
  Tensor4<T> ddeltas;
};

/// Softmax loss averaged over RoIs plus smooth L1 on foreground RoIs, summed over
/// the four offsets and divided by the RoI count.
template <typename T>
Losses<T> detection_losses(const Tensor4<T>& logits, const Tensor4<T>& deltas,
                           std::span<const int> labels, const Tensor4<T>& targets);

/// Labeled RoIs of one minibatch, images stacked along the batch axis.
template <typename T>
struct TrainBatch {
  Tensor4<T> images;
  std::vector<RoI> rois;
  std::vector<int> labels;
  Tensor4<T> targets;  // normalized deltas, zero rows for background
  std::size_t foreground = 0;
};

template <typename T>
TrainBatch<T> make_batch(std::span<const Scene* const> scenes,
                         std::span<const std::vector<Box>* const> proposals,
                         const DetectorConfig& cfg, std::mt19937_64& rng);

class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}
  void step(std::span<NamedTensor<float>> params);

 private:
  double lr_;
  double momentum_;
  std::vector<std::vector<float>> velocity_;
};

struct StepLoss {
  double cls = 0;
  double reg = 0;
  std::size_t foreground = 0;
};

/// One forward/backward/update on a batch.
StepLoss train_step(Detector<float>& model, SgdMomentum& opt, const TrainBatch<float>& batch);

/// Training state over a fixed scene list. Image order is reshuffled every epoch
/// from the config seed; proposals per scene are fixed.
class Trainer {
 public:
  Trainer(const DetectorConfig& cfg, std::vector<Scene> scenes);

  StepLoss step();
  std::vector<StepLoss> run(int iterations,
                            const std::function<void(int, const StepLoss&)>& on_step = {});
  Detector<float>& model() { return model_; }
  const Detector<float>& model() const { return model_; }
  int steps_done() const { return steps_; }

 private:
  DetectorConfig cfg_;
  std::vector<Scene> scenes_;
  std::vector<std::vector<Box>> proposals_;
  Detector<float> model_;
  SgdMomentum opt_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  int steps_ = 0;
};

/// Proposals used for a scene at train and test time.
std::vector<Box> scene_proposals(const Scene& scene, const DetectorConfig& cfg);

/// Scores every proposal, drops those whose best class is background, applies
/// per-class NMS and returns survivors by descending score.
std::vector<Detection> infer(const Detector<float>& model, const Scene& scene,
                             std::span<const Box> proposals);

/// Runs inference on every scene and scores it at IoU 0.5.
MapResult evaluate_scenes(const Detector<float>& model, std::span<const Scene> scenes,
                          std::vector<std::vector<Detection>>* detections_out = nullptr);

}  // namespace fsn

#endif  // FSN_DETECTOR_HPP_
