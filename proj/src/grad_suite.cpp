#include "fsn/grad_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include "fsn/detector.hpp"
#include "fsn/ops.hpp"
#include "fsn/synth.hpp"

namespace fsn {

namespace {

using Tensor = Tensor4<double>;

constexpr double kMargin = 10 * kFdStep;
constexpr int kMaxDraws = 200;

struct Case {
  std::uint64_t seed;
  bool full;
  const GradSuiteOptions& opt;
  GradReport& report;
  std::mt19937_64 rng;

  Tensor normal(Shape4 s, double stddev = 1.0) {
    std::normal_distribution<double> d(0.0, stddev);
    Tensor t(s);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
    return t;
  }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

  // small cases are always checked in full
  void check(const std::string& op, const std::string& param, Tensor& x,
             std::span<const double> analytic, const std::function<double()>& loss, double tol,
             bool sampled = false) {
    const std::size_t limit = (sampled && !full) ? opt.max_coords : 0;
    report.add(check_tensor(op, param, seed, x, analytic, loss, tol, limit, rng));
  }
};

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "dot");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

[[noreturn]] void no_valid_draw(const std::string& op) {
  throw std::runtime_error(op + ": could not draw a check point away from kinks");
}

// RoI with both sides at least min_side, inside an extent x extent image
Box random_box(Case& k, double extent_w, double extent_h, double min_side) {
  const double w = k.uniform(min_side, extent_w);
  const double h = k.uniform(min_side, extent_h);
  const double x1 = k.uniform(0, extent_w - w);
  const double y1 = k.uniform(0, extent_h - h);
  return {x1, y1, x1 + w, y1 + h};
}

void case_conv2d(Case& k) {
  Tensor x = k.normal({2, 3, 7, 7});
  ConvParams<double> p = make_conv<double>(4, 3, 3, 1 + static_cast<int>(k.seed % 2), 1);
  p.kernel = k.normal(p.kernel.shape(), 0.3);
  p.bias = k.normal(p.bias.shape());
  const Tensor r = k.normal(conv2d(x, p).shape());
  const ConvGrads<double> g = conv2d_backward(x, p, r);
  auto loss = [&] { return dot(conv2d(x, p), r); };
  k.check("conv2d", "input", x, g.dx.data(), loss, kSmoothTolerance);
  k.check("conv2d", "kernel", p.kernel, g.dkernel.data(), loss, kSmoothTolerance);
  k.check("conv2d", "bias", p.bias, g.dbias.data(), loss, kSmoothTolerance);
}

void case_shifted_conv2d(Case& k) {
  const auto table = subregion_offsets(SubRegionGrid{}, ShiftDirection::kCenter);
  Tensor x = k.normal({2, 3, 8, 8});
  ConvParams<double> p = make_conv<double>(4, 3, 3, 1, 1, table[k.seed % table.size()]);
  p.kernel = k.normal(p.kernel.shape(), 0.3);
  p.bias = k.normal(p.bias.shape());
  const Tensor r = k.normal(shifted_conv2d(x, p).shape());
  const ConvGrads<double> g = conv2d_backward(x, p, r);
  auto loss = [&] { return dot(shifted_conv2d(x, p), r); };
  k.check("shifted_conv2d", "input", x, g.dx.data(), loss, kSmoothTolerance);
  k.check("shifted_conv2d", "kernel", p.kernel, g.dkernel.data(), loss, kSmoothTolerance);
  k.check("shifted_conv2d", "bias", p.bias, g.dbias.data(), loss, kSmoothTolerance);
}

void case_fully_connected(Case& k) {
  Tensor x = k.normal({3, 4, 2, 2});
  FcParams<double> p = make_fc<double>(5, 16);
  p.weight = k.normal(p.weight.shape(), 0.25);
  p.bias = k.normal(p.bias.shape());
  const Tensor r = k.normal({3, 5, 1, 1});
  const FcGrads<double> g = fully_connected_backward(x, p, r);
  auto loss = [&] { return dot(fully_connected(x, p), r); };
  k.check("fully_connected", "input", x, g.dx.data(), loss, kSmoothTolerance);
  k.check("fully_connected", "weight", p.weight, g.dweight.data(), loss, kSmoothTolerance);
  k.check("fully_connected", "bias", p.bias, g.dbias.data(), loss, kSmoothTolerance);
}

void case_softmax_loss(Case& k) {
  Tensor logits = k.normal({4, 5, 1, 1}, 2.0);
  std::vector<int> labels(4);
  for (int& l : labels) l = k.uniform_int(0, 4);
  const auto sm = softmax_cross_entropy(logits, std::span<const int>(labels));
  const Tensor g = softmax_cross_entropy_backward(sm.probs, std::span<const int>(labels));
  auto loss = [&] { return softmax_cross_entropy(logits, std::span<const int>(labels)).loss; };
  k.check("softmax_loss", "logits", logits, g.data(), loss, kSmoothTolerance);
}

void case_smooth_l1(Case& k) {
  for (int draw = 0; draw < kMaxDraws; ++draw) {
    Tensor pred = k.normal({6, 4, 1, 1}, 1.5);
    const Tensor target = k.normal({6, 4, 1, 1});
    std::vector<double> w(6);
    for (double& v : w) v = 0.5 * k.uniform_int(0, 2);
    if (kink_margin_smooth_l1(pred, target, w) < kMargin) continue;
    const Tensor g = smooth_l1_backward(pred, target, std::span<const double>(w));
    auto loss = [&] { return smooth_l1(pred, target, std::span<const double>(w)); };
    k.check("smooth_l1", "pred", pred, g.data(), loss, kSmoothTolerance);
    return;
  }
  no_valid_draw("smooth_l1");
}

void case_relu(Case& k) {
  for (int draw = 0; draw < kMaxDraws; ++draw) {
    Tensor x = k.normal({2, 3, 4, 4});
    if (kink_margin_relu(x) < kMargin) continue;
    const Tensor r = k.normal(x.shape());
    const Tensor g = relu_backward(x, r);
    auto loss = [&] { return dot(relu(x), r); };
    k.check("relu", "input", x, g.data(), loss, kKinkTolerance);
    return;
  }
  no_valid_draw("relu");
}

void case_sigmoid(Case& k) {
  Tensor x = k.normal({2, 3, 4, 4}, 2.0);
  const Tensor r = k.normal(x.shape());
  const Tensor g = sigmoid_backward(sigmoid(x), r);
  auto loss = [&] { return dot(sigmoid(x), r); };
  k.check("sigmoid", "input", x, g.data(), loss, kSmoothTolerance);
}

void case_roi_max_pool(Case& k) {
  for (int draw = 0; draw < kMaxDraws; ++draw) {
    Tensor feat = k.normal({2, 3, 10, 10});
    std::vector<RoI> rois;
    for (int i = 0; i < 3; ++i) rois.push_back({k.uniform_int(0, 1), random_box(k, 10, 10, 1.5)});
    if (kink_margin_roi_pool(feat, rois, 3, 3, 1.0) < kMargin) continue;
    const auto res = roi_max_pool(feat, std::span<const RoI>(rois), 3, 3, 1.0);
    const Tensor r = k.normal(res.pooled.shape());
    const Tensor g = roi_max_pool_backward(feat.shape(), std::span<const std::int64_t>(res.argmax), r);
    auto loss = [&] { return dot(roi_max_pool(feat, std::span<const RoI>(rois), 3, 3, 1.0).pooled, r); };
    k.check("roi_max_pool", "input", feat, g.data(), loss, kKinkTolerance);
    return;
  }
  no_valid_draw("roi_max_pool");
}

void selective_case(Case& k, SelectMode mode) {
  const int groups = mode == SelectMode::kSubRegion ? 9 : 3;
  const int cs = 2;
  SelectiveGeometry geom;
  geom.spatial_stride = 1.0;
  const std::string op = mode == SelectMode::kSubRegion ? "selective_pool_subregion"
                                                        : "selective_pool_aspect";
  for (int draw = 0; draw < kMaxDraws; ++draw) {
    AttentionBank<double> bank;
    bank.groups = groups;
    bank.channels_per_group = cs;
    bank.values = k.normal({2, static_cast<std::size_t>(groups * cs), 10, 10});
    std::vector<RoI> rois;
    for (int i = 0; i < 3; ++i) rois.push_back({k.uniform_int(0, 1), random_box(k, 10, 10, 2.0)});
    if (kink_margin_selective_pool(bank, rois, mode, geom) < kMargin) continue;
    const auto map = selective_roi_pool(bank, std::span<const RoI>(rois), mode, geom);
    const Tensor r = k.normal(map.values.shape());
    const Tensor g = selective_pool_backward(r, map, bank.values.shape());
    auto loss = [&] { return dot(selective_roi_pool(bank, std::span<const RoI>(rois), mode, geom).values, r); };
    k.check(op, "bank", bank.values, g.data(), loss, kKinkTolerance);
    return;
  }
  no_valid_draw(op);
}

void case_merge(Case& k) {
  Tensor f = k.normal({3, 2, 3, 3});
  Tensor msr = k.normal(f.shape());
  Tensor mar = k.normal(f.shape());
  const Tensor r = k.normal(f.shape());
  const auto g = merge_selected_features_backward(f, msr, mar, r);
  auto loss = [&] { return dot(merge_selected_features(f, msr, mar), r); };
  k.check("merge", "f", f, g.df.data(), loss, kSmoothTolerance);
  k.check("merge", "m_sr", msr, g.dm_sr.data(), loss, kSmoothTolerance);
  k.check("merge", "m_ar", mar, g.dm_ar.data(), loss, kSmoothTolerance);
}

void case_subregion_bank(Case& k) {
  const SubRegionGrid grid;
  const auto offsets = subregion_offsets(grid, ShiftDirection::kCenter);
  SubRegionAttention<double> att = make_subregion_attention<double>(4, 2, grid, offsets);
  for (auto& c : att.convs) {
    c.kernel = k.normal(c.kernel.shape(), 0.3);
    c.bias = k.normal(c.bias.shape());
  }
  Tensor feat = k.normal({1, 4, 6, 6});
  const Tensor r = k.normal(build_subregion_bank(feat, att).values.shape());
  const auto g = build_subregion_bank_backward(feat, att, r);
  auto loss = [&] { return dot(build_subregion_bank(feat, att).values, r); };
  k.check("subregion_bank", "input", feat, g.dfeat.data(), loss, kSmoothTolerance);
  for (std::size_t i = 0; i < att.convs.size(); ++i) {
    const std::string p = "conv" + std::to_string(i + 1);
    k.check("subregion_bank", p + ".kernel", att.convs[i].kernel, g.convs[i].dkernel.data(), loss,
            kSmoothTolerance);
    k.check("subregion_bank", p + ".bias", att.convs[i].bias, g.convs[i].dbias.data(), loss,
            kSmoothTolerance);
  }
}

// Weights ~ N(0, 1/fan_in), biases ~ N(0, 0.1); attention biases centered at 0.5.
void randomize(Detector<double>& model, Case& k) {
  for (auto& p : model.parameters()) {
    Tensor& t = *p.tensor;
    const bool is_bias = p.name.size() >= 4 && p.name.compare(p.name.size() - 4, 4, "bias") == 0;
    const bool attention = p.name.rfind("subregion", 0) == 0 || p.name.rfind("aspect", 0) == 0;
    if (is_bias) {
      t = k.normal(t.shape(), 0.1);
      if (attention) {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += 0.5;
      }
    } else {
      t = k.normal(t.shape(), 1.0 / std::sqrt(static_cast<double>(t.size() / t.n())));
    }
  }
}

struct HeadBatch {
  std::vector<RoI> rois;
  std::vector<int> labels;
  Tensor targets;
};

HeadBatch random_head_batch(Case& k, int images, double extent, double min_side, int classes) {
  HeadBatch b;
  for (int i = 0; i < 2; ++i) {
    b.rois.push_back({i % images, random_box(k, extent, extent, min_side)});
    b.labels.push_back(i == 0 ? k.uniform_int(1, classes) : k.uniform_int(0, classes));
  }
  b.targets = k.normal({2, 4, 1, 1}, 0.5);
  return b;
}

std::vector<double> fg_weights(const std::vector<int>& labels) {
  std::vector<double> w(labels.size(), 0.0);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] > 0) w[r] = 1.0 / static_cast<double>(labels.size());
  }
  return w;
}

// every kink the detector head passes through, given a forward cache
double head_margin(const Detector<double>& model, const Detector<double>::Cache& c,
                   const HeadBatch& b) {
  const DetectorConfig& cfg = model.config();
  const SelectiveGeometry geom = cfg.selective_geometry();
  double m = kink_margin_relu(c.hidden_pre);
  m = std::min(m, kink_margin_roi_pool(c.reduced, c.rois, cfg.pooled_size, cfg.pooled_size,
                                       cfg.spatial_stride));
  if (cfg.uses_subregion()) {
    m = std::min(m, kink_margin_selective_pool(c.sr_bank, c.rois, SelectMode::kSubRegion, geom));
  }
  if (cfg.uses_aspect()) {
    m = std::min(m, kink_margin_selective_pool(c.ar_bank, c.rois, SelectMode::kAspect, geom));
  }
  m = std::min(m, kink_margin_smooth_l1(c.deltas, b.targets, fg_weights(b.labels)));
  return m;
}

double total_loss(const Detector<double>::Cache& c, const HeadBatch& b) {
  const auto l = detection_losses(c.logits, c.deltas, std::span<const int>(b.labels), b.targets);
  return l.cls + l.reg;
}

void check_model(Case& k, const std::string& op, Detector<double>& model,
                 const std::function<double()>& loss) {
  for (auto& p : model.parameters()) {
    const std::vector<double> analytic(p.tensor->grad().begin(), p.tensor->grad().end());
    k.check(op, p.name, *p.tensor, analytic, loss, kKinkTolerance, true);
  }
}

void case_micro_pipeline(Case& k) {
  DetectorConfig cfg;
  cfg.backbone_channels = 8;
  cfg.selective_channels = 3;
  cfg.head_width = 8;
  cfg.spatial_stride = 1.0;
  cfg.attention_sigmoid = k.seed % 2 == 1;
  for (int draw = 0; draw < kMaxDraws; ++draw) {
    Detector<double> model(cfg);
    randomize(model, k);
    Tensor feat = k.normal({2, 8, 12, 12});
    const HeadBatch b = random_head_batch(k, 2, 12.0, 3.0, cfg.classes);
    const auto cache = model.forward_features(feat, b.rois);
    if (head_margin(model, cache, b) < kMargin) continue;
    const auto l = detection_losses(cache.logits, cache.deltas, std::span<const int>(b.labels), b.targets);
    model.zero_grad();
    const Tensor dfeat = model.backward(cache, l.dlogits, l.ddeltas);
    auto loss = [&] { return total_loss(model.forward_features(feat, b.rois), b); };
    k.check("micro_pipeline", "feature", feat, dfeat.data(), loss, kKinkTolerance, true);
    check_model(k, "micro_pipeline", model, loss);
    return;
  }
  no_valid_draw("micro_pipeline");
}

void case_backbone(Case& k) {
  DetectorConfig cfg;
  cfg.backbone_channels = 16;
  cfg.variant = AttentionVariant::kNone;
  for (int draw = 0; draw < kMaxDraws; ++draw) {
    Detector<double> model(cfg);
    model.initialize(k.rng());
    for (auto& conv : model.backbone_convs) conv.bias = k.normal(conv.bias.shape(), 0.1);
    Tensor image({1, 3, 16, 16});
    for (std::size_t i = 0; i < image.size(); ++i) image[i] = k.uniform(0, 1);
    typename Detector<double>::Cache cache;
    const Tensor feat = model.backbone(image, &cache);
    double margin = std::numeric_limits<double>::infinity();
    for (const Tensor& pre : cache.backbone_pre) margin = std::min(margin, kink_margin_relu(pre));
    if (margin < kMargin) continue;
    const Tensor r = k.normal(feat.shape());
    model.zero_grad();
    const Tensor dimage = model.backbone_backward(cache, r);
    auto loss = [&] { return dot(model.backbone(image), r); };
    k.check("backbone", "image", image, dimage.data(), loss, kKinkTolerance, true);
    for (std::size_t i = 0; i < model.backbone_convs.size(); ++i) {
      const std::string p = "backbone.conv" + std::to_string(i + 1);
      auto& conv = model.backbone_convs[i];
      const std::vector<double> dk(conv.kernel.grad().begin(), conv.kernel.grad().end());
      const std::vector<double> db(conv.bias.grad().begin(), conv.bias.grad().end());
      k.check("backbone", p + ".kernel", conv.kernel, dk, loss, kKinkTolerance, true);
      k.check("backbone", p + ".bias", conv.bias, db, loss, kKinkTolerance, true);
    }
    return;
  }
  no_valid_draw("backbone");
}

// whole detector from pixels on a 16x16 scene
void case_detector(Case& k) {
  DetectorConfig cfg;
  cfg.backbone_channels = 8;
  cfg.selective_channels = 3;
  cfg.head_width = 8;
  for (int draw = 0; draw < kMaxDraws; ++draw) {
    Detector<double> model(cfg);
    randomize(model, k);
    Tensor image({1, 3, 16, 16});
    for (std::size_t i = 0; i < image.size(); ++i) image[i] = k.uniform(0, 1);
    const HeadBatch b = random_head_batch(k, 1, 16.0, 5.0, cfg.classes);
    const auto cache = model.forward(image, b.rois);
    double margin = head_margin(model, cache, b);
    for (const Tensor& pre : cache.backbone_pre) margin = std::min(margin, kink_margin_relu(pre));
    if (margin < kMargin) continue;
    const auto l = detection_losses(cache.logits, cache.deltas, std::span<const int>(b.labels), b.targets);
    model.zero_grad();
    model.backward(cache, l.dlogits, l.ddeltas);
    auto loss = [&] { return total_loss(model.forward(image, b.rois), b); };
    check_model(k, "detector", model, loss);
    return;
  }
  no_valid_draw("detector");
}

using CaseFn = void (*)(Case&);

std::uint64_t name_stream(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : name) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

const std::vector<std::pair<std::string, CaseFn>>& registry() {
  static const std::vector<std::pair<std::string, CaseFn>> cases = {
      {"conv2d", case_conv2d},
      {"shifted_conv2d", case_shifted_conv2d},
      {"fully_connected", case_fully_connected},
      {"softmax_loss", case_softmax_loss},
      {"smooth_l1", case_smooth_l1},
      {"relu", case_relu},
      {"sigmoid", case_sigmoid},
      {"roi_max_pool", case_roi_max_pool},
      {"selective_pool_subregion", [](Case& k) { selective_case(k, SelectMode::kSubRegion); }},
      {"selective_pool_aspect", [](Case& k) { selective_case(k, SelectMode::kAspect); }},
      {"merge", case_merge},
      {"subregion_bank", case_subregion_bank},
      {"micro_pipeline", case_micro_pipeline},
      {"backbone", case_backbone},
      {"detector", case_detector},
  };
  return cases;
}

}  // namespace

const std::vector<std::string>& grad_case_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& c : registry()) n.push_back(c.first);
    return n;
  }();
  return names;
}

void run_grad_case(const std::string& name, std::uint64_t seed, bool full,
                   const GradSuiteOptions& opt, GradReport& report) {
  for (const auto& [n, fn] : registry()) {
    if (n != name) continue;
    Case k{seed, full, opt, report, std::mt19937_64(derive_seed(seed, name_stream(name)))};
    fn(k);
    return;
  }
  throw std::invalid_argument("unknown gradient check '" + name + "'");
}

GradReport run_grad_suite(const GradSuiteOptions& opt) {
  GradReport report;
  for (const auto& name : grad_case_names()) {
    for (int s = 0; s < opt.seeds; ++s) {
      run_grad_case(name, opt.base_seed + static_cast<std::uint64_t>(s), s < opt.full_seeds, opt, report);
    }
  }
  return report;
}

}  // namespace fsn
