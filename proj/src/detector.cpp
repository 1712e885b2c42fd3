#include "fsn/detector.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fsn {

std::string to_string(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::kNone:
      return "none";
    case AttentionVariant::kSubRegion:
      return "subregion";
    case AttentionVariant::kAspect:
      return "aspect";
    case AttentionVariant::kBoth:
      return "both";
  }
  return "both";
}

AttentionVariant parse_attention_variant(const std::string& s) {
  if (s == "none") return AttentionVariant::kNone;
  if (s == "subregion") return AttentionVariant::kSubRegion;
  if (s == "aspect") return AttentionVariant::kAspect;
  if (s == "both") return AttentionVariant::kBoth;
  throw std::invalid_argument("unknown attention variant '" + s +
                              "' (none|subregion|aspect|both)");
}

// ---------------------------------------------------------------------------
// config

namespace {

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename V>
V parse_number(const std::string& key, const std::string& s) {
  V v{};
  const char* end = s.data() + s.size();
  auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw std::invalid_argument("config key '" + key + "': cannot parse '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "1" || s == "true" || s == "on") return true;
  if (s == "0" || s == "false" || s == "off") return false;
  throw std::invalid_argument("config key '" + key + "': expected a boolean, got '" + s + "'");
}

}  // namespace

int DetectorConfig::effective_head_width() const {
  if (head_width > 0) return head_width;
  return selective_channels == 1 ? 100 : 500;
}

SelectiveGeometry DetectorConfig::selective_geometry() const {
  SelectiveGeometry g;
  g.pooled_h = pooled_size;
  g.pooled_w = pooled_size;
  g.spatial_stride = spatial_stride;
  g.grid = {subregion_rows, subregion_cols};
  g.thresholds = {aspect_tall, aspect_wide};
  return g;
}

void DetectorConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw std::invalid_argument(std::string(name) + " must be positive");
  };
  positive(backbone_channels, "backbone_channels");
  positive(selective_channels, "selective_channels");
  positive(subregion_rows, "subregion_rows");
  positive(subregion_cols, "subregion_cols");
  positive(pooled_size, "pooled_size");
  positive(classes, "classes");
  positive(images_per_batch, "images_per_batch");
  positive(rois_per_image, "rois_per_image");
  positive(proposals, "proposals");
  if (head_width < 0) throw std::invalid_argument("head_width must be >= 0 (0 = automatic)");
  if (aspect_groups != 1 && aspect_groups != 3) {
    throw std::invalid_argument("aspect_groups must be 1 or 3");
  }
  if (!(aspect_tall > 0 && aspect_tall <= aspect_wide)) {
    throw std::invalid_argument("aspect thresholds must satisfy 0 < aspect_tall <= aspect_wide");
  }
  if (!(spatial_stride > 0)) throw std::invalid_argument("spatial_stride must be positive");
  if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (!(fg_fraction >= 0 && fg_fraction <= 1)) throw std::invalid_argument("fg_fraction in [0, 1]");
  if (!(fg_iou > 0 && fg_iou <= 1)) throw std::invalid_argument("fg_iou must be in (0, 1]");
  if (!(nms_threshold >= 0 && nms_threshold <= 1)) throw std::invalid_argument("nms_threshold in [0, 1]");
}

std::map<std::string, std::string> DetectorConfig::to_key_values() const {
  return {
      {"backbone_channels", std::to_string(backbone_channels)},
      {"selective_channels", std::to_string(selective_channels)},
      {"subregion_rows", std::to_string(subregion_rows)},
      {"subregion_cols", std::to_string(subregion_cols)},
      {"aspect_groups", std::to_string(aspect_groups)},
      {"pooled_size", std::to_string(pooled_size)},
      {"head_width", std::to_string(head_width)},
      {"classes", std::to_string(classes)},
      {"aspect_tall", fmt(aspect_tall)},
      {"aspect_wide", fmt(aspect_wide)},
      {"shift_direction", to_string(shift_direction)},
      {"variant", to_string(variant)},
      {"attention_sigmoid", attention_sigmoid ? "true" : "false"},
      {"spatial_stride", fmt(spatial_stride)},
      {"learning_rate", fmt(learning_rate)},
      {"momentum", fmt(momentum)},
      {"iterations", std::to_string(iterations)},
      {"images_per_batch", std::to_string(images_per_batch)},
      {"rois_per_image", std::to_string(rois_per_image)},
      {"fg_fraction", fmt(fg_fraction)},
      {"fg_iou", fmt(fg_iou)},
      {"proposals", std::to_string(proposals)},
      {"nms_threshold", fmt(nms_threshold)},
      {"score_threshold", fmt(score_threshold)},
      {"seed", std::to_string(seed)},
  };
}

bool DetectorConfig::set(const std::string& key, const std::string& value) {
  if (key == "backbone_channels") backbone_channels = parse_number<int>(key, value);
  else if (key == "selective_channels") selective_channels = parse_number<int>(key, value);
  else if (key == "subregion_rows") subregion_rows = parse_number<int>(key, value);
  else if (key == "subregion_cols") subregion_cols = parse_number<int>(key, value);
  else if (key == "aspect_groups") aspect_groups = parse_number<int>(key, value);
  else if (key == "pooled_size") pooled_size = parse_number<int>(key, value);
  else if (key == "head_width") head_width = parse_number<int>(key, value);
  else if (key == "classes") classes = parse_number<int>(key, value);
  else if (key == "aspect_tall") aspect_tall = parse_number<double>(key, value);
  else if (key == "aspect_wide") aspect_wide = parse_number<double>(key, value);
  else if (key == "shift_direction") shift_direction = parse_shift_direction(value);
  else if (key == "variant") variant = parse_attention_variant(value);
  else if (key == "attention_sigmoid") attention_sigmoid = parse_bool(key, value);
  else if (key == "spatial_stride") spatial_stride = parse_number<double>(key, value);
  else if (key == "learning_rate") learning_rate = parse_number<double>(key, value);
  else if (key == "momentum") momentum = parse_number<double>(key, value);
  else if (key == "iterations") iterations = parse_number<int>(key, value);
  else if (key == "images_per_batch") images_per_batch = parse_number<int>(key, value);
  else if (key == "rois_per_image") rois_per_image = parse_number<int>(key, value);
  else if (key == "fg_fraction") fg_fraction = parse_number<double>(key, value);
  else if (key == "fg_iou") fg_iou = parse_number<double>(key, value);
  else if (key == "proposals") proposals = parse_number<int>(key, value);
  else if (key == "nms_threshold") nms_threshold = parse_number<double>(key, value);
  else if (key == "score_threshold") score_threshold = parse_number<double>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else return false;
  return true;
}

std::uint64_t DetectorConfig::hash() const {
  // FNV-1a over the canonical key=value listing
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : to_key_values()) {
    for (char ch : k + "=" + v + "\n") {
      h ^= static_cast<unsigned char>(ch);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// parameter counts

namespace {

struct BackboneLayer {
  std::size_t c_in, c_out;
  int stride;
};

std::vector<BackboneLayer> backbone_layers(const DetectorConfig& cfg) {
  const auto C = static_cast<std::size_t>(cfg.backbone_channels);
  return {{3, 16, 1}, {16, 32, 2}, {32, C, 2}, {C, C, 1}};
}

std::size_t conv_count(std::size_t c_out, std::size_t c_in, std::size_t k) {
  return c_out * c_in * k * k + c_out;
}

std::size_t fc_count(std::size_t d_out, std::size_t d_in) { return d_out * d_in + d_out; }

std::size_t pooled_length(const DetectorConfig& cfg) {
  return static_cast<std::size_t>(cfg.selective_channels) * cfg.pooled_size * cfg.pooled_size;
}

}  // namespace

std::size_t head_first_fc_parameter_count(const DetectorConfig& cfg) {
  return fc_count(static_cast<std::size_t>(cfg.effective_head_width()), pooled_length(cfg));
}

std::size_t head_parameter_count(const DetectorConfig& cfg) {
  const auto hw = static_cast<std::size_t>(cfg.effective_head_width());
  return head_first_fc_parameter_count(cfg) + fc_count(cfg.classes + 1, hw) + fc_count(4, hw);
}

std::size_t attention_parameter_count(const DetectorConfig& cfg) {
  const auto C = static_cast<std::size_t>(cfg.backbone_channels);
  const auto cs = static_cast<std::size_t>(cfg.selective_channels);
  std::size_t n = 0;
  if (cfg.uses_subregion()) n += static_cast<std::size_t>(cfg.subregion_count()) * conv_count(cs, C, 3);
  if (cfg.uses_aspect()) n += conv_count(cs * cfg.aspect_groups, C, 1);
  return n;
}

std::size_t backbone_parameter_count(const DetectorConfig& cfg) {
  std::size_t n = 0;
  for (const auto& l : backbone_layers(cfg)) n += conv_count(l.c_out, l.c_in, 3);
  return n;
}

std::size_t total_parameter_count(const DetectorConfig& cfg) {
  const std::size_t reduce =
      conv_count(static_cast<std::size_t>(cfg.selective_channels), cfg.backbone_channels, 1);
  return backbone_parameter_count(cfg) + reduce + attention_parameter_count(cfg) +
         head_parameter_count(cfg);
}

std::size_t two_fc_head_parameter_count(const DetectorConfig& cfg, std::size_t hidden) {
  return fc_count(hidden, pooled_length(cfg)) + fc_count(hidden, hidden) +
         fc_count(cfg.classes + 1, hidden) + fc_count(4, hidden);
}

// ---------------------------------------------------------------------------
// model

template <typename T>
Detector<T>::Detector(const DetectorConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto C = static_cast<std::size_t>(cfg_.backbone_channels);
  const auto cs = static_cast<std::size_t>(cfg_.selective_channels);
  for (const auto& l : backbone_layers(cfg_)) {
    backbone_convs.push_back(make_conv<T>(l.c_out, l.c_in, 3, l.stride, 1));
  }
  reduce = make_conv<T>(cs, C, 1, 1, 0);
  if (cfg_.uses_subregion()) {
    const SubRegionGrid grid{cfg_.subregion_rows, cfg_.subregion_cols};
    const auto offsets =
        subregion_offsets(grid, cfg_.shift_direction, derive_seed(cfg_.seed, 0x5348));
    subregion = make_subregion_attention<T>(C, cs, grid, offsets);
  }
  if (cfg_.uses_aspect()) {
    aspect = make_conv<T>(cs * static_cast<std::size_t>(cfg_.aspect_groups), C, 1, 1, 0);
  }
  const auto hw = static_cast<std::size_t>(cfg_.effective_head_width());
  fc_hidden = make_fc<T>(hw, pooled_length(cfg_));
  fc_cls = make_fc<T>(static_cast<std::size_t>(cfg_.classes) + 1, hw);
  fc_reg = make_fc<T>(4, hw);
}

template <typename T>
std::vector<NamedTensor<T>> Detector<T>::parameters() {
  std::vector<NamedTensor<T>> out;
  for (std::size_t i = 0; i < backbone_convs.size(); ++i) {
    const std::string p = "backbone.conv" + std::to_string(i + 1);
    out.push_back({p + ".kernel", &backbone_convs[i].kernel});
    out.push_back({p + ".bias", &backbone_convs[i].bias});
  }
  out.push_back({"reduce.kernel", &reduce.kernel});
  out.push_back({"reduce.bias", &reduce.bias});
  for (std::size_t k = 0; k < subregion.convs.size(); ++k) {
    const std::string p = "subregion." + std::to_string(k + 1);
    out.push_back({p + ".kernel", &subregion.convs[k].kernel});
    out.push_back({p + ".bias", &subregion.convs[k].bias});
  }
  if (cfg_.uses_aspect()) {
    out.push_back({"aspect.kernel", &aspect.kernel});
    out.push_back({"aspect.bias", &aspect.bias});
  }
  out.push_back({"head.fc.weight", &fc_hidden.weight});
  out.push_back({"head.fc.bias", &fc_hidden.bias});
  out.push_back({"head.cls.weight", &fc_cls.weight});
  out.push_back({"head.cls.bias", &fc_cls.bias});
  out.push_back({"head.reg.weight", &fc_reg.weight});
  out.push_back({"head.reg.bias", &fc_reg.bias});
  return out;
}

template <typename T>
std::vector<ConstNamedTensor<T>> Detector<T>::parameters() const {
  std::vector<ConstNamedTensor<T>> out;
  for (auto& p : const_cast<Detector<T>*>(this)->parameters()) out.push_back({p.name, p.tensor});
  return out;
}

template <typename T>
std::size_t Detector<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->size();
  return n;
}

template <typename T>
void Detector<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor->zero_grad();
}

template <typename T>
void Detector<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto gaussian = [&rng](Tensor4<T>& t, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
  };
  auto he = [&](ConvParams<T>& p) {
    const double fan_in = static_cast<double>(p.c_in() * p.ksize() * p.ksize());
    gaussian(p.kernel, std::sqrt(2.0 / fan_in));
    p.bias.fill(T(0));
  };
  for (auto& conv : backbone_convs) he(conv);
  he(reduce);

  // merged attention starts near one: 0.5 + 0.5 with both maps, 1 with a single map
  const bool both = cfg_.variant == AttentionVariant::kBoth;
  const T att_bias = cfg_.attention_sigmoid ? T(0) : (both ? T(0.5) : T(1));
  for (auto& conv : subregion.convs) {
    gaussian(conv.kernel, 0.01);
    conv.bias.fill(att_bias);
  }
  if (cfg_.uses_aspect()) {
    gaussian(aspect.kernel, 0.01);
    aspect.bias.fill(att_bias);
  }
  for (FcParams<T>* fc : {&fc_hidden, &fc_cls, &fc_reg}) {
    gaussian(fc->weight, 0.01);
    fc->bias.fill(T(0));
  }
}

template <typename T>
Tensor4<T> Detector<T>::backbone(const Tensor4<T>& images, Cache* cache) const {
  if (images.c() != 3) throw std::invalid_argument("backbone: expects 3-channel images");
  const auto stride = static_cast<std::size_t>(cfg_.spatial_stride);
  if (images.h() % 4 != 0 || images.w() % 4 != 0 || stride != 4) {
    throw std::invalid_argument("backbone: image size " + std::to_string(images.h()) + "x" +
                                std::to_string(images.w()) +
                                " must be a multiple of the backbone stride 4 (and spatial_stride 4)");
  }
  Tensor4<T> x = images;
  for (const auto& conv : backbone_convs) {
    Tensor4<T> z = conv2d(x, conv);
    Tensor4<T> a = relu(z);
    if (cache != nullptr) {
      cache->backbone_in.push_back(std::move(x));
      cache->backbone_pre.push_back(std::move(z));
    }
    x = std::move(a);
  }
  return x;
}

template <typename T>
typename Detector<T>::Cache Detector<T>::forward(const Tensor4<T>& images,
                                                 std::span<const RoI> rois) const {
  Cache c;
  c.feat = backbone(images, &c);
  c.rois.assign(rois.begin(), rois.end());
  finish_forward(c);
  return c;
}

template <typename T>
typename Detector<T>::Cache Detector<T>::forward_features(const Tensor4<T>& feat,
                                                          std::span<const RoI> rois) const {
  if (feat.c() != static_cast<std::size_t>(cfg_.backbone_channels)) {
    throw std::invalid_argument("forward_features: feature map channel count mismatch");
  }
  Cache c;
  c.from_features = true;
  c.feat = feat;
  c.rois.assign(rois.begin(), rois.end());
  finish_forward(c);
  return c;
}

template <typename T>
void Detector<T>::finish_forward(Cache& c) const {
  const SelectiveGeometry geom = cfg_.selective_geometry();
  c.reduced = reduce_dim(c.feat, reduce);
  c.compact = roi_max_pool(c.reduced, std::span<const RoI>(c.rois), cfg_.pooled_size,
                           cfg_.pooled_size, cfg_.spatial_stride);
  const Tensor4<T>& f = c.compact.pooled;
  if (cfg_.uses_subregion()) {
    c.sr_bank = build_subregion_bank(c.feat, subregion);
    if (cfg_.attention_sigmoid) c.sr_bank.values = sigmoid(c.sr_bank.values);
    c.sr_map = selective_roi_pool(c.sr_bank, std::span<const RoI>(c.rois), SelectMode::kSubRegion, geom);
  }
  if (cfg_.uses_aspect()) {
    c.ar_bank = build_aspect_bank(c.feat, aspect, cfg_.aspect_groups);
    if (cfg_.attention_sigmoid) c.ar_bank.values = sigmoid(c.ar_bank.values);
    c.ar_map = selective_roi_pool(c.ar_bank, std::span<const RoI>(c.rois), SelectMode::kAspect, geom);
  }
  switch (cfg_.variant) {
    case AttentionVariant::kNone:
      c.f_hat = f;
      break;
    case AttentionVariant::kSubRegion:
      c.f_hat = elementwise_mul(f, c.sr_map.values);
      break;
    case AttentionVariant::kAspect:
      c.f_hat = elementwise_mul(f, c.ar_map.values);
      break;
    case AttentionVariant::kBoth:
      c.f_hat = merge_selected_features(f, c.sr_map.values, c.ar_map.values);
      break;
  }
  c.hidden_pre = fully_connected(c.f_hat, fc_hidden);
  c.hidden = relu(c.hidden_pre);
  c.logits = fully_connected(c.hidden, fc_cls);
  c.deltas = fully_connected(c.hidden, fc_reg);
}

namespace {

template <typename T>
void accumulate(Tensor4<T>& param, const Tensor4<T>& grad) {
  require_same_shape(param.shape(), grad.shape(), "accumulate");
  param.ensure_grad();
  auto g = param.grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += grad[i];
}

template <typename T>
void accumulate(ConvParams<T>& p, const ConvGrads<T>& g) {
  accumulate(p.kernel, g.dkernel);
  accumulate(p.bias, g.dbias);
}

template <typename T>
void accumulate(FcParams<T>& p, const FcGrads<T>& g) {
  accumulate(p.weight, g.dweight);
  accumulate(p.bias, g.dbias);
}

template <typename T>
void add_into(Tensor4<T>& dst, const Tensor4<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
Tensor4<T> Detector<T>::backward(const Cache& c, const Tensor4<T>& dlogits,
                                 const Tensor4<T>& ddeltas) {
  FcGrads<T> g_cls = fully_connected_backward(c.hidden, fc_cls, dlogits);
  FcGrads<T> g_reg = fully_connected_backward(c.hidden, fc_reg, ddeltas);
  accumulate(fc_cls, g_cls);
  accumulate(fc_reg, g_reg);
  add_into(g_cls.dx, g_reg.dx);
  const Tensor4<T> d_pre = relu_backward(c.hidden_pre, g_cls.dx);
  FcGrads<T> g_hidden = fully_connected_backward(c.f_hat, fc_hidden, d_pre);
  accumulate(fc_hidden, g_hidden);
  const Tensor4<T>& d_fhat = g_hidden.dx;

  const Tensor4<T>& f = c.compact.pooled;
  Tensor4<T> df, dm_sr, dm_ar;
  switch (cfg_.variant) {
    case AttentionVariant::kNone:
      df = d_fhat;
      break;
    case AttentionVariant::kSubRegion: {
      auto g = elementwise_mul_backward(f, c.sr_map.values, d_fhat);
      df = std::move(g.da);
      dm_sr = std::move(g.db);
      break;
    }
    case AttentionVariant::kAspect: {
      auto g = elementwise_mul_backward(f, c.ar_map.values, d_fhat);
      df = std::move(g.da);
      dm_ar = std::move(g.db);
      break;
    }
    case AttentionVariant::kBoth: {
      auto g = merge_selected_features_backward(f, c.sr_map.values, c.ar_map.values, d_fhat);
      df = std::move(g.df);
      dm_sr = std::move(g.dm_sr);
      dm_ar = std::move(g.dm_ar);
      break;
    }
  }

  const Tensor4<T> d_reduced =
      roi_max_pool_backward(c.reduced.shape(), std::span<const std::int64_t>(c.compact.argmax), df);
  ConvGrads<T> g_reduce = conv2d_backward(c.feat, reduce, d_reduced);
  accumulate(reduce, g_reduce);
  Tensor4<T> dfeat = std::move(g_reduce.dx);

  if (cfg_.uses_subregion()) {
    Tensor4<T> dbank = selective_pool_backward(dm_sr, c.sr_map, c.sr_bank.values.shape());
    if (cfg_.attention_sigmoid) dbank = sigmoid_backward(c.sr_bank.values, dbank);
    SubRegionBankGrads<T> g = build_subregion_bank_backward(c.feat, subregion, dbank);
    for (std::size_t k = 0; k < g.convs.size(); ++k) accumulate(subregion.convs[k], g.convs[k]);
    add_into(dfeat, g.dfeat);
  }
  if (cfg_.uses_aspect()) {
    Tensor4<T> dbank = selective_pool_backward(dm_ar, c.ar_map, c.ar_bank.values.shape());
    if (cfg_.attention_sigmoid) dbank = sigmoid_backward(c.ar_bank.values, dbank);
    ConvGrads<T> g = conv2d_backward(c.feat, aspect, dbank);
    accumulate(aspect, g);
    add_into(dfeat, g.dx);
  }

  if (!c.from_features) backbone_backward(c, dfeat);
  return dfeat;
}

template <typename T>
Tensor4<T> Detector<T>::backbone_backward(const Cache& c, const Tensor4<T>& dfeat) {
  if (c.backbone_pre.size() != backbone_convs.size()) {
    throw std::invalid_argument("backbone_backward: cache holds no backbone activations");
  }
  Tensor4<T> dz = relu_backward(c.backbone_pre.back(), dfeat);
  for (std::size_t i = backbone_convs.size(); i-- > 0;) {
    ConvGrads<T> g = conv2d_backward(c.backbone_in[i], backbone_convs[i], dz);
    accumulate(backbone_convs[i], g);
    if (i == 0) return std::move(g.dx);
    dz = relu_backward(c.backbone_pre[i - 1], g.dx);
  }
  return dz;
}

template class Detector<float>;
template class Detector<double>;

// ---------------------------------------------------------------------------
// losses and batches

template <typename T>
Losses<T> detection_losses(const Tensor4<T>& logits, const Tensor4<T>& deltas,
                           std::span<const int> labels, const Tensor4<T>& targets) {
  const std::size_t rows = logits.n();
  Losses<T> out;
  SoftmaxLoss<T> sm = softmax_cross_entropy(logits, labels);
  out.cls = sm.loss;
  out.dlogits = softmax_cross_entropy_backward(sm.probs, labels);
  std::vector<T> weight(rows, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] > 0) weight[r] = T(1) / static_cast<T>(rows);
  }
  out.reg = smooth_l1(deltas, targets, std::span<const T>(weight));
  out.ddeltas = smooth_l1_backward(deltas, targets, std::span<const T>(weight));
  return out;
}

template Losses<float> detection_losses(const Tensor4<float>&, const Tensor4<float>&,
                                        std::span<const int>, const Tensor4<float>&);
template Losses<double> detection_losses(const Tensor4<double>&, const Tensor4<double>&,
                                         std::span<const int>, const Tensor4<double>&);

template <typename T>
TrainBatch<T> make_batch(std::span<const Scene* const> scenes,
                         std::span<const std::vector<Box>* const> proposals,
                         const DetectorConfig& cfg, std::mt19937_64& rng) {
  if (scenes.empty() || scenes.size() != proposals.size()) {
    throw std::invalid_argument("make_batch: need one proposal list per scene");
  }
  const std::size_t H = static_cast<std::size_t>(scenes[0]->height);
  const std::size_t W = static_cast<std::size_t>(scenes[0]->width);
  TrainBatch<T> b;
  b.images = Tensor4<T>({scenes.size(), 3, H, W});
  std::vector<T> targets;
  SamplingParams sp;
  sp.batch_size = static_cast<std::size_t>(cfg.rois_per_image);
  sp.fg_fraction = cfg.fg_fraction;
  sp.fg_iou = cfg.fg_iou;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& s = *scenes[i];
    if (static_cast<std::size_t>(s.height) != H || static_cast<std::size_t>(s.width) != W) {
      throw std::invalid_argument("make_batch: scenes in a batch must share a size");
    }
    const Tensor4<T> img = s.to_tensor<T>();
    std::copy(img.ptr(), img.ptr() + img.size(), b.images.plane(i, 0));

    std::vector<Box> pool = *proposals[i];
    for (const GroundTruth& g : s.objects) pool.push_back(g.box);
    const auto sampled = sample_rois(pool, s.objects, sp, rng);
    for (const SampledRoi& r : sampled) {
      b.rois.push_back({static_cast<int>(i), r.box});
      b.labels.push_back(r.label);
      BoxDelta d{};
      if (r.label > 0) {
        d = encode_delta(s.objects[static_cast<std::size_t>(r.gt_index)].box, r.box);
        ++b.foreground;
      }
      targets.push_back(static_cast<T>(d.tx / kDeltaStd[0]));
      targets.push_back(static_cast<T>(d.ty / kDeltaStd[1]));
      targets.push_back(static_cast<T>(d.tw / kDeltaStd[2]));
      targets.push_back(static_cast<T>(d.th / kDeltaStd[3]));
    }
  }
  b.targets = Tensor4<T>({b.rois.size(), 4, 1, 1}, std::move(targets));
  return b;
}

template TrainBatch<float> make_batch(std::span<const Scene* const>,
                                      std::span<const std::vector<Box>* const>,
                                      const DetectorConfig&, std::mt19937_64&);
template TrainBatch<double> make_batch(std::span<const Scene* const>,
                                       std::span<const std::vector<Box>* const>,
                                       const DetectorConfig&, std::mt19937_64&);

void SgdMomentum::step(std::span<NamedTensor<float>> params) {
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (const auto& p : params) velocity_.emplace_back(p.tensor->size(), 0.0f);
  }
  const auto lr = static_cast<float>(lr_);
  const auto mu = static_cast<float>(momentum_);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor4<float>& t = *params[k].tensor;
    if (!t.has_grad()) continue;
    auto g = t.grad();
    auto& v = velocity_[k];
    float* w = t.ptr();
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = mu * v[i] - lr * g[i];
      w[i] += v[i];
    }
  }
}

StepLoss train_step(Detector<float>& model, SgdMomentum& opt, const TrainBatch<float>& batch) {
  model.zero_grad();
  const auto cache = model.forward(batch.images, batch.rois);
  const Losses<float> l = detection_losses(cache.logits, cache.deltas,
                                           std::span<const int>(batch.labels), batch.targets);
  model.backward(cache, l.dlogits, l.ddeltas);
  auto params = model.parameters();
  opt.step(params);
  return {l.cls, l.reg, batch.foreground};
}

// ---------------------------------------------------------------------------
// training and inference

std::vector<Box> scene_proposals(const Scene& scene, const DetectorConfig& cfg) {
  return generate_proposals(scene, static_cast<std::size_t>(cfg.proposals),
                            derive_seed(scene.seed, 0x50524f50));
}

Trainer::Trainer(const DetectorConfig& cfg, std::vector<Scene> scenes)
    : cfg_(cfg),
      scenes_(std::move(scenes)),
      model_(cfg),
      opt_(cfg.learning_rate, cfg.momentum),
      rng_(derive_seed(cfg.seed, 0x545241494e)) {
  if (scenes_.empty()) throw std::invalid_argument("Trainer: no training scenes");
  model_.initialize(derive_seed(cfg.seed, 0x494e4954));
  for (const Scene& s : scenes_) proposals_.push_back(scene_proposals(s, cfg_));
  order_.resize(scenes_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  cursor_ = order_.size();  // forces a shuffle on the first step
}

StepLoss Trainer::step() {
  std::vector<const Scene*> batch_scenes;
  std::vector<const std::vector<Box>*> batch_props;
  for (int i = 0; i < cfg_.images_per_batch; ++i) {
    if (cursor_ >= order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    const std::size_t idx = order_[cursor_++];
    batch_scenes.push_back(&scenes_[idx]);
    batch_props.push_back(&proposals_[idx]);
  }
  const TrainBatch<float> batch = make_batch<float>(batch_scenes, batch_props, cfg_, rng_);
  ++steps_;
  return train_step(model_, opt_, batch);
}

std::vector<StepLoss> Trainer::run(int iterations,
                                   const std::function<void(int, const StepLoss&)>& on_step) {
  std::vector<StepLoss> log;
  log.reserve(static_cast<std::size_t>(std::max(iterations, 0)));
  for (int i = 0; i < iterations; ++i) {
    log.push_back(step());
    if (on_step) on_step(steps_, log.back());
  }
  return log;
}

std::vector<Detection> infer(const Detector<float>& model, const Scene& scene,
                             std::span<const Box> proposals) {
  if (proposals.empty()) return {};
  const DetectorConfig& cfg = model.config();
  std::vector<RoI> rois;
  rois.reserve(proposals.size());
  for (const Box& b : proposals) rois.push_back({0, b});
  const auto cache = model.forward(scene.to_tensor<float>(), rois);
  const std::size_t K = static_cast<std::size_t>(cfg.classes) + 1;
  std::vector<int> dummy(rois.size(), 0);
  const SoftmaxLoss<float> sm = softmax_cross_entropy(cache.logits, std::span<const int>(dummy));

  std::vector<Detection> candidates;
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const float* p = sm.probs.ptr() + r * K;
    const std::size_t best = static_cast<std::size_t>(std::max_element(p, p + K) - p);
    if (best == 0 || p[best] < cfg.score_threshold) continue;
    const float* d = cache.deltas.ptr() + r * 4;
    const BoxDelta delta{d[0] * kDeltaStd[0], d[1] * kDeltaStd[1], d[2] * kDeltaStd[2],
                         d[3] * kDeltaStd[3]};
    const Box box = clip_box(decode_delta(delta, proposals[r]), scene.width, scene.height);
    if (!box.valid()) continue;
    candidates.push_back({static_cast<int>(best), static_cast<double>(p[best]), box});
  }

  std::vector<Detection> out;
  for (int cls = 1; cls <= cfg.classes; ++cls) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    std::vector<std::size_t> index;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (candidates[i].label != cls) continue;
      boxes.push_back(candidates[i].box);
      scores.push_back(candidates[i].score);
      index.push_back(i);
    }
    for (std::size_t k : nms(boxes, scores, cfg.nms_threshold)) out.push_back(candidates[index[k]]);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return out;
}

MapResult evaluate_scenes(const Detector<float>& model, std::span<const Scene> scenes,
                          std::vector<std::vector<Detection>>* detections_out) {
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<GroundTruth>> gts;
  for (const Scene& s : scenes) {
    const auto props = scene_proposals(s, model.config());
    dets.push_back(infer(model, s, props));
    gts.push_back(s.objects);
  }
  MapResult res = evaluate_map(dets, gts, model.config().classes);
  if (detections_out != nullptr) *detections_out = std::move(dets);
  return res;
}

}  // namespace fsn
