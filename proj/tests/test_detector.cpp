#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fsn/checkpoint.hpp"
#include "fsn/detector.hpp"
#include "fsn/evaluate.hpp"

using namespace fsn;

namespace {

DetectorConfig small_config() {
  DetectorConfig cfg;
  cfg.backbone_channels = 16;
  cfg.selective_channels = 4;
  cfg.head_width = 32;
  cfg.rois_per_image = 32;
  cfg.proposals = 60;
  return cfg;
}

std::vector<Scene> small_scenes(std::size_t n, std::uint64_t seed) {
  SynthParams sp;
  sp.width = sp.height = 64;
  return generate_dataset(n, seed, sp);
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("fsn_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

void zero_all(Detector<float>& m) {
  for (auto& p : m.parameters()) p.tensor->fill(0.0f);
}

}  // namespace

TEST_CASE("closed-form parameter counts") {
  const DetectorConfig cfg;
  CHECK(head_first_fc_parameter_count(cfg) == 7u * 7u * 40u * 500u + 500u);
  CHECK(head_first_fc_parameter_count(cfg) == 980500u);
  CHECK(head_parameter_count(cfg) + attention_parameter_count(cfg) < two_fc_head_parameter_count(cfg));
  CHECK(attention_parameter_count(cfg) == 9u * (40u * 64u * 9u + 40u) + (120u * 64u + 120u));

  Detector<float> model(cfg);
  CHECK(model.parameter_count() == total_parameter_count(cfg));

  DetectorConfig one = cfg;
  one.selective_channels = 1;
  CHECK(one.effective_head_width() == 100);
  CHECK(head_first_fc_parameter_count(one) == 49u * 100u + 100u);
  CHECK(Detector<float>(one).parameter_count() == total_parameter_count(one));

  for (auto v : {AttentionVariant::kNone, AttentionVariant::kSubRegion, AttentionVariant::kAspect}) {
    DetectorConfig c = cfg;
    c.variant = v;
    CHECK(Detector<float>(c).parameter_count() == total_parameter_count(c));
  }
}

TEST_CASE("config validation and key round trip") {
  DetectorConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  DetectorConfig bad = cfg;
  bad.selective_channels = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.aspect_groups = 2;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  DetectorConfig c = cfg;
  c.learning_rate = 0.0123456789;
  c.shift_direction = ShiftDirection::kRandom;
  c.variant = AttentionVariant::kAspect;
  c.seed = 99;
  DetectorConfig back;
  for (const auto& [k, v] : c.to_key_values()) CHECK(back.set(k, v));
  CHECK(back.to_key_values() == c.to_key_values());
  CHECK(back.hash() == c.hash());
  CHECK(back.learning_rate == c.learning_rate);
  CHECK(c.hash() != cfg.hash());
  CHECK_FALSE(back.set("no_such_key", "1"));
  CHECK_THROWS(back.set("momentum", "fast"));
  CHECK(parse_attention_variant(to_string(AttentionVariant::kBoth)) == AttentionVariant::kBoth);
}

TEST_CASE("backbone shape and zero behaviour") {
  DetectorConfig cfg = small_config();
  Detector<float> model(cfg);
  model.initialize(1);
  for (auto& conv : model.backbone_convs) conv.bias.fill(0.0f);
  auto feat = model.backbone(Tensor4<float>({2, 3, 32, 48}));
  CHECK(feat.shape() == Shape4{2, 16, 8, 12});
  for (float v : feat.data()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(model.backbone(Tensor4<float>({1, 3, 30, 32})), std::invalid_argument);
}

TEST_CASE("zero weights give uniform scores") {
  DetectorConfig cfg = small_config();
  Detector<float> model(cfg);
  zero_all(model);
  const Scene s = small_scenes(1, 3)[0];
  std::vector<RoI> rois = {{0, {1, 1, 30, 30}}, {0, {10, 5, 60, 40}}};
  auto cache = model.forward(s.to_tensor<float>(), rois);
  REQUIRE(cache.logits.shape() == Shape4{2, 4, 1, 1});
  for (float v : cache.logits.data()) CHECK(v == 0.0f);
  std::vector<int> labels = {0, 0};
  auto sm = softmax_cross_entropy(cache.logits, labels);
  for (float p : sm.probs.data()) CHECK(p == doctest::Approx(0.25f));
  // uniform scores pick background, so nothing is detected
  CHECK(infer(model, s, std::vector<Box>{{1, 1, 30, 30}}).empty());
}

TEST_CASE("inference: empty input and duplicate suppression") {
  DetectorConfig cfg = small_config();
  Detector<float> model(cfg);
  zero_all(model);
  const Scene s = small_scenes(1, 4)[0];
  CHECK(infer(model, s, std::vector<Box>{}).empty());

  model.fc_cls.bias[1] = 2.0f;  // every proposal scores class 1 the same
  std::vector<Box> props;
  for (int i = 0; i < 5; ++i) props.push_back({4, 4, 24, 24});
  for (int i = 0; i < 4; ++i) props.push_back({36, 30, 60, 62});
  auto dets = infer(model, s, props);
  REQUIRE(dets.size() == 2);
  for (const auto& d : dets) {
    CHECK(d.label == 1);
    CHECK(d.score > 0.0);
    CHECK(d.score <= 1.0);
    CHECK(d.box.x1 >= 0);
    CHECK(d.box.x2 <= s.width);
  }
  CHECK(dets[0].score >= dets[1].score);
}

TEST_CASE("regression loss is exactly zero without foreground") {
  Tensor4<float> logits({3, 4, 1, 1}, 0.3f);
  Tensor4<float> deltas({3, 4, 1, 1}, 5.0f);
  Tensor4<float> targets({3, 4, 1, 1}, -2.0f);
  std::vector<int> labels = {0, 0, 0};
  auto l = detection_losses(logits, deltas, std::span<const int>(labels), targets);
  CHECK(l.reg == 0.0f);
  for (float v : l.ddeltas.data()) CHECK(v == 0.0f);
  CHECK(l.cls == doctest::Approx(std::log(4.0f)));
}

TEST_CASE("training is deterministic and all-background batches proceed") {
  DetectorConfig cfg = small_config();
  cfg.seed = 5;
  auto scenes = small_scenes(6, 11);
  Trainer a(cfg, scenes), b(cfg, scenes);
  for (int i = 0; i < 4; ++i) {
    const StepLoss la = a.step(), lb = b.step();
    CHECK(la.cls == lb.cls);
    CHECK(la.reg == lb.reg);
    CHECK(std::isfinite(la.cls));
  }
  auto pa = a.model().parameters();
  auto pb = b.model().parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(std::equal(pa[i].tensor->data().begin(), pa[i].tensor->data().end(), pb[i].tensor->data().begin()));
  }

  // scenes without objects give background-only batches
  auto empty = scenes;
  for (auto& s : empty) s.objects.clear();
  Trainer t(cfg, empty);
  const StepLoss l = t.step();
  CHECK(l.foreground == 0);
  CHECK(l.reg == 0.0);
  CHECK(std::isfinite(l.cls));
}

TEST_CASE("checkpoint round trip and manifest agreement") {
  DetectorConfig cfg = small_config();
  cfg.variant = AttentionVariant::kBoth;
  Detector<float> model(cfg);
  model.initialize(17);
  const auto dir = scratch("checkpoint");
  save_checkpoint(dir, model);
  const CheckpointManifest man = read_manifest(dir);
  CHECK(man.format == kCheckpointFormat);
  CHECK(man.precision == 4);
  CHECK(man.config_hash == cfg.hash());
  CHECK(man.parameter_count == model.parameter_count());
  CHECK(man.listed_count() == man.parameter_count);
  CHECK(man.parameter_count == total_parameter_count(cfg));
  CHECK(man.detector_config().hash() == cfg.hash());

  Detector<float> back = load_checkpoint(dir);
  auto pa = model.parameters();
  auto pb = back.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(pa[i].tensor->shape() == pb[i].tensor->shape());
    CHECK(std::equal(pa[i].tensor->data().begin(), pa[i].tensor->data().end(), pb[i].tensor->data().begin()));
  }

  // a tampered manifest is refused
  {
    std::ifstream in(dir / "manifest.txt");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto at = text.find("config.selective_channels=4");
    REQUIRE(at != std::string::npos);
    text.replace(at, 27, "config.selective_channels=5");
    std::ofstream(dir / "manifest.txt") << text;
  }
  CHECK_THROWS_AS(load_checkpoint(dir), std::runtime_error);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_checkpoint(dir), std::runtime_error);
}

TEST_CASE("mAP edge cases and the hand-computed curve") {
  const std::vector<std::vector<GroundTruth>> gts = {{{{0, 0, 10, 10}, 1}, {{20, 20, 30, 30}, 1}}};
  const std::vector<std::vector<Detection>> perfect = {{{1, 0.9, {0, 0, 10, 10}}, {1, 0.8, {20, 20, 30, 30}}}};
  auto p = evaluate_map(perfect, gts, 3);
  CHECK(p.map == 1.0);
  CHECK(p.classes_evaluated == 1);
  CHECK_FALSE(p.ap[2].has_value());

  const std::vector<std::vector<Detection>> none = {{}};
  CHECK(evaluate_map(none, gts, 3).map == 0.0);

  // TP at 0.9, FP at 0.8, TP at 0.7: envelope gives 0.5 * 1 + 0.5 * 2/3
  const std::vector<std::vector<Detection>> three = {
      {{1, 0.9, {0, 0, 10, 10}}, {1, 0.8, {50, 50, 60, 60}}, {1, 0.7, {20, 20, 30, 30}}}};
  CHECK(evaluate_map(three, gts, 3).map == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(average_precision({true, false, true}, 2) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));

  // a gt is matched once; the duplicate is a false positive
  const std::vector<std::vector<Detection>> dup = {{{1, 0.9, {0, 0, 10, 10}}, {1, 0.8, {0, 0, 10, 10}}}};
  CHECK(evaluate_map(dup, gts, 3).map == doctest::Approx(0.5));
}

TEST_CASE("mAP does not depend on detection order") {
  std::mt19937_64 rng(50);
  std::uniform_real_distribution<double> u(0, 100);
  std::vector<std::vector<GroundTruth>> gts(3);
  std::vector<std::vector<Detection>> dets(3);
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) {
      const double x = u(rng), y = u(rng);
      gts[static_cast<std::size_t>(i)].push_back({{x, y, x + 15, y + 15}, 1 + k % 3});
    }
    for (int k = 0; k < 12; ++k) {
      const auto& g = gts[static_cast<std::size_t>(i)][static_cast<std::size_t>(k % 3)];
      const double jx = u(rng) / 20.0;
      // only two distinct scores so ties dominate
      dets[static_cast<std::size_t>(i)].push_back(
          {g.label, k % 2 ? 0.5 : 0.75, {g.box.x1 + jx, g.box.y1, g.box.x2 + jx, g.box.y2}});
    }
  }
  const double base = evaluate_map(dets, gts, 3).map;
  for (int rep = 0; rep < 20; ++rep) {
    for (auto& d : dets) std::shuffle(d.begin(), d.end(), rng);
    CHECK(evaluate_map(dets, gts, 3).map == base);
  }
}
