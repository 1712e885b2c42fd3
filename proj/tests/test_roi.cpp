#include <doctest.h>

#include <cmath>
#include <random>

#include "fsn/roi.hpp"
#include "oracles.hpp"

using namespace fsn;

namespace {

Box random_box(std::mt19937_64& rng, double extent, double min_side = 1.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double w = min_side + u(rng) * (extent - min_side);
  const double h = min_side + u(rng) * (extent - min_side);
  const double x = u(rng) * (extent - w);
  const double y = u(rng) * (extent - h);
  return {x, y, x + w, y + h};
}

}  // namespace

TEST_CASE("aspect groups") {
  CHECK(aspect_group({0, 0, 50, 100}) == 1);
  CHECK(aspect_group({0, 0, 100, 100}) == 2);
  CHECK(aspect_group({0, 0, 260, 100}) == 3);
  // boundary ratios fall in the middle group
  CHECK(aspect_group({0, 0, 75, 100}) == 2);
  CHECK(aspect_group({0, 0, 130, 100}) == 2);
  CHECK(aspect_group({0, 0, 74.9, 100}) == 1);
  CHECK(aspect_group({0, 0, 130.1, 100}) == 3);
}

TEST_CASE("bin to sub-region mapping") {
  SubRegionGrid g;
  for (int m = 1; m <= 3; ++m)
    for (int n = 1; n <= 3; ++n) CHECK(bin_subregion_index(m, n, 3, 3, g) == (m - 1) * 3 + n);

  const int row7[8] = {0, 1, 1, 2, 2, 2, 3, 3};
  for (int m = 1; m <= 7; ++m)
    for (int n = 1; n <= 7; ++n)
      CHECK(bin_subregion_index(m, n, 7, 7, g) == (row7[m] - 1) * 3 + row7[n]);

  const int row6[7] = {0, 1, 1, 2, 2, 3, 3};
  for (int m = 1; m <= 6; ++m)
    for (int n = 1; n <= 6; ++n)
      CHECK(bin_subregion_index(m, n, 6, 6, g) == (row6[m] - 1) * 3 + row6[n]);

  CHECK_THROWS_AS(bin_subregion_index(0, 1, 7, 7, g), std::out_of_range);
  CHECK_THROWS_AS(bin_subregion_index(1, 8, 7, 7, g), std::out_of_range);
}

TEST_CASE("bin mapping agrees with the overlap-area oracle and is monotone") {
  for (int rows = 1; rows <= 4; ++rows)
    for (int cols = 1; cols <= 4; ++cols) {
      SubRegionGrid g{rows, cols};
      for (int h = 1; h <= 9; ++h)
        for (int w = 1; w <= 9; ++w)
          for (int m = 1; m <= h; ++m)
            for (int n = 1; n <= w; ++n) {
              const int k = bin_subregion_index(m, n, h, w, g);
              CHECK(k == oracle::majority_region(m, n, h, w, rows, cols));
              if (m > 1) CHECK((k - 1) / cols >= (bin_subregion_index(m - 1, n, h, w, g) - 1) / cols);
              if (n > 1) CHECK((k - 1) % cols >= (bin_subregion_index(m, n - 1, h, w, g) - 1) % cols);
            }
    }
}

TEST_CASE("sub-region rectangles tile the RoI exactly") {
  std::mt19937_64 rng(20);
  for (int rep = 0; rep < 100; ++rep) {
    const Box roi = random_box(rng, 128.0);
    for (int rows : {1, 2, 3, 5})
      for (int cols : {1, 3, 4}) {
        SubRegionGrid g{rows, cols};
        double area = 0;
        for (int k = 1; k <= g.count(); ++k) {
          const Box r = g.rect(k, roi);
          CHECK(r.valid());
          area += r.area();
          for (int j = k + 1; j <= g.count(); ++j) {
            const Box s = g.rect(j, roi);
            CHECK(oracle::overlap(r.x1, r.x2, s.x1, s.x2) * oracle::overlap(r.y1, r.y2, s.y1, s.y2) == 0.0);
          }
        }
        CHECK(area == doctest::Approx(roi.area()).epsilon(1e-12));
        // outer edges coincide with the RoI and neighbours share edges
        CHECK(g.rect(1, roi).x1 == roi.x1);
        CHECK(g.rect(1, roi).y1 == roi.y1);
        CHECK(g.rect(g.count(), roi).x2 == roi.x2);
        CHECK(g.rect(g.count(), roi).y2 == roi.y2);
        for (int k = 1; k <= g.count(); ++k) {
          if (k % cols != 0) CHECK(g.rect(k, roi).x2 == g.rect(k + 1, roi).x1);
          if (k + cols <= g.count()) CHECK(g.rect(k, roi).y2 == g.rect(k + cols, roi).y1);
        }
      }
  }
}

TEST_CASE("RoI pooling simple cases") {
  std::mt19937_64 rng(21);
  auto f = oracle::random_tensor<double>({1, 3, 8, 8}, rng);
  // one feature cell at stride 4: image pixels [8, 12) map to cell 2
  const RoI one{0, {8.5, 8.5, 11.5, 11.5}};
  auto res = roi_max_pool(f, std::span<const RoI>(&one, 1), 7, 7, 4.0);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t m = 0; m < 7; ++m)
      for (std::size_t n = 0; n < 7; ++n) CHECK(res.pooled.at(0, c, m, n) == f.at(0, c, 2, 2));

  Tensor4<float> flat({2, 2, 6, 6}, 0.75f);
  std::vector<RoI> rois = {{0, {0, 0, 24, 24}}, {1, {3, 5, 17, 9}}};
  auto r2 = roi_max_pool(flat, std::span<const RoI>(rois), 3, 3, 4.0);
  for (float v : r2.pooled.data()) CHECK(v == 0.75f);

  // degenerate boxes clamp to a single cell instead of failing
  const RoI tiny{0, {100, 100, 100.5, 100.5}};
  auto r3 = roi_max_pool(f, std::span<const RoI>(&tiny, 1), 2, 2, 4.0);
  CHECK(r3.pooled.at(0, 0, 0, 0) == f.at(0, 0, 7, 7));
}

TEST_CASE("RoI pooling equals the brute-force scan") {
  std::mt19937_64 rng(22);
  for (int rep = 0; rep < 200; ++rep) {
    auto f = oracle::random_tensor<double>({2, 2, 11, 13}, rng);
    std::vector<RoI> rois;
    for (int i = 0; i < 3; ++i) rois.push_back({i % 2, random_box(rng, 52.0, 0.5)});
    for (auto [ph, pw] : {std::pair{7, 7}, std::pair{3, 2}, std::pair{1, 1}}) {
      auto res = roi_max_pool(f, std::span<const RoI>(rois), ph, pw, 4.0);
      auto ref = oracle::roi_pool(f, rois, ph, pw, 4.0);
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(res.pooled[i] == ref[i]);
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(f[static_cast<std::size_t>(res.argmax[i])] == res.pooled[i]);
    }
  }
}

TEST_CASE("RoI pooling backward conserves gradient mass") {
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 50; ++rep) {
    // integer upstream gradients keep the sums exact
    auto f = oracle::random_tensor<float>({1, 4, 9, 9}, rng);
    std::vector<RoI> rois = {{0, random_box(rng, 36.0)}, {0, random_box(rng, 36.0)}};
    auto res = roi_max_pool(f, std::span<const RoI>(rois), 7, 7, 4.0);
    Tensor4<float> g(res.pooled.shape());
    std::uniform_int_distribution<int> d(-4, 4);
    for (auto& v : g.data()) v = static_cast<float>(d(rng));
    auto df = roi_max_pool_backward(f.shape(), res.argmax, g);
    CHECK(df.sum() == g.sum());
    auto dz = roi_max_pool_backward(f.shape(), res.argmax, Tensor4<float>(g.shape()));
    for (float v : dz.data()) CHECK(v == 0.0f);
  }
}

TEST_CASE("IoU") {
  const Box a{0, 0, 10, 10};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, {20, 20, 30, 30}) == 0.0);
  CHECK(iou(a, {10, 0, 20, 10}) == 0.0);
  CHECK(iou(a, {5, 0, 15, 10}) == doctest::Approx(50.0 / 150.0));
  std::mt19937_64 rng(24);
  for (int rep = 0; rep < 500; ++rep) {
    const Box p = random_box(rng, 64.0), q = random_box(rng, 64.0);
    CHECK(iou(p, q) == doctest::Approx(oracle::box_iou(p, q)).epsilon(1e-12));
    CHECK(iou(p, q) == iou(q, p));
    CHECK(iou(p, q) >= 0.0);
    CHECK(iou(p, q) <= 1.0);
  }
}

TEST_CASE("NMS small cases") {
  std::vector<Box> boxes = {{0, 0, 10, 10}, {0, 0, 10, 10}};
  std::vector<double> scores = {0.9, 0.8};
  auto kept = nms(boxes, scores, 0.3);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0] == 0);
  CHECK(nms(std::span<const Box>(), std::span<const double>(), 0.3).empty());
  std::vector<double> bad = {0.1};
  CHECK_THROWS_AS(nms(boxes, bad, 0.3), std::invalid_argument);
}

TEST_CASE("NMS matches the quadratic reference and keeps an antichain") {
  std::mt19937_64 rng(25);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (int i = 0; i < 50; ++i) {
      boxes.push_back(random_box(rng, 100.0, 5.0));
      // coarse scores so that ties occur
      scores.push_back(std::round(u(rng) * 20.0) / 20.0);
    }
    for (double thr : {0.3, 0.5, 0.7}) {
      auto kept = nms(boxes, scores, thr);
      CHECK(kept == oracle::nms(boxes, scores, thr));
      for (std::size_t i = 0; i < kept.size(); ++i)
        for (std::size_t j = i + 1; j < kept.size(); ++j) CHECK(iou(boxes[kept[i]], boxes[kept[j]]) <= thr);
    }
  }
}

TEST_CASE("box delta round trip") {
  std::mt19937_64 rng(26);
  for (int rep = 0; rep < 1000; ++rep) {
    const Box gt = random_box(rng, 128.0, 2.0);
    const Box ref = random_box(rng, 128.0, 2.0);
    const Box back = decode_delta(encode_delta(gt, ref), ref);
    CHECK(std::fabs(back.x1 - gt.x1) <= 1e-6 * std::max(1.0, std::fabs(gt.x1)));
    CHECK(std::fabs(back.y1 - gt.y1) <= 1e-6 * std::max(1.0, std::fabs(gt.y1)));
    CHECK(std::fabs(back.x2 - gt.x2) <= 1e-6 * std::fabs(gt.x2));
    CHECK(std::fabs(back.y2 - gt.y2) <= 1e-6 * std::fabs(gt.y2));
  }
  const BoxDelta zero = encode_delta({1, 2, 5, 9}, {1, 2, 5, 9});
  CHECK(zero.tx == 0.0);
  CHECK(zero.ty == 0.0);
  CHECK(zero.tw == 0.0);
  CHECK(zero.th == 0.0);
}

TEST_CASE("clip_box keeps boxes inside the image") {
  const Box c = clip_box({-5, -3, 140, 60}, 128, 128);
  CHECK(c.x1 == 0);
  CHECK(c.y1 == 0);
  CHECK(c.x2 == 128);
  CHECK(c.y2 == 60);
}

TEST_CASE("RoI sampling labels") {
  std::mt19937_64 rng(27);
  const std::vector<GroundTruth> gts = {{{10, 10, 50, 50}, 2}, {{60, 60, 100, 120}, 3}};
  const std::vector<Box> props = {{60, 60, 100, 120}, {10, 10, 50, 50}};
  auto batch = sample_rois(props, gts, {}, rng);
  REQUIRE(batch.size() == 2);
  for (const auto& s : batch) {
    CHECK(s.max_iou == 1.0);
    CHECK(s.label == gts[static_cast<std::size_t>(s.gt_index)].label);
  }

  // IoU 0.3 with the only gt: [0,10]x[0,10] against a shifted copy
  const double shift = 10.0 * (1.0 - 0.6 / 1.3);  // inter / union = 0.3
  const std::vector<GroundTruth> one = {{{0, 0, 10, 10}, 1}};
  const std::vector<Box> p3 = {{shift, 0, 10 + shift, 10}};
  auto b3 = sample_rois(p3, one, {}, rng);
  REQUIRE(b3.size() == 1);
  CHECK(b3[0].max_iou == doctest::Approx(0.3));
  CHECK(b3[0].label == 0);

  // no gt at all: legal, everything background
  auto b4 = sample_rois(p3, std::span<const GroundTruth>(), {}, rng);
  CHECK(b4[0].label == 0);
}

TEST_CASE("RoI sampling caps foreground by availability") {
  std::mt19937_64 rng(28);
  const std::vector<GroundTruth> gts = {{{0, 0, 20, 20}, 1}};
  std::vector<Box> props;
  for (int i = 0; i < 20; ++i) props.push_back({0, 0, 20.0 - 0.1 * i, 20});  // IoU >= 0.9
  for (int i = 0; i < 380; ++i) props.push_back({40.0 + i % 50, 40, 60.0 + i % 50, 60});
  auto batch = sample_rois(props, gts, {256, 0.25, 0.5}, rng);
  std::size_t fg = 0, bg = 0;
  for (const auto& s : batch) (s.label > 0 ? fg : bg)++;
  CHECK(fg == 20);
  CHECK(bg == 236);
  // foreground comes first
  for (std::size_t i = 0; i < batch.size(); ++i) CHECK((batch[i].label > 0) == (i < 20));

  // plenty of foreground: quota of 64
  std::vector<Box> many(300, Box{0, 0, 20, 20});
  many.insert(many.end(), props.begin() + 20, props.end());
  auto b2 = sample_rois(many, gts, {256, 0.25, 0.5}, rng);
  std::size_t fg2 = 0;
  for (const auto& s : b2) fg2 += s.label > 0;
  CHECK(fg2 == 64);
  CHECK(b2.size() == 256);
}
