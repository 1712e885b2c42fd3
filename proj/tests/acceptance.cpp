// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//
//   fsn_acceptance [--only NAME[,NAME...]] [--ablation-iterations N]
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fsn/ablation.hpp"
#include "fsn/checkpoint.hpp"
#include "fsn/grad_suite.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace fsn;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("fsn_accept_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& f) {
  std::ifstream in(f, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Box random_box(std::mt19937_64& rng, double extent) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double w = 0.5 + u(rng) * (extent - 0.5);
  const double h = 0.5 + u(rng) * (extent - 0.5);
  const double x = u(rng) * (extent - w);
  const double y = u(rng) * (extent - h);
  return {x, y, x + w, y + h};
}

template <typename T>
bool same_bits(const Tensor4<T>& a, const Tensor4<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0;
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  GradSuiteOptions opt;
  const GradReport report = run_grad_suite(opt);
  const double secs = seconds_since(t0);
  std::fputs(report.text().c_str(), stdout);
  std::size_t floor_limited = 0, coords = 0;
  for (const auto& e : report.entries) {
    floor_limited += e.floor_limited;
    coords += e.coords;
  }
  Outcome o;
  o.pass = report.passed() && secs < 120.0 && opt.seeds >= 20;
  o.detail = fmt("%zu checks, %d seeds, %zu coords, %zu at the rounding floor, %.1fs", report.entries.size(),
                 opt.seeds, coords, floor_limited, secs);
  return o;
}

Outcome pooling_oracle() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> side(4, 20), cs(1, 5), bins(1, 7), imgs(1, 3), count(1, 6);
  SelectiveGeometry g;
  g.spatial_stride = 4.0;
  std::size_t values = 0, mismatches = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    g.pooled_h = bins(rng);
    g.pooled_w = bins(rng);
    const std::size_t n = static_cast<std::size_t>(imgs(rng));
    const std::size_t h = static_cast<std::size_t>(side(rng)), w = static_cast<std::size_t>(side(rng));
    const int c = cs(rng);
    std::vector<RoI> rois;
    const int nr = count(rng);
    for (int i = 0; i < nr; ++i)
      rois.push_back({static_cast<int>(rng() % n), random_box(rng, 4.0 * static_cast<double>(std::max(h, w)))});
    for (SelectMode mode : {SelectMode::kSubRegion, SelectMode::kAspect}) {
      AttentionBank<float> bank;
      bank.groups = mode == SelectMode::kSubRegion ? g.grid.rows * g.grid.cols : 3;
      bank.channels_per_group = c;
      bank.values = oracle::random_tensor<float>(
          {n, static_cast<std::size_t>(bank.groups * c), h, w}, rng);
      const auto map = selective_roi_pool(bank, std::span<const RoI>(rois), mode, g);
      const auto ref = oracle::selective_pool(bank, rois, mode, g);
      if (ref.values.size() != map.values.size()) return {false, "size mismatch"};
      for (std::size_t i = 0; i < ref.values.size(); ++i) {
        ++values;
        if (static_cast<double>(map.values[i]) != ref.values[i] || map.provenance[i] != ref.source[i]) ++mismatches;
      }
    }
  }
  return {mismatches == 0, fmt("1000 pairs x 2 modes, %zu values, %zu mismatches", values, mismatches)};
}

Outcome shifted_conv_identity() {
  std::mt19937_64 rng(7);
  int zero_fail = 0, interior_fail = 0;
  std::size_t interior = 0;
  for (int rep = 0; rep < 20; ++rep) {
    auto x = oracle::random_tensor<float>({2, 8, 11, 13}, rng);
    auto p = make_conv<float>(6, 8, 3, 1, 1);
    p.kernel = oracle::random_tensor<float>(p.kernel.shape(), rng);
    p.bias = oracle::random_tensor<float>(p.bias.shape(), rng);
    zero_fail += !same_bits(shifted_conv2d(x, p), conv2d(x, p));
    auto xd = oracle::random_tensor<double>({1, 3, 9, 9}, rng);
    auto pd = make_conv<double>(2, 3, 3, 1, 1);
    pd.kernel = oracle::random_tensor<double>(pd.kernel.shape(), rng);
    zero_fail += !same_bits(shifted_conv2d(xd, pd), conv2d(xd, pd));
  }
  const auto table = subregion_offsets(SubRegionGrid{}, ShiftDirection::kCenter);
  if (table.size() != 9) return {false, "offset table does not have 9 entries"};
  for (const Offset2 off : table) {
    auto x = oracle::random_tensor<float>({1, 5, 12, 14}, rng);
    auto p = make_conv<float>(4, 5, 3, 1, 1, off);
    p.kernel = oracle::random_tensor<float>(p.kernel.shape(), rng);
    p.bias = oracle::random_tensor<float>(p.bias.shape(), rng);
    auto plain = p;
    plain.offset = {};
    const auto shifted = shifted_conv2d(x, p);
    const auto ref = conv2d(oracle::translate(x, off.dr, off.dc), plain);
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t i = 2; i + 2 < 12; ++i)
        for (std::size_t j = 2; j + 2 < 14; ++j) {
          ++interior;
          interior_fail += shifted.at(0, c, i, j) != ref.at(0, c, i, j);
        }
  }
  return {zero_fail == 0 && interior_fail == 0,
          fmt("zero offset: %d mismatching runs of 40; 9 offsets: %d of %zu interior cells differ", zero_fail,
              interior_fail, interior)};
}

Outcome index_arithmetic() {
  const DetectorConfig cfg;
  const int cs = cfg.selective_channels;
  std::mt19937_64 rng(99);
  auto feat = oracle::random_tensor<float>({2, static_cast<std::size_t>(cfg.backbone_channels), 16, 16}, rng);
  const auto table = subregion_offsets(SubRegionGrid{}, ShiftDirection::kCenter);
  auto att = make_subregion_attention<float>(feat.c(), static_cast<std::size_t>(cs), SubRegionGrid{}, table);
  for (auto& conv : att.convs) conv.kernel = oracle::random_tensor<float>(conv.kernel.shape(), rng, 0.1);
  const auto sb = build_subregion_bank(feat, att);
  auto asp = make_conv<float>(static_cast<std::size_t>(3 * cs), feat.c(), 1, 1, 0);
  asp.kernel = oracle::random_tensor<float>(asp.kernel.shape(), rng, 0.1);
  const auto ab = build_aspect_bank(feat, asp, 3);

  bool sizes = sb.values.c() == 360 && sb.groups == 9 && ab.values.c() == 120 && ab.groups == 3;
  const SelectiveGeometry g = cfg.selective_geometry();
  std::size_t checked = 0, bad = 0;
  std::vector<RoI> rois;
  for (int i = 0; i < 200; ++i) rois.push_back({i % 2, random_box(rng, 64.0)});
  for (auto [bank, mode] : {std::pair{&sb, SelectMode::kSubRegion}, std::pair{&ab, SelectMode::kAspect}}) {
    const auto map = selective_roi_pool(*bank, std::span<const RoI>(rois), mode, g);
    const std::size_t plane = bank->values.h() * bank->values.w();
    const std::size_t ph = static_cast<std::size_t>(g.pooled_h), pw = static_cast<std::size_t>(g.pooled_w);
    for (std::size_t r = 0; r < rois.size(); ++r)
      for (std::size_t c = 0; c < static_cast<std::size_t>(cs); ++c)
        for (std::size_t m = 0; m < ph; ++m)
          for (std::size_t n = 0; n < pw; ++n) {
            const std::size_t i = map.values.offset(r, c, m, n);
            const std::int64_t src = map.provenance[i];
            const std::size_t img = static_cast<std::size_t>(src) / (bank->values.c() * plane);
            const std::size_t ch = static_cast<std::size_t>(src) / plane % bank->values.c();
            const int k = map.group[(r * ph + m) * pw + n];
            const std::size_t lo = static_cast<std::size_t>(k - 1) * static_cast<std::size_t>(cs);
            ++checked;
            // channel c of the bin comes from channel c of slice [(k-1)C_s, kC_s) of its own image
            bad += !(k >= 1 && k <= bank->groups && ch >= lo && ch < lo + static_cast<std::size_t>(cs) &&
                     ch - lo == c && img == static_cast<std::size_t>(rois[r].image_index) &&
                     bank->values[static_cast<std::size_t>(src)] == map.values[i]);
          }
  }
  return {sizes && bad == 0,
          fmt("banks %zu and %zu channels; %zu provenance records, %zu outside their slice", sb.values.c(),
              ab.values.c(), checked, bad)};
}

std::string manifest_mismatch(const fs::path& dir, const Detector<float>& model) {
  const CheckpointManifest m = read_manifest(dir);
  const std::size_t counted = model.parameter_count();
  const std::size_t closed = total_parameter_count(model.config());
  if (m.parameter_count != counted || m.listed_count() != counted || closed != counted) {
    return fmt("%s: manifest %zu, listed %zu, counter %zu, closed form %zu", dir.filename().c_str(),
               m.parameter_count, m.listed_count(), counted, closed);
  }
  const Detector<float> back = load_checkpoint(dir);
  if (back.parameter_count() != counted) return dir.filename().string() + ": reload count differs";
  return "";
}

// checkpoints written during the run, checked by parameter_count()
std::vector<fs::path> g_checkpoints;

Outcome parameter_count() {
  const DetectorConfig defaults;
  const std::size_t first_fc = head_first_fc_parameter_count(defaults);
  std::string problems;
  int saved = 0;
  for (AttentionVariant v : kAllVariants) {
    DetectorConfig cfg;
    cfg.variant = v;
    Detector<float> model(cfg);
    model.initialize(cfg.seed);
    const fs::path dir = scratch("count_" + to_string(v));
    save_checkpoint(dir, model);
    ++saved;
    problems += manifest_mismatch(dir, model);
    fs::remove_all(dir);
  }
  for (const fs::path& dir : g_checkpoints) {
    ++saved;
    problems += manifest_mismatch(dir, load_checkpoint(dir));
  }
  return {first_fc == 980500 && problems.empty(),
          fmt("head first fc %zu (expect 980500); %d checkpoints checked%s%s", first_fc, saved,
              problems.empty() ? "" : "; ", problems.c_str())};
}

struct SmokeRun {
  std::vector<StepLoss> losses;
  double map = 0;
  double seconds = 0;
};

constexpr std::uint64_t kSmokeTrainSeed = 0;
constexpr std::uint64_t kSmokeTestSeed = 12345;

Outcome smoke() {
  const auto t0 = Clock::now();
  const DetectorConfig cfg;
  const auto train = generate_dataset(200, kSmokeTrainSeed);
  const auto test = generate_dataset(100, kSmokeTestSeed);
  Trainer trainer(cfg, train);
  const auto losses = trainer.run(200, [&](int step, const StepLoss& l) {
    if (step % 20 == 0) std::printf("  smoke step %3d  cls %.4f  reg %.4f  (%.0fs)\n", step, l.cls, l.reg, seconds_since(t0));
    std::fflush(stdout);
  });
  const MapResult m = evaluate_scenes(trainer.model(), test);
  const double secs = seconds_since(t0);
  const double train_map = evaluate_scenes(trainer.model(), train).map;
  const fs::path dir = scratch("smoke_checkpoint");
  save_checkpoint(dir, trainer.model());
  g_checkpoints.push_back(dir);

  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += losses[static_cast<std::size_t>(i)].cls / 10;
    tail += losses[losses.size() - 10 + static_cast<std::size_t>(i)].cls / 10;
  }
  const double drop = 1.0 - tail / head;
  return {drop >= 0.5 && m.map >= 0.80 && secs <= 600.0,
          fmt("cls loss %.4f (steps 1-10) -> %.4f (steps 191-200), drop %.0f%%; held-out mAP@0.5 %.4f "
              "(training set %.4f); %.0fs",
              head, tail, 100 * drop, m.map, train_map, secs)};
}

int g_ablation_iterations = DetectorConfig{}.iterations;

Outcome ablation() {
  const auto t0 = Clock::now();
  AblationOptions opt;
  opt.base.iterations = g_ablation_iterations;
  opt.seeds = 3;
  const auto rows = run_ablation(opt, [&](const std::string& msg) {
    std::printf("  %s  (%.0fs)\n", msg.c_str(), seconds_since(t0));
    std::fflush(stdout);
  });
  std::fputs(format_ablation_text(rows, opt).c_str(), stdout);
  const double full = find_row(rows, AttentionVariant::kBoth, ShiftDirection::kCenter).mean_map;
  const double base = find_row(rows, AttentionVariant::kNone, ShiftDirection::kCenter).mean_map;
  return {full >= base - 0.02,
          fmt("full %.4f vs baseline %.4f over 3 seeds (%d iterations per run); %.0fs", full, base,
              opt.base.iterations, seconds_since(t0))};
}

struct RunOutputs {
  std::vector<std::uint8_t> pixels;
  std::string model_bin, manifest;
  std::vector<double> losses;
  std::string detections;
  std::string grad_text;
};

RunOutputs deterministic_run(const fs::path& dir) {
  RunOutputs out;
  const auto scenes = generate_dataset(30, 77);
  for (const auto& s : scenes) out.pixels.insert(out.pixels.end(), s.rgb.begin(), s.rgb.end());
  DetectorConfig cfg;
  cfg.seed = 77;
  Trainer trainer(cfg, scenes);
  for (const StepLoss& l : trainer.run(8)) {
    out.losses.push_back(l.cls);
    out.losses.push_back(l.reg);
  }
  save_checkpoint(dir, trainer.model());
  out.model_bin = slurp(dir / "model.bin");
  out.manifest = slurp(dir / "manifest.txt");
  std::vector<std::vector<Detection>> dets;
  evaluate_scenes(load_checkpoint(dir), std::span<const Scene>(scenes).first(5), &dets);
  std::ostringstream os;
  os.precision(17);
  for (const auto& img : dets)
    for (const auto& d : img) os << d.label << " " << d.score << " " << d.box.x1 << " " << d.box.y1 << "\n";
  out.detections = os.str();
  GradReport r;
  run_grad_case("micro_pipeline", 3, false, GradSuiteOptions{}, r);
  out.grad_text = r.text();
  return out;
}

Outcome determinism() {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  const RunOutputs x = deterministic_run(a), y = deterministic_run(b);
  g_checkpoints.push_back(a);
  std::string diff;
  if (x.pixels != y.pixels) diff += " dataset";
  if (x.losses != y.losses) diff += " losses";
  if (x.model_bin != y.model_bin) diff += " weights";
  if (x.manifest != y.manifest) diff += " manifest";
  if (x.detections != y.detections) diff += " detections";
  if (x.grad_text != y.grad_text) diff += " gradcheck";
  fs::remove_all(b);
  return {diff.empty(), diff.empty() ? fmt("dataset, 8 training steps, checkpoint bytes (%zu), detections and a "
                                           "gradient check identical across two runs",
                                           x.model_bin.size())
                                     : "differs:" + diff};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<std::string> only;
  app.add_option("--only", only, "run only these checks")->delimiter(',');
  app.add_option("--ablation-iterations", g_ablation_iterations, "training steps per ablation run");
  CLI11_PARSE(app, argc, argv);

  // smoke and determinism run before the parameter check so their checkpoints are included
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"gradient-suite", gradient_suite},
      {"pooling-oracle", pooling_oracle},
      {"shifted-conv-identity", shifted_conv_identity},
      {"index-arithmetic", index_arithmetic},
      {"smoke-training", smoke},
      {"determinism", determinism},
      {"parameter-count", parameter_count},
      {"ablation", ablation},
  };
  int failed = 0;
  std::vector<std::string> lines;
  for (const auto& [name, run] : checks) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    std::printf("== %s\n", name.c_str());
    std::fflush(stdout);
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    lines.push_back(fmt("%s %-22s %s", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str()));
    std::printf("%s\n\n", lines.back().c_str());
    std::fflush(stdout);
  }
  for (const fs::path& dir : g_checkpoints) fs::remove_all(dir);
  std::printf("== summary\n");
  for (const auto& l : lines) std::printf("%s\n", l.c_str());
  return failed == 0 ? 0 : 1;
}
