#include "fsn/synth.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

namespace fsn {

namespace {

const std::array<std::string, 4> kClassNames = {"background", "tall-bar", "wide-bar",
                                                "square-disk"};

using Rgb = std::array<double, 3>;

struct Canvas {
  int width, height;
  std::vector<double> px;  // interleaved rgb

  void set(int x, int y, const Rgb& c) {
    double* p = &px[(static_cast<std::size_t>(y) * width + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }
};

Rgb scaled(const Rgb& c, double s) { return {c[0] * s, c[1] * s, c[2] * s}; }

bool boxes_touch(const Box& a, const Box& b, double margin) {
  return a.x1 - margin < b.x2 && b.x1 - margin < a.x2 && a.y1 - margin < b.y2 &&
         b.y1 - margin < a.y2;
}

void render(Canvas& canvas, const GroundTruth& obj, const Rgb& fill, int rim) {
  const Rgb rim_color = {0.96, 0.96, 0.96};
  const int x0 = static_cast<int>(obj.box.x1);
  const int y0 = static_cast<int>(obj.box.y1);
  const int x1 = static_cast<int>(obj.box.x2);
  const int y1 = static_cast<int>(obj.box.y2);
  if (obj.label == kSquareDisk) {
    const double cx = 0.5 * (obj.box.x1 + obj.box.x2);
    const double cy = 0.5 * (obj.box.y1 + obj.box.y2);
    const double radius = 0.5 * obj.box.width();
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
        if (d > radius) continue;
        if (d > radius - rim) {
          canvas.set(x, y, rim_color);
        } else {
          const bool check = (((x - x0) / 4) + ((y - y0) / 4)) % 2 == 0;
          canvas.set(x, y, check ? fill : scaled(fill, 0.55));
        }
      }
    }
    return;
  }
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const bool edge = x < x0 + rim || x >= x1 - rim || y < y0 + rim || y >= y1 - rim;
      if (edge) {
        canvas.set(x, y, rim_color);
        continue;
      }
      // tall bars carry horizontal stripes, wide bars vertical ones
      const int phase = obj.label == kTallBar ? (y - y0) / 3 : (x - x0) / 3;
      canvas.set(x, y, phase % 2 == 0 ? fill : scaled(fill, 0.55));
    }
  }
}

Rgb class_color(int label, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> jit(-0.08, 0.08);
  Rgb base;
  switch (label) {
    case kTallBar:
      base = {0.85, 0.30, 0.22};
      break;
    case kWideBar:
      base = {0.25, 0.80, 0.30};
      break;
    default:
      base = {0.25, 0.35, 0.88};
      break;
  }
  for (double& v : base) v = std::clamp(v + jit(rng), 0.0, 1.0);
  return base;
}

std::string format_number(double v) {
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace

const std::string& class_name(int label) {
  if (label < 0 || label > kNumShapeClasses) throw std::out_of_range("class_name: bad label");
  return kClassNames[static_cast<std::size_t>(label)];
}

int class_label(const std::string& name) {
  for (int i = 1; i <= kNumShapeClasses; ++i) {
    if (kClassNames[static_cast<std::size_t>(i)] == name) return i;
  }
  throw std::invalid_argument("unknown class name '" + name + "'");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <typename T>
Tensor4<T> Scene::to_tensor() const {
  Tensor4<T> t({1, 3, static_cast<std::size_t>(height), static_cast<std::size_t>(width)});
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < 3; ++c) t[c * hw + i] = static_cast<T>(rgb[i * 3 + c]) / T(255);
  }
  return t;
}

template Tensor4<float> Scene::to_tensor<float>() const;
template Tensor4<double> Scene::to_tensor<double>() const;

Scene generate_scene(std::uint64_t seed, int first_label, const SynthParams& params) {
  if (params.width < 64 || params.height < 64) {
    throw std::invalid_argument("generate_scene: images must be at least 64x64");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform_int = [&rng](int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };

  Scene scene;
  scene.width = params.width;
  scene.height = params.height;
  scene.seed = seed;

  Canvas canvas{params.width, params.height,
                std::vector<double>(static_cast<std::size_t>(params.width) * params.height * 3)};
  const double base = 0.3 + 0.2 * unit(rng);
  for (double& v : canvas.px) v = base + 0.12 * (unit(rng) - 0.5);

  const int count = uniform_int(params.min_objects, params.max_objects);
  const int span = std::min(params.width, params.height);
  for (int i = 0; i < count; ++i) {
    const int label = i == 0 ? first_label : uniform_int(1, kNumShapeClasses);
    for (int attempt = 0; attempt < 50; ++attempt) {
      int w, h;
      if (label == kSquareDisk) {
        w = h = uniform_int(span * 7 / 32, span * 7 / 16);
      } else {
        const int long_side = uniform_int(span * 9 / 32, span * 9 / 16);
        const int short_side =
            std::max(10, static_cast<int>(std::lround(long_side * (0.3 + 0.3 * unit(rng)))));
        w = label == kTallBar ? short_side : long_side;
        h = label == kTallBar ? long_side : short_side;
      }
      const int x = uniform_int(0, params.width - w);
      const int y = uniform_int(0, params.height - h);
      const Box box{double(x), double(y), double(x + w), double(y + h)};
      const bool clash = std::any_of(scene.objects.begin(), scene.objects.end(),
                                     [&](const GroundTruth& g) { return boxes_touch(g.box, box, 4); });
      if (clash) continue;
      scene.objects.push_back({box, label});
      render(canvas, scene.objects.back(), class_color(label, rng), params.rim);
      break;
    }
  }
  if (scene.objects.empty()) throw std::logic_error("generate_scene: first object never placed");

  scene.rgb.resize(canvas.px.size());
  for (std::size_t i = 0; i < canvas.px.size(); ++i) {
    scene.rgb[i] = static_cast<std::uint8_t>(std::lround(std::clamp(canvas.px[i], 0.0, 1.0) * 255));
  }
  return scene;
}

std::vector<Scene> generate_dataset(std::size_t n_scenes, std::uint64_t seed,
                                    const SynthParams& params) {
  if (n_scenes < 1) throw std::invalid_argument("generate_dataset: need at least one scene");
  std::vector<Scene> scenes;
  scenes.reserve(n_scenes);
  for (std::size_t i = 0; i < n_scenes; ++i) {
    const int first = static_cast<int>(i % kNumShapeClasses) + 1;
    scenes.push_back(generate_scene(derive_seed(seed, i), first, params));
  }
  return scenes;
}

std::vector<Box> generate_proposals(const Scene& scene, std::size_t n, std::uint64_t seed,
                                    const ProposalParams& params) {
  if (n < 1) throw std::invalid_argument("generate_proposals: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double W = scene.width;
  const double H = scene.height;
  std::vector<Box> out;
  out.reserve(n);

  const std::size_t n_jitter =
      scene.objects.empty()
          ? 0
          : std::min(n, static_cast<std::size_t>(std::lround(params.jitter_fraction * n)));
  for (std::size_t i = 0; i < n_jitter; ++i) {
    const Box& g = scene.objects[i % scene.objects.size()].box;
    Box b = g;
    if (params.jitter > 0) {
      for (int attempt = 0; attempt < 20; ++attempt) {
        auto j = [&](double size) { return (2.0 * unit(rng) - 1.0) * params.jitter * size; };
        Box cand{g.x1 + j(g.width()), g.y1 + j(g.height()), g.x2 + j(g.width()),
                 g.y2 + j(g.height())};
        cand = clip_box(cand, W, H);
        if (cand.width() >= params.min_size && cand.height() >= params.min_size) {
          b = cand;
          break;
        }
      }
    }
    out.push_back(b);
  }
  while (out.size() < n) {
    const double max_w = std::min(params.max_random_size, W);
    const double max_h = std::min(params.max_random_size, H);
    const double w = params.min_size + unit(rng) * (max_w - params.min_size);
    const double h = params.min_size + unit(rng) * (max_h - params.min_size);
    const double x = unit(rng) * (W - w);
    const double y = unit(rng) * (H - h);
    out.push_back({x, y, x + w, y + h});
  }
  return out;
}

void write_ppm(const std::filesystem::path& file, const Scene& scene) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << "P6\n" << scene.width << " " << scene.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(scene.rgb.data()),
            static_cast<std::streamsize>(scene.rgb.size()));
  if (!out) throw std::runtime_error("short write to " + file.string());
}

Scene read_ppm(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image " + file.string());
  std::string magic;
  int maxval = 0;
  Scene s;
  in >> magic >> s.width >> s.height >> maxval;
  if (magic != "P6" || maxval != 255 || s.width <= 0 || s.height <= 0) {
    throw std::runtime_error(file.string() + ": not an 8-bit binary PPM");
  }
  in.get();  // single whitespace after the header
  s.rgb.resize(static_cast<std::size_t>(s.width) * s.height * 3);
  in.read(reinterpret_cast<char*>(s.rgb.data()), static_cast<std::streamsize>(s.rgb.size()));
  if (!in) throw std::runtime_error(file.string() + ": truncated pixel data");
  return s;
}

void save_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes,
                  const SynthParams& params, std::uint64_t seed) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream ann(dir / "annotations.txt");
  if (!ann) throw std::runtime_error("cannot write annotations in " + dir.string());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::ostringstream name;
    name << "scene_" << std::setw(5) << std::setfill('0') << i << ".ppm";
    write_ppm(dir / "images" / name.str(), scenes[i]);
    ann << name.str();
    for (const GroundTruth& g : scenes[i].objects) {
      ann << ' ' << class_name(g.label) << ' ' << format_number(g.box.x1) << ' '
          << format_number(g.box.y1) << ' ' << format_number(g.box.x2) << ' '
          << format_number(g.box.y2);
    }
    ann << '\n';
  }
  std::ofstream man(dir / "manifest.txt");
  man << "# synthetic shapes dataset\n"
      << "generator=fsn-synth\n"
      << "version=1\n"
      << "scenes=" << scenes.size() << "\n"
      << "seed=" << seed << "\n"
      << "width=" << params.width << "\n"
      << "height=" << params.height << "\n"
      << "min_objects=" << params.min_objects << "\n"
      << "max_objects=" << params.max_objects << "\n"
      << "rim=" << params.rim << "\n";
  if (!ann || !man) throw std::runtime_error("failed writing dataset metadata to " + dir.string());
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("dataset directory " + dir.string() + " does not exist");
  }
  LoadedDataset ds;
  const auto kv = read_key_values(dir / "manifest.txt");
  auto get = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error("dataset manifest lacks '" + std::string(key) + "'");
    return it->second;
  };
  ds.seed = std::stoull(get("seed"));
  ds.params.width = std::stoi(get("width"));
  ds.params.height = std::stoi(get("height"));
  ds.params.min_objects = std::stoi(get("min_objects"));
  ds.params.max_objects = std::stoi(get("max_objects"));
  ds.params.rim = std::stoi(get("rim"));

  std::ifstream ann(dir / "annotations.txt");
  if (!ann) throw std::runtime_error("cannot open " + (dir / "annotations.txt").string());
  std::string line;
  std::size_t index = 0;
  while (std::getline(ann, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string file;
    is >> file;
    Scene s = read_ppm(dir / "images" / file);
    s.seed = derive_seed(ds.seed, index++);
    std::string cls;
    while (is >> cls) {
      GroundTruth g;
      g.label = class_label(cls);
      if (!(is >> g.box.x1 >> g.box.y1 >> g.box.x2 >> g.box.y2)) {
        throw std::runtime_error("malformed annotation for " + file);
      }
      s.objects.push_back(g);
    }
    ds.files.push_back(file);
    ds.scenes.push_back(std::move(s));
  }
  if (ds.scenes.size() != std::stoull(get("scenes"))) {
    throw std::runtime_error("annotation count does not match manifest scene count");
  }
  return ds;
}

}  // namespace fsn
