#include "fsn/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fsn {

namespace fs = std::filesystem;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::size_t CheckpointManifest::listed_count() const {
  std::size_t n = 0;
  for (const auto& e : params) n += e.shape.numel();
  return n;
}

DetectorConfig CheckpointManifest::detector_config() const {
  DetectorConfig cfg;
  for (const auto& [k, v] : config) {
    if (!cfg.set(k, v)) throw std::runtime_error("checkpoint manifest: unknown config key '" + k + "'");
  }
  return cfg;
}

void save_checkpoint(const fs::path& dir, const Detector<float>& model) {
  fs::create_directories(dir);
  const auto params = model.parameters();
  {
    std::ofstream bin(dir / "model.bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write " + (dir / "model.bin").string());
    for (const auto& p : params) write_tensor(bin, *p.tensor);
  }
  std::ofstream man(dir / "manifest.txt");
  if (!man) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
  const DetectorConfig& cfg = model.config();
  man << "format=" << kCheckpointFormat << "\n";
  man << "precision=4\n";
  man << "config_hash=" << hex64(cfg.hash()) << "\n";
  man << "parameter_count=" << model.parameter_count() << "\n";
  for (const auto& [k, v] : cfg.to_key_values()) man << "config." << k << "=" << v << "\n";
  for (const auto& p : params) {
    const Shape4& s = p.tensor->shape();
    man << "param " << p.name << " " << s.n << " " << s.c << " " << s.h << " " << s.w << "\n";
  }
}

CheckpointManifest read_manifest(const fs::path& dir) {
  const fs::path file = dir / "manifest.txt";
  std::ifstream in(file);
  if (!in) throw std::runtime_error("checkpoint manifest not found: " + file.string());
  CheckpointManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.rfind("param ", 0) == 0) {
      std::istringstream ss(line.substr(6));
      ManifestEntry e;
      if (!(ss >> e.name >> e.shape.n >> e.shape.c >> e.shape.h >> e.shape.w)) {
        throw std::runtime_error(file.string() + ":" + std::to_string(lineno) + ": bad param line");
      }
      m.params.push_back(e);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(file.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "format") m.format = value;
    else if (key == "precision") m.precision = std::stoi(value);
    else if (key == "config_hash") m.config_hash = std::stoull(value, nullptr, 16);
    else if (key == "parameter_count") m.parameter_count = std::stoull(value);
    else if (key.rfind("config.", 0) == 0) m.config[key.substr(7)] = value;
    else throw std::runtime_error(file.string() + ": unknown manifest key '" + key + "'");
  }
  if (m.format != kCheckpointFormat) {
    throw std::runtime_error(file.string() + ": unsupported format '" + m.format + "'");
  }
  return m;
}

Detector<float> load_checkpoint(const fs::path& dir) {
  const CheckpointManifest m = read_manifest(dir);
  const DetectorConfig cfg = m.detector_config();
  if (cfg.hash() != m.config_hash) {
    throw std::runtime_error("checkpoint " + dir.string() + ": config hash mismatch");
  }
  Detector<float> model(cfg);
  auto params = model.parameters();
  if (params.size() != m.params.size()) {
    throw std::runtime_error("checkpoint " + dir.string() + ": manifest lists " +
                             std::to_string(m.params.size()) + " tensors, model has " +
                             std::to_string(params.size()));
  }
  std::ifstream bin(dir / "model.bin", std::ios::binary);
  if (!bin) throw std::runtime_error("checkpoint weights not found: " + (dir / "model.bin").string());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor4<float> t = read_tensor<float>(bin);
    if (params[i].name != m.params[i].name || !(t.shape() == params[i].tensor->shape()) ||
        !(t.shape() == m.params[i].shape)) {
      throw std::runtime_error("checkpoint " + dir.string() + ": tensor " + std::to_string(i) + " (" +
                               params[i].name + ") has shape " + t.shape().str() + ", expected " +
                               params[i].tensor->shape().str());
    }
    *params[i].tensor = std::move(t);
  }
  if (bin.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error("checkpoint " + dir.string() + ": trailing data in model.bin");
  }
  if (model.parameter_count() != m.parameter_count || m.listed_count() != m.parameter_count) {
    throw std::runtime_error("checkpoint " + dir.string() + ": parameter count mismatch");
  }
  return model;
}

}  // namespace fsn
