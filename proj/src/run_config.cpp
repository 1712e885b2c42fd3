#include "fsn/run_config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fsn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  try {
    if (detector.set(key, value)) return;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (key == "data_dir") data_dir = value;
  else if (key == "out_dir") out_dir = value;
  else if (key == "checkpoint") checkpoint = value;
  else if (key == "image") image = value;
  else if (key == "scenes") scenes = parse_int(key, value);
  else if (key == "log_every") log_every = parse_int(key, value);
  else if (key == "ablation_seeds") ablation_seeds = parse_int(key, value);
  else if (key == "ablation_train_scenes") ablation_train_scenes = parse_int(key, value);
  else if (key == "ablation_test_scenes") ablation_test_scenes = parse_int(key, value);
  else if (key == "gradcheck_seeds") gradcheck_seeds = parse_int(key, value);
  else if (key == "gradcheck_max_coords") gradcheck_max_coords = parse_int(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::load_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      set_assignment(line);
    } catch (const ConfigError& e) {
      throw ConfigError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::apply_environment() {
  if (const char* s = std::getenv("FSN_SEED"); s != nullptr && *s != '\0') {
    try {
      set("seed", s);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("FSN_SEED: ") + e.what());
    }
  }
}

std::map<std::string, std::string> RunConfig::to_key_values() const {
  auto kv = detector.to_key_values();
  kv["data_dir"] = data_dir;
  kv["out_dir"] = out_dir;
  kv["checkpoint"] = checkpoint;
  kv["image"] = image;
  kv["scenes"] = std::to_string(scenes);
  kv["log_every"] = std::to_string(log_every);
  kv["ablation_seeds"] = std::to_string(ablation_seeds);
  kv["ablation_train_scenes"] = std::to_string(ablation_train_scenes);
  kv["ablation_test_scenes"] = std::to_string(ablation_test_scenes);
  kv["gradcheck_seeds"] = std::to_string(gradcheck_seeds);
  kv["gradcheck_max_coords"] = std::to_string(gradcheck_max_coords);
  return kv;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : to_key_values()) os << k << "=" << v << "\n";
  return os.str();
}

void RunConfig::write_effective(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / kEffectiveConfigFile);
  if (!out) throw std::runtime_error("cannot write " + (dir / kEffectiveConfigFile).string());
  out << to_text();
}

std::filesystem::path RunConfig::checkpoint_dir() const {
  return checkpoint.empty() ? std::filesystem::path(out_dir) : std::filesystem::path(checkpoint);
}

}  // namespace fsn
