#ifndef FSN_RUN_CONFIG_HPP_
#define FSN_RUN_CONFIG_HPP_

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "fsn/detector.hpp"

namespace fsn {

/// Bad config file, unknown key or malformed value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything a command needs: the detector settings plus paths and
/// command-specific options. Text form is one key=value per line; '#' starts a
/// comment.
struct RunConfig {
  DetectorConfig detector;

  std::string data_dir;    // dataset read by train/eval, written by gen-data
  std::string out_dir;     // where outputs and the effective config go
  std::string checkpoint;  // checkpoint dir for eval/infer; defaults to out_dir
  std::string image;       // infer input (.ppm)
  int scenes = 200;        // gen-data scene count
  int log_every = 20;
  int ablation_seeds = 3;
  int ablation_train_scenes = 200;
  int ablation_test_scenes = 100;
  int gradcheck_seeds = 20;
  int gradcheck_max_coords = 32;

  /// Throws ConfigError for an unknown key or a bad value.
  void set(const std::string& key, const std::string& value);
  /// Accepts "key=value".
  void set_assignment(const std::string& assignment);
  void load_file(const std::filesystem::path& file);
  /// FSN_SEED, when set, replaces the seed.
  void apply_environment();

  std::map<std::string, std::string> to_key_values() const;
  std::string to_text() const;
  /// Writes <dir>/effective_config.txt, which load_file() accepts back.
  void write_effective(const std::filesystem::path& dir) const;

  std::filesystem::path checkpoint_dir() const;
};

inline constexpr const char* kEffectiveConfigFile = "effective_config.txt";

}  // namespace fsn

#endif  // FSN_RUN_CONFIG_HPP_
