#ifndef FSN_CHECKPOINT_HPP_
#define FSN_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fsn/detector.hpp"

namespace fsn {

// A checkpoint directory holds model.bin, the parameters as consecutive
// serialized tensors, and manifest.txt:
//
//   format=fsn-checkpoint-1
//   precision=4
//   config_hash=<hex>
//   parameter_count=<n>
//   config.<key>=<value>        (one per config key)
//   param <name> <n> <c> <h> <w>  (one per tensor, file order)
inline constexpr const char* kCheckpointFormat = "fsn-checkpoint-1";

struct ManifestEntry {
  std::string name;
  Shape4 shape;
};

struct CheckpointManifest {
  std::string format;
  int precision = 0;
  std::uint64_t config_hash = 0;
  std::size_t parameter_count = 0;
  std::map<std::string, std::string> config;
  std::vector<ManifestEntry> params;

  /// Sum of the listed shapes.
  std::size_t listed_count() const;
  DetectorConfig detector_config() const;
};

void save_checkpoint(const std::filesystem::path& dir, const Detector<float>& model);
CheckpointManifest read_manifest(const std::filesystem::path& dir);
/// Rebuilds the model from the manifest config and loads every tensor. Throws
/// std::runtime_error on a missing file, a hash mismatch or a shape mismatch.
Detector<float> load_checkpoint(const std::filesystem::path& dir);

std::string hex64(std::uint64_t v);

}  // namespace fsn

#endif  // FSN_CHECKPOINT_HPP_
