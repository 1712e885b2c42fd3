#ifndef FSN_SYNTH_HPP_
#define FSN_SYNTH_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fsn/roi.hpp"
#include "fsn/tensor.hpp"

namespace fsn {

// label 1..3; 0 is background
inline constexpr int kTallBar = 1;
inline constexpr int kWideBar = 2;
inline constexpr int kSquareDisk = 3;
inline constexpr int kNumShapeClasses = 3;

const std::string& class_name(int label);
int class_label(const std::string& name);

struct Scene {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, row-major, height * width * 3
  std::vector<GroundTruth> objects;
  std::uint64_t seed = 0;

  /// (1, 3, height, width) with values in [0, 1].
  template <typename T>
  Tensor4<T> to_tensor() const;
};

struct SynthParams {
  int width = 128;
  int height = 128;
  int min_objects = 1;
  int max_objects = 3;
  int rim = 2;
};

Scene generate_scene(std::uint64_t seed, int first_label, const SynthParams& params = {});

/// Scene i uses a seed derived from (seed, i); its first object cycles through
/// the classes so the set stays balanced.
std::vector<Scene> generate_dataset(std::size_t n_scenes, std::uint64_t seed,
                                    const SynthParams& params = {});

struct ProposalParams {
  double jitter = 0.25;          // per-edge jitter, fraction of the gt size
  double jitter_fraction = 0.5;  // share of proposals derived from gt boxes
  double min_size = 4.0;
  double max_random_size = 96.0;
};

/// Mixture of jittered ground-truth boxes and uniform random boxes, clipped to
/// the image. With zero jitter the first proposals are the gt boxes themselves.
std::vector<Box> generate_proposals(const Scene& scene, std::size_t n, std::uint64_t seed,
                                    const ProposalParams& params = {});

/// Writes images/<name>.ppm (binary P6), annotations.txt and manifest.txt.
void save_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes,
                  const SynthParams& params, std::uint64_t seed);

struct LoadedDataset {
  std::vector<Scene> scenes;
  std::vector<std::string> files;
  SynthParams params;
  std::uint64_t seed = 0;
};

LoadedDataset load_dataset(const std::filesystem::path& dir);

void write_ppm(const std::filesystem::path& file, const Scene& scene);
Scene read_ppm(const std::filesystem::path& file);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace fsn

#endif  // FSN_SYNTH_HPP_
