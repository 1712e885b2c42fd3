#ifndef FSN_ABLATION_HPP_
#define FSN_ABLATION_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fsn/detector.hpp"

namespace fsn {

struct AblationOptions {
  DetectorConfig base;  // variant and shift_direction are overridden per cell
  int seeds = 3;        // seed s trains with base.seed + s on its own data
  int train_scenes = 200;
  int test_scenes = 100;
};

struct AblationRow {
  AttentionVariant variant = AttentionVariant::kNone;
  ShiftDirection direction = ShiftDirection::kCenter;
  std::vector<double> maps;  // one per seed
  double mean_map = 0;
  std::uint64_t config_hash = 0;  // of the first seed's config
  // Cells whose model does not depend on the shift direction reuse the
  // center run; this names the direction the numbers were computed under.
  ShiftDirection computed_under = ShiftDirection::kCenter;
};

inline constexpr AttentionVariant kAllVariants[] = {AttentionVariant::kNone,
                                                    AttentionVariant::kSubRegion,
                                                    AttentionVariant::kAspect,
                                                    AttentionVariant::kBoth};
inline constexpr ShiftDirection kAllDirections[] = {ShiftDirection::kCenter,
                                                    ShiftDirection::kOutside,
                                                    ShiftDirection::kRandom};

/// Training and held-out scenes for ablation seed index s.
std::vector<Scene> ablation_train_set(const AblationOptions& opt, int s);
std::vector<Scene> ablation_test_set(const AblationOptions& opt, int s);

/// Trains and scores every variant x direction cell, variants outer, in the
/// order of kAllVariants and kAllDirections.
std::vector<AblationRow> run_ablation(const AblationOptions& opt,
                                      const std::function<void(const std::string&)>& progress = {});

const AblationRow& find_row(const std::vector<AblationRow>& rows, AttentionVariant v,
                            ShiftDirection d);

std::string format_ablation_text(const std::vector<AblationRow>& rows, const AblationOptions& opt);
/// Tab-separated, header first, with the settings each cell was run under.
std::string format_ablation_tsv(const std::vector<AblationRow>& rows, const AblationOptions& opt);

}  // namespace fsn

#endif  // FSN_ABLATION_HPP_
