#include "fsn/ablation.hpp"

#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "fsn/checkpoint.hpp"

namespace fsn {

namespace {

constexpr std::uint64_t kTrainStream = 0x545241494e;  // "TRAIN"
constexpr std::uint64_t kTestStream = 0x54455354;     // "TEST"

DetectorConfig cell_config(const AblationOptions& opt, AttentionVariant v, ShiftDirection d, int s) {
  DetectorConfig cfg = opt.base;
  cfg.variant = v;
  cfg.shift_direction = d;
  cfg.seed = opt.base.seed + static_cast<std::uint64_t>(s);
  return cfg;
}

}  // namespace

std::vector<Scene> ablation_train_set(const AblationOptions& opt, int s) {
  return generate_dataset(static_cast<std::size_t>(opt.train_scenes),
                          derive_seed(opt.base.seed + static_cast<std::uint64_t>(s), kTrainStream));
}

std::vector<Scene> ablation_test_set(const AblationOptions& opt, int s) {
  return generate_dataset(static_cast<std::size_t>(opt.test_scenes),
                          derive_seed(opt.base.seed + static_cast<std::uint64_t>(s), kTestStream));
}

std::vector<AblationRow> run_ablation(const AblationOptions& opt,
                                      const std::function<void(const std::string&)>& progress) {
  if (opt.seeds < 1 || opt.train_scenes < 1 || opt.test_scenes < 1) {
    throw std::invalid_argument("ablation: seeds and scene counts must be positive");
  }
  std::vector<AblationRow> rows;
  for (AttentionVariant v : kAllVariants) {
    for (ShiftDirection d : kAllDirections) {
      AblationRow row;
      row.variant = v;
      row.direction = d;
      row.config_hash = cell_config(opt, v, d, 0).hash();
      row.computed_under = d;
      rows.push_back(row);
    }
  }
  for (int s = 0; s < opt.seeds; ++s) {
    const std::vector<Scene> train = ablation_train_set(opt, s);
    const std::vector<Scene> test = ablation_test_set(opt, s);
    for (AblationRow& row : rows) {
      const bool direction_free = !cell_config(opt, row.variant, row.direction, s).uses_subregion();
      if (direction_free && row.direction != ShiftDirection::kCenter) {
        const AblationRow& center = find_row(rows, row.variant, ShiftDirection::kCenter);
        row.maps.push_back(center.maps.at(static_cast<std::size_t>(s)));
        row.computed_under = ShiftDirection::kCenter;
        continue;
      }
      const DetectorConfig cfg = cell_config(opt, row.variant, row.direction, s);
      Trainer trainer(cfg, train);
      trainer.run(cfg.iterations);
      const MapResult m = evaluate_scenes(trainer.model(), test);
      row.maps.push_back(m.map);
      if (progress) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "seed %d  %-9s %-7s mAP %.4f", s, to_string(row.variant).c_str(),
                      to_string(row.direction).c_str(), m.map);
        progress(buf);
      }
    }
  }
  for (AblationRow& row : rows) {
    row.mean_map = std::accumulate(row.maps.begin(), row.maps.end(), 0.0) /
                   static_cast<double>(row.maps.size());
  }
  return rows;
}

const AblationRow& find_row(const std::vector<AblationRow>& rows, AttentionVariant v,
                            ShiftDirection d) {
  for (const AblationRow& r : rows) {
    if (r.variant == v && r.direction == d) return r;
  }
  throw std::out_of_range("ablation: no row for " + to_string(v) + "/" + to_string(d));
}

std::string format_ablation_text(const std::vector<AblationRow>& rows, const AblationOptions& opt) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-10s %-8s %8s", "variant", "shift", "mean_mAP");
  os << buf;
  for (int s = 0; s < opt.seeds; ++s) {
    std::snprintf(buf, sizeof(buf), " %8s", ("seed" + std::to_string(opt.base.seed + s)).c_str());
    os << buf;
  }
  os << "  note\n";
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-10s %-8s %8.4f", to_string(r.variant).c_str(),
                  to_string(r.direction).c_str(), r.mean_map);
    os << buf;
    for (double m : r.maps) {
      std::snprintf(buf, sizeof(buf), " %8.4f", m);
      os << buf;
    }
    if (r.computed_under != r.direction) os << "  same model as " << to_string(r.computed_under);
    os << "\n";
  }
  return os.str();
}

std::string format_ablation_tsv(const std::vector<AblationRow>& rows, const AblationOptions& opt) {
  std::ostringstream os;
  os << "variant\tshift_direction\tmean_map";
  for (int s = 0; s < opt.seeds; ++s) os << "\tmap_seed" << opt.base.seed + static_cast<std::uint64_t>(s);
  os << "\tcomputed_under\tconfig_hash\tbase_seed\tseeds\titerations\tlearning_rate\ttrain_scenes"
        "\ttest_scenes\tselective_channels\n";
  char buf[64];
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.mean_map);
    os << to_string(r.variant) << "\t" << to_string(r.direction) << "\t" << buf;
    for (double m : r.maps) {
      std::snprintf(buf, sizeof(buf), "%.6f", m);
      os << "\t" << buf;
    }
    os << "\t" << to_string(r.computed_under) << "\t" << hex64(r.config_hash) << "\t" << opt.base.seed
       << "\t" << opt.seeds << "\t" << opt.base.iterations << "\t" << opt.base.learning_rate << "\t"
       << opt.train_scenes << "\t" << opt.test_scenes << "\t" << opt.base.selective_channels << "\n";
  }
  return os.str();
}

}  // namespace fsn
