#ifndef FSN_ATTENTION_HPP_
#define FSN_ATTENTION_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fsn/ops.hpp"
#include "fsn/roi.hpp"
#include "fsn/tensor.hpp"

namespace fsn {

/// Full-image attention bank: (batch, groups * C_s, H, W). Group g (1-based)
/// owns channels [(g - 1) * C_s, g * C_s).
template <typename T>
struct AttentionBank {
  Tensor4<T> values;
  int groups = 0;
  int channels_per_group = 0;

  std::size_t slice_begin(int group) const {
    return static_cast<std::size_t>(group - 1) * static_cast<std::size_t>(channels_per_group);
  }
};

/// Per-RoI pooled attention, (rois, C_s, h, w), with the flat bank index every
/// value was taken from.
template <typename T>
struct AttentionMap {
  Tensor4<T> values;
  std::vector<std::int64_t> provenance;
  std::vector<int> group;  // group used by each (roi, m, n) cell
};

enum class SelectMode { kSubRegion, kAspect };

enum class ShiftDirection { kCenter, kOutside, kRandom };

std::string to_string(ShiftDirection d);
ShiftDirection parse_shift_direction(const std::string& s);

/// Offsets for the shifted convolution of each sub-region, in sub-region order.
/// kCenter points every sub-region toward the RoI center, so a 3x3 grid gives
/// (1,1), (1,0), (1,-1), (0,1), (0,0), (0,-1), (-1,1), (-1,0), (-1,-1).
/// kOutside negates that table, kRandom is a seeded permutation of it.
std::vector<Offset2> subregion_offsets(const SubRegionGrid& grid, ShiftDirection direction,
                                       std::uint64_t seed = 0);

/// One shifted 3x3 convolution (C -> C_s) per sub-region.
template <typename T>
struct SubRegionAttention {
  SubRegionGrid grid;
  std::vector<ConvParams<T>> convs;

  int channels_per_group() const {
    return convs.empty() ? 0 : static_cast<int>(convs.front().c_out());
  }
  std::size_t parameter_count() const;
};

/// Validates the offset table (one entry per sub-region, components in {-1, 0, 1})
/// and allocates zeroed convolutions.
template <typename T>
SubRegionAttention<T> make_subregion_attention(std::size_t c_in, std::size_t c_s,
                                               const SubRegionGrid& grid,
                                               std::span<const Offset2> offsets);

/// 1x1 convolution, C -> C_s, producing the compacted feature map.
template <typename T>
Tensor4<T> reduce_dim(const Tensor4<T>& feat, const ConvParams<T>& params);

template <typename T>
AttentionBank<T> build_subregion_bank(const Tensor4<T>& feat, const SubRegionAttention<T>& att);

template <typename T>
struct SubRegionBankGrads {
  Tensor4<T> dfeat;
  std::vector<ConvGrads<T>> convs;
};

template <typename T>
SubRegionBankGrads<T> build_subregion_bank_backward(const Tensor4<T>& feat,
                                                    const SubRegionAttention<T>& att,
                                                    const Tensor4<T>& bank_grad);

/// Single 1x1 convolution C -> groups * C_s.
template <typename T>
AttentionBank<T> build_aspect_bank(const Tensor4<T>& feat, const ConvParams<T>& params,
                                   int groups);

struct SelectiveGeometry {
  int pooled_h = 7;
  int pooled_w = 7;
  double spatial_stride = 1.0;
  SubRegionGrid grid;
  AspectThresholds thresholds;
};

/// Max-pools, for every bin, only the bank channel slice of the bin's group:
/// the majority sub-region of the bin in kSubRegion mode, the RoI's aspect-ratio
/// group (shared by all bins) in kAspect mode.
template <typename T>
AttentionMap<T> selective_roi_pool(const AttentionBank<T>& bank, std::span<const RoI> rois,
                                   SelectMode mode, const SelectiveGeometry& geom);

template <typename T>
Tensor4<T> selective_pool_backward(const Tensor4<T>& map_grad, const AttentionMap<T>& map,
                                   const Shape4& bank_shape);

/// f_hat = f * (M_sr + M_ar)
template <typename T>
Tensor4<T> merge_selected_features(const Tensor4<T>& f, const Tensor4<T>& m_sr,
                                   const Tensor4<T>& m_ar);

template <typename T>
struct MergeGrads {
  Tensor4<T> df;
  Tensor4<T> dm_sr;
  Tensor4<T> dm_ar;
};

template <typename T>
MergeGrads<T> merge_selected_features_backward(const Tensor4<T>& f, const Tensor4<T>& m_sr,
                                               const Tensor4<T>& m_ar,
                                               const Tensor4<T>& grad_out);

}  // namespace fsn

#endif  // FSN_ATTENTION_HPP_
