#include "fsn/attention.hpp"

#include <algorithm>
#include <cstdlib>
#include <random>
#include <stdexcept>

namespace fsn {

std::string to_string(ShiftDirection d) {
  switch (d) {
    case ShiftDirection::kCenter:
      return "center";
    case ShiftDirection::kOutside:
      return "outside";
    case ShiftDirection::kRandom:
      return "random";
  }
  return "center";
}

ShiftDirection parse_shift_direction(const std::string& s) {
  if (s == "center") return ShiftDirection::kCenter;
  if (s == "outside") return ShiftDirection::kOutside;
  if (s == "random") return ShiftDirection::kRandom;
  throw std::invalid_argument("unknown shift direction '" + s + "' (center|outside|random)");
}

std::vector<Offset2> subregion_offsets(const SubRegionGrid& grid, ShiftDirection direction,
                                       std::uint64_t seed) {
  auto sign = [](double v) { return v > 0 ? 1 : (v < 0 ? -1 : 0); };
  std::vector<Offset2> table;
  table.reserve(static_cast<std::size_t>(grid.count()));
  const double mid_r = (grid.rows - 1) / 2.0;
  const double mid_c = (grid.cols - 1) / 2.0;
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) table.push_back({sign(mid_r - r), sign(mid_c - c)});
  }
  if (direction == ShiftDirection::kOutside) {
    for (Offset2& o : table) o = {-o.dr, -o.dc};
  } else if (direction == ShiftDirection::kRandom) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = table.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(table[i - 1], table[pick(rng)]);
    }
  }
  return table;
}

template <typename T>
std::size_t SubRegionAttention<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& c : convs) n += c.parameter_count();
  return n;
}

template <typename T>
SubRegionAttention<T> make_subregion_attention(std::size_t c_in, std::size_t c_s,
                                               const SubRegionGrid& grid,
                                               std::span<const Offset2> offsets) {
  if (grid.rows < 1 || grid.cols < 1) throw std::invalid_argument("sub-region grid is empty");
  if (offsets.size() != static_cast<std::size_t>(grid.count())) {
    throw std::invalid_argument("sub-region offset table has " + std::to_string(offsets.size()) +
                                " entries for " + std::to_string(grid.count()) + " sub-regions");
  }
  SubRegionAttention<T> att;
  att.grid = grid;
  for (const Offset2& o : offsets) {
    if (std::abs(o.dr) > 1 || std::abs(o.dc) > 1) {
      throw std::invalid_argument("sub-region offset (" + std::to_string(o.dr) + ", " +
                                  std::to_string(o.dc) + ") outside {-1, 0, 1}");
    }
    att.convs.push_back(make_conv<T>(c_s, c_in, 3, 1, 1, o));
  }
  return att;
}

template <typename T>
Tensor4<T> reduce_dim(const Tensor4<T>& feat, const ConvParams<T>& params) {
  if (params.ksize() != 1) throw std::invalid_argument("reduce_dim: expects a 1x1 convolution");
  return conv2d(feat, params);
}

namespace {

// copy `src` (n, cs, H, W) into channels [c0, c0 + cs) of `dst`
template <typename T>
void put_channels(const Tensor4<T>& src, Tensor4<T>& dst, std::size_t c0) {
  const std::size_t plane = src.h() * src.w() * src.c();
  for (std::size_t n = 0; n < src.n(); ++n) {
    std::copy(src.plane(n, 0), src.plane(n, 0) + plane, dst.plane(n, c0));
  }
}

template <typename T>
Tensor4<T> take_channels(const Tensor4<T>& src, std::size_t c0, std::size_t cs) {
  Tensor4<T> out({src.n(), cs, src.h(), src.w()});
  const std::size_t plane = src.h() * src.w() * cs;
  for (std::size_t n = 0; n < src.n(); ++n) {
    std::copy(src.plane(n, c0), src.plane(n, c0) + plane, out.plane(n, 0));
  }
  return out;
}

}  // namespace

template <typename T>
AttentionBank<T> build_subregion_bank(const Tensor4<T>& feat, const SubRegionAttention<T>& att) {
  if (att.convs.size() != static_cast<std::size_t>(att.grid.count())) {
    throw std::invalid_argument("build_subregion_bank: need one convolution per sub-region");
  }
  const std::size_t cs = static_cast<std::size_t>(att.channels_per_group());
  AttentionBank<T> bank;
  bank.groups = att.grid.count();
  bank.channels_per_group = static_cast<int>(cs);
  bank.values = Tensor4<T>({feat.n(), cs * att.convs.size(), feat.h(), feat.w()});
  for (std::size_t k = 0; k < att.convs.size(); ++k) {
    if (att.convs[k].c_out() != cs) {
      throw std::invalid_argument("build_subregion_bank: uneven C_s across sub-regions");
    }
    put_channels(shifted_conv2d(feat, att.convs[k]), bank.values, k * cs);
  }
  return bank;
}

template <typename T>
SubRegionBankGrads<T> build_subregion_bank_backward(const Tensor4<T>& feat,
                                                    const SubRegionAttention<T>& att,
                                                    const Tensor4<T>& bank_grad) {
  const std::size_t cs = static_cast<std::size_t>(att.channels_per_group());
  require_same_shape(bank_grad.shape(), Shape4{feat.n(), cs * att.convs.size(), feat.h(), feat.w()},
                     "build_subregion_bank_backward");
  SubRegionBankGrads<T> g{Tensor4<T>(feat.shape()), {}};
  for (std::size_t k = 0; k < att.convs.size(); ++k) {
    ConvGrads<T> ck = conv2d_backward(feat, att.convs[k], take_channels(bank_grad, k * cs, cs));
    T* dst = g.dfeat.ptr();
    const T* src = ck.dx.ptr();
    for (std::size_t i = 0; i < g.dfeat.size(); ++i) dst[i] += src[i];
    g.convs.push_back(std::move(ck));
  }
  return g;
}

template <typename T>
AttentionBank<T> build_aspect_bank(const Tensor4<T>& feat, const ConvParams<T>& params,
                                   int groups) {
  if (params.ksize() != 1) throw std::invalid_argument("build_aspect_bank: expects a 1x1 conv");
  if (groups < 1 || params.c_out() % static_cast<std::size_t>(groups) != 0) {
    throw std::invalid_argument("build_aspect_bank: " + std::to_string(params.c_out()) +
                                " channels do not split into " + std::to_string(groups) +
                                " groups");
  }
  AttentionBank<T> bank;
  bank.groups = groups;
  bank.channels_per_group = static_cast<int>(params.c_out() / static_cast<std::size_t>(groups));
  bank.values = conv2d(feat, params);
  return bank;
}

template <typename T>
AttentionMap<T> selective_roi_pool(const AttentionBank<T>& bank, std::span<const RoI> rois,
                                   SelectMode mode, const SelectiveGeometry& geom) {
  const Tensor4<T>& v = bank.values;
  const auto cs = static_cast<std::size_t>(bank.channels_per_group);
  if (cs == 0 || v.c() != cs * static_cast<std::size_t>(bank.groups)) {
    throw std::invalid_argument("selective_roi_pool: bank channels != groups * C_s");
  }
  if (mode == SelectMode::kSubRegion && bank.groups != geom.grid.count()) {
    throw std::invalid_argument("selective_roi_pool: bank groups do not match sub-region grid");
  }
  const int H = static_cast<int>(v.h());
  const int W = static_cast<int>(v.w());
  const auto ph = static_cast<std::size_t>(geom.pooled_h);
  const auto pw = static_cast<std::size_t>(geom.pooled_w);

  // bin -> sub-region table is the same for every RoI
  std::vector<int> bin_group(ph * pw);
  for (int m = 0; m < geom.pooled_h; ++m) {
    for (int n = 0; n < geom.pooled_w; ++n) {
      bin_group[static_cast<std::size_t>(m) * pw + n] =
          bin_subregion_index(m + 1, n + 1, geom.pooled_h, geom.pooled_w, geom.grid);
    }
  }

  AttentionMap<T> map;
  map.values = Tensor4<T>({rois.size(), cs, ph, pw});
  map.provenance.assign(map.values.size(), 0);
  map.group.assign(rois.size() * ph * pw, 0);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const auto img = static_cast<std::size_t>(rois[r].image_index);
    if (img >= v.n()) throw std::out_of_range("selective_roi_pool: image index out of range");
    const FeatureWindow win = project_roi(rois[r].box, geom.spatial_stride, H, W);
    int k_ar = 1;
    if (mode == SelectMode::kAspect && bank.groups > 1) {
      k_ar = aspect_group(rois[r].box, geom.thresholds);
      if (k_ar > bank.groups) throw std::invalid_argument("selective_roi_pool: too few groups");
    }
    for (int m = 0; m < geom.pooled_h; ++m) {
      const BinRange rows = bin_range(win.y0, win.height(), m, geom.pooled_h);
      for (int n = 0; n < geom.pooled_w; ++n) {
        const BinRange cols = bin_range(win.x0, win.width(), n, geom.pooled_w);
        const std::size_t cell = static_cast<std::size_t>(m) * pw + n;
        const int k = mode == SelectMode::kSubRegion ? bin_group[cell] : k_ar;
        map.group[r * ph * pw + cell] = k;
        for (std::size_t c = 0; c < cs; ++c) {
          const std::size_t base = v.offset(img, bank.slice_begin(k) + c, 0, 0);
          const T* plane = v.ptr() + base;
          std::size_t best = static_cast<std::size_t>(rows.begin) * W + cols.begin;
          T best_v = plane[best];
          for (int i = rows.begin; i < rows.end; ++i) {
            for (int j = cols.begin; j < cols.end; ++j) {
              const std::size_t idx = static_cast<std::size_t>(i) * W + j;
              if (plane[idx] > best_v) {
                best_v = plane[idx];
                best = idx;
              }
            }
          }
          const std::size_t o = map.values.offset(r, c, m, n);
          map.values[o] = best_v;
          map.provenance[o] = static_cast<std::int64_t>(base + best);
        }
      }
    }
  }
  return map;
}

template <typename T>
Tensor4<T> selective_pool_backward(const Tensor4<T>& map_grad, const AttentionMap<T>& map,
                                   const Shape4& bank_shape) {
  if (map.provenance.empty() && map_grad.size() != 0) {
    throw std::invalid_argument("selective_pool_backward: attention map carries no provenance");
  }
  if (map.provenance.size() != map_grad.size()) {
    throw std::invalid_argument("selective_pool_backward: provenance does not match gradient");
  }
  Tensor4<T> g(bank_shape);
  for (std::size_t i = 0; i < map_grad.size(); ++i) {
    const auto idx = static_cast<std::size_t>(map.provenance[i]);
    if (idx >= g.size()) throw std::out_of_range("selective_pool_backward: provenance outside bank");
    g[idx] += map_grad[i];
  }
  return g;
}

template <typename T>
Tensor4<T> merge_selected_features(const Tensor4<T>& f, const Tensor4<T>& m_sr,
                                   const Tensor4<T>& m_ar) {
  require_same_shape(f.shape(), m_sr.shape(), "merge_selected_features");
  require_same_shape(f.shape(), m_ar.shape(), "merge_selected_features");
  return elementwise_mul(f, elementwise_add(m_sr, m_ar));
}

template <typename T>
MergeGrads<T> merge_selected_features_backward(const Tensor4<T>& f, const Tensor4<T>& m_sr,
                                               const Tensor4<T>& m_ar,
                                               const Tensor4<T>& grad_out) {
  require_same_shape(f.shape(), grad_out.shape(), "merge_selected_features_backward");
  const Tensor4<T> attention = elementwise_add(m_sr, m_ar);
  AddMulGrads<T> mul = elementwise_mul_backward(f, attention, grad_out);
  AddMulGrads<T> add = elementwise_add_backward(mul.db);
  return {std::move(mul.da), std::move(add.da), std::move(add.db)};
}

#define FSN_INSTANTIATE(T)                                                                     \
  template struct SubRegionAttention<T>;                                                       \
  template SubRegionAttention<T> make_subregion_attention<T>(std::size_t, std::size_t,         \
                                                             const SubRegionGrid&,             \
                                                             std::span<const Offset2>);        \
  template Tensor4<T> reduce_dim(const Tensor4<T>&, const ConvParams<T>&);                     \
  template AttentionBank<T> build_subregion_bank(const Tensor4<T>&, const SubRegionAttention<T>&); \
  template SubRegionBankGrads<T> build_subregion_bank_backward(                                \
      const Tensor4<T>&, const SubRegionAttention<T>&, const Tensor4<T>&);                     \
  template AttentionBank<T> build_aspect_bank(const Tensor4<T>&, const ConvParams<T>&, int);   \
  template AttentionMap<T> selective_roi_pool(const AttentionBank<T>&, std::span<const RoI>,   \
                                              SelectMode, const SelectiveGeometry&);           \
  template Tensor4<T> selective_pool_backward(const Tensor4<T>&, const AttentionMap<T>&,       \
                                              const Shape4&);                                  \
  template Tensor4<T> merge_selected_features(const Tensor4<T>&, const Tensor4<T>&,            \
                                              const Tensor4<T>&);                              \
  template MergeGrads<T> merge_selected_features_backward(                                     \
      const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&);

FSN_INSTANTIATE(float)
FSN_INSTANTIATE(double)
#undef FSN_INSTANTIATE

}  // namespace fsn
