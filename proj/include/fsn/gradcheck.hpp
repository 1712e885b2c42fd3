#ifndef FSN_GRADCHECK_HPP_
#define FSN_GRADCHECK_HPP_

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fsn/attention.hpp"
#include "fsn/roi.hpp"
#include "fsn/tensor.hpp"

namespace fsn {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kRelErrEps = 1e-8;
inline constexpr double kSmoothTolerance = 1e-5;
inline constexpr double kKinkTolerance = 1e-4;
// Rounding in f(x +- h) limits what central differences can resolve. A
// coordinate over tolerance whose |analytic - numeric| is within this many ulps
// of the loss, divided by 2h, is still counted as a match and reported as
// floor-limited.
inline constexpr double kFdNoiseUlps = 16;

struct NumericGradient {
  std::vector<double> grad;
  std::vector<double> loss_scale;  // max(|f(x + h)|, |f(x - h)|) per coordinate
  std::vector<std::size_t> nonfinite;  // coordinates with a non-finite evaluation
};

/// (fn(x + h e_i) - fn(x - h e_i)) / 2h for every coordinate.
NumericGradient central_difference(const std::function<double(std::span<const double>)>& fn,
                                   std::span<const double> x, double step = kFdStep);

/// Same, perturbing `x` in place and restoring it; `fn` reads the buffer itself.
/// Only `coords` are evaluated when given; the result has one entry per coordinate
/// evaluated, in that order.
NumericGradient central_difference_inplace(std::span<double> x, const std::function<double()>& fn,
                                           std::span<const std::size_t> coords = {},
                                           double step = kFdStep);

/// |a - n| / max(|a|, |n|, eps)
double relative_error(double analytic, double numeric, double eps = kRelErrEps);

/// Absolute error central differences cannot distinguish from zero.
double fd_noise_floor(double loss_scale, double step = kFdStep);

struct GradEntry {
  std::string op;
  std::string param;
  std::uint64_t seed = 0;  // seed of the worst case
  double max_rel_error = 0;
  double tolerance = 0;
  std::size_t coords = 0;     // coordinates compared, summed over seeds
  std::size_t nonfinite = 0;  // flagged coordinates; any makes the entry fail
  std::size_t floor_limited = 0;  // over tolerance, but within the rounding floor
  std::size_t violations = 0;     // over tolerance and above the floor
  int seeds = 0;

  bool passed() const { return nonfinite == 0 && violations == 0; }
  /// Folds in another seed's result for the same op/param.
  void merge(const GradEntry& other);
};

struct GradReport {
  std::vector<GradEntry> entries;

  bool passed() const;
  /// One line per (op, parameter tensor).
  std::string text() const;
  void add(const GradEntry& e);  // merges with an existing op/param entry
};

/// Compares an analytic gradient against central differences on the tensor held
/// by `x`. `loss` must read `x`. When `max_coords` is nonzero and smaller than the
/// tensor, a seeded subset of coordinates is checked.
GradEntry check_tensor(const std::string& op, const std::string& param, std::uint64_t seed,
                       Tensor4<double>& x, std::span<const double> analytic,
                       const std::function<double()>& loss, double tolerance,
                       std::size_t max_coords, std::mt19937_64& rng);

/// Smallest |x| over the tensor; ReLU kinks sit at zero.
double kink_margin_relu(const Tensor4<double>& pre);
/// Smallest gap between the largest and second largest value of any pooling window.
double kink_margin_roi_pool(const Tensor4<double>& feat, std::span<const RoI> rois, int pooled_h,
                            int pooled_w, double spatial_stride);
double kink_margin_selective_pool(const AttentionBank<double>& bank, std::span<const RoI> rois,
                                  SelectMode mode, const SelectiveGeometry& geom);
/// Smallest ||pred - target| - 1| over rows with nonzero weight.
double kink_margin_smooth_l1(const Tensor4<double>& pred, const Tensor4<double>& target,
                             std::span<const double> row_weight);

}  // namespace fsn

#endif  // FSN_GRADCHECK_HPP_
