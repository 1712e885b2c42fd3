#include "fsn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

namespace fsn {

NumericGradient central_difference(const std::function<double(std::span<const double>)>& fn,
                                   std::span<const double> x, double step) {
  std::vector<double> buf(x.begin(), x.end());
  return central_difference_inplace(
      buf, [&] { return fn(std::span<const double>(buf)); }, {}, step);
}

NumericGradient central_difference_inplace(std::span<double> x, const std::function<double()>& fn,
                                           std::span<const std::size_t> coords, double step) {
  NumericGradient out;
  const std::size_t n = coords.empty() ? x.size() : coords.size();
  out.grad.resize(n);
  out.loss_scale.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = coords.empty() ? k : coords[k];
    const double saved = x[i];
    x[i] = saved + step;
    const double fp = fn();
    x[i] = saved - step;
    const double fm = fn();
    x[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      out.nonfinite.push_back(i);
      out.grad[k] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    out.grad[k] = (fp - fm) / (2 * step);
    out.loss_scale[k] = std::max(std::fabs(fp), std::fabs(fm));
  }
  return out;
}

double relative_error(double analytic, double numeric, double eps) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), eps});
  return std::fabs(analytic - numeric) / denom;
}

double fd_noise_floor(double loss_scale, double step) {
  return kFdNoiseUlps * std::numeric_limits<double>::epsilon() * loss_scale / (2 * step);
}

void GradEntry::merge(const GradEntry& other) {
  if (other.max_rel_error > max_rel_error || seeds == 0) {
    max_rel_error = std::max(max_rel_error, other.max_rel_error);
    seed = other.seed;
  }
  tolerance = other.tolerance;
  coords += other.coords;
  nonfinite += other.nonfinite;
  floor_limited += other.floor_limited;
  violations += other.violations;
  seeds += other.seeds;
}

bool GradReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradEntry& e) { return e.passed(); });
}

void GradReport::add(const GradEntry& e) {
  for (auto& existing : entries) {
    if (existing.op == e.op && existing.param == e.param) {
      existing.merge(e);
      return;
    }
  }
  entries.push_back(e);
}

std::string GradReport::text() const {
  std::size_t w_op = 2, w_param = 5;
  for (const auto& e : entries) {
    w_op = std::max(w_op, e.op.size());
    w_param = std::max(w_param, e.param.size());
  }
  std::ostringstream os;
  char buf[160];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof(buf), "%-*s %-*s max_rel_err=%.3e tol=%.0e seeds=%d coords=%zu worst_seed=%llu %s",
                  static_cast<int>(w_op), e.op.c_str(), static_cast<int>(w_param), e.param.c_str(),
                  e.max_rel_error, e.tolerance, e.seeds, e.coords,
                  static_cast<unsigned long long>(e.seed), e.passed() ? "PASS" : "FAIL");
    os << buf;
    if (e.violations > 0) os << " violations=" << e.violations;
    if (e.floor_limited > 0) os << " floor_limited=" << e.floor_limited;
    if (e.nonfinite > 0) os << " nonfinite=" << e.nonfinite;
    os << "\n";
  }
  return os.str();
}

GradEntry check_tensor(const std::string& op, const std::string& param, std::uint64_t seed,
                       Tensor4<double>& x, std::span<const double> analytic,
                       const std::function<double()>& loss, double tolerance,
                       std::size_t max_coords, std::mt19937_64& rng) {
  std::vector<std::size_t> coords;
  if (max_coords != 0 && max_coords < x.size()) {
    coords.resize(x.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    // partial Fisher-Yates, then sorted for a stable report
    for (std::size_t i = 0; i < max_coords; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, coords.size() - 1);
      std::swap(coords[i], coords[pick(rng)]);
    }
    coords.resize(max_coords);
    std::sort(coords.begin(), coords.end());
  }
  const NumericGradient num = central_difference_inplace(x.data(), loss, coords);
  GradEntry e;
  e.op = op;
  e.param = param;
  e.seed = seed;
  e.tolerance = tolerance;
  e.seeds = 1;
  e.coords = num.grad.size();
  e.nonfinite = num.nonfinite.size();
  for (std::size_t k = 0; k < num.grad.size(); ++k) {
    const std::size_t i = coords.empty() ? k : coords[k];
    if (!std::isfinite(num.grad[k])) continue;
    const double rel = relative_error(analytic[i], num.grad[k]);
    e.max_rel_error = std::max(e.max_rel_error, rel);
    if (rel < tolerance) continue;
    if (std::fabs(analytic[i] - num.grad[k]) <= fd_noise_floor(num.loss_scale[k])) {
      ++e.floor_limited;
    } else {
      ++e.violations;
    }
  }
  return e;
}

double kink_margin_relu(const Tensor4<double>& pre) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pre.size(); ++i) m = std::min(m, std::fabs(pre[i]));
  return m;
}

namespace {

// gap between the two largest values of a window of one plane
double window_gap(const double* plane, int W, BinRange rows, BinRange cols) {
  double top = -std::numeric_limits<double>::infinity();
  double second = -std::numeric_limits<double>::infinity();
  for (int i = rows.begin; i < rows.end; ++i) {
    for (int j = cols.begin; j < cols.end; ++j) {
      const double v = plane[static_cast<std::size_t>(i) * W + j];
      if (v > top) {
        second = top;
        top = v;
      } else if (v > second) {
        second = v;
      }
    }
  }
  return top - second;  // +inf for single-cell windows
}

}  // namespace

double kink_margin_roi_pool(const Tensor4<double>& feat, std::span<const RoI> rois, int pooled_h,
                            int pooled_w, double spatial_stride) {
  const int H = static_cast<int>(feat.h());
  const int W = static_cast<int>(feat.w());
  double m = std::numeric_limits<double>::infinity();
  for (const RoI& r : rois) {
    const FeatureWindow win = project_roi(r.box, spatial_stride, H, W);
    for (std::size_t c = 0; c < feat.c(); ++c) {
      const double* plane = feat.plane(static_cast<std::size_t>(r.image_index), c);
      for (int i = 0; i < pooled_h; ++i) {
        for (int j = 0; j < pooled_w; ++j) {
          m = std::min(m, window_gap(plane, W, bin_range(win.y0, win.height(), i, pooled_h),
                                     bin_range(win.x0, win.width(), j, pooled_w)));
        }
      }
    }
  }
  return m;
}

double kink_margin_selective_pool(const AttentionBank<double>& bank, std::span<const RoI> rois,
                                  SelectMode mode, const SelectiveGeometry& geom) {
  const AttentionMap<double> map = selective_roi_pool(bank, rois, mode, geom);
  const int H = static_cast<int>(bank.values.h());
  const int W = static_cast<int>(bank.values.w());
  const auto ph = static_cast<std::size_t>(geom.pooled_h);
  const auto pw = static_cast<std::size_t>(geom.pooled_w);
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const FeatureWindow win = project_roi(rois[r].box, geom.spatial_stride, H, W);
    for (std::size_t i = 0; i < ph; ++i) {
      for (std::size_t j = 0; j < pw; ++j) {
        const int g = map.group[(r * ph + i) * pw + j];
        for (int c = 0; c < bank.channels_per_group; ++c) {
          const double* plane = bank.values.plane(static_cast<std::size_t>(rois[r].image_index),
                                                  bank.slice_begin(g) + static_cast<std::size_t>(c));
          m = std::min(m, window_gap(plane, W,
                                     bin_range(win.y0, win.height(), static_cast<int>(i), geom.pooled_h),
                                     bin_range(win.x0, win.width(), static_cast<int>(j), geom.pooled_w)));
        }
      }
    }
  }
  return m;
}

double kink_margin_smooth_l1(const Tensor4<double>& pred, const Tensor4<double>& target,
                             std::span<const double> row_weight) {
  const std::size_t cols = pred.n() == 0 ? 0 : pred.size() / pred.n();
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!row_weight.empty() && row_weight[i / cols] == 0) continue;
    m = std::min(m, std::fabs(std::fabs(pred[i] - target[i]) - 1.0));
  }
  return m;
}

}  // namespace fsn
