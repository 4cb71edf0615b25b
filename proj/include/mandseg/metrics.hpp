#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "mandseg/error.hpp"
#include "mandseg/phantom.hpp"
#include "mandseg/volume.hpp"

namespace mandseg {

/// 2|A and B| / (|A| + |B|); 1 when both are empty.
[[nodiscard]] inline double dsc(const Mask& a, const Mask& b) {
  require_same_grid(a, b);
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i] != 0;
    nb += b[i] != 0;
    both += (a[i] != 0) && (b[i] != 0);
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(both) / double(na + nb);
}

/// Voxel-count intersection over union of two boxes.
[[nodiscard]] inline double uoi(const BoundingBox& a, const BoundingBox& b) {
  if (!a.valid() || !b.valid()) throw ArgumentError("invalid bounding box");
  std::size_t inter = 1;
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t lo = std::max(a.min[axis], b.min[axis]);
    const std::size_t hi = std::min(a.max[axis], b.max[axis]);
    if (lo > hi) return 0.0;
    inter *= hi - lo + 1;
  }
  const double uni = double(a.voxel_count()) + double(b.voxel_count()) - double(inter);
  return double(inter) / uni;
}

/// Intersection over union of the slice index sets the two boxes cover along one axis.
[[nodiscard]] inline double slice_set_iou(const BoundingBox& a, const BoundingBox& b, int axis) {
  if (!a.valid() || !b.valid()) throw ArgumentError("invalid bounding box");
  const std::size_t lo = std::max(a.min[axis], b.min[axis]);
  const std::size_t hi = std::min(a.max[axis], b.max[axis]);
  const double inter = lo > hi ? 0.0 : double(hi - lo + 1);
  return inter / (double(a.extent(axis)) + double(b.extent(axis)) - inter);
}

/// How UoI is computed: 3D box IoU, or the mean of the three per-axis slice-set IoUs.
enum class UoiMode { box, slice_sets };

[[nodiscard]] inline double uoi(const BoundingBox& a, const BoundingBox& b, UoiMode mode) {
  if (mode == UoiMode::box) return uoi(a, b);
  return (slice_set_iou(a, b, 0) + slice_set_iou(a, b, 1) + slice_set_iou(a, b, 2)) / 3.0;
}

/// Physical positions (mm) of foreground voxels with a background or
/// out-of-grid 6-neighbor.
[[nodiscard]] inline std::vector<std::array<double, 3>> surface_points(const Mask& m,
                                                                      const Spacing& s) {
  const Dims& d = m.dims();
  const auto offsets = neighbor_offsets(Adjacency::k6);
  std::vector<std::array<double, 3>> out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m[i]) continue;
    const VoxelCoord c = m.coord(i);
    const bool surface = std::any_of(offsets.begin(), offsets.end(), [&](const Offset& o) {
      const auto nb = step(c, o, d);
      return !nb || !m[*nb];
    });
    if (surface) out.push_back({double(c.x) * s.x, double(c.y) * s.y, double(c.z) * s.z});
  }
  return out;
}

namespace detail {

inline double mean_nearest(const std::vector<std::array<double, 3>>& from,
                           const std::vector<std::array<double, 3>>& to) {
  double total = 0.0;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      const double dx = p[0] - q[0];
      const double dy = p[1] - q[1];
      const double dz = p[2] - q[2];
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    total += std::sqrt(best);
  }
  return total / double(from.size());
}

}  // namespace detail

/// Larger of the two mean directed surface-to-surface distances, mm, with
/// voxel positions scaled by `spacing`. Exact brute-force nearest neighbors.
[[nodiscard]] inline double modified_hd(const Mask& a, const Mask& b, const Spacing& spacing) {
  require_same_grid(a, b);
  validate_geometry(a.dims(), spacing);
  const auto sa = surface_points(a, spacing);
  const auto sb = surface_points(b, spacing);
  if (sa.empty() || sb.empty()) throw ArgumentError("modified Hausdorff distance of an empty mask");
  return std::max(detail::mean_nearest(sa, sb), detail::mean_nearest(sb, sa));
}

/// modified_hd with the masks' own spacing. The two spacings must agree to
/// single precision, since NIfTI headers store them as float32.
[[nodiscard]] inline double modified_hd(const Mask& a, const Mask& b) {
  for (int axis = 0; axis < 3; ++axis) {
    const double sa = a.spacing()[axis], sb = b.spacing()[axis];
    if (std::abs(sa - sb) > 1e-6 * std::max(std::abs(sa), std::abs(sb))) throw ArgumentError("spacing mismatch");
  }
  return modified_hd(a, b, a.spacing());
}

struct MetricsReport {
  std::string case_id;
  Severity severity = Severity::low;
  double uoi = 0.0;
  double dsc = 0.0;
  double mhd_mm = 0.0;
};

[[nodiscard]] inline MetricsReport evaluate(const Mask& pred, const Mask& gt, const BoundingBox& pred_box,
                                            const BoundingBox& gt_box, Severity severity,
                                            UoiMode mode = UoiMode::box) {
  require_same_grid(pred, gt);
  if (!pred_box.fits(gt.dims()) || !gt_box.fits(gt.dims()))
    throw ArgumentError("bounding box outside volume");
  MetricsReport r;
  r.severity = severity;
  r.uoi = uoi(pred_box, gt_box, mode);
  r.dsc = dsc(pred, gt);
  r.mhd_mm = modified_hd(pred, gt);
  return r;
}

/// Median and quartiles, linear interpolation between order statistics.
struct Quartiles {
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;

  [[nodiscard]] double iqr() const { return q3 - q1; }
};

[[nodiscard]] inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw ArgumentError("quantile of an empty set");
  std::sort(v.begin(), v.end());
  const double pos = q * double(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(v.size() - 1, lo + 1);
  return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

[[nodiscard]] inline Quartiles quartiles(const std::vector<double>& v) {
  return {quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75)};
}

struct GroupSummary {
  std::string group;
  std::size_t count = 0;
  Quartiles uoi;
  Quartiles dsc;
  Quartiles mhd_mm;
};

/// Summaries for low, medium, high and overall, in that order. Groups without
/// cases have count 0 and zero statistics.
[[nodiscard]] inline std::vector<GroupSummary> aggregate(const std::vector<MetricsReport>& reports) {
  std::vector<GroupSummary> out;
  for (const std::string group : {"low", "medium", "high", "overall"}) {
    GroupSummary g;
    g.group = group;
    std::vector<double> u, d, h;
    for (const auto& r : reports)
      if (group == "overall" || to_string(r.severity) == group) {
        u.push_back(r.uoi);
        d.push_back(r.dsc);
        h.push_back(r.mhd_mm);
      }
    g.count = u.size();
    if (g.count > 0) {
      g.uoi = quartiles(u);
      g.dsc = quartiles(d);
      g.mhd_mm = quartiles(h);
    }
    out.push_back(g);
  }
  return out;
}

[[nodiscard]] inline nlohmann::json to_json(const MetricsReport& r) {
  return {{"case_id", r.case_id},
          {"severity", to_string(r.severity)},
          {"uoi", r.uoi},
          {"dsc", r.dsc},
          {"mhd_mm", r.mhd_mm}};
}

[[nodiscard]] inline nlohmann::json to_json(const Quartiles& q) {
  return {{"q1", q.q1}, {"median", q.median}, {"q3", q.q3}, {"iqr", q.iqr()}};
}

[[nodiscard]] inline nlohmann::json report_to_json(const std::vector<MetricsReport>& reports) {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& r : reports) cases.push_back(to_json(r));
  nlohmann::json groups = nlohmann::json::object();
  for (const auto& g : aggregate(reports))
    groups[g.group] = {{"count", g.count},
                       {"uoi", to_json(g.uoi)},
                       {"dsc", to_json(g.dsc)},
                       {"mhd_mm", to_json(g.mhd_mm)}};
  return {{"cases", std::move(cases)}, {"groups", std::move(groups)}};
}

}  // namespace mandseg
