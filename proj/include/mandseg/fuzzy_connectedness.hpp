#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mandseg/error.hpp"
#include "mandseg/image_ops.hpp"
#include "mandseg/volume.hpp"

namespace mandseg {

/// How a link between adjacent voxels p, q is scored.
///
/// gradient_mean: the field is a gradient-magnitude image and the affinity is
///   exp(-m^2 / (2 sigma^2)) with m = (g(p) + g(q)) / 2.
/// intensity_difference: the field is the intensity image and the affinity is
///   exp(-d^2 / (2 sigma^2)) with d = |f(p) - f(q)|, the finite difference along
///   the link. sigma still comes from the gradient image.
enum class AffinityKind { gradient_mean, intensity_difference };

[[nodiscard]] inline std::string to_string(AffinityKind k) {
  return k == AffinityKind::gradient_mean ? "gradient_mean" : "intensity_difference";
}

[[nodiscard]] inline AffinityKind affinity_kind_from_string(const std::string& s) {
  if (s == "gradient_mean") return AffinityKind::gradient_mean;
  if (s == "intensity_difference") return AffinityKind::intensity_difference;
  throw ArgumentError("unknown affinity kind '" + s + "'");
}

struct AffinityParams {
  double sigma = 1.0;
  Adjacency adjacency = Adjacency::k26;
  AffinityKind kind = AffinityKind::intensity_difference;

  void validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ArgumentError("sigma must be positive");
    if (is_planar(adjacency)) throw ArgumentError("affinity adjacency must be 6, 18 or 26");
  }
};

/// Per-voxel strength of connectedness to a single seed.
struct ConnectivityMap {
  Volume<double> strength;
  VoxelCoord seed;
};

/// Mean-gradient affinity of two voxels with gradient magnitudes gp and gq.
[[nodiscard]] inline double affinity(double gp, double gq, double sigma) {
  if (!(sigma > 0.0)) throw ArgumentError("sigma must be positive");
  if (gp < 0.0 || gq < 0.0) throw ArgumentError("gradient magnitudes must be nonnegative");
  const double m = 0.5 * (gp + gq);
  return std::exp(-(m * m) / (2.0 * sigma * sigma));
}

/// Affinity of two voxels with intensities fp and fq.
[[nodiscard]] inline double difference_affinity(double fp, double fq, double sigma) {
  if (!(sigma > 0.0)) throw ArgumentError("sigma must be positive");
  const double d = fp - fq;
  return std::exp(-(d * d) / (2.0 * sigma * sigma));
}

/// Affinity of a link given the field values at its two ends.
[[nodiscard]] inline double link_affinity(double a, double b, const AffinityParams& params) {
  return params.kind == AffinityKind::gradient_mean ? affinity(a, b, params.sigma)
                                                    : difference_affinity(a, b, params.sigma);
}

/// Strength of a path given the affinities of its links: the weakest link.
/// A path without links (a single voxel) has strength 1.
[[nodiscard]] inline double path_strength(std::span<const double> link_affinities) {
  double s = 1.0;
  for (double a : link_affinities) s = std::min(s, a);
  return s;
}

namespace detail {

inline double median_of(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace detail

/// Sigma from the gradient image: the median gradient magnitude over the bone
/// boundary (bone voxels with at least one in-grid non-bone 6-neighbor). Falls
/// back to the median of all nonzero gradients when that median is zero or no
/// boundary voxel exists.
[[nodiscard]] inline double estimate_sigma(const Image& grad, const Mask& bone) {
  require_same_grid(grad, bone);
  if (count_foreground(bone) == 0) throw DelineationError("sigma estimation: empty bone mask");
  const Dims& d = grad.dims();
  const auto offsets = neighbor_offsets(Adjacency::k6);
  std::vector<double> boundary;
  for (std::size_t i = 0; i < bone.size(); ++i) {
    if (!bone[i]) continue;
    const VoxelCoord c = bone.coord(i);
    const bool on_boundary = std::any_of(offsets.begin(), offsets.end(), [&](const Offset& o) {
      const auto nb = step(c, o, d);
      return nb && !bone[*nb];
    });
    if (on_boundary) boundary.push_back(grad[i]);
  }
  if (!boundary.empty()) {
    const double s = detail::median_of(std::move(boundary));
    if (s > 0.0) return s;
  }
  std::vector<double> nonzero;
  for (float g : grad.values())
    if (g > 0.0f) nonzero.push_back(g);
  if (nonzero.empty()) throw DelineationError("sigma estimation: gradient image is all zero");
  return detail::median_of(std::move(nonzero));
}

/// Intensity level at and above which voxels count as bone for seeding.
inline constexpr double kSeedBoneHu = 600.0;

/// Brightest voxel of the largest 26-connected component of lo <= HU <= hi
/// inside the box. Ties go to the smallest (z, y, x). Coordinates refer to `v`.
template <typename T>
[[nodiscard]] VoxelCoord select_seed(const Volume<T>& v, const BoundingBox& box,
                                     double lo = kSeedBoneHu,
                                     double hi = std::numeric_limits<double>::infinity()) {
  if (!box.fits(v.dims())) throw ArgumentError("seed box outside volume");
  const Volume<T> sub = crop(v, box);
  const Mask bone = threshold(sub, lo, hi);
  const LabelMap lm = connected_components(bone, Adjacency::k26);
  const std::uint32_t keep = lm.largest();
  if (keep == 0) throw DelineationError("no seed: no bone voxel in bounding box");
  std::size_t best = 0;
  bool found = false;
  // Scan order is (z, y, x) lexicographic, so strict '>' keeps the first maximum.
  for (std::size_t i = 0; i < sub.size(); ++i) {
    if (lm.labels[i] != keep) continue;
    if (!found || double(sub[i]) > double(sub[best])) {
      best = i;
      found = true;
    }
  }
  const VoxelCoord local = sub.coord(best);
  return {box.min.x + local.x, box.min.y + local.y, box.min.z + local.z};
}

namespace detail {

/// Best-first max-min propagation with an explicit neighbor visiting order.
inline ConnectivityMap propagate(const Image& field, const VoxelCoord& seed,
                                 const AffinityParams& params, std::span<const Offset> offsets) {
  params.validate();
  if (!within(seed, field.dims())) throw ArgumentError("seed outside volume");
  const Dims& d = field.dims();
  ConnectivityMap out{Volume<double>(d, field.spacing(), 0.0), seed};
  std::vector<std::uint8_t> done(field.size(), 0);
  using Entry = std::pair<double, std::size_t>;
  std::priority_queue<Entry> heap;
  const std::size_t s = field.index(seed);
  out.strength[s] = 1.0;
  heap.emplace(1.0, s);
  while (!heap.empty()) {
    const auto [strength, i] = heap.top();
    heap.pop();
    if (done[i] || strength < out.strength[i]) continue;
    done[i] = 1;
    const VoxelCoord c = field.coord(i);
    for (const auto& o : offsets) {
      const auto nb = step(c, o, d);
      if (!nb) continue;
      const std::size_t j = field.index(*nb);
      if (done[j]) continue;
      const double candidate = std::min(strength, link_affinity(field[i], field[j], params));
      if (candidate > out.strength[j]) {
        out.strength[j] = candidate;
        heap.emplace(candidate, j);
      }
    }
  }
  return out;
}

}  // namespace detail

/// True when every non-seed voxel's strength equals the best neighbor's
/// min(strength, affinity), i.e. the map is a fixed point of max-min relaxation.
[[nodiscard]] inline bool satisfies_fixed_point(const ConnectivityMap& c, const Image& field,
                                                const AffinityParams& params) {
  const Dims& d = field.dims();
  if (!(c.strength.dims() == d)) return false;
  const auto offsets = neighbor_offsets(params.adjacency);
  const std::size_t s = field.index(c.seed);
  if (c.strength[s] != 1.0) return false;
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (i == s) continue;
    const VoxelCoord p = field.coord(i);
    double best = 0.0;
    for (const auto& o : offsets) {
      const auto nb = step(p, o, d);
      if (!nb) continue;
      const std::size_t j = field.index(*nb);
      best = std::max(best, std::min(c.strength[j], link_affinity(field[j], field[i], params)));
    }
    if (best != c.strength[i]) return false;
  }
  return true;
}

/// Strength of the strongest path from `seed` to every voxel, where a path's
/// strength is its weakest link affinity. `field` is the gradient image for
/// AffinityKind::gradient_mean and the intensity image otherwise.
[[nodiscard]] inline ConnectivityMap compute_connectivity(const Image& field,
                                                          const VoxelCoord& seed,
                                                          const AffinityParams& params) {
  const auto offsets = neighbor_offsets(params.adjacency);
  ConnectivityMap out = detail::propagate(field, seed, params, offsets);
  assert(satisfies_fixed_point(out, field, params));
  return out;
}

/// Voxels with strength >= theta that stay 26-connected to the seed.
[[nodiscard]] inline Mask threshold_object(const ConnectivityMap& c, double theta) {
  if (!(theta > 0.0 && theta <= 1.0)) throw ArgumentError("theta must lie in (0, 1]");
  const Mask raw = threshold(c.strength, theta);
  return keep_component_containing(raw, c.seed, Adjacency::k26);
}

}  // namespace mandseg
