#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "mandseg/error.hpp"
#include "mandseg/image_ops.hpp"
#include "mandseg/volume.hpp"

namespace mandseg {

enum class Severity { low, medium, high };

[[nodiscard]] inline std::string to_string(Severity s) {
  switch (s) {
    case Severity::low: return "low";
    case Severity::medium: return "medium";
    case Severity::high: return "high";
  }
  return "low";
}

[[nodiscard]] inline Severity severity_from_string(const std::string& s) {
  if (s == "low") return Severity::low;
  if (s == "medium") return Severity::medium;
  if (s == "high") return Severity::high;
  throw ArgumentError("unknown severity '" + s + "' (expected low, medium or high)");
}

/// Synthetic head CT with a horseshoe mandible, two rami, anterior teeth and a
/// skull slab above the condyles. Geometry is in voxels and scales with dims.
struct PhantomParams {
  Dims dims{96, 96, 80};
  Spacing spacing{1.12, 1.12, 3.0};

  double hu_air = -1000.0;
  double hu_soft = 40.0;
  double hu_bone = 1200.0;
  double hu_teeth = 1800.0;

  /// Arch centerline radius and in-plane bone thickness, voxels.
  double arch_radius = 30.0;
  double arch_thickness = 10.0;
  /// Slices of soft tissue between condyle tops and the skull slab; 0 = touching.
  std::size_t condyle_gap = 0;
  /// Maximum random shift of the anatomy, voxels in-plane (half that in z).
  int jitter = 3;
  double noise_sigma = 20.0;

  Severity severity = Severity::low;
  std::uint64_t rng_seed = 0;
};

struct PhantomCase {
  Image volume;
  Mask gt_mandible;
  Mask gt_teeth;
  Mask gt_skull;
  BoundingBox gt_box;
  Severity severity = Severity::low;
};

namespace detail {

/// Axial-plane teeth region: the tight box of voxels at or above `level`.
inline std::optional<BoundingBox> bright_region(const Image& v, double level) {
  return tight_box(threshold(v, level));
}

}  // namespace detail

/// Adds acquisition noise for every severity; medium adds 2-4 streak lines of
/// +/-600 HU through the teeth region, high adds 6-10 streaks and two 3000 HU
/// metal blobs inside the teeth. The teeth region is located as the voxels at
/// or above 1500 HU; without any, the central third of the volume is used.
[[nodiscard]] inline Image add_artifacts(const Image& v, Severity severity, std::uint64_t rng_seed,
                                         double noise_sigma = 20.0) {
  std::mt19937_64 rng(rng_seed ^ 0x9e3779b97f4a7c15ULL);
  Image out = v;
  const Dims& d = v.dims();

  std::normal_distribution<double> noise(0.0, noise_sigma);
  for (float& value : out.values()) value = static_cast<float>(value + noise(rng));
  if (severity == Severity::low) return out;

  const auto teeth = detail::bright_region(v, 1500.0);
  const BoundingBox region = teeth.value_or(
      BoundingBox{{d.x / 3, d.y / 3, d.z / 3}, {2 * d.x / 3, 2 * d.y / 3, 2 * d.z / 3}});

  const int streaks = severity == Severity::medium
                          ? std::uniform_int_distribution<int>(2, 4)(rng)
                          : std::uniform_int_distribution<int>(6, 10)(rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int s = 0; s < streaks; ++s) {
    const double px = region.min.x + unit(rng) * double(region.extent(0) - 1);
    const double py = region.min.y + unit(rng) * double(region.extent(1) - 1);
    const auto z = region.min.z + static_cast<std::size_t>(unit(rng) * double(region.extent(2)));
    const double angle = unit(rng) * std::numbers::pi;
    const double delta = unit(rng) < 0.5 ? -600.0 : 600.0;
    const double ux = std::cos(angle);
    const double uy = std::sin(angle);
    // Rasterize the line through (px, py) across the whole slice, one pixel wide.
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x) {
        const double dist = std::abs((double(x) - px) * uy - (double(y) - py) * ux);
        if (dist <= 0.5) out(x, y, std::min(z, d.z - 1)) += static_cast<float>(delta);
      }
  }

  if (severity == Severity::high) {
    std::vector<std::size_t> teeth_voxels;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i] >= 1500.0f) teeth_voxels.push_back(i);
    for (int b = 0; b < 2; ++b) {
      const VoxelCoord c =
          teeth_voxels.empty()
              ? VoxelCoord{d.x / 2, d.y / 2, d.z / 2}
              : v.coord(teeth_voxels[std::uniform_int_distribution<std::size_t>(
                    0, teeth_voxels.size() - 1)(rng)]);
      // 3x3 in-plane blob
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const auto nb = step(c, {dx, dy, 0}, d);
          if (nb) out[*nb] = 3000.0f;
        }
    }
  }
  return out;
}

/// Builds the anatomy, ground-truth masks and artifacts for one case.
[[nodiscard]] inline PhantomCase generate(const PhantomParams& p) {
  validate_geometry(p.dims, p.spacing);
  const Dims& d = p.dims;
  if (d.x < 32 || d.y < 32 || d.z < 32) throw ArgumentError("phantom dims must be at least 32");

  std::mt19937_64 rng(p.rng_seed);
  std::uniform_int_distribution<int> shift(-p.jitter, p.jitter);
  std::uniform_int_distribution<int> zshift(-(p.jitter / 2), p.jitter / 2);

  const double sx = double(d.x) / 96.0;
  const double sz = double(d.z) / 80.0;
  const double radius = p.arch_radius * sx + shift(rng) * 0.5;
  const double half_t = 0.5 * p.arch_thickness * sx;
  const double cx = 0.5 * double(d.x) + shift(rng);
  const double cy = 0.58 * double(d.y) + shift(rng);
  const long body_z0 = std::lround(0.16 * double(d.z)) + zshift(rng);
  const long body_z1 = body_z0 + std::lround(11 * sz) - 1;
  const long ramus_top = std::lround(0.68 * double(d.z)) + zshift(rng);
  const long teeth_z1 = body_z1 + std::lround(4 * sz);
  const long skull_z0 = ramus_top + 1 + static_cast<long>(p.condyle_gap);
  const long skull_z1 = skull_z0 + std::lround(8 * sz) - 1;
  const double ramus_y0 = cy - 2.0 * sx;
  const double ramus_y1 = cy + 13.0 * sx;
  const double tooth_r = half_t - 1.0;
  const int tooth_count = 8;

  if (cx - radius - half_t < 2.0 || cx + radius + half_t > double(d.x) - 3.0 ||
      cy - radius - half_t < 2.0 || ramus_y1 > double(d.y) - 3.0 || body_z0 < 2 ||
      skull_z1 > static_cast<long>(d.z) - 2 || radius <= half_t)
    throw ArgumentError("phantom dims too small to fit the arch");

  PhantomCase out{Image(d, p.spacing, static_cast<float>(p.hu_air)),
                  Mask(d, p.spacing, 0),
                  Mask(d, p.spacing, 0),
                  Mask(d, p.spacing, 0),
                  {},
                  p.severity};

  const double head_rx = 0.47 * double(d.x);
  const double head_ry = 0.47 * double(d.y);
  std::vector<double> hu(d.count(), p.hu_air);

  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x) {
        const double fx = double(x);
        const double fy = double(y);
        const long fz = static_cast<long>(z);
        const std::size_t i = out.volume.index(x, y, z);

        const double hx = (fx - 0.5 * double(d.x) + 0.5) / head_rx;
        const double hy = (fy - 0.5 * double(d.y) + 0.5) / head_ry;
        if (hx * hx + hy * hy <= 1.0) hu[i] = p.hu_soft;

        const double r = std::hypot(fx - cx, fy - cy);
        const bool in_arch_ring = fy <= cy && std::abs(r - radius) <= half_t;
        const bool in_body = in_arch_ring && fz >= body_z0 && fz <= body_z1;
        const bool in_ramus = fz >= body_z0 && fz <= ramus_top && fy >= ramus_y0 &&
                              fy <= ramus_y1 &&
                              (std::abs(fx - (cx - radius)) <= half_t ||
                               std::abs(fx - (cx + radius)) <= half_t);
        bool in_tooth = false;
        if (fz > body_z1 && fz <= teeth_z1 && fy <= cy) {
          // Teeth centered on the arch centerline within 60 degrees of the midline.
          for (int t = 0; t < tooth_count; ++t) {
            const double a = std::numbers::pi / 2.0 +
                             (double(t) - (tooth_count - 1) / 2.0) * (std::numbers::pi / 3.0) /
                                 ((tooth_count - 1) / 2.0);
            const double tx = cx + radius * std::cos(a);
            const double ty = cy - radius * std::sin(a);
            if (std::hypot(fx - tx, fy - ty) <= tooth_r) in_tooth = true;
          }
        }
        const bool in_skull = fz >= skull_z0 && fz <= skull_z1 &&
                              std::abs(fx - cx) <= radius + 2.0 * half_t &&
                              fy >= cy - 0.5 * radius && fy <= ramus_y1 + 8.0 * sx;

        if (in_body || in_ramus) {
          out.gt_mandible[i] = 1;
          hu[i] = p.hu_bone;
        } else if (in_tooth) {
          out.gt_teeth[i] = 1;
          hu[i] = p.hu_teeth;
        } else if (in_skull) {
          out.gt_skull[i] = 1;
          hu[i] = p.hu_bone;
        }
      }

  Image clean(d, p.spacing, 0.0f);
  for (std::size_t i = 0; i < hu.size(); ++i) clean[i] = static_cast<float>(hu[i]);

  out.volume = add_artifacts(clean, p.severity, p.rng_seed + 1, p.noise_sigma);
  for (float& value : out.volume.values()) value = std::round(value);
  out.gt_box = *tight_box(out.gt_mandible);
  return out;
}

}  // namespace mandseg
