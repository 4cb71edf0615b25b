#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "mandseg/error.hpp"
#include "mandseg/volume.hpp"

namespace mandseg {

// ---------------------------------------------------------------------------
// Gradient
// ---------------------------------------------------------------------------

/// Euclidean norm of central differences, divided by the spacing of each
/// axis. Border voxels use one-sided differences; axes of extent 1 contribute
/// nothing. When `physical_units` is false the spacing is ignored and the
/// derivative is taken per voxel step.
template <typename T>
[[nodiscard]] Image gradient_magnitude(const Volume<T>& v, bool physical_units = true) {
  const Dims& d = v.dims();
  const Spacing& s = v.spacing();
  Image out(d, s, 0.0f);
  const double h[3] = {physical_units ? s.x : 1.0, physical_units ? s.y : 1.0,
                       physical_units ? s.z : 1.0};
  const std::size_t n[3] = {d.x, d.y, d.z};
  const std::size_t stride[3] = {1, d.x, d.slice_count()};

  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x) {
        const std::size_t i = v.index(x, y, z);
        const std::size_t pos[3] = {x, y, z};
        double sum = 0.0;
        for (int a = 0; a < 3; ++a) {
          if (n[a] < 2) continue;
          double diff = 0.0;
          if (pos[a] == 0) {
            diff = (double(v[i + stride[a]]) - double(v[i])) / h[a];
          } else if (pos[a] + 1 == n[a]) {
            diff = (double(v[i]) - double(v[i - stride[a]])) / h[a];
          } else {
            diff = (double(v[i + stride[a]]) - double(v[i - stride[a]])) / (2.0 * h[a]);
          }
          sum += diff * diff;
        }
        out[i] = static_cast<float>(std::sqrt(sum));
      }
  return out;
}

// ---------------------------------------------------------------------------
// Thresholding
// ---------------------------------------------------------------------------

/// Voxels with lo <= value <= hi.
template <typename T>
[[nodiscard]] Mask threshold(const Volume<T>& v, double lo,
                             double hi = std::numeric_limits<double>::infinity()) {
  if (lo > hi) throw ArgumentError("threshold: lo > hi");
  Mask m(v.dims(), v.spacing(), 0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double value = v[i];
    m[i] = (value >= lo && value <= hi) ? 1 : 0;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Connected components
// ---------------------------------------------------------------------------

/// Component labels; 0 is background, components are numbered 1..K in order
/// of their first voxel in x-fastest scan order.
struct LabelMap {
  Dims dims;
  std::vector<std::uint32_t> labels;
  /// component_sizes[k - 1] is the voxel count of label k.
  std::vector<std::size_t> component_sizes;

  [[nodiscard]] std::size_t count() const { return component_sizes.size(); }

  [[nodiscard]] std::vector<std::size_t> sizes_descending() const {
    auto s = component_sizes;
    std::sort(s.begin(), s.end(), std::greater<>());
    return s;
  }

  /// Label of the largest component (lowest label on ties), or 0 when empty.
  [[nodiscard]] std::uint32_t largest() const {
    std::uint32_t best = 0;
    for (std::size_t k = 0; k < component_sizes.size(); ++k)
      if (best == 0 || component_sizes[k] > component_sizes[best - 1])
        best = static_cast<std::uint32_t>(k + 1);
    return best;
  }
};

namespace detail {

inline LabelMap label_grid(std::span<const std::uint8_t> bits, const Dims& d, Adjacency adj) {
  LabelMap out{d, std::vector<std::uint32_t>(bits.size(), 0), {}};
  const auto offsets = neighbor_offsets(adj);
  std::deque<std::size_t> queue;
  const auto coord = [&](std::size_t i) {
    const std::size_t plane = d.slice_count();
    return VoxelCoord{i % d.x, (i % plane) / d.x, i / plane};
  };
  const auto index = [&](const VoxelCoord& c) { return c.x + d.x * (c.y + d.y * c.z); };

  for (std::size_t start = 0; start < bits.size(); ++start) {
    if (!bits[start] || out.labels[start] != 0) continue;
    const auto label = static_cast<std::uint32_t>(out.component_sizes.size() + 1);
    std::size_t size = 0;
    out.labels[start] = label;
    queue.push_back(start);
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      ++size;
      const VoxelCoord c = coord(i);
      for (const auto& o : offsets) {
        const auto nb = step(c, o, d);
        if (!nb) continue;
        const std::size_t j = index(*nb);
        if (bits[j] && out.labels[j] == 0) {
          out.labels[j] = label;
          queue.push_back(j);
        }
      }
    }
    out.component_sizes.push_back(size);
  }
  return out;
}

}  // namespace detail

/// Labels the full 3D mask (adjacency 6, 18 or 26).
[[nodiscard]] inline LabelMap connected_components(const Mask& m, Adjacency adj) {
  if (is_planar(adj)) throw ArgumentError("3D labeling needs adjacency 6, 18 or 26");
  return detail::label_grid(m.values(), m.dims(), adj);
}

/// Labels the axial slice at z (adjacency 4 or 8); the result has dims (nx, ny, 1).
[[nodiscard]] inline LabelMap connected_components(const Mask& m, Adjacency adj, std::size_t z) {
  if (!is_planar(adj)) throw ArgumentError("slice labeling needs adjacency 4 or 8");
  if (z >= m.dims().z) throw ArgumentError("slice index out of range");
  return detail::label_grid(m.slice(z), Dims{m.dims().x, m.dims().y, 1}, adj);
}

/// Labels a free-standing 2D grid of nx by ny pixels.
[[nodiscard]] inline LabelMap connected_components_2d(std::span<const std::uint8_t> bits,
                                                      std::size_t nx, std::size_t ny,
                                                      Adjacency adj) {
  if (!is_planar(adj)) throw ArgumentError("slice labeling needs adjacency 4 or 8");
  if (bits.size() != nx * ny) throw ArgumentError("grid size mismatch");
  return detail::label_grid(bits, Dims{nx, ny, 1}, adj);
}

// ---------------------------------------------------------------------------
// Cropping
// ---------------------------------------------------------------------------

template <typename T>
[[nodiscard]] Volume<T> crop(const Volume<T>& v, const BoundingBox& b) {
  if (!b.fits(v.dims())) throw ArgumentError("crop box outside volume");
  Volume<T> out(b.dims(), v.spacing());
  for (std::size_t z = 0; z < b.extent(2); ++z)
    for (std::size_t y = 0; y < b.extent(1); ++y)
      for (std::size_t x = 0; x < b.extent(0); ++x)
        out(x, y, z) = v(b.min.x + x, b.min.y + y, b.min.z + z);
  return out;
}

/// Writes `part` into a zero-filled grid of `full` dims at the box origin.
template <typename T>
[[nodiscard]] Volume<T> uncrop(const Volume<T>& part, const BoundingBox& b, const Dims& full) {
  if (!b.fits(full) || !(b.dims() == part.dims())) throw ArgumentError("uncrop box mismatch");
  Volume<T> out(full, part.spacing(), T{});
  for (std::size_t z = 0; z < b.extent(2); ++z)
    for (std::size_t y = 0; y < b.extent(1); ++y)
      for (std::size_t x = 0; x < b.extent(0); ++x)
        out(b.min.x + x, b.min.y + y, b.min.z + z) = part(x, y, z);
  return out;
}

/// Keeps only the 3D component that contains `at`; empty if `at` is background.
[[nodiscard]] inline Mask keep_component_containing(const Mask& m, const VoxelCoord& at,
                                                    Adjacency adj = Adjacency::k26) {
  Mask out(m.dims(), m.spacing(), 0);
  if (!within(at, m.dims()) || !m[at]) return out;
  const LabelMap lm = connected_components(m, adj);
  const std::uint32_t keep = lm.labels[m.index(at)];
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = lm.labels[i] == keep ? 1 : 0;
  return out;
}

template <typename T>
struct Slice2D {
  std::size_t width = 0;
  std::size_t height = 0;
  double pixel_w = 1.0;
  double pixel_h = 1.0;
  std::vector<T> pixels;

  [[nodiscard]] const T& at(std::size_t u, std::size_t v) const { return pixels[u + width * v]; }
};

/// Extracts the 2D slice orthogonal to `axis` at `index` as a row-major grid.
/// Axis 0 (sagittal) yields a (ny, nz) grid, axis 1 (coronal) (nx, nz), axis 2
/// (axial) (nx, ny); the first listed extent varies fastest.
template <typename T>
[[nodiscard]] Slice2D<T> extract_slice(const Volume<T>& v, int axis, std::size_t index) {
  const Dims& d = v.dims();
  const Spacing& s = v.spacing();
  if (axis < 0 || axis > 2) throw ArgumentError("axis must be 0, 1 or 2");
  if (index >= d[axis]) throw ArgumentError("slice index out of range");
  Slice2D<T> out;
  const int ua = axis == 0 ? 1 : 0;
  const int va = axis == 2 ? 1 : 2;
  out.width = d[ua];
  out.height = d[va];
  out.pixel_w = s[ua];
  out.pixel_h = s[va];
  out.pixels.resize(out.width * out.height);
  for (std::size_t vv = 0; vv < out.height; ++vv)
    for (std::size_t uu = 0; uu < out.width; ++uu) {
      std::size_t c[3];
      c[axis] = index;
      c[ua] = uu;
      c[va] = vv;
      out.pixels[uu + out.width * vv] = v(c[0], c[1], c[2]);
    }
  return out;
}

}  // namespace mandseg
