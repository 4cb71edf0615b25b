#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mandseg/error.hpp"

namespace mandseg {

/// Voxel counts along x, y, z.
struct Dims {
  std::size_t x = 1;
  std::size_t y = 1;
  std::size_t z = 1;

  [[nodiscard]] constexpr std::size_t count() const { return x * y * z; }
  [[nodiscard]] constexpr std::size_t slice_count() const { return x * y; }
  [[nodiscard]] constexpr std::size_t operator[](int axis) const {
    return axis == 0 ? x : (axis == 1 ? y : z);
  }
  friend constexpr bool operator==(const Dims&, const Dims&) = default;
};

/// Physical voxel size in mm.
struct Spacing {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;

  [[nodiscard]] constexpr double operator[](int axis) const {
    return axis == 0 ? x : (axis == 1 ? y : z);
  }
  friend constexpr bool operator==(const Spacing&, const Spacing&) = default;
};

struct VoxelCoord {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t z = 0;

  [[nodiscard]] constexpr std::size_t operator[](int axis) const {
    return axis == 0 ? x : (axis == 1 ? y : z);
  }
  friend constexpr bool operator==(const VoxelCoord&, const VoxelCoord&) = default;
};

[[nodiscard]] constexpr bool within(const VoxelCoord& c, const Dims& d) {
  return c.x < d.x && c.y < d.y && c.z < d.z;
}

/// Axis-aligned box of voxel indices, both corners inclusive.
struct BoundingBox {
  VoxelCoord min;
  VoxelCoord max;

  [[nodiscard]] constexpr std::size_t extent(int axis) const { return max[axis] - min[axis] + 1; }
  [[nodiscard]] constexpr Dims dims() const { return {extent(0), extent(1), extent(2)}; }
  [[nodiscard]] constexpr std::size_t voxel_count() const { return extent(0) * extent(1) * extent(2); }
  [[nodiscard]] constexpr bool valid() const {
    return min.x <= max.x && min.y <= max.y && min.z <= max.z;
  }
  [[nodiscard]] constexpr bool contains(const VoxelCoord& c) const {
    return c.x >= min.x && c.x <= max.x && c.y >= min.y && c.y <= max.y && c.z >= min.z &&
           c.z <= max.z;
  }
  [[nodiscard]] constexpr bool fits(const Dims& d) const { return valid() && within(max, d); }
  friend constexpr bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

[[nodiscard]] constexpr BoundingBox full_box(const Dims& d) {
  return {{0, 0, 0}, {d.x - 1, d.y - 1, d.z - 1}};
}

inline void validate_geometry(const Dims& d, const Spacing& s) {
  if (d.x == 0 || d.y == 0 || d.z == 0) throw ArgumentError("nonpositive dimension");
  if (!(s.x > 0.0) || !(s.y > 0.0) || !(s.z > 0.0)) throw ArgumentError("nonpositive spacing");
}

/// Dense 3D grid in x-fastest order with physical spacing.
template <typename T>
class Volume {
 public:
  using value_type = T;

  Volume() = default;

  Volume(Dims dims, Spacing spacing, T fill = T{})
      : dims_(dims), spacing_(spacing), data_((validate_geometry(dims, spacing), dims.count()), fill) {}

  Volume(Dims dims, Spacing spacing, std::vector<T> data)
      : dims_(dims), spacing_(spacing), data_(std::move(data)) {
    validate_geometry(dims, spacing);
    if (data_.size() != dims_.count()) throw ArgumentError("data length does not match dims");
  }

  [[nodiscard]] const Dims& dims() const { return dims_; }
  [[nodiscard]] const Spacing& spacing() const { return spacing_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }

  [[nodiscard]] std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims_.x * (y + dims_.y * z);
  }
  [[nodiscard]] std::size_t index(const VoxelCoord& c) const { return index(c.x, c.y, c.z); }
  [[nodiscard]] VoxelCoord coord(std::size_t i) const {
    const std::size_t plane = dims_.slice_count();
    return {i % dims_.x, (i % plane) / dims_.x, i / plane};
  }

  T& operator()(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }
  const T& operator()(std::size_t x, std::size_t y, std::size_t z) const {
    return data_[index(x, y, z)];
  }
  T& operator[](const VoxelCoord& c) { return data_[index(c)]; }
  const T& operator[](const VoxelCoord& c) const { return data_[index(c)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  [[nodiscard]] std::span<T> values() { return data_; }
  [[nodiscard]] std::span<const T> values() const { return data_; }

  /// The x-y plane at z, x-fastest.
  [[nodiscard]] std::span<const T> slice(std::size_t z) const {
    return std::span<const T>(data_).subspan(z * dims_.slice_count(), dims_.slice_count());
  }
  [[nodiscard]] std::span<T> slice(std::size_t z) {
    return std::span<T>(data_).subspan(z * dims_.slice_count(), dims_.slice_count());
  }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  Dims dims_{};
  Spacing spacing_{};
  std::vector<T> data_;
};

/// HU or gradient-magnitude image.
using Image = Volume<float>;

/// Binary object, one byte per voxel holding 0 or 1.
using Mask = Volume<std::uint8_t>;

[[nodiscard]] inline std::size_t count_foreground(const Mask& m) {
  return static_cast<std::size_t>(std::count_if(m.values().begin(), m.values().end(),
                                                [](std::uint8_t b) { return b != 0; }));
}

template <typename A, typename B>
void require_same_grid(const Volume<A>& a, const Volume<B>& b) {
  if (!(a.dims() == b.dims())) throw ArgumentError("dimension mismatch");
}

/// Tight box around the foreground, or nullopt when empty.
[[nodiscard]] inline std::optional<BoundingBox> tight_box(const Mask& m) {
  std::optional<BoundingBox> box;
  const Dims& d = m.dims();
  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x) {
        if (!m(x, y, z)) continue;
        if (!box) {
          box = BoundingBox{{x, y, z}, {x, y, z}};
          continue;
        }
        box->min = {std::min(box->min.x, x), std::min(box->min.y, y), std::min(box->min.z, z)};
        box->max = {std::max(box->max.x, x), std::max(box->max.y, y), std::max(box->max.z, z)};
      }
  return box;
}

/// Neighborhood relation: 6/18/26 in 3D, 4/8 within an axial slice.
enum class Adjacency : int { k4 = 4, k8 = 8, k6 = 6, k18 = 18, k26 = 26 };

[[nodiscard]] inline Adjacency adjacency_from_int(int n) {
  switch (n) {
    case 4: return Adjacency::k4;
    case 8: return Adjacency::k8;
    case 6: return Adjacency::k6;
    case 18: return Adjacency::k18;
    case 26: return Adjacency::k26;
    default: throw ArgumentError("unsupported adjacency " + std::to_string(n));
  }
}

[[nodiscard]] constexpr bool is_planar(Adjacency a) {
  return a == Adjacency::k4 || a == Adjacency::k8;
}

using Offset = std::array<int, 3>;

/// Neighbor offsets for an adjacency, in a fixed (z, y, x) scan order.
[[nodiscard]] inline std::vector<Offset> neighbor_offsets(Adjacency adj) {
  std::vector<Offset> out;
  const int zr = is_planar(adj) ? 0 : 1;
  for (int dz = -zr; dz <= zr; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int nonzero = (dx != 0) + (dy != 0) + (dz != 0);
        if (nonzero == 0) continue;
        bool keep = false;
        switch (adj) {
          case Adjacency::k4:
          case Adjacency::k6: keep = nonzero == 1; break;
          case Adjacency::k18: keep = nonzero <= 2; break;
          case Adjacency::k8:
          case Adjacency::k26: keep = true; break;
        }
        if (keep) out.push_back({dx, dy, dz});
      }
  return out;
}

/// Applies an offset, returning nullopt when the result leaves the grid.
[[nodiscard]] inline std::optional<VoxelCoord> step(const VoxelCoord& c, const Offset& o,
                                                    const Dims& d) {
  const auto move = [](std::size_t v, int delta, std::size_t n) -> std::optional<std::size_t> {
    if (delta < 0 && v == 0) return std::nullopt;
    const std::size_t r = delta < 0 ? v - 1 : (delta > 0 ? v + 1 : v);
    if (r >= n) return std::nullopt;
    return r;
  };
  const auto x = move(c.x, o[0], d.x);
  const auto y = move(c.y, o[1], d.y);
  const auto z = move(c.z, o[2], d.z);
  if (!x || !y || !z) return std::nullopt;
  return VoxelCoord{*x, *y, *z};
}

}  // namespace mandseg
