#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mandseg/error.hpp"
#include "mandseg/image_ops.hpp"
#include "mandseg/volume.hpp"

namespace mandseg {

/// One axial slice of a mask as a free-standing 2D grid.
struct SliceMask {
  std::size_t nx = 0;
  std::size_t ny = 0;
  double sx = 1.0;
  double sy = 1.0;
  std::vector<std::uint8_t> bits;

  SliceMask() = default;
  SliceMask(std::size_t w, std::size_t h, double px, double py)
      : nx(w), ny(h), sx(px), sy(py), bits(w * h, 0) {}

  [[nodiscard]] std::uint8_t at(std::size_t x, std::size_t y) const { return bits[x + nx * y]; }
  [[nodiscard]] std::uint8_t& at(std::size_t x, std::size_t y) { return bits[x + nx * y]; }
  [[nodiscard]] std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }
  [[nodiscard]] bool empty() const { return count() == 0; }
  friend bool operator==(const SliceMask&, const SliceMask&) = default;
};

[[nodiscard]] inline SliceMask axial_slice(const Mask& m, std::size_t z) {
  if (z >= m.dims().z) throw ArgumentError("slice index out of range");
  SliceMask s(m.dims().x, m.dims().y, m.spacing().x, m.spacing().y);
  const auto src = m.slice(z);
  std::transform(src.begin(), src.end(), s.bits.begin(), [](std::uint8_t v) { return v ? 1 : 0; });
  return s;
}

inline void store_axial_slice(Mask& m, std::size_t z, const SliceMask& s) {
  std::copy(s.bits.begin(), s.bits.end(), m.slice(z).begin());
}

// ---------------------------------------------------------------------------
// Slice statistics
// ---------------------------------------------------------------------------

struct SliceStats {
  std::size_t z = 0;
  std::size_t component_count = 0;
  /// Areas of the 8-connected components in label order, mm^2.
  std::vector<double> component_areas_mm2;
  double total_area_mm2 = 0.0;
  double width_mm = 0.0;
  double height_mm = 0.0;

  [[nodiscard]] double largest_area_mm2() const {
    return component_areas_mm2.empty()
               ? 0.0
               : *std::max_element(component_areas_mm2.begin(), component_areas_mm2.end());
  }
};

[[nodiscard]] inline SliceStats slice_stats(const SliceMask& s, std::size_t z = 0) {
  SliceStats out;
  out.z = z;
  const LabelMap lm = connected_components_2d(s.bits, s.nx, s.ny, Adjacency::k8);
  const double pixel = s.sx * s.sy;
  out.component_count = lm.count();
  for (std::size_t size : lm.component_sizes) {
    out.component_areas_mm2.push_back(double(size) * pixel);
    out.total_area_mm2 += double(size) * pixel;
  }
  std::size_t x0 = s.nx, x1 = 0, y0 = s.ny, y1 = 0;
  for (std::size_t y = 0; y < s.ny; ++y)
    for (std::size_t x = 0; x < s.nx; ++x)
      if (s.at(x, y)) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
  if (x0 <= x1) {
    out.width_mm = double(x1 - x0 + 1) * s.sx;
    out.height_mm = double(y1 - y0 + 1) * s.sy;
  }
  return out;
}

[[nodiscard]] inline SliceStats slice_stats(const Mask& m, std::size_t z) {
  return slice_stats(axial_slice(m, z), z);
}

// ---------------------------------------------------------------------------
// Configuration and trace
// ---------------------------------------------------------------------------

enum class RefineState { Initial, Base, Teeth, Leak, Ending };

[[nodiscard]] inline std::string to_string(RefineState s) {
  switch (s) {
    case RefineState::Initial: return "Initial";
    case RefineState::Base: return "Base";
    case RefineState::Teeth: return "Teeth";
    case RefineState::Leak: return "Leak";
    case RefineState::Ending: return "Ending";
  }
  return "Initial";
}

enum class SliceAction { none, teeth_separated, leak_pruned };

[[nodiscard]] inline std::string to_string(SliceAction a) {
  switch (a) {
    case SliceAction::none: return "none";
    case SliceAction::teeth_separated: return "teeth-separated";
    case SliceAction::leak_pruned: return "leak-pruned";
  }
  return "none";
}

struct RefineConfig {
  /// Largest-component area that moves Initial to Base, mm^2.
  double base_area_mm2 = 300.0;
  /// Component count that moves Base to Teeth.
  std::size_t teeth_components = 3;
  /// Relative growth of width or height against the last accepted slice that flags a leak.
  double change_ratio = 0.30;
  /// A component survives leak pruning when at least this fraction of it lies
  /// on the last accepted slice.
  double overlap_fraction = 0.5;
  /// True when anterior (the face side) is toward low y.
  bool anterior_low_y = true;
  /// Keep teeth voxels in the output.
  bool retain_teeth = false;
  /// Cluster centers closer than this leave a slice unsplit, mm.
  double no_split_mm = 5.0;

  void validate() const {
    if (!(base_area_mm2 > 0.0)) throw ArgumentError("base area threshold must be positive");
    if (teeth_components == 0) throw ArgumentError("teeth component threshold must be positive");
    if (!(change_ratio > 0.0 && change_ratio < 1.0)) throw ArgumentError("change ratio must lie in (0, 1)");
    if (!(overlap_fraction > 0.0 && overlap_fraction <= 1.0))
      throw ArgumentError("overlap fraction must lie in (0, 1]");
    if (!(no_split_mm >= 0.0)) throw ArgumentError("no-split distance must be nonnegative");
  }
};

struct TraceEntry {
  std::size_t z = 0;
  RefineState state = RefineState::Initial;
  /// Statistics of the input slice.
  SliceStats stats;
  SliceAction action = SliceAction::none;
};

/// One entry per axial slice between the lowest and highest nonempty slice of
/// the input. Slices in the Ending state are removed from the output.
struct StateTrace {
  std::vector<TraceEntry> entries;

  [[nodiscard]] std::vector<RefineState> states() const {
    std::vector<RefineState> s;
    for (const auto& e : entries) s.push_back(e.state);
    return s;
  }
};

[[nodiscard]] inline nlohmann::json trace_to_json(const StateTrace& t) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : t.entries)
    entries.push_back({{"z", e.z},
                       {"state", to_string(e.state)},
                       {"action", to_string(e.action)},
                       {"component_count", e.stats.component_count},
                       {"component_areas_mm2", e.stats.component_areas_mm2},
                       {"total_area_mm2", e.stats.total_area_mm2},
                       {"width_mm", e.stats.width_mm},
                       {"height_mm", e.stats.height_mm}});
  return {{"entries", std::move(entries)}};
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

struct KMeansResult {
  /// Sorted ascending, lexicographically by coordinate.
  std::vector<std::vector<double>> centers;
  std::vector<std::size_t> assignments;
  /// Sum of squared distances to the assigned center after each assignment step.
  std::vector<double> objective_history;
  std::size_t iterations = 0;
};

namespace detail {

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace detail

/// Lloyd's algorithm from a farthest-point start. The first center is the
/// point picked by `rng_seed`; each further center is the point farthest from
/// those chosen (lowest index on ties). Stops at an assignment fixpoint or
/// after 100 iterations.
[[nodiscard]] inline KMeansResult kmeans(const std::vector<std::vector<double>>& points,
                                         std::size_t k = 2, std::uint64_t rng_seed = 0) {
  if (k == 0) throw ArgumentError("k must be positive");
  if (points.size() < k) throw ArgumentError("kmeans needs at least k points");
  const std::size_t dim = points[0].size();
  if (dim == 0) throw ArgumentError("zero-dimensional points");
  for (const auto& p : points)
    if (p.size() != dim) throw ArgumentError("points differ in dimension");

  const std::size_t n = points.size();
  std::mt19937_64 rng(rng_seed);
  std::vector<std::vector<double>> centers;
  centers.push_back(points[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (centers.size() < k) {
    std::size_t far = 0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], detail::squared_distance(points[i], centers.back()));
      if (nearest[i] > nearest[far]) far = i;
    }
    centers.push_back(points[far]);
  }

  KMeansResult out;
  out.assignments.assign(n, k);
  for (std::size_t iter = 0; iter < 100; ++iter) {
    bool changed = false;
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = detail::squared_distance(points[i], centers[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = detail::squared_distance(points[i], centers[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      objective += best_d;
      if (out.assignments[i] != best) {
        out.assignments[i] = best;
        changed = true;
      }
    }
    out.objective_history.push_back(objective);
    out.iterations = iter + 1;
    if (!changed) break;
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++sizes[out.assignments[i]];
      for (std::size_t j = 0; j < dim; ++j) sums[out.assignments[i]][j] += points[i][j];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (sizes[c] > 0)
        for (std::size_t j = 0; j < dim; ++j) centers[c][j] = sums[c][j] / double(sizes[c]);
  }

  std::vector<std::size_t> order(k);
  for (std::size_t c = 0; c < k; ++c) order[c] = c;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return centers[a] < centers[b]; });
  std::vector<std::size_t> rank(k);
  for (std::size_t r = 0; r < k; ++r) {
    out.centers.push_back(centers[order[r]]);
    rank[order[r]] = r;
  }
  for (auto& a : out.assignments) a = rank[a];
  return out;
}

// ---------------------------------------------------------------------------
// Slice actions
// ---------------------------------------------------------------------------

struct TeethSplit {
  SliceMask mandible;
  SliceMask teeth;
};

/// Two-class k-means on the anterior-posterior coordinate (mm) of the
/// foreground pixels; the anterior class becomes teeth. Slices with fewer than
/// two pixels, or whose class centers lie within `no_split_mm`, stay whole.
[[nodiscard]] inline TeethSplit separate_teeth(const SliceMask& s, const RefineConfig& cfg) {
  TeethSplit out{s, SliceMask(s.nx, s.ny, s.sx, s.sy)};
  std::vector<std::vector<double>> points;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < s.bits.size(); ++i)
    if (s.bits[i]) {
      points.push_back({double(i / s.nx) * s.sy});
      where.push_back(i);
    }
  if (points.size() < 2) return out;
  const KMeansResult km = kmeans(points, 2, 0);
  if (km.centers[1][0] - km.centers[0][0] < cfg.no_split_mm) return out;
  const std::size_t anterior = cfg.anterior_low_y ? 0 : 1;
  for (std::size_t p = 0; p < where.size(); ++p)
    if (km.assignments[p] == anterior) {
      out.mandible.bits[where[p]] = 0;
      out.teeth.bits[where[p]] = 1;
    }
  return out;
}

[[nodiscard]] inline TeethSplit separate_teeth(const Mask& m, std::size_t z, const RefineConfig& cfg) {
  return separate_teeth(axial_slice(m, z), cfg);
}

/// Keeps the 8-connected components of `s` of which at least
/// `overlap_fraction` of the pixels are set in `prev_accepted`.
[[nodiscard]] inline SliceMask prune_leak(const SliceMask& s, const SliceMask& prev_accepted,
                                          const RefineConfig& cfg) {
  if (prev_accepted.bits.size() != s.bits.size()) throw ArgumentError("slice size mismatch");
  const LabelMap lm = connected_components_2d(s.bits, s.nx, s.ny, Adjacency::k8);
  std::vector<std::size_t> overlap(lm.count() + 1, 0);
  for (std::size_t i = 0; i < s.bits.size(); ++i)
    if (lm.labels[i] && prev_accepted.bits[i]) ++overlap[lm.labels[i]];
  SliceMask out(s.nx, s.ny, s.sx, s.sy);
  for (std::size_t i = 0; i < s.bits.size(); ++i) {
    const std::uint32_t l = lm.labels[i];
    if (l && double(overlap[l]) >= cfg.overlap_fraction * double(lm.component_sizes[l - 1]))
      out.bits[i] = 1;
  }
  return out;
}

[[nodiscard]] inline SliceMask prune_leak(const Mask& m, std::size_t z, const SliceMask& prev_accepted,
                                          const RefineConfig& cfg) {
  return prune_leak(axial_slice(m, z), prev_accepted, cfg);
}

// ---------------------------------------------------------------------------
// State machine
// ---------------------------------------------------------------------------

/// True when width or height grew by more than the change ratio.
[[nodiscard]] inline bool abrupt_growth(const SliceStats& cur, const SliceStats& prev,
                                        const RefineConfig& cfg) {
  const auto grew = [&](double now, double before) {
    return before > 0.0 && now - before > cfg.change_ratio * before;
  };
  return grew(cur.width_mm, prev.width_mm) || grew(cur.height_mm, prev.height_mm);
}

/// Walks the axial slices from the lowest to the highest nonempty one.
/// The first slice is Initial. A slice moves Initial to Base when its largest
/// component reaches the base area, Base to Teeth when it has at least the
/// teeth component count, and Base or Teeth to Leak when, after teeth removal,
/// its width or height grows abruptly against the last accepted slice. The
/// slice that leaves Initial is never a leak. Every
/// Leak slice is pruned against the last accepted slice. An empty slice, or
/// one pruned to nothing, is Ending and so is everything above it.
[[nodiscard]] inline std::pair<Mask, StateTrace> refine(const Mask& m, const RefineConfig& cfg) {
  cfg.validate();
  const auto box = tight_box(m);
  if (!box) throw ArgumentError("refine: empty mask");

  Mask out = m;
  StateTrace trace;
  RefineState state = RefineState::Initial;
  SliceMask prev;
  SliceStats prev_stats;

  for (std::size_t z = box->min.z; z <= box->max.z; ++z) {
    SliceMask s = axial_slice(m, z);
    TraceEntry e{z, state, slice_stats(s, z), SliceAction::none};

    const RefineState before = state;
    if (state != RefineState::Ending) {
      const bool first = z == box->min.z;
      if (e.stats.component_count == 0) {
        state = RefineState::Ending;
      } else if (!first) {
        if (state == RefineState::Initial && e.stats.largest_area_mm2() >= cfg.base_area_mm2)
          state = RefineState::Base;
        if (state == RefineState::Base && e.stats.component_count >= cfg.teeth_components)
          state = RefineState::Teeth;
      }
    }

    if (state == RefineState::Teeth && !cfg.retain_teeth &&
        e.stats.component_count >= cfg.teeth_components) {
      TeethSplit split = separate_teeth(s, cfg);
      if (split.teeth.count() > 0) {
        s = std::move(split.mandible);
        e.action = SliceAction::teeth_separated;
      }
    }

    // The slice entering Base is the reference for later growth, not a leak.
    if (before != RefineState::Initial && (state == RefineState::Base || state == RefineState::Teeth) &&
        abrupt_growth(slice_stats(s, z), prev_stats, cfg))
      state = RefineState::Leak;

    if (state == RefineState::Leak) {
      s = prune_leak(s, prev, cfg);
      e.action = SliceAction::leak_pruned;
      if (s.empty()) state = RefineState::Ending;
    }

    if (state == RefineState::Ending) s.bits.assign(s.bits.size(), 0);

    e.state = state;
    trace.entries.push_back(std::move(e));
    store_axial_slice(out, z, s);
    if (state != RefineState::Ending) {
      prev_stats = slice_stats(s, z);
      prev = std::move(s);
    }
  }
  return {std::move(out), std::move(trace)};
}

/// The trace that `refine` produces for `m`.
[[nodiscard]] inline StateTrace run_state_machine(const Mask& m, const RefineConfig& cfg) {
  return refine(m, cfg).second;
}

}  // namespace mandseg
