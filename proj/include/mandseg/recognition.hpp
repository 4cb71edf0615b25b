#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mandseg/error.hpp"
#include "mandseg/forest.hpp"
#include "mandseg/image_ops.hpp"
#include "mandseg/volume.hpp"

namespace mandseg {

/// Slice direction: the slice index runs along x (sagittal), y (coronal) or z (axial).
enum class Axis : int { sagittal = 0, coronal = 1, axial = 2 };

[[nodiscard]] inline std::string to_string(Axis a) {
  switch (a) {
    case Axis::sagittal: return "sagittal";
    case Axis::coronal: return "coronal";
    case Axis::axial: return "axial";
  }
  return "axial";
}

inline constexpr std::array<Axis, 3> kAllAxes{Axis::sagittal, Axis::coronal, Axis::axial};

// ---------------------------------------------------------------------------
// Slice features
// ---------------------------------------------------------------------------

inline constexpr std::size_t kHistogramBins = 32;
inline constexpr double kHistogramLo = -1000.0;
inline constexpr double kHistogramHi = 3000.0;
inline constexpr std::array<double, 3> kBoneLevels{200.0, 600.0, 1100.0};
inline constexpr double kComponentLevel = 600.0;

/// Layout: [0, 32) HU histogram, [32, 35) bone fractions, 35 component count,
/// 36 mean, 37 standard deviation, [38, 40) normalized centroid of bright pixels.
inline constexpr std::size_t kFeatureCount = kHistogramBins + 3 + 1 + 2 + 2;

using SliceFeatures = std::vector<double>;

template <typename T>
[[nodiscard]] SliceFeatures extract_features(const Slice2D<T>& s) {
  const std::size_t n = s.pixels.size();
  if (n == 0) throw ArgumentError("empty slice");
  SliceFeatures f(kFeatureCount, 0.0);

  const double bin_width = (kHistogramHi - kHistogramLo) / double(kHistogramBins);
  double sum = 0.0;
  double sum_sq = 0.0;
  double cu = 0.0;
  double cv = 0.0;
  std::size_t bright = 0;
  std::vector<std::uint8_t> bright_bits(n, 0);
  for (std::size_t v = 0; v < s.height; ++v)
    for (std::size_t u = 0; u < s.width; ++u) {
      const double hu = s.at(u, v);
      const double clipped = std::clamp(hu, kHistogramLo, kHistogramHi);
      const auto bin = std::min(kHistogramBins - 1,
                                static_cast<std::size_t>((clipped - kHistogramLo) / bin_width));
      f[bin] += 1.0;
      for (std::size_t k = 0; k < kBoneLevels.size(); ++k)
        if (hu >= kBoneLevels[k]) f[kHistogramBins + k] += 1.0;
      sum += hu;
      sum_sq += hu * hu;
      if (hu >= kComponentLevel) {
        bright_bits[u + s.width * v] = 1;
        cu += double(u);
        cv += double(v);
        ++bright;
      }
    }
  for (std::size_t k = 0; k < kHistogramBins + kBoneLevels.size(); ++k) f[k] /= double(n);

  const LabelMap lm = connected_components_2d(bright_bits, s.width, s.height, Adjacency::k8);
  f[35] = double(lm.count());
  const double mean = sum / double(n);
  f[36] = mean;
  f[37] = std::sqrt(std::max(0.0, sum_sq / double(n) - mean * mean));
  if (bright == 0) {
    f[38] = 0.5;
    f[39] = 0.5;
  } else {
    f[38] = (cu / double(bright) + 0.5) / double(s.width);
    f[39] = (cv / double(bright) + 0.5) / double(s.height);
  }
  return f;
}

/// Features of every slice along `axis`.
template <typename T>
[[nodiscard]] std::vector<SliceFeatures> extract_axis_features(const Volume<T>& v, Axis axis) {
  const int a = static_cast<int>(axis);
  std::vector<SliceFeatures> out;
  out.reserve(v.dims()[a]);
  for (std::size_t i = 0; i < v.dims()[a]; ++i) out.push_back(extract_features(extract_slice(v, a, i)));
  return out;
}

// ---------------------------------------------------------------------------
// Labels, scoring and fusion
// ---------------------------------------------------------------------------

struct RecognitionConfig {
  double threshold = 0.5;
  std::size_t gap_bridge = 2;
  std::size_t padding = 3;
  std::size_t min_positive_voxels = 10;

  void validate() const {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ArgumentError("recognition threshold must lie in (0, 1)");
  }
};

/// 1 for slices holding at least `min_positive_voxels` ground-truth voxels.
[[nodiscard]] inline std::vector<double> make_labels(const Mask& gt, Axis axis,
                                                     std::size_t min_positive_voxels = 10) {
  const int a = static_cast<int>(axis);
  std::vector<std::size_t> counts(gt.dims()[a], 0);
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (gt[i]) ++counts[gt.coord(i)[a]];
  std::vector<double> labels(counts.size());
  std::transform(counts.begin(), counts.end(), labels.begin(),
                 [&](std::size_t c) { return c >= min_positive_voxels ? 1.0 : 0.0; });
  return labels;
}

struct AxisScores {
  Axis axis = Axis::axial;
  std::vector<double> scores;
};

template <typename T>
[[nodiscard]] AxisScores score_axis(const Volume<T>& v, const Forest& f, Axis axis) {
  AxisScores out{axis, {}};
  for (const auto& feats : extract_axis_features(v, axis)) out.scores.push_back(f.predict(feats));
  return out;
}

/// Inclusive slice interval along one axis.
struct SliceRange {
  std::size_t first = 0;
  std::size_t last = 0;
  friend bool operator==(const SliceRange&, const SliceRange&) = default;
};

/// Binarize at the threshold, fill interior gaps of at most `gap_bridge`
/// slices, keep the longest run (the first on ties), pad and clamp.
[[nodiscard]] inline SliceRange axis_interval(const std::vector<double>& scores,
                                              const RecognitionConfig& cfg) {
  const std::size_t n = scores.size();
  std::vector<std::uint8_t> on(n, 0);
  for (std::size_t i = 0; i < n; ++i) on[i] = scores[i] >= cfg.threshold ? 1 : 0;

  std::size_t i = 0;
  while (i < n) {
    if (on[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && !on[j]) ++j;
    if (i > 0 && j < n && j - i <= cfg.gap_bridge) std::fill(on.begin() + long(i), on.begin() + long(j), 1);
    i = j;
  }

  bool found = false;
  SliceRange best;
  for (std::size_t k = 0; k < n;) {
    if (!on[k]) {
      ++k;
      continue;
    }
    std::size_t e = k;
    while (e + 1 < n && on[e + 1]) ++e;
    if (!found || e - k > best.last - best.first) {
      best = {k, e};
      found = true;
    }
    k = e + 1;
  }
  if (!found) throw RecognitionError("mandible not found");
  best.first = best.first >= cfg.padding ? best.first - cfg.padding : 0;
  best.last = std::min(n - 1, best.last + cfg.padding);
  return best;
}

/// Box whose extent along each axis is that axis' fused interval.
[[nodiscard]] inline BoundingBox fuse_to_bbox(const AxisScores& sagittal, const AxisScores& coronal,
                                              const AxisScores& axial, const RecognitionConfig& cfg) {
  cfg.validate();
  if (sagittal.scores.empty() || coronal.scores.empty() || axial.scores.empty())
    throw ArgumentError("empty axis scores");
  try {
    const SliceRange x = axis_interval(sagittal.scores, cfg);
    const SliceRange y = axis_interval(coronal.scores, cfg);
    const SliceRange z = axis_interval(axial.scores, cfg);
    return {{x.first, y.first, z.first}, {x.last, y.last, z.last}};
  } catch (const RecognitionError&) {
    throw RecognitionError("mandible not found");
  }
}

// ---------------------------------------------------------------------------
// Per-view model
// ---------------------------------------------------------------------------

/// One forest per slice direction, indexed by Axis.
struct RecognitionModel {
  std::array<Forest, 3> forests;

  [[nodiscard]] const Forest& forest(Axis a) const { return forests[static_cast<std::size_t>(a)]; }
};

/// Seed of the forest for `axis`; tree i of that forest uses seed + i.
[[nodiscard]] constexpr std::uint64_t view_seed(std::uint64_t rng_seed, Axis axis) {
  return rng_seed + 100003ULL * static_cast<std::uint64_t>(axis);
}

struct TrainingCase {
  const Image* volume = nullptr;
  const Mask* ground_truth = nullptr;
};

[[nodiscard]] inline RecognitionModel train_recognition(const std::vector<TrainingCase>& cases,
                                                        const ForestParams& params,
                                                        const RecognitionConfig& cfg,
                                                        std::uint64_t rng_seed, unsigned threads = 1) {
  if (cases.empty()) throw ArgumentError("no training cases");
  RecognitionModel model;
  for (Axis axis : kAllAxes) {
    std::vector<SliceFeatures> x;
    std::vector<double> y;
    for (const auto& c : cases) {
      require_same_grid(*c.volume, *c.ground_truth);
      auto feats = extract_axis_features(*c.volume, axis);
      const auto labels = make_labels(*c.ground_truth, axis, cfg.min_positive_voxels);
      x.insert(x.end(), std::make_move_iterator(feats.begin()), std::make_move_iterator(feats.end()));
      y.insert(y.end(), labels.begin(), labels.end());
    }
    model.forests[static_cast<std::size_t>(axis)] =
        train_forest(x, y, params, view_seed(rng_seed, axis), threads);
  }
  return model;
}

template <typename T>
[[nodiscard]] BoundingBox recognize(const Volume<T>& v, const RecognitionModel& model,
                                    const RecognitionConfig& cfg) {
  return fuse_to_bbox(score_axis(v, model.forest(Axis::sagittal), Axis::sagittal),
                      score_axis(v, model.forest(Axis::coronal), Axis::coronal),
                      score_axis(v, model.forest(Axis::axial), Axis::axial), cfg);
}

}  // namespace mandseg
