#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mandseg/error.hpp"
#include "mandseg/forest.hpp"
#include "mandseg/fuzzy_connectedness.hpp"
#include "mandseg/image_ops.hpp"
#include "mandseg/io.hpp"
#include "mandseg/phantom.hpp"
#include "mandseg/recognition.hpp"
#include "mandseg/refinement.hpp"
#include "mandseg/volume.hpp"

namespace mandseg {

struct PipelineConfig {
  RecognitionConfig recognition;
  ForestParams forest;
  /// Fixed sigma, or nullopt to estimate it from the gradient image.
  std::optional<double> sigma;
  double theta = 0.7;
  Adjacency adjacency = Adjacency::k26;
  AffinityKind affinity = AffinityKind::intensity_difference;
  /// HU window of the bone voxels eligible as seed.
  double seed_hu_lo = kSeedBoneHu;
  double seed_hu_hi = 1500.0;
  /// HU level of the bone mask used for sigma estimation.
  double bone_hu = kSeedBoneHu;
  bool refine = true;
  RefineConfig refinement;
  std::string output_dir = "out";
  std::uint64_t rng_seed = 1;
  unsigned threads = 1;

  void validate() const {
    recognition.validate();
    forest.validate();
    if (sigma && !(*sigma > 0.0 && std::isfinite(*sigma))) throw ArgumentError("sigma must be positive");
    if (!(theta > 0.0 && theta <= 1.0)) throw ArgumentError("theta must lie in (0, 1]");
    if (is_planar(adjacency)) throw ArgumentError("adjacency must be 6, 18 or 26");
    if (seed_hu_lo > seed_hu_hi) throw ArgumentError("seed HU window is empty");
    refinement.validate();
    if (threads == 0) throw ArgumentError("threads must be positive");
  }
};

namespace detail {

inline std::string format_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ArgumentError(key + ": expected a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ArgumentError(key + ": expected a nonnegative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ArgumentError(key + ": integer out of range");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ArgumentError(key + ": expected true or false, got '" + v + "'");
}

}  // namespace detail

/// Every setting as ordered key/value pairs.
[[nodiscard]] inline std::map<std::string, std::string> config_entries(const PipelineConfig& c) {
  using detail::format_double;
  const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"recognition.threshold", format_double(c.recognition.threshold)},
      {"recognition.gap_bridge", std::to_string(c.recognition.gap_bridge)},
      {"recognition.padding", std::to_string(c.recognition.padding)},
      {"recognition.min_positive_voxels", std::to_string(c.recognition.min_positive_voxels)},
      {"forest.tree_count", std::to_string(c.forest.tree_count)},
      {"forest.max_depth", std::to_string(c.forest.max_depth)},
      {"forest.min_leaf", std::to_string(c.forest.min_leaf)},
      {"forest.features_per_split", std::to_string(c.forest.features_per_split)},
      {"forest.bootstrap", b(c.forest.bootstrap)},
      {"fc.sigma", c.sigma ? format_double(*c.sigma) : "estimate"},
      {"fc.theta", format_double(c.theta)},
      {"fc.adjacency", std::to_string(static_cast<int>(c.adjacency))},
      {"fc.affinity", to_string(c.affinity)},
      {"fc.seed_hu_lo", format_double(c.seed_hu_lo)},
      {"fc.seed_hu_hi", format_double(c.seed_hu_hi)},
      {"fc.bone_hu", format_double(c.bone_hu)},
      {"refine.enabled", b(c.refine)},
      {"refine.base_area_mm2", format_double(c.refinement.base_area_mm2)},
      {"refine.teeth_components", std::to_string(c.refinement.teeth_components)},
      {"refine.change_ratio", format_double(c.refinement.change_ratio)},
      {"refine.overlap_fraction", format_double(c.refinement.overlap_fraction)},
      {"refine.anterior_low_y", b(c.refinement.anterior_low_y)},
      {"refine.retain_teeth", b(c.refinement.retain_teeth)},
      {"refine.no_split_mm", format_double(c.refinement.no_split_mm)},
      {"output_dir", c.output_dir},
      {"rng_seed", std::to_string(c.rng_seed)},
      {"threads", std::to_string(c.threads)},
  };
}

/// Applies one key=value setting; unknown keys are an error.
inline void apply_setting(PipelineConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_uint;
  if (key == "recognition.threshold") c.recognition.threshold = parse_double(key, value);
  else if (key == "recognition.gap_bridge") c.recognition.gap_bridge = parse_uint(key, value);
  else if (key == "recognition.padding") c.recognition.padding = parse_uint(key, value);
  else if (key == "recognition.min_positive_voxels") c.recognition.min_positive_voxels = parse_uint(key, value);
  else if (key == "forest.tree_count") c.forest.tree_count = parse_uint(key, value);
  else if (key == "forest.max_depth") c.forest.max_depth = parse_uint(key, value);
  else if (key == "forest.min_leaf") c.forest.min_leaf = parse_uint(key, value);
  else if (key == "forest.features_per_split") c.forest.features_per_split = parse_uint(key, value);
  else if (key == "forest.bootstrap") c.forest.bootstrap = parse_bool(key, value);
  else if (key == "fc.sigma") c.sigma = value == "estimate" ? std::nullopt : std::optional(parse_double(key, value));
  else if (key == "fc.theta") c.theta = parse_double(key, value);
  else if (key == "fc.adjacency") c.adjacency = adjacency_from_int(static_cast<int>(parse_uint(key, value)));
  else if (key == "fc.affinity") c.affinity = affinity_kind_from_string(value);
  else if (key == "fc.seed_hu_lo") c.seed_hu_lo = parse_double(key, value);
  else if (key == "fc.seed_hu_hi") c.seed_hu_hi = parse_double(key, value);
  else if (key == "fc.bone_hu") c.bone_hu = parse_double(key, value);
  else if (key == "refine.enabled") c.refine = parse_bool(key, value);
  else if (key == "refine.base_area_mm2") c.refinement.base_area_mm2 = parse_double(key, value);
  else if (key == "refine.teeth_components") c.refinement.teeth_components = parse_uint(key, value);
  else if (key == "refine.change_ratio") c.refinement.change_ratio = parse_double(key, value);
  else if (key == "refine.overlap_fraction") c.refinement.overlap_fraction = parse_double(key, value);
  else if (key == "refine.anterior_low_y") c.refinement.anterior_low_y = parse_bool(key, value);
  else if (key == "refine.retain_teeth") c.refinement.retain_teeth = parse_bool(key, value);
  else if (key == "refine.no_split_mm") c.refinement.no_split_mm = parse_double(key, value);
  else if (key == "output_dir") c.output_dir = value;
  else if (key == "rng_seed") c.rng_seed = parse_uint(key, value);
  else if (key == "threads") c.threads = static_cast<unsigned>(parse_uint(key, value));
  else throw ArgumentError("unknown config key '" + key + "'");
}

[[nodiscard]] inline std::string config_to_text(const PipelineConfig& c) {
  std::string out;
  for (const auto& [k, v] : config_entries(c)) out += k + "=" + v + "\n";
  return out;
}

/// Parses key=value lines over the defaults. Blank lines and lines starting
/// with '#' are skipped.
[[nodiscard]] inline PipelineConfig config_from_text(const std::string& text,
                                                     PipelineConfig base = PipelineConfig{}) {
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ArgumentError("config line " + std::to_string(line_no) + ": expected key=value");
    const auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    apply_setting(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  base.validate();
  return base;
}

[[nodiscard]] inline PipelineConfig load_config(const std::filesystem::path& p,
                                                PipelineConfig base = PipelineConfig{}) {
  std::ifstream in(p);
  if (!in) throw IoError(p.string() + ": cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_text(ss.str(), std::move(base));
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

[[nodiscard]] inline std::filesystem::path forest_path(const std::filesystem::path& dir, Axis a) {
  return dir / ("forest_" + to_string(a) + ".json");
}

inline void save_model(const RecognitionModel& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (Axis a : kAllAxes) {
    const auto p = forest_path(dir, a);
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(p.string() + ": cannot open for writing");
    out << forest_to_json(m.forest(a)).dump() << '\n';
    if (!out) throw IoError(p.string() + ": write failed");
  }
}

[[nodiscard]] inline RecognitionModel load_model(const std::filesystem::path& dir) {
  RecognitionModel m;
  for (Axis a : kAllAxes) {
    const auto p = forest_path(dir, a);
    std::ifstream in(p);
    if (!in) throw IoError(p.string() + ": cannot open forest file");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw IoError(p.string() + ": " + e.what());
    }
    m.forests[static_cast<std::size_t>(a)] = forest_from_json(j);
    if (m.forests[static_cast<std::size_t>(a)].feature_count != kFeatureCount)
      throw IoError(p.string() + ": feature_count does not match the slice features");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

struct SegmentResult {
  BoundingBox box;
  VoxelCoord seed;
  double sigma = 0.0;
  double theta = 0.0;
  /// Connectivity over the box, zero outside, full grid.
  Volume<double> connectivity;
  /// Thresholded FC object before refinement, full grid.
  Mask fc_mask;
  /// Final output; equals fc_mask when refinement is off.
  Mask mask;
  StateTrace trace;
};

/// Recognition, then fuzzy connectedness on the box, then refinement.
[[nodiscard]] inline SegmentResult segment(const Image& volume, const RecognitionModel& model,
                                           const PipelineConfig& cfg) {
  cfg.validate();
  SegmentResult r;
  r.box = recognize(volume, model, cfg.recognition);

  const Image sub = crop(volume, r.box);
  const Image grad = gradient_magnitude(sub);
  if (cfg.sigma) {
    r.sigma = *cfg.sigma;
  } else {
    const Mask bone = threshold(sub, cfg.bone_hu);
    if (count_foreground(bone) == 0) throw DelineationError("no seed: no bone voxel in bounding box");
    r.sigma = estimate_sigma(grad, bone);
  }
  r.seed = select_seed(volume, r.box, cfg.seed_hu_lo, cfg.seed_hu_hi);
  r.theta = cfg.theta;

  const VoxelCoord local{r.seed.x - r.box.min.x, r.seed.y - r.box.min.y, r.seed.z - r.box.min.z};
  const AffinityParams params{r.sigma, cfg.adjacency, cfg.affinity};
  const ConnectivityMap cm =
      compute_connectivity(cfg.affinity == AffinityKind::gradient_mean ? grad : sub, local, params);
  r.connectivity = uncrop(cm.strength, r.box, volume.dims());
  r.fc_mask = uncrop(threshold_object(cm, cfg.theta), r.box, volume.dims());

  if (cfg.refine) {
    auto [refined, trace] = mandseg::refine(r.fc_mask, cfg.refinement);
    r.mask = std::move(refined);
    r.trace = std::move(trace);
  } else {
    r.mask = r.fc_mask;
  }
  return r;
}

/// Resolved parameters and outcome of one segmentation run.
[[nodiscard]] inline nlohmann::json run_log(const SegmentResult& r, const PipelineConfig& cfg) {
  nlohmann::json config = nlohmann::json::object();
  for (const auto& [k, v] : config_entries(cfg)) config[k] = v;
  return {{"config", std::move(config)},
          {"box", {{"min", {r.box.min.x, r.box.min.y, r.box.min.z}},
                   {"max", {r.box.max.x, r.box.max.y, r.box.max.z}}}},
          {"seed", {r.seed.x, r.seed.y, r.seed.z}},
          {"sigma", r.sigma},
          {"sigma_source", cfg.sigma ? "fixed" : "estimated"},
          {"theta", r.theta},
          {"fc_voxels", count_foreground(r.fc_mask)},
          {"mask_voxels", count_foreground(r.mask)}};
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

/// One case: `volume<TAB>gt<TAB>severity`. Relative paths are resolved
/// against the manifest's directory.
struct ManifestEntry {
  std::filesystem::path volume;
  std::filesystem::path ground_truth;
  Severity severity = Severity::low;
};

[[nodiscard]] inline std::vector<ManifestEntry> parse_manifest(const std::string& text,
                                                               const std::filesystem::path& base_dir) {
  std::vector<ManifestEntry> out;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
    if (fields.size() != 3)
      throw IoError("manifest line " + std::to_string(line_no) + ": expected volume<TAB>gt<TAB>severity");
    const auto resolve = [&](const std::string& f) {
      const std::filesystem::path p(f);
      return p.is_absolute() ? p : base_dir / p;
    };
    try {
      out.push_back({resolve(fields[0]), resolve(fields[1]), severity_from_string(fields[2])});
    } catch (const ArgumentError& e) {
      throw IoError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

[[nodiscard]] inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError(p.string() + ": cannot open manifest");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), p.parent_path());
}

[[nodiscard]] inline std::string manifest_line(const ManifestEntry& e) {
  return e.volume.string() + "\t" + e.ground_truth.string() + "\t" + to_string(e.severity);
}

/// Trains the three per-view forests on every manifest case. All unreadable
/// entries are reported together.
[[nodiscard]] inline RecognitionModel train_from_manifest(const std::vector<ManifestEntry>& entries,
                                                          const PipelineConfig& cfg) {
  if (entries.empty()) throw ArgumentError("manifest lists no cases");
  std::vector<Image> volumes;
  std::vector<Mask> truths;
  std::string failures;
  for (const auto& e : entries) {
    try {
      Image v = load_volume(e.volume);
      Mask g = load_mask(e.ground_truth);
      require_same_grid(v, g);
      volumes.push_back(std::move(v));
      truths.push_back(std::move(g));
    } catch (const Error& err) {
      failures += "\n  " + e.volume.string() + ": " + err.what();
    }
  }
  if (!failures.empty()) throw IoError("unreadable manifest entries:" + failures);
  std::vector<TrainingCase> cases;
  for (std::size_t i = 0; i < volumes.size(); ++i) cases.push_back({&volumes[i], &truths[i]});
  return train_recognition(cases, cfg.forest, cfg.recognition, cfg.rng_seed, cfg.threads);
}

}  // namespace mandseg
