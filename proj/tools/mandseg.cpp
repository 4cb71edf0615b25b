// mandseg: train, segment, evaluate and phantom subcommands.

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mandseg/io.hpp"
#include "mandseg/metrics.hpp"
#include "mandseg/pipeline.hpp"

using namespace mandseg;
namespace fs = std::filesystem;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kRecognition = 2, kDelineation = 3, kIo = 4 };

void write_json(const fs::path& p, const nlohmann::json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(p.string() + ": cannot open for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError(p.string() + ": write failed");
}

// --- PNG overlay ----------------------------------------------------------

struct Rgb {
  unsigned char r, g, b;
};

void write_png(const fs::path& p, std::size_t w, std::size_t h, const std::vector<Rgb>& px) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  FILE* f = std::fopen(p.c_str(), "wb");
  if (!f) throw IoError(p.string() + ": cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
    throw IoError(p.string() + ": PNG encoding failed");
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < h; ++y)
    png_write_row(png, reinterpret_cast<png_const_bytep>(px.data() + y * w));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(f) != 0) throw IoError(p.string() + ": write failed");
}

bool on_contour(const Mask& m, std::size_t x, std::size_t y, std::size_t z) {
  if (!m(x, y, z)) return false;
  const Dims& d = m.dims();
  if (x == 0 || y == 0 || x + 1 == d.x || y + 1 == d.y) return true;
  return !m(x - 1, y, z) || !m(x + 1, y, z) || !m(x, y - 1, z) || !m(x, y + 1, z);
}

std::size_t fullest_slice(const Mask& m) {
  std::size_t best = 0, best_n = 0;
  for (std::size_t z = 0; z < m.dims().z; ++z) {
    std::size_t n = 0;
    for (auto v : m.slice(z)) n += v != 0;
    if (n > best_n) best = z, best_n = n;
  }
  return best;
}

/// Axial slice in a [-200, 1800] HU window with the prediction contour in red
/// and, when given, the ground-truth contour in green (yellow where both).
void write_overlay(const fs::path& p, const Image* volume, const Mask& pred, const Mask* gt) {
  const Dims& d = pred.dims();
  const std::size_t z = fullest_slice(gt ? *gt : pred);
  std::vector<Rgb> px(d.x * d.y);
  for (std::size_t y = 0; y < d.y; ++y)
    for (std::size_t x = 0; x < d.x; ++x) {
      unsigned char g = 0;
      if (volume) {
        const double t = std::clamp(((*volume)(x, y, z) + 200.0) / 2000.0, 0.0, 1.0);
        g = static_cast<unsigned char>(std::lround(255.0 * t));
      }
      Rgb c{g, g, g};
      const bool pc = on_contour(pred, x, y, z);
      const bool gc = gt && on_contour(*gt, x, y, z);
      if (pc && gc) c = {255, 255, 0};
      else if (pc) c = {255, 0, 0};
      else if (gc) c = {0, 255, 0};
      px[x + d.x * y] = c;
    }
  write_png(p, d.x, d.y, px);
}

// --- shared option handling -----------------------------------------------

struct ConfigOptions {
  std::string config_file;
  std::vector<std::string> settings;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;

  void add(CLI::App* app) {
    app->add_option("--config", config_file, "key=value config file");
    app->add_option("--set", settings, "override one config key, e.g. --set fc.theta=0.6");
    app->add_option("--seed", seed, "rng_seed");
    app->add_option("--threads", threads, "worker threads for forest training");
  }

  PipelineConfig resolve() const {
    PipelineConfig c = config_file.empty() ? PipelineConfig{} : load_config(config_file);
    for (const auto& s : settings) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ArgumentError("--set expects key=value, got '" + s + "'");
      apply_setting(c, s.substr(0, eq), s.substr(eq + 1));
    }
    if (seed) c.rng_seed = *seed;
    if (threads) c.threads = *threads;
    return c;
  }
};

// --- subcommands ----------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string model_dir;
  ConfigOptions cfg;
};

void cmd_train(const TrainArgs& a) {
  const PipelineConfig cfg = a.cfg.resolve();
  cfg.validate();
  const auto entries = read_manifest(a.manifest);
  const RecognitionModel model = train_from_manifest(entries, cfg);
  save_model(model, a.model_dir);
  for (Axis axis : kAllAxes) std::cout << forest_path(a.model_dir, axis).string() << '\n';
}

struct SegmentArgs {
  std::string volume;
  std::string model_dir;
  std::string out_dir;
  std::string format = "nii";
  std::string sigma;
  std::optional<double> theta;
  std::optional<int> adjacency;
  bool no_refine = false;
  bool dump_connectivity = false;
  std::string overlay;
  ConfigOptions cfg;
};

void cmd_segment(const SegmentArgs& a) {
  PipelineConfig cfg = a.cfg.resolve();
  if (!a.sigma.empty()) apply_setting(cfg, "fc.sigma", a.sigma);
  if (a.theta) cfg.theta = *a.theta;
  if (a.adjacency) cfg.adjacency = adjacency_from_int(*a.adjacency);
  if (a.no_refine) cfg.refine = false;
  if (!a.out_dir.empty()) cfg.output_dir = a.out_dir;
  cfg.validate();

  const Image volume = load_volume(a.volume);
  const RecognitionModel model = load_model(a.model_dir);
  const SegmentResult r = segment(volume, model, cfg);

  const fs::path out(cfg.output_dir);
  fs::create_directories(out);
  const std::string ext = "." + a.format;
  save_mask(r.mask, out / ("mask" + ext));
  save_mask(r.fc_mask, out / ("fc_mask" + ext));
  if (a.dump_connectivity) save_volume(r.connectivity, out / ("connectivity" + ext), DType::f32);
  write_json(out / "trace.json", trace_to_json(r.trace));
  nlohmann::json log = run_log(r, cfg);
  log["volume"] = a.volume;
  log["model_dir"] = a.model_dir;
  write_json(out / "run.json", log);
  if (!a.overlay.empty()) write_overlay(a.overlay, &volume, r.mask, nullptr);
  std::cout << (out / ("mask" + ext)).string() << '\n';
}

struct EvaluateArgs {
  std::string manifest;
  std::vector<std::string> pred, gt, severity, volume;
  std::string out = "report.json";
  std::string uoi_mode = "box";
  std::string overlay_dir;
};

void cmd_evaluate(const EvaluateArgs& a) {
  std::vector<ManifestEntry> cases;
  if (!a.manifest.empty()) {
    if (!a.pred.empty() || !a.gt.empty()) throw ArgumentError("use either --manifest or --pred/--gt");
    cases = read_manifest(a.manifest);
  } else {
    if (a.pred.empty()) throw ArgumentError("no cases: give --manifest or --pred/--gt/--severity");
    if (a.pred.size() != a.gt.size() || a.pred.size() != a.severity.size())
      throw ArgumentError("--pred, --gt and --severity list different numbers of cases");
    for (std::size_t i = 0; i < a.pred.size(); ++i)
      cases.push_back({a.pred[i], a.gt[i], severity_from_string(a.severity[i])});
  }
  if (!a.volume.empty() && a.volume.size() != cases.size())
    throw ArgumentError("--volume must list one volume per case");
  if (cases.empty()) throw ArgumentError("manifest lists no cases");
  const UoiMode mode = a.uoi_mode == "box"          ? UoiMode::box
                       : a.uoi_mode == "slice-sets" ? UoiMode::slice_sets
                                                    : throw ArgumentError("--uoi-mode must be box or slice-sets");

  std::vector<MetricsReport> reports;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    const Mask pred = load_mask(c.volume);
    const Mask gt = load_mask(c.ground_truth);
    const auto pb = tight_box(pred), gb = tight_box(gt);
    if (!pb) throw ArgumentError(c.volume.string() + ": empty prediction");
    if (!gb) throw ArgumentError(c.ground_truth.string() + ": empty ground truth");
    MetricsReport r = evaluate(pred, gt, *pb, *gb, c.severity, mode);
    r.case_id = c.volume.string();
    reports.push_back(r);
    if (!a.overlay_dir.empty()) {
      std::optional<Image> vol;
      if (!a.volume.empty()) vol = load_volume(a.volume[i]);
      write_overlay(fs::path(a.overlay_dir) / ("case_" + std::to_string(i) + ".png"), vol ? &*vol : nullptr,
                    pred, &gt);
    }
  }
  const nlohmann::json j = report_to_json(reports);
  write_json(a.out, j);
  std::cout << j["groups"].dump(2) << '\n';
}

struct PhantomArgs {
  std::string severity = "low";
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  std::size_t condyle_gap = 0;
  std::string format = "nii";
};

void cmd_phantom(const PhantomArgs& a) {
  PhantomParams p;
  p.severity = severity_from_string(a.severity);
  p.rng_seed = a.seed;
  p.condyle_gap = a.condyle_gap;
  const PhantomCase c = generate(p);

  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  const std::string stem = "phantom_" + a.severity + "_" + std::to_string(a.seed);
  const std::string ext = "." + a.format;
  save_volume(c.volume, dir / (stem + ext), DType::i16);
  save_mask(c.gt_mandible, dir / (stem + "_gt" + ext));
  save_mask(c.gt_teeth, dir / (stem + "_teeth" + ext));
  save_mask(c.gt_skull, dir / (stem + "_skull" + ext));

  const std::string line = manifest_line({stem + ext, stem + "_gt" + ext, p.severity});
  std::ofstream manifest(dir / "manifest.tsv", std::ios::app);
  if (!manifest) throw IoError((dir / "manifest.tsv").string() + ": cannot open for writing");
  manifest << line << '\n';
  std::cout << line << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mandible segmentation from CT: recognition forests, fuzzy connectedness, refinement"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train the three per-view recognition forests");
  t->add_option("--manifest", train.manifest, "volume<TAB>gt<TAB>severity per line")->required();
  t->add_option("--model", train.model_dir, "output directory for forest_*.json")->required();
  train.cfg.add(t);

  SegmentArgs seg;
  auto* s = app.add_subcommand("segment", "segment one volume");
  s->add_option("--volume", seg.volume, "CT volume (.nii or .raw)")->required();
  s->add_option("--model", seg.model_dir, "directory holding forest_*.json")->required();
  s->add_option("--out", seg.out_dir, "output directory (default: config output_dir)");
  s->add_option("--format", seg.format, "output format")->check(CLI::IsMember({"nii", "raw"}));
  s->add_option("--sigma", seg.sigma, "affinity sigma, or 'estimate'");
  s->add_option("--theta", seg.theta, "connectivity threshold in (0, 1]");
  s->add_option("--adjacency", seg.adjacency, "6, 18 or 26");
  s->add_flag("--no-refine", seg.no_refine, "skip slice-wise refinement");
  s->add_flag("--dump-connectivity", seg.dump_connectivity, "write the connectivity map as float32");
  s->add_option("--overlay", seg.overlay, "write a PNG of the fullest axial slice with the mask contour");
  seg.cfg.add(s);

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "score predictions against ground truth");
  e->add_option("--manifest", ev.manifest, "pred<TAB>gt<TAB>severity per line");
  e->add_option("--pred", ev.pred, "predicted masks");
  e->add_option("--gt", ev.gt, "ground-truth masks");
  e->add_option("--severity", ev.severity, "low, medium or high per case");
  e->add_option("--volume", ev.volume, "CT volumes, used as overlay background");
  e->add_option("--out", ev.out, "report path");
  e->add_option("--uoi-mode", ev.uoi_mode, "box or slice-sets");
  e->add_option("--overlay", ev.overlay_dir, "directory for per-case PNG overlays");

  PhantomArgs ph;
  auto* p = app.add_subcommand("phantom", "generate a synthetic CT case");
  p->add_option("--severity", ph.severity)->check(CLI::IsMember({"low", "medium", "high"}));
  p->add_option("--seed", ph.seed);
  p->add_option("--out", ph.out_dir, "output directory; manifest.tsv is appended");
  p->add_option("--condyle-gap", ph.condyle_gap, "slices between condyles and skull (0 = touching)");
  p->add_option("--format", ph.format)->check(CLI::IsMember({"nii", "raw"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*t) cmd_train(train);
    else if (*s) cmd_segment(seg);
    else if (*e) cmd_evaluate(ev);
    else if (*p) cmd_phantom(ph);
    return kOk;
  } catch (const RecognitionError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kRecognition;
  } catch (const DelineationError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kDelineation;
  } catch (const IoError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kIo;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kUsage;
  }
}
