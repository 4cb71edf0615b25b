#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mandseg/error.hpp"
#include "mandseg/volume.hpp"

namespace mandseg {

enum class VolumeFormat { nifti1, raw };

/// Element type written to disk.
enum class DType { i16, u8, f32 };

[[nodiscard]] inline std::string to_string(DType t) {
  switch (t) {
    case DType::i16: return "i16";
    case DType::u8: return "u8";
    case DType::f32: return "f32";
  }
  return "f32";
}

[[nodiscard]] inline DType dtype_from_string(const std::string& s) {
  if (s == "i16") return DType::i16;
  if (s == "u8") return DType::u8;
  if (s == "f32") return DType::f32;
  throw IoError("dtype: unsupported '" + s + "' (expected i16, u8 or f32)");
}

/// ".nii" selects NIfTI-1, ".raw" the raw format with a "<path>.txt" sidecar.
[[nodiscard]] inline VolumeFormat format_from_path(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".nii") return VolumeFormat::nifti1;
  if (ext == ".raw") return VolumeFormat::raw;
  throw IoError(p.string() + ": unknown volume format (expected .nii or .raw)");
}

[[nodiscard]] inline std::filesystem::path sidecar_path(const std::filesystem::path& p) {
  return std::filesystem::path(p.string() + ".txt");
}

namespace detail {

inline std::vector<char> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError(p.string() + ": cannot open for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(p.string() + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(p.string() + ": write failed");
}

template <typename T>
T load_scalar(const char* src, bool swap) {
  std::array<char, sizeof(T)> b;
  std::memcpy(b.data(), src, sizeof(T));
  if (swap) std::reverse(b.begin(), b.end());
  return std::bit_cast<T>(b);
}

/// Little-endian store.
template <typename T>
void store_scalar(char* dst, T value) {
  auto b = std::bit_cast<std::array<char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
  std::memcpy(dst, b.data(), sizeof(T));
}

inline constexpr bool kNativeLittle = std::endian::native == std::endian::little;

inline std::size_t dtype_size(DType t) { return t == DType::u8 ? 1 : (t == DType::i16 ? 2 : 4); }

/// Decodes `count` elements stored with the given byte order.
inline std::vector<float> decode(const char* src, std::size_t count, DType t, bool little) {
  const bool swap = little != kNativeLittle;
  std::vector<float> out(count);
  const std::size_t w = dtype_size(t);
  for (std::size_t i = 0; i < count; ++i) {
    const char* p = src + i * w;
    switch (t) {
      case DType::u8: out[i] = static_cast<float>(static_cast<std::uint8_t>(*p)); break;
      case DType::i16: out[i] = static_cast<float>(load_scalar<std::int16_t>(p, swap)); break;
      case DType::f32: out[i] = load_scalar<float>(p, swap); break;
    }
  }
  return out;
}

template <typename T>
std::vector<char> encode(const Volume<T>& v, DType t) {
  const std::size_t w = dtype_size(t);
  std::vector<char> out(v.size() * w);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = static_cast<double>(v[i]);
    char* p = out.data() + i * w;
    switch (t) {
      case DType::u8:
        if (x < 0.0 || x > 255.0 || x != std::floor(x)) throw IoError("value not representable as u8");
        *p = static_cast<char>(static_cast<std::uint8_t>(x));
        break;
      case DType::i16:
        if (x < -32768.0 || x > 32767.0 || x != std::floor(x))
          throw IoError("value not representable as i16");
        store_scalar<std::int16_t>(p, static_cast<std::int16_t>(x));
        break;
      case DType::f32: store_scalar<float>(p, static_cast<float>(x)); break;
    }
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// NIfTI-1 (single file, uncompressed)
// ---------------------------------------------------------------------------

inline constexpr std::size_t kNiftiHeaderSize = 348;
inline constexpr std::size_t kNiftiDataOffset = 352;

namespace detail {

inline DType nifti_dtype(std::int16_t code, const std::string& where) {
  switch (code) {
    case 2: return DType::u8;
    case 4: return DType::i16;
    case 16: return DType::f32;
    default: throw IoError(where + "datatype: unsupported code " + std::to_string(code));
  }
}

inline std::int16_t nifti_code(DType t) { return t == DType::u8 ? 2 : (t == DType::i16 ? 4 : 16); }

}  // namespace detail

/// Reads dim[1..3], pixdim[1..3], datatype, vox_offset and scl_slope/scl_inter
/// (applied when the slope is nonzero). Either byte order is accepted.
[[nodiscard]] inline Image read_nifti(const std::filesystem::path& path) {
  const std::vector<char> bytes = detail::read_file(path);
  const std::string where = path.string() + ": ";
  if (bytes.size() < kNiftiHeaderSize) throw IoError(where + "sizeof_hdr: file shorter than 348 bytes");
  const char* h = bytes.data();

  bool swap = false;
  if (detail::load_scalar<std::int32_t>(h, false) != 348) {
    if (detail::load_scalar<std::int32_t>(h, true) != 348) throw IoError(where + "sizeof_hdr: not 348");
    swap = true;
  }
  if (std::memcmp(h + 344, "n+1", 4) != 0) throw IoError(where + "magic: not a single-file NIfTI-1");

  const auto dim = [&](int k) { return detail::load_scalar<std::int16_t>(h + 40 + 2 * k, swap); };
  const auto pixdim = [&](int k) { return detail::load_scalar<float>(h + 76 + 4 * k, swap); };
  const int ndim = dim(0);
  if (ndim < 1 || ndim > 7) throw IoError(where + "dim[0]: invalid rank " + std::to_string(ndim));
  std::array<std::size_t, 3> n{1, 1, 1};
  Spacing spacing;
  for (int k = 1; k <= 3; ++k) {
    if (k > ndim) continue;
    const std::int16_t dk = dim(k);
    if (dk <= 0) throw IoError(where + "dim[" + std::to_string(k) + "]: nonpositive dimension");
    n[k - 1] = static_cast<std::size_t>(dk);
    const float pk = pixdim(k);
    if (!(pk > 0.0f) || !std::isfinite(pk))
      throw IoError(where + "pixdim[" + std::to_string(k) + "]: nonpositive spacing");
    (k == 1 ? spacing.x : (k == 2 ? spacing.y : spacing.z)) = pk;
  }
  for (int k = 4; k <= ndim; ++k)
    if (dim(k) != 1) throw IoError(where + "dim[" + std::to_string(k) + "]: only 3D volumes are supported");

  const DType t = detail::nifti_dtype(detail::load_scalar<std::int16_t>(h + 70, swap), where);
  const float vox_offset = detail::load_scalar<float>(h + 108, swap);
  if (!(vox_offset >= float(kNiftiHeaderSize)) || vox_offset != std::floor(vox_offset))
    throw IoError(where + "vox_offset: invalid value");
  const float slope = detail::load_scalar<float>(h + 112, swap);
  const float inter = detail::load_scalar<float>(h + 116, swap);

  const Dims d{n[0], n[1], n[2]};
  const auto offset = static_cast<std::size_t>(vox_offset);
  const std::size_t need = d.count() * detail::dtype_size(t);
  if (bytes.size() < offset + need)
    throw IoError(where + "data: truncated (expected " + std::to_string(need) + " bytes after vox_offset)");
  const bool file_little = detail::kNativeLittle != swap;
  std::vector<float> data = detail::decode(h + offset, d.count(), t, file_little);
  if (slope != 0.0f && std::isfinite(slope))
    for (float& x : data) x = x * slope + inter;
  return Image(d, spacing, std::move(data));
}

template <typename T>
void write_nifti(const Volume<T>& v, const std::filesystem::path& path, DType t) {
  std::vector<char> bytes(kNiftiDataOffset, 0);
  char* h = bytes.data();
  detail::store_scalar<std::int32_t>(h, 348);
  detail::store_scalar<std::int16_t>(h + 40, 3);
  const Dims& d = v.dims();
  for (int k = 0; k < 3; ++k) {
    if (d[k] > 32767) throw IoError(path.string() + ": dim[" + std::to_string(k + 1) + "]: too large");
    detail::store_scalar<std::int16_t>(h + 42 + 2 * k, static_cast<std::int16_t>(d[k]));
  }
  for (int k = 4; k <= 7; ++k) detail::store_scalar<std::int16_t>(h + 40 + 2 * k, 1);
  detail::store_scalar<std::int16_t>(h + 70, detail::nifti_code(t));
  detail::store_scalar<std::int16_t>(h + 72, static_cast<std::int16_t>(8 * detail::dtype_size(t)));
  detail::store_scalar<float>(h + 76, 1.0f);
  for (int k = 0; k < 3; ++k) detail::store_scalar<float>(h + 80 + 4 * k, static_cast<float>(v.spacing()[k]));
  detail::store_scalar<float>(h + 108, float(kNiftiDataOffset));
  detail::store_scalar<float>(h + 112, 0.0f);
  h[123] = 2;  // xyzt_units: mm
  std::memcpy(h + 344, "n+1", 4);
  const std::vector<char> payload = detail::encode(v, t);
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  detail::write_file(path, bytes);
}

// ---------------------------------------------------------------------------
// Raw little-endian payload with a key=value sidecar
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> parse_list(const std::string& key, const std::string& value,
                                      const std::string& where) {
  std::vector<double> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw IoError(where + key + ": cannot parse '" + value + "'");
    }
  }
  if (out.size() != 3) throw IoError(where + key + ": expected three comma-separated values");
  return out;
}

}  // namespace detail

[[nodiscard]] inline Image read_raw(const std::filesystem::path& path) {
  const auto side = sidecar_path(path);
  const std::string where = side.string() + ": ";
  std::ifstream in(side);
  if (!in) throw IoError(where + "cannot open sidecar");
  std::map<std::string, std::string> kv;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError(where + "malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (const char* key : {"dims", "spacing", "dtype"})
    if (!kv.count(key)) throw IoError(where + key + ": missing");

  const auto dl = detail::parse_list("dims", kv["dims"], where);
  for (double x : dl)
    if (!(x >= 1.0) || x != std::floor(x)) throw IoError(where + "dims: nonpositive dimension");
  const auto sl = detail::parse_list("spacing", kv["spacing"], where);
  for (double x : sl)
    if (!(x > 0.0) || !std::isfinite(x)) throw IoError(where + "spacing: nonpositive spacing");
  const DType t = dtype_from_string(kv["dtype"]);

  const Dims d{static_cast<std::size_t>(dl[0]), static_cast<std::size_t>(dl[1]),
               static_cast<std::size_t>(dl[2])};
  const std::vector<char> bytes = detail::read_file(path);
  const std::size_t need = d.count() * detail::dtype_size(t);
  if (bytes.size() != need)
    throw IoError(path.string() + ": data: expected " + std::to_string(need) + " bytes, found " +
                  std::to_string(bytes.size()));
  return Image(d, Spacing{sl[0], sl[1], sl[2]}, detail::decode(bytes.data(), d.count(), t, true));
}

template <typename T>
void write_raw(const Volume<T>& v, const std::filesystem::path& path, DType t) {
  detail::write_file(path, detail::encode(v, t));
  std::ostringstream side;
  side.precision(17);
  const Dims& d = v.dims();
  const Spacing& s = v.spacing();
  side << "dims=" << d.x << ',' << d.y << ',' << d.z << '\n'
       << "spacing=" << s.x << ',' << s.y << ',' << s.z << '\n'
       << "dtype=" << to_string(t) << '\n';
  const std::string text = side.str();
  detail::write_file(sidecar_path(path), std::vector<char>(text.begin(), text.end()));
}

// ---------------------------------------------------------------------------
// Format-dispatching entry points
// ---------------------------------------------------------------------------

[[nodiscard]] inline Image load_volume(const std::filesystem::path& path, VolumeFormat f) {
  return f == VolumeFormat::nifti1 ? read_nifti(path) : read_raw(path);
}

[[nodiscard]] inline Image load_volume(const std::filesystem::path& path) {
  return load_volume(path, format_from_path(path));
}

template <typename T>
void save_volume(const Volume<T>& v, const std::filesystem::path& path, VolumeFormat f, DType t) {
  if (f == VolumeFormat::nifti1)
    write_nifti(v, path, t);
  else
    write_raw(v, path, t);
}

template <typename T>
void save_volume(const Volume<T>& v, const std::filesystem::path& path, DType t) {
  save_volume(v, path, format_from_path(path), t);
}

/// Stored as u8; nonzero voxels load as 1.
inline void save_mask(const Mask& m, const std::filesystem::path& path, VolumeFormat f) {
  save_volume(m, path, f, DType::u8);
}

inline void save_mask(const Mask& m, const std::filesystem::path& path) {
  save_mask(m, path, format_from_path(path));
}

[[nodiscard]] inline Mask to_mask(const Image& v) {
  Mask m(v.dims(), v.spacing(), 0);
  for (std::size_t i = 0; i < v.size(); ++i) m[i] = v[i] != 0.0f ? 1 : 0;
  return m;
}

[[nodiscard]] inline Mask load_mask(const std::filesystem::path& path, VolumeFormat f) {
  return to_mask(load_volume(path, f));
}

[[nodiscard]] inline Mask load_mask(const std::filesystem::path& path) {
  return load_mask(path, format_from_path(path));
}

}  // namespace mandseg
