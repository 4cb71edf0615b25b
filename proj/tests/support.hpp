#pragma once

#include <algorithm>
#include <atomic>
#include <deque>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "mandseg/fuzzy_connectedness.hpp"
#include "mandseg/volume.hpp"

namespace testsupport {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mandseg_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline mandseg::Image random_image(const mandseg::Dims& d, std::mt19937_64& rng, double lo, double hi,
                                   mandseg::Spacing s = {1, 1, 1}) {
  std::uniform_real_distribution<double> u(lo, hi);
  mandseg::Image v(d, s, 0.0f);
  for (float& x : v.values()) x = static_cast<float>(u(rng));
  return v;
}

inline mandseg::Mask random_mask(const mandseg::Dims& d, std::mt19937_64& rng, double p,
                                 mandseg::Spacing s = {1, 1, 1}) {
  std::bernoulli_distribution b(p);
  mandseg::Mask m(d, s, 0);
  for (auto& x : m.values()) x = b(rng) ? 1 : 0;
  return m;
}

/// Connectivity by level sets: a voxel has strength >= t exactly when the
/// seed reaches it through links of affinity >= t. The strength is therefore
/// the largest link affinity level at which it is still reachable. Shares no
/// code with the propagation besides the affinity function.
inline std::vector<double> level_set_connectivity(const mandseg::Image& field, const mandseg::VoxelCoord& seed,
                                                  const mandseg::AffinityParams& params) {
  using namespace mandseg;
  const Dims& d = field.dims();
  const auto offsets = neighbor_offsets(params.adjacency);
  std::set<double> levels;
  for (std::size_t i = 0; i < field.size(); ++i)
    for (const auto& o : offsets)
      if (const auto nb = step(field.coord(i), o, d))
        levels.insert(link_affinity(field[i], field[field.index(*nb)], params));

  std::vector<double> out(field.size(), 0.0);
  out[field.index(seed)] = 1.0;
  for (double t : levels) {
    std::vector<char> seen(field.size(), 0);
    std::deque<std::size_t> q{field.index(seed)};
    seen[q.front()] = 1;
    while (!q.empty()) {
      const std::size_t i = q.front();
      q.pop_front();
      if (i != field.index(seed)) out[i] = std::max(out[i], t);
      for (const auto& o : offsets)
        if (const auto nb = step(field.coord(i), o, d)) {
          const std::size_t j = field.index(*nb);
          if (!seen[j] && link_affinity(field[i], field[j], params) >= t) {
            seen[j] = 1;
            q.push_back(j);
          }
        }
    }
  }
  return out;
}

}  // namespace testsupport
