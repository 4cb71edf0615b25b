#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "mandseg/error.hpp"
#include "mandseg/fuzzy_connectedness.hpp"
#include "mandseg/volume.hpp"

namespace mandseg {

/// Largest volume brute_force_connectivity accepts.
inline constexpr std::size_t kBruteForceMaxVoxels = 32;

/// Reference connectivity by exhaustive depth-first enumeration of simple
/// paths from the seed. A branch is abandoned once its running minimum cannot
/// beat the best strength already recorded at its end voxel; any path through
/// that voxel is then matched by one through the recorded path. Exponential
/// time; refuses volumes above kBruteForceMaxVoxels.
[[nodiscard]] inline ConnectivityMap brute_force_connectivity(const Image& field, const VoxelCoord& seed,
                                                              const AffinityParams& params) {
  params.validate();
  if (field.size() > kBruteForceMaxVoxels) throw ArgumentError("volume too large for brute force");
  if (!within(seed, field.dims())) throw ArgumentError("seed outside volume");

  const Dims& d = field.dims();
  const auto offsets = neighbor_offsets(params.adjacency);
  std::vector<std::vector<std::pair<std::size_t, double>>> links(field.size());
  for (std::size_t i = 0; i < field.size(); ++i)
    for (const auto& o : offsets)
      if (const auto nb = step(field.coord(i), o, d)) {
        const std::size_t j = field.index(*nb);
        links[i].emplace_back(j, link_affinity(field[i], field[j], params));
      }

  ConnectivityMap out{Volume<double>(d, field.spacing(), 0.0), seed};
  std::vector<std::uint8_t> on_path(field.size(), 0);
  const auto dfs = [&](auto&& self, std::size_t at, double strength) -> void {
    on_path[at] = 1;
    for (const auto& [next, a] : links[at]) {
      if (on_path[next]) continue;
      const double s = std::min(strength, a);
      if (s <= out.strength[next]) continue;
      out.strength[next] = s;
      self(self, next, s);
    }
    on_path[at] = 0;
  };
  const std::size_t s = field.index(seed);
  out.strength[s] = 1.0;
  dfs(dfs, s, 1.0);
  return out;
}

}  // namespace mandseg
