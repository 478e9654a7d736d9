#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxgan {

struct Dims {
  std::int64_t nx = 0, ny = 0, nz = 0;

  std::int64_t count() const { return nx * ny * nz; }
  bool operator==(const Dims&) const = default;

  // row-major, z fastest
  std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return (x * ny + y) * nz + z;
  }
  bool contains(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x >= 0 && x < nx && y >= 0 && y < ny && z >= 0 && z < nz;
  }
};

// Dense scalar occupancy field, values in [0,1].
struct VoxelGrid {
  Dims dims;
  std::vector<float> data;
  float pitch = 1.0f;  // physical voxel edge length; 1.5 for EBSD-style data

  VoxelGrid() = default;
  VoxelGrid(Dims d, float fill = 0.0f, float p = 1.0f)
      : dims(d), data(static_cast<std::size_t>(d.count()), fill), pitch(p) {}

  float& at(std::int64_t x, std::int64_t y, std::int64_t z) {
    return data[static_cast<std::size_t>(dims.index(x, y, z))];
  }
  float at(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return data[static_cast<std::size_t>(dims.index(x, y, z))];
  }

  bool is_binary() const {
    return std::all_of(data.begin(), data.end(),
                       [](float v) { return v == 0.0f || v == 1.0f; });
  }
  std::int64_t solid_count() const {
    return std::count_if(data.begin(), data.end(),
                         [](float v) { return v != 0.0f; });
  }
};

// Per-voxel grain ids: 0 is void, grains are 1..K.
struct LabeledVolume {
  Dims dims;
  std::vector<std::uint32_t> labels;
  float pitch = 1.0f;

  LabeledVolume() = default;
  explicit LabeledVolume(Dims d, float p = 1.0f)
      : dims(d), labels(static_cast<std::size_t>(d.count()), 0), pitch(p) {}

  std::uint32_t label_count() const {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
  }
};

inline VoxelGrid binarize(const VoxelGrid& grid, float threshold = 0.5f) {
  VoxelGrid out(grid.dims, 0.0f, grid.pitch);
  for (std::size_t i = 0; i < grid.data.size(); ++i) {
    out.data[i] = grid.data[i] >= threshold ? 1.0f : 0.0f;
  }
  return out;
}

// Labels each 6-connected (face-adjacent) set of solid voxels. Labels are
// assigned 1..K ordered by descending component volume; ties are broken by
// the component's smallest linear voxel index.
inline LabeledVolume connected_components(const VoxelGrid& grid) {
  const Dims d = grid.dims;
  LabeledVolume out(d, grid.pitch);
  const std::int64_t n = d.count();
  std::vector<std::uint32_t> raw(static_cast<std::size_t>(n), 0);

  struct Component {
    std::uint32_t raw_label;
    std::int64_t volume;
    std::int64_t first_index;
  };
  std::vector<Component> comps;
  std::vector<std::int64_t> stack;
  std::uint32_t next = 0;

  for (std::int64_t start = 0; start < n; ++start) {
    if (grid.data[static_cast<std::size_t>(start)] == 0.0f ||
        raw[static_cast<std::size_t>(start)] != 0) {
      continue;
    }
    ++next;
    std::int64_t volume = 0;
    stack.clear();
    stack.push_back(start);
    raw[static_cast<std::size_t>(start)] = next;
    while (!stack.empty()) {
      const std::int64_t idx = stack.back();
      stack.pop_back();
      ++volume;
      const std::int64_t z = idx % d.nz;
      const std::int64_t y = (idx / d.nz) % d.ny;
      const std::int64_t x = idx / (d.nz * d.ny);
      constexpr std::array<std::array<std::int64_t, 3>, 6> steps = {
          {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};
      for (const auto& s : steps) {
        const std::int64_t ax = x + s[0], ay = y + s[1], az = z + s[2];
        if (!d.contains(ax, ay, az)) continue;
        const std::int64_t aidx = d.index(ax, ay, az);
        if (grid.data[static_cast<std::size_t>(aidx)] == 0.0f) continue;
        if (raw[static_cast<std::size_t>(aidx)] != 0) continue;
        raw[static_cast<std::size_t>(aidx)] = next;
        stack.push_back(aidx);
      }
    }
    comps.push_back({next, volume, start});
  }

  std::sort(comps.begin(), comps.end(), [](const Component& a, const Component& b) {
    if (a.volume != b.volume) return a.volume > b.volume;
    return a.first_index < b.first_index;
  });
  std::vector<std::uint32_t> remap(comps.size() + 1, 0);
  for (std::size_t i = 0; i < comps.size(); ++i) {
    remap[comps[i].raw_label] = static_cast<std::uint32_t>(i + 1);
  }
  for (std::int64_t i = 0; i < n; ++i) {
    out.labels[static_cast<std::size_t>(i)] = remap[raw[static_cast<std::size_t>(i)]];
  }
  return out;
}

inline VoxelGrid largest_component(const VoxelGrid& grid) {
  if (grid.solid_count() == 0) {
    throw std::runtime_error("largest_component: no solid voxels");
  }
  const LabeledVolume labeled = connected_components(grid);
  VoxelGrid out(grid.dims, 0.0f, grid.pitch);
  for (std::size_t i = 0; i < labeled.labels.size(); ++i) {
    out.data[i] = labeled.labels[i] == 1 ? 1.0f : 0.0f;
  }
  return out;
}

// Extracts the voxels carrying `label` into a cube_size^3 grid, centered by
// rounding the grain centroid to the cube center. Voxels falling outside the
// cube are dropped.
inline VoxelGrid extract_grain(const LabeledVolume& vol, std::uint32_t label,
                               std::int64_t cube_size) {
  const Dims d = vol.dims;
  double sx = 0, sy = 0, sz = 0;
  std::int64_t count = 0;
  for (std::int64_t x = 0; x < d.nx; ++x) {
    for (std::int64_t y = 0; y < d.ny; ++y) {
      for (std::int64_t z = 0; z < d.nz; ++z) {
        if (vol.labels[static_cast<std::size_t>(d.index(x, y, z))] != label) continue;
        sx += static_cast<double>(x);
        sy += static_cast<double>(y);
        sz += static_cast<double>(z);
        ++count;
      }
    }
  }
  if (count == 0) {
    throw std::runtime_error("extract_grain: label " + std::to_string(label) +
                             " has no voxels");
  }
  const std::int64_t cx = static_cast<std::int64_t>(std::llround(sx / count));
  const std::int64_t cy = static_cast<std::int64_t>(std::llround(sy / count));
  const std::int64_t cz = static_cast<std::int64_t>(std::llround(sz / count));
  const std::int64_t half = cube_size / 2;

  VoxelGrid out({cube_size, cube_size, cube_size}, 0.0f, vol.pitch);
  for (std::int64_t x = 0; x < d.nx; ++x) {
    for (std::int64_t y = 0; y < d.ny; ++y) {
      for (std::int64_t z = 0; z < d.nz; ++z) {
        if (vol.labels[static_cast<std::size_t>(d.index(x, y, z))] != label) continue;
        const std::int64_t ox = x - cx + half;
        const std::int64_t oy = y - cy + half;
        const std::int64_t oz = z - cz + half;
        if (out.dims.contains(ox, oy, oz)) out.at(ox, oy, oz) = 1.0f;
      }
    }
  }
  return out;
}

}  // namespace voxgan
