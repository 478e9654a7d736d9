#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxgan/csv.hpp"
#include "voxgan/rng.hpp"
#include "voxgan/voxel_grid.hpp"

// Synthetic stand-in datasets: Voronoi grain tessellations for training and
// analytic solids (sphere/cuboid/ellipsoid) for classification. Everything is
// bitwise deterministic in the spec fields plus seed.

namespace voxgan {

enum class SolidKind { sphere, cuboid, ellipsoid };

inline const char* solid_kind_name(SolidKind k) {
  switch (k) {
    case SolidKind::sphere: return "sphere";
    case SolidKind::cuboid: return "cuboid";
    case SolidKind::ellipsoid: return "ellipsoid";
  }
  throw std::invalid_argument("solid_kind_name: bad kind");
}

inline SolidKind parse_solid_kind(const std::string& s) {
  if (s == "sphere") return SolidKind::sphere;
  if (s == "cuboid") return SolidKind::cuboid;
  if (s == "ellipsoid") return SolidKind::ellipsoid;
  throw std::invalid_argument("parse_solid_kind: unknown kind '" + s + "'");
}

struct SynthSpec {
  std::int64_t size = 16;  // edge of each exported cubic grid
  std::int64_t count = 1;
  std::uint64_t seed = 1;

  // voronoi: seeds per tessellation volume and the volume edge
  std::int64_t seed_points = 60;
  std::int64_t volume_size = 32;

  // solids: base semi-axis range and secondary-axis aspect range
  double min_radius = 2.5;
  double max_radius = 5.5;
  double min_aspect = 0.45;
  double max_aspect = 0.8;

  void validate() const {
    if (size < 4) throw std::invalid_argument("synth: size must be at least 4");
    if (count < 1) throw std::invalid_argument("synth: count must be positive");
    if (seed_points < 1) throw std::invalid_argument("synth: need at least one seed point");
    if (volume_size < size) throw std::invalid_argument("synth: volume smaller than grain cube");
    if (seed_points > volume_size * volume_size * volume_size) {
      throw std::invalid_argument("synth: more seed points than voxels");
    }
    if (min_radius <= 0 || max_radius < min_radius) {
      throw std::invalid_argument("synth: bad radius range");
    }
    if (min_aspect <= 0 || max_aspect < min_aspect || max_aspect > 1.0) {
      throw std::invalid_argument("synth: bad aspect range");
    }
  }
};

// --- Voronoi ------------------------------------------------------------

// Labels every voxel with its nearest seed, Euclidean on voxel indices;
// ties go to the lowest seed index. Seed i gets label i+1.
inline LabeledVolume voronoi_from_seeds(Dims dims,
                                        const std::vector<std::array<std::int64_t, 3>>& seeds,
                                        float pitch = 1.0f) {
  if (seeds.empty()) throw std::invalid_argument("voronoi: need at least one seed");
  for (const auto& s : seeds) {
    if (!dims.contains(s[0], s[1], s[2])) {
      throw std::invalid_argument("voronoi: seed outside volume");
    }
  }
  LabeledVolume out(dims, pitch);
  for (std::int64_t x = 0; x < dims.nx; ++x) {
    for (std::int64_t y = 0; y < dims.ny; ++y) {
      for (std::int64_t z = 0; z < dims.nz; ++z) {
        std::int64_t best = 0;
        std::int64_t best_d2 = std::numeric_limits<std::int64_t>::max();
        for (std::size_t i = 0; i < seeds.size(); ++i) {
          const std::int64_t dx = x - seeds[i][0];
          const std::int64_t dy = y - seeds[i][1];
          const std::int64_t dz = z - seeds[i][2];
          const std::int64_t d2 = dx * dx + dy * dy + dz * dz;
          if (d2 < best_d2) {
            best_d2 = d2;
            best = static_cast<std::int64_t>(i);
          }
        }
        out.labels[static_cast<std::size_t>(dims.index(x, y, z))] =
            static_cast<std::uint32_t>(best + 1);
      }
    }
  }
  return out;
}

inline LabeledVolume voronoi_grains(const SynthSpec& spec) {
  spec.validate();
  const Dims dims{spec.volume_size, spec.volume_size, spec.volume_size};
  Rng rng(spec.seed);
  std::set<std::uint64_t> used;
  std::vector<std::array<std::int64_t, 3>> seeds;
  while (static_cast<std::int64_t>(seeds.size()) < spec.seed_points) {
    const auto idx = rng.below(static_cast<std::uint64_t>(dims.count()));
    if (!used.insert(idx).second) continue;
    const auto i = static_cast<std::int64_t>(idx);
    seeds.push_back({i / (dims.nz * dims.ny), (i / dims.nz) % dims.ny, i % dims.nz});
  }
  return voronoi_from_seeds(dims, seeds);
}

// Tessellates as many volumes as needed (one derived seed per volume) and
// exports grains centered into size^3 cubes until `count` are collected.
inline std::vector<VoxelGrid> voronoi_grain_dataset(const SynthSpec& spec) {
  spec.validate();
  std::vector<VoxelGrid> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (std::int64_t volume = 0; static_cast<std::int64_t>(out.size()) < spec.count; ++volume) {
    SynthSpec one = spec;
    one.seed = derive_seed(spec.seed, "voronoi-volume-" + std::to_string(volume));
    const auto labeled = voronoi_grains(one);
    const auto k = labeled.label_count();
    for (std::uint32_t label = 1;
         label <= k && static_cast<std::int64_t>(out.size()) < spec.count; ++label) {
      out.push_back(extract_grain(labeled, label, spec.size));
    }
  }
  return out;
}

// --- analytic solids ------------------------------------------------------

// Geometry in voxel-center coordinates: voxel (x,y,z) has center
// (x+0.5, y+0.5, z+0.5) inside the [0,n]^3 box.
struct SolidParams {
  SolidKind kind = SolidKind::sphere;
  std::array<double, 3> center{0, 0, 0};
  std::array<double, 3> semi{1, 1, 1};  // sphere reads semi[0] only
};

inline VoxelGrid primitive_solid(Dims dims, const SolidParams& p) {
  std::array<double, 3> semi = p.semi;
  if (p.kind == SolidKind::sphere) semi = {p.semi[0], p.semi[0], p.semi[0]};
  for (const double s : semi) {
    if (!(s > 0)) throw std::invalid_argument("primitive_solid: semi-axes must be positive");
  }
  const std::array<double, 3> extent{static_cast<double>(dims.nx),
                                     static_cast<double>(dims.ny),
                                     static_cast<double>(dims.nz)};
  for (int a = 0; a < 3; ++a) {
    if (p.center[a] - semi[a] < 0.0 || p.center[a] + semi[a] > extent[a]) {
      throw std::invalid_argument("primitive_solid: shape does not fit in the grid");
    }
  }

  VoxelGrid g(dims);
  for (std::int64_t x = 0; x < dims.nx; ++x) {
    for (std::int64_t y = 0; y < dims.ny; ++y) {
      for (std::int64_t z = 0; z < dims.nz; ++z) {
        const double dx = static_cast<double>(x) + 0.5 - p.center[0];
        const double dy = static_cast<double>(y) + 0.5 - p.center[1];
        const double dz = static_cast<double>(z) + 0.5 - p.center[2];
        bool solid = false;
        switch (p.kind) {
          case SolidKind::sphere:
            solid = dx * dx + dy * dy + dz * dz <= semi[0] * semi[0];
            break;
          case SolidKind::cuboid:
            solid = std::abs(dx) <= semi[0] && std::abs(dy) <= semi[1] &&
                    std::abs(dz) <= semi[2];
            break;
          case SolidKind::ellipsoid: {
            const double qx = dx / semi[0], qy = dy / semi[1], qz = dz / semi[2];
            solid = qx * qx + qy * qy + qz * qz <= 1.0;
            break;
          }
        }
        if (solid) g.at(x, y, z) = 1.0f;
      }
    }
  }
  return g;
}

// --- solid datasets ---------------------------------------------------------

struct SolidSample {
  VoxelGrid grid;
  int label = 0;
  std::string params;  // semicolon-separated key=value, manifest-ready
};

namespace detail {

inline std::array<double, 3> permute_axes(const std::array<double, 3>& s, std::uint64_t perm) {
  static constexpr std::array<std::array<int, 3>, 6> perms = {
      {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
  const auto& p = perms[static_cast<std::size_t>(perm % 6)];
  return {s[static_cast<std::size_t>(p[0])], s[static_cast<std::size_t>(p[1])],
          s[static_cast<std::size_t>(p[2])]};
}

}  // namespace detail

// `count` solids of one kind. Base radius and aspects are drawn uniformly
// from the spec ranges, axes are permuted, and the center jitters by up to
// one voxel. The radius range must leave room for the jitter.
inline std::vector<SolidSample> solid_dataset(const SynthSpec& spec, SolidKind kind,
                                              int label) {
  spec.validate();
  const double half = static_cast<double>(spec.size) / 2.0;
  if (spec.max_radius + 1.0 > half) {
    throw std::invalid_argument("synth: radius range does not fit the grid with jitter");
  }
  const Dims dims{spec.size, spec.size, spec.size};
  Rng rng(derive_seed(spec.seed, std::string("solid-") + solid_kind_name(kind)));
  std::vector<SolidSample> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (std::int64_t i = 0; i < spec.count; ++i) {
    SolidParams p;
    p.kind = kind;
    const double r = rng.uniform(spec.min_radius, spec.max_radius);
    std::array<double, 3> semi{r, r, r};
    if (kind != SolidKind::sphere) {
      semi[1] = r * rng.uniform(spec.min_aspect, spec.max_aspect);
      semi[2] = r * rng.uniform(spec.min_aspect, spec.max_aspect);
      semi = detail::permute_axes(semi, rng.below(6));
    }
    p.semi = semi;
    for (int a = 0; a < 3; ++a) p.center[a] = half + rng.uniform(-1.0, 1.0);
    out.push_back({primitive_solid(dims, p), label,
                   std::string("kind=") + solid_kind_name(kind) + ";sx=" + csv::fmt(semi[0]) +
                       ";sy=" + csv::fmt(semi[1]) + ";sz=" + csv::fmt(semi[2]) +
                       ";cx=" + csv::fmt(p.center[0]) + ";cy=" + csv::fmt(p.center[1]) +
                       ";cz=" + csv::fmt(p.center[2])});
  }
  return out;
}

// labels: 0 sphere, 1 cuboid, 2 ellipsoid, blocked in that order
inline std::vector<SolidSample> three_class_solids(const SynthSpec& spec) {
  std::vector<SolidSample> out;
  out.reserve(static_cast<std::size_t>(3 * spec.count));
  int label = 0;
  for (const SolidKind kind :
       {SolidKind::sphere, SolidKind::cuboid, SolidKind::ellipsoid}) {
    auto part = solid_dataset(spec, kind, label++);
    for (auto& s : part) out.push_back(std::move(s));
  }
  return out;
}

// --- manifest ---------------------------------------------------------------

struct ManifestRow {
  std::string file;
  int label = 0;
  std::string params;

  bool operator==(const ManifestRow&) const = default;
};

inline constexpr const char* kManifestHeader = "file,label,params";

inline void save_manifest(const std::filesystem::path& path,
                          const std::vector<ManifestRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("save_manifest: cannot open " + path.string());
  out << kManifestHeader << '\n';
  for (const auto& r : rows) {
    if (r.file.find_first_of(",\n") != std::string::npos ||
        r.params.find_first_of(",\n") != std::string::npos) {
      throw std::invalid_argument("save_manifest: fields must not contain commas or newlines");
    }
    out << r.file << ',' << r.label << ',' << r.params << '\n';
  }
  if (!out) throw std::runtime_error("save_manifest: write failed for " + path.string());
}

inline std::vector<ManifestRow> load_manifest(const std::filesystem::path& path) {
  const auto rows = csv::read_rows(path);
  const std::vector<std::string> header{"file", "label", "params"};
  if (rows.empty() || rows[0] != header) {
    throw std::runtime_error("load_manifest: missing or bad header in " + path.string());
  }
  std::vector<ManifestRow> out;
  out.reserve(rows.size() - 1);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 3) {
      throw std::runtime_error("load_manifest: row " + std::to_string(i) +
                               " does not have 3 columns");
    }
    out.push_back({rows[i][0], static_cast<int>(csv::to_int(rows[i][1])), rows[i][2]});
  }
  return out;
}

}  // namespace voxgan
