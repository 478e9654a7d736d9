#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxgan/csv.hpp"
#include "voxgan/voxel_grid.hpp"

namespace voxgan {

// Volume, centroid, and central second-order moments of a binary grid, with
// each solid voxel a unit point mass at its center (i+0.5, j+0.5, k+0.5).
struct MomentSet {
  std::int64_t volume = 0;
  double xc = 0, yc = 0, zc = 0;
  double mu200 = 0, mu020 = 0, mu002 = 0;
  double mu110 = 0, mu101 = 0, mu011 = 0;
};

enum class InvalidReason { none, zero_volume, singular_O, nonfinite };

inline const char* to_string(InvalidReason r) {
  switch (r) {
    case InvalidReason::none: return "none";
    case InvalidReason::zero_volume: return "zero_volume";
    case InvalidReason::singular_O: return "singular_O";
    case InvalidReason::nonfinite: return "nonfinite";
  }
  return "?";
}

// Volume-normalized second-order moment invariants. `valid` implies all
// three values are finite and strictly positive.
struct OmegaInvariants {
  double omega1 = 0, omega2 = 0, omega3 = 0;
  bool valid = false;
  InvalidReason reason = InvalidReason::none;
};

// Accumulates in doubled integer coordinates (voxel center x+0.5 becomes the
// integer 2x+1), so the central-moment numerators are exact integers and the
// result is bitwise invariant under integer translation of the grain.
inline MomentSet compute_moments(const VoxelGrid& grid) {
  using I = __int128;
  const Dims d = grid.dims;
  I v = 0, su = 0, sv = 0, sw = 0;
  I suu = 0, svv = 0, sww = 0, suv = 0, suw = 0, svw = 0;
  std::size_t idx = 0;
  for (std::int64_t x = 0; x < d.nx; ++x) {
    const I u = 2 * x + 1;
    for (std::int64_t y = 0; y < d.ny; ++y) {
      const I w2 = 2 * y + 1;
      for (std::int64_t z = 0; z < d.nz; ++z, ++idx) {
        if (grid.data[idx] == 0.0f) continue;
        const I t = 2 * z + 1;
        v += 1;
        su += u;
        sv += w2;
        sw += t;
        suu += u * u;
        svv += w2 * w2;
        sww += t * t;
        suv += u * w2;
        suw += u * t;
        svw += w2 * t;
      }
    }
  }
  MomentSet m;
  m.volume = static_cast<std::int64_t>(v);
  if (v == 0) return m;
  // mu_200 = sum (x_i - xbar)^2 = (V*Suu - Su^2) / (4V) in voxel units
  const double denom = 4.0 * static_cast<double>(m.volume);
  m.xc = static_cast<double>(su) / (2.0 * static_cast<double>(m.volume));
  m.yc = static_cast<double>(sv) / (2.0 * static_cast<double>(m.volume));
  m.zc = static_cast<double>(sw) / (2.0 * static_cast<double>(m.volume));
  m.mu200 = static_cast<double>(v * suu - su * su) / denom;
  m.mu020 = static_cast<double>(v * svv - sv * sv) / denom;
  m.mu002 = static_cast<double>(v * sww - sw * sw) / denom;
  m.mu110 = static_cast<double>(v * suv - su * sv) / denom;
  m.mu101 = static_cast<double>(v * suw - su * sw) / denom;
  m.mu011 = static_cast<double>(v * svw - sv * sw) / denom;
  return m;
}

inline OmegaInvariants omega_invariants(const MomentSet& m) {
  OmegaInvariants inv;
  if (m.volume == 0) {
    inv.reason = InvalidReason::zero_volume;
    return inv;
  }
  const double o1 = m.mu200 + m.mu020 + m.mu002;
  const double o2 = m.mu200 * m.mu020 + m.mu200 * m.mu002 + m.mu020 * m.mu002 -
                    m.mu110 * m.mu110 - m.mu101 * m.mu101 - m.mu011 * m.mu011;
  // determinant of the symmetric second-moment matrix
  const double o3 = m.mu200 * m.mu020 * m.mu002 + 2.0 * m.mu110 * m.mu101 * m.mu011 -
                    m.mu200 * m.mu011 * m.mu011 - m.mu020 * m.mu101 * m.mu101 -
                    m.mu002 * m.mu110 * m.mu110;
  if (!(o1 > 0.0) || !(o2 > 0.0) || !(o3 > 0.0)) {
    inv.reason = InvalidReason::singular_O;
    return inv;
  }
  const double vt = std::cbrt(static_cast<double>(m.volume));
  const double v53 = vt * vt * vt * vt * vt;        // V^(5/3)
  const double v103 = v53 * v53;                    // V^(10/3)
  const double vd = static_cast<double>(m.volume);  // V^5
  const double v5 = vd * vd * vd * vd * vd;
  inv.omega1 = 3.0 * v53 / o1;
  inv.omega2 = 3.0 * v103 / o2;
  inv.omega3 = v5 / o3;
  if (!std::isfinite(inv.omega1) || !std::isfinite(inv.omega2) ||
      !std::isfinite(inv.omega3)) {
    inv.reason = InvalidReason::nonfinite;
    return inv;
  }
  inv.valid = true;
  return inv;
}

inline OmegaInvariants omega_invariants(const VoxelGrid& grid) {
  return omega_invariants(compute_moments(grid));
}

enum class Which { Omega1 = 1, Omega2 = 2, Omega3 = 3 };

inline const char* to_string(Which w) {
  switch (w) {
    case Which::Omega1: return "omega1";
    case Which::Omega2: return "omega2";
    case Which::Omega3: return "omega3";
  }
  return "?";
}

inline Which which_from_string(const std::string& s) {
  if (s == "omega1") return Which::Omega1;
  if (s == "omega2") return Which::Omega2;
  if (s == "omega3") return Which::Omega3;
  throw std::runtime_error("unknown invariant '" + s + "' (expected omega1|omega2|omega3)");
}

inline double pick(const OmegaInvariants& inv, Which w) {
  switch (w) {
    case Which::Omega1: return inv.omega1;
    case Which::Omega2: return inv.omega2;
    case Which::Omega3: return inv.omega3;
  }
  return 0;
}

// Population statistics of one invariant. Invalid entries are counted in
// omitted_count and excluded from mean, std, and the histogram.
struct DistributionSummary {
  Which which = Which::Omega1;
  std::int64_t count = 0;
  double mean = 0;
  double stddev = 0;
  std::vector<double> bin_edges;       // bins+1 edges, uniform
  std::vector<std::int64_t> bin_counts;
  std::int64_t omitted_count = 0;
};

inline DistributionSummary summarize(const std::vector<OmegaInvariants>& population,
                                     std::int64_t bins, Which which) {
  if (population.empty()) throw std::runtime_error("summarize: empty population");
  if (bins <= 0) throw std::runtime_error("summarize: bins must be positive");

  DistributionSummary s;
  s.which = which;
  std::vector<double> vals;
  vals.reserve(population.size());
  for (const auto& inv : population) {
    if (inv.valid) {
      vals.push_back(pick(inv, which));
    } else {
      ++s.omitted_count;
    }
  }
  if (vals.empty()) throw std::runtime_error("summarize: empty distribution");
  s.count = static_cast<std::int64_t>(vals.size());

  double sum = 0;
  for (double v : vals) sum += v;
  s.mean = sum / static_cast<double>(vals.size());
  double sq = 0;
  for (double v : vals) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / static_cast<double>(vals.size()));

  double lo = vals[0], hi = vals[0];
  for (double v : vals) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  s.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::int64_t i = 0; i <= bins; ++i) {
    s.bin_edges[static_cast<std::size_t>(i)] = lo + width * static_cast<double>(i);
  }
  s.bin_edges.back() = hi;
  s.bin_counts.assign(static_cast<std::size_t>(bins), 0);
  for (double v : vals) {
    std::int64_t b = width > 0
        ? static_cast<std::int64_t>((v - lo) / width)
        : 0;
    b = std::min(b, bins - 1);
    ++s.bin_counts[static_cast<std::size_t>(b)];
  }
  return s;
}

struct ComparisonRecord {
  Which which = Which::Omega1;
  double mean_a = 0, mean_b = 0, delta_mean = 0;
  double std_a = 0, std_b = 0, std_ratio = 0;
  double intersection = 0;  // in [0, 1]
};

namespace detail {

// Redistributes normalized bin mass onto a common uniform grid, proportional
// to overlap. Degenerate (zero-width) source bins contribute as point masses.
inline std::vector<double> rebin(const DistributionSummary& s, double lo, double hi,
                                 std::size_t bins) {
  std::vector<double> out(bins, 0.0);
  double total = 0;
  for (std::int64_t c : s.bin_counts) total += static_cast<double>(c);
  if (total == 0) return out;
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i < s.bin_counts.size(); ++i) {
    const double mass = static_cast<double>(s.bin_counts[i]) / total;
    if (mass == 0) continue;
    const double l = s.bin_edges[i], u = s.bin_edges[i + 1];
    if (u <= l || width <= 0) {
      std::size_t b = width > 0 ? static_cast<std::size_t>((l - lo) / width) : 0;
      b = std::min(b, bins - 1);
      out[b] += mass;
      continue;
    }
    for (std::size_t b = 0; b < bins; ++b) {
      const double bl = lo + width * static_cast<double>(b);
      const double bu = bl + width;
      const double overlap = std::min(u, bu) - std::max(l, bl);
      if (overlap > 0) out[b] += mass * overlap / (u - l);
    }
  }
  return out;
}

}  // namespace detail

// Compares two summaries of the same invariant with the same bin count.
// delta_mean is b minus a, std_ratio is b over a, and intersection is the
// overlap of the normalized histograms after rebinning onto the union span.
inline ComparisonRecord compare(const DistributionSummary& a,
                                const DistributionSummary& b) {
  if (a.which != b.which) {
    throw std::runtime_error(std::string("compare: mismatched invariants (") +
                             to_string(a.which) + " vs " + to_string(b.which) + ")");
  }
  if (a.bin_counts.size() != b.bin_counts.size()) {
    throw std::runtime_error("compare: mismatched bin counts");
  }
  ComparisonRecord r;
  r.which = a.which;
  r.mean_a = a.mean;
  r.mean_b = b.mean;
  r.delta_mean = b.mean - a.mean;
  r.std_a = a.stddev;
  r.std_b = b.stddev;
  r.std_ratio = b.stddev / a.stddev;

  const double lo = std::min(a.bin_edges.front(), b.bin_edges.front());
  const double hi = std::max(a.bin_edges.back(), b.bin_edges.back());
  if (hi <= lo) {
    r.intersection = 1.0;  // both degenerate at the same point
    return r;
  }
  const std::size_t bins = a.bin_counts.size();
  const auto pa = detail::rebin(a, lo, hi, bins);
  const auto pb = detail::rebin(b, lo, hi, bins);
  double inter = 0;
  for (std::size_t i = 0; i < bins; ++i) inter += std::min(pa[i], pb[i]);
  r.intersection = std::min(1.0, std::max(0.0, inter));
  return r;
}

inline void save_summary(const std::filesystem::path& path,
                         const DistributionSummary& s) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "count,mean,std,omitted_count,which,bins\n";
  out << s.count << ',' << csv::fmt(s.mean) << ',' << csv::fmt(s.stddev) << ','
      << s.omitted_count << ',' << to_string(s.which) << ',' << s.bin_counts.size()
      << '\n';
  out << "lower_edge,upper_edge,count\n";
  for (std::size_t i = 0; i < s.bin_counts.size(); ++i) {
    out << csv::fmt(s.bin_edges[i]) << ',' << csv::fmt(s.bin_edges[i + 1]) << ','
        << s.bin_counts[i] << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline DistributionSummary load_summary(const std::filesystem::path& path) {
  const auto rows = csv::read_rows(path);
  if (rows.size() < 4 || rows[0].size() < 6 || rows[0][0] != "count") {
    throw std::runtime_error("not a summary csv: " + path.string());
  }
  DistributionSummary s;
  s.count = csv::to_int(rows[1][0]);
  s.mean = csv::to_double(rows[1][1]);
  s.stddev = csv::to_double(rows[1][2]);
  s.omitted_count = csv::to_int(rows[1][3]);
  s.which = which_from_string(rows[1][4]);
  const auto bins = static_cast<std::size_t>(csv::to_int(rows[1][5]));
  if (rows.size() != 3 + bins) {
    throw std::runtime_error("summary csv: expected " + std::to_string(bins) +
                             " bin rows in " + path.string());
  }
  s.bin_edges.resize(bins + 1);
  s.bin_counts.resize(bins);
  for (std::size_t i = 0; i < bins; ++i) {
    const auto& row = rows[3 + i];
    if (row.size() < 3) throw std::runtime_error("summary csv: short bin row");
    s.bin_edges[i] = csv::to_double(row[0]);
    s.bin_edges[i + 1] = csv::to_double(row[1]);
    s.bin_counts[i] = csv::to_int(row[2]);
  }
  return s;
}

inline void save_comparison(const std::filesystem::path& path,
                            const ComparisonRecord& r) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "which,mean_a,mean_b,delta_mean,std_a,std_b,std_ratio,intersection\n";
  out << to_string(r.which) << ',' << csv::fmt(r.mean_a) << ',' << csv::fmt(r.mean_b)
      << ',' << csv::fmt(r.delta_mean) << ',' << csv::fmt(r.std_a) << ','
      << csv::fmt(r.std_b) << ',' << csv::fmt(r.std_ratio) << ','
      << csv::fmt(r.intersection) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace voxgan
