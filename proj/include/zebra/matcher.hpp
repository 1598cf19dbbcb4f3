#pragma once

// Code map -> 2D-3D correspondences through the codebook lookup table.

#include "zebra/encoder.hpp"
#include "zebra/renderer.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace zebra {

/// Maps ROI pixel coordinates back to the full image: the crop at `origin`
/// of size `crop_size` was resized to `resized_size`.
struct RoiTransform {
  Vec2 origin = Vec2::Zero();
  Vec2 crop_size = Vec2::Ones();
  Vec2 resized_size = Vec2::Ones();

  static RoiTransform identity() { return {}; }

  static RoiTransform crop(Vec2 origin, Vec2 crop_size, Vec2 resized_size) {
    require(crop_size.minCoeff() > 0 && resized_size.minCoeff() > 0, "ROI sizes must be positive");
    return {origin, crop_size, resized_size};
  }

  Vec2 scale() const { return crop_size.cwiseQuotient(resized_size); }
  Vec2 to_image(const Vec2& roi_px) const { return origin + roi_px.cwiseProduct(scale()); }
};

struct Correspondence {
  Vec2 pixel;  // full-image pixel coordinates
  Vec3 point;  // model frame, millimeters
  Code code = 0;
};

struct MatchResult {
  std::vector<Correspondence> correspondences;  // row-major pixel order
  std::size_t masked_pixels = 0;
  std::size_t unknown_codes = 0;
};

/// One correspondence per masked pixel whose code is in the table, taken at
/// the pixel center. Unknown codes are skipped and counted.
inline MatchResult match_codes(const CodeMap& map, const Codebook& cb, const RoiTransform& roi = {}) {
  require(map.radix == cb.params().radix && map.digits == cb.params().digits,
          "code map radix/length does not match codebook");
  MatchResult out;
  for (int v = 0; v < map.height; ++v)
    for (int u = 0; u < map.width; ++u) {
      const auto i = map.index(u, v);
      if (!map.mask[i]) continue;
      ++out.masked_pixels;
      const auto* entry = cb.find(map.codes[i]);
      if (!entry) {
        ++out.unknown_codes;
        continue;
      }
      out.correspondences.push_back({roi.to_image(Vec2(u + 0.5, v + 0.5)), entry->centroid, entry->code});
    }
  return out;
}

/// Keeps the first `keep_digits` digits of every code.
inline CodeMap truncate_code_map(const CodeMap& map, unsigned keep_digits) {
  require(keep_digits >= 1 && keep_digits <= map.digits, "keep_digits must be in [1, d]");
  CodeMap out = map;
  out.digits = keep_digits;
  for (std::size_t i = 0; i < map.pixel_count(); ++i)
    if (map.mask[i]) out.codes[i] = code_prefix(map.codes[i], keep_digits, map.radix, map.digits);
  return out;
}

namespace detail {

// Uniform grid over pixel coordinates with cell size = radius.
class PixelGrid {
public:
  PixelGrid(const std::vector<Correspondence>& corrs, double radius) : corrs_(corrs), radius_(radius) {
    for (std::size_t k = 0; k < corrs.size(); ++k) cells_[key(cell(corrs[k].pixel.x()), cell(corrs[k].pixel.y()))].push_back(k);
  }

  template <typename Fn>
  void for_each_neighbor(std::size_t k, Fn&& fn) const {
    const Vec2& p = corrs_[k].pixel;
    const auto cx = cell(p.x()), cy = cell(p.y());
    for (std::int64_t dy = -1; dy <= 1; ++dy)
      for (std::int64_t dx = -1; dx <= 1; ++dx) {
        const auto it = cells_.find(key(cx + dx, cy + dy));
        if (it == cells_.end()) continue;
        for (const auto other : it->second)
          if (other != k && (corrs_[other].pixel - p).norm() <= radius_) fn(other);
      }
  }

private:
  std::int64_t cell(double x) const { return static_cast<std::int64_t>(std::floor(x / radius_)); }
  static std::uint64_t key(std::int64_t x, std::int64_t y) {
    return (static_cast<std::uint64_t>(x) << 32) ^ (static_cast<std::uint64_t>(y) & 0xFFFFFFFFull);
  }

  const std::vector<Correspondence>& corrs_;
  double radius_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

inline double median(std::vector<double>& values) {
  const auto mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace detail

/// Median 3D distance from each correspondence to those within `radius_px`
/// in the image; nullopt for isolated correspondences.
inline std::vector<std::optional<double>> neighborhood_spread(const std::vector<Correspondence>& corrs,
                                                              double radius_px) {
  require(radius_px > 0, "radius must be positive");
  std::vector<std::optional<double>> out(corrs.size());
  if (corrs.empty()) return out;
  const detail::PixelGrid grid(corrs, radius_px);
  std::vector<double> dists;
  for (std::size_t k = 0; k < corrs.size(); ++k) {
    dists.clear();
    grid.for_each_neighbor(k, [&](std::size_t other) { dists.push_back((corrs[other].point - corrs[k].point).norm()); });
    if (!dists.empty()) out[k] = detail::median(dists);
  }
  return out;
}

/// Drops correspondences whose neighborhood spread exceeds `max_spread_mm`.
/// Isolated correspondences are kept; survivor order is preserved.
inline std::vector<Correspondence> coherence_filter(const std::vector<Correspondence>& corrs, double radius_px,
                                                    double max_spread_mm) {
  const auto spread = neighborhood_spread(corrs, radius_px);
  std::vector<Correspondence> out;
  out.reserve(corrs.size());
  for (std::size_t k = 0; k < corrs.size(); ++k)
    if (!spread[k] || *spread[k] <= max_spread_mm) out.push_back(corrs[k]);
  return out;
}

/// Twice the 95th percentile (nearest rank) of clean neighborhood spreads.
inline double spread_threshold(std::vector<double> spreads) {
  require(!spreads.empty(), "no correspondence has neighbors; cannot calibrate");
  std::sort(spreads.begin(), spreads.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(spreads.size()))) - 1;
  return 2.0 * spreads[std::min(rank, spreads.size() - 1)];
}

/// Filter threshold from clean correspondences of one image.
inline double calibrate_spread_threshold(const std::vector<Correspondence>& clean, double radius_px) {
  std::vector<double> values;
  for (const auto& s : neighborhood_spread(clean, radius_px))
    if (s) values.push_back(*s);
  return spread_threshold(std::move(values));
}

// ---------------------------------------------------------------------------
// CSV interchange: u,v,x,y,z,code_hex

inline void write_correspondences_csv(std::ostream& os, const std::vector<Correspondence>& corrs,
                                      const EncodingParams& params) {
  os << "u,v,x,y,z,code_hex\n";
  char buf[256];
  const int hex_digits = static_cast<int>(2 * params.packed_bytes());
  for (const auto& c : corrs) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g,%0*" PRIx64 "\n", c.pixel.x(), c.pixel.y(),
                  c.point.x(), c.point.y(), c.point.z(), hex_digits, pack_code(c.code, params));
    os << buf;
  }
}

inline std::vector<Correspondence> read_correspondences_csv(std::istream& is, const EncodingParams& params) {
  std::string line;
  std::getline(is, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == "u,v,x,y,z,code_hex", "unexpected correspondence CSV header");
  std::vector<Correspondence> out;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    Correspondence c;
    std::string hex;
    if (!(ls >> c.pixel.x() >> c.pixel.y() >> c.point.x() >> c.point.y() >> c.point.z() >> hex))
      throw Error("malformed correspondence row: " + line);
    c.code = unpack_code(std::stoull(hex, nullptr, 16), params);
    out.push_back(c);
  }
  return out;
}

}  // namespace zebra
