#pragma once

// Flat-label z-buffer rasterizer producing code maps (training labels).
//
// Conventions: a pixel is covered when its center (u+0.5, v+0.5) lies inside
// the projected triangle; centers exactly on an edge belong to the triangle
// for which that edge is a top or left edge. Depth is interpolated as 1/z
// with screen-space barycentrics, which is exact for planar faces. Faces are
// not culled, and nothing is interpolated except depth.

#include "zebra/binary_io.hpp"
#include "zebra/camera.hpp"
#include "zebra/encoder.hpp"
#include "zebra/mesh.hpp"

#include <array>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

namespace zebra {

inline constexpr Code kInvalidCode = ~Code{0};

/// Per-pixel codes with a visibility mask. code(p) is valid exactly where mask(p).
struct CodeMap {
  int width = 0, height = 0;
  unsigned radix = 2, digits = 16;
  std::vector<Code> codes;
  std::vector<std::uint8_t> mask;
  std::vector<float> depth;  // millimeters; 0 where not covered

  CodeMap() = default;
  CodeMap(int w, int h, unsigned r, unsigned d)
      : width(w), height(h), radix(r), digits(d),
        codes(static_cast<std::size_t>(w) * h, kInvalidCode),
        mask(static_cast<std::size_t>(w) * h, 0),
        depth(static_cast<std::size_t>(w) * h, 0.0f) {}

  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }
  std::size_t pixel_count() const { return codes.size(); }
  std::size_t masked_count() const {
    std::size_t n = 0;
    for (auto m : mask) n += m != 0;
    return n;
  }

  void set(std::size_t i, Code code, float z) {
    codes[i] = code;
    mask[i] = 1;
    depth[i] = z;
  }

  void clear(std::size_t i) {
    codes[i] = kInvalidCode;
    mask[i] = 0;
    depth[i] = 0.0f;
  }

  bool operator==(const CodeMap&) const = default;
};

/// Class id of a face from its three vertex class ids: the id shared by any
/// two vertices, otherwise the first vertex's id.
inline Code face_class_id(Code a, Code b, Code c) {
  if (a == b || a == c) return a;
  if (b == c) return b;
  return a;
}

/// Face codes: at every level the face takes face_class_id of its vertices'
/// digits at that level, and the per-level ids are stacked.
inline std::vector<Code> compute_face_codes(const TriangleMesh& mesh, const Codebook& cb) {
  const auto& p = cb.params();
  require(mesh.vertex_count() == cb.vertex_count(), "mesh and codebook disagree on vertex count");
  std::vector<Code> out(mesh.face_count());
  std::array<std::vector<unsigned>, 3> digits;
  for (std::size_t f = 0; f < mesh.face_count(); ++f) {
    for (int k = 0; k < 3; ++k) digits[k] = code_to_digits(cb.encode(mesh.faces[f][k]), p.radix, p.digits);
    Code code = 0;
    for (unsigned j = 0; j < p.digits; ++j)
      code = code * p.radix + face_class_id(digits[0][j], digits[1][j], digits[2][j]);
    out[f] = code;
  }
  return out;
}

/// Front-most face per pixel.
struct Raster {
  int width = 0, height = 0;
  std::vector<std::int32_t> face;  // -1 where empty
  std::vector<double> depth;       // +inf where empty
};

namespace detail {

struct ScreenVertex {
  double x, y, z;  // pixel coordinates and camera depth
};

inline double edge_fn(const ScreenVertex& a, const ScreenVertex& b, double px, double py) {
  return (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
}

// Top or left edge for a triangle with positive edge_fn orientation (y down).
inline bool is_top_left(const ScreenVertex& a, const ScreenVertex& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  return dy < 0 || (dy == 0 && dx > 0);
}

inline void raster_triangle(Raster& out, ScreenVertex a, ScreenVertex b, ScreenVertex c, std::int32_t face_id) {
  double area = edge_fn(a, b, c.x, c.y);
  if (area == 0 || !std::isfinite(area)) return;
  if (area < 0) {
    std::swap(b, c);
    area = -area;
  }
  const double min_x = std::min({a.x, b.x, c.x}), max_x = std::max({a.x, b.x, c.x});
  const double min_y = std::min({a.y, b.y, c.y}), max_y = std::max({a.y, b.y, c.y});
  const int u0 = std::max(0, static_cast<int>(std::floor(min_x - 0.5)));
  const int u1 = std::min(out.width - 1, static_cast<int>(std::ceil(max_x - 0.5)));
  const int v0 = std::max(0, static_cast<int>(std::floor(min_y - 0.5)));
  const int v1 = std::min(out.height - 1, static_cast<int>(std::ceil(max_y - 0.5)));
  if (u0 > u1 || v0 > v1) return;

  const bool tl_bc = is_top_left(b, c), tl_ca = is_top_left(c, a), tl_ab = is_top_left(a, b);
  const double iza = 1.0 / a.z, izb = 1.0 / b.z, izc = 1.0 / c.z;
  for (int v = v0; v <= v1; ++v) {
    const double py = v + 0.5;
    for (int u = u0; u <= u1; ++u) {
      const double px = u + 0.5;
      const double wa = edge_fn(b, c, px, py);
      const double wb = edge_fn(c, a, px, py);
      const double wc = edge_fn(a, b, px, py);
      if (wa < 0 || wb < 0 || wc < 0) continue;
      if ((wa == 0 && !tl_bc) || (wb == 0 && !tl_ca) || (wc == 0 && !tl_ab)) continue;
      const double inv_z = (wa * iza + wb * izb + wc * izc) / area;
      const double z = 1.0 / inv_z;
      const auto i = static_cast<std::size_t>(v) * out.width + u;
      if (z < out.depth[i]) {
        out.depth[i] = z;
        out.face[i] = face_id;
      }
    }
  }
}

}  // namespace detail

/// Near clipping plane in millimeters.
inline constexpr double kNearPlane = 1e-3;

/// Z-buffered rasterization of every face. Faces crossing the near plane are
/// clipped against it.
inline Raster rasterize(const TriangleMesh& mesh, const PoseSE3& pose, const CameraIntrinsics& cam) {
  cam.validate();
  Raster out;
  out.width = cam.width;
  out.height = cam.height;
  out.face.assign(static_cast<std::size_t>(cam.width) * cam.height, -1);
  out.depth.assign(out.face.size(), std::numeric_limits<double>::infinity());

  std::vector<Vec3> cam_pts(mesh.vertex_count());
  for (std::size_t i = 0; i < cam_pts.size(); ++i) cam_pts[i] = pose.apply(mesh.vertices[i]);

  auto to_screen = [&](const Vec3& p) {
    const Vec2 s = cam.project(p);
    return detail::ScreenVertex{s.x(), s.y(), p.z()};
  };

  for (std::size_t f = 0; f < mesh.face_count(); ++f) {
    const auto& face = mesh.faces[f];
    const std::array<Vec3, 3> tri = {cam_pts[face[0]], cam_pts[face[1]], cam_pts[face[2]]};
    const auto id = static_cast<std::int32_t>(f);
    if (tri[0].z() >= kNearPlane && tri[1].z() >= kNearPlane && tri[2].z() >= kNearPlane) {
      detail::raster_triangle(out, to_screen(tri[0]), to_screen(tri[1]), to_screen(tri[2]), id);
      continue;
    }
    // Sutherland-Hodgman against z = near.
    std::vector<Vec3> poly;
    for (int k = 0; k < 3; ++k) {
      const Vec3& p = tri[k];
      const Vec3& q = tri[(k + 1) % 3];
      const bool pin = p.z() >= kNearPlane, qin = q.z() >= kNearPlane;
      if (pin) poly.push_back(p);
      if (pin != qin) {
        const double s = (kNearPlane - p.z()) / (q.z() - p.z());
        Vec3 x = p + s * (q - p);
        x.z() = kNearPlane;
        poly.push_back(x);
      }
    }
    for (std::size_t k = 1; k + 1 < poly.size(); ++k)
      detail::raster_triangle(out, to_screen(poly[0]), to_screen(poly[k]), to_screen(poly[k + 1]), id);
  }
  return out;
}

/// Code map from precomputed face codes.
inline CodeMap render_code_map(const TriangleMesh& mesh, std::span<const Code> face_codes,
                               const EncodingParams& params, const PoseSE3& pose, const CameraIntrinsics& cam) {
  require(face_codes.size() == mesh.face_count(), "one code per face required");
  const auto raster = rasterize(mesh, pose, cam);
  CodeMap map(cam.width, cam.height, params.radix, params.digits);
  for (std::size_t i = 0; i < raster.face.size(); ++i)
    if (raster.face[i] >= 0) map.set(i, face_codes[raster.face[i]], static_cast<float>(raster.depth[i]));
  return map;
}

/// Renders the stacked code map and mask of `mesh` under `pose`.
inline CodeMap render_code_map(const TriangleMesh& mesh, const Codebook& cb, const PoseSE3& pose,
                               const CameraIntrinsics& cam) {
  require(fingerprint_vertices(mesh.vertices) == cb.fingerprint(), "mesh does not match codebook fingerprint");
  const auto face_codes = compute_face_codes(mesh, cb);
  return render_code_map(mesh, face_codes, cb.params(), pose, cam);
}

/// Nearest-neighbour resampling of codes, mask and depth.
inline CodeMap resize_nearest(const CodeMap& src, int new_width, int new_height) {
  require(new_width >= 1 && new_height >= 1, "target size must be positive");
  CodeMap out(new_width, new_height, src.radix, src.digits);
  for (int v = 0; v < new_height; ++v) {
    const int sv = std::min(src.height - 1, static_cast<int>((v + 0.5) * src.height / new_height));
    for (int u = 0; u < new_width; ++u) {
      const int su = std::min(src.width - 1, static_cast<int>((u + 0.5) * src.width / new_width));
      const auto s = src.index(su, sv), d = out.index(u, v);
      out.codes[d] = src.codes[s];
      out.mask[d] = src.mask[s];
      out.depth[d] = src.depth[s];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// ZBCM file format

inline constexpr std::uint16_t kCodeMapVersion = 1;

inline void write_code_map(std::ostream& os, const CodeMap& map) {
  EncodingParams p{map.radix, map.digits, 0};
  io::put_magic(os, "ZBCM");
  io::put<std::uint16_t>(os, kCodeMapVersion);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(map.width));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(map.height));
  io::put<std::uint8_t>(os, static_cast<std::uint8_t>(map.digits));
  io::put<std::uint8_t>(os, radix_to_u8(map.radix));
  const auto nbytes = p.packed_bytes();
  for (std::size_t i = 0; i < map.pixel_count(); ++i) {
    io::put<std::uint8_t>(os, map.mask[i] ? 1 : 0);
    io::put_packed(os, map.mask[i] ? pack_code(map.codes[i], p) : 0, nbytes);
    io::put<float>(os, map.depth[i]);
  }
  if (!os) throw Error("failed writing code map");
}

inline CodeMap read_code_map(std::istream& is) {
  io::expect_magic(is, "ZBCM");
  const auto version = io::get<std::uint16_t>(is);
  require(version == kCodeMapVersion, "unsupported code map version " + std::to_string(version));
  const auto w = io::get<std::uint32_t>(is);
  const auto h = io::get<std::uint32_t>(is);
  const unsigned d = io::get<std::uint8_t>(is);
  const unsigned r = radix_from_u8(io::get<std::uint8_t>(is));
  EncodingParams p{r, d, 0};
  p.validate();
  require(w >= 1 && h >= 1 && w <= 1u << 15 && h <= 1u << 15, "implausible code map size");
  CodeMap map(static_cast<int>(w), static_cast<int>(h), r, d);
  const auto nbytes = p.packed_bytes();
  for (std::size_t i = 0; i < map.pixel_count(); ++i) {
    const auto m = io::get<std::uint8_t>(is);
    const auto bits = io::get_packed(is, nbytes);
    const auto z = io::get<float>(is);
    require(m <= 1, "mask byte must be 0 or 1");
    if (m) map.set(i, unpack_code(bits, p), z);
    else {
      map.clear(i);
      map.depth[i] = z;
    }
  }
  return map;
}

}  // namespace zebra
