#pragma once

// Triangle meshes: PLY/OBJ loading and midpoint subdivision.

#include "zebra/common.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace zebra {

using Face = std::array<std::uint32_t, 3>;

/// Object surface. Vertices are in millimeters; faces wind counter-clockwise
/// when seen from outside.
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;

  std::size_t vertex_count() const { return vertices.size(); }
  std::size_t face_count() const { return faces.size(); }

  /// Throws if a face references a missing vertex or repeats an index.
  void validate() const {
    const auto n = vertices.size();
    for (std::size_t f = 0; f < faces.size(); ++f) {
      const auto& [a, b, c] = faces[f];
      if (a >= n || b >= n || c >= n)
        throw Error("face " + std::to_string(f) + " references vertex out of range");
      if (a == b || b == c || a == c)
        throw Error("face " + std::to_string(f) + " is degenerate");
    }
  }
};

using Edge = std::pair<std::uint32_t, std::uint32_t>;

/// Unique undirected edges as (min, max) pairs in lexicographic order.
inline std::vector<Edge> unique_edges(const TriangleMesh& mesh) {
  std::vector<Edge> edges;
  edges.reserve(mesh.faces.size() * 3);
  for (const auto& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      const auto a = f[k], b = f[(k + 1) % 3];
      edges.emplace_back(std::min(a, b), std::max(a, b));
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

/// Number of edges used by exactly one face.
inline std::size_t boundary_edge_count(const TriangleMesh& mesh) {
  std::map<Edge, int> uses;
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      const auto a = f[k], b = f[(k + 1) % 3];
      ++uses[{std::min(a, b), std::max(a, b)}];
    }
  return static_cast<std::size_t>(
      std::count_if(uses.begin(), uses.end(), [](const auto& kv) { return kv.second == 1; }));
}

/// Splits every face into four using edge midpoints. Original vertices keep
/// their indices; edge vertex V+k belongs to the k-th edge in lexicographic
/// (min, max) order.
inline TriangleMesh subdivide_midpoint(const TriangleMesh& mesh) {
  mesh.validate();
  const auto edges = unique_edges(mesh);
  const auto base = static_cast<std::uint32_t>(mesh.vertices.size());

  TriangleMesh out;
  out.vertices.reserve(mesh.vertices.size() + edges.size());
  out.vertices = mesh.vertices;
  for (const auto& [a, b] : edges) out.vertices.push_back(0.5 * (mesh.vertices[a] + mesh.vertices[b]));

  auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
    const Edge key{std::min(a, b), std::max(a, b)};
    const auto it = std::lower_bound(edges.begin(), edges.end(), key);
    return base + static_cast<std::uint32_t>(it - edges.begin());
  };

  out.faces.reserve(mesh.faces.size() * 4);
  for (const auto& [a, b, c] : mesh.faces) {
    const auto ab = midpoint(a, b), bc = midpoint(b, c), ca = midpoint(c, a);
    out.faces.push_back({a, ab, ca});
    out.faces.push_back({ab, b, bc});
    out.faces.push_back({ca, bc, c});
    out.faces.push_back({ab, bc, ca});
  }
  return out;
}

/// Subdivides until the vertex count strictly exceeds `min_vertices`.
inline TriangleMesh upsample_until(TriangleMesh mesh, std::size_t min_vertices) {
  require(min_vertices >= 1, "min_vertices must be >= 1");
  require(!mesh.faces.empty() || mesh.vertices.size() > min_vertices,
          "cannot upsample a mesh without faces");
  while (mesh.vertices.size() <= min_vertices) mesh = subdivide_midpoint(mesh);
  return mesh;
}

namespace detail {

// Appends the fan triangulation of a polygon, dropping triangles that repeat
// an index.
inline void append_polygon(std::vector<Face>& faces, const std::vector<std::int64_t>& poly,
                           std::size_t vertex_count) {
  if (poly.size() < 3) throw Error("face with fewer than 3 vertices");
  for (const auto idx : poly)
    if (idx < 0 || static_cast<std::size_t>(idx) >= vertex_count)
      throw Error("face index " + std::to_string(idx) + " out of range (" +
                  std::to_string(vertex_count) + " vertices)");
  for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
    const Face f{static_cast<std::uint32_t>(poly[0]), static_cast<std::uint32_t>(poly[k]),
                 static_cast<std::uint32_t>(poly[k + 1])};
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) continue;
    faces.push_back(f);
  }
}

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

inline PlyType parse_ply_type(const std::string& name) {
  static const std::map<std::string, PlyType> table = {
      {"char", PlyType::i8},    {"int8", PlyType::i8},     {"uchar", PlyType::u8},
      {"uint8", PlyType::u8},   {"short", PlyType::i16},   {"int16", PlyType::i16},
      {"ushort", PlyType::u16}, {"uint16", PlyType::u16},  {"int", PlyType::i32},
      {"int32", PlyType::i32},  {"uint", PlyType::u32},    {"uint32", PlyType::u32},
      {"float", PlyType::f32},  {"float32", PlyType::f32}, {"double", PlyType::f64},
      {"float64", PlyType::f64}};
  const auto it = table.find(name);
  if (it == table.end()) throw Error("unsupported PLY property type '" + name + "'");
  return it->second;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::f32;
  bool is_list = false;
  PlyType count_type = PlyType::u8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

template <typename T>
double read_binary_as(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error("truncated binary PLY body");
  return static_cast<double>(v);
}

inline double read_ply_value(std::istream& is, PlyType type, bool binary) {
  if (!binary) {
    double v = 0;
    if (!(is >> v)) throw Error("truncated or malformed ascii PLY body");
    return v;
  }
  switch (type) {
    case PlyType::i8: return read_binary_as<std::int8_t>(is);
    case PlyType::u8: return read_binary_as<std::uint8_t>(is);
    case PlyType::i16: return read_binary_as<std::int16_t>(is);
    case PlyType::u16: return read_binary_as<std::uint16_t>(is);
    case PlyType::i32: return read_binary_as<std::int32_t>(is);
    case PlyType::u32: return read_binary_as<std::uint32_t>(is);
    case PlyType::f32: return read_binary_as<float>(is);
    case PlyType::f64: return read_binary_as<double>(is);
  }
  return 0;
}

inline TriangleMesh read_ply(std::istream& is) {
  std::string line;
  std::getline(is, line);
  if (line.rfind("ply", 0) != 0) throw Error("not a PLY file");

  bool binary = false;
  std::vector<PlyElement> elements;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string keyword;
    ls >> keyword;
    if (keyword == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") binary = false;
      else if (fmt == "binary_little_endian") binary = true;
      else throw Error("unsupported PLY format '" + fmt + "'");
    } else if (keyword == "element") {
      PlyElement el;
      ls >> el.name >> el.count;
      elements.push_back(std::move(el));
    } else if (keyword == "property") {
      if (elements.empty()) throw Error("PLY property before element");
      PlyProperty prop;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string count_type, item_type;
        ls >> count_type >> item_type >> prop.name;
        prop.is_list = true;
        prop.count_type = parse_ply_type(count_type);
        prop.type = parse_ply_type(item_type);
      } else {
        prop.type = parse_ply_type(type);
        ls >> prop.name;
      }
      elements.back().properties.push_back(prop);
    } else if (keyword == "end_header") {
      break;
    }
  }

  TriangleMesh mesh;
  std::vector<std::vector<std::int64_t>> polygons;
  for (const auto& el : elements) {
    const bool is_vertex = el.name == "vertex";
    const bool is_face = el.name == "face";
    int ix = -1, iy = -1, iz = -1, iface = -1;
    for (int p = 0; p < static_cast<int>(el.properties.size()); ++p) {
      const auto& name = el.properties[p].name;
      if (name == "x") ix = p;
      if (name == "y") iy = p;
      if (name == "z") iz = p;
      if (el.properties[p].is_list && (name == "vertex_indices" || name == "vertex_index")) iface = p;
    }
    if (is_vertex && (ix < 0 || iy < 0 || iz < 0)) throw Error("PLY vertex element lacks x/y/z");
    if (is_face && iface < 0) throw Error("PLY face element lacks vertex_indices");

    for (std::size_t i = 0; i < el.count; ++i) {
      Vec3 pos = Vec3::Zero();
      std::vector<std::int64_t> poly;
      for (int p = 0; p < static_cast<int>(el.properties.size()); ++p) {
        const auto& prop = el.properties[p];
        if (prop.is_list) {
          const auto n = static_cast<std::int64_t>(read_ply_value(is, prop.count_type, binary));
          if (n < 0) throw Error("negative PLY list length");
          for (std::int64_t k = 0; k < n; ++k) {
            const double v = read_ply_value(is, prop.type, binary);
            if (is_face && p == iface) poly.push_back(static_cast<std::int64_t>(v));
          }
        } else {
          const double v = read_ply_value(is, prop.type, binary);
          if (p == ix) pos.x() = v;
          if (p == iy) pos.y() = v;
          if (p == iz) pos.z() = v;
        }
      }
      if (is_vertex) mesh.vertices.push_back(pos);
      if (is_face) polygons.push_back(std::move(poly));
    }
  }
  for (const auto& poly : polygons) append_polygon(mesh.faces, poly, mesh.vertices.size());
  return mesh;
}

inline TriangleMesh read_obj(std::istream& is) {
  TriangleMesh mesh;
  std::vector<std::vector<std::int64_t>> polygons;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string keyword;
    ls >> keyword;
    if (keyword == "v") {
      Vec3 p;
      if (!(ls >> p.x() >> p.y() >> p.z())) throw Error("malformed OBJ vertex: " + line);
      mesh.vertices.push_back(p);
    } else if (keyword == "f") {
      std::vector<std::int64_t> poly;
      std::string token;
      while (ls >> token) {
        // v, v/vt, v//vn, v/vt/vn; only the position index is used.
        const auto idx = std::stoll(token.substr(0, token.find('/')));
        const auto n = static_cast<std::int64_t>(mesh.vertices.size());
        poly.push_back(idx < 0 ? n + idx : idx - 1);
      }
      polygons.push_back(std::move(poly));
    }
  }
  for (const auto& poly : polygons) append_polygon(mesh.faces, poly, mesh.vertices.size());
  return mesh;
}

}  // namespace detail

/// Loads a PLY (ascii or binary little-endian) or OBJ file by extension.
inline TriangleMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open mesh file " + path.string());
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  TriangleMesh mesh;
  if (ext == ".ply") mesh = detail::read_ply(is);
  else if (ext == ".obj") mesh = detail::read_obj(is);
  else throw Error("unsupported mesh extension '" + ext + "'");
  mesh.validate();
  return mesh;
}

/// Writes an ascii PLY. Debug output only.
inline void save_ply(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << "ply\nformat ascii 1.0\nelement vertex " << mesh.vertices.size()
     << "\nproperty double x\nproperty double y\nproperty double z\nelement face "
     << mesh.faces.size() << "\nproperty list uchar int vertex_indices\nend_header\n";
  os.precision(17);
  for (const auto& v : mesh.vertices) os << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : mesh.faces) os << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
}

}  // namespace zebra
