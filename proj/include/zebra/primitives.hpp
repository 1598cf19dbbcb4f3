#pragma once

// Small closed meshes used by tests, the benchmark harness, and demos.

#include "zebra/mesh.hpp"

#include <cmath>

namespace zebra::primitives {

inline TriangleMesh tetrahedron(double size = 1.0) {
  TriangleMesh m;
  m.vertices = {Vec3(1, 1, 1) * size, Vec3(1, -1, -1) * size, Vec3(-1, 1, -1) * size,
                Vec3(-1, -1, 1) * size};
  m.faces = {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
  return m;
}

/// Regular icosahedron with circumradius `radius`, centered at the origin.
inline TriangleMesh icosahedron(double radius = 1.0) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  TriangleMesh m;
  m.vertices = {{-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
                {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
                {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
  for (auto& v : m.vertices) v = v.normalized() * radius;
  m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
             {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
             {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
             {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  return m;
}

/// Axis-aligned box [0,sx]x[0,sy]x[0,sz] with 8 corners and 12 faces.
inline TriangleMesh box(double sx = 1.0, double sy = 1.0, double sz = 1.0) {
  TriangleMesh m;
  for (int i = 0; i < 8; ++i) m.vertices.emplace_back((i & 1) * sx, ((i >> 1) & 1) * sy, ((i >> 2) & 1) * sz);
  m.faces = {{0, 2, 3}, {0, 3, 1}, {4, 5, 7}, {4, 7, 6}, {0, 1, 5}, {0, 5, 4},
             {2, 6, 7}, {2, 7, 3}, {0, 4, 6}, {0, 6, 2}, {1, 3, 7}, {1, 7, 5}};
  return m;
}

/// Subdivided icosahedron pushed onto an ellipsoid with semi-axes (a, b, c)
/// and a bump so that no two axes are symmetric.
inline TriangleMesh lumpy_ellipsoid(int subdivisions, double a = 50.0, double b = 35.0, double c = 25.0) {
  auto m = icosahedron(1.0);
  for (int k = 0; k < subdivisions; ++k) m = subdivide_midpoint(m);
  for (auto& v : m.vertices) {
    const Vec3 n = v.normalized();
    const double bump = 1.0 + 0.25 * std::exp(-8.0 * (n - Vec3(0.6, 0.6, 0.5).normalized()).squaredNorm());
    v = Vec3(a * n.x(), b * n.y(), c * n.z()) * bump;
  }
  return m;
}

}  // namespace zebra::primitives
