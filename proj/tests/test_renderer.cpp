#include "zebra/renderer.hpp"
#include "zebra/primitives.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

using namespace zebra;

namespace {

CameraIntrinsics small_camera(int w = 64, int h = 48) { return {120.0, 120.0, w / 2.0, h / 2.0, w, h}; }

PoseSE3 translation(double x, double y, double z) { return {Mat3::Identity(), Vec3(x, y, z)}; }

// Codebook with hand-picked vertex codes; each vertex is its own leaf centroid.
Codebook manual_codebook(const TriangleMesh& mesh, std::vector<Code> codes, unsigned digits) {
  std::map<Code, std::pair<Vec3, std::uint64_t>> sums;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    auto& [s, n] = sums.try_emplace(codes[i], Vec3::Zero(), 0).first->second;
    s += mesh.vertices[i];
    ++n;
  }
  std::vector<CodebookEntry> table;
  for (const auto& [c, acc] : sums) table.push_back({c, acc.first / double(acc.second), acc.second});
  return Codebook({2, digits, 0}, fingerprint_vertices(mesh.vertices), std::move(codes), std::move(table));
}

// Oracle: pixel-center inside test against every projected face, half-open
// edges ignored (poses are chosen so no center lands on an edge).
std::size_t silhouette_area_oracle(const TriangleMesh& mesh, const PoseSE3& pose, const CameraIntrinsics& cam) {
  std::vector<Vec2> proj;
  for (const auto& v : mesh.vertices) proj.push_back(cam.project(pose.apply(v)));
  std::size_t covered = 0;
  for (int v = 0; v < cam.height; ++v)
    for (int u = 0; u < cam.width; ++u) {
      const Vec2 p(u + 0.5, v + 0.5);
      bool inside = false;
      for (const auto& f : mesh.faces) {
        const Vec2 a = proj[f[0]], b = proj[f[1]], c = proj[f[2]];
        auto cross = [](const Vec2& o, const Vec2& x, const Vec2& y) {
          return (x - o).x() * (y - o).y() - (x - o).y() * (y - o).x();
        };
        const double d1 = cross(a, b, p), d2 = cross(b, c, p), d3 = cross(c, a, p);
        if ((d1 > 0 && d2 > 0 && d3 > 0) || (d1 < 0 && d2 < 0 && d3 < 0)) {
          inside = true;
          break;
        }
      }
      covered += inside;
    }
  return covered;
}

}  // namespace

TEST(FaceClassId, PairRuleAndFirstVertexFallback) {
  EXPECT_EQ(face_class_id(5, 5, 7), 5u);
  EXPECT_EQ(face_class_id(3, 3, 3), 3u);
  EXPECT_EQ(face_class_id(1, 2, 3), 1u);
  EXPECT_EQ(face_class_id(7, 5, 5), 5u);
  EXPECT_EQ(face_class_id(5, 7, 5), 5u);
}

TEST(RenderCodeMap, FlatCodeOverLargeTriangle) {
  TriangleMesh m;
  m.vertices = {{-1000, -1000, 0}, {3000, -1000, 0}, {-1000, 3000, 0}, {0, 0, 50}};
  m.faces = {{0, 1, 2}};
  const auto cb = manual_codebook(m, {2, 2, 2, 1}, 2);
  const auto map = render_code_map(m, cb, translation(0, 0, 500), small_camera());
  EXPECT_EQ(map.masked_count(), map.pixel_count());
  for (std::size_t i = 0; i < map.pixel_count(); ++i) EXPECT_EQ(map.codes[i], 2u);
}

TEST(RenderCodeMap, NearerTriangleOccludesFartherAndDepthsMatchPlanes) {
  TriangleMesh m;
  m.vertices = {{-100, -100, 0}, {100, -100, 0}, {-100, 100, 0},    // near plane z=400
                {-300, -300, 200}, {300, -300, 200}, {-300, 300, 200}};  // far plane z=600
  m.faces = {{3, 4, 5}, {0, 1, 2}};
  const auto cb = manual_codebook(m, {1, 1, 1, 2, 2, 2}, 2);
  const auto cam = small_camera(80, 80);
  const auto pose = translation(0, 0, 400);
  const auto raster = rasterize(m, pose, cam);
  const auto map = render_code_map(m, cb, pose, cam);
  std::size_t near_pixels = 0;
  for (int v = 0; v < cam.height; ++v)
    for (int u = 0; u < cam.width; ++u) {
      const auto i = map.index(u, v);
      if (!map.mask[i]) continue;
      const double expected = raster.face[i] == 1 ? 400.0 : 600.0;
      EXPECT_NEAR(raster.depth[i], expected, 1e-9);
      EXPECT_EQ(map.codes[i], raster.face[i] == 1 ? 1u : 2u);
      near_pixels += raster.face[i] == 1;
    }
  EXPECT_GT(near_pixels, 100u);
  // With the near triangle removed the same pixels show the far one.
  TriangleMesh far_only = m;
  far_only.faces = {{3, 4, 5}};
  const auto far = rasterize(far_only, pose, cam);
  for (std::size_t i = 0; i < raster.face.size(); ++i)
    if (raster.face[i] == 1) EXPECT_EQ(far.face[i], 0);
}

TEST(RenderCodeMap, TiltedPlaneDepthMatchesRayIntersection) {
  TriangleMesh m;
  m.vertices = {{-80, -80, -30}, {80, -80, 20}, {0, 90, 40}};
  m.faces = {{0, 1, 2}};
  const auto cam = small_camera(64, 64);
  const PoseSE3 pose{rotation_from_axis_angle(Vec3(0.3, 1, 0.2), 0.4), Vec3(5, -3, 450)};
  const auto raster = rasterize(m, pose, cam);
  const Vec3 a = pose.apply(m.vertices[0]), b = pose.apply(m.vertices[1]), c = pose.apply(m.vertices[2]);
  const Vec3 n = (b - a).cross(c - a);
  int checked = 0;
  for (int v = 0; v < cam.height; ++v)
    for (int u = 0; u < cam.width; ++u) {
      const auto i = static_cast<std::size_t>(v) * cam.width + u;
      if (raster.face[i] < 0) continue;
      const Vec3 ray((u + 0.5 - cam.cx) / cam.fx, (v + 0.5 - cam.cy) / cam.fy, 1.0);
      EXPECT_NEAR(raster.depth[i], n.dot(a) / n.dot(ray), 1e-9);
      ++checked;
    }
  EXPECT_GT(checked, 200);
}

TEST(RenderCodeMap, CenteredModelProjectsToPrincipalPoint) {
  const auto mesh = upsample_until(primitives::icosahedron(30.0), 600);
  const auto cb = encode_mesh(mesh, {2, 8, 0});
  const CameraIntrinsics cam{200, 200, 64, 64, 128, 128};
  const auto map = render_code_map(mesh, cb, translation(0, 0, 300), cam);
  double su = 0, sv = 0;
  std::size_t n = 0;
  for (int v = 0; v < 128; ++v)
    for (int u = 0; u < 128; ++u)
      if (map.mask[map.index(u, v)]) {
        su += u + 0.5;
        sv += v + 0.5;
        ++n;
      }
  ASSERT_GT(n, 0u);
  EXPECT_NEAR(su / n, cam.cx, 0.25);
  EXPECT_NEAR(sv / n, cam.cy, 0.25);
}

TEST(RenderCodeMap, MaskAreaMatchesPointInTriangleOracle) {
  const auto mesh = primitives::lumpy_ellipsoid(1, 20, 14, 10);
  const auto cb = encode_mesh(mesh, {2, 5, 1});
  const auto cam = small_camera(40, 32);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const PoseSE3 pose{random_rotation(rng), Vec3(1.3, -0.7, 160)};
    const auto map = render_code_map(mesh, cb, pose, cam);
    EXPECT_EQ(map.masked_count(), silhouette_area_oracle(mesh, pose, cam)) << "trial " << trial;
  }
}

TEST(RenderCodeMap, SharedEdgesCoverEachCenterOnce) {
  // Square split along its diagonal; the diagonal passes exactly through pixel centers.
  const detail::ScreenVertex a{2, 2, 1}, b{12, 2, 1}, c{12, 12, 1}, d{2, 12, 1};
  auto count = [](detail::ScreenVertex p, detail::ScreenVertex q, detail::ScreenVertex r) {
    Raster out{16, 16, std::vector<std::int32_t>(256, -1), std::vector<double>(256, 1e300)};
    detail::raster_triangle(out, p, q, r, 0);
    std::set<std::size_t> px;
    for (std::size_t i = 0; i < 256; ++i)
      if (out.face[i] == 0) px.insert(i);
    return px;
  };
  const auto t1 = count(a, b, c), t2 = count(a, c, d);
  std::size_t overlap = 0;
  for (auto i : t1) overlap += t2.count(i);
  EXPECT_EQ(overlap, 0u);
  EXPECT_EQ(t1.size() + t2.size(), 100u);  // centers 2.5 .. 11.5 in both axes
  // Orientation does not change coverage.
  EXPECT_EQ(count(a, c, b), t1);
}

TEST(RenderCodeMap, StackedLevelsEqualPerLevelRenders) {
  const auto mesh = upsample_until(primitives::tetrahedron(20.0), 100);
  const auto cb = encode_mesh(mesh, {2, 6, 4});
  const auto cam = small_camera(48, 48);
  const PoseSE3 pose{rotation_from_axis_angle(Vec3(1, 2, 3), 0.7), Vec3(0, 0, 150)};
  const auto map = render_code_map(mesh, cb, pose, cam);
  const auto raster = rasterize(mesh, pose, cam);
  for (unsigned j = 1; j <= 6; ++j) {
    // Level-j label image rendered from per-face class ids at level j alone.
    std::vector<Code> level_ids(mesh.face_count());
    for (std::size_t f = 0; f < mesh.face_count(); ++f) {
      const auto& fc = mesh.faces[f];
      level_ids[f] = face_class_id(code_digit(cb.encode(fc[0]), j, 2, 6), code_digit(cb.encode(fc[1]), j, 2, 6),
                                   code_digit(cb.encode(fc[2]), j, 2, 6));
    }
    for (std::size_t i = 0; i < map.pixel_count(); ++i) {
      ASSERT_EQ(map.mask[i] != 0, raster.face[i] >= 0);
      if (map.mask[i]) ASSERT_EQ(code_digit(map.codes[i], j, 2, 6), level_ids[raster.face[i]]);
    }
  }
}

TEST(RenderCodeMap, CodesArePureAndMaskCoupled) {
  const auto mesh = upsample_until(primitives::icosahedron(40.0), 2000);
  const auto cb = encode_mesh(mesh, {2, 10, 4});
  const auto map = render_code_map(mesh, cb, translation(3, -2, 260), CameraIntrinsics{150, 150, 32, 32, 64, 64});
  EXPECT_GT(map.masked_count(), 500u);
  for (std::size_t i = 0; i < map.pixel_count(); ++i) {
    EXPECT_EQ(map.mask[i] != 0, map.codes[i] != kInvalidCode);
    if (map.mask[i]) EXPECT_TRUE(cb.decode(map.codes[i]).has_value());
  }
}

TEST(RenderCodeMap, BehindCameraAndClipping) {
  const auto mesh = upsample_until(primitives::icosahedron(40.0), 100);
  const auto cb = encode_mesh(mesh, {2, 5, 4});
  const auto cam = small_camera();
  EXPECT_EQ(render_code_map(mesh, cb, translation(0, 0, -300), cam).masked_count(), 0u);
  // Camera inside the sphere: faces cross the near plane and are clipped.
  const auto inside = render_code_map(mesh, cb, translation(0, 0, 10), cam);
  EXPECT_EQ(inside.masked_count(), inside.pixel_count());

  auto other = mesh;
  other.vertices[0].x() += 1.0;
  EXPECT_THROW(render_code_map(other, cb, translation(0, 0, 300), cam), Error);
}

TEST(ResizeNearest, IdentityAndReplication) {
  CodeMap m(2, 2, 2, 4);
  m.set(0, 1, 10.f);
  m.set(1, 2, 11.f);
  m.set(3, 15, 13.f);
  EXPECT_EQ(resize_nearest(m, 2, 2), m);
  const auto up = resize_nearest(m, 4, 4);
  for (int v = 0; v < 4; ++v)
    for (int u = 0; u < 4; ++u) {
      const auto s = m.index(u / 2, v / 2), d = up.index(u, v);
      EXPECT_EQ(up.codes[d], m.codes[s]);
      EXPECT_EQ(up.mask[d], m.mask[s]);
      EXPECT_EQ(up.depth[d], m.depth[s]);
    }
  EXPECT_THROW(resize_nearest(m, 0, 3), Error);
}

TEST(ResizeNearest, DownscaledCodesExistInSource) {
  const auto mesh = upsample_until(primitives::icosahedron(40.0), 2000);
  const auto cb = encode_mesh(mesh, {2, 10, 4});
  const auto map = render_code_map(mesh, cb, translation(0, 0, 260), CameraIntrinsics{150, 150, 32, 32, 64, 64});
  const std::set<Code> source(map.codes.begin(), map.codes.end());
  for (auto [w, h] : {std::pair{32, 32}, {21, 40}, {7, 5}}) {
    const auto small = resize_nearest(map, w, h);
    for (std::size_t i = 0; i < small.pixel_count(); ++i) {
      EXPECT_TRUE(source.count(small.codes[i]));
      EXPECT_EQ(small.mask[i] != 0, small.codes[i] != kInvalidCode);
    }
  }
}

TEST(CodeMapFile, ByteIdenticalRoundTrip) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const unsigned radix = std::array<unsigned, 4>{2, 3, 16, 256}[trial % 4];
    const unsigned digits = radix == 256 ? 2 : 5;
    const EncodingParams p{radix, digits, 0};
    CodeMap m(1 + static_cast<int>(rng() % 20), 1 + static_cast<int>(rng() % 20), radix, digits);
    for (std::size_t i = 0; i < m.pixel_count(); ++i)
      if (rng() % 3) m.set(i, rng() % p.classes(), static_cast<float>(rng() % 100000) / 7.0f);
    std::stringstream first;
    write_code_map(first, m);
    const auto back = read_code_map(first);
    EXPECT_EQ(back, m);
    std::stringstream second;
    write_code_map(second, back);
    EXPECT_EQ(first.str(), second.str());
    const std::size_t record = 1 + p.packed_bytes() + 4;
    EXPECT_EQ(first.str().size(), 4 + 2 + 4 + 4 + 1 + 1 + record * m.pixel_count());
  }
}
