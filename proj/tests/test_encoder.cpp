#include "zebra/encoder.hpp"
#include "zebra/primitives.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

using namespace zebra;

namespace {

double sse(const std::vector<Vec3>& pts, const std::vector<std::size_t>& idx) {
  Vec3 m = Vec3::Zero();
  for (auto i : idx) m += pts[i];
  m /= static_cast<double>(idx.size());
  double s = 0;
  for (auto i : idx) s += (pts[i] - m).squaredNorm();
  return s;
}

// Oracle: every balanced 2-partition by bitmask enumeration, with its SSE.
std::vector<std::pair<double, std::set<std::size_t>>> balanced_partitions(const std::vector<Vec3>& pts) {
  const std::size_t n = pts.size();
  std::vector<std::pair<double, std::set<std::size_t>>> out;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    std::vector<std::size_t> a, b;
    for (std::size_t i = 0; i < n; ++i) ((mask >> i) & 1 ? a : b).push_back(i);
    if (a.size() != (n + 1) / 2) continue;
    out.push_back({sse(pts, a) + sse(pts, b), std::set<std::size_t>(a.begin(), a.end())});
  }
  return out;
}

TriangleMesh point_mesh(std::vector<Vec3> pts) {
  TriangleMesh m;
  m.vertices = std::move(pts);
  return m;
}

// Balanced halving recursion: the multiset of group sizes at each level.
std::multiset<std::size_t> halving_sizes(std::size_t n, unsigned levels) {
  std::multiset<std::size_t> sizes{n};
  for (unsigned l = 0; l < levels; ++l) {
    std::multiset<std::size_t> next;
    for (auto s : sizes) {
      if (s < 2) {
        next.insert(s);
        continue;
      }
      next.insert((s + 1) / 2);
      next.insert(s / 2);
    }
    sizes = next;
  }
  return sizes;
}

}  // namespace

TEST(BalancedTwoSplit, TwoPoints) {
  const std::vector<Vec3> pts = {{0, 0, 0}, {5, 0, 0}};
  const auto s = balanced_two_split(pts, 1);
  EXPECT_EQ(s.left.size(), 1u);
  EXPECT_EQ(s.right.size(), 1u);
  EXPECT_THROW(balanced_two_split(std::vector<Vec3>{{0, 0, 0}}, 1), Error);
}

TEST(BalancedTwoSplit, CollinearPointsMatchExhaustiveOptimum) {
  const std::vector<Vec3> pts = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}, {4, 0, 0}};
  const auto parts = balanced_partitions(pts);
  double best = 1e300;
  for (const auto& p : parts) best = std::min(best, p.first);
  EXPECT_DOUBLE_EQ(best, 2.5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = balanced_two_split(pts, seed);
    EXPECT_EQ(s.left.size(), 3u);
    EXPECT_EQ(s.right.size(), 2u);
    EXPECT_NEAR(sse(pts, s.left) + sse(pts, s.right), best, 1e-12) << "seed " << seed;
    // The cut is at the 2|3 or 3|4 gap: each side is a contiguous run.
    const std::set<std::size_t> left(s.left.begin(), s.left.end());
    EXPECT_TRUE(left == std::set<std::size_t>({0, 1, 2}) || left == std::set<std::size_t>({2, 3, 4}));
  }
}

TEST(BalancedTwoSplit, RecoversTwoSeparatedClusters) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, 1.0);
  const Vec3 ca(0, 0, 0), cb(100, 20, -30);
  std::vector<Vec3> pts;
  for (int i = 0; i < 100; ++i) pts.push_back((i % 2 ? cb : ca) + Vec3(noise(rng), noise(rng), noise(rng)));
  const auto s = balanced_two_split(pts, 3);
  ASSERT_EQ(s.left.size(), 50u);
  // Oracle: assignment by nearest true center.
  auto truth = [&](std::size_t i) { return (pts[i] - ca).norm() < (pts[i] - cb).norm(); };
  const bool left_is_a = truth(s.left[0]);
  for (auto i : s.left) EXPECT_EQ(truth(i), left_is_a);
  for (auto i : s.right) EXPECT_EQ(truth(i), !left_is_a);
}

TEST(BalancedTwoSplit, CubeCornersSplitByCoordinatePlane) {
  const auto cube = primitives::box();
  const auto parts = balanced_partitions(cube.vertices);
  double best = 1e300;
  for (const auto& p : parts) best = std::min(best, p.first);
  // The variance-minimal balanced partitions are exactly the three axis splits.
  int optimal = 0;
  for (const auto& p : parts)
    if (p.first < best + 1e-12) ++optimal;
  EXPECT_EQ(optimal, 6);  // 3 planes x 2 label assignments

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    EncodingParams params{2, 1, seed};
    const auto h = build_hierarchy(cube, params);
    bool separated = false;
    for (int axis = 0; axis < 3; ++axis) {
      bool ok = true;
      for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t k = 0; k < 8; ++k)
          if ((h.vertex_codes[i] == h.vertex_codes[k]) != (cube.vertices[i][axis] == cube.vertices[k][axis]))
            ok = false;
      separated = separated || ok;
    }
    EXPECT_TRUE(separated) << "seed " << seed;
  }
}

TEST(BuildHierarchy, EightVerticesGiveDistinctCodes) {
  const auto cube = primitives::box(3, 2, 1);
  const auto h = build_hierarchy(cube, {2, 3, 11});
  const std::set<Code> codes(h.vertex_codes.begin(), h.vertex_codes.end());
  EXPECT_EQ(codes.size(), 8u);
}

TEST(BuildHierarchy, TenVerticesLeafSizesFollowHalvingRecursion) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-10, 10);
  std::vector<Vec3> pts;
  for (int i = 0; i < 10; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  const auto h = build_hierarchy(point_mesh(pts), {2, 3, 5});
  for (unsigned level = 1; level <= 3; ++level) {
    std::multiset<std::size_t> sizes;
    for (const auto& [prefix, members] : h.groups(level)) sizes.insert(members.size());
    EXPECT_EQ(sizes, halving_sizes(10, level)) << "level " << level;
  }
  for (const auto& [prefix, members] : h.groups(3)) {
    EXPECT_GE(members.size(), 1u);
    EXPECT_LE(members.size(), 2u);
  }
}

TEST(BuildHierarchy, RejectsTooManyClasses) {
  EXPECT_THROW(build_hierarchy(primitives::tetrahedron(), {2, 3, 0}), Error);
  EXPECT_THROW(build_hierarchy(primitives::tetrahedron(), {1, 1, 0}), Error);
}

TEST(BuildHierarchy, BalancedNestedAndDeterministic) {
  const auto mesh = upsample_until(primitives::icosahedron(40.0), 2000);
  const EncodingParams params{2, 8, 42};
  const auto h = build_hierarchy(mesh, params);
  for (unsigned level = 1; level <= params.digits; ++level) {
    const auto parents = h.groups(level - 1);
    const auto children = h.groups(level);
    EXPECT_EQ(children.size(), std::size_t{1} << level);
    for (const auto& [prefix, members] : parents) {
      const auto a = children.count(prefix * 2) ? children.at(prefix * 2).size() : 0;
      const auto b = children.count(prefix * 2 + 1) ? children.at(prefix * 2 + 1).size() : 0;
      EXPECT_EQ(a + b, members.size());
      EXPECT_LE(a > b ? a - b : b - a, 1u);
    }
  }
  EXPECT_EQ(build_hierarchy(mesh, params).vertex_codes, h.vertex_codes);
  EXPECT_NE(build_hierarchy(mesh, {2, 8, 43}).vertex_codes, h.vertex_codes);
}

TEST(BuildHierarchy, PrefixPropertyMatchesGroupMembership) {
  const auto mesh = upsample_until(primitives::tetrahedron(20.0), 200);
  const auto h = build_hierarchy(mesh, {2, 6, 9});
  for (unsigned level = 0; level <= 6; ++level) {
    std::vector<int> group_index(mesh.vertex_count(), -1);
    int g = 0;
    for (const auto& [prefix, members] : h.groups(level)) {
      for (auto i : members) group_index[i] = g;
      ++g;
    }
    for (std::size_t i = 0; i < mesh.vertex_count(); ++i)
      for (std::size_t k = i + 1; k < mesh.vertex_count(); ++k) {
        bool shared = true;
        for (unsigned j = 1; j <= level; ++j) shared = shared && h.class_id(i, j) == h.class_id(k, j);
        ASSERT_EQ(shared, group_index[i] == group_index[k]);
      }
  }
}

TEST(BuildHierarchy, PowerOfTwoRadixSharesTheBinaryPartition) {
  const auto mesh = upsample_until(primitives::icosahedron(30.0), 1000);
  const auto bin = build_hierarchy(mesh, {2, 8, 77});
  EXPECT_EQ(build_hierarchy(mesh, {4, 4, 77}).vertex_codes, bin.vertex_codes);
  EXPECT_EQ(build_hierarchy(mesh, {16, 2, 77}).vertex_codes, bin.vertex_codes);
  EXPECT_EQ(build_hierarchy(mesh, {256, 1, 77}).vertex_codes, bin.vertex_codes);
}

TEST(BuildHierarchy, NonPowerOfTwoRadixIsBalanced) {
  const auto mesh = upsample_until(primitives::icosahedron(30.0), 500);
  const EncodingParams params{3, 4, 5};
  const auto h = build_hierarchy(mesh, params);
  for (unsigned level = 1; level <= params.digits; ++level) {
    const auto children = h.groups(level);
    for (const auto& [prefix, members] : h.groups(level - 1)) {
      std::vector<std::size_t> sizes;
      for (unsigned c = 0; c < 3; ++c) sizes.push_back(children.count(prefix * 3 + c) ? children.at(prefix * 3 + c).size() : 0);
      const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
      EXPECT_LE(*hi - *lo, 1u);
    }
  }
  EXPECT_EQ(h.groups(4).size(), 81u);
}

TEST(Codebook, SingletonAndPairCentroids) {
  const auto h = build_hierarchy(point_mesh({{0, 0, 0}, {2, 0, 0}, {100, 0, 0}, {102, 0, 0}}), {2, 1, 0});
  const auto mesh = point_mesh({{0, 0, 0}, {2, 0, 0}, {100, 0, 0}, {102, 0, 0}});
  const auto cb = build_codebook(mesh, h);
  ASSERT_EQ(cb.table().size(), 2u);
  EXPECT_EQ(*cb.decode(cb.encode(0)), Vec3(1, 0, 0));
  EXPECT_EQ(*cb.decode(cb.encode(2)), Vec3(101, 0, 0));

  const auto cube = primitives::box(3, 2, 1);
  const auto full = encode_mesh(cube, {2, 3, 4});
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(*full.decode(full.encode(i)), cube.vertices[i]);
}

TEST(Codebook, UnknownCodeIsNoMatch) {
  const auto cube = primitives::box();
  const auto cb = encode_mesh(cube, {2, 2, 4});
  EXPECT_FALSE(cb.decode(4).has_value());
  EXPECT_FALSE(cb.decode(~Code{0}).has_value());
}

TEST(Codebook, CompleteCodebookDecodesEveryCode) {
  const auto mesh = upsample_until(primitives::icosahedron(30.0), 300);
  const auto cb = encode_mesh(mesh, {2, 8, 1});
  EXPECT_EQ(cb.table().size(), 256u);
  for (Code c = 0; c < 256; ++c) EXPECT_TRUE(cb.decode(c).has_value()) << c;
}

TEST(Codebook, QuantizationBoundedByLeafDiameter) {
  const auto mesh = subdivide_midpoint(subdivide_midpoint(primitives::tetrahedron(25.0)));
  const auto cb = encode_mesh(mesh, {2, 4, 2});
  std::map<Code, std::vector<Vec3>> leaves;
  for (std::size_t i = 0; i < mesh.vertex_count(); ++i) leaves[cb.encode(i)].push_back(mesh.vertices[i]);
  double max_diam = 0;
  for (const auto& [code, pts] : leaves) {
    double diam = 0;  // brute force
    for (const auto& a : pts)
      for (const auto& b : pts) diam = std::max(diam, (a - b).norm());
    max_diam = std::max(max_diam, diam);
    for (const auto& p : pts) EXPECT_LE((p - *cb.decode(code)).norm(), diam + 1e-12);
  }
  EXPECT_NEAR(leaf_stats(mesh, cb).max_leaf_diameter, max_diam, 1e-12);
}

TEST(RadixConvert, PaperExample) {
  const std::vector<unsigned> bits = {1, 1, 1, 1, 1, 1, 1, 0, 1, 1, 1, 1, 1, 1, 1, 1};
  EXPECT_EQ(radix_convert(bits, 256), (std::vector<unsigned>{254, 255}));
  EXPECT_EQ(radix_convert(std::vector<unsigned>(16, 0), 16), std::vector<unsigned>(4, 0));
  EXPECT_THROW(radix_convert(std::vector<unsigned>(10, 0), 8), Error);
  EXPECT_THROW(radix_convert(bits, 6), Error);
}

TEST(RadixConvert, RoundTripAndValuePreservation) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 10000; ++trial) {
    const Code value = rng() & 0xFFFF;
    const auto bits = code_to_digits(value, 2, 16);
    const auto quads = radix_convert(bits, 4);
    ASSERT_EQ(quads.size(), 8u);
    ASSERT_EQ(radix_to_binary(quads, 4), bits);
    ASSERT_EQ(digits_to_code(quads, 4), value);
  }
}

TEST(Truncate, FullLengthIsIdentity) {
  const auto mesh = upsample_until(primitives::icosahedron(30.0), 300);
  const auto cb = encode_mesh(mesh, {2, 6, 3});
  EXPECT_TRUE(truncate_lookup(cb, 6) == cb);
}

TEST(Truncate, CentroidsMatchRawVertexMeans) {
  const auto mesh = upsample_until(primitives::icosahedron(30.0), 300);
  const auto cb = encode_mesh(mesh, {2, 6, 3});
  for (unsigned j : {1u, 3u, 5u}) {
    const auto t = truncate_lookup(cb, j);
    EXPECT_EQ(t.params().digits, j);
    EXPECT_EQ(t.table().size(), std::size_t{1} << j);
    for (const auto& e : t.table()) {
      Vec3 mean = Vec3::Zero();
      int n = 0;
      for (std::size_t i = 0; i < mesh.vertex_count(); ++i)
        if (code_prefix(cb.encode(i), j, 2, 6) == e.code) {
          mean += mesh.vertices[i];
          ++n;
        }
      EXPECT_LT((e.centroid - mean / n).norm(), 1e-9);
    }
  }
  // The two half-object centroids average (by size) to the mesh centroid.
  const auto t1 = truncate_lookup(cb, 1);
  Vec3 all = Vec3::Zero();
  for (const auto& v : mesh.vertices) all += v;
  all /= static_cast<double>(mesh.vertex_count());
  const Vec3 combined = (t1.table()[0].centroid * t1.table()[0].count + t1.table()[1].centroid * t1.table()[1].count) /
                        static_cast<double>(mesh.vertex_count());
  EXPECT_LT((combined - all).norm(), 1e-9);
}

TEST(Truncate, OneDigitLessIsWeightedMeanOfChildren) {
  const auto mesh = upsample_until(primitives::tetrahedron(30.0), 100);
  const auto cb = encode_mesh(mesh, {2, 5, 8});
  const auto t = truncate_lookup(cb, 4);
  for (const auto& e : t.table()) {
    const auto* a = cb.find(e.code * 2);
    const auto* b = cb.find(e.code * 2 + 1);
    ASSERT_TRUE(a && b);
    const Vec3 expected = (a->centroid * a->count + b->centroid * b->count) / double(a->count + b->count);
    EXPECT_LT((e.centroid - expected).norm(), 1e-12);
  }
}

TEST(CodebookFile, ByteIdenticalRoundTrip) {
  const auto mesh = upsample_until(primitives::icosahedron(30.0), 300);
  for (unsigned radix : {2u, 3u, 4u, 256u}) {
    EncodingParams p{radix, radix == 256 ? 1u : (radix == 3 ? 5u : 4u), 17};
    const auto cb = encode_mesh(mesh, p);
    std::stringstream first;
    write_codebook(first, cb);
    const auto back = read_codebook(first);
    EXPECT_TRUE(back == cb) << "radix " << radix;
    std::stringstream second;
    write_codebook(second, back);
    EXPECT_EQ(first.str(), second.str());
  }
}

TEST(CodebookFile, HeaderLayout) {
  const auto cb = encode_mesh(primitives::box(), {2, 3, 0});
  std::stringstream ss;
  write_codebook(ss, cb);
  const auto bytes = ss.str();
  // magic 4 + version 2 + r 1 + d 1 + n 8 + fingerprint 32 + 8 codes x 1 byte
  // + count 8 + 8 x (1 + 24)
  EXPECT_EQ(bytes.size(), 4u + 2 + 1 + 1 + 8 + 32 + 8 + 8 + 8 * 25);
  EXPECT_EQ(bytes.substr(0, 4), "ZBCB");
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 2u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[7]), 3u);
  std::stringstream bad("ZBCX");
  EXPECT_THROW(read_codebook(bad), Error);
}
