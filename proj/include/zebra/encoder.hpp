#pragma once

// Coarse-to-fine surface encoding.
//
// Vertices are split recursively into balanced groups; the group label picked
// at each of the d levels becomes one digit of the vertex code. A code is held
// as its base-r integer value (first level = most significant digit), so for
// r = 2^k the integer is also the concatenation of the binary levels, and
// changing radix is a relabeling of digits rather than of groups.

#include "zebra/binary_io.hpp"
#include "zebra/common.hpp"
#include "zebra/fingerprint.hpp"
#include "zebra/geometry.hpp"
#include "zebra/mesh.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <vector>

namespace zebra {

using Code = std::uint64_t;

struct EncodingParams {
  unsigned radix = 2;
  unsigned digits = 16;
  std::uint64_t seed = 0;

  /// Bits needed for one digit: ceil(log2 r).
  unsigned bits_per_digit() const { return static_cast<unsigned>(std::bit_width(radix - 1)); }
  /// Bytes per packed code in the file formats.
  unsigned packed_bytes() const { return (digits * bits_per_digit() + 7) / 8; }
  bool radix_is_power_of_two() const { return std::has_single_bit(radix); }

  /// K = r^d.
  std::uint64_t classes() const {
    std::uint64_t k = 1;
    for (unsigned j = 0; j < digits; ++j) k *= radix;
    return k;
  }

  void validate() const {
    require(radix >= 2 && radix <= 256, "radix must be in [2, 256]");
    require(digits >= 1, "code length must be >= 1");
    require(digits * bits_per_digit() <= 62, "code does not fit in 62 bits");
  }
};

/// Digit j (1-based, j = 1 is the coarsest level) of a code.
inline unsigned code_digit(Code code, unsigned j, unsigned radix, unsigned digits) {
  for (unsigned k = j; k < digits; ++k) code /= radix;
  return static_cast<unsigned>(code % radix);
}

/// The first j digits of a code as a j-digit code.
inline Code code_prefix(Code code, unsigned j, unsigned radix, unsigned digits) {
  for (unsigned k = j; k < digits; ++k) code /= radix;
  return code;
}

inline std::vector<unsigned> code_to_digits(Code code, unsigned radix, unsigned digits) {
  std::vector<unsigned> out(digits);
  for (unsigned k = digits; k-- > 0;) {
    out[k] = static_cast<unsigned>(code % radix);
    code /= radix;
  }
  return out;
}

inline Code digits_to_code(std::span<const unsigned> digits, unsigned radix) {
  Code code = 0;
  for (const auto m : digits) {
    require(m < radix, "digit out of range for radix");
    code = code * radix + m;
  }
  return code;
}

/// Concatenated bit-string of the digits, each in ceil(log2 r) bits.
inline std::uint64_t pack_code(Code code, const EncodingParams& p) {
  if (p.radix_is_power_of_two()) return code;
  std::uint64_t bits = 0;
  for (const auto m : code_to_digits(code, p.radix, p.digits)) bits = (bits << p.bits_per_digit()) | m;
  return bits;
}

inline Code unpack_code(std::uint64_t bits, const EncodingParams& p) {
  if (p.radix_is_power_of_two()) return bits;
  const std::uint64_t mask = (std::uint64_t{1} << p.bits_per_digit()) - 1;
  std::vector<unsigned> digits(p.digits);
  for (unsigned k = p.digits; k-- > 0;) {
    digits[k] = static_cast<unsigned>(bits & mask);
    bits >>= p.bits_per_digit();
  }
  return digits_to_code(digits, p.radix);
}

/// Regroups a binary digit sequence into radix `target_radix` digits, taking
/// log2(target_radix) bits per digit, most significant bit first.
inline std::vector<unsigned> radix_convert(std::span<const unsigned> bits, unsigned target_radix) {
  require(target_radix >= 2 && std::has_single_bit(target_radix), "target radix must be a power of 2");
  const auto width = static_cast<std::size_t>(std::countr_zero(target_radix));
  require(bits.size() % width == 0, "code length is not divisible by log2(target radix)");
  std::vector<unsigned> out;
  out.reserve(bits.size() / width);
  for (std::size_t k = 0; k < bits.size(); k += width) {
    unsigned digit = 0;
    for (std::size_t b = 0; b < width; ++b) {
      require(bits[k + b] <= 1, "input code is not binary");
      digit = (digit << 1) | bits[k + b];
    }
    out.push_back(digit);
  }
  return out;
}

/// Inverse of radix_convert: expands radix-r digits back to bits.
inline std::vector<unsigned> radix_to_binary(std::span<const unsigned> digits, unsigned radix) {
  require(radix >= 2 && std::has_single_bit(radix), "radix must be a power of 2");
  const auto width = static_cast<unsigned>(std::countr_zero(radix));
  std::vector<unsigned> bits;
  bits.reserve(digits.size() * width);
  for (const auto m : digits) {
    require(m < radix, "digit out of range for radix");
    for (unsigned b = width; b-- > 0;) bits.push_back((m >> b) & 1u);
  }
  return bits;
}

// ---------------------------------------------------------------------------
// Balanced clustering

struct SplitOptions {
  int restarts = 8;
  int max_iterations = 32;
  double tolerance_mm = 1e-9;
};

struct TwoSplit {
  std::vector<std::size_t> left;   // class id 0
  std::vector<std::size_t> right;  // class id 1
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Seed for the split of one group, independent of traversal order.
inline std::uint64_t group_seed(std::uint64_t seed, unsigned level, Code prefix) {
  return splitmix64(splitmix64(seed ^ splitmix64(level)) ^ prefix);
}

// k-means++ seeding of `k` centers among `members`.
inline std::vector<Vec3> kmeanspp_seed(std::span<const Vec3> pts, std::span<const std::size_t> members,
                                       std::size_t k, std::mt19937_64& rng) {
  std::vector<Vec3> centers;
  std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
  centers.push_back(pts[members[pick(rng)]]);
  std::vector<double> d2(members.size(), std::numeric_limits<double>::infinity());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t m = 0; m < members.size(); ++m) {
      d2[m] = std::min(d2[m], (pts[members[m]] - centers.back()).squaredNorm());
      total += d2[m];
    }
    std::size_t chosen = 0;
    if (total > 0.0) {
      double target = std::uniform_real_distribution<double>(0.0, total)(rng);
      chosen = members.size() - 1;
      for (std::size_t m = 0; m < members.size(); ++m) {
        target -= d2[m];
        if (target < 0.0) {
          chosen = m;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    centers.push_back(pts[members[chosen]]);
  }
  return centers;
}

// Balanced 2-means over the subset `members`. Returns positions into
// `members`: first ceil(n/2) entries form class 0.
inline std::vector<std::size_t> balanced_two_split_members(std::span<const Vec3> pts,
                                                           std::span<const std::size_t> members,
                                                           std::uint64_t seed, const SplitOptions& opt) {
  const std::size_t n = members.size();
  require(n >= 2, "balanced split needs at least 2 points");
  const std::size_t n_left = (n + 1) / 2;
  std::mt19937_64 rng(seed);

  std::vector<std::size_t> best_order;
  double best_sse = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(n);
  std::vector<double> key(n);

  for (int restart = 0; restart < std::max(1, opt.restarts); ++restart) {
    auto centers = kmeanspp_seed(pts, members, 2, rng);
    Vec3 a = centers[0], b = centers[1];
    for (int it = 0; it < opt.max_iterations; ++it) {
      for (std::size_t m = 0; m < n; ++m) {
        const Vec3& p = pts[members[m]];
        key[m] = (p - a).norm() - (p - b).norm();
        order[m] = m;
      }
      // Median split on the distance difference; ties go to the lower vertex index.
      std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_left), order.end(),
                       [&](std::size_t x, std::size_t y) {
                         return key[x] < key[y] || (key[x] == key[y] && members[x] < members[y]);
                       });
      Vec3 na = Vec3::Zero(), nb = Vec3::Zero();
      for (std::size_t k = 0; k < n_left; ++k) na += pts[members[order[k]]];
      for (std::size_t k = n_left; k < n; ++k) nb += pts[members[order[k]]];
      na /= static_cast<double>(n_left);
      nb /= static_cast<double>(n - n_left);
      const double moved = std::max((na - a).norm(), (nb - b).norm());
      a = na;
      b = nb;
      if (moved < opt.tolerance_mm) break;
    }
    double sse = 0.0;
    for (std::size_t k = 0; k < n; ++k) sse += (pts[members[order[k]]] - (k < n_left ? a : b)).squaredNorm();
    if (sse < best_sse) {
      best_sse = sse;
      best_order = order;
    }
  }
  // Canonical order inside each side so results never depend on nth_element internals.
  std::sort(best_order.begin(), best_order.begin() + static_cast<std::ptrdiff_t>(n_left));
  std::sort(best_order.begin() + static_cast<std::ptrdiff_t>(n_left), best_order.end());
  return best_order;
}

// Balanced r-way clustering for radices that are not powers of two. Points
// are assigned greedily in order of decreasing margin between their nearest
// and second-nearest center, each to the nearest center with room left.
inline std::vector<unsigned> balanced_multi_split_members(std::span<const Vec3> pts,
                                                          std::span<const std::size_t> members,
                                                          unsigned r, std::uint64_t seed,
                                                          const SplitOptions& opt) {
  const std::size_t n = members.size();
  std::vector<unsigned> labels(n, 0);
  if (n <= r) {
    for (std::size_t m = 0; m < n; ++m) labels[m] = static_cast<unsigned>(m);
    return labels;
  }
  std::mt19937_64 rng(seed);
  const std::size_t base = n / r;
  const std::size_t extra = n % r;

  double best_sse = std::numeric_limits<double>::infinity();
  std::vector<unsigned> best_labels;
  std::vector<double> dist(n * r);
  std::vector<std::size_t> order(n);
  std::vector<double> margin(n);

  for (int restart = 0; restart < std::max(1, opt.restarts); ++restart) {
    auto centers = kmeanspp_seed(pts, members, r, rng);
    for (int it = 0; it < opt.max_iterations; ++it) {
      for (std::size_t m = 0; m < n; ++m) {
        double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
        for (unsigned c = 0; c < r; ++c) {
          const double d = (pts[members[m]] - centers[c]).norm();
          dist[m * r + c] = d;
          if (d < d1) {
            d2 = d1;
            d1 = d;
          } else if (d < d2) {
            d2 = d;
          }
        }
        margin[m] = d2 - d1;
        order[m] = m;
      }
      std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return margin[x] > margin[y] || (margin[x] == margin[y] && members[x] < members[y]);
      });
      std::vector<std::size_t> fill(r, 0);
      std::size_t extra_left = extra;
      for (const auto m : order) {
        unsigned best = r;
        for (unsigned c = 0; c < r; ++c) {
          const bool room = fill[c] < base || (fill[c] == base && extra_left > 0);
          if (room && (best == r || dist[m * r + c] < dist[m * r + best])) best = c;
        }
        if (fill[best] == base) --extra_left;
        ++fill[best];
        labels[m] = best;
      }
      double moved = 0.0;
      for (unsigned c = 0; c < r; ++c) {
        Vec3 sum = Vec3::Zero();
        std::size_t count = 0;
        for (std::size_t m = 0; m < n; ++m)
          if (labels[m] == c) {
            sum += pts[members[m]];
            ++count;
          }
        const Vec3 next = count ? Vec3(sum / static_cast<double>(count)) : centers[c];
        moved = std::max(moved, (next - centers[c]).norm());
        centers[c] = next;
      }
      if (moved < opt.tolerance_mm) break;
    }
    double sse = 0.0;
    for (std::size_t m = 0; m < n; ++m) sse += (pts[members[m]] - centers[labels[m]]).squaredNorm();
    if (sse < best_sse) {
      best_sse = sse;
      best_labels = labels;
    }
  }
  return best_labels;
}

}  // namespace detail

/// Splits `points` into two halves whose sizes differ by at most one,
/// approximately minimizing within-group variance.
inline TwoSplit balanced_two_split(std::span<const Vec3> points, std::uint64_t seed,
                                   const SplitOptions& opt = {}) {
  require(points.size() >= 2, "balanced split needs at least 2 points");
  std::vector<std::size_t> members(points.size());
  for (std::size_t i = 0; i < members.size(); ++i) members[i] = i;
  const auto order = detail::balanced_two_split_members(points, members, seed, opt);
  const std::size_t n_left = (points.size() + 1) / 2;
  TwoSplit out;
  out.left.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_left));
  out.right.assign(order.begin() + static_cast<std::ptrdiff_t>(n_left), order.end());
  return out;
}

// ---------------------------------------------------------------------------
// Hierarchy

/// Group assignment of every vertex at every level, stored as full codes.
struct GroupingHierarchy {
  EncodingParams params;
  std::vector<Code> vertex_codes;

  std::size_t vertex_count() const { return vertex_codes.size(); }

  /// m_{i,j}: class id of vertex i at level j (1-based).
  unsigned class_id(std::size_t vertex, unsigned level) const {
    return code_digit(vertex_codes[vertex], level, params.radix, params.digits);
  }

  /// Group of vertex i in G_j, identified by its j-digit prefix.
  Code group_of(std::size_t vertex, unsigned level) const {
    return code_prefix(vertex_codes[vertex], level, params.radix, params.digits);
  }

  /// Members of each group of G_j keyed by prefix; G_0 is the single group {0 -> all}.
  std::map<Code, std::vector<std::size_t>> groups(unsigned level) const {
    std::map<Code, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < vertex_codes.size(); ++i) out[group_of(i, level)].push_back(i);
    return out;
  }
};

namespace detail {

struct GroupRange {
  std::size_t begin, end;
  Code prefix;
};

// Binary hierarchy over `levels` levels; the permutation `perm` keeps every
// group contiguous.
inline std::vector<Code> build_binary_codes(std::span<const Vec3> pts, unsigned levels, std::uint64_t seed,
                                            const SplitOptions& opt) {
  const std::size_t n = pts.size();
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::vector<Code> codes(n, 0);
  std::vector<GroupRange> groups{{0, n, 0}};

  for (unsigned level = 1; level <= levels; ++level) {
    std::vector<GroupRange> next;
    next.reserve(groups.size() * 2);
    for (const auto& g : groups) {
      const std::size_t size = g.end - g.begin;
      if (size < 2) {
        // Too small to split: every remaining digit is 0.
        for (std::size_t k = g.begin; k < g.end; ++k) codes[perm[k]] <<= 1;
        next.push_back({g.begin, g.end, g.prefix << 1});
        continue;
      }
      std::span<const std::size_t> members(perm.data() + g.begin, size);
      const auto order = balanced_two_split_members(pts, members, group_seed(seed, level, g.prefix), opt);
      std::vector<std::size_t> reordered(size);
      for (std::size_t k = 0; k < size; ++k) reordered[k] = members[order[k]];
      const std::size_t n_left = (size + 1) / 2;
      for (std::size_t k = 0; k < size; ++k) {
        perm[g.begin + k] = reordered[k];
        codes[reordered[k]] = (codes[reordered[k]] << 1) | (k < n_left ? 0u : 1u);
      }
      next.push_back({g.begin, g.begin + n_left, g.prefix << 1});
      next.push_back({g.begin + n_left, g.end, (g.prefix << 1) | 1u});
    }
    groups = std::move(next);
  }
  return codes;
}

inline std::vector<Code> build_multiway_codes(std::span<const Vec3> pts, const EncodingParams& params,
                                              const SplitOptions& opt) {
  const std::size_t n = pts.size();
  const unsigned r = params.radix;
  std::vector<Code> codes(n, 0);
  std::vector<std::vector<std::size_t>> groups(1);
  std::vector<Code> prefixes{0};
  groups[0].resize(n);
  for (std::size_t i = 0; i < n; ++i) groups[0][i] = i;

  for (unsigned level = 1; level <= params.digits; ++level) {
    std::vector<std::vector<std::size_t>> next;
    std::vector<Code> next_prefix;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const auto& members = groups[g];
      std::vector<unsigned> labels(members.size(), 0);
      if (members.size() >= 2)
        labels = balanced_multi_split_members(pts, members, r, group_seed(params.seed, level, prefixes[g]), opt);
      std::vector<std::vector<std::size_t>> children(r);
      for (std::size_t m = 0; m < members.size(); ++m) {
        codes[members[m]] = codes[members[m]] * r + labels[m];
        children[labels[m]].push_back(members[m]);
      }
      for (unsigned c = 0; c < r; ++c) {
        if (children[c].empty()) continue;
        next_prefix.push_back(prefixes[g] * r + c);
        next.push_back(std::move(children[c]));
      }
    }
    groups = std::move(next);
    prefixes = std::move(next_prefix);
  }
  return codes;
}

}  // namespace detail

/// Runs d levels of balanced splitting over the mesh vertices. Powers of two
/// are built as log2(r) nested binary splits per level, so a radix-2^k
/// hierarchy has exactly the leaf partition of the binary one with k*d levels.
inline GroupingHierarchy build_hierarchy(const TriangleMesh& mesh, const EncodingParams& params,
                                         const SplitOptions& opt = {}) {
  params.validate();
  require(params.classes() <= mesh.vertex_count(),
          "r^d = " + std::to_string(params.classes()) + " exceeds vertex count " +
              std::to_string(mesh.vertex_count()));
  GroupingHierarchy h;
  h.params = params;
  if (params.radix_is_power_of_two()) {
    const auto width = static_cast<unsigned>(std::countr_zero(params.radix));
    h.vertex_codes = detail::build_binary_codes(mesh.vertices, params.digits * width, params.seed, opt);
  } else {
    h.vertex_codes = detail::build_multiway_codes(mesh.vertices, params, opt);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Codebook

struct CodebookEntry {
  Code code = 0;
  Vec3 centroid = Vec3::Zero();
  std::uint64_t count = 0;  // vertices in the leaf group
};

/// Vertex codes plus the code -> leaf centroid lookup table.
class Codebook {
public:
  Codebook() = default;
  Codebook(EncodingParams params, Fingerprint fp, std::vector<Code> vertex_codes, std::vector<CodebookEntry> table)
      : params_(params), fingerprint_(fp), vertex_codes_(std::move(vertex_codes)), table_(std::move(table)) {
    std::sort(table_.begin(), table_.end(), [](const auto& a, const auto& b) { return a.code < b.code; });
  }

  const EncodingParams& params() const { return params_; }
  const Fingerprint& fingerprint() const { return fingerprint_; }
  const std::vector<Code>& vertex_codes() const { return vertex_codes_; }
  const std::vector<CodebookEntry>& table() const { return table_; }
  std::size_t vertex_count() const { return vertex_codes_.size(); }

  const CodebookEntry* find(Code code) const {
    const auto it = std::lower_bound(table_.begin(), table_.end(), code,
                                     [](const CodebookEntry& e, Code c) { return e.code < c; });
    return it != table_.end() && it->code == code ? &*it : nullptr;
  }

  /// Leaf centroid for `code`, or nullopt when no vertex carries it.
  std::optional<Vec3> decode(Code code) const {
    if (const auto* e = find(code)) return e->centroid;
    return std::nullopt;
  }

  Code encode(std::size_t vertex) const { return vertex_codes_.at(vertex); }

  bool operator==(const Codebook& o) const {
    if (params_.radix != o.params_.radix || params_.digits != o.params_.digits ||
        fingerprint_ != o.fingerprint_ || vertex_codes_ != o.vertex_codes_ || table_.size() != o.table_.size())
      return false;
    for (std::size_t k = 0; k < table_.size(); ++k)
      if (table_[k].code != o.table_[k].code || table_[k].centroid != o.table_[k].centroid ||
          table_[k].count != o.table_[k].count)
        return false;
    return true;
  }

private:
  EncodingParams params_;
  Fingerprint fingerprint_{};
  std::vector<Code> vertex_codes_;
  std::vector<CodebookEntry> table_;
};

inline Codebook build_codebook(const TriangleMesh& mesh, const GroupingHierarchy& hierarchy) {
  require(mesh.vertex_count() == hierarchy.vertex_count(), "mesh and hierarchy disagree on vertex count");
  std::map<Code, std::pair<Vec3, std::uint64_t>> sums;
  for (std::size_t i = 0; i < mesh.vertex_count(); ++i) {
    auto& [sum, count] = sums.try_emplace(hierarchy.vertex_codes[i], Vec3::Zero(), 0).first->second;
    sum += mesh.vertices[i];
    ++count;
  }
  std::vector<CodebookEntry> table;
  table.reserve(sums.size());
  for (const auto& [code, acc] : sums)
    table.push_back({code, acc.first / static_cast<double>(acc.second), acc.second});
  return Codebook(hierarchy.params, fingerprint_vertices(mesh.vertices), hierarchy.vertex_codes, std::move(table));
}

/// Encodes a mesh in one call.
inline Codebook encode_mesh(const TriangleMesh& mesh, const EncodingParams& params, const SplitOptions& opt = {}) {
  return build_codebook(mesh, build_hierarchy(mesh, params, opt));
}

/// Codebook over the first `keep_digits` digits: each prefix maps to the
/// centroid of all vertices that share it.
inline Codebook truncate_lookup(const Codebook& cb, unsigned keep_digits) {
  const auto& p = cb.params();
  require(keep_digits >= 1 && keep_digits <= p.digits, "keep_digits must be in [1, d]");
  if (keep_digits == p.digits) return cb;
  EncodingParams tp = p;
  tp.digits = keep_digits;

  std::map<Code, std::pair<Vec3, std::uint64_t>> sums;
  for (const auto& e : cb.table()) {
    auto& [sum, count] = sums.try_emplace(code_prefix(e.code, keep_digits, p.radix, p.digits), Vec3::Zero(), 0)
                             .first->second;
    sum += e.centroid * static_cast<double>(e.count);
    count += e.count;
  }
  std::vector<CodebookEntry> table;
  for (const auto& [code, acc] : sums)
    table.push_back({code, acc.first / static_cast<double>(acc.second), acc.second});
  std::vector<Code> codes(cb.vertex_codes().size());
  for (std::size_t i = 0; i < codes.size(); ++i)
    codes[i] = code_prefix(cb.vertex_codes()[i], keep_digits, p.radix, p.digits);
  return Codebook(tp, cb.fingerprint(), std::move(codes), std::move(table));
}

/// Relabels a binary codebook into radix `target_radix`. Groups and centroids
/// are untouched; only the digit grouping changes.
inline Codebook convert_codebook_radix(const Codebook& cb, unsigned target_radix) {
  require(cb.params().radix == 2, "radix conversion starts from a binary codebook");
  require(target_radix >= 2 && std::has_single_bit(target_radix), "target radix must be a power of 2");
  const auto width = static_cast<unsigned>(std::countr_zero(target_radix));
  require(cb.params().digits % width == 0, "code length is not divisible by log2(target radix)");
  EncodingParams p = cb.params();
  p.radix = target_radix;
  p.digits = cb.params().digits / width;
  return Codebook(p, cb.fingerprint(), cb.vertex_codes(), cb.table());
}

struct LeafStats {
  std::map<std::uint64_t, std::uint64_t> size_histogram;  // leaf size -> number of leaves
  double max_leaf_diameter = 0.0;
};

inline LeafStats leaf_stats(const TriangleMesh& mesh, const Codebook& cb) {
  std::map<Code, std::vector<Vec3>> members;
  for (std::size_t i = 0; i < mesh.vertex_count(); ++i) members[cb.encode(i)].push_back(mesh.vertices[i]);
  LeafStats s;
  for (const auto& [code, pts] : members) {
    ++s.size_histogram[pts.size()];
    if (pts.size() >= 2) s.max_leaf_diameter = std::max(s.max_leaf_diameter, exact_diameter(pts));
  }
  return s;
}

// ---------------------------------------------------------------------------
// ZBCB file format

inline constexpr std::uint16_t kCodebookVersion = 1;

/// Radix stored as a u8: 256 wraps to 0.
inline std::uint8_t radix_to_u8(unsigned r) { return static_cast<std::uint8_t>(r & 0xFF); }
inline unsigned radix_from_u8(std::uint8_t v) { return v == 0 ? 256u : v; }

inline void write_codebook(std::ostream& os, const Codebook& cb) {
  const auto& p = cb.params();
  io::put_magic(os, "ZBCB");
  io::put<std::uint16_t>(os, kCodebookVersion);
  io::put<std::uint8_t>(os, radix_to_u8(p.radix));
  io::put<std::uint8_t>(os, static_cast<std::uint8_t>(p.digits));
  io::put<std::uint64_t>(os, cb.vertex_count());
  os.write(reinterpret_cast<const char*>(cb.fingerprint().data()), 32);
  const auto nbytes = p.packed_bytes();
  for (const auto code : cb.vertex_codes()) io::put_packed(os, pack_code(code, p), nbytes);
  io::put<std::uint64_t>(os, cb.table().size());
  for (const auto& e : cb.table()) {
    io::put_packed(os, pack_code(e.code, p), nbytes);
    io::put<double>(os, e.centroid.x());
    io::put<double>(os, e.centroid.y());
    io::put<double>(os, e.centroid.z());
  }
  if (!os) throw Error("failed writing codebook");
}

inline Codebook read_codebook(std::istream& is) {
  io::expect_magic(is, "ZBCB");
  const auto version = io::get<std::uint16_t>(is);
  require(version == kCodebookVersion, "unsupported codebook version " + std::to_string(version));
  EncodingParams p;
  p.radix = radix_from_u8(io::get<std::uint8_t>(is));
  p.digits = io::get<std::uint8_t>(is);
  p.validate();
  const auto n = io::get<std::uint64_t>(is);
  Fingerprint fp{};
  is.read(reinterpret_cast<char*>(fp.data()), 32);
  if (!is) throw Error("unexpected end of file");
  const auto nbytes = p.packed_bytes();
  std::vector<Code> codes(n);
  std::map<Code, std::uint64_t> counts;
  for (auto& c : codes) {
    c = unpack_code(io::get_packed(is, nbytes), p);
    ++counts[c];
  }
  const auto entries = io::get<std::uint64_t>(is);
  std::vector<CodebookEntry> table(entries);
  for (auto& e : table) {
    e.code = unpack_code(io::get_packed(is, nbytes), p);
    e.centroid.x() = io::get<double>(is);
    e.centroid.y() = io::get<double>(is);
    e.centroid.z() = io::get<double>(is);
    const auto it = counts.find(e.code);
    e.count = it == counts.end() ? 0 : it->second;
  }
  return Codebook(p, fp, std::move(codes), std::move(table));
}

}  // namespace zebra
