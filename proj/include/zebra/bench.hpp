#pragma once

// Synthetic corruption benchmark: sample poses, render ground-truth code
// maps, corrupt them, match (with or without the coherence filter), solve,
// evaluate.

#include "zebra/encoder.hpp"
#include "zebra/fingerprint.hpp"
#include "zebra/matcher.hpp"
#include "zebra/mesh.hpp"
#include "zebra/metrics.hpp"
#include "zebra/pose_solver.hpp"
#include "zebra/primitives.hpp"
#include "zebra/renderer.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace zebra::bench {

inline constexpr int kReportSchemaVersion = 1;

struct MeshSpec {
  std::string path = "builtin:lumpy";  // builtin:lumpy | builtin:icosphere | builtin:box | file
  bool upsample = true;
  bool symmetric = false;  // evaluate with ADD-S
};

struct PoseSamplerSpec {
  int count = 100;
  double tx_min = -30, tx_max = 30;
  double ty_min = -30, ty_max = 30;
  double tz_min = 380, tz_max = 480;
  int max_tries = 1000;
};

struct CorruptionSpec {
  std::vector<double> flip_prob;  // per bit of the binary code, bit 1 first; missing bits 0
  int mask_erosion_px = 0;
  double unknown_code_rate = 0.0;  // masked pixels given a uniformly random code
};

enum class FilterMode { Off, On, Both };

struct FilterSpec {
  FilterMode mode = FilterMode::Both;
  double radius_px = 5.0;
  double max_spread_mm = 0.0;  // 0: calibrate on clean frames
  int calibration_frames = 5;
};

struct ScenarioConfig {
  MeshSpec mesh;
  EncodingParams encoding{2, 16, 0};
  CameraIntrinsics camera{256, 256, 64, 64, 128, 128};
  PoseSamplerSpec poses;
  CorruptionSpec corruption;
  SolverConfig solver;
  FilterSpec filter;
  std::vector<unsigned> truncation;  // empty: 1..d
  std::vector<unsigned> radices = {2, 4, 16, 256};
  std::uint64_t seed = 0;
  int threads = 1;
  std::string output_dir = "bench_out";

  unsigned code_bits() const { return encoding.digits * encoding.bits_per_digit(); }

  void validate() const {
    encoding.validate();
    require(encoding.radix_is_power_of_two(), "bench needs a power-of-two radix");
    camera.validate();
    solver.validate();
    require(poses.count >= 1, "pose count must be >= 1");
    require(poses.tx_min <= poses.tx_max && poses.ty_min <= poses.ty_max && poses.tz_min <= poses.tz_max,
            "pose translation ranges must be ordered");
    require(poses.tz_min > 0, "poses must lie in front of the camera");
    require(poses.max_tries >= 1, "max_tries must be >= 1");
    require(corruption.flip_prob.size() <= code_bits(), "more flip probabilities than code bits");
    for (const double p : corruption.flip_prob) require(p >= 0 && p <= 1, "flip probabilities must be in [0, 1]");
    require(corruption.unknown_code_rate >= 0 && corruption.unknown_code_rate <= 1, "unknown_code_rate must be in [0, 1]");
    require(corruption.mask_erosion_px >= 0, "mask erosion must be >= 0");
    require(filter.radius_px > 0 && filter.max_spread_mm >= 0, "bad filter parameters");
    require(filter.calibration_frames >= 1, "calibration_frames must be >= 1");
    for (const auto j : truncation) require(j >= 1 && j <= encoding.digits, "truncation lengths must be in [1, d]");
    for (const auto r : radices) {
      require(r >= 2 && r <= 256 && std::has_single_bit(r), "comparison radices must be powers of two in [2, 256]");
      require(code_bits() % std::countr_zero(r) == 0, "radix does not divide the code bit length");
    }
    require(threads >= 1, "threads must be >= 1");
  }

  double flip(unsigned bit) const { return bit <= corruption.flip_prob.size() ? corruption.flip_prob[bit - 1] : 0.0; }

  std::vector<unsigned> truncation_lengths() const {
    std::vector<unsigned> out = truncation;
    if (out.empty())
      for (unsigned j = 1; j <= encoding.digits; ++j) out.push_back(j);
    out.push_back(encoding.digits);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  std::vector<bool> conditions() const {
    switch (filter.mode) {
      case FilterMode::Off: return {false};
      case FilterMode::On: return {true};
      default: return {false, true};
    }
  }
};

inline const char* condition_name(bool filtered) { return filtered ? "filter+ransac" : "ransac"; }

// ---------------------------------------------------------------------------
// Config file (INI)

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

inline double to_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  require(used == s.size(), "not a number: " + s);
  return v;
}

inline unsigned to_unsigned(const std::string& s) {
  std::size_t used = 0;
  const unsigned long v = std::stoul(s, &used);
  require(used == s.size(), "not an integer: " + s);
  return static_cast<unsigned>(v);
}

// "a-b" or "a" -> inclusive range.
inline std::pair<unsigned, unsigned> parse_range(const std::string& s) {
  const auto dash = s.find('-');
  if (dash == std::string::npos) return {to_unsigned(s), to_unsigned(s)};
  return {to_unsigned(s.substr(0, dash)), to_unsigned(s.substr(dash + 1))};
}

inline std::vector<unsigned> parse_index_list(const std::string& s) {
  std::vector<unsigned> out;
  for (const auto& item : split_list(s)) {
    const auto [a, b] = parse_range(item);
    require(a <= b, "bad range " + item);
    for (unsigned j = a; j <= b; ++j) out.push_back(j);
  }
  return out;
}

// "1-3:0.05, 11:0.1" -> per-bit probability vector.
inline std::vector<double> parse_flip_prob(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    const auto colon = item.find(':');
    require(colon != std::string::npos, "flip_prob entries are bit:probability or first-last:probability");
    const auto [a, b] = parse_range(item.substr(0, colon));
    require(a >= 1 && a <= b && b <= 62, "bad bit range " + item);
    const double p = to_double(item.substr(colon + 1));
    if (out.size() < b) out.resize(b, 0.0);
    for (unsigned j = a; j <= b; ++j) out[j - 1] = p;
  }
  return out;
}

inline std::string format_flip_prob(const std::vector<double>& p) {
  std::string out;
  char buf[64];
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] == 0) continue;
    std::snprintf(buf, sizeof(buf), "%s%zu:%.17g", out.empty() ? "" : ",", j + 1, p[j]);
    out += buf;
  }
  return out;
}

// Present keys must convert; absent keys take the default.
template <typename T>
T value(const boost::property_tree::ptree& tree, const std::string& path, T fallback) {
  if (!tree.get_child_optional(path)) return fallback;
  return tree.get<T>(path);
}

inline FilterMode parse_filter_mode(const std::string& s) {
  if (s == "off") return FilterMode::Off;
  if (s == "on") return FilterMode::On;
  if (s == "both") return FilterMode::Both;
  throw Error("filter mode must be off, on or both");
}

inline const char* filter_mode_name(FilterMode m) {
  return m == FilterMode::Off ? "off" : m == FilterMode::On ? "on" : "both";
}

}  // namespace detail

/// Reads a scenario from INI text. Unknown sections or keys are errors.
inline ScenarioConfig parse_scenario(std::istream& is) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(std::string("config: ") + e.what());
  }
  static const std::map<std::string, std::vector<std::string>> known = {
      {"mesh", {"path", "upsample", "symmetric"}},
      {"encoding", {"radix", "digits", "seed"}},
      {"camera", {"fx", "fy", "cx", "cy", "width", "height"}},
      {"poses", {"count", "tx_min", "tx_max", "ty_min", "ty_max", "tz_min", "tz_max", "max_tries"}},
      {"corruption", {"flip_prob", "mask_erosion_px", "unknown_code_rate"}},
      {"solver", {"reproj_threshold_px", "max_iterations", "min_inliers", "confidence", "seed"}},
      {"filter", {"mode", "radius_px", "max_spread_mm", "calibration_frames"}},
      {"bench", {"truncation", "radices", "seed", "threads"}},
      {"output", {"dir"}},
  };
  for (const auto& [section, body] : tree) {
    const auto it = known.find(section);
    require(it != known.end(), "config: unknown section [" + section + "]");
    require(body.data().empty(), "config: key outside a section: " + section);
    for (const auto& [key, value] : body) {
      (void)value;
      require(std::find(it->second.begin(), it->second.end(), key) != it->second.end(),
              "config: unknown key " + section + "." + key);
    }
  }

  ScenarioConfig c;
  try {
    c.mesh.path = detail::value(tree, "mesh.path", c.mesh.path);
    c.mesh.upsample = detail::value(tree, "mesh.upsample", c.mesh.upsample);
    c.mesh.symmetric = detail::value(tree, "mesh.symmetric", c.mesh.symmetric);
    c.encoding.radix = detail::value(tree, "encoding.radix", c.encoding.radix);
    c.encoding.digits = detail::value(tree, "encoding.digits", c.encoding.digits);
    c.encoding.seed = detail::value(tree, "encoding.seed", c.encoding.seed);
    c.camera.fx = detail::value(tree, "camera.fx", c.camera.fx);
    c.camera.fy = detail::value(tree, "camera.fy", c.camera.fy);
    c.camera.cx = detail::value(tree, "camera.cx", c.camera.cx);
    c.camera.cy = detail::value(tree, "camera.cy", c.camera.cy);
    c.camera.width = detail::value(tree, "camera.width", c.camera.width);
    c.camera.height = detail::value(tree, "camera.height", c.camera.height);
    c.poses.count = detail::value(tree, "poses.count", c.poses.count);
    c.poses.tx_min = detail::value(tree, "poses.tx_min", c.poses.tx_min);
    c.poses.tx_max = detail::value(tree, "poses.tx_max", c.poses.tx_max);
    c.poses.ty_min = detail::value(tree, "poses.ty_min", c.poses.ty_min);
    c.poses.ty_max = detail::value(tree, "poses.ty_max", c.poses.ty_max);
    c.poses.tz_min = detail::value(tree, "poses.tz_min", c.poses.tz_min);
    c.poses.tz_max = detail::value(tree, "poses.tz_max", c.poses.tz_max);
    c.poses.max_tries = detail::value(tree, "poses.max_tries", c.poses.max_tries);
    c.corruption.flip_prob = detail::parse_flip_prob(detail::value(tree, "corruption.flip_prob", std::string()));
    c.corruption.mask_erosion_px = detail::value(tree, "corruption.mask_erosion_px", c.corruption.mask_erosion_px);
    c.corruption.unknown_code_rate = detail::value(tree, "corruption.unknown_code_rate", c.corruption.unknown_code_rate);
    c.solver.reproj_threshold_px = detail::value(tree, "solver.reproj_threshold_px", c.solver.reproj_threshold_px);
    c.solver.max_iterations = detail::value(tree, "solver.max_iterations", c.solver.max_iterations);
    c.solver.min_inliers = detail::value(tree, "solver.min_inliers", c.solver.min_inliers);
    c.solver.confidence = detail::value(tree, "solver.confidence", c.solver.confidence);
    c.solver.seed = detail::value(tree, "solver.seed", c.solver.seed);
    c.filter.mode = detail::parse_filter_mode(detail::value(tree, "filter.mode", std::string("both")));
    c.filter.radius_px = detail::value(tree, "filter.radius_px", c.filter.radius_px);
    c.filter.max_spread_mm = detail::value(tree, "filter.max_spread_mm", c.filter.max_spread_mm);
    c.filter.calibration_frames = detail::value(tree, "filter.calibration_frames", c.filter.calibration_frames);
    if (const auto t = tree.get_optional<std::string>("bench.truncation")) c.truncation = detail::parse_index_list(*t);
    if (const auto r = tree.get_optional<std::string>("bench.radices")) c.radices = detail::parse_index_list(*r);
    c.seed = detail::value(tree, "bench.seed", c.seed);
    c.threads = detail::value(tree, "bench.threads", c.threads);
    c.output_dir = detail::value(tree, "output.dir", c.output_dir);
  } catch (const boost::property_tree::ptree_error& e) {
    throw Error(std::string("config: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw Error("config: malformed number");
  } catch (const std::out_of_range&) {
    throw Error("config: number out of range");
  }
  c.validate();
  return c;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream is(path);
  require(bool(is), "cannot open config " + path);
  return parse_scenario(is);
}

inline nlohmann::ordered_json to_json(const ScenarioConfig& c) {
  nlohmann::ordered_json j;
  j["mesh"] = {{"path", c.mesh.path}, {"upsample", c.mesh.upsample}, {"symmetric", c.mesh.symmetric}};
  j["encoding"] = {{"radix", c.encoding.radix}, {"digits", c.encoding.digits}, {"seed", c.encoding.seed}};
  j["camera"] = {{"fx", c.camera.fx}, {"fy", c.camera.fy}, {"cx", c.camera.cx},
                 {"cy", c.camera.cy}, {"width", c.camera.width}, {"height", c.camera.height}};
  j["poses"] = {{"count", c.poses.count},   {"tx_min", c.poses.tx_min}, {"tx_max", c.poses.tx_max},
                {"ty_min", c.poses.ty_min}, {"ty_max", c.poses.ty_max}, {"tz_min", c.poses.tz_min},
                {"tz_max", c.poses.tz_max}, {"max_tries", c.poses.max_tries}};
  j["corruption"] = {{"flip_prob", c.corruption.flip_prob},
                     {"mask_erosion_px", c.corruption.mask_erosion_px},
                     {"unknown_code_rate", c.corruption.unknown_code_rate}};
  j["solver"] = {{"reproj_threshold_px", c.solver.reproj_threshold_px},
                 {"max_iterations", c.solver.max_iterations},
                 {"min_inliers", c.solver.min_inliers},
                 {"confidence", c.solver.confidence},
                 {"seed", c.solver.seed}};
  j["filter"] = {{"mode", detail::filter_mode_name(c.filter.mode)},
                 {"radius_px", c.filter.radius_px},
                 {"max_spread_mm", c.filter.max_spread_mm},
                 {"calibration_frames", c.filter.calibration_frames}};
  j["bench"] = {{"truncation", c.truncation_lengths()}, {"radices", c.radices}, {"seed", c.seed}};
  return j;
}

/// INI text that parses back to `c`.
inline std::string to_ini(const ScenarioConfig& c) {
  std::ostringstream os;
  os.precision(17);
  auto list = [](const std::vector<unsigned>& v) {
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + std::to_string(v[k]);
    return s;
  };
  os << "[mesh]\npath = " << c.mesh.path << "\nupsample = " << (c.mesh.upsample ? "true" : "false")
     << "\nsymmetric = " << (c.mesh.symmetric ? "true" : "false") << "\n\n";
  os << "[encoding]\nradix = " << c.encoding.radix << "\ndigits = " << c.encoding.digits
     << "\nseed = " << c.encoding.seed << "\n\n";
  os << "[camera]\nfx = " << c.camera.fx << "\nfy = " << c.camera.fy << "\ncx = " << c.camera.cx
     << "\ncy = " << c.camera.cy << "\nwidth = " << c.camera.width << "\nheight = " << c.camera.height << "\n\n";
  os << "[poses]\ncount = " << c.poses.count << "\ntx_min = " << c.poses.tx_min << "\ntx_max = " << c.poses.tx_max
     << "\nty_min = " << c.poses.ty_min << "\nty_max = " << c.poses.ty_max << "\ntz_min = " << c.poses.tz_min
     << "\ntz_max = " << c.poses.tz_max << "\nmax_tries = " << c.poses.max_tries << "\n\n";
  os << "[corruption]\nflip_prob = " << detail::format_flip_prob(c.corruption.flip_prob)
     << "\nmask_erosion_px = " << c.corruption.mask_erosion_px
     << "\nunknown_code_rate = " << c.corruption.unknown_code_rate << "\n\n";
  os << "[solver]\nreproj_threshold_px = " << c.solver.reproj_threshold_px
     << "\nmax_iterations = " << c.solver.max_iterations << "\nmin_inliers = " << c.solver.min_inliers
     << "\nconfidence = " << c.solver.confidence << "\nseed = " << c.solver.seed << "\n\n";
  os << "[filter]\nmode = " << detail::filter_mode_name(c.filter.mode) << "\nradius_px = " << c.filter.radius_px
     << "\nmax_spread_mm = " << c.filter.max_spread_mm << "\ncalibration_frames = " << c.filter.calibration_frames
     << "\n\n";
  os << "[bench]\n";
  if (!c.truncation.empty()) os << "truncation = " << list(c.truncation) << "\n";
  os << "radices = " << list(c.radices) << "\nseed = " << c.seed << "\nthreads = " << c.threads << "\n\n";
  os << "[output]\ndir = " << c.output_dir << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Object

struct BenchObject {
  TriangleMesh original;  // evaluation points
  TriangleMesh encoded;   // upsampled mesh carrying the codebook
  Codebook codebook;
  std::vector<Code> face_codes;
  double diameter_mm = 0;
};

inline TriangleMesh load_object_mesh(const std::string& path) {
  if (path == "builtin:lumpy") return primitives::lumpy_ellipsoid(4);
  if (path == "builtin:icosphere") return primitives::icosahedron(50.0);
  if (path == "builtin:box") return primitives::box(80, 60, 40);
  return load_mesh(path);
}

/// Loads, upsamples (r^d vertices at least) and encodes the scenario mesh.
inline BenchObject prepare_object(const ScenarioConfig& cfg) {
  BenchObject obj;
  obj.original = load_object_mesh(cfg.mesh.path);
  const double leaves = std::pow(static_cast<double>(cfg.encoding.radix), cfg.encoding.digits);
  obj.encoded = cfg.mesh.upsample && static_cast<double>(obj.original.vertex_count()) < leaves
                    ? upsample_until(obj.original, static_cast<std::size_t>(leaves) - 1)
                    : obj.original;
  obj.codebook = encode_mesh(obj.encoded, cfg.encoding);
  obj.face_codes = compute_face_codes(obj.encoded, obj.codebook);
  obj.diameter_mm = diameter(obj.original.vertices);
  return obj;
}

// ---------------------------------------------------------------------------
// Pose sampling and corruption

namespace detail {

enum Stream : std::uint64_t { kPoseStream = 1, kCorruptStream = 2, kCalibrationStream = 3, kRadixStream = 4 };

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return zebra::detail::splitmix64(zebra::detail::splitmix64(seed ^ (stream << 56)) ^ index);
}

}  // namespace detail

/// Uniform rotation and a translation uniform in the configured box, redrawn
/// until every vertex projects inside the image.
template <typename Rng>
PoseSE3 sample_pose(std::span<const Vec3> vertices, const CameraIntrinsics& cam, const PoseSamplerSpec& spec,
                    Rng& rng) {
  std::uniform_real_distribution<double> tx(spec.tx_min, spec.tx_max), ty(spec.ty_min, spec.ty_max),
      tz(spec.tz_min, spec.tz_max);
  for (int attempt = 0; attempt < spec.max_tries; ++attempt) {
    const PoseSE3 pose{random_rotation(rng), Vec3(tx(rng), ty(rng), tz(rng))};
    const bool inside = std::all_of(vertices.begin(), vertices.end(), [&](const Vec3& v) {
      const Vec3 p = pose.apply(v);
      if (p.z() <= kNearPlane) return false;
      const Vec2 px = cam.project(p);
      return px.x() >= 0 && px.y() >= 0 && px.x() <= cam.width && px.y() <= cam.height;
    });
    if (inside) return pose;
  }
  throw Error("pose sampler: no pose with the whole object in frame after " + std::to_string(spec.max_tries) +
              " tries");
}

/// Removes masked pixels within `px` steps (8-connected) of background or
/// the image border.
inline CodeMap erode_mask(const CodeMap& map, int px) {
  CodeMap out = map;
  for (int step = 0; step < px; ++step) {
    const CodeMap prev = out;
    for (int v = 0; v < map.height; ++v)
      for (int u = 0; u < map.width; ++u) {
        const auto i = map.index(u, v);
        if (!prev.mask[i]) continue;
        bool edge = false;
        for (int dv = -1; dv <= 1 && !edge; ++dv)
          for (int du = -1; du <= 1 && !edge; ++du) {
            const int uu = u + du, vv = v + dv;
            edge = uu < 0 || vv < 0 || uu >= map.width || vv >= map.height || !prev.mask[map.index(uu, vv)];
          }
        if (edge) out.clear(i);
      }
  }
  return out;
}

struct BitErrorCounts {
  std::vector<std::uint64_t> flips;   // per bit
  std::uint64_t trials = 0;           // masked pixels seen
  std::uint64_t random_codes = 0;     // pixels replaced by the unknown-code injection

  void merge(const BitErrorCounts& o) {
    if (flips.size() < o.flips.size()) flips.resize(o.flips.size(), 0);
    for (std::size_t j = 0; j < o.flips.size(); ++j) flips[j] += o.flips[j];
    trials += o.trials;
    random_codes += o.random_codes;
  }
};

/// Erodes the mask, flips bit j of every masked code with probability p_j,
/// then replaces codes by uniformly random ones at `unknown_code_rate`.
/// Bit j of the binary code is bit (B - j) of the packed value.
template <typename Rng>
CodeMap corrupt_code_map(const CodeMap& gt, const ScenarioConfig& cfg, Rng& rng, BitErrorCounts* counts = nullptr) {
  CodeMap out = erode_mask(gt, cfg.corruption.mask_erosion_px);
  const unsigned bits = cfg.code_bits();
  std::vector<std::bernoulli_distribution> flip;
  for (unsigned j = 1; j <= bits; ++j) flip.emplace_back(cfg.flip(j));
  std::bernoulli_distribution replace(cfg.corruption.unknown_code_rate);
  std::uniform_int_distribution<std::uint64_t> any_code(0, (std::uint64_t{1} << bits) - 1);
  if (counts) counts->flips.assign(bits, 0);
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    if (!out.mask[i]) continue;
    Code c = out.codes[i];
    for (unsigned j = 1; j <= bits; ++j)
      if (flip[j - 1].p() > 0 && flip[j - 1](rng)) c ^= Code{1} << (bits - j);
    bool replaced = false;
    if (cfg.corruption.unknown_code_rate > 0 && replace(rng)) {
      c = any_code(rng);
      replaced = true;
    }
    if (counts) {
      ++counts->trials;
      if (replaced) ++counts->random_codes;
      else
        for (unsigned j = 1; j <= bits; ++j) counts->flips[j - 1] += ((c ^ out.codes[i]) >> (bits - j)) & 1u;
    }
    out.codes[i] = c;
  }
  return out;
}

/// Re-expresses a power-of-two radix code map in another power-of-two radix.
inline CodeMap convert_code_map_radix(const CodeMap& map, unsigned target_radix) {
  const unsigned bits = map.digits * static_cast<unsigned>(std::countr_zero(map.radix));
  const unsigned k = static_cast<unsigned>(std::countr_zero(target_radix));
  require(std::has_single_bit(map.radix) && std::has_single_bit(target_radix) && bits % k == 0,
          "radix conversion needs powers of two dividing the code length");
  CodeMap out = map;
  out.radix = target_radix;
  out.digits = bits / k;
  return out;  // codes are the same integers
}

/// Digit-level corruption for radix r = 2^k: digit j is replaced by a
/// uniformly drawn different digit with probability 1 - prod(1 - p_b) over
/// its bits b.
template <typename Rng>
CodeMap corrupt_digits(const CodeMap& gt_r, const ScenarioConfig& cfg, Rng& rng) {
  const unsigned k = static_cast<unsigned>(std::countr_zero(gt_r.radix));
  std::vector<std::bernoulli_distribution> hit;
  for (unsigned j = 1; j <= gt_r.digits; ++j) {
    double keep = 1.0;
    for (unsigned b = (j - 1) * k + 1; b <= j * k; ++b) keep *= 1.0 - cfg.flip(b);
    hit.emplace_back(1.0 - keep);
  }
  CodeMap out = erode_mask(gt_r, cfg.corruption.mask_erosion_px);
  std::uniform_int_distribution<unsigned> other(1, gt_r.radix - 1);
  std::bernoulli_distribution replace(cfg.corruption.unknown_code_rate);
  std::uniform_int_distribution<std::uint64_t> any_code(0, (std::uint64_t{1} << (gt_r.digits * k)) - 1);
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    if (!out.mask[i]) continue;
    Code c = out.codes[i];
    for (unsigned j = 1; j <= gt_r.digits; ++j) {
      if (hit[j - 1].p() <= 0 || !hit[j - 1](rng)) continue;
      const unsigned shift = (gt_r.digits - j) * k;
      const Code digit = (c >> shift) & (gt_r.radix - 1);
      c ^= (digit ^ ((digit + other(rng)) % gt_r.radix)) << shift;
    }
    if (cfg.corruption.unknown_code_rate > 0 && replace(rng)) c = any_code(rng);
    out.codes[i] = c;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

struct SolveOutcome {
  bool solved = false;
  double error_mm = std::numeric_limits<double>::infinity();
  std::size_t correspondences = 0;
  std::size_t kept = 0;
  std::size_t inliers = 0;
  int iterations = 0;
};

struct FrameResult {
  PoseSE3 gt;
  std::size_t masked_pixels = 0;
  std::size_t unknown_codes = 0;
  // [condition][truncation index]
  std::vector<std::vector<SolveOutcome>> truncation;
  // [condition][radix index]
  std::vector<std::vector<SolveOutcome>> radix;
  BitErrorCounts bit_errors;
  std::map<std::string, double> seconds;
};

struct BenchResult {
  ScenarioConfig config;
  std::string fingerprint_hex;
  std::size_t leaves = 0, encoded_vertices = 0, eval_points = 0;
  double diameter_mm = 0;
  std::vector<unsigned> truncation;
  std::vector<bool> conditions;
  std::map<unsigned, double> spread_threshold_mm;  // per truncation length
  std::vector<FrameResult> frames;
  double setup_seconds = 0;
};

class Pipeline {
public:
  Pipeline(const ScenarioConfig& cfg, const BenchObject& obj)
      : cfg_(cfg), obj_(obj), adds_(obj.original.vertices), truncation_(cfg.truncation_lengths()) {
    for (const auto j : truncation_) lookups_.push_back(truncate_lookup(obj.codebook, j));
    for (const auto r : cfg.radices) radix_books_.push_back(convert_codebook_radix(obj.codebook, r));
  }

  const std::vector<unsigned>& truncation() const { return truncation_; }

  /// Pose error under the configured metric (ADD or ADD-S).
  double pose_error(const PoseSE3& pred, const PoseSE3& gt) const {
    return cfg_.mesh.symmetric ? adds_(pred, gt) : add_error(pred, gt, obj_.original.vertices);
  }

  CodeMap render(const PoseSE3& pose) const {
    return render_code_map(obj_.encoded, obj_.face_codes, obj_.codebook.params(), pose, cfg_.camera);
  }

  /// Filter thresholds per truncation length from clean renders of poses
  /// drawn from a separate stream; a configured max_spread_mm overrides.
  std::map<unsigned, double> calibrate() const {
    std::map<unsigned, double> out;
    if (cfg_.filter.max_spread_mm > 0) {
      for (const auto j : truncation_) out[j] = cfg_.filter.max_spread_mm;
      return out;
    }
    std::vector<std::vector<double>> spreads(truncation_.size());
    for (int f = 0; f < cfg_.filter.calibration_frames; ++f) {
      std::mt19937_64 rng(detail::stream_seed(cfg_.seed, detail::kCalibrationStream, static_cast<std::uint64_t>(f)));
      const auto map = render(sample_pose(obj_.original.vertices, cfg_.camera, cfg_.poses, rng));
      for (std::size_t t = 0; t < truncation_.size(); ++t) {
        const auto corrs = match_codes(truncate_code_map(map, truncation_[t]), lookups_[t]).correspondences;
        for (const auto& s : neighborhood_spread(corrs, cfg_.filter.radius_px))
          if (s) spreads[t].push_back(*s);
      }
    }
    for (std::size_t t = 0; t < truncation_.size(); ++t) out[truncation_[t]] = spread_threshold(spreads[t]);
    return out;
  }

  SolveOutcome solve(const std::vector<Correspondence>& corrs, const PoseSE3& gt, bool filtered,
                     double threshold) const {
    SolveOutcome o;
    o.correspondences = corrs.size();
    const auto used = filtered ? coherence_filter(corrs, cfg_.filter.radius_px, threshold) : corrs;
    o.kept = used.size();
    if (used.size() < 4) return o;
    const auto res = ransac_pnp(used, cfg_.camera, cfg_.solver);
    o.iterations = res.iterations_used;
    o.inliers = res.inlier_count;
    if (!res.success) return o;
    o.solved = true;
    o.error_mm = pose_error(res.pose, gt);
    return o;
  }

  FrameResult run_frame(std::size_t index, const std::map<unsigned, double>& thresholds) const {
    using clock = std::chrono::steady_clock;
    FrameResult fr;
    auto tick = clock::now();
    auto lap = [&](const char* stage) {
      const auto now = clock::now();
      fr.seconds[stage] += std::chrono::duration<double>(now - tick).count();
      tick = now;
    };

    std::mt19937_64 pose_rng(detail::stream_seed(cfg_.seed, detail::kPoseStream, index));
    fr.gt = sample_pose(obj_.original.vertices, cfg_.camera, cfg_.poses, pose_rng);
    const CodeMap gt_map = render(fr.gt);
    lap("render");

    std::mt19937_64 corrupt_rng(detail::stream_seed(cfg_.seed, detail::kCorruptStream, index));
    const CodeMap noisy = corrupt_code_map(gt_map, cfg_, corrupt_rng, &fr.bit_errors);
    lap("corrupt");

    const auto conditions = cfg_.conditions();
    fr.truncation.assign(conditions.size(), {});
    for (std::size_t t = 0; t < truncation_.size(); ++t) {
      const unsigned j = truncation_[t];
      const auto m = match_codes(j == cfg_.encoding.digits ? noisy : truncate_code_map(noisy, j), lookups_[t]);
      if (j == cfg_.encoding.digits) {
        fr.masked_pixels = m.masked_pixels;
        fr.unknown_codes = m.unknown_codes;
      }
      lap("match");
      for (std::size_t c = 0; c < conditions.size(); ++c)
        fr.truncation[c].push_back(solve(m.correspondences, fr.gt, conditions[c], thresholds.at(j)));
      lap("solve");
    }

    fr.radix.assign(conditions.size(), {});
    for (std::size_t k = 0; k < cfg_.radices.size(); ++k) {
      std::mt19937_64 radix_rng(detail::stream_seed(cfg_.seed, detail::kRadixStream, index * 256 + k));
      const CodeMap gt_r = convert_code_map_radix(gt_map, cfg_.radices[k]);
      const auto m = match_codes(corrupt_digits(gt_r, cfg_, radix_rng), radix_books_[k]);
      lap("radix_match");
      for (std::size_t c = 0; c < conditions.size(); ++c)
        fr.radix[c].push_back(solve(m.correspondences, fr.gt, conditions[c], thresholds.at(cfg_.encoding.digits)));
      lap("radix_solve");
    }
    return fr;
  }

private:
  const ScenarioConfig& cfg_;
  const BenchObject& obj_;
  AddsEvaluator adds_;
  std::vector<unsigned> truncation_;
  std::vector<Codebook> lookups_;
  std::vector<Codebook> radix_books_;
};

/// Calls fn(i) for i in [0, n) on `threads` workers.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline BenchResult run_bench(const ScenarioConfig& cfg, const BenchObject& obj) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  BenchResult out;
  out.config = cfg;
  out.fingerprint_hex = to_hex(obj.codebook.fingerprint());
  out.leaves = obj.codebook.table().size();
  out.encoded_vertices = obj.encoded.vertex_count();
  out.eval_points = obj.original.vertex_count();
  out.diameter_mm = obj.diameter_mm;
  out.conditions = cfg.conditions();

  const Pipeline pipeline(cfg, obj);
  out.truncation = pipeline.truncation();
  out.spread_threshold_mm = pipeline.calibrate();
  out.setup_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.frames.resize(static_cast<std::size_t>(cfg.poses.count));
  parallel_for(out.frames.size(), cfg.threads,
               [&](std::size_t i) { out.frames[i] = pipeline.run_frame(i, out.spread_threshold_mm); });
  return out;
}

inline BenchResult run_bench(const ScenarioConfig& cfg) { return run_bench(cfg, prepare_object(cfg)); }

// ---------------------------------------------------------------------------
// Summaries and outputs

struct Summary {
  double recall = 0, auc_all_points = 0, auc_11pt = 0, mean_error_mm = 0;
  std::size_t solved = 0, n = 0;
};

inline Summary summarize(const std::vector<SolveOutcome>& outcomes, const BenchResult& r) {
  EvalConfig ec;
  ec.diameter_mm = r.diameter_mm;
  std::vector<double> errors;
  Summary s;
  s.n = outcomes.size();
  double finite_sum = 0;
  for (const auto& o : outcomes) {
    errors.push_back(o.error_mm);
    if (o.solved) {
      ++s.solved;
      finite_sum += o.error_mm;
    }
  }
  s.recall = recall_add(errors, ec);
  s.auc_all_points = auc_add(errors, ec, AucMode::AllPoints);
  s.auc_11pt = auc_add(errors, ec, AucMode::ElevenPoint);
  s.mean_error_mm = s.solved ? finite_sum / static_cast<double>(s.solved) : 0.0;
  return s;
}

/// Outcomes of one condition at truncation index t (or radix index when
/// `radix` is set) across frames.
inline std::vector<SolveOutcome> column(const BenchResult& r, std::size_t condition, std::size_t index,
                                        bool radix = false) {
  std::vector<SolveOutcome> out;
  for (const auto& f : r.frames) out.push_back(radix ? f.radix[condition][index] : f.truncation[condition][index]);
  return out;
}

inline Summary summary_at(const BenchResult& r, bool filtered, unsigned digits) {
  const auto c = static_cast<std::size_t>(
      std::find(r.conditions.begin(), r.conditions.end(), filtered) - r.conditions.begin());
  require(c < r.conditions.size(), "condition was not run");
  const auto t = static_cast<std::size_t>(std::find(r.truncation.begin(), r.truncation.end(), digits) - r.truncation.begin());
  require(t < r.truncation.size(), "truncation length was not run");
  return summarize(column(r, c, t), r);
}

inline BitErrorCounts total_bit_errors(const BenchResult& r) {
  BitErrorCounts total;
  for (const auto& f : r.frames) total.merge(f.bit_errors);
  return total;
}

inline nlohmann::ordered_json summary_json(const Summary& s) {
  return {{"n", s.n},
          {"solved", s.solved},
          {"recall_add", s.recall},
          {"auc_add_allpoints", s.auc_all_points},
          {"auc_add_11pt", s.auc_11pt},
          {"mean_error_mm", s.mean_error_mm}};
}

/// Deterministic report: no wall-clock values.
inline nlohmann::ordered_json report_json(const BenchResult& r) {
  nlohmann::ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["command"] = "bench-bitflip";
  j["codebook"] = {{"fingerprint", r.fingerprint_hex},
                   {"radix", r.config.encoding.radix},
                   {"digits", r.config.encoding.digits},
                   {"leaves", r.leaves},
                   {"encoded_vertices", r.encoded_vertices}};
  j["config"] = to_json(r.config);
  j["object"] = {{"diameter_mm", r.diameter_mm},
                 {"eval_points", r.eval_points},
                 {"metric", r.config.mesh.symmetric ? "ADD-S" : "ADD"},
                 {"recall_threshold_mm", 0.1 * r.diameter_mm}};
  j["solver_path"] = {{"pose_solver", "ransac+epnp"},
                      {"outlier_prefilter", "coherence_filter"},
                      {"progressive_x", false}};
  nlohmann::ordered_json thresholds = nlohmann::ordered_json::object();
  for (const auto& [d, t] : r.spread_threshold_mm) thresholds[std::to_string(d)] = t;
  j["filter_threshold_mm"] = thresholds;

  j["conditions"] = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < r.conditions.size(); ++c) {
    nlohmann::ordered_json cond;
    cond["name"] = condition_name(r.conditions[c]);
    cond["truncation"] = nlohmann::ordered_json::array();
    for (std::size_t t = 0; t < r.truncation.size(); ++t) {
      auto row = summary_json(summarize(column(r, c, t), r));
      row["digits"] = r.truncation[t];
      cond["truncation"].push_back(row);
    }
    cond["radix"] = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < r.config.radices.size(); ++k) {
      auto row = summary_json(summarize(column(r, c, k, true), r));
      row["radix"] = r.config.radices[k];
      cond["radix"].push_back(row);
    }
    j["conditions"].push_back(cond);
  }

  const auto bits = total_bit_errors(r);
  j["bit_errors"] = nlohmann::ordered_json::array();
  const auto clean_trials = bits.trials - bits.random_codes;
  for (unsigned b = 1; b <= bits.flips.size(); ++b) {
    const double p = r.config.flip(b);
    const double observed = clean_trials ? static_cast<double>(bits.flips[b - 1]) / static_cast<double>(clean_trials) : 0.0;
    const double sigma = clean_trials ? std::sqrt(p * (1 - p) / static_cast<double>(clean_trials)) : 0.0;
    j["bit_errors"].push_back({{"bit", b},
                               {"configured", p},
                               {"observed", observed},
                               {"flips", bits.flips[b - 1]},
                               {"trials", clean_trials},
                               {"within_3sigma", std::abs(observed - p) <= 3 * sigma}});
  }
  std::size_t masked = 0, unknown = 0;
  for (const auto& f : r.frames) {
    masked += f.masked_pixels;
    unknown += f.unknown_codes;
  }
  j["pixels"] = {{"masked", masked}, {"unknown_codes", unknown}, {"random_codes", bits.random_codes}};
  return j;
}

inline const char* kCsvHeader =
    "pose,condition,table,radix,digits,solved,correspondences,kept,inliers,iterations,error_mm,correct\n";

inline std::string per_pose_csv(const BenchResult& r) {
  std::ostringstream os;
  os << kCsvHeader;
  const double tau = 0.1 * r.diameter_mm;
  char buf[256];
  auto row = [&](std::size_t pose, std::size_t c, const char* table, unsigned radix, unsigned digits,
                 const SolveOutcome& o) {
    std::snprintf(buf, sizeof(buf), "%zu,%s,%s,%u,%u,%d,%zu,%zu,%zu,%d,%.17g,%d\n", pose, condition_name(r.conditions[c]),
                  table, radix, digits, o.solved ? 1 : 0, o.correspondences, o.kept, o.inliers, o.iterations,
                  o.error_mm, o.error_mm < tau ? 1 : 0);
    os << buf;
  };
  const unsigned bits = r.config.code_bits();
  for (std::size_t i = 0; i < r.frames.size(); ++i)
    for (std::size_t c = 0; c < r.conditions.size(); ++c) {
      for (std::size_t t = 0; t < r.truncation.size(); ++t)
        row(i, c, "truncation", r.config.encoding.radix, r.truncation[t], r.frames[i].truncation[c][t]);
      for (std::size_t k = 0; k < r.config.radices.size(); ++k)
        row(i, c, "radix", r.config.radices[k], bits / static_cast<unsigned>(std::countr_zero(r.config.radices[k])),
            r.frames[i].radix[c][k]);
    }
  return os.str();
}

inline nlohmann::ordered_json timings_json(const BenchResult& r) {
  std::map<std::string, double> total;
  for (const auto& f : r.frames)
    for (const auto& [stage, s] : f.seconds) total[stage] += s;
  nlohmann::ordered_json j;
  j["setup_seconds"] = r.setup_seconds;
  j["threads"] = r.config.threads;
  j["stage_seconds"] = total;
  return j;
}

/// Writes report.json, per_pose.csv and timings.json into `dir`.
inline void write_outputs(const BenchResult& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec && std::filesystem::is_directory(dir), "cannot create output directory " + dir.string());
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream os(dir / name, std::ios::binary);
    require(bool(os), "cannot write " + (dir / name).string());
    os << text;
  };
  write("report.json", report_json(r).dump(2) + "\n");
  write("per_pose.csv", per_pose_csv(r));
  write("timings.json", timings_json(r).dump(2) + "\n");
}

}  // namespace zebra::bench
