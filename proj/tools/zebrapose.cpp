// zebrapose: command-line front end for encoding, rendering, matching,
// pose solving, evaluation and the corruption benchmark.

#include "zebra/bench.hpp"
#include "zebra/losses.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>

using namespace zebra;
using json = nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kBadConfig = 2, kPipelineFailure = 3 };

// Thrown while resolving arguments and input files into a configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string output;
};

struct CameraFlags {
  CameraIntrinsics cam{256, 256, 64, 64, 128, 128};

  void add(CLI::App* app) {
    app->add_option("--fx", cam.fx, "focal length x (px)");
    app->add_option("--fy", cam.fy, "focal length y (px)");
    app->add_option("--cx", cam.cx, "principal point x (px)");
    app->add_option("--cy", cam.cy, "principal point y (px)");
    app->add_option("--width", cam.width, "image width (px)");
    app->add_option("--height", cam.height, "image height (px)");
  }

  json to_json() const {
    return {{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx}, {"cy", cam.cy}, {"width", cam.width}, {"height", cam.height}};
  }
};

template <typename Fn>
auto resolve(Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path);
  return is;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  return os;
}

Codebook load_codebook(const std::string& path) {
  auto is = open_in(path);
  return resolve([&] { return read_codebook(is); });
}

// The mesh a codebook was built on: the file as is, or upsampled the way
// `encode` does it.
TriangleMesh mesh_for_codebook(const std::string& path, const Codebook& cb, bool upsample) {
  return resolve([&] {
    TriangleMesh mesh = bench::load_object_mesh(path);
    if (mesh.vertex_count() != cb.vertex_count() && upsample)
      mesh = upsample_until(mesh, static_cast<std::size_t>(cb.params().classes()) - 1);
    require(fingerprint_vertices(mesh.vertices) == cb.fingerprint(), "mesh does not match codebook fingerprint");
    return mesh;
  });
}

std::vector<PoseSE3> load_poses(const std::string& path) {
  auto is = open_in(path);
  return resolve([&] {
    const auto j = nlohmann::json::parse(is);
    std::vector<PoseSE3> out;
    if (j.is_array())
      for (const auto& p : j) out.push_back(pose_from_json(p));
    else if (j.contains("poses"))
      for (const auto& p : j["poses"]) out.push_back(pose_from_json(p));
    else
      out.push_back(pose_from_json(j));
    return out;
  });
}

void emit(const json& j) { std::cout << j.dump(2) << std::endl; }

// ---------------------------------------------------------------------------

struct EncodeCmd {
  std::string mesh;
  EncodingParams params{2, 16, 0};
  bool upsample = true;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("encode", "build a ZBCB codebook from a mesh");
    c->add_option("--mesh", mesh, "mesh file (PLY/OBJ) or builtin:lumpy|icosphere|box")->required();
    c->add_option("--radix,-r", params.radix, "radix r");
    c->add_option("--digits,-d", params.digits, "code length d");
    c->add_flag("--upsample,!--no-upsample", upsample, "subdivide until r^d <= vertices (default on)");
    c->callback([this] { run_state = this; });
  }

  int run(const Globals& g) {
    params.seed = g.seed;
    const std::string out = g.output.empty() ? "codebook.zbcb" : g.output;
    const auto [encoded, original_vertices] = resolve([&] {
      params.validate();
      TriangleMesh m = bench::load_object_mesh(mesh);
      const auto original = m.vertex_count();
      if (upsample && static_cast<double>(m.vertex_count()) < static_cast<double>(params.classes()))
        m = upsample_until(m, static_cast<std::size_t>(params.classes()) - 1);
      require(static_cast<double>(m.vertex_count()) >= static_cast<double>(params.classes()),
              "r^d exceeds the vertex count; enable --upsample or lower --digits");
      return std::pair{m, original};
    });
    const auto cb = encode_mesh(encoded, params);
    {
      auto os = open_out(out);
      write_codebook(os, cb);
    }
    std::string mesh_out;
    if (encoded.vertex_count() != original_vertices) {
      mesh_out = out + ".mesh.ply";
      save_ply(encoded, mesh_out);
    }
    const auto stats = leaf_stats(encoded, cb);
    json hist = json::object();
    for (const auto& [size, count] : stats.size_histogram) hist[std::to_string(size)] = count;
    emit({{"command", "encode"},
          {"config",
           {{"mesh", mesh}, {"radix", params.radix}, {"digits", params.digits}, {"seed", params.seed}, {"upsample", upsample}}},
          {"output", out},
          {"encoded_mesh", mesh_out},
          {"fingerprint", to_hex(cb.fingerprint())},
          {"vertices", {{"original", original_vertices}, {"encoded", encoded.vertex_count()}}},
          {"leaves", cb.table().size()},
          {"leaf_size_histogram", hist},
          {"max_leaf_diameter_mm", stats.max_leaf_diameter}});
    return kOk;
  }

  inline static EncodeCmd* run_state = nullptr;
};

struct RenderCmd {
  std::string mesh, codebook, pose;
  std::vector<double> translation{0, 0, 400};
  bool upsample = true;
  CameraFlags camera;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("render", "render a ZBCM code map");
    c->add_option("--mesh", mesh, "mesh used for encoding")->required();
    c->add_option("--codebook", codebook, "ZBCB codebook")->required();
    c->add_option("--pose", pose, "pose JSON {R, t}; default identity rotation at --t");
    c->add_option("--t", translation, "translation x y z (mm) when --pose is absent")->expected(3);
    c->add_flag("--upsample,!--no-upsample", upsample, "upsample the mesh like encode does");
    camera.add(c);
    c->callback([this] { run_state = this; });
  }

  int run(const Globals& g) {
    const std::string out = g.output.empty() ? "codemap.zbcm" : g.output;
    const auto cb = load_codebook(codebook);
    const auto m = mesh_for_codebook(mesh, cb, upsample);
    const PoseSE3 p = pose.empty() ? PoseSE3{Mat3::Identity(), Vec3(translation[0], translation[1], translation[2])}
                                   : load_poses(pose).at(0);
    resolve([&] {
      camera.cam.validate();
      require(p.is_valid(), "pose rotation is not orthonormal");
      return 0;
    });
    const auto map = render_code_map(m, cb, p, camera.cam);
    auto os = open_out(out);
    write_code_map(os, map);
    emit({{"command", "render"},
          {"config",
           {{"mesh", mesh}, {"codebook", codebook}, {"pose", pose_to_json(p)}, {"camera", camera.to_json()}, {"seed", g.seed}}},
          {"output", out},
          {"masked_pixels", map.masked_count()}});
    return kOk;
  }

  inline static RenderCmd* run_state = nullptr;
};

struct MatchCmd {
  std::string codemap, codebook;
  unsigned truncate = 0;
  bool filter = false;
  double radius_px = 5.0, max_spread_mm = 0.0;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("match", "decode a code map into 2D-3D correspondences (CSV)");
    c->add_option("--codemap", codemap, "ZBCM code map")->required();
    c->add_option("--codebook", codebook, "ZBCB codebook")->required();
    c->add_option("--truncate,-j", truncate, "use only the first j digits (0 = all)");
    c->add_flag("--filter", filter, "apply the neighborhood coherence filter");
    c->add_option("--radius", radius_px, "filter radius (px)");
    c->add_option("--max-spread", max_spread_mm, "filter threshold (mm); 0 calibrates on this map");
    c->callback([this] { run_state = this; });
  }

  int run(const Globals& g) {
    const std::string out = g.output.empty() ? "correspondences.csv" : g.output;
    const auto full = load_codebook(codebook);
    auto is = open_in(codemap);
    CodeMap map = resolve([&] { return read_code_map(is); });
    const unsigned j = truncate == 0 ? full.params().digits : truncate;
    resolve([&] {
      require(j <= full.params().digits, "--truncate exceeds the code length");
      require(radius_px > 0 && max_spread_mm >= 0, "bad filter parameters");
      return 0;
    });
    const auto cb = j == full.params().digits ? full : truncate_lookup(full, j);
    if (j != full.params().digits) map = truncate_code_map(map, j);
    const auto m = match_codes(map, cb);
    auto corrs = m.correspondences;
    double threshold = max_spread_mm;
    if (filter) {
      if (threshold == 0) threshold = calibrate_spread_threshold(corrs, radius_px);
      corrs = coherence_filter(corrs, radius_px, threshold);
    }
    auto os = open_out(out);
    write_correspondences_csv(os, corrs, cb.params());
    emit({{"command", "match"},
          {"config",
           {{"codemap", codemap}, {"codebook", codebook}, {"digits", j}, {"filter", filter},
            {"radius_px", radius_px}, {"max_spread_mm", threshold}, {"seed", g.seed}}},
          {"output", out},
          {"masked_pixels", m.masked_pixels},
          {"unknown_codes", m.unknown_codes},
          {"matched", m.correspondences.size()},
          {"written", corrs.size()}});
    return kOk;
  }

  inline static MatchCmd* run_state = nullptr;
};

struct SolveCmd {
  std::string corrs;
  EncodingParams params{2, 16, 0};
  SolverConfig solver;
  CameraFlags camera;
  std::string gt;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("solve-pose", "RANSAC/EPnP on a correspondence CSV");
    c->add_option("--corrs", corrs, "correspondence CSV")->required();
    c->add_option("--radix,-r", params.radix, "radix of the code column");
    c->add_option("--digits,-d", params.digits, "digits of the code column");
    c->add_option("--threshold", solver.reproj_threshold_px, "inlier reprojection threshold (px)");
    c->add_option("--iterations", solver.max_iterations, "RANSAC iteration cap");
    c->add_option("--min-inliers", solver.min_inliers, "minimum inliers for success");
    c->add_option("--confidence", solver.confidence, "early-exit confidence");
    c->add_option("--gt", gt, "ground-truth pose JSON; reports rotation/translation error");
    camera.add(c);
    c->callback([this] { run_state = this; });
  }

  int run(const Globals& g) {
    solver.seed = g.seed;
    auto is = open_in(corrs);
    const auto list = resolve([&] {
      params.validate();
      solver.validate();
      camera.cam.validate();
      return read_correspondences_csv(is, params);
    });
    if (list.size() < 4) throw ConfigError("need at least 4 correspondences");
    const auto res = ransac_pnp(list, camera.cam, solver);
    json j{{"command", "solve-pose"},
           {"config",
            {{"corrs", corrs},
             {"camera", camera.to_json()},
             {"solver",
              {{"reproj_threshold_px", solver.reproj_threshold_px},
               {"max_iterations", solver.max_iterations},
               {"min_inliers", solver.min_inliers},
               {"confidence", solver.confidence},
               {"seed", solver.seed}}}}},
           {"correspondences", list.size()},
           {"pose", pose_to_json(res)}};
    if (!gt.empty() && res.success) {
      const auto truth = load_poses(gt).at(0);
      j["rotation_error_rad"] = rotation_angle_between(res.pose.R, truth.R);
      j["translation_error_mm"] = (res.pose.t - truth.t).norm();
    }
    if (!g.output.empty()) {
      auto os = open_out(g.output);
      os << pose_to_json(res).dump(2) << "\n";
    }
    emit(j);
    return res.success ? kOk : kPipelineFailure;
  }

  inline static SolveCmd* run_state = nullptr;
};

struct EvalCmd {
  std::string pred, gt, mesh, name = "object";
  bool symmetric = false;
  EvalConfig cfg;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("eval", "ADD(-S) recall and AUC for pose lists");
    c->add_option("--pred", pred, "predicted poses (JSON array of {R, t})")->required();
    c->add_option("--gt", gt, "ground-truth poses, same order")->required();
    c->add_option("--mesh", mesh, "model mesh (evaluation points)")->required();
    c->add_option("--name", name, "object name in the report");
    c->add_flag("--symmetric", symmetric, "use ADD-S");
    c->add_option("--threshold-fraction", cfg.threshold_fraction, "recall threshold as a diameter fraction");
    c->add_option("--auc-max", cfg.auc_max_mm, "AUC upper threshold (mm)");
    c->callback([this] { run_state = this; });
  }

  int run(const Globals& g) {
    const auto p = load_poses(pred), t = load_poses(gt);
    const auto m = resolve([&] {
      require(p.size() == t.size(), "prediction and ground-truth lists differ in length");
      return bench::load_object_mesh(mesh);
    });
    cfg.diameter_mm = diameter(m.vertices);
    resolve([&] {
      cfg.validate();
      return 0;
    });
    ObjectEvaluation obj{name, cfg, {}};
    const AddsEvaluator adds(m.vertices, AddsEvaluator::kDefaultCap, g.seed);
    for (std::size_t i = 0; i < p.size(); ++i)
      obj.errors.push_back(symmetric ? adds(p[i], t[i]) : add_error(p[i], t[i], m.vertices));
    json j{{"command", "eval"},
           {"config",
            {{"pred", pred}, {"gt", gt}, {"mesh", mesh}, {"metric", symmetric ? "ADD-S" : "ADD"},
             {"threshold_fraction", cfg.threshold_fraction}, {"auc_max_mm", cfg.auc_max_mm},
             {"adds_cap", AddsEvaluator::kDefaultCap}, {"seed", g.seed}}},
           {"report", evaluation_report({obj})}};
    if (!g.output.empty()) {
      auto os = open_out(g.output);
      os << j.dump(2) << "\n";
    }
    emit(j);
    return kOk;
  }

  inline static EvalCmd* run_state = nullptr;
};

struct BenchCmd {
  std::string config;
  std::optional<std::uint64_t> bench_seed;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("bench-bitflip", "synthetic corruption benchmark");
    c->add_option("--config,-c", config, "scenario INI file; defaults apply when omitted");
    c->callback([this] { run_state = this; });
  }

  int run(const Globals& g, const CLI::App& app) {
    auto cfg = resolve([&] {
      bench::ScenarioConfig c;
      if (!config.empty()) c = bench::load_scenario(config);
      if (app.count("--seed")) c.seed = g.seed;
      if (app.count("--threads")) c.threads = g.threads;
      if (!g.output.empty()) c.output_dir = g.output;
      c.validate();
      return c;
    });
    const auto result = bench::run_bench(cfg);
    bench::write_outputs(result, cfg.output_dir);
    const auto report = bench::report_json(result);
    json summary{{"command", "bench-bitflip"}, {"config", report["config"]}, {"output_dir", cfg.output_dir},
                 {"fingerprint", report["codebook"]["fingerprint"]}};
    json recall = json::object();
    for (const auto& cond : report["conditions"]) {
      json row = json::object();
      for (const auto& t : cond["truncation"]) row[std::to_string(t["digits"].get<unsigned>())] = t["recall_add"];
      recall[cond["name"].get<std::string>()] = row;
    }
    summary["recall_by_digits"] = recall;
    emit(summary);
    return kOk;
  }

  inline static BenchCmd* run_state = nullptr;
};

struct LossCmd {
  std::string pred, gt;
  LossParams params;
  double sigma = 0.5, lambda = 0.05;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("loss-check", "evaluate the training objective on a prediction map");
    c->add_option("--pred", pred, "ZBPM prediction map")->required();
    c->add_option("--gt", gt, "ZBCM ground-truth code map (radix 2)")->required();
    c->add_option("--alpha", params.alpha, "weight of the hierarchical term");
    c->add_option("--sigma", sigma, "weight sharpness");
    c->add_option("--lambda", lambda, "histogram EMA rate");
    c->callback([this] { run_state = this; });
  }

  int run(const Globals& g) {
    auto pis = open_in(pred);
    auto gis = open_in(gt);
    const auto p = resolve([&] { return read_prediction_map(pis); });
    const auto m = resolve([&] { return read_code_map(gis); });
    resolve([&] {
      params.validate();
      require(lambda >= 0 && lambda <= 1, "lambda must be in [0, 1]");
      return 0;
    });
    const auto loss = total_loss(p, m, ErrorHistogram::zeros(p.digits, lambda), params, sigma);
    emit({{"command", "loss-check"},
          {"config",
           {{"pred", pred}, {"gt", gt}, {"alpha", params.alpha}, {"epsilon", params.epsilon},
            {"sigma", sigma}, {"lambda", lambda}, {"seed", g.seed}}},
          {"total", loss.total},
          {"mask", loss.mask},
          {"hier", loss.hier},
          {"code_pixels", loss.code_pixels},
          {"histogram", loss.histogram.error},
          {"weights", loss.weights.w}});
    return kOk;
  }

  inline static LossCmd* run_state = nullptr;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"zebrapose: coarse-to-fine surface encoding toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--output,-o", g.output, "output file or directory");

  EncodeCmd encode;
  RenderCmd render;
  MatchCmd match;
  SolveCmd solve;
  EvalCmd eval;
  BenchCmd bench_cmd;
  LossCmd loss;
  encode.add(app);
  render.add(app);
  match.add(app);
  solve.add(app);
  eval.add(app);
  bench_cmd.add(app);
  loss.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kBadConfig;
  }

  try {
    if (EncodeCmd::run_state) return encode.run(g);
    if (RenderCmd::run_state) return render.run(g);
    if (MatchCmd::run_state) return match.run(g);
    if (SolveCmd::run_state) return solve.run(g);
    if (EvalCmd::run_state) return eval.run(g);
    if (BenchCmd::run_state) return bench_cmd.run(g, app);
    if (LossCmd::run_state) return loss.run(g);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kPipelineFailure;
  }
  return kBadConfig;
}
