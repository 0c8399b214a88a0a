// elite360: panorama depth toolkit command line.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <string>

#include "CLI11.hpp"
#include "elite360/depth.hpp"
#include "elite360/errors.hpp"
#include "elite360/icosap.hpp"
#include "elite360/image_io.hpp"
#include "elite360/manifest.hpp"
#include "elite360/model.hpp"
#include "elite360/runtime.hpp"
#include "elite360/scene.hpp"
#include "elite360/sphere.hpp"
#include "elite360/verify/audit.hpp"

namespace fs = std::filesystem;
using namespace e360;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitAudit = 3;
constexpr int kExitNumeric = 4;

ImageF load_erp_rgb(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("no such file: " + path.string());
  const auto ext = path.extension().string();
  ImageF img = (ext == ".pfm" || ext == ".PFM") ? read_pfm(path) : read_png(path);
  require_erp(img);
  return img;
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  f << j.dump(2) << "\n";
}

int cmd_icosap_gen(int level, const fs::path& erp_path, const fs::path& out) {
  if (level < 0 || level > 10) throw UsageError("--level must lie in [0, 10]");
  const ImageF erp = load_erp_rgb(erp_path);
  if (erp.channels() != 3) throw UsageError("--erp must be an RGB image");
  fs::create_directories(out);
  const IcosapMesh mesh = build_icosap_mesh(level);
  const auto set = face_center_point_set(mesh, erp);
  write_point_set_csv(out / "points.csv", set);
  write_point_set_binary(out / "points.icop", set);
  write_obj(out / "mesh.obj", mesh);
  std::printf("level %d: %td faces, %td vertices, %td points\n", level, mesh.face_count(), mesh.vertex_count(),
              set.size());
  RunManifest m;
  m.command = "icosap-gen";
  m.config = {{"level", level}};
  m.inputs = {erp_path};
  m.outputs = {out / "points.csv", out / "points.icop", out / "mesh.obj"};
  m.write(out);
  return kExitOk;
}

struct ProjectOptions {
  std::string mode;
  fs::path erp, out;
  Index face_size = 0;
  Index patches = 18;
  double fov_deg = 80.0;
  Index patch_size = 0;
  int level = 2;
};

int cmd_project(const ProjectOptions& o) {
  if (o.mode != "cubemap" && o.mode != "tangent" && o.mode != "icosap")
    throw UsageError("unknown mode '" + o.mode + "' (expected cubemap, tangent or icosap)");
  const ImageF erp = load_erp_rgb(o.erp);
  fs::create_directories(o.out);
  RunManifest m;
  m.command = "project";
  m.inputs = {o.erp};
  if (o.mode == "cubemap") {
    const Index s = o.face_size > 0 ? o.face_size : erp.height() / 2;
    const auto cube = erp_to_cubemap(erp, s);
    const std::string stem = o.erp.stem().string();
    for (CubeFace f : kCubeFaces) {
      const fs::path p = o.out / (stem + "_" + std::string(cube_face_suffix(f)) + ".png");
      write_png(p, cube.face(f));
      m.outputs.push_back(p);
    }
    m.config = {{"mode", o.mode}, {"face_size", s}};
    std::printf("cubemap: 6 faces of %td x %td\n", s, s);
  } else if (o.mode == "tangent") {
    if (o.patches < 1 || o.patches % 3 != 0) throw UsageError("--patches must be a positive multiple of 3");
    const double fov = o.fov_deg * std::numbers::pi / 180.0;
    const Index size = o.patch_size > 0 ? o.patch_size : std::max<Index>(8, erp.height() / 4);
    const auto centers = default_tangent_centers(o.patches);
    const auto set = erp_to_tangent_patches(erp, std::span<const SphereDir>(centers), fov, size);
    nlohmann::ordered_json idx;
    idx["fov"] = fov;
    idx["patch_size"] = size;
    auto arr = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < set.patches.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "patch_%03zu.png", k);
      write_png(o.out / name, set.patches[k].pixels);
      m.outputs.push_back(o.out / name);
      arr.push_back({{"index", k},
                     {"file", name},
                     {"lat", set.patches[k].center_latlon.lat},
                     {"lon", set.patches[k].center_latlon.lon}});
    }
    idx["patches"] = arr;
    write_json(o.out / "tangent.json", idx);
    m.outputs.push_back(o.out / "tangent.json");
    m.config = {{"mode", o.mode}, {"patches", o.patches}, {"fov_deg", o.fov_deg}, {"patch_size", size}};
    std::printf("tangent: %zu patches of %td x %td\n", set.patches.size(), size, size);
  } else {
    if (o.level < 0 || o.level > 10) throw UsageError("--level must lie in [0, 10]");
    const auto mesh = build_icosap_mesh(o.level);
    const auto set = face_center_point_set(mesh, erp);
    write_point_set_csv(o.out / "points.csv", set);
    write_point_set_binary(o.out / "points.icop", set);
    m.outputs = {o.out / "points.csv", o.out / "points.icop"};
    m.config = {{"mode", o.mode}, {"level", o.level}};
    std::printf("icosap: %td points\n", set.size());
  }
  m.write(o.out);
  return kExitOk;
}

int cmd_train(const fs::path& config_path, const std::string& out_override) {
  TrainConfig c = load_train_config(config_path);
  if (!out_override.empty()) c.out = out_override;
  const TrainResult r = train_overfit(c);
  std::printf("steps %d  first loss %.6f  final loss %.6f\n", r.steps, r.first_loss, r.final_loss);
  std::printf("%s\n", metrics_to_json(r.metrics).dump().c_str());
  RunManifest m;
  m.command = "train-overfit";
  m.config = train_config_to_json(c);
  m.seed = c.model.seed;
  m.inputs = {config_path};
  m.outputs = {c.out / "log.csv", c.out / "weights.e36w", c.out / "metrics.json", c.out / "pred.pfm"};
  m.write(c.out);
  return kExitOk;
}

DepthMap single_channel(const ImageF& img, const char* what) {
  if (img.channels() != 1) throw UsageError(std::string(what) + " must be a single-channel depth map");
  return img.plane(0);
}

int cmd_eval(const fs::path& pred_path, const fs::path& gt_path, const std::string& mask_path,
             const std::string& out_arg) {
  const DepthMap pred = single_channel(read_pfm(pred_path), "--pred");
  const DepthMap gt = single_channel(read_pfm(gt_path), "--gt");
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw UsageError("--pred and --gt differ in size");
  ValidMask mask = ValidMask::Constant(gt.rows(), gt.cols(), true);
  if (!mask_path.empty()) {
    mask = read_mask(mask_path);
    if (mask.rows() != gt.rows() || mask.cols() != gt.cols()) throw UsageError("--mask differs in size from --gt");
  }
  const MetricsReport r = compute_metrics(pred, gt, mask);
  if (r.skipped_nonpositive > 0)
    std::fprintf(stderr, "warning: %td masked pixels with nonpositive ground truth were excluded\n",
                 r.skipped_nonpositive);
  const auto j = metrics_to_json(r);
  std::printf("%s\n", j.dump().c_str());
  const fs::path out = out_arg.empty() ? fs::path("eval") : fs::path(out_arg);
  fs::create_directories(out);
  write_json(out / "metrics.json", j);
  RunManifest m;
  m.command = "eval";
  m.inputs = {pred_path, gt_path};
  if (!mask_path.empty()) m.inputs.push_back(mask_path);
  m.outputs = {out / "metrics.json"};
  m.write(out);
  return kExitOk;
}

int cmd_audit(const std::string& scope, const std::string& fault, const std::string& out_arg) {
  if (!fault.empty()) set_gradient_fault(audit::parse_op(fault), true);
  const audit::Report r = audit::run(scope);
  clear_gradient_faults();
  for (const auto& c : r.checks)
    std::printf("%-4s %-32s max_err %.3e  tol %.1e%s%s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.max_error,
                c.tolerance, c.detail.empty() ? "" : "  ", c.detail.c_str());
  std::printf("audit %s: %s\n", scope.c_str(), r.passed() ? "PASS" : "FAIL");
  const fs::path out = out_arg.empty() ? fs::path("audit") : fs::path(out_arg);
  fs::create_directories(out);
  write_json(out / "audit.json", r.to_json());
  RunManifest m;
  m.command = "audit";
  m.config = {{"scope", scope}, {"inject_fault", fault}};
  m.outputs = {out / "audit.json"};
  m.write(out);
  return r.passed() ? kExitOk : kExitAudit;
}

int cmd_synth(const fs::path& config_path, const fs::path& out) {
  const TrainConfig c = load_train_config(config_path);
  const SynthFrame f = synth_box_scene(c.scene, c.model.height, c.model.width);
  fs::create_directories(out);
  write_png(out / "rgb.png", f.rgb);
  ImageF depth(1, f.depth.rows(), f.depth.cols());
  depth.plane(0) = f.depth;
  write_pfm(out / "depth.pfm", depth);
  ImageF mask(1, f.mask.rows(), f.mask.cols());
  mask.plane(0) = f.mask.cast<float>();
  write_png(out / "mask.png", mask);
  std::printf("synth: %td x %td, depth %.4f .. %.4f m\n", f.depth.rows(), f.depth.cols(),
              static_cast<double>(f.depth.minCoeff()), static_cast<double>(f.depth.maxCoeff()));
  RunManifest m;
  m.command = "synth";
  m.config = train_config_to_json(c);
  m.seed = c.model.seed;
  m.inputs = {config_path};
  m.outputs = {out / "rgb.png", out / "depth.pfm", out / "mask.png"};
  m.write(out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Panorama depth estimation with bi-projection fusion"};
  app.require_subcommand(1);
  int threads = 0;
  bool parallel = false;
  app.add_option("--threads", threads, "Worker threads when not deterministic (default: ELITE360_THREADS or 1)");
  app.add_flag("--no-deterministic", parallel, "Allow multi-threaded primitives");

  int level = 0;
  fs::path erp, out, config;
  auto* gen = app.add_subcommand("icosap-gen", "Build an ICOSAP point set from an ERP image");
  gen->add_option("--level", level, "Subdivision level")->required();
  gen->add_option("--erp", erp, "ERP panorama (PNG)")->required();
  gen->add_option("--out", out, "Output directory")->required();

  ProjectOptions po;
  auto* proj = app.add_subcommand("project", "Resample an ERP image to another projection");
  proj->add_option("--mode", po.mode, "cubemap, tangent or icosap")->required();
  proj->add_option("--erp", po.erp, "ERP panorama (PNG)")->required();
  proj->add_option("--out", po.out, "Output directory")->required();
  proj->add_option("--faces", po.face_size, "Cubemap face size in pixels (default H/2)");
  proj->add_option("--patches", po.patches, "Tangent patch count, multiple of 3");
  proj->add_option("--fov", po.fov_deg, "Tangent patch field of view in degrees");
  proj->add_option("--patch-size", po.patch_size, "Tangent patch size in pixels");
  proj->add_option("--level", po.level, "ICOSAP level");

  std::string out_str;
  auto* train = app.add_subcommand("train-overfit", "Overfit the model to one synthetic scene");
  train->add_option("--config", config, "JSON config")->required();
  train->add_option("--out", out_str, "Override the output directory");

  fs::path pred, gt;
  std::string mask;
  auto* eval = app.add_subcommand("eval", "Depth metrics of a prediction");
  eval->add_option("--pred", pred, "Predicted depth (PFM)")->required();
  eval->add_option("--gt", gt, "Ground-truth depth (PFM)")->required();
  eval->add_option("--mask", mask, "Valid mask (PNG or PFM, nonzero = valid)");
  eval->add_option("--out", out_str, "Output directory (default ./eval)");

  std::string scope, fault;
  auto* aud = app.add_subcommand("audit", "Gradient and oracle audits");
  aud->add_option("--scope", scope, "tensor, b2f, model or all")->required();
  aud->add_option("--inject-fault", fault, "Corrupt one primitive's gradient (negative control)");
  aud->add_option("--out", out_str, "Output directory (default ./audit)");

  auto* synth = app.add_subcommand("synth", "Render the synthetic box scene");
  synth->add_option("--config", config, "JSON config")->required();
  synth->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  set_deterministic(!parallel);
  if (threads > 0) set_thread_count(threads);

  try {
    if (*gen) return cmd_icosap_gen(level, erp, out);
    if (*proj) return cmd_project(po);
    if (*train) return cmd_train(config, out_str);
    if (*eval) return cmd_eval(pred, gt, mask, out_str);
    if (*aud) return cmd_audit(scope, fault, out_str);
    if (*synth) return cmd_synth(config, out);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
