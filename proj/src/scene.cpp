#include "elite360/scene.hpp"

#include <cmath>
#include <limits>

#include "elite360/errors.hpp"
#include "elite360/sphere.hpp"

namespace e360 {

void BoxScene::validate() const {
  for (int a = 0; a < 3; ++a)
    if (!(half_extents[a] > 0)) throw ConfigError("box half-extents must be positive");
  if (checker_frequency < 0) throw ConfigError("checker_frequency must be nonnegative");
}

BoxScene box_scene_from_json(const nlohmann::json& j) {
  BoxScene s;
  if (j.contains("half_extents")) {
    const auto& h = j.at("half_extents");
    if (!h.is_array() || h.size() != 3) throw ConfigError("scene.half_extents must be a 3-element array");
    s.half_extents = {h[0].get<double>(), h[1].get<double>(), h[2].get<double>()};
  }
  if (j.contains("face_colors")) {
    const auto& c = j.at("face_colors");
    if (!c.is_array() || c.size() != 6) throw ConfigError("scene.face_colors must hold 6 RGB triples");
    for (std::size_t f = 0; f < 6; ++f) {
      if (!c[f].is_array() || c[f].size() != 3) throw ConfigError("scene.face_colors entries must be RGB triples");
      s.face_colors[f] = {c[f][0].get<float>(), c[f][1].get<float>(), c[f][2].get<float>()};
    }
  }
  s.checker_frequency = j.value("checker_frequency", s.checker_frequency);
  s.checker_dark = j.value("checker_dark", s.checker_dark);
  s.validate();
  return s;
}

nlohmann::json box_scene_to_json(const BoxScene& scene) {
  nlohmann::json j;
  j["half_extents"] = {scene.half_extents.x(), scene.half_extents.y(), scene.half_extents.z()};
  nlohmann::json colors = nlohmann::json::array();
  for (const auto& c : scene.face_colors) colors.push_back({c.x(), c.y(), c.z()});
  j["face_colors"] = colors;
  j["checker_frequency"] = scene.checker_frequency;
  j["checker_dark"] = scene.checker_dark;
  return j;
}

BoxHit intersect_box(const BoxScene& scene, const Eigen::Vector3d& dir) {
  const double n = dir.norm();
  if (!(n > 0)) throw UsageError("intersect_box: zero direction");
  const Eigen::Vector3d u = dir / n;
  BoxHit hit;
  hit.depth = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (u[a] == 0) continue;
    const double t = scene.half_extents[a] / std::abs(u[a]);
    if (t < hit.depth) {
      hit.depth = t;
      hit.face = 2 * a + (u[a] < 0 ? 1 : 0);
    }
  }
  hit.point = hit.depth * u;
  return hit;
}

SynthFrame synth_box_scene(const BoxScene& scene, Index height, Index width) {
  scene.validate();
  if (height < 1 || width != 2 * height) throw UsageError("synthetic panoramas need W = 2H");
  SynthFrame f;
  f.rgb = ImageF(3, height, width);
  f.depth.resize(height, width);
  f.mask = ValidMask::Constant(height, width, true);
  for (Index i = 0; i < height; ++i)
    for (Index j = 0; j < width; ++j) {
      const BoxHit hit = intersect_box(scene, pixel_to_dir(i, j, height, width));
      f.depth(i, j) = static_cast<float>(hit.depth);
      Eigen::Vector3f color = scene.face_colors[static_cast<std::size_t>(hit.face)];
      if (scene.checker_frequency > 0) {
        const int axis = hit.face / 2;
        long parity = 0;
        for (int a = 0; a < 3; ++a)
          if (a != axis) parity += static_cast<long>(std::floor(hit.point[a] * scene.checker_frequency));
        if (parity % 2 != 0) color *= scene.checker_dark;
      }
      for (int c = 0; c < 3; ++c) f.rgb(c, i, j) = color[c];
    }
  return f;
}

}  // namespace e360
