#pragma once

// Synthetic axis-aligned room seen from its center, with analytic depth.

#include <Eigen/Core>

#include <array>

#include "elite360/depth.hpp"
#include "elite360/image.hpp"
#include "json.hpp"

namespace e360 {

struct BoxScene {
  Eigen::Vector3d half_extents{3.0, 2.0, 1.5};
  // Colors of the faces hit when leaving through +x, -x, +y, -y, +z, -z.
  std::array<Eigen::Vector3f, 6> face_colors = {
      Eigen::Vector3f(0.85f, 0.30f, 0.25f), Eigen::Vector3f(0.25f, 0.70f, 0.35f),
      Eigen::Vector3f(0.25f, 0.40f, 0.85f), Eigen::Vector3f(0.90f, 0.80f, 0.30f),
      Eigen::Vector3f(0.80f, 0.80f, 0.80f), Eigen::Vector3f(0.45f, 0.35f, 0.30f)};
  // Checker cells per meter on each wall; 0 disables the pattern.
  double checker_frequency = 1.0;
  // Brightness of the dark checker cells relative to the face color.
  float checker_dark = 0.55f;

  void validate() const;
};

BoxScene box_scene_from_json(const nlohmann::json& j);
nlohmann::json box_scene_to_json(const BoxScene& scene);

struct BoxHit {
  double depth = 0;
  int face = 0;  // CubeFace order: +x, -x, +y, -y, +z, -z
  Eigen::Vector3d point;
};

// Exit point of the ray from the origin: the nearest of the three
// axis-aligned planes it is heading toward.
BoxHit intersect_box(const BoxScene& scene, const Eigen::Vector3d& dir);

struct SynthFrame {
  ImageF rgb;      // 3 x H x W
  DepthMap depth;  // meters along the ray
  ValidMask mask;  // all true
};

SynthFrame synth_box_scene(const BoxScene& scene, Index height, Index width);

}  // namespace e360
