#include <cmath>

#include "doctest.h"
#include "elite360/scene.hpp"
#include "elite360/sphere.hpp"
#include "elite360/verify/oracles.hpp"

using namespace e360;

TEST_CASE("unit cube intersections") {
  BoxScene s;
  s.half_extents = Eigen::Vector3d::Ones();
  CHECK(intersect_box(s, {1, 0, 0}).depth == doctest::Approx(1.0));
  CHECK(intersect_box(s, {1, 0, 0}).face == 0);
  CHECK(intersect_box(s, {0, 0, -3}).face == 5);
  CHECK(intersect_box(s, Eigen::Vector3d(1, 1, 1).normalized()).depth == doctest::Approx(std::sqrt(3.0)));
  const auto hit = intersect_box(s, Eigen::Vector3d(0.2, -1, 0.4));
  CHECK(hit.face == 3);
  CHECK(hit.point.y() == doctest::Approx(-1.0));
  CHECK(hit.depth == doctest::Approx(hit.point.norm()));
  CHECK_THROWS_AS(intersect_box(s, Eigen::Vector3d::Zero()), UsageError);
}

TEST_CASE("box depth matches a ray-march oracle at every pixel") {
  const BoxScene scene;
  const auto frame = synth_box_scene(scene, 64, 128);
  REQUIRE(frame.depth.rows() == 64);
  REQUIRE(frame.depth.cols() == 128);
  CHECK(frame.mask.all());
  double worst = 0;
  for (Index i = 0; i < 64; ++i)
    for (Index j = 0; j < 128; ++j) {
      const double want = oracle::ray_march_box_depth(pixel_to_dir(i, j, 64, 128), scene.half_extents);
      worst = std::max(worst, std::abs(frame.depth(i, j) - want));
    }
  CHECK(worst < 1e-4);
}

TEST_CASE("synthetic colors") {
  BoxScene scene;
  scene.checker_frequency = 0;
  const auto frame = synth_box_scene(scene, 16, 32);
  // The image center looks at the +x wall.
  for (int c = 0; c < 3; ++c) CHECK(frame.rgb(c, 8, 16) == doctest::Approx(scene.face_colors[0][c]));
  const auto checkered = synth_box_scene(BoxScene{}, 32, 64);
  float lo = 1, hi = 0;
  for (Index i = 0; i < 32; ++i)
    for (Index j = 0; j < 64; ++j) {
      lo = std::min(lo, checkered.rgb(0, i, j));
      hi = std::max(hi, checkered.rgb(0, i, j));
    }
  CHECK(hi > lo);
  CHECK(lo >= 0.0f);
  CHECK(hi <= 1.0f);
  CHECK_THROWS_AS(synth_box_scene(scene, 16, 30), UsageError);
}

TEST_CASE("scene JSON") {
  BoxScene s;
  s.half_extents = {1, 2, 3};
  s.checker_frequency = 2;
  const auto back = box_scene_from_json(box_scene_to_json(s));
  CHECK(back.half_extents == s.half_extents);
  CHECK(back.checker_frequency == 2);
  CHECK(back.face_colors[4] == s.face_colors[4]);
  CHECK_THROWS_AS(box_scene_from_json(nlohmann::json{{"half_extents", {1, -1, 1}}}), ConfigError);
}
