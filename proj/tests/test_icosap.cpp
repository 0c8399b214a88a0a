#include <Eigen/Geometry>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "doctest.h"
#include "elite360/icosap.hpp"

using namespace e360;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("e360_icosap_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ImageF gradient_erp(Index h) {
  ImageF img(3, h, 2 * h);
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < 2 * h; ++j) {
      img(0, i, j) = static_cast<float>(i) / static_cast<float>(h);
      img(1, i, j) = static_cast<float>(j) / static_cast<float>(2 * h);
      img(2, i, j) = 0.5f;
    }
  return img;
}

}  // namespace

TEST_CASE("face and vertex counts") {
  const std::pair<Index, Index> want[] = {{20, 12}, {80, 42}, {320, 162}};
  for (int l = 0; l < 3; ++l) {
    const auto mesh = build_icosap_mesh(l);
    CHECK(mesh.face_count() == want[l].first);
    CHECK(mesh.vertex_count() == want[l].second);
  }
  for (int l = 0; l <= 5; ++l) {
    const auto mesh = build_icosap_mesh(l);
    CHECK(mesh.face_count() == icosap_face_count(l));
    CHECK(mesh.vertex_count() == icosap_vertex_count(l));
    CHECK(mesh.edge_count() == icosap_edge_count(l));
    CHECK(mesh.euler_characteristic() == 2);
  }
  CHECK_THROWS_AS(build_icosap_mesh(-1), UsageError);
}

TEST_CASE("level 4 point set has 5120 rows and builds quickly") {
  const auto t0 = std::chrono::steady_clock::now();
  const auto set = face_center_point_set(build_icosap_mesh(4), gradient_erp(64));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(set.size() == 5120);
  CHECK(secs < 5.0);
}

TEST_CASE("mesh geometry") {
  const auto base = build_icosahedron();
  CHECK((base.vertices[0] - Eigen::Vector3d(0, 0, 1)).norm() < 1e-12);
  double min_edge = 1e9, max_edge = 0;
  for (const auto& f : base.faces)
    for (int k = 0; k < 3; ++k) {
      const double e = (base.vertices[f[k]] - base.vertices[f[(k + 1) % 3]]).norm();
      min_edge = std::min(min_edge, e);
      max_edge = std::max(max_edge, e);
    }
  CHECK(max_edge - min_edge < 1e-12);
  for (int l = 0; l <= 3; ++l) {
    const auto mesh = build_icosap_mesh(l);
    for (const auto& v : mesh.vertices) CHECK(std::abs(v.norm() - 1) < 1e-12);
    for (const auto& f : mesh.faces) {
      const auto& a = mesh.vertices[f[0]];
      const auto& b = mesh.vertices[f[1]];
      const auto& c = mesh.vertices[f[2]];
      CHECK((b - a).cross(c - a).dot(a + b + c) > 0);
    }
    // Shared midpoints: no two vertices coincide.
    std::set<std::tuple<long, long, long>> keys;
    for (const auto& v : mesh.vertices)
      keys.insert({std::lround(v.x() * 1e9), std::lround(v.y() * 1e9), std::lround(v.z() * 1e9)});
    CHECK(static_cast<Index>(keys.size()) == mesh.vertex_count());
  }
}

TEST_CASE("face centers sit inside the sphere") {
  const auto img = gradient_erp(16);
  const auto l0 = face_center_point_set(build_icosap_mesh(0), img);
  for (Index f = 0; f < l0.size(); ++f)
    CHECK(l0.coords().row(f).norm() == doctest::Approx(0.7946545).epsilon(1e-6));
  double prev_mean = 0;
  for (int l = 0; l <= 4; ++l) {
    const auto set = face_center_point_set(build_icosap_mesh(l), img);
    double mean = 0;
    for (Index f = 0; f < set.size(); ++f) {
      const double n = set.coords().row(f).norm();
      CHECK(n > 0.75);
      CHECK(n < 1.0);
      mean += n;
    }
    mean /= static_cast<double>(set.size());
    CHECK(mean > prev_mean);
    prev_mean = mean;
  }
  const auto unit = face_center_point_set(build_icosap_mesh(1), img, true);
  for (Index f = 0; f < unit.size(); ++f) CHECK(unit.coords().row(f).norm() == doctest::Approx(1.0));
}

TEST_CASE("face colors average the vertex samples") {
  const ImageF flat(3, 16, 32, 0.3f);
  const auto c = face_center_point_set(build_icosap_mesh(2), flat);
  for (Index f = 0; f < c.size(); ++f)
    for (int k = 0; k < 3; ++k) CHECK(c.colors()(f, k) == doctest::Approx(0.3f));

  const auto img = gradient_erp(32);
  const auto mesh = build_icosap_mesh(2);
  const auto set = face_center_point_set(mesh, img);
  for (Index f = 0; f < set.size(); ++f) {
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e9), hi = Eigen::Vector3d::Constant(-1e9), mean = Eigen::Vector3d::Zero();
    for (Index v : mesh.faces[f]) {
      const Eigen::Vector3d s = sample_erp_bilinear(img, mesh.vertices[v]).cast<double>();
      lo = lo.cwiseMin(s);
      hi = hi.cwiseMax(s);
      mean += s / 3.0;
    }
    for (int k = 0; k < 3; ++k) {
      CHECK(set.colors()(f, k) >= lo[k] - 1e-6);
      CHECK(set.colors()(f, k) <= hi[k] + 1e-6);
      CHECK(set.colors()(f, k) == doctest::Approx(mean[k]).epsilon(1e-6));
    }
  }
  CHECK_THROWS_AS(face_center_point_set(mesh, ImageF(1, 16, 32)), UsageError);
}

TEST_CASE("one bright vertex gives one third to each adjacent face") {
  // Vertex 0 is the north pole: light only the top row so it samples 1 while
  // every other level-0 vertex samples 0.
  ImageF img(3, 16, 32, 0.0f);
  for (Index j = 0; j < 32; ++j)
    for (int c = 0; c < 3; ++c) img(c, 0, j) = 1.0f;
  const auto mesh = build_icosap_mesh(0);
  const auto set = face_center_point_set(mesh, img);
  int touching = 0;
  for (Index f = 0; f < set.size(); ++f) {
    const bool has_pole = mesh.faces[f][0] == 0 || mesh.faces[f][1] == 0 || mesh.faces[f][2] == 0;
    if (has_pole) {
      ++touching;
      CHECK(set.colors()(f, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
    } else {
      CHECK(set.colors()(f, 0) == doctest::Approx(0.0));
    }
  }
  CHECK(touching == 5);
}

TEST_CASE("the mesh rotates with its orientation") {
  const Eigen::Matrix3d rz = Eigen::AngleAxisd(0.4, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  const auto a = build_icosap_mesh(2);
  const auto b = build_icosap_mesh(2, rz);
  REQUIRE(a.face_count() == b.face_count());
  for (Index v = 0; v < a.vertex_count(); ++v) CHECK((rz * a.vertices[v] - b.vertices[v]).norm() < 1e-12);
  CHECK(a.faces == b.faces);
}

TEST_CASE("point set and mesh files") {
  const auto dir = temp_dir("io");
  const auto set = face_center_point_set(build_icosap_mesh(1), gradient_erp(16));
  write_point_set_binary(dir / "p.icop", set);
  const auto back = read_point_set_binary(dir / "p.icop");
  CHECK(back.level == 1);
  REQUIRE(back.size() == 80);
  CHECK((back.points - set.points).cwiseAbs().maxCoeff() == 0.0f);

  write_point_set_csv(dir / "p.csv", set);
  std::ifstream csv(dir / "p.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "x,y,z,r,g,b");
  int rows = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 80);

  const auto mesh = build_icosap_mesh(1);
  write_obj(dir / "m.obj", mesh);
  std::ifstream obj(dir / "m.obj");
  int v = 0, f = 0;
  while (std::getline(obj, line)) {
    if (line.rfind("v ", 0) == 0) ++v;
    if (line.rfind("f ", 0) == 0) ++f;
  }
  CHECK(v == 42);
  CHECK(f == 80);

  std::ofstream(dir / "bad.icop") << "nope";
  CHECK_THROWS_AS(read_point_set_binary(dir / "bad.icop"), IoError);
  fs::remove_all(dir);
}
