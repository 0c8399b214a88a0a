#include "elite360/sphere.hpp"

#include <cmath>
#include <numbers>

namespace e360 {

using std::numbers::pi;

SphereDir latlon_to_dir(double lat, double lon) {
  const double cl = std::cos(lat);
  return {cl * std::cos(lon), cl * std::sin(lon), std::sin(lat)};
}

LatLon dir_to_latlon(const SphereDir& d) {
  const double n = d.norm();
  if (!(n > 0)) throw UsageError("direction must be non-zero");
  const double lat = std::asin(std::clamp(d.z() / n, -1.0, 1.0));
  double lon = std::atan2(d.y(), d.x());
  if (lon >= pi) lon -= 2 * pi;
  return {lat, lon};
}

SphereDir pixel_coord_to_dir(double row, double col, Index height, Index width) {
  const double lat = pi / 2 - (row + 0.5) / static_cast<double>(height) * pi;
  const double lon = (col + 0.5) / static_cast<double>(width) * 2 * pi - pi;
  return latlon_to_dir(lat, lon);
}

SphereDir pixel_to_dir(Index i, Index j, Index height, Index width) {
  if (height < 1 || width < 1) throw UsageError("grid dimensions must be positive");
  if (i < 0 || i >= height || j < 0 || j >= width)
    throw UsageError("pixel (" + std::to_string(i) + "," + std::to_string(j) + ") outside " +
                     std::to_string(height) + "x" + std::to_string(width));
  return pixel_coord_to_dir(static_cast<double>(i), static_cast<double>(j), height, width);
}

PixelCoord dir_to_pixel(const SphereDir& d, Index height, Index width) {
  const LatLon ll = dir_to_latlon(d);
  const double row = (pi / 2 - ll.lat) / pi * static_cast<double>(height) - 0.5;
  const double col = (ll.lon + pi) / (2 * pi) * static_cast<double>(width) - 0.5;
  return {row, col};
}

Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> erp_direction_grid(Index height, Index width) {
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> dirs(height * width, 3);
  for (Index i = 0; i < height; ++i)
    for (Index j = 0; j < width; ++j) dirs.row(i * width + j) = pixel_to_dir(i, j, height, width).transpose();
  return dirs;
}

std::string_view cube_face_suffix(CubeFace face) {
  static constexpr std::array<std::string_view, 6> names = {"px", "nx", "py", "ny", "pz", "nz"};
  return names[static_cast<std::size_t>(face)];
}

CubeFaceFrame cube_face_frame(CubeFace face) {
  using V = Eigen::Vector3d;
  switch (face) {
    case CubeFace::kPosX: return {V::UnitX(), V::UnitY(), V::UnitZ()};
    case CubeFace::kNegX: return {-V::UnitX(), -V::UnitY(), V::UnitZ()};
    case CubeFace::kPosY: return {V::UnitY(), -V::UnitX(), V::UnitZ()};
    case CubeFace::kNegY: return {-V::UnitY(), V::UnitX(), V::UnitZ()};
    case CubeFace::kPosZ: return {V::UnitZ(), V::UnitY(), -V::UnitX()};
    case CubeFace::kNegZ: return {-V::UnitZ(), V::UnitY(), V::UnitX()};
  }
  throw UsageError("unknown cube face");
}

Eigen::Vector3d cube_face_ray(CubeFace face, double row, double col, Index face_size) {
  const CubeFaceFrame fr = cube_face_frame(face);
  const double s = static_cast<double>(face_size);
  const double a = 2.0 * (col + 0.5) / s - 1.0;
  const double b = 1.0 - 2.0 * (row + 0.5) / s;
  return fr.normal + a * fr.right + b * fr.up;
}

SphereDir cube_face_pixel_dir(CubeFace face, double row, double col, Index face_size) {
  return cube_face_ray(face, row, col, face_size).normalized();
}

CubeFaceCoord dir_to_cube_face(const SphereDir& d, Index face_size) {
  Index axis;
  d.cwiseAbs().maxCoeff(&axis);
  const bool positive = d[axis] >= 0;
  const CubeFace face = static_cast<CubeFace>(2 * axis + (positive ? 0 : 1));
  const CubeFaceFrame fr = cube_face_frame(face);
  const double depth = d.dot(fr.normal);
  const Eigen::Vector3d p = d / depth;
  const double a = p.dot(fr.right);
  const double b = p.dot(fr.up);
  const double s = static_cast<double>(face_size);
  return {face, (1.0 - b) * s / 2.0 - 0.5, (a + 1.0) * s / 2.0 - 0.5};
}

std::vector<SphereDir> default_tangent_centers(Index count) {
  if (count < 3 || count % 3 != 0) throw UsageError("tangent patch count must be a positive multiple of 3");
  const Index per_ring = count / 3;
  std::vector<SphereDir> centers;
  for (double lat_deg : {45.0, 0.0, -45.0})
    for (Index k = 0; k < per_ring; ++k) {
      double lon = 2 * pi * static_cast<double>(k) / static_cast<double>(per_ring);
      if (lon >= pi) lon -= 2 * pi;
      centers.push_back(latlon_to_dir(lat_deg * pi / 180.0, lon));
    }
  return centers;
}

SphereDir tangent_pixel_dir(const SphereDir& center, double fov, Index patch_size, double row, double col) {
  const LatLon ll = dir_to_latlon(center);
  const Eigen::Vector3d east(-std::sin(ll.lon), std::cos(ll.lon), 0.0);
  const Eigen::Vector3d north(-std::sin(ll.lat) * std::cos(ll.lon), -std::sin(ll.lat) * std::sin(ll.lon),
                              std::cos(ll.lat));
  const double half = std::tan(fov / 2.0);
  const double s = static_cast<double>(patch_size);
  const double u = (2.0 * (col + 0.5) / s - 1.0) * half;
  const double v = (1.0 - 2.0 * (row + 0.5) / s) * half;
  return (center.normalized() + u * east + v * north).normalized();
}

}  // namespace e360
