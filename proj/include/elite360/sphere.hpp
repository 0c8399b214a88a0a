#pragma once

// Equirectangular, cubemap and tangent-plane projection geometry.
//
// ERP convention: z is up, pixel centers sit at half-integer offsets,
//   lat = pi/2 - (i + 0.5) / H * pi,   lon = (j + 0.5) / W * 2pi - pi,
//   dir = (cos lat cos lon, cos lat sin lon, sin lat),
// so the image center (equator, lon = 0) looks down +x.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string_view>
#include <vector>

#include "elite360/image.hpp"
#include "elite360/runtime.hpp"

namespace e360 {

using SphereDir = Eigen::Vector3d;

struct PixelCoord {
  double row = 0;
  double col = 0;
};

struct LatLon {
  double lat = 0;
  double lon = 0;
};

SphereDir latlon_to_dir(double lat, double lon);
LatLon dir_to_latlon(const SphereDir& d);

// Direction through the center of integer pixel (i, j); range-checked.
SphereDir pixel_to_dir(Index i, Index j, Index height, Index width);
// Same map for continuous pixel coordinates (no range check).
SphereDir pixel_coord_to_dir(double row, double col, Index height, Index width);
// Continuous inverse. Rows fall in [-0.5, H - 0.5] (poles at the bounds),
// columns in [-0.5, W - 0.5) after longitude wrap. Non-unit inputs are
// normalized; the zero vector is rejected.
PixelCoord dir_to_pixel(const SphereDir& d, Index height, Index width);

// Unit directions of all pixel centers of an h x w grid, row p = i * w + j.
Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> erp_direction_grid(Index height, Index width);

// Bilinear sample at a continuous pixel coordinate: columns wrap around the
// seam, rows clamp at the poles.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sample_bilinear_wrapped(const Image<Scalar>& img, double row,
                                                                 double col) {
  const Index h = img.height(), w = img.width();
  double r = std::clamp(row, 0.0, static_cast<double>(h - 1));
  const Index r0 = static_cast<Index>(std::floor(r));
  const Index r1 = std::min(r0 + 1, h - 1);
  const double fr = r - static_cast<double>(r0);
  const double c0f = std::floor(col);
  const double fc = col - c0f;
  Index c0 = static_cast<Index>(c0f) % w;
  if (c0 < 0) c0 += w;
  const Index c1 = (c0 + 1) % w;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(img.channels());
  for (Index c = 0; c < img.channels(); ++c) {
    const double top = (1.0 - fc) * img(c, r0, c0) + fc * img(c, r0, c1);
    const double bot = (1.0 - fc) * img(c, r1, c0) + fc * img(c, r1, c1);
    out[c] = static_cast<Scalar>((1.0 - fr) * top + fr * bot);
  }
  return out;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sample_erp_bilinear(const Image<Scalar>& img, const SphereDir& d) {
  require_erp(img);
  const PixelCoord p = dir_to_pixel(d, img.height(), img.width());
  return sample_bilinear_wrapped(img, p.row, p.col);
}

// --- cubemap ---------------------------------------------------------------

// Faces in storage order (+x, -x, +y, -y, +z, -z).
enum class CubeFace : int { kPosX = 0, kNegX, kPosY, kNegY, kPosZ, kNegZ };

inline constexpr std::array<CubeFace, 6> kCubeFaces = {CubeFace::kPosX, CubeFace::kNegX, CubeFace::kPosY,
                                                        CubeFace::kNegY, CubeFace::kPosZ, CubeFace::kNegZ};

std::string_view cube_face_suffix(CubeFace face);

// Face frame: pixel (row, col) looks along
//   normal + a * right + b * up,  a = 2 (col + 0.5) / S - 1,  b = 1 - 2 (row + 0.5) / S.
// Side faces use up = +z and `right` pointing toward increasing longitude;
// +z uses (right, up) = (+y, -x) and -z uses (+y, +x).
struct CubeFaceFrame {
  Eigen::Vector3d normal;
  Eigen::Vector3d right;
  Eigen::Vector3d up;
};
CubeFaceFrame cube_face_frame(CubeFace face);

// Unnormalized gnomonic ray (normal component 1) and its unit direction.
Eigen::Vector3d cube_face_ray(CubeFace face, double row, double col, Index face_size);
SphereDir cube_face_pixel_dir(CubeFace face, double row, double col, Index face_size);

struct CubeFaceCoord {
  CubeFace face;
  double row;
  double col;
};
CubeFaceCoord dir_to_cube_face(const SphereDir& d, Index face_size);

template <typename Scalar>
struct CubemapFaces {
  Index face_size = 0;
  std::array<Image<Scalar>, 6> faces;

  const Image<Scalar>& face(CubeFace f) const { return faces[static_cast<std::size_t>(f)]; }
};

template <typename Scalar>
CubemapFaces<Scalar> erp_to_cubemap(const Image<Scalar>& img, Index face_size) {
  require_erp(img);
  if (face_size < 2) throw UsageError("cubemap face size must be >= 2");
  CubemapFaces<Scalar> out;
  out.face_size = face_size;
  for (CubeFace f : kCubeFaces) {
    Image<Scalar> face(img.channels(), face_size, face_size);
    parallel_for(face_size, [&](Index begin, Index end) {
      for (Index r = begin; r < end; ++r)
        for (Index c = 0; c < face_size; ++c) {
          const auto v = sample_erp_bilinear(img, cube_face_pixel_dir(f, r, c, face_size));
          for (Index ch = 0; ch < img.channels(); ++ch) face(ch, r, c) = v[ch];
        }
    });
    out.faces[static_cast<std::size_t>(f)] = std::move(face);
  }
  return out;
}

// Back-projection: each ERP pixel samples its cube face bilinearly, clamped
// at face borders.
template <typename Scalar>
Image<Scalar> cubemap_to_erp(const CubemapFaces<Scalar>& cube, Index height, Index width) {
  if (width != 2 * height) throw UsageError("ERP output must satisfy W == 2H");
  const Index channels = cube.faces[0].channels();
  const Index s = cube.face_size;
  Image<Scalar> out(channels, height, width);
  parallel_for(height, [&](Index begin, Index end) {
    for (Index i = begin; i < end; ++i)
      for (Index j = 0; j < width; ++j) {
        const auto fc = dir_to_cube_face(pixel_to_dir(i, j, height, width), s);
        const auto& face = cube.face(fc.face);
        const double r = std::clamp(fc.row, 0.0, static_cast<double>(s - 1));
        const double c = std::clamp(fc.col, 0.0, static_cast<double>(s - 1));
        const Index r0 = static_cast<Index>(std::floor(r)), c0 = static_cast<Index>(std::floor(c));
        const Index r1 = std::min(r0 + 1, s - 1), c1 = std::min(c0 + 1, s - 1);
        const double fr = r - r0, fcol = c - c0;
        for (Index ch = 0; ch < channels; ++ch) {
          const double top = (1 - fcol) * face(ch, r0, c0) + fcol * face(ch, r0, c1);
          const double bot = (1 - fcol) * face(ch, r1, c0) + fcol * face(ch, r1, c1);
          out(ch, i, j) = static_cast<Scalar>((1 - fr) * top + fr * bot);
        }
      }
  });
  return out;
}

// --- tangent patches -------------------------------------------------------

// Default layout: three latitude rings (+45, 0, -45 deg), count / 3 equally
// spaced longitudes per ring starting at lon = 0. count must be a positive
// multiple of 3.
std::vector<SphereDir> default_tangent_centers(Index count = 18);
inline constexpr double kDefaultTangentFov = 80.0 * std::numbers::pi / 180.0;

// Gnomonic ray through pixel (row, col) of a patch tangent at `center`.
// The patch x axis points east, y axis north.
SphereDir tangent_pixel_dir(const SphereDir& center, double fov, Index patch_size, double row, double col);

template <typename Scalar>
struct TangentPatch {
  SphereDir center;
  LatLon center_latlon;
  Image<Scalar> pixels;
};

template <typename Scalar>
struct TangentPatchSet {
  double fov = 0;
  Index patch_size = 0;
  std::vector<TangentPatch<Scalar>> patches;
};

template <typename Scalar>
TangentPatchSet<Scalar> erp_to_tangent_patches(const Image<Scalar>& img, std::span<const SphereDir> centers,
                                               double fov, Index patch_size) {
  require_erp(img);
  if (!(fov > 0) || fov >= std::numbers::pi) throw UsageError("tangent fov must lie in (0, pi)");
  if (patch_size < 1) throw UsageError("tangent patch size must be >= 1");
  TangentPatchSet<Scalar> set;
  set.fov = fov;
  set.patch_size = patch_size;
  for (const SphereDir& raw : centers) {
    if (std::abs(raw.norm() - 1.0) > 1e-9) throw UsageError("tangent centers must be unit vectors");
    TangentPatch<Scalar> patch;
    patch.center = raw;
    patch.center_latlon = dir_to_latlon(raw);
    patch.pixels = Image<Scalar>(img.channels(), patch_size, patch_size);
    parallel_for(patch_size, [&](Index begin, Index end) {
      for (Index r = begin; r < end; ++r)
        for (Index c = 0; c < patch_size; ++c) {
          const auto v = sample_erp_bilinear(img, tangent_pixel_dir(raw, fov, patch_size, r, c));
          for (Index ch = 0; ch < img.channels(); ++ch) patch.pixels(ch, r, c) = v[ch];
        }
    });
    set.patches.push_back(std::move(patch));
  }
  return set;
}

}  // namespace e360
