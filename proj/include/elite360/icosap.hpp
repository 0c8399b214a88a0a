#pragma once

// Geodesic icosahedron meshes and the face-center (ICOSAP) point set.

#include <Eigen/Core>

#include <array>
#include <filesystem>
#include <vector>

#include "elite360/image.hpp"
#include "elite360/sphere.hpp"

namespace e360 {

struct IcosapMesh {
  int level = 0;
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<Index, 3>> faces;

  Index vertex_count() const { return static_cast<Index>(vertices.size()); }
  Index face_count() const { return static_cast<Index>(faces.size()); }
  // Counted from the face list; each undirected edge once.
  Index edge_count() const;
  Index euler_characteristic() const { return vertex_count() - edge_count() + face_count(); }
};

// Closed-form sizes at subdivision level l.
Index icosap_face_count(int level);    // 20 * 4^l
Index icosap_vertex_count(int level);  // 10 * 4^l + 2
Index icosap_edge_count(int level);    // 30 * 4^l

// Regular icosahedron from the golden-ratio vertex set, rotated so vertex 0
// sits at the north pole (0, 0, 1), then by `orientation`. Faces wind
// outward.
IcosapMesh build_icosahedron(const Eigen::Matrix3d& orientation = Eigen::Matrix3d::Identity());

// Splits each face into four through its edge midpoints. Midpoints are
// projected onto the unit sphere and shared by both faces of an edge.
IcosapMesh subdivide(const IcosapMesh& mesh);

IcosapMesh build_icosap_mesh(int level, const Eigen::Matrix3d& orientation = Eigen::Matrix3d::Identity());

// One row per face: (x, y, z, r, g, b).
template <typename Scalar>
struct IcosapPointSet {
  using Rows = Eigen::Matrix<Scalar, Eigen::Dynamic, 6, Eigen::RowMajor>;

  int level = 0;
  Rows points;

  Index size() const { return points.rows(); }
  auto coords() const { return points.template leftCols<3>(); }
  auto colors() const { return points.template rightCols<3>(); }
};

// Face centers are the plain mean of the three vertices (inside the sphere)
// unless `renormalize` is set. Each vertex color is the bilinear ERP sample
// at the vertex direction; the face color is their mean.
template <typename Scalar>
IcosapPointSet<Scalar> face_center_point_set(const IcosapMesh& mesh, const Image<Scalar>& erp,
                                             bool renormalize = false) {
  require_erp(erp);
  if (erp.channels() != 3) throw UsageError("ICOSAP sampling needs an RGB panorama");
  std::vector<Eigen::Vector3d> vertex_rgb(mesh.vertices.size());
  parallel_for(mesh.vertex_count(), [&](Index begin, Index end) {
    for (Index v = begin; v < end; ++v)
      vertex_rgb[v] = sample_erp_bilinear(erp, mesh.vertices[v]).template cast<double>();
  });
  IcosapPointSet<Scalar> set;
  set.level = mesh.level;
  set.points.resize(mesh.face_count(), 6);
  for (Index f = 0; f < mesh.face_count(); ++f) {
    const auto& face = mesh.faces[f];
    Eigen::Vector3d center = Eigen::Vector3d::Zero(), rgb = Eigen::Vector3d::Zero();
    for (Index k : face) {
      center += mesh.vertices[k];
      rgb += vertex_rgb[k];
    }
    center /= 3.0;
    rgb /= 3.0;
    if (renormalize) center.normalize();
    set.points.row(f).template head<3>() = center.cast<Scalar>();
    set.points.row(f).template tail<3>() = rgb.cast<Scalar>();
  }
  return set;
}

// CSV with header "x,y,z,r,g,b", 9 significant digits.
void write_point_set_csv(const std::filesystem::path& path, const IcosapPointSet<float>& set);
// "ICOP" | u32 level | u32 count | count x 6 little-endian float32.
void write_point_set_binary(const std::filesystem::path& path, const IcosapPointSet<float>& set);
IcosapPointSet<float> read_point_set_binary(const std::filesystem::path& path);
void write_obj(const std::filesystem::path& path, const IcosapMesh& mesh);

}  // namespace e360
