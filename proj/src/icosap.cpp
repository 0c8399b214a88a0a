#include "elite360/icosap.hpp"

#include <Eigen/Geometry>

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <utility>

namespace e360 {

Index IcosapMesh::edge_count() const {
  std::set<std::pair<Index, Index>> edges;
  for (const auto& f : faces)
    for (int k = 0; k < 3; ++k) {
      Index a = f[k], b = f[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      edges.emplace(a, b);
    }
  return static_cast<Index>(edges.size());
}

Index icosap_face_count(int level) { return Index{20} << (2 * level); }
Index icosap_vertex_count(int level) { return (Index{10} << (2 * level)) + 2; }
Index icosap_edge_count(int level) { return Index{30} << (2 * level); }

IcosapMesh build_icosahedron(const Eigen::Matrix3d& orientation) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  const std::array<Eigen::Vector3d, 12> raw = {
      Eigen::Vector3d(-1, t, 0), Eigen::Vector3d(1, t, 0),   Eigen::Vector3d(-1, -t, 0),
      Eigen::Vector3d(1, -t, 0), Eigen::Vector3d(0, -1, t),  Eigen::Vector3d(0, 1, t),
      Eigen::Vector3d(0, -1, -t), Eigen::Vector3d(0, 1, -t), Eigen::Vector3d(t, 0, -1),
      Eigen::Vector3d(t, 0, 1),  Eigen::Vector3d(-t, 0, -1), Eigen::Vector3d(-t, 0, 1)};
  static constexpr std::array<std::array<Index, 3>, 20> kFaces = {{
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
      {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}}};

  const Eigen::Matrix3d to_pole =
      Eigen::Quaterniond::FromTwoVectors(raw[0].normalized(), Eigen::Vector3d::UnitZ()).toRotationMatrix();
  const Eigen::Matrix3d rot = orientation * to_pole;

  IcosapMesh mesh;
  mesh.level = 0;
  for (const auto& v : raw) mesh.vertices.push_back((rot * v.normalized()).normalized());
  for (auto f : kFaces) {
    const auto& a = mesh.vertices[f[0]];
    const auto& b = mesh.vertices[f[1]];
    const auto& c = mesh.vertices[f[2]];
    if ((b - a).cross(c - a).dot(a + b + c) < 0) std::swap(f[1], f[2]);
    mesh.faces.push_back(f);
  }
  return mesh;
}

IcosapMesh subdivide(const IcosapMesh& mesh) {
  IcosapMesh out;
  out.level = mesh.level + 1;
  out.vertices = mesh.vertices;
  out.faces.reserve(mesh.faces.size() * 4);
  std::map<std::pair<Index, Index>, Index> midpoints;
  auto midpoint = [&](Index a, Index b) {
    const auto key = std::minmax(a, b);
    auto it = midpoints.find(key);
    if (it != midpoints.end()) return it->second;
    const Index id = static_cast<Index>(out.vertices.size());
    out.vertices.push_back((mesh.vertices[a] + mesh.vertices[b]).normalized());
    midpoints.emplace(key, id);
    return id;
  };
  for (const auto& f : mesh.faces) {
    const Index a = f[0], b = f[1], c = f[2];
    const Index ab = midpoint(a, b), bc = midpoint(b, c), ca = midpoint(c, a);
    out.faces.push_back({a, ab, ca});
    out.faces.push_back({b, bc, ab});
    out.faces.push_back({c, ca, bc});
    out.faces.push_back({ab, bc, ca});
  }
  return out;
}

IcosapMesh build_icosap_mesh(int level, const Eigen::Matrix3d& orientation) {
  if (level < 0 || level > 10) throw UsageError("ICOSAP level must lie in [0, 10]");
  IcosapMesh mesh = build_icosahedron(orientation);
  for (int l = 0; l < level; ++l) mesh = subdivide(mesh);
  return mesh;
}

void write_point_set_csv(const std::filesystem::path& path, const IcosapPointSet<float>& set) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot open " + path.string());
  std::fprintf(f, "x,y,z,r,g,b\n");
  for (Index r = 0; r < set.size(); ++r) {
    for (int c = 0; c < 6; ++c) std::fprintf(f, c ? ",%.9g" : "%.9g", static_cast<double>(set.points(r, c)));
    std::fprintf(f, "\n");
  }
  std::fclose(f);
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("truncated point-set file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_point_set_binary(const std::filesystem::path& path, const IcosapPointSet<float>& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string());
  out.write("ICOP", 4);
  put_u32(out, static_cast<std::uint32_t>(set.level));
  put_u32(out, static_cast<std::uint32_t>(set.size()));
  for (Index r = 0; r < set.size(); ++r)
    for (int c = 0; c < 6; ++c) put_u32(out, std::bit_cast<std::uint32_t>(set.points(r, c)));
  if (!out) throw IoError(path.string() + ": write failed");
}

IcosapPointSet<float> read_point_set_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "ICOP") throw IoError(path.string() + ": bad magic");
  IcosapPointSet<float> set;
  set.level = static_cast<int>(get_u32(in));
  const std::uint32_t count = get_u32(in);
  set.points.resize(count, 6);
  for (std::uint32_t r = 0; r < count; ++r)
    for (int c = 0; c < 6; ++c) set.points(r, c) = std::bit_cast<float>(get_u32(in));
  return set;
}

void write_obj(const std::filesystem::path& path, const IcosapMesh& mesh) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot open " + path.string());
  std::fprintf(f, "# geodesic icosahedron, level %d\n", mesh.level);
  for (const auto& v : mesh.vertices) std::fprintf(f, "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
  for (const auto& t : mesh.faces)
    std::fprintf(f, "f %td %td %td\n", t[0] + 1, t[1] + 1, t[2] + 1);
  std::fclose(f);
}

}  // namespace e360
