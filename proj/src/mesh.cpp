#include "skelfuse/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include <Eigen/Geometry>

#include "skelfuse/errors.hpp"

namespace skelfuse {

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  const double ortho = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho > 1e-6 || std::abs(rotation.determinant() - 1.0) > 1e-6)
    throw ArgumentError("rotation is not orthonormal with determinant +1");
}

RigidTransform RigidTransform::from_axis_angle(const Vec3& axis, double angle,
                                               const Vec3& translation) {
  const Mat3 r = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
  return RigidTransform(r, translation);
}

RigidTransform RigidTransform::then(const RigidTransform& next) const {
  RigidTransform out;
  out.rotation_ = next.rotation_ * rotation_;
  out.translation_ = next.rotation_ * translation_ + next.translation_;
  return out;
}

void check_topology(const TriMesh& mesh) {
  const auto n = static_cast<long>(mesh.vertices.size());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const Face& t = mesh.faces[f];
    for (int v : t) {
      if (v < 0 || v >= n)
        throw TopologyError("face " + std::to_string(f) + " references vertex " +
                            std::to_string(v) + " but mesh has " + std::to_string(n) +
                            " vertices");
    }
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
      throw TopologyError("face " + std::to_string(f) + " is degenerate");
  }
  if (mesh.face_labels && mesh.face_labels->size() != mesh.faces.size())
    throw LengthMismatch("face_labels length " + std::to_string(mesh.face_labels->size()) +
                         " != face count " + std::to_string(mesh.faces.size()));
}

ValidationReport validate(const TriMesh& mesh) {
  ValidationReport report;
  // Directed half-edge counts per undirected edge.
  struct EdgeUse {
    int forward = 0;   // traversed i->j with i < j
    int backward = 0;  // traversed j->i
  };
  std::map<std::pair<int, int>, EdgeUse> edges;
  std::map<Face, int> seen_faces;
  for (const Face& t : mesh.faces) {
    Face key = t;
    std::sort(key.begin(), key.end());
    if (seen_faces[key]++ > 0) ++report.duplicate_faces;
    for (int k = 0; k < 3; ++k) {
      const int a = t[k], b = t[(k + 1) % 3];
      if (a == b) continue;
      auto& use = edges[{std::min(a, b), std::max(a, b)}];
      (a < b ? use.forward : use.backward) += 1;
    }
  }
  for (const auto& [edge, use] : edges) {
    const int total = use.forward + use.backward;
    if (total == 1) ++report.boundary_edges;
    if (total > 2) ++report.non_manifold_edges;
    if (total == 2 && (use.forward == 2 || use.backward == 2))
      ++report.orientation_inconsistencies;
  }
  return report;
}

TriMesh apply_transform(const TriMesh& mesh, const RigidTransform& t) {
  TriMesh out = mesh;
  for (Vec3& v : out.vertices) v = t.apply(v);
  return out;
}

BoundingSphere bounding_sphere(const TriMesh& mesh) {
  BoundingSphere s;
  if (mesh.vertices.empty()) return s;
  for (const Vec3& v : mesh.vertices) s.center += v;
  s.center /= static_cast<double>(mesh.vertices.size());
  for (const Vec3& v : mesh.vertices) s.radius = std::max(s.radius, (v - s.center).norm());
  return s;
}

TriMesh normalize_unit_sphere(const TriMesh& mesh) {
  TriMesh out = mesh;
  const BoundingSphere s = bounding_sphere(mesh);
  const double scale = s.radius > 0.0 ? 1.0 / s.radius : 1.0;
  for (Vec3& v : out.vertices) v = (v - s.center) * scale;
  return out;
}

Vec3 face_normal(const TriMesh& mesh, std::size_t f) {
  const Face& t = mesh.faces[f];
  const Vec3 n = (mesh.vertices[t[1]] - mesh.vertices[t[0]])
                     .cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
  const double len = n.norm();
  return len > 0.0 ? Vec3(n / len) : Vec3::Zero();
}

double face_area(const TriMesh& mesh, std::size_t f) {
  const Face& t = mesh.faces[f];
  return 0.5 * (mesh.vertices[t[1]] - mesh.vertices[t[0]])
                   .cross(mesh.vertices[t[2]] - mesh.vertices[t[0]])
                   .norm();
}

double surface_area(const TriMesh& mesh, std::span<const Vec3> positions) {
  double area = 0.0;
  for (const Face& t : mesh.faces)
    area += 0.5 * (positions[t[1]] - positions[t[0]]).cross(positions[t[2]] - positions[t[0]]).norm();
  return area;
}

std::vector<Vec3> vertex_normals(const TriMesh& mesh) {
  std::vector<Vec3> normals(mesh.vertices.size(), Vec3::Zero());
  for (const Face& t : mesh.faces) {
    // Area-weighted: the unnormalised cross product.
    const Vec3 n = (mesh.vertices[t[1]] - mesh.vertices[t[0]])
                       .cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    for (int v : t) normals[v] += n;
  }
  for (Vec3& n : normals) {
    const double len = n.norm();
    if (len > 0.0) n /= len;
  }
  return normals;
}

std::vector<std::array<int, 2>> unique_edges(const TriMesh& mesh) {
  std::vector<std::array<int, 2>> edges;
  edges.reserve(mesh.faces.size() * 3);
  for (const Face& t : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      const int a = t[k], b = t[(k + 1) % 3];
      edges.push_back({std::min(a, b), std::max(a, b)});
    }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

std::vector<std::vector<int>> vertex_adjacency(const TriMesh& mesh) {
  std::vector<std::vector<int>> adj(mesh.vertices.size());
  for (const auto& e : unique_edges(mesh)) {
    adj[e[0]].push_back(e[1]);
    adj[e[1]].push_back(e[0]);
  }
  for (auto& list : adj) std::sort(list.begin(), list.end());
  return adj;
}

std::vector<std::vector<int>> face_adjacency(const TriMesh& mesh) {
  std::map<std::pair<int, int>, std::vector<int>> edge_faces;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const Face& t = mesh.faces[f];
    for (int k = 0; k < 3; ++k) {
      const int a = t[k], b = t[(k + 1) % 3];
      edge_faces[{std::min(a, b), std::max(a, b)}].push_back(static_cast<int>(f));
    }
  }
  std::vector<std::vector<int>> adj(mesh.faces.size());
  for (const auto& [edge, faces] : edge_faces)
    for (int f : faces)
      for (int g : faces)
        if (f != g) adj[f].push_back(g);
  for (auto& list : adj) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return adj;
}

std::size_t connected_components(const TriMesh& mesh) {
  const std::size_t n = mesh.vertices.size();
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const Face& t : mesh.faces)
    for (int k = 1; k < 3; ++k) {
      const int a = find(t[0]), b = find(t[k]);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
  std::size_t components = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (find(static_cast<int>(i)) == static_cast<int>(i)) ++components;
  return components;
}

}  // namespace skelfuse
