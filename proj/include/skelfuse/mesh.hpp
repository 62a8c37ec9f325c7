#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace skelfuse {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Face = std::array<int, 3>;

/// Indexed triangle surface. Label 0 is gingiva/background, 1..T are
/// tooth instances.
struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::optional<std::vector<int>> face_labels;

  std::size_t vertex_count() const { return vertices.size(); }
  std::size_t face_count() const { return faces.size(); }
};

struct ValidationReport {
  std::size_t non_manifold_edges = 0;
  std::size_t boundary_edges = 0;
  std::size_t orientation_inconsistencies = 0;
  std::size_t duplicate_faces = 0;

  bool clean() const {
    return non_manifold_edges == 0 && orientation_inconsistencies == 0 &&
           duplicate_faces == 0;
  }
  bool watertight() const { return clean() && boundary_edges == 0; }
};

class RigidTransform {
 public:
  RigidTransform() = default;
  /// Throws ArgumentError unless `rotation` is orthonormal with det +1
  /// (within 1e-6).
  RigidTransform(const Mat3& rotation, const Vec3& translation);

  static RigidTransform identity() { return {}; }
  static RigidTransform from_axis_angle(const Vec3& axis, double angle,
                                        const Vec3& translation = Vec3::Zero());

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  RigidTransform then(const RigidTransform& next) const;

 private:
  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
};

/// Range and degeneracy checks; throws TopologyError. Also checks the label
/// length invariant (LengthMismatch).
void check_topology(const TriMesh& mesh);

/// Report-only structural validation. The mesh is not modified.
ValidationReport validate(const TriMesh& mesh);

TriMesh apply_transform(const TriMesh& mesh, const RigidTransform& t);

/// Translates the vertex centroid to the origin and scales so the farthest
/// vertex lies on the unit sphere. Rigid-equivariant up to the translation.
TriMesh normalize_unit_sphere(const TriMesh& mesh);

struct BoundingSphere {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
};
/// Centroid-centred sphere enclosing every vertex.
BoundingSphere bounding_sphere(const TriMesh& mesh);

Vec3 face_normal(const TriMesh& mesh, std::size_t f);  // unit, may be zero
double face_area(const TriMesh& mesh, std::size_t f);
double surface_area(const TriMesh& mesh, std::span<const Vec3> positions);
std::vector<Vec3> vertex_normals(const TriMesh& mesh);

/// Unique undirected edges (i < j), sorted lexicographically.
std::vector<std::array<int, 2>> unique_edges(const TriMesh& mesh);
std::vector<std::vector<int>> vertex_adjacency(const TriMesh& mesh);
/// Faces sharing an edge with each face, ascending.
std::vector<std::vector<int>> face_adjacency(const TriMesh& mesh);
/// Number of connected components of the vertex graph (isolated vertices
/// count as components).
std::size_t connected_components(const TriMesh& mesh);

}  // namespace skelfuse
