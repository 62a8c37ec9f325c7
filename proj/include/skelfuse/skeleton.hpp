#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"

#include "skelfuse/mesh.hpp"

namespace skelfuse {

struct SkeletonNode {
  Vec3 position = Vec3::Zero();
  double radius = 0.0;  // mean distance from owned surface vertices
};

/// Curve-like graph abstracting a mesh. vertex_owner partitions the mesh
/// vertices among the nodes.
struct Skeleton {
  std::vector<SkeletonNode> nodes;
  std::vector<std::array<int, 2>> edges;  // i < j, sorted, unique
  std::vector<int> vertex_owner;

  std::size_t size() const { return nodes.size(); }
  std::vector<std::vector<int>> adjacency() const;
  bool connected() const;
};

struct ContractionParams {
  int iterations = 5;
  double contraction_weight_growth = 2.0;
  double initial_attraction = 1.0;
  double collapse_target_ratio = 0.025;
};

/// Laplacian contraction. Each iteration solves
///   min  w_L^2 |L x|^2 + sum_i w_H,i^2 |x_i - p_i|^2
/// with L the cotangent Laplacian of the current positions; w_L starts at
/// sqrt(|V|) and grows geometrically, w_H,i = initial_attraction *
/// sqrt(A_i^0 / A_i) tracks the shrinking one-ring areas. An iteration that
/// does not remove at least 5% of the surface area is discarded and ends the
/// loop. Throws ArgumentError, NotConnected, SolveError.
std::vector<Vec3> contract(const TriMesh& mesh, const ContractionParams& params);

/// Greedy shortest-edge collapse of the contracted vertex graph down to
/// max(1, floor(target_ratio * |V|)) nodes. Edge lengths are quantised
/// relative to the mean input edge length and ties fall back to the
/// (min index, max index) order, so the result depends only on rigid-invariant
/// quantities and vertex ids.
Skeleton collapse_to_skeleton(const TriMesh& mesh, std::span<const Vec3> contracted,
                              double target_ratio);

/// contract + collapse_to_skeleton, run in a pose derived from the mesh
/// (centroid origin, vertex-id-weighted axes) on coordinates snapped to a
/// grid of about 1e-6 of the extent, then mapped back. A rigidly moved copy
/// of a mesh therefore yields the moved skeleton with identical topology.
Skeleton skeletonize(const TriMesh& mesh, const ContractionParams& params = {});

nlohmann::json skeleton_to_json(const Skeleton& skel);
Skeleton skeleton_from_json(const nlohmann::json& j);
void save_skeleton(const Skeleton& skel, const std::filesystem::path& path);
Skeleton load_skeleton(const std::filesystem::path& path);

}  // namespace skelfuse
