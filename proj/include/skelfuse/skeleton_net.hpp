#pragma once

#include <span>
#include <vector>

#include "skelfuse/param_store.hpp"
#include "skelfuse/skeleton.hpp"
#include "skelfuse/tensor.hpp"

namespace skelfuse {

/// One level of the skeleton hierarchy. `assignment` maps the nodes of the
/// next finer level onto this level and is empty at level 0.
struct SkelGraphLevel {
  std::vector<std::vector<int>> adjacency;  // sorted neighbour lists
  std::vector<Vec3> positions;              // mean of the original nodes merged here
  std::vector<int> members;                 // original node count per node
  std::vector<int> assignment;
  ad::Tensor features;                      // optional

  std::size_t size() const { return adjacency.size(); }
  bool connected() const;
};

SkelGraphLevel base_level(const Skeleton& skel);

/// Rounds of greedy maximal matching over edges in ascending node distance
/// (ties by index pair) until the node count is at most ratio * N or no
/// edge is left. Coarse ids follow the smallest fine member. Features, if
/// present, are averaged over merged nodes.
SkelGraphLevel pool(const SkelGraphLevel& fine, double ratio);

/// Fine row i is coarse row assignment[i]. Throws MissingAssignment.
ad::Tensor unpool(std::span<const int> assignment, const ad::Tensor& coarse);

/// relu(H W_self + mean_neighbours(H) W_neigh); isolated nodes contribute a
/// zero neighbour mean.
ad::Tensor gconv(const std::vector<std::vector<int>>& adjacency, const ad::Tensor& features,
                 const ad::Tensor& w_self, const ad::Tensor& w_neigh);

struct SkeletonNetConfig {
  int levels = 3;
  std::vector<int> dims{32, 64, 64};
  int out_dim = 64;
  double pool_ratio = 0.5;

  void check() const;
};

constexpr int kSkeletonInputDim = 5;

/// Per-node (x, y, z, radius, degree) with positions centred and scaled to
/// unit RMS; radii share the scale.
ad::Tensor skeleton_features(const Skeleton& skel);

/// Pooled hierarchy, levels.size() == config.levels.
std::vector<SkelGraphLevel> build_hierarchy(const Skeleton& skel, const SkeletonNetConfig& config);

void init_skeleton_net(ParamStore& store, const SkeletonNetConfig& config, Rng& rng);

/// Encoder (gconv, pool) x (L-1), bottleneck gconv, decoder (unpool, gconv
/// on [upsampled, skip]) x (L-1). Returns |nodes| x out_dim.
ad::Tensor skeleton_net_forward(const std::vector<SkelGraphLevel>& hierarchy, const ad::Tensor& input,
                                ParamStore& store, const SkeletonNetConfig& config);

}  // namespace skelfuse
