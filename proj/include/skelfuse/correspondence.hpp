#pragma once

#include <filesystem>
#include <vector>

#include "skelfuse/render.hpp"
#include "skelfuse/skeleton.hpp"

namespace skelfuse {

/// Lossless P x P tiling of one view's intensity image. Patch (r, c) has
/// index r * cols + c and stores its pixels row-major.
struct PatchGrid {
  int view_id = 0;
  int patch_size = 0;
  int rows = 0;
  int cols = 0;
  std::vector<double> values;  // (rows*cols) x (P*P), row-major

  int count() const { return rows * cols; }
  int dim() const { return patch_size * patch_size; }
  const double* patch(int index) const { return values.data() + static_cast<std::size_t>(index) * dim(); }
};

/// Throws ArgumentError unless both image dimensions are divisible by P.
PatchGrid patchify(const FrameBuffer& fb, int patch_size, int view_id = 0);
/// Inverse of patchify on the intensity channel.
std::vector<double> unpatchify(const PatchGrid& grid);

/// Patch containing a continuous pixel position (floor rule).
int patch_of_pixel(double x, double y, int patch_size, int cols);

struct Positive {
  int node = 0;
  int view = 0;
  int patch = 0;
  int hop = 0;
  friend bool operator==(const Positive&, const Positive&) = default;
};

struct CorrespondenceMap {
  int node_count = 0;
  int view_count = 0;
  int patches_per_view = 0;
  std::vector<Positive> positives;  // sorted by (view, patch, node), unique (view, patch, node)
  std::vector<int> node_coverage;   // positives per node

  bool empty() const { return positives.empty(); }
  /// Hop of (node, view, patch), or -1 when absent.
  int hop_of(int node, int view, int patch) const;
};

struct CorrespondenceOptions {
  int patch_size = 16;
  int k_hop = 1;
  /// Depth tolerance for visibility; <= 0 selects 1e-3 x scene radius
  /// (the scene radius is recovered from the camera distance).
  double depth_eps = 0.0;
};

/// Hop-0 pairs come from visible node projections; hop h adds every
/// skeleton neighbour of a hop h-1 node for the same (view, patch), keeping
/// the minimal hop.
CorrespondenceMap build_correspondence(const Skeleton& skel, const ViewSet& views,
                                       const CorrespondenceOptions& options = {});

/// Rebuilds node_coverage and ordering from a list of positives.
CorrespondenceMap make_correspondence(std::vector<Positive> positives, int node_count, int view_count,
                                      int patches_per_view);

struct CoverageStats {
  double frac_nodes_covered = 0.0;
  double mean_positives_per_node = 0.0;
  double frac_patches_with_node = 0.0;
};
CoverageStats coverage_stats(const CorrespondenceMap& cm, const Skeleton& skel);

void save_correspondence(const CorrespondenceMap& cm, const std::filesystem::path& path);
CorrespondenceMap load_correspondence(const std::filesystem::path& path, int node_count,
                                      int view_count, int patches_per_view);

}  // namespace skelfuse
