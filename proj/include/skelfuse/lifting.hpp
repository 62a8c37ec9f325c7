#pragma once

#include <span>
#include <utility>
#include <vector>

#include "skelfuse/mesh.hpp"
#include "skelfuse/render.hpp"

namespace skelfuse {

/// Per-pixel labels of one view: -1 casts no vote, 0 is background, k > 0
/// is a view-local instance id.
struct LabelImage {
  int width = 0;
  int height = 0;
  std::vector<int> labels;
};

/// Per-patch labels of one view in the same encoding (query q -> q + 1).
struct PatchLabels {
  int rows = 0;
  int cols = 0;
  int patch_size = 0;
  std::vector<int> labels;
};

/// Winning query per patch is the argmax of p_instance(q) * sigmoid(mask(q, p))
/// (ties to the lower query). The patch is background if the winner's most
/// likely class is not "instance" or its score is below 0.5.
/// Class logit columns: 0 no-object, 1 background, 2 instance.
PatchLabels predict_view(std::span<const double> class_logits, std::span<const double> mask_logits,
                         int queries, int rows, int cols, int patch_size);

/// Broadcasts patch labels to the pixels that show the mesh.
LabelImage expand_patch_labels(const PatchLabels& patches, const FrameBuffer& fb);

/// Ground-truth face labels seen through the face-id buffer.
LabelImage label_image_from_faces(const FrameBuffer& fb, std::span<const int> face_labels);

/// Majority label per patch over pixels with a label >= 0 (ties to the
/// smaller label); -1 for patches that show no mesh.
std::vector<int> patch_majority(const LabelImage& image, int patch_size);

struct InstanceLabeling {
  std::vector<int> face_labels;
  /// (merged instance id, votes) pairs per face, sorted by id.
  std::vector<std::vector<std::pair<int, int>>> votes;
  std::vector<char> filled;
};

struct LiftOptions {
  double merge_iou = 0.3;
};

/// Votes every labelled pixel onto its face, merges view-local instances
/// across views by face-set IoU (greedy, descending IoU, never joining two
/// instances of the same view) and takes the per-face majority. Faces with
/// no votes keep label 0 and an empty histogram. Throws DimensionMismatch
/// when images, buffers and mesh disagree.
InstanceLabeling lift(std::span<const LabelImage> images, const ViewSet& views, const TriMesh& mesh,
                      const LiftOptions& options = {});

/// Multi-source BFS over face adjacency from voted faces; each unvoted face
/// takes the label of its nearest voted face (ties to the smaller label).
InstanceLabeling fill_unseen(const TriMesh& mesh, InstanceLabeling labeling);

}  // namespace skelfuse
