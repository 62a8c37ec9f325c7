#pragma once

#include <vector>

#include "skelfuse/param_store.hpp"
#include "skelfuse/tensor.hpp"

namespace skelfuse {

struct SegHeadConfig {
  int dim = 64;
  int heads = 4;
  int mlp_ratio = 2;
  int queries = 24;
  int blocks = 2;
};

/// Class columns of the head.
enum SegClass : int { kNoObject = 0, kBackground = 1, kInstance = 2 };

void init_seg_head(ParamStore& store, const SegHeadConfig& config, Rng& rng);

struct SegOutput {
  ad::Tensor class_logits;  // queries x 3
  ad::Tensor mask_logits;   // queries x patches
};

/// Learned queries refined by (cross-attention to patches, self-attention,
/// MLP) blocks; mask logit = <query embedding, patch embedding> / sqrt(dim).
SegOutput seg_forward(const ad::Tensor& patches, ParamStore& store, const SegHeadConfig& config);

/// Ground-truth instances of one view over its patches.
struct SegTarget {
  std::vector<int> labels;                // source label per instance
  std::vector<int> classes;               // kBackground or kInstance
  std::vector<std::vector<double>> masks;  // instances x patches, 0/1
};

/// Background (label 0) first, then instance labels ascending. Patches
/// labelled -1 (no mesh) belong to no instance.
SegTarget make_seg_target(const std::vector<int>& patch_labels);

struct SegLossConfig {
  double mask_clamp = 15.0;
  double no_object_weight = 0.1;
};

struct SegMatch {
  std::vector<int> query_to_target;  // -1 where the query is sent to no-object
};

/// Hungarian matching on class NLL + mask BCE + mask Dice, then the weighted
/// class NLL over all queries plus BCE and Dice over matched pairs.
ad::Tensor seg_loss(const SegOutput& out, const SegTarget& target, const SegLossConfig& config,
                    SegMatch* match = nullptr);

/// The matching cost matrix (queries x targets) used by seg_loss.
std::vector<double> seg_match_cost(const SegOutput& out, const SegTarget& target, const SegLossConfig& config);

}  // namespace skelfuse
