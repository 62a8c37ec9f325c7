#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"
#include "skelfuse/correspondence.hpp"
#include "skelfuse/fusion.hpp"
#include "skelfuse/lifting.hpp"
#include "skelfuse/param_store.hpp"
#include "skelfuse/render.hpp"
#include "skelfuse/seg_head.hpp"
#include "skelfuse/skeleton_net.hpp"

namespace skelfuse {

struct ModelConfig {
  SkeletonNetConfig skeleton;
  PatchEncoderConfig encoder;
  FuseConfig fusion;
  SegHeadConfig head;
  SegLossConfig seg_loss;
  double tau = 0.07;
  int max_negatives = 512;
  double lambda_con = 0.5;
  AdamConfig adam{};
  /// Views drawn per training step; 0 or anything above the view count uses every view.
  int views_per_step = 0;
  /// Feed the correspondence mask to the fusion attention.
  bool correspondence_prior = true;

  /// Applies the shared width and head count to every component.
  static ModelConfig make(int patch_size, int dim, int heads, int queries);
  void check() const;
  nlohmann::json to_json() const;
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  ModelConfig config;
  ParamStore params;
  std::uint64_t seed;
};

/// Everything training and inference need for one mesh.
struct Bundle {
  std::vector<SkelGraphLevel> hierarchy;
  ad::Tensor skeleton_input;
  std::vector<PatchGrid> grids;
  CorrespondenceMap correspondence;
  std::vector<ad::Tensor> prior_masks;        // per view, patches x nodes
  std::vector<std::vector<int>> patch_labels;  // per view; empty without ground truth
  std::vector<SegTarget> targets;

  std::size_t views() const { return grids.size(); }
};

/// Ground truth is taken from mesh.face_labels when present.
Bundle make_bundle(const TriMesh& mesh, const Skeleton& skeleton, const ViewSet& views,
                   const CorrespondenceMap& correspondence, const ModelConfig& config);

struct StepLosses {
  double total = 0.0;
  double contrastive = 0.0;
  double segmentation = 0.0;
};

struct ForwardResult {
  ad::Tensor node_embeddings;
  std::vector<ad::Tensor> patch_embeddings;  // per selected view, before fusion
  std::vector<SegOutput> outputs;            // per selected view
};

/// Forward pass over the listed views (all views when `view_ids` is empty).
ForwardResult forward(Model& model, const Bundle& bundle, const std::vector<int>& view_ids = {});

/// Loss graph for one step: seg loss averaged over views plus
/// lambda_con * contrastive loss over the same views.
struct LossGraph {
  ad::Tensor total;
  ad::Tensor contrastive;
  ad::Tensor segmentation;
};
LossGraph compute_losses(Model& model, const Bundle& bundle, const std::vector<int>& view_ids,
                         std::uint64_t negative_seed);

/// One backward pass and one Adam update. `step` selects the view subset
/// and negative sample deterministically.
StepLosses train_step(Model& model, const Bundle& bundle, std::int64_t step);

/// Patch labels for every view; views run on up to `threads` workers.
std::vector<PatchLabels> predict(Model& model, const Bundle& bundle, int threads = 1);

/// Keys of `extra` are stored alongside the model config in the manifest.
void save_model(const Model& model, const std::filesystem::path& path, const nlohmann::json& extra = {});
/// `manifest`, when given, receives the stored config object.
Model load_model(const std::filesystem::path& path, nlohmann::json* manifest = nullptr);

ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace skelfuse
