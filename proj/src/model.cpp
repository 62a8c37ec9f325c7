#include "skelfuse/model.hpp"

#include <algorithm>
#include <thread>

#include "skelfuse/errors.hpp"
#include "skelfuse/ops.hpp"

namespace skelfuse {

ModelConfig ModelConfig::make(int patch_size, int dim, int heads, int queries) {
  ModelConfig c;
  c.encoder.patch_size = patch_size;
  c.encoder.dim = c.fusion.dim = c.head.dim = c.skeleton.out_dim = dim;
  c.encoder.heads = c.fusion.heads = c.head.heads = heads;
  c.head.queries = queries;
  return c;
}

void ModelConfig::check() const {
  skeleton.check();
  const int dim = encoder.dim;
  if (dim < 4 || dim % 4 != 0) throw ConfigError("embed_dim must be a positive multiple of 4");
  if (fusion.dim != dim || head.dim != dim || skeleton.out_dim != dim)
    throw ConfigError("encoder, fusion, head and skeleton output widths must agree");
  for (int h : {encoder.heads, fusion.heads, head.heads})
    if (h < 1 || dim % h != 0) throw ConfigError("embed_dim must be divisible by heads");
  if (encoder.patch_size < 1) throw ConfigError("patch_size must be positive");
  if (head.queries < 3) throw ConfigError("queries must be at least 3");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (lambda_con < 0.0) throw ConfigError("lambda_con must be non-negative");
  if (!(adam.lr > 0.0)) throw ConfigError("lr must be positive");
  if (views_per_step < 0) throw ConfigError("views_per_step must be non-negative");
}

nlohmann::json ModelConfig::to_json() const {
  return {
      {"patch_size", encoder.patch_size},
      {"embed_dim", encoder.dim},
      {"heads", encoder.heads},
      {"mlp_ratio", encoder.mlp_ratio},
      {"encoder_blocks", encoder.blocks},
      {"positional_encoding", encoder.positional_encoding},
      {"skeleton_levels", skeleton.levels},
      {"skeleton_dims", skeleton.dims},
      {"pool_ratio", skeleton.pool_ratio},
      {"queries", head.queries},
      {"decoder_blocks", head.blocks},
      {"prior_init", fusion.prior_init},
      {"correspondence_prior", correspondence_prior},
      {"mask_clamp", seg_loss.mask_clamp},
      {"no_object_weight", seg_loss.no_object_weight},
      {"tau", tau},
      {"max_negatives", max_negatives},
      {"lambda_con", lambda_con},
      {"lr", adam.lr},
      {"views_per_step", views_per_step},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c = ModelConfig::make(j.at("patch_size").get<int>(), j.at("embed_dim").get<int>(),
                                      j.at("heads").get<int>(), j.at("queries").get<int>());
    c.encoder.mlp_ratio = c.fusion.mlp_ratio = c.head.mlp_ratio = j.at("mlp_ratio").get<int>();
    c.encoder.blocks = j.at("encoder_blocks").get<int>();
    c.encoder.positional_encoding = j.at("positional_encoding").get<bool>();
    c.skeleton.levels = j.at("skeleton_levels").get<int>();
    c.skeleton.dims = j.at("skeleton_dims").get<std::vector<int>>();
    c.skeleton.pool_ratio = j.at("pool_ratio").get<double>();
    c.head.blocks = j.at("decoder_blocks").get<int>();
    c.fusion.prior_init = j.at("prior_init").get<double>();
    c.correspondence_prior = j.at("correspondence_prior").get<bool>();
    c.seg_loss.mask_clamp = j.at("mask_clamp").get<double>();
    c.seg_loss.no_object_weight = j.at("no_object_weight").get<double>();
    c.tau = j.at("tau").get<double>();
    c.max_negatives = j.at("max_negatives").get<int>();
    c.lambda_con = j.at("lambda_con").get<double>();
    c.adam.lr = j.at("lr").get<double>();
    c.views_per_step = j.at("views_per_step").get<int>();
    c.check();
    return c;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("malformed model config: ") + ex.what());
  }
}

Model::Model(ModelConfig cfg, std::uint64_t seed_value) : config(std::move(cfg)), seed(seed_value) {
  config.check();
  Rng rng = Rng::derive(seed, "model-init");
  init_skeleton_net(params, config.skeleton, rng);
  init_patch_encoder(params, config.encoder, rng);
  init_fuse(params, config.fusion, rng);
  init_seg_head(params, config.head, rng);
}

Bundle make_bundle(const TriMesh& mesh, const Skeleton& skeleton, const ViewSet& views,
                   const CorrespondenceMap& correspondence, const ModelConfig& config) {
  if (correspondence.view_count != static_cast<int>(views.size()) ||
      correspondence.node_count != static_cast<int>(skeleton.size()))
    throw DimensionMismatch("correspondence does not match the skeleton and views");
  Bundle b;
  b.hierarchy = build_hierarchy(skeleton, config.skeleton);
  b.skeleton_input = skeleton_features(skeleton);
  b.correspondence = correspondence;
  const int patch = config.encoder.patch_size;
  for (std::size_t v = 0; v < views.size(); ++v) {
    b.grids.push_back(patchify(views.frames[v], patch, static_cast<int>(v)));
    if (b.grids.back().count() != correspondence.patches_per_view)
      throw DimensionMismatch("correspondence patch grid differs from the model patch size");
    b.prior_masks.push_back(correspondence_mask(correspondence, static_cast<int>(v)));
    if (mesh.face_labels) {
      const LabelImage image = label_image_from_faces(views.frames[v], *mesh.face_labels);
      b.patch_labels.push_back(patch_majority(image, patch));
      b.targets.push_back(make_seg_target(b.patch_labels.back()));
    }
  }
  return b;
}

ForwardResult forward(Model& model, const Bundle& bundle, const std::vector<int>& view_ids) {
  std::vector<int> ids = view_ids;
  if (ids.empty())
    for (std::size_t v = 0; v < bundle.views(); ++v) ids.push_back(static_cast<int>(v));
  ForwardResult r;
  r.node_embeddings =
      skeleton_net_forward(bundle.hierarchy, bundle.skeleton_input, model.params, model.config.skeleton);
  for (int v : ids) {
    const ad::Tensor patches = encode_patches(bundle.grids.at(v), model.params, model.config.encoder);
    const ad::Tensor fused = fuse(patches, r.node_embeddings,
                                  model.config.correspondence_prior ? &bundle.prior_masks.at(v) : nullptr,
                                  model.params, model.config.fusion);
    r.patch_embeddings.push_back(patches);
    r.outputs.push_back(seg_forward(fused, model.params, model.config.head));
  }
  return r;
}

LossGraph compute_losses(Model& model, const Bundle& bundle, const std::vector<int>& view_ids,
                         std::uint64_t negative_seed) {
  if (bundle.targets.size() != bundle.views()) throw ArgumentError("bundle has no ground truth to train on");
  const ForwardResult fr = forward(model, bundle, view_ids);
  std::vector<int> ids = view_ids;
  if (ids.empty())
    for (std::size_t v = 0; v < bundle.views(); ++v) ids.push_back(static_cast<int>(v));

  ad::Tensor seg;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const ad::Tensor l = seg_loss(fr.outputs[i], bundle.targets[ids[i]], model.config.seg_loss);
    seg = seg.defined() ? ad::add(seg, l) : l;
  }
  seg = ad::scale(seg, 1.0 / static_cast<double>(ids.size()));

  // Correspondence restricted to the selected views, re-indexed.
  const CorrespondenceMap& full = bundle.correspondence;
  std::vector<int> slot(full.view_count, -1);
  for (std::size_t i = 0; i < ids.size(); ++i) slot[ids[i]] = static_cast<int>(i);
  std::vector<Positive> positives;
  for (const Positive& p : full.positives)
    if (slot[p.view] >= 0) positives.push_back({p.node, slot[p.view], p.patch, p.hop});
  const CorrespondenceMap sub = make_correspondence(std::move(positives), full.node_count,
                                                    static_cast<int>(ids.size()), full.patches_per_view);
  LossGraph g;
  g.segmentation = seg;
  if (sub.empty()) {
    g.contrastive = ad::Tensor::scalar(0.0);
  } else {
    ContrastiveConfig cc{model.config.tau, model.config.max_negatives, negative_seed};
    g.contrastive = contrastive_loss(fr.node_embeddings, fr.patch_embeddings, sub, cc);
  }
  g.total = ad::add(seg, ad::scale(g.contrastive, model.config.lambda_con));
  return g;
}

StepLosses train_step(Model& model, const Bundle& bundle, std::int64_t step) {
  const std::string tag = "step-" + std::to_string(step);
  std::vector<int> ids;
  const int n = static_cast<int>(bundle.views());
  const int k = model.config.views_per_step;
  if (k > 0 && k < n) {
    std::vector<int> all(n);
    for (int v = 0; v < n; ++v) all[v] = v;
    Rng rng = Rng::derive(model.seed, "views-" + tag);
    for (int i = 0; i < k; ++i) std::swap(all[i], all[i + static_cast<int>(rng.below(n - i))]);
    ids.assign(all.begin(), all.begin() + k);
    std::sort(ids.begin(), ids.end());
  }
  const LossGraph g = compute_losses(model, bundle, ids, Rng::derive(model.seed, "negatives-" + tag).next());
  model.params.zero_grad();
  g.total.backward();
  adam_step(model.params, model.config.adam);
  return {g.total.item(), g.contrastive.item(), g.segmentation.item()};
}

std::vector<PatchLabels> predict(Model& model, const Bundle& bundle, int threads) {
  const ad::Tensor nodes =
      skeleton_net_forward(bundle.hierarchy, bundle.skeleton_input, model.params, model.config.skeleton).detach();
  const std::size_t n = bundle.views();
  std::vector<PatchLabels> out(n);
  auto run = [&](std::size_t v) {
    const PatchGrid& grid = bundle.grids[v];
    const ad::Tensor patches = encode_patches(grid, model.params, model.config.encoder);
    const ad::Tensor fused = fuse(patches, nodes, model.config.correspondence_prior ? &bundle.prior_masks[v] : nullptr,
                                  model.params, model.config.fusion);
    const SegOutput s = seg_forward(fused, model.params, model.config.head);
    out[v] = predict_view(s.class_logits.data(), s.mask_logits.data(), model.config.head.queries, grid.rows,
                          grid.cols, grid.patch_size);
  };
  const std::size_t workers = std::clamp<std::size_t>(threads < 1 ? 1 : threads, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    for (std::size_t v = 0; v < n; ++v) run(v);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t v = w; v < n; v += workers) run(v);
      });
    for (auto& t : pool) t.join();
  }
  return out;
}

void save_model(const Model& model, const std::filesystem::path& path, const nlohmann::json& extra) {
  nlohmann::json config = extra.is_object() ? extra : nlohmann::json::object();
  config["model"] = model.config.to_json();
  config["seed"] = model.seed;
  save_checkpoint(model.params, path, config);
}

Model load_model(const std::filesystem::path& path, nlohmann::json* manifest) {
  Checkpoint ck = load_checkpoint(path);
  if (manifest) *manifest = ck.config;
  if (!ck.config.contains("model")) throw ParseError("checkpoint manifest lacks the model config");
  Model model(model_config_from_json(ck.config.at("model")), ck.config.value("seed", std::uint64_t{0}));
  copy_params(ck.params, model.params);
  return model;
}

}  // namespace skelfuse
