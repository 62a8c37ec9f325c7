#include "skelfuse/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "skelfuse/errors.hpp"
#include "skelfuse/ops.hpp"

namespace skelfuse {

void init_attention(ParamStore& store, const std::string& prefix, int dim, Rng& rng) {
  for (const char* part : {".q", ".k", ".v", ".o"}) store.add_xavier(prefix + part, dim, dim, rng);
}

void init_mlp(ParamStore& store, const std::string& prefix, int dim, int ratio, Rng& rng) {
  const std::size_t hidden = static_cast<std::size_t>(dim) * ratio;
  store.add_xavier(prefix + ".w1", dim, hidden, rng);
  store.add_constant(prefix + ".b1", {1, hidden}, 0.0);
  store.add_xavier(prefix + ".w2", hidden, dim, rng);
  store.add_constant(prefix + ".b2", {1, static_cast<std::size_t>(dim)}, 0.0);
}

ad::Tensor attention(const ad::Tensor& queries, const ad::Tensor& keys, ParamStore& store,
                     const std::string& prefix, int heads, const ad::Tensor* bias,
                     std::vector<ad::Tensor>* weights, bool project) {
  if (keys.cols() != queries.cols()) throw ShapeError("attention: query and key widths differ");
  const ad::Tensor q = ad::matmul(queries, store.get(prefix + ".q"));
  const ad::Tensor k = ad::matmul(keys, store.get(prefix + ".k"));
  const ad::Tensor v = ad::matmul(keys, store.get(prefix + ".v"));
  const ad::Tensor joined = ad::multi_head_attention(q, k, v, heads, bias, weights);
  return project ? ad::matmul(joined, store.get(prefix + ".o")) : joined;
}

ad::Tensor mlp(const ad::Tensor& x, ParamStore& store, const std::string& prefix) {
  const ad::Tensor hidden = ad::relu(ad::add(ad::matmul(x, store.get(prefix + ".w1")), store.get(prefix + ".b1")));
  return ad::add(ad::matmul(hidden, store.get(prefix + ".w2")), store.get(prefix + ".b2"));
}

ad::Tensor positional_encoding_2d(int rows, int cols, int dim) {
  if (dim % 4 != 0) throw ShapeError("2D positional encoding needs a width divisible by 4");
  const int half = dim / 2;
  std::vector<double> table(static_cast<std::size_t>(rows) * cols * dim);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double* out = table.data() + (static_cast<std::size_t>(r) * cols + c) * dim;
      for (int i = 0; i < half / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / half);
        out[2 * i] = std::sin(r * freq);
        out[2 * i + 1] = std::cos(r * freq);
        out[half + 2 * i] = std::sin(c * freq);
        out[half + 2 * i + 1] = std::cos(c * freq);
      }
    }
  return ad::Tensor::matrix(static_cast<std::size_t>(rows) * cols, dim, std::move(table));
}

namespace {

std::string block_name(int b, const char* part) { return "patchenc.block" + std::to_string(b) + "." + part; }

}  // namespace

void init_patch_encoder(ParamStore& store, const PatchEncoderConfig& config, Rng& rng) {
  const std::size_t in = static_cast<std::size_t>(config.patch_size) * config.patch_size;
  store.add_xavier("patchenc.embed.w", in, config.dim, rng);
  store.add_constant("patchenc.embed.b", {1, static_cast<std::size_t>(config.dim)}, 0.0);
  for (int b = 0; b < config.blocks; ++b) {
    init_attention(store, block_name(b, "attn"), config.dim, rng);
    init_mlp(store, block_name(b, "mlp"), config.dim, config.mlp_ratio, rng);
  }
}

ad::Tensor encode_patches(const PatchGrid& grid, ParamStore& store, const PatchEncoderConfig& config) {
  if (grid.patch_size != config.patch_size)
    throw ShapeError("patch grid uses size " + std::to_string(grid.patch_size) + ", encoder expects " +
                     std::to_string(config.patch_size));
  const std::size_t n = grid.count();
  ad::Tensor h = ad::add(ad::matmul(ad::Tensor::matrix(n, grid.dim(), grid.values), store.get("patchenc.embed.w")),
                         store.get("patchenc.embed.b"));
  if (config.positional_encoding) h = ad::add(h, positional_encoding_2d(grid.rows, grid.cols, config.dim));
  for (int b = 0; b < config.blocks; ++b) {
    const ad::Tensor x = ad::layer_norm(h);
    h = ad::add(h, attention(x, x, store, block_name(b, "attn"), config.heads));
    h = ad::add(h, mlp(ad::layer_norm(h), store, block_name(b, "mlp")));
  }
  return ad::layer_norm(h);
}

ad::Tensor contrastive_loss(const ad::Tensor& node_emb, const std::vector<ad::Tensor>& patch_emb,
                            const CorrespondenceMap& cm, const ContrastiveConfig& config) {
  if (cm.empty()) throw EmptyCorrespondence("contrastive loss needs at least one positive pair");
  if (!(config.tau > 0.0)) throw ArgumentError("temperature must be positive");
  const std::size_t n_nodes = node_emb.rows();
  const std::size_t per_view = static_cast<std::size_t>(cm.patches_per_view);
  if (patch_emb.size() != static_cast<std::size_t>(cm.view_count) || n_nodes != static_cast<std::size_t>(cm.node_count))
    throw ShapeError("embeddings do not match the correspondence map");
  for (const auto& p : patch_emb)
    if (p.rows() != per_view || p.cols() != node_emb.cols())
      throw ShapeError("patch embeddings do not match the correspondence map");

  const ad::Tensor nodes_t = ad::transpose(ad::l2_normalize(node_emb));
  std::vector<ad::Tensor> patches;
  for (const auto& p : patch_emb) patches.push_back(ad::l2_normalize(p));

  // One seeded sample of candidate negatives shared by all views; each view
  // uses the sampled patches that belong to other views.
  const std::size_t total = per_view * patches.size();
  std::vector<int> sampled;
  ad::Tensor pool;
  if (patches.size() > 1 && config.max_negatives > 0) {
    std::vector<int> all(total);
    for (std::size_t i = 0; i < total; ++i) all[i] = static_cast<int>(i);
    Rng rng = Rng::derive(config.seed, "contrastive-negatives");
    const std::size_t k = std::min<std::size_t>(config.max_negatives, total);
    for (std::size_t i = 0; i < k; ++i) std::swap(all[i], all[i + rng.below(total - i)]);
    sampled.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(sampled.begin(), sampled.end());
    pool = ad::concat(patches, 0);
  }

  const double inv_tau = 1.0 / config.tau;
  std::vector<ad::Tensor> terms;
  std::size_t begin = 0;
  while (begin < cm.positives.size()) {
    const int view = cm.positives[begin].view;
    std::size_t end = begin;
    std::vector<std::size_t> index;
    while (end < cm.positives.size() && cm.positives[end].view == view) {
      index.push_back(static_cast<std::size_t>(cm.positives[end].patch) * n_nodes + cm.positives[end].node);
      ++end;
    }
    ad::Tensor candidates = patches[view];
    std::vector<int> others;
    for (int s : sampled)
      if (static_cast<std::size_t>(s) / per_view != static_cast<std::size_t>(view)) others.push_back(s);
    if (!others.empty())
      candidates = ad::concat(std::vector<ad::Tensor>{candidates, ad::gather_rows(pool, others)}, 0);
    const ad::Tensor logits = ad::scale(ad::matmul(candidates, nodes_t), inv_tau);
    const ad::Tensor to_patch = ad::log_softmax(logits, 0);
    const ad::Tensor to_node =
        ad::log_softmax(others.empty() ? logits : ad::slice_rows(logits, 0, per_view), 1);
    terms.push_back(ad::sum(ad::take(to_patch, index)));
    terms.push_back(ad::sum(ad::take(to_node, index)));
    begin = end;
  }
  ad::Tensor total_terms = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total_terms = ad::add(total_terms, terms[i]);
  return ad::scale(total_terms, -0.5 / static_cast<double>(cm.positives.size()));
}

void init_fuse(ParamStore& store, const FuseConfig& config, Rng& rng) {
  for (const char* part : {".q", ".k", ".v"}) store.add_xavier(std::string("fuse.attn") + part, config.dim, config.dim, rng);
  init_mlp(store, "fuse.mlp", config.dim, config.mlp_ratio, rng);
  store.add_xavier("fuse.out", config.dim, config.dim, rng);
  store.add_constant("fuse.prior", {}, config.prior_init);
}

ad::Tensor fuse(const ad::Tensor& patches, const ad::Tensor& nodes, const ad::Tensor* prior_mask,
                ParamStore& store, const FuseConfig& config, std::vector<ad::Tensor>* weights) {
  if (patches.cols() != nodes.cols()) throw ShapeError("fuse: patch and node widths differ");
  ad::Tensor bias;
  if (prior_mask) {
    if (prior_mask->rows() != patches.rows() || prior_mask->cols() != nodes.rows())
      throw ShapeError("fuse: correspondence mask shape " + ad::shape_string(prior_mask->shape()));
    bias = ad::mul(*prior_mask, store.get("fuse.prior"));
  }
  const ad::Tensor mixed = attention(ad::layer_norm(patches), ad::layer_norm(nodes), store, "fuse.attn",
                                     config.heads, prior_mask ? &bias : nullptr, weights, false);
  const ad::Tensor update = ad::add(mixed, mlp(ad::layer_norm(mixed), store, "fuse.mlp"));
  return ad::add(patches, ad::matmul(update, store.get("fuse.out")));
}

ad::Tensor correspondence_mask(const CorrespondenceMap& cm, int view) {
  const std::size_t per_view = cm.patches_per_view, n = cm.node_count;
  std::vector<double> mask(per_view * n, 0.0);
  for (const auto& p : cm.positives)
    if (p.view == view) mask[static_cast<std::size_t>(p.patch) * n + p.node] = 1.0;
  return ad::Tensor::matrix(per_view, n, std::move(mask));
}

}  // namespace skelfuse
