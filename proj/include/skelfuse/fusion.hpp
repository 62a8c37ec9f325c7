#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "skelfuse/correspondence.hpp"
#include "skelfuse/param_store.hpp"
#include "skelfuse/tensor.hpp"

namespace skelfuse {

struct AttentionShape {
  int dim = 64;
  int heads = 4;
};

/// Parameters "<prefix>.q|k|v|o", each dim x dim.
void init_attention(ParamStore& store, const std::string& prefix, int dim, Rng& rng);
/// Parameters "<prefix>.w1|b1|w2|b2" with hidden width dim * ratio.
void init_mlp(ParamStore& store, const std::string& prefix, int dim, int ratio, Rng& rng);

/// Multi-head scaled dot-product attention of `queries` over `keys`
/// (values are projected from `keys` too). `bias`, if given, is added to
/// every head's logits (n x m). When `weights` is non-null it receives the
/// per-head attention matrices. With `project` false the concatenated heads
/// are returned without the output projection.
ad::Tensor attention(const ad::Tensor& queries, const ad::Tensor& keys, ParamStore& store,
                     const std::string& prefix, int heads, const ad::Tensor* bias = nullptr,
                     std::vector<ad::Tensor>* weights = nullptr, bool project = true);

ad::Tensor mlp(const ad::Tensor& x, ParamStore& store, const std::string& prefix);

/// rows*cols x dim table; the first half of the channels encodes the patch
/// row, the second half the column, as interleaved sin/cos pairs.
ad::Tensor positional_encoding_2d(int rows, int cols, int dim);

struct PatchEncoderConfig {
  int patch_size = 16;
  int dim = 64;
  int heads = 4;
  int mlp_ratio = 2;
  int blocks = 2;
  bool positional_encoding = true;
};

void init_patch_encoder(ParamStore& store, const PatchEncoderConfig& config, Rng& rng);

/// Linear embedding of the patch intensities plus positional encoding, then
/// pre-norm transformer blocks. Returns (rows*cols) x dim.
ad::Tensor encode_patches(const PatchGrid& grid, ParamStore& store, const PatchEncoderConfig& config);

struct ContrastiveConfig {
  double tau = 0.07;
  int max_negatives = 512;
  std::uint64_t seed = 0;
};

/// Symmetric InfoNCE over correspondence positives. Node-to-patch terms
/// normalise over every patch of the positive's view plus up to
/// max_negatives patches sampled (seeded) from the other views;
/// patch-to-node terms normalise over all nodes. Embeddings are
/// L2-normalised inside. Throws EmptyCorrespondence.
ad::Tensor contrastive_loss(const ad::Tensor& node_emb, const std::vector<ad::Tensor>& patch_emb,
                            const CorrespondenceMap& cm, const ContrastiveConfig& config);

struct FuseConfig {
  int dim = 64;
  int heads = 4;
  int mlp_ratio = 2;
  double prior_init = 4.0;
};

/// "fuse.attn.*", "fuse.mlp.*", "fuse.out" (dim x dim) and the scalar
/// "fuse.prior" weighting the correspondence bias.
void init_fuse(ParamStore& store, const FuseConfig& config, Rng& rng);

/// patches + (C + MLP(LN(C))) W_out, where C is the head-concatenated
/// cross-attention of LN(patches) over LN(nodes). `prior_mask` (patches x
/// nodes, 1 where a correspondence exists) is added to the attention logits
/// scaled by the learned prior. A zero W_out makes fuse the identity.
ad::Tensor fuse(const ad::Tensor& patches, const ad::Tensor& nodes, const ad::Tensor* prior_mask,
                ParamStore& store, const FuseConfig& config, std::vector<ad::Tensor>* weights = nullptr);

/// patches x nodes indicator of correspondences in one view.
ad::Tensor correspondence_mask(const CorrespondenceMap& cm, int view);

}  // namespace skelfuse
