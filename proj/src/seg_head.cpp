#include "skelfuse/seg_head.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "skelfuse/errors.hpp"
#include "skelfuse/fusion.hpp"
#include "skelfuse/hungarian.hpp"
#include "skelfuse/ops.hpp"

namespace skelfuse {

namespace {

std::string block_name(int b, const char* part) { return "head.block" + std::to_string(b) + "." + part; }

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void init_seg_head(ParamStore& store, const SegHeadConfig& config, Rng& rng) {
  store.add_xavier("head.queries", config.queries, config.dim, rng);
  for (int b = 0; b < config.blocks; ++b) {
    init_attention(store, block_name(b, "cross"), config.dim, rng);
    init_attention(store, block_name(b, "self"), config.dim, rng);
    init_mlp(store, block_name(b, "mlp"), config.dim, config.mlp_ratio, rng);
  }
  store.add_xavier("head.class.w", config.dim, 3, rng);
  store.add_constant("head.class.b", {1, 3}, 0.0);
  store.add_xavier("head.mask.w", config.dim, config.dim, rng);
  store.add_constant("head.mask.b", {1, static_cast<std::size_t>(config.dim)}, 0.0);
}

SegOutput seg_forward(const ad::Tensor& patches, ParamStore& store, const SegHeadConfig& config) {
  if (patches.cols() != static_cast<std::size_t>(config.dim))
    throw ShapeError("seg head expects patch width " + std::to_string(config.dim));
  const ad::Tensor keys = ad::layer_norm(patches);
  ad::Tensor q = store.get("head.queries");
  for (int b = 0; b < config.blocks; ++b) {
    q = ad::add(q, attention(ad::layer_norm(q), keys, store, block_name(b, "cross"), config.heads));
    const ad::Tensor qn = ad::layer_norm(q);
    q = ad::add(q, attention(qn, qn, store, block_name(b, "self"), config.heads));
    q = ad::add(q, mlp(ad::layer_norm(q), store, block_name(b, "mlp")));
  }
  const ad::Tensor qn = ad::layer_norm(q);
  SegOutput out;
  out.class_logits = ad::add(ad::matmul(qn, store.get("head.class.w")), store.get("head.class.b"));
  const ad::Tensor embed = ad::add(ad::matmul(qn, store.get("head.mask.w")), store.get("head.mask.b"));
  out.mask_logits = ad::scale(ad::matmul(embed, ad::transpose(keys)), 1.0 / std::sqrt(static_cast<double>(config.dim)));
  return out;
}

SegTarget make_seg_target(const std::vector<int>& patch_labels) {
  std::set<int> present;
  for (int l : patch_labels)
    if (l >= 0) present.insert(l);
  SegTarget t;
  for (int label : present) {
    t.labels.push_back(label);
    t.classes.push_back(label == 0 ? kBackground : kInstance);
    std::vector<double> mask(patch_labels.size(), 0.0);
    for (std::size_t p = 0; p < patch_labels.size(); ++p) mask[p] = patch_labels[p] == label ? 1.0 : 0.0;
    t.masks.push_back(std::move(mask));
  }
  return t;
}

std::vector<double> seg_match_cost(const SegOutput& out, const SegTarget& target, const SegLossConfig& config) {
  const std::size_t queries = out.class_logits.rows(), patches = out.mask_logits.cols();
  const std::size_t k = target.masks.size();
  for (const auto& m : target.masks)
    if (m.size() != patches) throw ShapeError("target mask length differs from the patch count");
  std::vector<double> cost(queries * k);
  const auto cls = out.class_logits.data();
  const auto masks = out.mask_logits.data();
  std::vector<double> prob(patches), bce_pos(patches), bce_neg(patches);
  for (std::size_t q = 0; q < queries; ++q) {
    const double* z = cls.data() + 3 * q;
    const double mx = std::max({z[0], z[1], z[2]});
    const double lse = mx + std::log(std::exp(z[0] - mx) + std::exp(z[1] - mx) + std::exp(z[2] - mx));
    double prob_sum = 0.0;
    for (std::size_t p = 0; p < patches; ++p) {
      const double raw = masks[q * patches + p];
      const double x = std::clamp(raw, -config.mask_clamp, config.mask_clamp);
      const double soft = std::log1p(std::exp(-std::abs(x)));
      bce_pos[p] = std::max(x, 0.0) - x + soft;
      bce_neg[p] = std::max(x, 0.0) + soft;
      prob[p] = stable_sigmoid(raw);
      prob_sum += prob[p];
    }
    for (std::size_t j = 0; j < k; ++j) {
      const auto& t = target.masks[j];
      double bce = 0.0, inter = 0.0, tsum = 0.0;
      for (std::size_t p = 0; p < patches; ++p) {
        bce += t[p] * bce_pos[p] + (1.0 - t[p]) * bce_neg[p];
        inter += prob[p] * t[p];
        tsum += t[p];
      }
      const double dice = 1.0 - (2.0 * inter + 1.0) / (prob_sum + tsum + 1.0);
      cost[q * k + j] = (lse - z[target.classes[j]]) + bce / static_cast<double>(patches) + dice;
    }
  }
  return cost;
}

ad::Tensor seg_loss(const SegOutput& out, const SegTarget& target, const SegLossConfig& config, SegMatch* match) {
  const std::size_t queries = out.class_logits.rows(), patches = out.mask_logits.cols();
  if (out.class_logits.cols() != 3 || out.mask_logits.rows() != queries)
    throw ShapeError("seg output shapes are inconsistent");
  const std::size_t k = target.masks.size();
  const std::vector<double> cost = seg_match_cost(out, target, config);
  const Assignment assignment = hungarian(cost, static_cast<int>(queries), static_cast<int>(k));

  std::vector<std::size_t> class_index(queries);
  std::vector<double> class_weight(queries);
  std::vector<int> matched_queries;
  std::vector<double> matched_masks;
  double weight_sum = 0.0;
  for (std::size_t q = 0; q < queries; ++q) {
    const int j = assignment.row_to_col[q];
    const int cls = j >= 0 ? target.classes[j] : kNoObject;
    class_index[q] = q * 3 + cls;
    class_weight[q] = j >= 0 ? 1.0 : config.no_object_weight;
    weight_sum += class_weight[q];
    if (j >= 0) {
      matched_queries.push_back(static_cast<int>(q));
      matched_masks.insert(matched_masks.end(), target.masks[j].begin(), target.masks[j].end());
    }
  }
  if (match) match->query_to_target = assignment.row_to_col;

  const ad::Tensor log_probs = ad::take(ad::log_softmax(out.class_logits, 1), class_index);
  ad::Tensor loss = ad::scale(ad::sum(ad::mul(log_probs, ad::Tensor::from({queries}, class_weight))), -1.0 / weight_sum);
  if (!matched_queries.empty()) {
    const std::size_t m = matched_queries.size();
    const ad::Tensor logits = ad::gather_rows(out.mask_logits, matched_queries);
    const ad::Tensor targets = ad::Tensor::matrix(m, patches, matched_masks);
    const ad::Tensor bce = ad::mean(ad::bce_with_logits(ad::clamp(logits, -config.mask_clamp, config.mask_clamp), targets));
    const ad::Tensor prob = ad::sigmoid(logits);
    const ad::Tensor inter = ad::sum(ad::mul(prob, targets), 1);
    const ad::Tensor denom = ad::add(ad::sum(prob, 1), ad::add_scalar(ad::sum(targets, 1), 1.0));
    const ad::Tensor ratio = ad::div(ad::add_scalar(ad::scale(inter, 2.0), 1.0), denom);
    const ad::Tensor dice = ad::add_scalar(ad::neg(ad::mean(ratio)), 1.0);
    loss = ad::add(loss, ad::add(bce, dice));
  }
  return loss;
}

}  // namespace skelfuse
