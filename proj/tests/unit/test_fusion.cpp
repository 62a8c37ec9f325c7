#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "skelfuse/errors.hpp"
#include "skelfuse/fusion.hpp"
#include "skelfuse/hungarian.hpp"
#include "skelfuse/ops.hpp"
#include "skelfuse/rng.hpp"
#include "skelfuse/seg_head.hpp"

using namespace skelfuse;
using ad::Tensor;

namespace {

Tensor random(Rng& rng, std::size_t r, std::size_t c) {
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.normal();
  return Tensor::matrix(r, c, std::move(v));
}

Eigen::MatrixXd random_rotation(Rng& rng, int d) {
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ();
}

Tensor rotate(const Tensor& t, const Eigen::MatrixXd& q) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t.at(i, j);
  const Eigen::MatrixXd r = m * q;
  std::vector<double> v(t.numel());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) v[i * t.cols() + j] = r(i, j);
  return Tensor::matrix(t.rows(), t.cols(), std::move(v));
}

}  // namespace

TEST(PatchEncoder, ShapeContract) {
  PatchEncoderConfig cfg;
  ParamStore store;
  Rng rng(1);
  init_patch_encoder(store, cfg, rng);
  PatchGrid g;
  g.patch_size = 16;
  g.rows = g.cols = 16;
  g.values.assign(256 * 256, 0.5);
  const Tensor out = encode_patches(g, store, cfg);
  EXPECT_EQ(out.rows(), 256u);
  EXPECT_EQ(out.cols(), 64u);
}

TEST(PatchEncoder, ShiftedContentMatchesWithoutPositionalEncoding) {
  PatchEncoderConfig cfg{.patch_size = 2, .dim = 8, .heads = 2, .mlp_ratio = 2, .blocks = 1,
                         .positional_encoding = false};
  ParamStore store;
  Rng rng(2);
  init_patch_encoder(store, cfg, rng);
  // 3x3 grid; the second grid is the first shifted right by one patch with a
  // wrap-around column.
  PatchGrid a;
  a.patch_size = 2;
  a.rows = a.cols = 3;
  a.values.resize(9 * 4);
  for (double& v : a.values) v = rng.uniform();
  PatchGrid b = a;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      std::copy_n(a.patch(r * 3 + c), 4, b.values.begin() + (r * 3 + (c + 1) % 3) * 4);
  const Tensor ea = encode_patches(a, store, cfg), eb = encode_patches(b, store, cfg);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 8; ++k) EXPECT_NEAR(ea.at(r * 3 + c, k), eb.at(r * 3 + (c + 1) % 3, k), 1e-12);
  cfg.positional_encoding = true;
  const Tensor pa = encode_patches(a, store, cfg), pb = encode_patches(b, store, cfg);
  double diff = 0.0;
  for (int k = 0; k < 8; ++k) diff += std::abs(pa.at(0, k) - pb.at(1, k));
  EXPECT_GT(diff, 1e-6);
}

TEST(PositionalEncoding, RowAndColumnHalves) {
  const Tensor pe = positional_encoding_2d(2, 3, 8);
  // Patch (1, 2): first half encodes row 1, second half column 2.
  EXPECT_DOUBLE_EQ(pe.at(5, 0), std::sin(1.0));
  EXPECT_DOUBLE_EQ(pe.at(5, 1), std::cos(1.0));
  EXPECT_DOUBLE_EQ(pe.at(5, 4), std::sin(2.0));
  EXPECT_DOUBLE_EQ(pe.at(5, 5), std::cos(2.0));
  EXPECT_THROW(positional_encoding_2d(2, 2, 6), ShapeError);
}

TEST(Contrastive, UniformSimilarityGivesLogM) {
  const int m = 5;
  const Tensor same = Tensor::matrix(m, 3, std::vector<double>(m * 3, 0.7));
  std::vector<Positive> pos;
  for (int i = 0; i < m; ++i) pos.push_back({i, 0, i, 0});
  const CorrespondenceMap cm = make_correspondence(pos, m, 1, m);
  const Tensor loss = contrastive_loss(same, {same}, cm, {.tau = 0.07, .max_negatives = 512, .seed = 0});
  EXPECT_NEAR(loss.item(), std::log(static_cast<double>(m)), 1e-9);
}

TEST(Contrastive, TwoCandidateClosedForm) {
  // Node 0 matches patch 0 (similarity 1), everything else is orthogonal.
  const Tensor nodes = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor patches = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const CorrespondenceMap cm = make_correspondence({{0, 0, 0, 0}}, 2, 1, 2);
  const Tensor loss = contrastive_loss(nodes, {patches}, cm, {.tau = 1.0, .max_negatives = 0, .seed = 0});
  EXPECT_NEAR(loss.item(), std::log1p(std::exp(-1.0)), 1e-9);
  EXPECT_NEAR(loss.item(), 0.31326, 1e-5);
}

TEST(Contrastive, NonNegativeOnRandomDraws) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const Tensor nodes = random(rng, 4, 3);
    const std::vector<Tensor> views{random(rng, 3, 3), random(rng, 3, 3)};
    const CorrespondenceMap cm = make_correspondence({{0, 0, 1, 0}, {2, 1, 0, 1}, {3, 1, 2, 0}}, 4, 2, 3);
    EXPECT_GE(contrastive_loss(nodes, views, cm, {.tau = 0.07, .max_negatives = 4, .seed = 1}).item(), 0.0);
  }
}

TEST(Contrastive, RotationInvariant) {
  Rng rng(4);
  const Tensor nodes = random(rng, 5, 6);
  const std::vector<Tensor> views{random(rng, 4, 6), random(rng, 4, 6)};
  const CorrespondenceMap cm = make_correspondence({{0, 0, 1, 0}, {1, 0, 3, 1}, {4, 1, 2, 0}}, 5, 2, 4);
  const ContrastiveConfig cc{.tau = 0.1, .max_negatives = 5, .seed = 9};
  const Eigen::MatrixXd q = random_rotation(rng, 6);
  const double a = contrastive_loss(nodes, views, cm, cc).item();
  const double b = contrastive_loss(rotate(nodes, q), {rotate(views[0], q), rotate(views[1], q)}, cm, cc).item();
  EXPECT_NEAR(a, b, 1e-9);
}

TEST(Contrastive, HigherPositiveSimilarityLowersLoss) {
  // Rotating patch 0 towards node 0 raises only the positive similarity;
  // every other pair stays orthogonal.
  const Tensor nodes = Tensor::matrix(2, 3, {1, 0, 0, 0, 1, 0});
  const CorrespondenceMap cm = make_correspondence({{0, 0, 0, 0}}, 2, 1, 2);
  double previous = 1e9;
  for (double angle : {1.2, 0.9, 0.6, 0.3, 0.0}) {
    const Tensor patches = Tensor::matrix(2, 3, {std::cos(angle), 0, std::sin(angle), 0, 0, 1});
    const double l = contrastive_loss(nodes, {patches}, cm, {.tau = 0.5, .max_negatives = 0, .seed = 0}).item();
    EXPECT_LT(l, previous);
    previous = l;
  }
}

TEST(Contrastive, Errors) {
  const Tensor t = Tensor::matrix(2, 2, {1, 0, 0, 1});
  EXPECT_THROW(contrastive_loss(t, {t}, make_correspondence({}, 2, 1, 2), {}), EmptyCorrespondence);
  EXPECT_THROW(contrastive_loss(t, {t}, make_correspondence({{0, 0, 0, 0}}, 2, 1, 2), {.tau = 0.0}), ArgumentError);
}

TEST(Fuse, ZeroOutputProjectionIsIdentity) {
  FuseConfig cfg{.dim = 8, .heads = 2, .mlp_ratio = 2, .prior_init = 2.0};
  ParamStore store;
  Rng rng(5);
  init_fuse(store, cfg, rng);
  for (double& v : store.get("fuse.out").mutable_data()) v = 0.0;
  const Tensor patches = random(rng, 6, 8), nodes = random(rng, 4, 8);
  const Tensor out = fuse(patches, nodes, nullptr, store, cfg);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_EQ(out.data()[i], patches.data()[i]);
}

TEST(Fuse, AttentionRowsSumToOneAndPriorShiftsMass) {
  FuseConfig cfg{.dim = 8, .heads = 2, .mlp_ratio = 2, .prior_init = 3.0};
  ParamStore store;
  Rng rng(6);
  init_fuse(store, cfg, rng);
  const Tensor patches = random(rng, 3, 8), nodes = random(rng, 4, 8);
  const Tensor mask = Tensor::matrix(3, 4, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0});
  std::vector<Tensor> plain, biased;
  fuse(patches, nodes, nullptr, store, cfg, &plain);
  fuse(patches, nodes, &mask, store, cfg, &biased);
  ASSERT_EQ(plain.size(), 2u);
  for (const Tensor& w : plain)
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s += w.at(r, c);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  for (int h = 0; h < 2; ++h) {
    EXPECT_GT(biased[h].at(0, 0), plain[h].at(0, 0));
    EXPECT_NEAR(biased[h].at(2, 3), plain[h].at(2, 3), 1e-15);  // unmasked row unchanged
  }
}

TEST(SegHead, ShapesAndDuplicatedQueries) {
  SegHeadConfig cfg;
  ParamStore store;
  Rng rng(7);
  init_seg_head(store, cfg, rng);
  const Tensor patches = random(rng, 256, 64);
  const SegOutput out = seg_forward(patches, store, cfg);
  EXPECT_EQ(out.class_logits.shape(), (ad::Shape{24, 3}));
  EXPECT_EQ(out.mask_logits.shape(), (ad::Shape{24, 256}));

  // Copy query 0 into query 5; self-attention is permutation-equivariant.
  auto q = store.get("head.queries").mutable_data();
  std::copy_n(q.begin(), 64, q.begin() + 5 * 64);
  const SegOutput dup = seg_forward(patches, store, cfg);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(dup.class_logits.at(0, c), dup.class_logits.at(5, c), 1e-12);
  for (std::size_t p = 0; p < 256; ++p) EXPECT_NEAR(dup.mask_logits.at(0, p), dup.mask_logits.at(5, p), 1e-12);
}

TEST(SegTargetTest, BackgroundFirstAndUnlabelledExcluded) {
  const SegTarget t = make_seg_target({-1, 0, 3, 3, 1, 0});
  EXPECT_EQ(t.labels, (std::vector<int>{0, 1, 3}));
  EXPECT_EQ(t.classes, (std::vector<int>{kBackground, kInstance, kInstance}));
  EXPECT_EQ(t.masks[0], (std::vector<double>{0, 1, 0, 0, 0, 1}));
  EXPECT_EQ(t.masks[2], (std::vector<double>{0, 0, 1, 1, 0, 0}));
}

namespace {

SegOutput perfect_output(const SegTarget& t, int queries, std::size_t patches) {
  std::vector<double> cls(queries * 3, -50.0), masks(queries * patches, -1e3);
  for (int q = 0; q < queries; ++q) {
    if (q < static_cast<int>(t.masks.size())) {
      cls[q * 3 + t.classes[q]] = 50.0;
      for (std::size_t p = 0; p < patches; ++p) masks[q * patches + p] = t.masks[q][p] > 0 ? 1e3 : -1e3;
    } else {
      cls[q * 3 + kNoObject] = 50.0;
    }
  }
  return {Tensor::matrix(queries, 3, cls, true), Tensor::matrix(queries, patches, masks, true)};
}

}  // namespace

TEST(SegLoss, PerfectPredictionIsNearZero) {
  const SegTarget t = make_seg_target({0, 0, 1, 1, 2, 2, -1, 0});
  EXPECT_NEAR(seg_loss(perfect_output(t, 5, 8), t, {}).item(), 0.0, 1e-6);
}

TEST(SegLoss, InvariantToInstanceIdPermutation) {
  Rng rng(8);
  const std::vector<int> labels{0, 1, 1, 2, 2, 0, 3, 3, -1};
  std::vector<int> permuted = labels;
  for (int& l : permuted)
    if (l > 0) l = 4 - l;  // 1 <-> 3
  SegOutput out{random(rng, 6, 3), random(rng, 6, 9)};
  const double a = seg_loss(out, make_seg_target(labels), {}).item();
  const double b = seg_loss(out, make_seg_target(permuted), {}).item();
  EXPECT_EQ(a, b);
}

TEST(SegLoss, MatchingEqualsBruteForce) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const SegTarget t = make_seg_target({1, 1, 2, 2, 2, -1});  // 2 instances, no background
    ASSERT_EQ(t.masks.size(), 2u);
    const SegOutput out{random(rng, 3, 3), random(rng, 3, 6)};
    const std::vector<double> cost = seg_match_cost(out, t, {});
    double best = 1e18;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        if (a != b) best = std::min(best, cost[a * 2 + 0] + cost[b * 2 + 1]);
    SegMatch match;
    seg_loss(out, t, {}, &match);
    double chosen = 0.0;
    for (int q = 0; q < 3; ++q)
      if (match.query_to_target[q] >= 0) chosen += cost[q * 2 + match.query_to_target[q]];
    EXPECT_NEAR(chosen, best, 1e-12);
  }
}
