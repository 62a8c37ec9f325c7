#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numbers>
#include <numeric>

#include "test_meshes.hpp"
#include "skelfuse/errors.hpp"
#include "skelfuse/hungarian.hpp"
#include "skelfuse/lifting.hpp"
#include "skelfuse/metrics.hpp"
#include "skelfuse/rng.hpp"
#include "skelfuse/synth.hpp"

using namespace skelfuse;

namespace {

// A view set whose buffers are written by hand: pixel i shows face_ids[i].
ViewSet hand_views(const std::vector<std::vector<int>>& face_ids) {
  ViewSet vs;
  for (const auto& ids : face_ids) {
    FrameBuffer fb;
    fb.width = static_cast<int>(ids.size());
    fb.height = 1;
    fb.face_id.assign(ids.begin(), ids.end());
    fb.depth.assign(ids.size(), 1.0f);
    fb.intensity.assign(ids.size(), 0.5f);
    vs.frames.push_back(std::move(fb));
    vs.cameras.emplace_back();
  }
  return vs;
}

LabelImage row_image(std::vector<int> labels) {
  return {static_cast<int>(labels.size()), 1, std::move(labels)};
}

double brute_force(const std::vector<double>& cost, int rows, int cols) {
  // Assign min(rows, cols) pairs by permuting the longer side.
  const bool by_rows = rows <= cols;
  const int n = std::min(rows, cols), m = std::max(rows, cols);
  std::vector<int> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  double best = 1e300;
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += by_rows ? cost[i * cols + perm[i]] : cost[perm[i] * cols + i];
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST(PredictView, HandCases) {
  // 3 queries over 2 x 2 patches.
  const std::vector<double> cls{
      -5, -5, 5,   // query 0: instance
      -5, 5, -5,   // query 1: background
      -5, -5, 5};  // query 2: instance
  const std::vector<double> masks{
      8, -8, -8, -8,   // query 0 owns patch 0
      8, 8, 8, 8,      // query 1 wants everything but is background
      -8, 8, -8, -8};  // query 2 owns patch 1
  const PatchLabels p = predict_view(cls, masks, 3, 2, 2, 4);
  EXPECT_EQ(p.labels[0], 1);
  EXPECT_EQ(p.labels[1], 3);
  EXPECT_EQ(p.labels[2], 0);
  EXPECT_EQ(p.labels[3], 0);
}

TEST(PredictView, TiesGoToLowerQueryAndSizesAreChecked) {
  const std::vector<double> cls{-5, -5, 5, -5, -5, 5};
  const std::vector<double> masks{4, 4};
  EXPECT_EQ(predict_view(cls, masks, 2, 1, 1, 4).labels[0], 1);
  EXPECT_THROW(predict_view(cls, masks, 3, 1, 1, 4), ShapeError);
}

TEST(ExpandPatchLabels, OnlyMeshPixels) {
  FrameBuffer fb;
  fb.width = 4;
  fb.height = 2;
  fb.face_id = {0, 0, -1, 1, 2, -1, 3, 3};
  fb.depth.assign(8, 1.0f);
  fb.intensity.assign(8, 0.0f);
  const LabelImage img = expand_patch_labels({1, 2, 2, {5, 6}}, fb);
  EXPECT_EQ(img.labels, (std::vector<int>{5, 5, -1, 6, 5, -1, 6, 6}));
}

TEST(PatchMajority, TiesToSmallerLabel) {
  const LabelImage img{4, 2, {3, 1, -1, -1, 1, 3, -1, -1}};
  EXPECT_EQ(patch_majority(img, 2), (std::vector<int>{1, -1}));
}

TEST(Lift, GroundTruthImagesReproduceVisibleFaces) {
  const TriMesh mesh = synth_tooth_row(3, 6, 0.0);
  const std::vector<double> elev{std::numbers::pi / 6, std::numbers::pi / 3};
  const ViewSet views = render_views(mesh, camera_ring(mesh, 8, elev, {.resolution = 128}));
  std::vector<LabelImage> images;
  for (const auto& fb : views.frames) images.push_back(label_image_from_faces(fb, *mesh.face_labels));
  const InstanceLabeling lab = lift(images, views, mesh);
  std::map<int, int> gt_to_pred, pred_to_gt;
  std::size_t voted = 0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    if (lab.votes[f].empty()) continue;
    ++voted;
    const int g = (*mesh.face_labels)[f], p = lab.face_labels[f];
    EXPECT_EQ(lab.votes[f].size(), 1u) << "face " << f;
    const auto [it, fresh] = gt_to_pred.emplace(g, p);
    EXPECT_EQ(it->second, p) << "face " << f;
    const auto [jt, fresh2] = pred_to_gt.emplace(p, g);
    EXPECT_EQ(jt->second, g) << "face " << f;
  }
  EXPECT_GT(voted, mesh.faces.size() / 2);
  EXPECT_EQ(gt_to_pred.size(), 7u);
  EXPECT_EQ(gt_to_pred.at(0), 0);
}

TEST(Lift, MergesOverlappingInstancesAcrossViews) {
  const TriMesh mesh = fixtures::tetrahedron();
  const ViewSet views = hand_views({{0, 1, 2, 3}, {0, 1, 2, 3}});
  const std::vector<LabelImage> images{row_image({1, 1, 2, 2}), row_image({7, 7, 4, 4})};
  const InstanceLabeling lab = lift(images, views, mesh);
  EXPECT_EQ(lab.face_labels[0], lab.face_labels[1]);
  EXPECT_EQ(lab.face_labels[2], lab.face_labels[3]);
  EXPECT_NE(lab.face_labels[0], lab.face_labels[2]);
  EXPECT_GT(lab.face_labels[0], 0);
  for (const auto& v : lab.votes) ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(lab.votes[0][0].second, 2);
}

TEST(Lift, SameViewInstancesNeverJoin) {
  // View 1 bridges the two instances of views 0 and 2; they must stay apart.
  const TriMesh mesh = fixtures::tetrahedron();
  const ViewSet views = hand_views({{0, 1, 2, 3}, {0, 1, 2, 3}, {0, 1, 2, 3}});
  const std::vector<LabelImage> images{row_image({1, 1, 2, 2}), row_image({3, 3, 3, 3}),
                                       row_image({1, 1, 2, 2})};
  const InstanceLabeling lab = lift(images, views, mesh, {.merge_iou = 0.1});
  EXPECT_NE(lab.face_labels[0], lab.face_labels[2]);
}

TEST(Lift, BelowThresholdStaysSeparateAndBackgroundWins) {
  const TriMesh mesh = fixtures::tetrahedron();
  const ViewSet views = hand_views({{0, 1, 2, 3}, {0, 1, 2, 3}, {0, 1, 2, 3}});
  const std::vector<LabelImage> images{row_image({1, 0, 0, -1}), row_image({0, 1, 0, -1}),
                                       row_image({0, 0, 1, -1})};
  const InstanceLabeling lab = lift(images, views, mesh, {.merge_iou = 0.5});
  EXPECT_EQ(lab.face_labels[0], 0);  // 2 background votes beat 1 instance vote
  EXPECT_TRUE(lab.votes[3].empty());
  EXPECT_EQ(lab.face_labels[3], 0);
}

TEST(Lift, DimensionErrors) {
  const TriMesh mesh = fixtures::tetrahedron();
  const ViewSet views = hand_views({{0, 1, 2, 3}});
  EXPECT_THROW(lift(std::vector<LabelImage>{}, views, mesh), DimensionMismatch);
  EXPECT_THROW(lift(std::vector<LabelImage>{row_image({1, 1})}, views, mesh), DimensionMismatch);
  const ViewSet bad = hand_views({{0, 1, 2, 9}});
  EXPECT_THROW(lift(std::vector<LabelImage>{row_image({1, 1, 1, 1})}, bad, mesh), DimensionMismatch);
}

TEST(FillUnseen, NearestVotedFace) {
  const TriMesh mesh = fixtures::tetrahedron();
  InstanceLabeling lab;
  lab.face_labels = {2, 0, 0, 0};
  lab.votes = {{{2, 1}}, {}, {}, {}};
  lab.filled.assign(4, 0);
  const InstanceLabeling out = fill_unseen(mesh, lab);
  EXPECT_EQ(out.face_labels, (std::vector<int>{2, 2, 2, 2}));
  EXPECT_EQ(out.filled, (std::vector<char>{0, 1, 1, 1}));
}

TEST(FillUnseen, TiesToSmallerLabel) {
  const TriMesh mesh = fixtures::tetrahedron();
  InstanceLabeling lab;
  lab.face_labels = {5, 3, 0, 0};
  lab.votes = {{{5, 1}}, {{3, 1}}, {}, {}};
  lab.filled.assign(4, 0);
  const InstanceLabeling out = fill_unseen(mesh, lab);
  EXPECT_EQ(out.face_labels[2], 3);
  EXPECT_EQ(out.face_labels[3], 3);
}

TEST(Hungarian, MatchesBruteForce) {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const int rows = 1 + static_cast<int>(rng.below(7)), cols = 1 + static_cast<int>(rng.below(7));
    std::vector<double> cost(rows * cols);
    for (double& c : cost) c = trial % 3 == 0 ? static_cast<double>(rng.below(4)) : rng.uniform(-5, 5);
    const Assignment a = hungarian(cost, rows, cols);
    std::vector<char> used(cols, 0);
    int pairs = 0;
    double total = 0.0;
    for (int r = 0; r < rows; ++r) {
      const int c = a.row_to_col[r];
      if (c < 0) continue;
      ASSERT_LT(c, cols);
      ASSERT_FALSE(used[c]);
      used[c] = 1;
      ++pairs;
      total += cost[r * cols + c];
    }
    EXPECT_EQ(pairs, std::min(rows, cols));
    EXPECT_NEAR(total, a.total_cost, 1e-9);
    EXPECT_NEAR(a.total_cost, brute_force(cost, rows, cols), 1e-9) << rows << "x" << cols;
  }
}

TEST(Hungarian, EmptyAndHandCase) {
  EXPECT_TRUE(hungarian({}, 0, 0).row_to_col.empty());
  const std::vector<double> cost{4, 1, 3, 2, 0, 5, 3, 2, 2};
  const Assignment a = hungarian(cost, 3, 3);
  EXPECT_EQ(a.row_to_col, (std::vector<int>{1, 0, 2}));
  EXPECT_DOUBLE_EQ(a.total_cost, 5.0);
}

TEST(Metrics, PerfectAndRelabelled) {
  const std::vector<int> gt{0, 0, 1, 1, 2, 2, 3};
  const EvalReport same = evaluate(gt, gt);
  EXPECT_DOUBLE_EQ(same.miou, 1.0);
  EXPECT_DOUBLE_EQ(same.precision, 1.0);
  EXPECT_DOUBLE_EQ(same.recall, 1.0);
  const std::vector<int> relabelled{0, 0, 9, 9, 4, 4, 1};
  EXPECT_DOUBLE_EQ(evaluate(relabelled, gt).miou, 1.0);
}

TEST(Metrics, HandCase) {
  const std::vector<int> gt{0, 0, 1, 1, 2, 2};
  const std::vector<int> pred{0, 0, 1, 1, 1, 1};
  const EvalReport r = evaluate(pred, gt);
  EXPECT_NEAR(r.miou, (1.0 + 0.5 + 0.0) / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(r.precision, 1.0);
  EXPECT_DOUBLE_EQ(r.recall, 0.5);
  ASSERT_EQ(r.instances.size(), 3u);
  EXPECT_EQ(r.instances[2].pred_label, -1);
  EXPECT_NEAR(r.instances[1].dice, 2.0 * 2 / (2 + 4), 1e-12);
}

TEST(Metrics, LengthMismatch) {
  EXPECT_THROW(evaluate(std::vector<int>{0, 1}, std::vector<int>{0}), LengthMismatch);
}
