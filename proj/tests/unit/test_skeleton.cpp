#include <gtest/gtest.h>

#include <map>
#include <set>

#include "skelfuse/errors.hpp"
#include "skelfuse/skeleton.hpp"
#include "skelfuse/synth.hpp"
#include "test_meshes.hpp"

using namespace skelfuse;

namespace {

std::vector<int> degrees(const Skeleton& s) {
  std::vector<int> d(s.size(), 0);
  for (const auto& e : s.edges) {
    ++d[e[0]];
    ++d[e[1]];
  }
  return d;
}

}  // namespace

TEST(Contract, ThinCylinderCollapsesOntoAxis) {
  const TriMesh m = fixtures::cylinder(10, 9, 0.05, 1.0);
  ASSERT_EQ(m.face_count(), 200u);
  const std::vector<Vec3> c = contract(m, {});
  for (const Vec3& p : c) EXPECT_LT(std::hypot(p.x(), p.y()), 0.02);
}

TEST(Contract, SphereCollapsesToCentre) {
  const TriMesh m = fixtures::icosphere(2);
  for (const Vec3& p : contract(m, {})) EXPECT_LT(p.norm(), 0.05);
}

TEST(Contract, RejectsBadParameters) {
  ContractionParams p;
  p.iterations = 0;
  EXPECT_THROW(contract(fixtures::tetrahedron(), p), ArgumentError);
}

TEST(Contract, DisconnectedMeshIsRejected) {
  TriMesh m = fixtures::tetrahedron();
  const TriMesh other = apply_transform(fixtures::tetrahedron(), RigidTransform(Mat3::Identity(), Vec3(5, 0, 0)));
  for (const Vec3& v : other.vertices) m.vertices.push_back(v);
  for (const Face& f : other.faces) m.faces.push_back({f[0] + 4, f[1] + 4, f[2] + 4});
  EXPECT_THROW(skeletonize(m), NotConnected);
}

TEST(Collapse, FullCollapseGivesSingleNode) {
  const TriMesh m = fixtures::icosphere(1);
  const Skeleton s = collapse_to_skeleton(m, m.vertices, 1e-6);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_TRUE(s.edges.empty());
  for (int o : s.vertex_owner) EXPECT_EQ(o, 0);
}

TEST(Collapse, CylinderGivesPath) {
  const TriMesh m = fixtures::cylinder(12, 30, 0.1, 1.0);
  const std::vector<Vec3> c = contract(m, {});
  const Skeleton s = collapse_to_skeleton(m, c, 10.0 / static_cast<double>(m.vertex_count()));
  ASSERT_EQ(s.size(), 10u);
  const std::vector<int> d = degrees(s);
  int leaves = 0;
  for (int k : d) {
    EXPECT_LE(k, 2);
    leaves += k == 1;
  }
  EXPECT_EQ(leaves, 2);
  EXPECT_TRUE(s.connected());
}

TEST(Skeletonize, ToothRowNodesSeparateTeeth) {
  const TriMesh m = synth_tooth_row(1, 8, 0.0);
  const Skeleton s = skeletonize(m);
  EXPECT_TRUE(s.connected());
  EXPECT_GE(s.size(), 64u);
  EXPECT_LE(s.size(), 256u);
  // tooth label sets per node
  std::vector<std::set<int>> node_teeth(s.size());
  std::map<int, std::set<int>> tooth_nodes;
  for (std::size_t f = 0; f < m.face_count(); ++f) {
    const int label = (*m.face_labels)[f];
    if (label == 0) continue;
    for (int v : m.faces[f]) {
      node_teeth[s.vertex_owner[v]].insert(label);
      tooth_nodes[label].insert(s.vertex_owner[v]);
    }
  }
  ASSERT_EQ(tooth_nodes.size(), 8u);
  for (const auto& [tooth, nodes] : tooth_nodes) {
    bool exclusive = false;
    for (int n : nodes) exclusive |= node_teeth[n].size() == 1;
    EXPECT_TRUE(exclusive) << "tooth " << tooth;
  }
}

TEST(Skeletonize, DeterministicAndJsonRoundTrip) {
  const TriMesh m = synth_tooth_row(3, 5, 0.0);
  const Skeleton a = skeletonize(m), b = skeletonize(m);
  EXPECT_EQ(skeleton_to_json(a), skeleton_to_json(b));
  const Skeleton back = skeleton_from_json(skeleton_to_json(a));
  EXPECT_EQ(back.edges, a.edges);
  EXPECT_EQ(back.vertex_owner, a.vertex_owner);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(back.nodes[i].position, a.nodes[i].position);
    EXPECT_EQ(back.nodes[i].radius, a.nodes[i].radius);
  }
}

TEST(Skeletonize, RigidEquivariance) {
  const TriMesh m = synth_tooth_row(4, 6, 0.0);
  const Skeleton base = skeletonize(m);
  Rng rng(11);
  for (int trial = 0; trial < 2; ++trial) {
    const RigidTransform t = fixtures::random_rigid(rng);
    const Skeleton moved = skeletonize(apply_transform(m, t));
    ASSERT_EQ(moved.edges, base.edges);
    ASSERT_EQ(moved.vertex_owner, base.vertex_owner);
    for (std::size_t i = 0; i < base.size(); ++i)
      EXPECT_LT((moved.nodes[i].position - t.apply(base.nodes[i].position)).norm(), 1e-3);
  }
}

TEST(Skeletonize, OwnershipPartitionsVertices) {
  const TriMesh m = synth_tooth_row(5, 4, 0.0);
  const Skeleton s = skeletonize(m);
  ASSERT_EQ(s.vertex_owner.size(), m.vertex_count());
  std::vector<int> owned(s.size(), 0);
  for (int o : s.vertex_owner) {
    ASSERT_GE(o, 0);
    ASSERT_LT(o, static_cast<int>(s.size()));
    ++owned[o];
  }
  for (int c : owned) EXPECT_GT(c, 0);
}
