#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "skelfuse/errors.hpp"
#include "skelfuse/mesh_io.hpp"
#include "skelfuse/synth.hpp"
#include "test_meshes.hpp"

using namespace skelfuse;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "skelfuse_unit";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(MeshIo, TetrahedronObj) {
  const TriMesh m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n");
  EXPECT_EQ(m.vertex_count(), 4u);
  EXPECT_EQ(m.face_count(), 4u);
  EXPECT_TRUE(validate(m).watertight());
}

TEST(MeshIo, OutOfRangeIndexIsTopologyError) {
  EXPECT_THROW(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 9\n"), TopologyError);
}

TEST(MeshIo, LabeledPlyRoundTrip) {
  TriMesh m = fixtures::tetrahedron();
  const std::vector<int> labels{0, 3, 7, 1};
  for (PlyEncoding enc : {PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian}) {
    const fs::path p = temp_path(enc == PlyEncoding::Ascii ? "tet_ascii.ply" : "tet_bin.ply");
    export_labeled_ply(m, labels, p, enc);
    const TriMesh back = load_mesh(p);
    ASSERT_TRUE(back.face_labels);
    EXPECT_EQ(*back.face_labels, labels);
    EXPECT_EQ(back.faces, m.faces);
    for (std::size_t i = 0; i < m.vertices.size(); ++i) EXPECT_EQ(back.vertices[i], m.vertices[i]);
  }
}

TEST(MeshIo, LabelLengthMismatch) {
  const std::vector<int> labels{0, 1};
  EXPECT_THROW(export_labeled_ply(fixtures::tetrahedron(), labels, temp_path("bad.ply")), LengthMismatch);
}

TEST(MeshIo, AllZeroLabelsUsePaletteEntryZero) {
  const fs::path p = temp_path("zero.ply");
  const std::vector<int> labels(4, 0);
  export_labeled_ply(fixtures::tetrahedron(), labels, p, PlyEncoding::Ascii);
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line) && line != "end_header") {
  }
  for (int i = 0; i < 4; ++i) std::getline(in, line);  // vertices
  const auto rgb = label_color(0);
  for (int f = 0; f < 4; ++f) {
    std::getline(in, line);
    std::istringstream ss(line);
    int n, a, b, c, label, r, g, bl;
    ss >> n >> a >> b >> c >> label >> r >> g >> bl;
    EXPECT_EQ(label, 0);
    EXPECT_EQ(r, rgb[0]);
    EXPECT_EQ(g, rgb[1]);
    EXPECT_EQ(bl, rgb[2]);
  }
}

TEST(Validate, OrientationInconsistency) {
  TriMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(1, 1, 0)};
  m.faces = {{0, 1, 2}, {1, 2, 3}};  // both traverse 1->2
  EXPECT_EQ(validate(m).orientation_inconsistencies, 1u);
}

TEST(Validate, NonManifoldFan) {
  TriMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, -1, 0), Vec3(0, 0, 1)};
  m.faces = {{0, 1, 2}, {1, 0, 3}, {0, 1, 4}};
  EXPECT_EQ(validate(m).non_manifold_edges, 1u);
}

TEST(Validate, ClosedShapesAreWatertight) {
  EXPECT_TRUE(validate(fixtures::tetrahedron()).watertight());
  EXPECT_TRUE(validate(fixtures::cylinder(12, 4, 0.5, 2.0)).watertight());
  EXPECT_TRUE(validate(fixtures::icosphere(2)).watertight());
}

TEST(Synth, DeterministicBytes) {
  const TriMesh a = synth_tooth_row(1, 8, 0.0), b = synth_tooth_row(1, 8, 0.0);
  export_labeled_ply(a, *a.face_labels, temp_path("row_a.ply"));
  export_labeled_ply(b, *b.face_labels, temp_path("row_b.ply"));
  EXPECT_EQ(read_bytes(temp_path("row_a.ply")), read_bytes(temp_path("row_b.ply")));
}

TEST(Synth, EightDistinctToothLabels) {
  const TriMesh m = synth_tooth_row(1, 8, 0.0);
  std::set<int> teeth;
  for (int l : *m.face_labels)
    if (l != 0) teeth.insert(l);
  EXPECT_EQ(teeth.size(), 8u);
}

TEST(Synth, NoisyRowIsWatertight) {
  const ValidationReport r = validate(synth_tooth_row(2, 4, 0.01));
  EXPECT_EQ(r.non_manifold_edges, 0u);
  EXPECT_TRUE(r.watertight());
}

TEST(Synth, RejectsToothCountOutOfRange) {
  EXPECT_THROW(synth_tooth_row(0, 1, 0.0), ArgumentError);
  EXPECT_THROW(synth_tooth_row(0, 17, 0.0), ArgumentError);
}

TEST(Transform, IdentityAndTranslation) {
  const TriMesh m = fixtures::tetrahedron();
  const TriMesh same = apply_transform(m, RigidTransform::identity());
  for (std::size_t i = 0; i < m.vertices.size(); ++i) EXPECT_EQ(same.vertices[i], m.vertices[i]);
  const TriMesh moved = apply_transform(m, RigidTransform(Mat3::Identity(), Vec3(1, 0, 0)));
  for (std::size_t i = 0; i < m.vertices.size(); ++i) EXPECT_DOUBLE_EQ(moved.vertices[i].x(), m.vertices[i].x() + 1.0);
}

TEST(Transform, QuarterTurnFourTimes) {
  const TriMesh m = fixtures::tetrahedron();
  const RigidTransform q = RigidTransform::from_axis_angle(Vec3::UnitZ(), std::numbers::pi / 2);
  TriMesh r = m;
  for (int i = 0; i < 4; ++i) r = apply_transform(r, q);
  for (std::size_t i = 0; i < m.vertices.size(); ++i) EXPECT_LT((r.vertices[i] - m.vertices[i]).norm(), 1e-6);
}

TEST(Transform, RejectsNonRotation) {
  Mat3 reflect = Mat3::Identity();
  reflect(0, 0) = -1.0;
  EXPECT_THROW(RigidTransform(reflect, Vec3::Zero()), ArgumentError);
}

TEST(Mesh, NormalizeUnitSphere) {
  const TriMesh m = normalize_unit_sphere(fixtures::cylinder(10, 3, 2.0, 5.0));
  const BoundingSphere s = bounding_sphere(m);
  EXPECT_LT(s.center.norm(), 1e-12);
  EXPECT_NEAR(s.radius, 1.0, 1e-12);
}

TEST(Mesh, AdjacencyAndComponents) {
  const TriMesh m = fixtures::icosphere(1);
  for (const auto& n : face_adjacency(m)) EXPECT_EQ(n.size(), 3u);
  EXPECT_EQ(connected_components(m), 1u);
  EXPECT_EQ(unique_edges(m).size(), m.vertex_count() + m.face_count() - 2);  // Euler, genus 0
}
