#include <gtest/gtest.h>

#include <filesystem>
#include <numbers>

#include "ray_oracle.hpp"
#include "skelfuse/errors.hpp"
#include "skelfuse/render.hpp"
#include "skelfuse/synth.hpp"
#include "test_meshes.hpp"

using namespace skelfuse;

namespace {

Camera looking_down_x(int res = 32) {
  Camera c;
  c.eye = Vec3(-3, 0, 0);
  c.look_at = Vec3::Zero();
  c.up = Vec3::UnitZ();
  c.width = c.height = res;
  c.near = 0.1;
  c.far = 10.0;
  return c;
}

TriMesh facing_triangle(double x, double scale) {
  TriMesh m;
  // Counter-clockwise as seen from -x.
  m.vertices = {Vec3(x, -scale, -scale), Vec3(x, 0, scale), Vec3(x, scale, -scale)};
  m.faces = {{0, 1, 2}};
  return m;
}

}  // namespace

TEST(CameraRing, SingleViewOnPositiveX) {
  const TriMesh m = fixtures::icosphere(1);
  const std::vector<double> elev{0.0};
  const auto cams = camera_ring(m, 1, elev);
  ASSERT_EQ(cams.size(), 1u);
  const BoundingSphere s = bounding_sphere(m);
  EXPECT_NEAR(cams[0].eye.x(), s.center.x() + 2.5 * s.radius, 1e-12);
  EXPECT_NEAR(cams[0].eye.y(), s.center.y(), 1e-12);
  EXPECT_NEAR(cams[0].eye.z(), s.center.z(), 1e-12);
}

TEST(CameraRing, QuarterTurnAzimuths) {
  const TriMesh m = fixtures::icosphere(1);
  const std::vector<double> elev{0.0};
  const auto cams = camera_ring(m, 4, elev);
  for (std::size_t i = 0; i + 1 < cams.size(); ++i) {
    const double a0 = std::atan2(cams[i].eye.y(), cams[i].eye.x());
    const double a1 = std::atan2(cams[i + 1].eye.y(), cams[i + 1].eye.x());
    EXPECT_NEAR(std::remainder(a1 - a0, 2 * std::numbers::pi), std::numbers::pi / 2, 1e-9);
  }
}

TEST(CameraRing, TwoElevationsEqualDistance) {
  const TriMesh m = synth_tooth_row(1, 4, 0.0);
  const std::vector<double> elev{-std::numbers::pi / 6, std::numbers::pi / 6};
  const auto cams = camera_ring(m, 8, elev);
  ASSERT_EQ(cams.size(), 16u);
  const BoundingSphere s = bounding_sphere(m);
  for (const auto& c : cams) EXPECT_NEAR((c.eye - s.center).norm(), 2.5 * s.radius, 1e-9);
}

TEST(CameraRing, RejectsZeroViews) {
  const std::vector<double> elev{0.0};
  EXPECT_THROW(camera_ring(fixtures::tetrahedron(), 0, elev), ArgumentError);
}

TEST(Rasterize, CentredTriangleCoversCentre) {
  const Camera c = looking_down_x();
  const FrameBuffer fb = rasterize(facing_triangle(0.0, 0.5), c);
  EXPECT_EQ(fb.face_id[fb.index(16, 16)], 0);
}

TEST(Rasterize, BackFacingTriangleIsCulled) {
  TriMesh m = facing_triangle(0.0, 0.5);
  m.faces = {{0, 2, 1}};
  const FrameBuffer fb = rasterize(m, looking_down_x());
  for (int id : fb.face_id) EXPECT_EQ(id, -1);
}

TEST(Rasterize, EmptyMeshIsBackground) {
  const FrameBuffer fb = rasterize(TriMesh{}, looking_down_x());
  for (std::size_t i = 0; i < fb.face_id.size(); ++i) {
    EXPECT_EQ(fb.face_id[i], -1);
    EXPECT_TRUE(std::isinf(fb.depth[i]));
  }
}

TEST(Rasterize, NearerOfTwoCoaxialTrianglesWins) {
  TriMesh m = facing_triangle(0.5, 0.4);  // farther, smaller
  const TriMesh near = facing_triangle(-0.5, 0.6);
  m.vertices.insert(m.vertices.end(), near.vertices.begin(), near.vertices.end());
  m.faces.push_back({3, 4, 5});
  const Camera c = looking_down_x(48);
  const FrameBuffer fb = rasterize(m, c);
  std::size_t covered = 0;
  for (int id : fb.face_id) {
    EXPECT_NE(id, 0);
    covered += id == 1;
  }
  EXPECT_GT(covered, 0u);
  const auto r = fixtures::ray_cast_compare(m, c, fb);
  EXPECT_EQ(r.mismatches, 0u);
}

TEST(Rasterize, MatchesRayCasterOnRandomSoups) {
  Rng rng(5);
  for (int trial = 0; trial < 4; ++trial) {
    const TriMesh m = fixtures::random_soup(rng, 60);
    const std::vector<double> elev{0.4};
    RingOptions opt;
    opt.resolution = 40;
    for (const Camera& c : camera_ring(m, 3, elev, opt)) {
      const auto r = fixtures::ray_cast_compare(m, c, rasterize(m, c));
      EXPECT_EQ(r.mismatches, 0u);
      EXPECT_GT(r.compared, 0u);
    }
  }
}

TEST(Rasterize, DepthAndFaceIdAgree) {
  const TriMesh m = synth_tooth_row(2, 4, 0.0);
  const std::vector<double> elev{0.5};
  RingOptions opt;
  opt.resolution = 64;
  const ViewSet v = render_views(m, camera_ring(m, 2, elev, opt));
  for (const auto& fb : v.frames)
    for (std::size_t i = 0; i < fb.face_id.size(); ++i) {
      EXPECT_EQ(fb.face_id[i] == -1, std::isinf(fb.depth[i]));
      EXPECT_GE(fb.intensity[i], 0.0f);
      EXPECT_LE(fb.intensity[i], 1.0f);
    }
}

TEST(Rasterize, ThreadCountDoesNotChangeBuffers) {
  const TriMesh m = synth_tooth_row(3, 6, 0.0);
  const std::vector<double> elev{0.3, 0.9};
  RingOptions opt;
  opt.resolution = 64;
  const ViewSet a = render_views(m, camera_ring(m, 4, elev, opt), 1);
  const ViewSet b = render_views(m, camera_ring(m, 4, elev, opt), 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.frames[i].face_id, b.frames[i].face_id);
    EXPECT_EQ(a.frames[i].depth, b.frames[i].depth);
    EXPECT_EQ(a.frames[i].intensity, b.frames[i].intensity);
  }
}

TEST(Projection, CentroidProjectsToImageCentre) {
  const TriMesh m = synth_tooth_row(1, 6, 0.0);
  const std::vector<double> elev{0.5};
  for (const Camera& c : camera_ring(m, 5, elev)) {
    const auto p = project_point(c, bounding_sphere(m).center);
    ASSERT_TRUE(p);
    EXPECT_NEAR(p->pixel.x(), c.width / 2.0, 0.5);
    EXPECT_NEAR(p->pixel.y(), c.height / 2.0, 0.5);
  }
}

TEST(Projection, EyeIsBehind) {
  const Camera c = looking_down_x();
  EXPECT_FALSE(project_point(c, c.eye));
}

TEST(Projection, HandPinhole) {
  Camera c = looking_down_x(100);
  c.fov_y = std::numbers::pi / 2;  // focal = 50 px
  // Point 4 units ahead, 1 to the camera's right (-y here), 2 up.
  const auto p = project_point(c, Vec3(1, -1, 2));
  ASSERT_TRUE(p);
  EXPECT_NEAR(p->depth, 4.0, 1e-12);
  EXPECT_NEAR(p->pixel.x(), 50 + 50 * 1.0 / 4.0, 1e-9);
  EXPECT_NEAR(p->pixel.y(), 50 - 50 * 2.0 / 4.0, 1e-9);
}

TEST(Visibility, NodeOnVisibleFaceAndBehindWall) {
  const TriMesh tri = facing_triangle(0.0, 0.5);
  const Camera c = looking_down_x();
  const FrameBuffer fb = rasterize(tri, c);
  const Vec3 centroid = (tri.vertices[0] + tri.vertices[1] + tri.vertices[2]) / 3.0;
  EXPECT_TRUE(node_visible(c, fb, centroid, 0.0, 1e-6));
  // A wall in front hides a node behind it.
  const TriMesh wall = facing_triangle(-1.0, 3.0);
  const FrameBuffer walled = rasterize(wall, c);
  EXPECT_FALSE(node_visible(c, walled, Vec3(0.5, 0, 0), 0.0, 1e-6));
  EXPECT_FALSE(node_visible(c, fb, Vec3(0, 50, 0), 0.0, 1e-6));
}

TEST(ViewIo, SidecarRoundTripIsExact) {
  const TriMesh m = synth_tooth_row(1, 3, 0.0);
  const std::vector<double> elev{0.5};
  RingOptions opt;
  opt.resolution = 32;
  const ViewSet v = render_views(m, camera_ring(m, 2, elev, opt));
  const auto dir = std::filesystem::temp_directory_path() / "skelfuse_unit" / "views";
  std::filesystem::remove_all(dir);
  save_views(v, dir);
  const ViewSet back = load_views(dir);
  ASSERT_EQ(back.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(back.frames[i].face_id, v.frames[i].face_id);
    EXPECT_EQ(back.frames[i].depth, v.frames[i].depth);
    EXPECT_EQ(back.frames[i].intensity, v.frames[i].intensity);
    EXPECT_EQ(back.cameras[i].eye, v.cameras[i].eye);
    EXPECT_EQ(back.cameras[i].fov_y, v.cameras[i].fov_y);
  }
}
