#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "skelfuse/mesh.hpp"

namespace skelfuse {

struct Camera {
  Vec3 eye = Vec3::Zero();
  Vec3 look_at = Vec3::UnitX();
  Vec3 up = Vec3::UnitZ();
  double fov_y = 0.8726646259971648;  // 50 degrees
  int width = 256;
  int height = 256;
  double near = 0.1;
  double far = 10.0;

  /// Throws ArgumentError on a degenerate frame, fov outside (0, pi),
  /// non-positive resolution or near/far ordering.
  void check() const;

  Vec3 forward() const;
  Vec3 right() const;
  Vec3 true_up() const;
  /// Focal length in pixels.
  double focal() const;
};

/// Per-pixel render targets, row-major with row 0 at the top.
/// face_id == -1 exactly where depth == +inf.
struct FrameBuffer {
  int width = 0;
  int height = 0;
  std::vector<std::int32_t> face_id;
  std::vector<float> depth;      // view-space depth along the camera axis
  std::vector<float> intensity;  // Lambertian headlight shading in [0, 1]

  FrameBuffer() = default;
  FrameBuffer(int w, int h)
      : width(w),
        height(h),
        face_id(static_cast<std::size_t>(w) * h, -1),
        depth(static_cast<std::size_t>(w) * h, std::numeric_limits<float>::infinity()),
        intensity(static_cast<std::size_t>(w) * h, 0.0f) {}

  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
};

struct ViewSet {
  std::vector<Camera> cameras;
  std::vector<FrameBuffer> frames;
  std::size_t size() const { return cameras.size(); }
};

struct RingOptions {
  int resolution = 256;
  double fov_y = 0.8726646259971648;
};

/// Cameras evenly spaced in azimuth at each elevation, aimed at the vertex
/// centroid from 2.5x the bounding-sphere radius. Azimuth 0 at elevation 0
/// sits on +x. Ordered elevation-major. Throws ArgumentError if n_views < 1.
std::vector<Camera> camera_ring(const TriMesh& mesh, int n_views, std::span<const double> elevations,
                                const RingOptions& options = {});

/// Perspective z-buffer rasterisation with back-face culling and the
/// top-left fill rule. Triangles with a vertex at or in front of the near
/// plane are skipped. Equal depths keep the lower face index.
FrameBuffer rasterize(const TriMesh& mesh, const Camera& cam);

ViewSet render_views(const TriMesh& mesh, std::vector<Camera> cameras, int threads = 1);

struct Projection {
  Eigen::Vector2d pixel;  // continuous; pixel (x, y) covers [x, x+1) x [y, y+1)
  double depth;
};

/// std::nullopt when the point is behind the near plane.
std::optional<Projection> project_point(const Camera& cam, const Vec3& p);

/// True iff p projects inside the frame and its depth is at most the
/// buffer depth at floor(pixel) + radius + eps_z.
bool node_visible(const Camera& cam, const FrameBuffer& fb, const Vec3& p, double radius,
                  double eps_z);

/// Writes manifest.json, one intensity PNG and one little-endian sidecar
/// (face_id int32, depth float32, intensity float32; row-major) per view.
void save_views(const ViewSet& views, const std::filesystem::path& dir);
ViewSet load_views(const std::filesystem::path& dir);

/// 8-bit greyscale PNG.
void write_png_gray(const std::filesystem::path& path, int width, int height,
                    std::span<const std::uint8_t> pixels);

}  // namespace skelfuse
