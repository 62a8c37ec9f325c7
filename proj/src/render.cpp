#include "skelfuse/render.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

#include "skelfuse/errors.hpp"

namespace skelfuse {

void Camera::check() const {
  if (width <= 0 || height <= 0) throw ArgumentError("camera resolution must be positive");
  if (!(fov_y > 0.0 && fov_y < std::numbers::pi)) throw ArgumentError("fov_y must be in (0, pi)");
  if (!(near > 0.0 && near < far)) throw ArgumentError("camera needs 0 < near < far");
  const Vec3 dir = look_at - eye;
  if (dir.norm() == 0.0) throw ArgumentError("camera eye coincides with look_at");
  if (dir.normalized().cross(up.normalized()).norm() < 1e-9)
    throw ArgumentError("camera up is parallel to the view direction");
}

Vec3 Camera::forward() const { return (look_at - eye).normalized(); }
Vec3 Camera::right() const { return forward().cross(up).normalized(); }
Vec3 Camera::true_up() const { return right().cross(forward()); }
double Camera::focal() const { return 0.5 * height / std::tan(0.5 * fov_y); }

std::vector<Camera> camera_ring(const TriMesh& mesh, int n_views, std::span<const double> elevations,
                                const RingOptions& options) {
  if (n_views < 1) throw ArgumentError("n_views must be at least 1");
  if (elevations.empty()) throw ArgumentError("at least one elevation is required");
  const BoundingSphere sphere = bounding_sphere(mesh);
  const double radius = sphere.radius > 0.0 ? sphere.radius : 1.0;
  const double distance = 2.5 * radius;
  std::vector<Camera> cams;
  for (double elev : elevations)
    for (int i = 0; i < n_views; ++i) {
      const double az = 2.0 * std::numbers::pi * i / n_views;
      Camera cam;
      cam.look_at = sphere.center;
      cam.eye = sphere.center + distance * Vec3(std::cos(elev) * std::cos(az),
                                                std::cos(elev) * std::sin(az), std::sin(elev));
      cam.up = Vec3::UnitZ();
      cam.fov_y = options.fov_y;
      cam.width = cam.height = options.resolution;
      cam.near = 0.1 * radius;
      cam.far = 5.0 * radius;
      cam.check();
      cams.push_back(cam);
    }
  return cams;
}

namespace {

struct ScreenVertex {
  double x, y, z;  // pixel coordinates, view depth
};

// Edge function; positive on the interior side for counter-clockwise
// (positive-area) triangles in y-down pixel space.
inline double edge(const ScreenVertex& a, const ScreenVertex& b, double px, double py) {
  return (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
}

inline bool top_left(const ScreenVertex& a, const ScreenVertex& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  return (dy == 0.0 && dx > 0.0) || dy < 0.0;
}

}  // namespace

FrameBuffer rasterize(const TriMesh& mesh, const Camera& cam) {
  cam.check();
  FrameBuffer fb(cam.width, cam.height);
  const Vec3 fwd = cam.forward(), rgt = cam.right(), up = cam.true_up();
  const double f = cam.focal();
  const double cx0 = 0.5 * cam.width, cy0 = 0.5 * cam.height;

  for (std::size_t fi = 0; fi < mesh.faces.size(); ++fi) {
    const Face& t = mesh.faces[fi];
    const Vec3& p0 = mesh.vertices[t[0]];
    const Vec3 normal = (mesh.vertices[t[1]] - p0).cross(mesh.vertices[t[2]] - p0);
    if (!(normal.dot(cam.eye - p0) > 0.0)) continue;  // back-facing or degenerate

    ScreenVertex sv[3];
    bool clipped = false;
    for (int k = 0; k < 3; ++k) {
      const Vec3 d = mesh.vertices[t[k]] - cam.eye;
      const double z = d.dot(fwd);
      if (z <= cam.near) {
        clipped = true;
        break;
      }
      sv[k] = {cx0 + f * d.dot(rgt) / z, cy0 - f * d.dot(up) / z, z};
    }
    if (clipped) continue;
    double area = edge(sv[0], sv[1], sv[2].x, sv[2].y);
    if (area == 0.0) continue;
    if (area < 0.0) {
      std::swap(sv[1], sv[2]);
      area = -area;
    }
    const Vec3 unit_normal = normal.normalized();

    const int x_lo = std::max(0, static_cast<int>(std::floor(std::min({sv[0].x, sv[1].x, sv[2].x}))));
    const int x_hi = std::min(cam.width - 1, static_cast<int>(std::ceil(std::max({sv[0].x, sv[1].x, sv[2].x}))));
    const int y_lo = std::max(0, static_cast<int>(std::floor(std::min({sv[0].y, sv[1].y, sv[2].y}))));
    const int y_hi = std::min(cam.height - 1, static_cast<int>(std::ceil(std::max({sv[0].y, sv[1].y, sv[2].y}))));
    const bool tl0 = top_left(sv[1], sv[2]), tl1 = top_left(sv[2], sv[0]), tl2 = top_left(sv[0], sv[1]);

    for (int y = y_lo; y <= y_hi; ++y) {
      const double py = y + 0.5;
      for (int x = x_lo; x <= x_hi; ++x) {
        const double px = x + 0.5;
        const double w0 = edge(sv[1], sv[2], px, py);
        const double w1 = edge(sv[2], sv[0], px, py);
        const double w2 = edge(sv[0], sv[1], px, py);
        if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
        if ((w0 == 0.0 && !tl0) || (w1 == 0.0 && !tl1) || (w2 == 0.0 && !tl2)) continue;
        const double inv_z = (w0 / sv[0].z + w1 / sv[1].z + w2 / sv[2].z) / area;
        const double z = 1.0 / inv_z;
        if (z > cam.far) continue;
        const std::size_t idx = fb.index(x, y);
        if (!(z < fb.depth[idx])) continue;
        // Headlight: shade against the pixel ray.
        const Vec3 dir = (fwd + ((px - cx0) / f) * rgt - ((py - cy0) / f) * up).normalized();
        fb.depth[idx] = static_cast<float>(z);
        fb.face_id[idx] = static_cast<std::int32_t>(fi);
        fb.intensity[idx] = static_cast<float>(std::clamp(-unit_normal.dot(dir), 0.0, 1.0));
      }
    }
  }
  return fb;
}

ViewSet render_views(const TriMesh& mesh, std::vector<Camera> cameras, int threads) {
  ViewSet views;
  views.cameras = std::move(cameras);
  views.frames.resize(views.cameras.size());
  const std::size_t n = views.cameras.size();
  const std::size_t workers = std::clamp<std::size_t>(threads < 1 ? 1 : threads, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) views.frames[i] = rasterize(mesh, views.cameras[i]);
    return views;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) views.frames[i] = rasterize(mesh, views.cameras[i]);
    });
  for (auto& th : pool) th.join();
  return views;
}

std::optional<Projection> project_point(const Camera& cam, const Vec3& p) {
  const Vec3 d = p - cam.eye;
  const double z = d.dot(cam.forward());
  if (z <= cam.near) return std::nullopt;
  const double f = cam.focal();
  return Projection{{0.5 * cam.width + f * d.dot(cam.right()) / z,
                     0.5 * cam.height - f * d.dot(cam.true_up()) / z},
                    z};
}

bool node_visible(const Camera& cam, const FrameBuffer& fb, const Vec3& p, double radius,
                  double eps_z) {
  const auto proj = project_point(cam, p);
  if (!proj) return false;
  const double fx = std::floor(proj->pixel.x()), fy = std::floor(proj->pixel.y());
  if (fx < 0.0 || fy < 0.0 || fx >= fb.width || fy >= fb.height) return false;
  const std::size_t idx = fb.index(static_cast<int>(fx), static_cast<int>(fy));
  return proj->depth <= static_cast<double>(fb.depth[idx]) + radius + eps_z;
}

}  // namespace skelfuse
