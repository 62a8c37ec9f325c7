#include "skelfuse/synth.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "skelfuse/errors.hpp"
#include "skelfuse/rng.hpp"

namespace skelfuse {
namespace {

constexpr double kPi = std::numbers::pi;

struct Bump {
  double center_u;
  double half_length;  // arc length
  double half_angle;   // radians around the cross-section, centred on the top
  double height;
};

}  // namespace

TriMesh synth_tooth_row(std::uint64_t seed, int n_teeth, double noise,
                        SynthResolution resolution) {
  if (n_teeth < 2 || n_teeth > 16)
    throw ArgumentError("n_teeth must be in [2, 16], got " + std::to_string(n_teeth));
  if (!(noise >= 0.0)) throw ArgumentError("noise must be non-negative");
  if (resolution.rings < 8 || resolution.segments < 8)
    throw ArgumentError("synthetic resolution too coarse");

  Rng rng = Rng::derive(seed, "synth_tooth_row");
  auto jitter = [&](double amount) { return 1.0 + amount * rng.uniform(-1.0, 1.0); };

  const double arch_radius = jitter(0.04);
  const double span = (150.0 * kPi / 180.0) * jitter(0.03);
  const double arch_length = arch_radius * span;
  const double half_width = 0.15 * jitter(0.05);
  const double half_height = 0.11 * jitter(0.05);
  const double cap_u = half_width / arch_length;

  // Teeth occupy the straight part of the tube, leaving a gum margin
  // before each cap.
  const double margin_u = 0.05 / arch_length;
  const double lo = cap_u + margin_u, hi = 1.0 - cap_u - margin_u;
  const double pitch_u = (hi - lo) / n_teeth;
  const double pitch = pitch_u * arch_length;
  std::vector<Bump> bumps;
  for (int k = 0; k < n_teeth; ++k) {
    Bump b;
    b.center_u = lo + (k + 0.5) * pitch_u + 0.04 * pitch_u * rng.uniform(-1.0, 1.0);
    b.half_length = 0.33 * pitch * jitter(0.06);
    b.half_angle = 1.0 * jitter(0.08);
    b.height = std::clamp(0.45 * pitch, 0.06, 0.17) * jitter(0.12);
    bumps.push_back(b);
  }

  auto bump_rho = [&](const Bump& b, double u, double theta) {
    const double s = (u - b.center_u) * arch_length / b.half_length;
    const double t = (theta - 0.5 * kPi) / b.half_angle;
    return std::sqrt(s * s + t * t);
  };

  const int rings = resolution.rings, segs = resolution.segments;
  TriMesh mesh;
  std::vector<double> vu, vtheta;  // parameters per vertex
  auto centre = [&](double u) {
    const double phi = 0.5 * kPi + span * (u - 0.5);
    return Vec3(arch_radius * std::cos(phi), arch_radius * std::sin(phi), 0.0);
  };
  auto outward = [&](double u) {
    const double phi = 0.5 * kPi + span * (u - 0.5);
    return Vec3(std::cos(phi), std::sin(phi), 0.0);
  };
  const Vec3 up(0.0, 0.0, 1.0);

  mesh.vertices.push_back(centre(0.0));
  vu.push_back(0.0);
  vtheta.push_back(0.0);
  for (int i = 1; i <= rings; ++i) {
    const double u = static_cast<double>(i) / (rings + 1);
    const double d = std::min(u, 1.0 - u);
    const double taper = d < cap_u ? std::sqrt(1.0 - (1.0 - d / cap_u) * (1.0 - d / cap_u)) : 1.0;
    const Vec3 c = centre(u), n = outward(u);
    for (int j = 0; j < segs; ++j) {
      const double theta = 2.0 * kPi * j / segs;
      Vec3 p = c + taper * (half_width * std::cos(theta) * n + half_height * std::sin(theta) * up);
      double displacement = 0.0;
      for (const Bump& b : bumps) {
        const double rho = bump_rho(b, u, theta);
        if (rho < 1.0) displacement += b.height * std::sqrt(1.0 - rho * rho);
      }
      if (displacement > 0.0) {
        const Vec3 e = (half_height * std::cos(theta) * n + half_width * std::sin(theta) * up).normalized();
        p += displacement * e;
      }
      mesh.vertices.push_back(p);
      vu.push_back(u);
      vtheta.push_back(theta);
    }
  }
  mesh.vertices.push_back(centre(1.0));
  vu.push_back(1.0);
  vtheta.push_back(0.0);
  const int last = static_cast<int>(mesh.vertices.size()) - 1;

  auto vid = [&](int ring, int seg) { return 1 + (ring - 1) * segs + (seg % segs); };
  for (int j = 0; j < segs; ++j) mesh.faces.push_back({0, vid(1, j + 1), vid(1, j)});
  for (int i = 1; i < rings; ++i)
    for (int j = 0; j < segs; ++j) {
      mesh.faces.push_back({vid(i, j), vid(i, j + 1), vid(i + 1, j + 1)});
      mesh.faces.push_back({vid(i, j), vid(i + 1, j + 1), vid(i + 1, j)});
    }
  for (int j = 0; j < segs; ++j) mesh.faces.push_back({last, vid(rings, j), vid(rings, j + 1)});

  // Orient outward: flip everything if the enclosed signed volume is negative.
  double volume = 0.0;
  for (const Face& f : mesh.faces)
    volume += mesh.vertices[f[0]].dot(mesh.vertices[f[1]].cross(mesh.vertices[f[2]]));
  if (volume < 0.0)
    for (Face& f : mesh.faces) std::swap(f[1], f[2]);

  std::vector<int> labels(mesh.faces.size(), 0);
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const Face& t = mesh.faces[f];
    if (t[0] == 0 || t[0] == last || t[1] == 0 || t[1] == last || t[2] == 0 || t[2] == last) continue;
    const double u = (vu[t[0]] + vu[t[1]] + vu[t[2]]) / 3.0;
    const double theta = (vtheta[t[0]] + vtheta[t[1]] + vtheta[t[2]]) / 3.0;
    for (std::size_t k = 0; k < bumps.size(); ++k)
      if (bump_rho(bumps[k], u, theta) < 1.0) labels[f] = static_cast<int>(k) + 1;
  }
  mesh.face_labels = std::move(labels);

  if (noise > 0.0) {
    const std::vector<Vec3> normals = vertex_normals(mesh);
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v)
      mesh.vertices[v] += noise * rng.normal() * normals[v];
  }
  return mesh;
}

}  // namespace skelfuse
