#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <utility>

#include "skelfuse/mesh.hpp"
#include "skelfuse/rng.hpp"

namespace skelfuse::fixtures {

inline TriMesh tetrahedron() {
  TriMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  m.faces = {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3}};
  return m;
}

/// Closed cylinder along z with fan caps, outward winding.
inline TriMesh cylinder(int segments, int rings, double radius, double height) {
  TriMesh m;
  for (int r = 0; r <= rings; ++r)
    for (int s = 0; s < segments; ++s) {
      const double a = 2.0 * std::numbers::pi * s / segments;
      m.vertices.emplace_back(radius * std::cos(a), radius * std::sin(a), height * r / rings);
    }
  auto at = [&](int r, int s) { return r * segments + (s % segments); };
  for (int r = 0; r < rings; ++r)
    for (int s = 0; s < segments; ++s) {
      m.faces.push_back({at(r, s), at(r, s + 1), at(r + 1, s + 1)});
      m.faces.push_back({at(r, s), at(r + 1, s + 1), at(r + 1, s)});
    }
  const int bottom = static_cast<int>(m.vertices.size());
  m.vertices.emplace_back(0, 0, 0);
  const int top = bottom + 1;
  m.vertices.emplace_back(0, 0, height);
  for (int s = 0; s < segments; ++s) {
    m.faces.push_back({bottom, at(0, s + 1), at(0, s)});
    m.faces.push_back({top, at(rings, s), at(rings, s + 1)});
  }
  return m;
}

/// Subdivided icosahedron on the unit sphere.
inline TriMesh icosphere(int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  TriMesh m;
  for (const Vec3& v : {Vec3(-1, t, 0), Vec3(1, t, 0), Vec3(-1, -t, 0), Vec3(1, -t, 0), Vec3(0, -1, t),
                        Vec3(0, 1, t), Vec3(0, -1, -t), Vec3(0, 1, -t), Vec3(t, 0, -1), Vec3(t, 0, 1),
                        Vec3(-t, 0, -1), Vec3(-t, 0, 1)})
    m.vertices.push_back(v.normalized());
  m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
             {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int it = 0; it < subdivisions; ++it) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      if (auto f = mid.find(key); f != mid.end()) return f->second;
      m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
      return mid[key] = static_cast<int>(m.vertices.size()) - 1;
    };
    std::vector<Face> next;
    for (const Face& f : m.faces) {
      const int ab = midpoint(f[0], f[1]), bc = midpoint(f[1], f[2]), ca = midpoint(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    m.faces = std::move(next);
  }
  return m;
}

/// Random triangle soup (not necessarily manifold) inside a unit cube,
/// used by the rendering oracle.
inline TriMesh random_soup(Rng& rng, int faces) {
  TriMesh m;
  for (int f = 0; f < faces; ++f) {
    const Vec3 c(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8));
    const int base = static_cast<int>(m.vertices.size());
    for (int k = 0; k < 3; ++k)
      m.vertices.push_back(c + Vec3(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)));
    m.faces.push_back({base, base + 1, base + 2});
  }
  return m;
}

inline RigidTransform random_rigid(Rng& rng) {
  const Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  return RigidTransform::from_axis_angle(axis.normalized(), rng.uniform(-std::numbers::pi, std::numbers::pi),
                                         Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)));
}

}  // namespace skelfuse::fixtures
