#include "skelfuse/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <tuple>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "skelfuse/errors.hpp"

namespace skelfuse {
namespace {

constexpr double kMinCot = 1e-6;
constexpr double kMaxCot = 1e6;
constexpr double kCollapsedAreaRatio = 1e-6;

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

double cot(const Vec3& a, const Vec3& b) {
  const double s = a.cross(b).norm();
  const double c = a.dot(b);
  if (s <= 0.0) return kMaxCot;
  return c / s;
}

SparseMatrix cotangent_laplacian(const TriMesh& mesh, std::span<const Vec3> pos) {
  // Sum half-cotangents per undirected edge, then clamp.
  std::vector<std::tuple<int, int, double>> halves;
  halves.reserve(mesh.faces.size() * 3);
  for (const Face& t : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      const int i = t[k], j = t[(k + 1) % 3], o = t[(k + 2) % 3];
      const double w = 0.5 * cot(pos[i] - pos[o], pos[j] - pos[o]);
      halves.emplace_back(std::min(i, j), std::max(i, j), w);
    }
  std::sort(halves.begin(), halves.end());
  const auto n = static_cast<int>(pos.size());
  std::vector<Triplet> triplets;
  std::vector<double> diag(pos.size(), 0.0);
  for (std::size_t k = 0; k < halves.size();) {
    const int i = std::get<0>(halves[k]), j = std::get<1>(halves[k]);
    double w = 0.0;
    while (k < halves.size() && std::get<0>(halves[k]) == i && std::get<1>(halves[k]) == j)
      w += std::get<2>(halves[k++]);
    w = std::clamp(w, kMinCot, kMaxCot);
    triplets.emplace_back(i, j, w);
    triplets.emplace_back(j, i, w);
    diag[i] -= w;
    diag[j] -= w;
  }
  for (int i = 0; i < n; ++i) triplets.emplace_back(i, i, diag[i]);
  SparseMatrix lap(n, n);
  lap.setFromTriplets(triplets.begin(), triplets.end());
  return lap;
}

std::vector<double> one_ring_areas(const TriMesh& mesh, std::span<const Vec3> pos) {
  std::vector<double> area(pos.size(), 0.0);
  for (const Face& t : mesh.faces) {
    const double a = 0.5 * (pos[t[1]] - pos[t[0]]).cross(pos[t[2]] - pos[t[0]]).norm();
    for (int v : t) area[v] += a;
  }
  return area;
}

}  // namespace

std::vector<std::vector<int>> Skeleton::adjacency() const {
  std::vector<std::vector<int>> adj(nodes.size());
  for (const auto& e : edges) {
    adj[e[0]].push_back(e[1]);
    adj[e[1]].push_back(e[0]);
  }
  for (auto& list : adj) std::sort(list.begin(), list.end());
  return adj;
}

bool Skeleton::connected() const {
  if (nodes.empty()) return true;
  const auto adj = adjacency();
  std::vector<char> seen(nodes.size(), 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  std::size_t count = 1;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (int w : adj[v])
      if (!seen[w]) {
        seen[w] = 1;
        ++count;
        stack.push_back(w);
      }
  }
  return count == nodes.size();
}

std::vector<Vec3> contract(const TriMesh& mesh, const ContractionParams& params) {
  if (params.iterations < 1) throw ArgumentError("contraction needs at least one iteration");
  if (!(params.contraction_weight_growth > 1.0))
    throw ArgumentError("contraction_weight_growth must exceed 1");
  if (!(params.initial_attraction > 0.0)) throw ArgumentError("initial_attraction must be positive");
  check_topology(mesh);
  if (mesh.vertices.empty() || connected_components(mesh) != 1)
    throw NotConnected("contraction requires a connected mesh");

  const auto n = static_cast<Eigen::Index>(mesh.vertices.size());
  std::vector<Vec3> pos = mesh.vertices;
  const std::vector<double> initial_ring = one_ring_areas(mesh, pos);
  const double initial_area = surface_area(mesh, pos);
  double area = initial_area;
  double w_lap = std::sqrt(static_cast<double>(n));

  for (int it = 0; it < params.iterations; ++it) {
    // Fully collapsed cross-sections produce clamped, meaningless weights.
    if (area < kCollapsedAreaRatio * initial_area) break;
    const SparseMatrix lap = cotangent_laplacian(mesh, pos);
    const std::vector<double> ring = one_ring_areas(mesh, pos);

    Eigen::VectorXd w_attr2(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double ratio = ring[i] > 0.0 ? initial_ring[i] / ring[i] : kMaxCot;
      const double w = params.initial_attraction * std::sqrt(std::min(ratio, kMaxCot));
      w_attr2[i] = w * w;
    }
    SparseMatrix system = (w_lap * w_lap) * SparseMatrix(lap.transpose() * lap);
    for (Eigen::Index i = 0; i < n; ++i) system.coeffRef(i, i) += w_attr2[i];
    system.makeCompressed();

    Eigen::MatrixXd rhs(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) rhs.row(i) = w_attr2[i] * pos[i].transpose();

    Eigen::SimplicialLDLT<SparseMatrix> solver;
    solver.compute(system);
    if (solver.info() != Eigen::Success) throw SolveError("contraction system factorisation failed");
    const Eigen::MatrixXd x = solver.solve(rhs);
    if (solver.info() != Eigen::Success || !x.allFinite())
      throw SolveError("contraction system solve failed");

    std::vector<Vec3> next(pos.size());
    for (Eigen::Index i = 0; i < n; ++i) next[i] = x.row(i).transpose();
    const double next_area = surface_area(mesh, next);
    if (!(next_area <= 0.95 * area)) break;
    pos = std::move(next);
    area = next_area;
    w_lap *= params.contraction_weight_growth;
  }
  return pos;
}

Skeleton collapse_to_skeleton(const TriMesh& mesh, std::span<const Vec3> contracted,
                              double target_ratio) {
  if (contracted.size() != mesh.vertices.size())
    throw DimensionMismatch("contracted positions do not match the vertex count");
  if (!(target_ratio > 0.0 && target_ratio <= 1.0))
    throw ArgumentError("collapse target ratio must be in (0, 1]");
  const std::size_t n = mesh.vertices.size();
  const auto edges = unique_edges(mesh);

  double mean_edge = 0.0;
  for (const auto& e : edges) mean_edge += (mesh.vertices[e[0]] - mesh.vertices[e[1]]).norm();
  mean_edge = edges.empty() ? 1.0 : mean_edge / static_cast<double>(edges.size());
  const double quantum = 1e-7 * mean_edge;

  std::vector<Vec3> sum(contracted.begin(), contracted.end());
  std::vector<int> count(n, 1);
  std::vector<int> version(n, 0);
  std::vector<char> alive(n, 1);
  std::vector<int> parent(n);
  for (std::size_t i = 0; i < n; ++i) parent[i] = static_cast<int>(i);
  std::vector<std::vector<int>> adj = vertex_adjacency(mesh);

  struct Candidate {
    long long key;
    int a, b;
    int va, vb;
    bool operator>(const Candidate& o) const {
      return std::tie(key, a, b) > std::tie(o.key, o.a, o.b);
    }
  };
  std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> queue;
  auto push = [&](int a, int b) {
    if (a > b) std::swap(a, b);
    const Vec3 pa = sum[a] / count[a], pb = sum[b] / count[b];
    const auto key = static_cast<long long>(std::llround((pa - pb).norm() / quantum));
    queue.push({key, a, b, version[a], version[b]});
  };
  for (const auto& e : edges) push(e[0], e[1]);

  const std::size_t target =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(target_ratio * static_cast<double>(n))));
  std::size_t remaining = n;
  while (remaining > target && !queue.empty()) {
    const Candidate c = queue.top();
    queue.pop();
    if (!alive[c.a] || !alive[c.b] || version[c.a] != c.va || version[c.b] != c.vb) continue;
    const int keep = c.a, gone = c.b;
    sum[keep] += sum[gone];
    count[keep] += count[gone];
    alive[gone] = 0;
    parent[gone] = keep;
    ++version[keep];
    --remaining;

    std::vector<int> merged;
    merged.reserve(adj[keep].size() + adj[gone].size());
    std::set_union(adj[keep].begin(), adj[keep].end(), adj[gone].begin(), adj[gone].end(),
                   std::back_inserter(merged));
    std::erase_if(merged, [&](int v) { return v == keep || v == gone; });
    for (int nb : adj[gone]) {
      if (nb == keep) continue;
      auto& list = adj[nb];
      list.erase(std::lower_bound(list.begin(), list.end(), gone));
      const auto pos = std::lower_bound(list.begin(), list.end(), keep);
      if (pos == list.end() || *pos != keep) list.insert(pos, keep);
    }
    adj[gone].clear();
    adj[keep] = std::move(merged);
    for (int nb : adj[keep]) push(keep, nb);
  }

  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x];
    return x;
  };
  std::vector<int> node_index(n, -1);
  Skeleton skel;
  for (std::size_t i = 0; i < n; ++i)
    if (alive[i]) {
      node_index[i] = static_cast<int>(skel.nodes.size());
      skel.nodes.push_back({sum[i] / count[i], 0.0});
    }
  skel.vertex_owner.resize(n);
  std::vector<int> owned(skel.nodes.size(), 0);
  for (std::size_t v = 0; v < n; ++v) {
    const int node = node_index[find(static_cast<int>(v))];
    skel.vertex_owner[v] = node;
    skel.nodes[node].radius += (mesh.vertices[v] - skel.nodes[node].position).norm();
    ++owned[node];
  }
  for (std::size_t k = 0; k < skel.nodes.size(); ++k) skel.nodes[k].radius /= owned[k];
  for (std::size_t i = 0; i < n; ++i)
    if (alive[i])
      for (int nb : adj[i])
        if (static_cast<std::size_t>(nb) > i) {
          const int a = node_index[i], b = node_index[nb];
          skel.edges.push_back({std::min(a, b), std::max(a, b)});
        }
  std::sort(skel.edges.begin(), skel.edges.end());
  return skel;
}

namespace {

// Pose fixed by the mesh itself: origin at the vertex centroid, axes from
// vertex-id-weighted sums of the centred positions. Both sums rotate with
// the mesh, so a rigidly moved copy lands on the same local coordinates up
// to rounding, which the grid snap then removes.
struct LocalFrame {
  Vec3 origin = Vec3::Zero();
  Mat3 axes = Mat3::Identity();  // columns are the local axes in world space
  double grid = 0.0;
};

double id_weight(std::uint64_t i, std::uint64_t salt) {
  std::uint64_t z = i * 0x9E3779B97F4A7C15ull + salt;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  z ^= z >> 31;
  return static_cast<double>(z >> 11) * 0x1.0p-52 - 1.0;
}

LocalFrame local_frame(const TriMesh& mesh) {
  LocalFrame f;
  const std::size_t n = mesh.vertices.size();
  if (n == 0) return f;
  for (const Vec3& v : mesh.vertices) f.origin += v;
  f.origin /= static_cast<double>(n);
  Vec3 a = Vec3::Zero(), b = Vec3::Zero();
  double extent = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = mesh.vertices[i] - f.origin;
    a += id_weight(i, 1) * d;
    b += id_weight(i, 2) * d;
    extent = std::max(extent, d.norm());
  }
  if (extent > 0.0) {
    const Vec3 e1 = a.normalized();
    const Vec3 b_perp = b - b.dot(e1) * e1;
    if (a.norm() > 1e-6 * extent && b_perp.norm() > 1e-6 * extent) {
      const Vec3 e2 = b_perp.normalized();
      f.axes.col(0) = e1;
      f.axes.col(1) = e2;
      f.axes.col(2) = e1.cross(e2);
    }
  }
  // Power-of-two grid about 1e-6 of the extent.
  int exponent = 0;
  std::frexp(extent > 0.0 ? extent : 1.0, &exponent);
  f.grid = std::ldexp(1.0, exponent - 20);
  return f;
}

}  // namespace

Skeleton skeletonize(const TriMesh& mesh, const ContractionParams& params) {
  const LocalFrame frame = local_frame(mesh);
  TriMesh local = mesh;
  for (Vec3& v : local.vertices) {
    const Vec3 p = frame.axes.transpose() * (v - frame.origin);
    for (int k = 0; k < 3; ++k) v[k] = std::round(p[k] / frame.grid) * frame.grid;
  }
  const std::vector<Vec3> contracted = contract(local, params);
  Skeleton skel = collapse_to_skeleton(local, contracted, params.collapse_target_ratio);
  for (auto& node : skel.nodes) node.position = frame.axes * node.position + frame.origin;
  return skel;
}

nlohmann::json skeleton_to_json(const Skeleton& skel) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& node : skel.nodes)
    nodes.push_back({{"p", {node.position.x(), node.position.y(), node.position.z()}}, {"r", node.radius}});
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : skel.edges) edges.push_back({e[0], e[1]});
  return {{"nodes", nodes}, {"edges", edges}, {"vertex_owner", skel.vertex_owner}};
}

Skeleton skeleton_from_json(const nlohmann::json& j) {
  Skeleton skel;
  try {
    for (const auto& node : j.at("nodes")) {
      const auto& p = node.at("p");
      skel.nodes.push_back({Vec3(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()),
                            node.at("r").get<double>()});
    }
    for (const auto& e : j.at("edges")) skel.edges.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
    skel.vertex_owner = j.at("vertex_owner").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("malformed skeleton JSON: ") + ex.what());
  }
  const auto n = static_cast<int>(skel.nodes.size());
  for (const auto& e : skel.edges)
    if (e[0] < 0 || e[1] < 0 || e[0] >= n || e[1] >= n || e[0] == e[1])
      throw ParseError("skeleton edge out of range or self-loop");
  for (int owner : skel.vertex_owner)
    if (owner < 0 || owner >= n) throw ParseError("skeleton vertex_owner out of range");
  return skel;
}

void save_skeleton(const Skeleton& skel, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << skeleton_to_json(skel).dump() << '\n';
}

Skeleton load_skeleton(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("malformed skeleton JSON: ") + ex.what());
  }
  return skeleton_from_json(j);
}

}  // namespace skelfuse
