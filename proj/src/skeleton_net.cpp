#include "skelfuse/skeleton_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <tuple>

#include "skelfuse/errors.hpp"
#include "skelfuse/ops.hpp"

namespace skelfuse {

namespace {

std::string level_name(int l, const char* suffix) { return "skelnet.level" + std::to_string(l) + "." + suffix; }

// Mean of merged rows: scatter-add, then divide by group sizes.
ad::Tensor pool_features(const ad::Tensor& fine, std::span<const int> assignment, std::size_t coarse_count) {
  std::vector<double> inv(coarse_count, 0.0);
  for (int c : assignment) inv[c] += 1.0;
  for (double& v : inv) v = v > 0.0 ? 1.0 / v : 0.0;
  return ad::mul(ad::scatter_add_rows(fine, assignment, coarse_count),
                 ad::Tensor::matrix(coarse_count, 1, std::move(inv)));
}

}  // namespace

bool SkelGraphLevel::connected() const {
  if (adjacency.empty()) return true;
  std::vector<char> seen(adjacency.size(), 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  std::size_t count = 1;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (int w : adjacency[v])
      if (!seen[w]) {
        seen[w] = 1;
        ++count;
        stack.push_back(w);
      }
  }
  return count == adjacency.size();
}

SkelGraphLevel base_level(const Skeleton& skel) {
  SkelGraphLevel level;
  level.adjacency = skel.adjacency();
  for (const auto& n : skel.nodes) level.positions.push_back(n.position);
  level.members.assign(skel.size(), 1);
  return level;
}

SkelGraphLevel pool(const SkelGraphLevel& fine, double ratio) {
  const int n = static_cast<int>(fine.size());
  const double target = ratio * n;

  std::vector<int> map(n);
  std::iota(map.begin(), map.end(), 0);
  std::vector<Vec3> weighted(n);
  std::vector<int> members = fine.members.empty() ? std::vector<int>(n, 1) : fine.members;
  for (int i = 0; i < n; ++i) weighted[i] = fine.positions[i] * members[i];
  std::vector<std::array<int, 2>> edges;
  for (int i = 0; i < n; ++i)
    for (int j : fine.adjacency[i])
      if (i < j) edges.push_back({i, j});

  int count = n;
  while (count > target && !edges.empty()) {
    std::vector<std::tuple<double, int, int>> order;
    order.reserve(edges.size());
    for (const auto& [a, b] : edges)
      order.emplace_back((weighted[a] / members[a] - weighted[b] / members[b]).norm(), a, b);
    std::sort(order.begin(), order.end());
    std::vector<int> partner(count, -1);
    for (const auto& [d, a, b] : order)
      if (partner[a] < 0 && partner[b] < 0) {
        partner[a] = b;
        partner[b] = a;
      }
    // New ids in order of the smallest current id in each group.
    std::vector<int> renumber(count, -1);
    int next = 0;
    for (int i = 0; i < count; ++i)
      if (renumber[i] < 0) {
        renumber[i] = next;
        if (partner[i] >= 0) renumber[partner[i]] = next;
        ++next;
      }
    std::vector<Vec3> w2(next, Vec3::Zero());
    std::vector<int> m2(next, 0);
    for (int i = 0; i < count; ++i) {
      w2[renumber[i]] += weighted[i];
      m2[renumber[i]] += members[i];
    }
    std::vector<std::array<int, 2>> e2;
    for (const auto& [a, b] : edges) {
      int x = renumber[a], y = renumber[b];
      if (x == y) continue;
      if (x > y) std::swap(x, y);
      e2.push_back({x, y});
    }
    std::sort(e2.begin(), e2.end());
    e2.erase(std::unique(e2.begin(), e2.end()), e2.end());
    for (int& m : map) m = renumber[m];
    weighted = std::move(w2);
    members = std::move(m2);
    edges = std::move(e2);
    count = next;
  }

  SkelGraphLevel coarse;
  coarse.adjacency.resize(count);
  for (const auto& [a, b] : edges) {
    coarse.adjacency[a].push_back(b);
    coarse.adjacency[b].push_back(a);
  }
  for (auto& nb : coarse.adjacency) std::sort(nb.begin(), nb.end());
  for (int i = 0; i < count; ++i) coarse.positions.push_back(weighted[i] / members[i]);
  coarse.members = std::move(members);
  coarse.assignment = std::move(map);
  if (fine.features.defined()) coarse.features = pool_features(fine.features, coarse.assignment, count);
  return coarse;
}

ad::Tensor unpool(std::span<const int> assignment, const ad::Tensor& coarse) {
  if (assignment.empty()) throw MissingAssignment("unpool needs the assignment of a prior pool");
  for (int c : assignment)
    if (c < 0 || static_cast<std::size_t>(c) >= coarse.rows())
      throw MissingAssignment("assignment refers to coarse node " + std::to_string(c) + " which does not exist");
  return ad::gather_rows(coarse, assignment);
}

ad::Tensor gconv(const std::vector<std::vector<int>>& adjacency, const ad::Tensor& features,
                 const ad::Tensor& w_self, const ad::Tensor& w_neigh) {
  const std::size_t n = adjacency.size();
  if (features.rank() != 2 || features.rows() != n)
    throw ShapeError("gconv: feature rows do not match the node count");
  if (w_self.rows() != features.cols() || w_neigh.rows() != features.cols() || w_self.cols() != w_neigh.cols())
    throw ShapeError("gconv: weight shapes " + ad::shape_string(w_self.shape()) + ", " +
                     ad::shape_string(w_neigh.shape()) + " do not fit width " + std::to_string(features.cols()));
  std::vector<double> mean_op(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (int j : adjacency[i]) mean_op[i * n + j] = 1.0 / static_cast<double>(adjacency[i].size());
  const ad::Tensor neigh = ad::matmul(ad::Tensor::matrix(n, n, std::move(mean_op)), features);
  return ad::relu(ad::add(ad::matmul(features, w_self), ad::matmul(neigh, w_neigh)));
}

void SkeletonNetConfig::check() const {
  if (levels < 1) throw ConfigError("skeleton net needs at least one level");
  if (dims.size() != static_cast<std::size_t>(levels))
    throw ConfigError("skeleton net dims must list one width per level");
  for (int d : dims)
    if (d < 1) throw ConfigError("skeleton net widths must be positive");
  if (out_dim < 1) throw ConfigError("skeleton net output width must be positive");
  if (!(pool_ratio > 0.0 && pool_ratio < 1.0)) throw ConfigError("pool ratio must lie in (0, 1)");
}

ad::Tensor skeleton_features(const Skeleton& skel) {
  const std::size_t n = skel.size();
  Vec3 center = Vec3::Zero();
  for (const auto& node : skel.nodes) center += node.position;
  if (n > 0) center /= static_cast<double>(n);
  double ms = 0.0;
  for (const auto& node : skel.nodes) ms += (node.position - center).squaredNorm();
  const double rms = n > 0 ? std::sqrt(ms / static_cast<double>(n)) : 0.0;
  const double scale = rms > 0.0 ? 1.0 / rms : 1.0;
  const auto adj = skel.adjacency();
  std::vector<double> values;
  values.reserve(n * kSkeletonInputDim);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 p = (skel.nodes[i].position - center) * scale;
    values.insert(values.end(), {p.x(), p.y(), p.z(), skel.nodes[i].radius * scale,
                                 static_cast<double>(adj[i].size())});
  }
  return ad::Tensor::matrix(n, kSkeletonInputDim, std::move(values));
}

std::vector<SkelGraphLevel> build_hierarchy(const Skeleton& skel, const SkeletonNetConfig& config) {
  config.check();
  std::vector<SkelGraphLevel> levels{base_level(skel)};
  for (int l = 1; l < config.levels; ++l) levels.push_back(pool(levels.back(), config.pool_ratio));
  return levels;
}

void init_skeleton_net(ParamStore& store, const SkeletonNetConfig& config, Rng& rng) {
  config.check();
  const int L = config.levels;
  for (int l = 0; l < L; ++l) {
    const int in = l == 0 ? kSkeletonInputDim : config.dims[l - 1];
    const int out = L == 1 ? config.out_dim : config.dims[l];
    store.add_xavier(level_name(l, "self"), in, out, rng);
    store.add_xavier(level_name(l, "neigh"), in, out, rng);
  }
  for (int l = L - 2; l >= 0; --l) {
    const int in = config.dims[l + 1] + config.dims[l];
    const int out = l == 0 ? config.out_dim : config.dims[l];
    store.add_xavier(level_name(l, "up.self"), in, out, rng);
    store.add_xavier(level_name(l, "up.neigh"), in, out, rng);
  }
}

ad::Tensor skeleton_net_forward(const std::vector<SkelGraphLevel>& hierarchy, const ad::Tensor& input,
                                ParamStore& store, const SkeletonNetConfig& config) {
  const int L = config.levels;
  if (hierarchy.size() != static_cast<std::size_t>(L))
    throw ShapeError("hierarchy depth does not match the configured level count");
  std::vector<ad::Tensor> skips(L);
  ad::Tensor h = input;
  for (int l = 0; l + 1 < L; ++l) {
    h = gconv(hierarchy[l].adjacency, h, store.get(level_name(l, "self")), store.get(level_name(l, "neigh")));
    skips[l] = h;
    h = pool_features(h, hierarchy[l + 1].assignment, hierarchy[l + 1].size());
  }
  h = gconv(hierarchy[L - 1].adjacency, h, store.get(level_name(L - 1, "self")),
            store.get(level_name(L - 1, "neigh")));
  for (int l = L - 2; l >= 0; --l) {
    const ad::Tensor up = unpool(hierarchy[l + 1].assignment, h);
    const ad::Tensor joined = ad::concat(std::vector<ad::Tensor>{up, skips[l]}, 1);
    h = gconv(hierarchy[l].adjacency, joined, store.get(level_name(l, "up.self")),
              store.get(level_name(l, "up.neigh")));
  }
  return h;
}

}  // namespace skelfuse
