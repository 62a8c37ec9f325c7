#include "skelfuse/correspondence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <tuple>

#include "json.hpp"
#include "skelfuse/errors.hpp"

namespace skelfuse {

PatchGrid patchify(const FrameBuffer& fb, int patch_size, int view_id) {
  if (patch_size <= 0 || fb.width % patch_size != 0 || fb.height % patch_size != 0)
    throw ArgumentError("resolution " + std::to_string(fb.width) + "x" + std::to_string(fb.height) +
                        " is not divisible by patch size " + std::to_string(patch_size));
  PatchGrid grid;
  grid.view_id = view_id;
  grid.patch_size = patch_size;
  grid.rows = fb.height / patch_size;
  grid.cols = fb.width / patch_size;
  grid.values.resize(fb.intensity.size());
  std::size_t k = 0;
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c)
      for (int y = r * patch_size; y < (r + 1) * patch_size; ++y)
        for (int x = c * patch_size; x < (c + 1) * patch_size; ++x)
          grid.values[k++] = fb.intensity[fb.index(x, y)];
  return grid;
}

std::vector<double> unpatchify(const PatchGrid& grid) {
  const int p = grid.patch_size, width = grid.cols * p;
  std::vector<double> image(grid.values.size());
  std::size_t k = 0;
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c)
      for (int y = r * p; y < (r + 1) * p; ++y)
        for (int x = c * p; x < (c + 1) * p; ++x)
          image[static_cast<std::size_t>(y) * width + x] = grid.values[k++];
  return image;
}

int patch_of_pixel(double x, double y, int patch_size, int cols) {
  const int px = static_cast<int>(std::floor(x)), py = static_cast<int>(std::floor(y));
  return (py / patch_size) * cols + (px / patch_size);
}

int CorrespondenceMap::hop_of(int node, int view, int patch) const {
  const auto it = std::lower_bound(positives.begin(), positives.end(), Positive{node, view, patch, 0},
                                   [](const Positive& a, const Positive& b) {
                                     return std::tie(a.view, a.patch, a.node) < std::tie(b.view, b.patch, b.node);
                                   });
  if (it != positives.end() && it->node == node && it->view == view && it->patch == patch) return it->hop;
  return -1;
}

CorrespondenceMap make_correspondence(std::vector<Positive> positives, int node_count, int view_count,
                                      int patches_per_view) {
  CorrespondenceMap cm;
  cm.node_count = node_count;
  cm.view_count = view_count;
  cm.patches_per_view = patches_per_view;
  std::sort(positives.begin(), positives.end(), [](const Positive& a, const Positive& b) {
    return std::tie(a.view, a.patch, a.node, a.hop) < std::tie(b.view, b.patch, b.node, b.hop);
  });
  // Keep the minimal hop per (view, patch, node).
  positives.erase(std::unique(positives.begin(), positives.end(),
                              [](const Positive& a, const Positive& b) {
                                return a.view == b.view && a.patch == b.patch && a.node == b.node;
                              }),
                  positives.end());
  cm.node_coverage.assign(static_cast<std::size_t>(node_count), 0);
  for (const Positive& p : positives) {
    if (p.node < 0 || p.node >= node_count || p.view < 0 || p.view >= view_count || p.patch < 0 ||
        p.patch >= patches_per_view || p.hop < 0)
      throw ArgumentError("correspondence entry out of range");
    ++cm.node_coverage[p.node];
  }
  cm.positives = std::move(positives);
  return cm;
}

CorrespondenceMap build_correspondence(const Skeleton& skel, const ViewSet& views,
                                       const CorrespondenceOptions& options) {
  if (options.k_hop < 0) throw ArgumentError("k_hop must be non-negative");
  if (views.size() == 0) return make_correspondence({}, static_cast<int>(skel.size()), 0, 0);
  const int p = options.patch_size;
  const FrameBuffer& first = views.frames.front();
  if (p <= 0 || first.width % p != 0 || first.height % p != 0)
    throw ArgumentError("resolution is not divisible by the patch size");
  const int cols = first.width / p, per_view = cols * (first.height / p);
  const auto adj = skel.adjacency();

  std::vector<Positive> positives;
  for (std::size_t v = 0; v < views.size(); ++v) {
    const Camera& cam = views.cameras[v];
    const FrameBuffer& fb = views.frames[v];
    if (fb.width != first.width || fb.height != first.height)
      throw DimensionMismatch("all views must share one resolution");
    const double eps = options.depth_eps > 0.0 ? options.depth_eps : 1e-3 * (cam.eye - cam.look_at).norm() / 2.5;

    // Hop-0 seeds grouped by patch.
    std::map<int, std::vector<int>> seeds;
    for (std::size_t n = 0; n < skel.size(); ++n) {
      const SkeletonNode& node = skel.nodes[n];
      if (!node_visible(cam, fb, node.position, node.radius, eps)) continue;
      const auto proj = project_point(cam, node.position);
      seeds[patch_of_pixel(proj->pixel.x(), proj->pixel.y(), p, cols)].push_back(static_cast<int>(n));
    }
    // Breadth-first expansion up to k_hop per patch.
    std::vector<int> hop(skel.size(), -1);
    for (const auto& [patch, nodes] : seeds) {
      std::vector<int> frontier = nodes, touched = nodes;
      for (int n : nodes) hop[n] = 0;
      for (int h = 1; h <= options.k_hop && !frontier.empty(); ++h) {
        std::vector<int> next;
        for (int n : frontier)
          for (int w : adj[n])
            if (hop[w] < 0) {
              hop[w] = h;
              next.push_back(w);
              touched.push_back(w);
            }
        frontier = std::move(next);
      }
      for (int n : touched) {
        positives.push_back({n, static_cast<int>(v), patch, hop[n]});
        hop[n] = -1;
      }
    }
  }
  return make_correspondence(std::move(positives), static_cast<int>(skel.size()),
                             static_cast<int>(views.size()), per_view);
}

CoverageStats coverage_stats(const CorrespondenceMap& cm, const Skeleton& skel) {
  CoverageStats stats;
  const auto nodes = static_cast<double>(skel.size());
  if (cm.positives.empty() || nodes == 0.0) return stats;
  std::size_t covered = 0;
  for (int c : cm.node_coverage) covered += c > 0 ? 1 : 0;
  stats.frac_nodes_covered = static_cast<double>(covered) / nodes;
  stats.mean_positives_per_node = static_cast<double>(cm.positives.size()) / nodes;
  std::size_t patches = 0;
  for (std::size_t i = 0; i < cm.positives.size(); ++i)
    if (i == 0 || cm.positives[i].view != cm.positives[i - 1].view ||
        cm.positives[i].patch != cm.positives[i - 1].patch)
      ++patches;
  const double total = static_cast<double>(cm.view_count) * cm.patches_per_view;
  stats.frac_patches_with_node = total > 0.0 ? static_cast<double>(patches) / total : 0.0;
  return stats;
}

void save_correspondence(const CorrespondenceMap& cm, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const Positive& p : cm.positives)
    out << nlohmann::json{{"node", p.node}, {"view", p.view}, {"patch", p.patch}, {"hop", p.hop}}.dump()
        << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

CorrespondenceMap load_correspondence(const std::filesystem::path& path, int node_count,
                                      int view_count, int patches_per_view) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Positive> positives;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      positives.push_back({j.at("node").get<int>(), j.at("view").get<int>(), j.at("patch").get<int>(),
                           j.at("hop").get<int>()});
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(std::string("malformed correspondence line: ") + ex.what());
    }
  }
  return make_correspondence(std::move(positives), node_count, view_count, patches_per_view);
}

}  // namespace skelfuse
