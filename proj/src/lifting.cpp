#include "skelfuse/lifting.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <tuple>

#include "skelfuse/errors.hpp"

namespace skelfuse {

PatchLabels predict_view(std::span<const double> class_logits, std::span<const double> mask_logits,
                         int queries, int rows, int cols, int patch_size) {
  const int patches = rows * cols;
  if (class_logits.size() != static_cast<std::size_t>(queries) * 3 ||
      mask_logits.size() != static_cast<std::size_t>(queries) * patches)
    throw ShapeError("prediction buffers do not match the query and patch counts");
  std::vector<double> p_instance(queries);
  std::vector<int> best_class(queries);
  for (int q = 0; q < queries; ++q) {
    const double* z = class_logits.data() + 3 * q;
    const double mx = std::max({z[0], z[1], z[2]});
    const double e0 = std::exp(z[0] - mx), e1 = std::exp(z[1] - mx), e2 = std::exp(z[2] - mx);
    p_instance[q] = e2 / (e0 + e1 + e2);
    best_class[q] = static_cast<int>(std::max_element(z, z + 3) - z);
  }
  PatchLabels out{rows, cols, patch_size, std::vector<int>(patches, 0)};
  for (int p = 0; p < patches; ++p) {
    int winner = -1;
    double best = -1.0;
    for (int q = 0; q < queries; ++q) {
      const double m = mask_logits[static_cast<std::size_t>(q) * patches + p];
      const double score = p_instance[q] / (1.0 + std::exp(-m));
      if (score > best) {
        best = score;
        winner = q;
      }
    }
    if (winner >= 0 && best_class[winner] == 2 && best >= 0.5) out.labels[p] = winner + 1;
  }
  return out;
}

LabelImage expand_patch_labels(const PatchLabels& patches, const FrameBuffer& fb) {
  if (patches.rows * patches.patch_size != fb.height || patches.cols * patches.patch_size != fb.width)
    throw DimensionMismatch("patch grid does not tile the frame buffer");
  LabelImage image{fb.width, fb.height, std::vector<int>(fb.face_id.size(), -1)};
  for (int y = 0; y < fb.height; ++y)
    for (int x = 0; x < fb.width; ++x) {
      const std::size_t i = fb.index(x, y);
      if (fb.face_id[i] < 0) continue;
      image.labels[i] = patches.labels[(y / patches.patch_size) * patches.cols + x / patches.patch_size];
    }
  return image;
}

LabelImage label_image_from_faces(const FrameBuffer& fb, std::span<const int> face_labels) {
  LabelImage image{fb.width, fb.height, std::vector<int>(fb.face_id.size(), -1)};
  for (std::size_t i = 0; i < fb.face_id.size(); ++i) {
    const int f = fb.face_id[i];
    if (f < 0) continue;
    if (static_cast<std::size_t>(f) >= face_labels.size())
      throw DimensionMismatch("face id " + std::to_string(f) + " exceeds the label count");
    image.labels[i] = face_labels[f];
  }
  return image;
}

std::vector<int> patch_majority(const LabelImage& image, int patch_size) {
  if (patch_size <= 0 || image.width % patch_size != 0 || image.height % patch_size != 0)
    throw ArgumentError("patch size must divide the image size");
  const int cols = image.width / patch_size, rows = image.height / patch_size;
  std::vector<int> out(static_cast<std::size_t>(rows) * cols, -1);
  std::map<int, int> counts;
  for (int pr = 0; pr < rows; ++pr)
    for (int pc = 0; pc < cols; ++pc) {
      counts.clear();
      for (int y = pr * patch_size; y < (pr + 1) * patch_size; ++y)
        for (int x = pc * patch_size; x < (pc + 1) * patch_size; ++x) {
          const int l = image.labels[static_cast<std::size_t>(y) * image.width + x];
          if (l >= 0) ++counts[l];
        }
      int best = -1, best_count = 0;
      for (const auto& [label, count] : counts)
        if (count > best_count) {
          best = label;
          best_count = count;
        }
      out[static_cast<std::size_t>(pr) * cols + pc] = best;
    }
  return out;
}

namespace {

struct DisjointSets {
  std::vector<int> parent;
  explicit DisjointSets(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
};

}  // namespace

InstanceLabeling lift(std::span<const LabelImage> images, const ViewSet& views, const TriMesh& mesh,
                      const LiftOptions& options) {
  if (images.size() != views.size()) throw DimensionMismatch("one label image per view is required");
  const std::size_t face_count = mesh.faces.size();

  // Instance keys in (view, local id) order; key 0 is background.
  std::vector<std::pair<int, int>> keys{{-1, 0}};
  std::vector<std::vector<std::pair<int, int>>> face_key_votes(face_count);
  for (std::size_t v = 0; v < views.size(); ++v) {
    const FrameBuffer& fb = views.frames[v];
    const LabelImage& img = images[v];
    if (img.width != fb.width || img.height != fb.height || img.labels.size() != fb.face_id.size())
      throw DimensionMismatch("label image " + std::to_string(v) + " does not match its frame buffer");
    std::map<int, int> local_to_key;
    for (int l : img.labels)
      if (l > 0) local_to_key[l] = 0;
    for (auto& [local, key] : local_to_key) {
      key = static_cast<int>(keys.size());
      keys.emplace_back(static_cast<int>(v), local);
    }
    for (std::size_t i = 0; i < img.labels.size(); ++i) {
      const int l = img.labels[i], f = fb.face_id[i];
      if (l < 0 || f < 0) continue;
      if (static_cast<std::size_t>(f) >= face_count)
        throw DimensionMismatch("face id " + std::to_string(f) + " exceeds the mesh face count");
      const int key = l == 0 ? 0 : local_to_key[l];
      auto& votes = face_key_votes[f];
      auto it = std::find_if(votes.begin(), votes.end(), [key](const auto& kv) { return kv.first == key; });
      if (it == votes.end())
        votes.emplace_back(key, 1);
      else
        ++it->second;
    }
  }

  // Face-set sizes and pairwise intersections between instance keys.
  const int key_count = static_cast<int>(keys.size());
  std::vector<int> set_size(key_count, 0);
  std::map<std::pair<int, int>, int> overlap;
  for (const auto& votes : face_key_votes) {
    for (const auto& [k, c] : votes) ++set_size[k];
    for (std::size_t a = 0; a < votes.size(); ++a)
      for (std::size_t b = a + 1; b < votes.size(); ++b) {
        int ka = votes[a].first, kb = votes[b].first;
        if (ka == 0 || kb == 0 || keys[ka].first == keys[kb].first) continue;
        if (ka > kb) std::swap(ka, kb);
        ++overlap[{ka, kb}];
      }
  }
  std::vector<std::tuple<double, int, int>> candidates;
  for (const auto& [pair, inter] : overlap) {
    const double iou = static_cast<double>(inter) / (set_size[pair.first] + set_size[pair.second] - inter);
    if (iou > options.merge_iou) candidates.emplace_back(iou, pair.first, pair.second);
  }
  std::sort(candidates.begin(), candidates.end(), [](const auto& x, const auto& y) {
    if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
    return std::make_pair(std::get<1>(x), std::get<2>(x)) < std::make_pair(std::get<1>(y), std::get<2>(y));
  });

  DisjointSets sets(key_count);
  std::vector<std::vector<int>> cluster_views(key_count);
  for (int k = 1; k < key_count; ++k) cluster_views[k] = {keys[k].first};
  for (const auto& [iou, ka, kb] : candidates) {
    const int ra = sets.find(ka), rb = sets.find(kb);
    if (ra == rb) continue;
    std::vector<int> shared;
    std::set_intersection(cluster_views[ra].begin(), cluster_views[ra].end(), cluster_views[rb].begin(),
                          cluster_views[rb].end(), std::back_inserter(shared));
    if (!shared.empty()) continue;
    const int root = std::min(ra, rb), child = std::max(ra, rb);
    sets.parent[child] = root;
    std::vector<int> merged;
    std::set_union(cluster_views[ra].begin(), cluster_views[ra].end(), cluster_views[rb].begin(),
                   cluster_views[rb].end(), std::back_inserter(merged));
    cluster_views[root] = std::move(merged);
    cluster_views[child].clear();
  }

  // Roots are the smallest key of their cluster, so numbering by root
  // order numbers clusters by their first (view, local id).
  std::vector<int> merged_id(key_count, 0);
  int next_id = 1;
  for (int k = 1; k < key_count; ++k)
    if (sets.find(k) == k) merged_id[k] = next_id++;
  for (int k = 1; k < key_count; ++k) merged_id[k] = merged_id[sets.find(k)];

  InstanceLabeling out;
  out.face_labels.assign(face_count, 0);
  out.votes.resize(face_count);
  out.filled.assign(face_count, 0);
  for (std::size_t f = 0; f < face_count; ++f) {
    std::map<int, int> hist;
    for (const auto& [k, c] : face_key_votes[f]) hist[merged_id[k]] += c;
    out.votes[f].assign(hist.begin(), hist.end());
    int best = 0, best_count = 0;
    for (const auto& [id, c] : hist)
      if (c > best_count) {
        best = id;
        best_count = c;
      }
    out.face_labels[f] = best;
  }
  return out;
}

InstanceLabeling fill_unseen(const TriMesh& mesh, InstanceLabeling labeling) {
  const std::size_t n = mesh.faces.size();
  if (labeling.face_labels.size() != n || labeling.votes.size() != n)
    throw DimensionMismatch("labeling does not match the mesh face count");
  labeling.filled.assign(n, 0);
  const auto adjacency = face_adjacency(mesh);
  std::vector<char> known(n, 0);
  std::vector<int> frontier;
  for (std::size_t f = 0; f < n; ++f)
    if (!labeling.votes[f].empty()) {
      known[f] = 1;
      frontier.push_back(static_cast<int>(f));
    }
  if (frontier.empty()) return labeling;

  // Layered BFS: a face reached in layer d takes the smallest label among
  // its neighbours settled in layer d - 1.
  while (!frontier.empty()) {
    std::map<int, int> reached;  // face -> smallest label
    for (int f : frontier)
      for (int g : adjacency[f]) {
        if (known[g]) continue;
        auto [it, inserted] = reached.emplace(g, labeling.face_labels[f]);
        if (!inserted) it->second = std::min(it->second, labeling.face_labels[f]);
      }
    frontier.clear();
    for (const auto& [g, label] : reached) {
      known[g] = 1;
      labeling.face_labels[g] = label;
      labeling.filled[g] = 1;
      frontier.push_back(g);
    }
  }
  return labeling;
}

}  // namespace skelfuse
