#include "skelfuse/metrics.hpp"

#include <map>
#include <set>

#include "skelfuse/errors.hpp"
#include "skelfuse/hungarian.hpp"

namespace skelfuse {

nlohmann::json EvalReport::to_json() const {
  nlohmann::json dice = nlohmann::json::object();
  nlohmann::json iou = nlohmann::json::object();
  for (const auto& s : instances) {
    dice[std::to_string(s.gt_label)] = s.dice;
    iou[std::to_string(s.gt_label)] = s.iou;
  }
  return {{"miou", miou}, {"dice", dice}, {"iou", iou}, {"precision", precision}, {"recall", recall}};
}

EvalReport evaluate(std::span<const int> pred, std::span<const int> gt) {
  if (pred.size() != gt.size())
    throw LengthMismatch("prediction has " + std::to_string(pred.size()) + " labels, ground truth " +
                         std::to_string(gt.size()));
  std::map<int, long> gt_size, pred_size;
  std::map<std::pair<int, int>, long> inter;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] < 0 || pred[i] < 0) throw ArgumentError("labels must be non-negative");
    ++gt_size[gt[i]];
    ++pred_size[pred[i]];
    ++inter[{gt[i], pred[i]}];
  }
  auto iou_of = [&](int g, int p) {
    auto it = inter.find({g, p});
    const long both = it == inter.end() ? 0 : it->second;
    const long uni = gt_size[g] + (pred_size.contains(p) ? pred_size[p] : 0) - both;
    return uni > 0 ? static_cast<double>(both) / uni : 0.0;
  };

  std::vector<int> gt_fg, pred_fg;
  for (const auto& [l, n] : gt_size)
    if (l != 0) gt_fg.push_back(l);
  for (const auto& [l, n] : pred_size)
    if (l != 0) pred_fg.push_back(l);

  std::map<int, int> match;  // gt -> pred
  if (!gt_fg.empty() && !pred_fg.empty()) {
    const int r = static_cast<int>(gt_fg.size()), c = static_cast<int>(pred_fg.size());
    std::vector<double> cost(static_cast<std::size_t>(r) * c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) cost[static_cast<std::size_t>(i) * c + j] = 1.0 - iou_of(gt_fg[i], pred_fg[j]);
    const Assignment a = hungarian(cost, r, c);
    for (int i = 0; i < r; ++i)
      if (a.row_to_col[i] >= 0) match[gt_fg[i]] = pred_fg[a.row_to_col[i]];
  }
  if (gt_size.contains(0)) match[0] = 0;

  EvalReport report;
  long true_positives = 0;
  double iou_sum = 0.0;
  for (const auto& [g, n] : gt_size) {
    InstanceScore s;
    s.gt_label = g;
    if (auto it = match.find(g); it != match.end()) {
      s.pred_label = it->second;
      s.iou = iou_of(g, it->second);
      s.dice = 2.0 * s.iou / (1.0 + s.iou);
      if (g != 0 && s.iou >= 0.5) ++true_positives;
    }
    iou_sum += s.iou;
    report.instances.push_back(s);
  }
  report.miou = gt_size.empty() ? 1.0 : iou_sum / static_cast<double>(gt_size.size());
  report.precision = pred_fg.empty() ? (gt_fg.empty() ? 1.0 : 0.0) : static_cast<double>(true_positives) / pred_fg.size();
  report.recall = gt_fg.empty() ? 1.0 : static_cast<double>(true_positives) / gt_fg.size();
  return report;
}

}  // namespace skelfuse
