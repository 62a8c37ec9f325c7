#pragma once

#include <span>
#include <vector>

#include "json.hpp"

namespace skelfuse {

struct InstanceScore {
  int gt_label = 0;
  int pred_label = -1;  // -1 when unmatched
  double iou = 0.0;
  double dice = 0.0;
};

struct EvalReport {
  double miou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::vector<InstanceScore> instances;  // one per ground-truth label, ascending, background first

  nlohmann::json to_json() const;
};

/// Background (label 0) is matched to background; the remaining labels are
/// matched by Hungarian assignment on 1 - IoU. mIoU averages over every
/// ground-truth label present, background included. Precision and recall
/// count matched non-background pairs with IoU >= 0.5. Throws LengthMismatch.
EvalReport evaluate(std::span<const int> pred, std::span<const int> gt);

}  // namespace skelfuse
