#pragma once

#include <span>
#include <vector>

namespace skelfuse {

struct Assignment {
  std::vector<int> row_to_col;  // -1 for unassigned rows
  double total_cost = 0.0;
};

/// Minimum-cost assignment of min(rows, cols) pairs on a row-major
/// rows x cols matrix of finite costs. Ties resolve deterministically.
Assignment hungarian(std::span<const double> cost, int rows, int cols);

}  // namespace skelfuse
