#include "skelfuse/hungarian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "skelfuse/errors.hpp"

namespace skelfuse {

namespace {

// Shortest augmenting path with potentials, n <= m. a is 1-based.
std::vector<int> solve(const std::vector<double>& a, int n, int m) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  auto at = [&](int i, int j) { return a[static_cast<std::size_t>(i - 1) * m + (j - 1)]; };
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = at(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace

Assignment hungarian(std::span<const double> cost, int rows, int cols) {
  if (rows < 0 || cols < 0 || cost.size() != static_cast<std::size_t>(rows) * cols)
    throw LengthMismatch("cost matrix size does not match its dimensions");
  Assignment result;
  result.row_to_col.assign(rows, -1);
  if (rows == 0 || cols == 0) return result;
  for (double c : cost)
    if (!std::isfinite(c)) throw ArgumentError("assignment costs must be finite");

  if (rows <= cols) {
    result.row_to_col = solve(std::vector<double>(cost.begin(), cost.end()), rows, cols);
  } else {
    std::vector<double> t(cost.size());
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) t[static_cast<std::size_t>(j) * rows + i] = cost[static_cast<std::size_t>(i) * cols + j];
    const std::vector<int> col_to_row = solve(t, cols, rows);
    for (int j = 0; j < cols; ++j) result.row_to_col[col_to_row[j]] = j;
  }
  for (int i = 0; i < rows; ++i)
    if (result.row_to_col[i] >= 0) result.total_cost += cost[static_cast<std::size_t>(i) * cols + result.row_to_col[i]];
  return result;
}

}  // namespace skelfuse
