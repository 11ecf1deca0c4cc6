#pragma once

#include <Eigen/Core>
#include <limits>
#include <vector>

#include "bras/errors.hpp"

namespace bras {

/// Exact minimum-cost assignment on a square cost matrix (Hungarian
/// algorithm with potentials, O(n^3)). Returns the assigned column for each
/// row, 0-based. No greedy fallback: the optimum is exact for every n.
inline std::vector<int> min_cost_assignment(const Eigen::MatrixXd& cost) {
  if (cost.rows() != cost.cols()) throw dimension_error("assignment needs a square matrix");
  if (cost.rows() == 0) return {};
  if (!cost.allFinite()) throw argument_error("assignment costs must be finite");

  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based with column 0 as the virtual start of each augmenting path
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> min_slack(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = match[j0];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < min_slack[j]) {
          min_slack[j] = cur;
          way[j] = j0;
        }
        if (min_slack[j] < delta) {
          delta = min_slack[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          min_slack[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j)
    if (match[j] != 0) row_to_col[static_cast<std::size_t>(match[j] - 1)] = j - 1;
  return row_to_col;
}

}  // namespace bras
