#pragma once

#include <Eigen/Core>

#include <utility>
#include <vector>

namespace muppet {

using Assignment = std::vector<std::pair<int, int>>;

/// Minimum-cost maximal matching on a rectangular cost matrix (Hungarian
/// method with potentials, O(n^2 m)). Returns min(rows, cols) (row, col)
/// pairs sorted by row.
Assignment hungarian(const Eigen::MatrixXd& cost);

/// Gated variant: pairs whose cost exceeds `gate` are forbidden. Among
/// matchings of maximum cardinality it returns one of minimum total cost.
Assignment hungarian_gated(const Eigen::MatrixXd& cost, double gate);

}  // namespace muppet
