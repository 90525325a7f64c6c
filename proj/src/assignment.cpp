#include <muppet/assignment.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace muppet {

namespace {

// Rows <= cols. Classic potentials formulation over 1-based arrays.
Assignment solve_wide(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(a.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);

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
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
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

  Assignment out;
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) out.emplace_back(p[j] - 1, j - 1);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

Assignment hungarian(const Eigen::MatrixXd& cost) {
  if (cost.rows() == 0 || cost.cols() == 0) return {};
  if (cost.rows() <= cost.cols()) return solve_wide(cost);
  Assignment t = solve_wide(cost.transpose());
  for (auto& [r, c] : t) std::swap(r, c);
  std::sort(t.begin(), t.end());
  return t;
}

Assignment hungarian_gated(const Eigen::MatrixXd& cost, double gate) {
  if (cost.rows() == 0 || cost.cols() == 0) return {};
  // A forbidden pair costs more than any feasible matching can, so the
  // optimum maximizes cardinality first and total cost second.
  double feasible_sum = 0.0;
  for (Eigen::Index i = 0; i < cost.rows(); ++i)
    for (Eigen::Index j = 0; j < cost.cols(); ++j)
      if (cost(i, j) <= gate) feasible_sum += std::abs(cost(i, j));
  const double big = 2.0 * feasible_sum + 1.0;
  const Eigen::MatrixXd c = cost.unaryExpr([&](double x) { return x <= gate ? x : big; });
  Assignment out;
  for (const auto& [r, col] : hungarian(c))
    if (cost(r, col) <= gate) out.emplace_back(r, col);
  return out;
}

}  // namespace muppet
