#include "support.hpp"

#include <muppet/assignment.hpp>

#include <doctest.h>

using namespace muppet;
using namespace testsupport;

namespace {

double total(const Eigen::MatrixXd& c, const Assignment& a) {
  double s = 0.0;
  for (const auto& [i, j] : a) s += c(i, j);
  return s;
}

bool injective(const Assignment& a) {
  std::set<int> rows, cols;
  for (const auto& [i, j] : a)
    if (!rows.insert(i).second || !cols.insert(j).second) return false;
  return true;
}

}  // namespace

TEST_SUITE("assignment") {

TEST_CASE("hungarian: anti-diagonal optimum") {
  Eigen::MatrixXd c(2, 2);
  c << 0, 9, 9, 0;
  const Assignment a = hungarian(c);
  REQUIRE(a.size() == 2);
  CHECK(a[0] == std::pair{0, 0});
  CHECK(a[1] == std::pair{1, 1});
  c << 9, 0, 0, 9;
  CHECK(total(c, hungarian(c)) == 0.0);
}

TEST_CASE("hungarian: empty input") {
  CHECK(hungarian(Eigen::MatrixXd(0, 3)).empty());
  CHECK(hungarian_gated(Eigen::MatrixXd(2, 0), 1.0).empty());
}

TEST_CASE("hungarian: matches brute force on random rectangular matrices") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (const auto& [r, c] : {std::pair{3, 3}, {2, 3}, {3, 2}, {4, 5}, {5, 4}, {1, 4}}) {
    for (int t = 0; t < 200; ++t) {
      Eigen::MatrixXd m(r, c);
      for (Eigen::Index k = 0; k < m.size(); ++k) m(k) = u(rng);
      const Assignment a = hungarian(m);
      CHECK(injective(a));
      CHECK(a.size() == static_cast<std::size_t>(std::min(r, c)));
      CHECK(total(m, a) == doctest::Approx(brute_force_matching(m).second).epsilon(1e-12));
    }
  }
}

TEST_CASE("hungarian_gated: maximum cardinality first, then minimum cost") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 2000; ++t) {
    const int r = 1 + static_cast<int>(u(rng) * 4), c = 1 + static_cast<int>(u(rng) * 4);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index k = 0; k < m.size(); ++k) m(k) = u(rng);
    const Assignment a = hungarian_gated(m, 0.5);
    const auto [card, cost] = brute_force_matching(m, 0.5);
    CHECK(injective(a));
    for (const auto& [i, j] : a) CHECK(m(i, j) <= 0.5);
    CHECK(static_cast<int>(a.size()) == card);
    CHECK(total(m, a) == doctest::Approx(cost).epsilon(1e-12));
  }
}

TEST_CASE("hungarian_gated: gate that a cheaper plain assignment would violate") {
  // The unconstrained optimum pairs (0,1) and (1,0) at cost 2; one gated pair is all that remains.
  Eigen::MatrixXd c(2, 2);
  c << 5.0, 1.0, 1.0, 5.0;
  const Assignment a = hungarian_gated(c, 0.9);
  CHECK(a.empty());
  c << 0.5, 0.2, 0.3, 5.0;
  const Assignment b = hungarian_gated(c, 1.0);
  REQUIRE(b.size() == 2);
  CHECK(total(c, b) == doctest::Approx(0.5));
}

}  // TEST_SUITE
