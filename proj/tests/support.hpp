#pragma once

// Fixture builders and independent reference implementations used as test
// oracles. Nothing here calls into the library code it is meant to check.

#include <muppet/geometry.hpp>
#include <muppet/metrics.hpp>
#include <muppet/tracking2d.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace testsupport {

using namespace muppet;

// ---------------------------------------------------------------------------
// Cameras

inline CameraModel look_at(const std::string& id, const Vec3& center, const Vec3& target,
                           double f = 1500.0, Distortion dist = {}, int w = 3840, int h = 2160) {
  const Vec3 fwd = (target - center).normalized();
  Vec3 up = Vec3::UnitZ();
  if (std::abs(fwd.dot(up)) > 0.99) up = Vec3::UnitY();
  const Vec3 right = fwd.cross(up).normalized();
  const Vec3 down = fwd.cross(right);
  Mat3 R;
  R.row(0) = right;
  R.row(1) = down;
  R.row(2) = fwd;
  Mat3 K = Mat3::Identity();
  K(0, 0) = K(1, 1) = f;
  K(0, 2) = 0.5 * w;
  K(1, 2) = 0.5 * h;
  return CameraModel(id, K, dist, R, -R * center, w, h);
}

/// n cameras on a circle of radius `radius` at height `height`, all looking at the origin.
inline CameraRig ring_rig(int n, double radius = 3000.0, double height = 2000.0,
                          Distortion dist = {}) {
  CameraRig rig;
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * M_PI * i / n + 0.3;
    rig.cameras.push_back(look_at("cam" + std::to_string(i),
                                  {radius * std::cos(a), radius * std::sin(a), height},
                                  Vec3::Zero(), 1500.0, dist));
  }
  return rig;
}

// Direct evaluation of the projection formulas, written independently.
inline Vec2 oracle_project(const CameraModel& c, const Vec3& p) {
  const Vec3 xc = c.rotation() * p + c.translation();
  const double x = xc.x() / xc.z(), y = xc.y() / xc.z();
  const double r2 = x * x + y * y;
  const auto& d = c.distortion();
  const double radial = 1.0 + d.k1 * r2 + d.k2 * r2 * r2;
  const double xd = x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x);
  const double yd = y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y;
  const Mat3& K = c.intrinsics();
  return {K(0, 0) * xd + K(0, 1) * yd + K(0, 2), K(1, 1) * yd + K(1, 2)};
}

inline double oracle_cost(const std::vector<const CameraModel*>& cams,
                          const std::vector<Vec2>& obs, const Vec3& p) {
  double c = 0.0;
  for (std::size_t i = 0; i < cams.size(); ++i) c += (oracle_project(*cams[i], p) - obs[i]).squaredNorm();
  return c;
}

/// Nonlinear least-squares triangulation: Gauss-Newton with central
/// difference Jacobians and step halving, started from the least-squares
/// intersection of the viewing rays. Independent of the library's DLT and LM.
inline Vec3 oracle_triangulate(const std::vector<const CameraModel*>& cams,
                               const std::vector<Vec2>& obs) {
  // Ideal normalized points come from fixed-point undistortion.
  auto ray_dir = [](const CameraModel& c, const Vec2& px) {
    const Mat3& K = c.intrinsics();
    const double yd = (px.y() - K(1, 2)) / K(1, 1);
    const double xd = (px.x() - K(0, 2) - K(0, 1) * yd) / K(0, 0);
    const auto& d = c.distortion();
    double x = xd, y = yd;
    for (int it = 0; it < 200; ++it) {
      const double r2 = x * x + y * y;
      const double radial = 1.0 + d.k1 * r2 + d.k2 * r2 * r2;
      const double dx = 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x);
      const double dy = d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y;
      x = (xd - dx) / radial;
      y = (yd - dy) / radial;
    }
    return (c.rotation().transpose() * Vec3(x, y, 1.0)).normalized();
  };
  Mat3 A = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  for (std::size_t i = 0; i < cams.size(); ++i) {
    const Vec3 c = -cams[i]->rotation().transpose() * cams[i]->translation();
    const Vec3 d = ray_dir(*cams[i], obs[i]);
    const Mat3 P = Mat3::Identity() - d * d.transpose();
    A += P;
    b += P * c;
  }
  Vec3 x = A.ldlt().solve(b);

  double cost = oracle_cost(cams, obs, x);
  for (int it = 0; it < 100; ++it) {
    Eigen::MatrixXd J(2 * cams.size(), 3);
    Eigen::VectorXd r(2 * cams.size());
    for (std::size_t i = 0; i < cams.size(); ++i) {
      r.segment<2>(2 * i) = oracle_project(*cams[i], x) - obs[i];
      for (int k = 0; k < 3; ++k) {
        Vec3 e = Vec3::Zero();
        const double h = 1e-4;
        e(k) = h;
        J.block<2, 1>(2 * i, k) =
            (oracle_project(*cams[i], x + e) - oracle_project(*cams[i], x - e)) / (2.0 * h);
      }
    }
    const Vec3 step = (J.transpose() * J).ldlt().solve(-J.transpose() * r);
    double t = 1.0;
    bool improved = false;
    for (int h = 0; h < 30; ++h, t *= 0.5) {
      const double c = oracle_cost(cams, obs, x + t * step);
      if (c < cost) {
        x += t * step;
        cost = c;
        improved = true;
        break;
      }
    }
    if (!improved || (t * step).norm() < 1e-12) break;
  }
  return x;
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// ---------------------------------------------------------------------------
// Assignment

/// Exhaustive search over all matchings of maximum cardinality with entries
/// <= gate; returns the minimum total cost among them (and the cardinality).
inline std::pair<int, double> brute_force_matching(const Eigen::MatrixXd& cost,
                                                   double gate = std::numeric_limits<double>::infinity()) {
  const int n = static_cast<int>(cost.rows()), m = static_cast<int>(cost.cols());
  int best_card = 0;
  double best_cost = 0.0;
  std::vector<char> used(m, 0);
  std::function<void(int, int, double)> rec = [&](int row, int card, double total) {
    if (row == n) {
      if (card > best_card || (card == best_card && total < best_cost)) {
        best_card = card;
        best_cost = total;
      }
      return;
    }
    rec(row + 1, card, total);
    for (int j = 0; j < m; ++j) {
      if (used[j] || !(cost(row, j) <= gate)) continue;
      used[j] = 1;
      rec(row + 1, card + 1, total + cost(row, j));
      used[j] = 0;
    }
  };
  rec(0, 0, 0.0);
  return {best_card, best_cost};
}

/// All matchings (row -> col or -1) with gated entries.
inline std::vector<std::vector<int>> all_matchings(const Eigen::MatrixXd& cost, double gate) {
  const int n = static_cast<int>(cost.rows()), m = static_cast<int>(cost.cols());
  std::vector<std::vector<int>> out;
  std::vector<int> cur(n, -1);
  std::vector<char> used(m, 0);
  std::function<void(int)> rec = [&](int row) {
    if (row == n) {
      out.push_back(cur);
      return;
    }
    cur[row] = -1;
    rec(row + 1);
    for (int j = 0; j < m; ++j) {
      if (used[j] || !(cost(row, j) <= gate)) continue;
      used[j] = 1;
      cur[row] = j;
      rec(row + 1);
      cur[row] = -1;
      used[j] = 0;
    }
  };
  rec(0);
  return out;
}

// ---------------------------------------------------------------------------
// Tracking metrics references

struct ClearReference {
  int tp = 0, fp = 0, fn = 0, ids = 0, frag = 0, n_gt = 0;
  double dist = 0.0;
  double mota = 0.0, motp = 0.0, mt = 0.0, ml = 0.0;
};

/// CLEAR-MOT by enumerating every gated matching of each frame: continuation
/// pairs (each other's latest partner, still within the gate) are forced, then the
/// matching with the most pairs and the lowest summed distance wins.
inline ClearReference clear_reference(const TrackingProblem& p) {
  ClearReference r;
  std::map<int, int> last, last_pred;
  std::map<int, std::pair<int, int>> cover;  // gt -> (present, matched)
  std::map<int, int> state;                  // 0 never, 1 tracked, 2 lost
  for (const auto& f : p.frames) {
    const int ng = static_cast<int>(f.gt_ids.size()), np = static_cast<int>(f.pred_ids.size());
    std::vector<int> forced(ng, -1);
    for (int i = 0; i < ng; ++i) {
      auto it = last.find(f.gt_ids[i]);
      if (it == last.end() || last_pred[it->second] != f.gt_ids[i]) continue;
      for (int j = 0; j < np; ++j)
        if (f.pred_ids[j] == it->second && f.distance(i, j) <= p.gate) forced[i] = j;
    }
    std::vector<int> best;
    int best_card = -1;
    double best_cost = 0.0;
    for (const auto& m : all_matchings(f.distance, p.gate)) {
      bool ok = true;
      for (int i = 0; i < ng; ++i)
        if (forced[i] >= 0 && m[i] != forced[i]) ok = false;
      if (!ok) continue;
      int card = 0;
      double cost = 0.0;
      for (int i = 0; i < ng; ++i)
        if (m[i] >= 0) {
          ++card;
          cost += f.distance(i, m[i]);
        }
      if (card > best_card || (card == best_card && cost < best_cost)) {
        best = m;
        best_card = card;
        best_cost = cost;
      }
    }
    if (ng == 0) best_card = 0;
    for (int i = 0; i < ng; ++i) {
      const int g = f.gt_ids[i];
      auto& c = cover[g];
      ++c.first;
      if (ng > 0 && best[i] >= 0) {
        const int pid = f.pred_ids[best[i]];
        if (last.contains(g) && last[g] != pid) ++r.ids;
        last[g] = pid;
        last_pred[pid] = g;
        ++c.second;
        r.dist += f.distance(i, best[i]);
        if (state[g] == 2) ++r.frag;
        state[g] = 1;
      } else if (state[g] == 1) {
        state[g] = 2;
      }
    }
    r.tp += best_card;
    r.fp += np - best_card;
    r.fn += ng - best_card;
    r.n_gt += ng;
  }
  r.mota = 1.0 - static_cast<double>(r.fn + r.fp + r.ids) / r.n_gt;
  r.motp = r.tp > 0 ? 1.0 - r.dist / (r.tp * p.scale) : 0.0;
  int mt = 0, ml = 0;
  for (const auto& [g, c] : cover) {
    const double ratio = static_cast<double>(c.second) / c.first;
    mt += ratio >= 0.8;
    ml += ratio < 0.2;
  }
  r.mt = static_cast<double>(mt) / cover.size();
  r.ml = static_cast<double>(ml) / cover.size();
  return r;
}

/// IDF1 by enumerating every injective GT-trajectory to predicted-trajectory map.
inline double idf1_reference(const TrackingProblem& p) {
  std::vector<int> gts, preds;
  int n_gt = 0, n_pred = 0;
  for (const auto& f : p.frames) {
    n_gt += static_cast<int>(f.gt_ids.size());
    n_pred += static_cast<int>(f.pred_ids.size());
    for (int g : f.gt_ids)
      if (std::find(gts.begin(), gts.end(), g) == gts.end()) gts.push_back(g);
    for (int q : f.pred_ids)
      if (std::find(preds.begin(), preds.end(), q) == preds.end()) preds.push_back(q);
  }
  auto overlap = [&](int g, int q) {
    int n = 0;
    for (const auto& f : p.frames)
      for (std::size_t i = 0; i < f.gt_ids.size(); ++i)
        for (std::size_t j = 0; j < f.pred_ids.size(); ++j)
          if (f.gt_ids[i] == g && f.pred_ids[j] == q && f.distance(i, j) <= p.gate) ++n;
    return n;
  };
  Eigen::MatrixXd ov(gts.size(), preds.size());
  for (std::size_t a = 0; a < gts.size(); ++a)
    for (std::size_t b = 0; b < preds.size(); ++b) ov(a, b) = overlap(gts[a], preds[b]);
  double best = 0.0;
  for (const auto& m : all_matchings(ov, std::numeric_limits<double>::infinity())) {
    double s = 0.0;
    for (std::size_t a = 0; a < m.size(); ++a)
      if (m[a] >= 0) s += ov(a, m[a]);
    best = std::max(best, s);
  }
  return n_gt + n_pred > 0 ? 2.0 * best / (n_gt + n_pred) : 0.0;
}

/// HOTA following the published definition: per frame the matching maximises
/// the summed (global alignment x similarity) score, found here by
/// enumeration; AssA averages |TPA| / (|TPA| + |FNA| + |FPA|) over TPs.
inline double hota_reference(const TrackingProblem& p) {
  std::map<int, double> gt_count, pred_count;
  std::map<std::pair<int, int>, double> potential;
  auto sim = [&](double d) { return std::max(0.0, 1.0 - d / p.scale); };
  for (const auto& f : p.frames) {
    for (int g : f.gt_ids) gt_count[g] += 1;
    for (int q : f.pred_ids) pred_count[q] += 1;
    const int ng = static_cast<int>(f.gt_ids.size()), np = static_cast<int>(f.pred_ids.size());
    for (int i = 0; i < ng; ++i)
      for (int j = 0; j < np; ++j) {
        double row = 0.0, col = 0.0;
        for (int jj = 0; jj < np; ++jj) row += sim(f.distance(i, jj));
        for (int ii = 0; ii < ng; ++ii) col += sim(f.distance(ii, j));
        const double s = sim(f.distance(i, j));
        const double denom = row + col - s;
        if (denom > 0.0) potential[{f.gt_ids[i], f.pred_ids[j]}] += s / denom;
      }
  }
  auto align = [&](int g, int q) {
    const double pot = potential.contains({g, q}) ? potential[{g, q}] : 0.0;
    return pot / (gt_count[g] + pred_count[q] - pot);
  };

  double hota_sum = 0.0;
  for (int a = 1; a <= 19; ++a) {
    const double alpha = 0.05 * a;
    double tp = 0, fn = 0, fp = 0;
    std::map<std::pair<int, int>, double> tpa;
    for (const auto& f : p.frames) {
      const int ng = static_cast<int>(f.gt_ids.size()), np = static_cast<int>(f.pred_ids.size());
      Eigen::MatrixXd score(ng, np);
      for (int i = 0; i < ng; ++i)
        for (int j = 0; j < np; ++j) score(i, j) = align(f.gt_ids[i], f.pred_ids[j]) * sim(f.distance(i, j));
      std::vector<int> best(ng, -1);
      double best_score = -1.0;
      for (const auto& m : all_matchings(score, std::numeric_limits<double>::infinity())) {
        double s = 0.0;
        for (int i = 0; i < ng; ++i)
          if (m[i] >= 0) s += score(i, m[i]);
        if (s > best_score + 1e-12) {
          best_score = s;
          best = m;
        }
      }
      int matched = 0;
      for (int i = 0; i < ng; ++i)
        if (best[i] >= 0 && sim(f.distance(i, best[i])) >= alpha - 1e-12) {
          ++matched;
          tpa[{f.gt_ids[i], f.pred_ids[best[i]]}] += 1;
        }
      tp += matched;
      fn += ng - matched;
      fp += np - matched;
    }
    double ass = 0.0;
    for (const auto& [k, n] : tpa) ass += n * n / (gt_count[k.first] + pred_count[k.second] - n);
    const double assa = tp > 0 ? ass / tp : 0.0;
    const double deta = tp + fn + fp > 0 ? tp / (tp + fn + fp) : 0.0;
    hota_sum += std::sqrt(deta * assa);
  }
  return hota_sum / 19.0;
}

/// A random small tracking fixture: up to 3 GT objects over up to 6 frames,
/// predictions near their GT with random identity noise, misses and clutter.
inline TrackingProblem random_problem(std::mt19937_64& rng, double gate = 0.5) {
  std::uniform_int_distribution<int> n_obj(1, 3), n_frames(1, 6), pid(0, 3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  TrackingProblem p;
  p.gate = gate;
  p.scale = 1.0;
  const int objects = n_obj(rng), frames = n_frames(rng);
  for (int f = 0; f < frames; ++f) {
    FrameObjects fo;
    fo.frame = f;
    for (int g = 0; g < objects; ++g)
      if (u(rng) < 0.85) fo.gt_ids.push_back(g);
    std::set<int> used;
    const int np = std::uniform_int_distribution<int>(0, 3)(rng);
    for (int j = 0; j < np; ++j) {
      const int id = pid(rng);
      if (used.insert(id).second) fo.pred_ids.push_back(id);
    }
    fo.distance.resize(fo.gt_ids.size(), fo.pred_ids.size());
    for (Eigen::Index i = 0; i < fo.distance.rows(); ++i)
      for (Eigen::Index j = 0; j < fo.distance.cols(); ++j) fo.distance(i, j) = u(rng);
    p.frames.push_back(std::move(fo));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Files

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("muppet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace testsupport
