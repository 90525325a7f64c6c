#include <muppet/metrics.hpp>

#include <muppet/assignment.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

namespace muppet {

// ---------------------------------------------------------------------------
// Pose accuracy

PoseErrors pose_errors(const std::vector<PosePair>& pairs) {
  std::vector<double> errors;
  PoseErrors out;
  for (const auto& p : pairs) {
    const std::size_t n = std::min(p.gt.points.size(), p.pred.points.size());
    for (std::size_t k = 0; k < p.gt.points.size(); ++k) {
      const bool gt_ok = p.gt.valid[k];
      const bool pred_ok = k < n && p.pred.valid[k];
      if (gt_ok && pred_ok) errors.push_back((p.pred.points[k] - p.gt.points[k]).norm());
      else if (gt_ok) ++out.n_unmatched_gt;
    }
  }
  if (errors.empty()) throw EmptyMatchSet("no jointly valid prediction/ground-truth keypoints");

  double sq = 0.0;
  for (double e : errors) sq += e * e;
  out.rmse = std::sqrt(sq / static_cast<double>(errors.size()));
  std::sort(errors.begin(), errors.end());
  const std::size_t mid = errors.size() / 2;
  out.median = errors.size() % 2 ? errors[mid] : 0.5 * (errors[mid - 1] + errors[mid]);
  out.n_keypoints = errors.size();
  return out;
}

double pck_threshold(const KeypointInstance& gt, double fraction, PoseMode mode) {
  double reference = 0.0;
  if (mode == PoseMode::k2D) {
    if (!gt.bbox) throw DegenerateThreshold("2D PCK needs a ground-truth bounding box");
    reference = std::max(gt.bbox->w, gt.bbox->h);
  } else {
    for (std::size_t i = 0; i < gt.points.size(); ++i) {
      if (!gt.valid[i]) continue;
      for (std::size_t j = i + 1; j < gt.points.size(); ++j)
        if (gt.valid[j]) reference = std::max(reference, (gt.points[i] - gt.points[j]).norm());
    }
  }
  if (!(reference > 0.0)) throw DegenerateThreshold("PCK reference size is zero");
  return fraction * reference;
}

double pck(const std::vector<PosePair>& pairs, double fraction, PoseMode mode) {
  std::size_t total = 0, correct = 0;
  for (const auto& p : pairs) {
    const double thr = pck_threshold(p.gt, fraction, mode);
    const std::size_t n = std::min(p.gt.points.size(), p.pred.points.size());
    for (std::size_t k = 0; k < n; ++k) {
      if (!p.gt.valid[k] || !p.pred.valid[k]) continue;
      ++total;
      if ((p.pred.points[k] - p.gt.points[k]).norm() <= thr) ++correct;
    }
  }
  if (total == 0) throw EmptyMatchSet("no jointly valid prediction/ground-truth keypoints");
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

PoseReport evaluate_pose(const std::vector<PosePair>& pairs, PoseMode mode) {
  const PoseErrors e = pose_errors(pairs);
  PoseReport r;
  r.rmse = e.rmse;
  r.median = e.median;
  r.n_keypoints = e.n_keypoints;
  r.n_unmatched_gt = e.n_unmatched_gt;
  r.pck05 = pck(pairs, 0.05, mode);
  r.pck10 = pck(pairs, 0.10, mode);
  return r;
}

// ---------------------------------------------------------------------------
// Problem construction

double TrackingProblem::similarity(double distance) const {
  return std::clamp(1.0 - distance / scale, 0.0, 1.0);
}

namespace {

template <typename Obj, typename Dist>
TrackingProblem make_problem(const std::vector<Obj>& gt, const std::vector<Obj>& pred,
                             double gate, double scale, Dist dist) {
  std::map<int, std::pair<std::vector<const Obj*>, std::vector<const Obj*>>> by_frame;
  for (const auto& o : gt) by_frame[o.frame].first.push_back(&o);
  for (const auto& o : pred) by_frame[o.frame].second.push_back(&o);

  TrackingProblem problem;
  problem.gate = gate;
  problem.scale = scale;
  for (const auto& [frame, objs] : by_frame) {
    FrameObjects f;
    f.frame = frame;
    for (const Obj* g : objs.first) f.gt_ids.push_back(g->id);
    for (const Obj* p : objs.second) f.pred_ids.push_back(p->id);
    f.distance.resize(static_cast<Eigen::Index>(objs.first.size()),
                      static_cast<Eigen::Index>(objs.second.size()));
    for (std::size_t i = 0; i < objs.first.size(); ++i)
      for (std::size_t j = 0; j < objs.second.size(); ++j)
        f.distance(i, j) = dist(*objs.first[i], *objs.second[j]);
    problem.frames.push_back(std::move(f));
  }
  return problem;
}

}  // namespace

TrackingProblem make_problem_2d(const std::vector<TrackedBox>& gt,
                                const std::vector<TrackedBox>& pred, double iou_gate) {
  return make_problem(gt, pred, 1.0 - iou_gate, 1.0,
                      [](const TrackedBox& a, const TrackedBox& b) { return 1.0 - iou(a.box, b.box); });
}

TrackingProblem make_problem_3d(const std::vector<TrackedPoint>& gt,
                                const std::vector<TrackedPoint>& pred, double gate_mm) {
  return make_problem(gt, pred, gate_mm, gate_mm, [](const TrackedPoint& a, const TrackedPoint& b) {
    return (a.position - b.position).norm();
  });
}

// ---------------------------------------------------------------------------
// CLEAR-MOT

ClearMotResult clearmot(const TrackingProblem& problem) {
  ClearMotResult r;
  // Latest correspondence in both directions; a pair continues only while it
  // is still the latest match of both sides.
  std::map<int, int> last_match;       // gt id -> pred id
  std::map<int, int> last_match_pred;  // pred id -> gt id
  struct GtStats {
    int present = 0;
    int matched = 0;
    int state = 0;  // 0 never tracked, 1 tracked, 2 interrupted
  };
  std::map<int, GtStats> stats;
  double dist_sum = 0.0;

  for (const auto& f : problem.frames) {
    const std::size_t ng = f.gt_ids.size(), np = f.pred_ids.size();
    std::vector<int> gt_match(ng, -1);
    std::vector<char> pred_used(np, 0);

    for (std::size_t i = 0; i < ng; ++i) {
      const auto it = last_match.find(f.gt_ids[i]);
      if (it == last_match.end()) continue;
      if (last_match_pred.at(it->second) != f.gt_ids[i]) continue;
      for (std::size_t j = 0; j < np; ++j) {
        if (pred_used[j] || f.pred_ids[j] != it->second) continue;
        if (f.distance(i, j) <= problem.gate) {
          gt_match[i] = static_cast<int>(j);
          pred_used[j] = 1;
        }
        break;
      }
    }

    std::vector<std::size_t> rows, cols;
    for (std::size_t i = 0; i < ng; ++i)
      if (gt_match[i] < 0) rows.push_back(i);
    for (std::size_t j = 0; j < np; ++j)
      if (!pred_used[j]) cols.push_back(j);
    if (!rows.empty() && !cols.empty()) {
      Eigen::MatrixXd sub(rows.size(), cols.size());
      for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = 0; b < cols.size(); ++b) sub(a, b) = f.distance(rows[a], cols[b]);
      for (const auto& [a, b] : hungarian_gated(sub, problem.gate)) {
        const std::size_t i = rows[a], j = cols[b];
        gt_match[i] = static_cast<int>(j);
        pred_used[j] = 1;
        const auto prev = last_match.find(f.gt_ids[i]);
        if (prev != last_match.end() && prev->second != f.pred_ids[j]) ++r.ids;
      }
    }

    int matches = 0;
    for (std::size_t i = 0; i < ng; ++i) {
      auto& s = stats[f.gt_ids[i]];
      ++s.present;
      if (gt_match[i] >= 0) {
        ++matches;
        ++s.matched;
        dist_sum += f.distance(i, gt_match[i]);
        last_match[f.gt_ids[i]] = f.pred_ids[gt_match[i]];
        last_match_pred[f.pred_ids[gt_match[i]]] = f.gt_ids[i];
        if (s.state == 2) ++r.frag;
        s.state = 1;
      } else if (s.state == 1) {
        s.state = 2;
      }
    }
    r.tp += matches;
    r.fp += static_cast<int>(np) - matches;
    r.fn += static_cast<int>(ng) - matches;
    r.n_gt += static_cast<int>(ng);
  }

  r.n_frames = static_cast<int>(problem.frames.size());
  if (r.n_gt > 0)
    r.mota = 1.0 - static_cast<double>(r.fn + r.fp + r.ids) / r.n_gt;
  else
    r.mota = r.fp == 0 ? 1.0 : 0.0;
  r.motp = r.tp > 0 ? 1.0 - dist_sum / (r.tp * problem.scale) : 0.0;
  r.recall = r.n_gt > 0 ? static_cast<double>(r.tp) / r.n_gt : 0.0;
  r.precision = r.tp + r.fp > 0 ? static_cast<double>(r.tp) / (r.tp + r.fp) : 0.0;
  r.fpf = r.n_frames > 0 ? static_cast<double>(r.fp) / r.n_frames : 0.0;
  if (!stats.empty()) {
    int mt = 0, ml = 0;
    for (const auto& [id, s] : stats) {
      const double coverage = static_cast<double>(s.matched) / s.present;
      if (coverage >= 0.8) ++mt;
      if (coverage < 0.2) ++ml;
    }
    r.mt = static_cast<double>(mt) / stats.size();
    r.ml = static_cast<double>(ml) / stats.size();
  }
  return r;
}

// ---------------------------------------------------------------------------
// IDF1

namespace {

struct IdIndex {
  std::map<int, int> gt, pred;
};

IdIndex index_ids(const TrackingProblem& problem) {
  IdIndex idx;
  for (const auto& f : problem.frames) {
    for (int g : f.gt_ids) idx.gt.try_emplace(g, static_cast<int>(idx.gt.size()));
    for (int p : f.pred_ids) idx.pred.try_emplace(p, static_cast<int>(idx.pred.size()));
  }
  return idx;
}

}  // namespace

IdentityResult idf1(const TrackingProblem& problem) {
  const IdIndex idx = index_ids(problem);
  const auto G = static_cast<Eigen::Index>(idx.gt.size());
  const auto P = static_cast<Eigen::Index>(idx.pred.size());
  Eigen::MatrixXd overlap = Eigen::MatrixXd::Zero(G, P);
  int gt_dets = 0, pred_dets = 0;
  for (const auto& f : problem.frames) {
    gt_dets += static_cast<int>(f.gt_ids.size());
    pred_dets += static_cast<int>(f.pred_ids.size());
    for (std::size_t i = 0; i < f.gt_ids.size(); ++i)
      for (std::size_t j = 0; j < f.pred_ids.size(); ++j)
        if (f.distance(i, j) <= problem.gate)
          overlap(idx.gt.at(f.gt_ids[i]), idx.pred.at(f.pred_ids[j])) += 1.0;
  }

  IdentityResult r;
  if (G > 0 && P > 0)
    for (const auto& [g, p] : hungarian(-overlap)) r.idtp += static_cast<int>(overlap(g, p));
  r.idfp = pred_dets - r.idtp;
  r.idfn = gt_dets - r.idtp;
  const double denom = 2.0 * r.idtp + r.idfp + r.idfn;
  r.idf1 = denom > 0.0 ? 2.0 * r.idtp / denom : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// HOTA

std::array<double, kHotaAlphaCount> hota_alphas() {
  std::array<double, kHotaAlphaCount> a{};
  for (int i = 0; i < kHotaAlphaCount; ++i) a[i] = 0.05 * (i + 1);
  return a;
}

HotaResult hota(const TrackingProblem& problem) {
  constexpr double eps = std::numeric_limits<double>::epsilon();
  const IdIndex idx = index_ids(problem);
  const auto G = static_cast<Eigen::Index>(idx.gt.size());
  const auto P = static_cast<Eigen::Index>(idx.pred.size());
  const auto alphas = hota_alphas();

  auto similarity_of = [&](const FrameObjects& f) {
    return f.distance.unaryExpr([&](double d) { return problem.similarity(d); }).eval();
  };

  // Global alignment between every GT and predicted trajectory.
  Eigen::MatrixXd potential = Eigen::MatrixXd::Zero(G, P);
  Eigen::VectorXd gt_count = Eigen::VectorXd::Zero(G);
  Eigen::VectorXd pred_count = Eigen::VectorXd::Zero(P);
  for (const auto& f : problem.frames) {
    for (int g : f.gt_ids) gt_count(idx.gt.at(g)) += 1.0;
    for (int p : f.pred_ids) pred_count(idx.pred.at(p)) += 1.0;
    if (f.gt_ids.empty() || f.pred_ids.empty()) continue;
    const Eigen::MatrixXd S = similarity_of(f);
    const Eigen::VectorXd row_sum = S.rowwise().sum();
    const Eigen::RowVectorXd col_sum = S.colwise().sum();
    for (Eigen::Index i = 0; i < S.rows(); ++i)
      for (Eigen::Index j = 0; j < S.cols(); ++j) {
        const double denom = row_sum(i) + col_sum(j) - S(i, j);
        if (denom > eps)
          potential(idx.gt.at(f.gt_ids[i]), idx.pred.at(f.pred_ids[j])) += S(i, j) / denom;
      }
  }
  Eigen::MatrixXd alignment = Eigen::MatrixXd::Zero(G, P);
  for (Eigen::Index g = 0; g < G; ++g)
    for (Eigen::Index p = 0; p < P; ++p) {
      const double denom = gt_count(g) + pred_count(p) - potential(g, p);
      alignment(g, p) = denom > 0.0 ? potential(g, p) / denom : 0.0;
    }

  std::array<Eigen::MatrixXd, kHotaAlphaCount> match_count;
  for (auto& m : match_count) m = Eigen::MatrixXd::Zero(G, P);
  std::array<double, kHotaAlphaCount> tp{}, fn{}, fp{};

  for (const auto& f : problem.frames) {
    const auto ng = static_cast<double>(f.gt_ids.size());
    const auto np = static_cast<double>(f.pred_ids.size());
    if (f.gt_ids.empty() || f.pred_ids.empty()) {
      for (int a = 0; a < kHotaAlphaCount; ++a) {
        fn[a] += ng;
        fp[a] += np;
      }
      continue;
    }
    const Eigen::MatrixXd S = similarity_of(f);
    Eigen::MatrixXd score(S.rows(), S.cols());
    for (Eigen::Index i = 0; i < S.rows(); ++i)
      for (Eigen::Index j = 0; j < S.cols(); ++j)
        score(i, j) = alignment(idx.gt.at(f.gt_ids[i]), idx.pred.at(f.pred_ids[j])) * S(i, j);
    const Assignment assignment = hungarian(-score);
    for (int a = 0; a < kHotaAlphaCount; ++a) {
      double matched = 0.0;
      for (const auto& [i, j] : assignment) {
        if (S(i, j) < alphas[a] - eps) continue;
        matched += 1.0;
        match_count[a](idx.gt.at(f.gt_ids[i]), idx.pred.at(f.pred_ids[j])) += 1.0;
      }
      tp[a] += matched;
      fn[a] += ng - matched;
      fp[a] += np - matched;
    }
  }

  HotaResult r;
  for (int a = 0; a < kHotaAlphaCount; ++a) {
    double assa_sum = 0.0;
    for (Eigen::Index g = 0; g < G; ++g)
      for (Eigen::Index p = 0; p < P; ++p) {
        const double m = match_count[a](g, p);
        if (m == 0.0) continue;
        const double ass_iou = m / std::max(1.0, gt_count(g) + pred_count(p) - m);
        assa_sum += m * ass_iou;
      }
    r.assa_alpha[a] = assa_sum / std::max(1.0, tp[a]);
    r.deta_alpha[a] = tp[a] / std::max(1.0, tp[a] + fn[a] + fp[a]);
    r.hota_alpha[a] = std::sqrt(r.deta_alpha[a] * r.assa_alpha[a]);
    r.hota += r.hota_alpha[a];
    r.deta += r.deta_alpha[a];
    r.assa += r.assa_alpha[a];
  }
  r.hota /= kHotaAlphaCount;
  r.deta /= kHotaAlphaCount;
  r.assa /= kHotaAlphaCount;
  return r;
}

MotReport evaluate_mot(const TrackingProblem& problem) {
  const ClearMotResult c = clearmot(problem);
  MotReport r;
  r.hota = hota(problem).hota;
  r.mota = c.mota;
  r.motp = c.motp;
  r.recall = c.recall;
  r.precision = c.precision;
  r.mt = c.mt;
  r.ml = c.ml;
  r.fpf = c.fpf;
  r.ids = c.ids;
  r.frag = c.frag;
  r.idf1 = idf1(problem).idf1;
  return r;
}

// ---------------------------------------------------------------------------
// Gap interpolation

KeypointTrack interpolate_gaps(const KeypointTrack& track) {
  if (track.empty()) return {};
  std::map<int, const TrackSample*> by_frame;
  std::size_t n_kp = 0;
  for (const auto& s : track) {
    by_frame[s.frame] = &s;
    n_kp = std::max(n_kp, s.keypoints.size());
  }
  const int first = by_frame.begin()->first;
  const int last = by_frame.rbegin()->first;

  KeypointTrack out;
  out.reserve(static_cast<std::size_t>(last - first + 1));
  for (int f = first; f <= last; ++f) {
    TrackSample s{f, std::vector<Keypoint3D>(n_kp)};
    if (const auto it = by_frame.find(f); it != by_frame.end())
      for (std::size_t k = 0; k < it->second->keypoints.size(); ++k) s.keypoints[k] = it->second->keypoints[k];
    out.push_back(std::move(s));
  }

  for (std::size_t k = 0; k < n_kp; ++k) {
    int prev = -1;  // index into out of the last valid sample
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (!out[i].keypoints[k].valid) continue;
      if (prev >= 0 && i - static_cast<std::size_t>(prev) > 1) {
        const Point3 a = out[prev].keypoints[k].position;
        const Point3 b = out[i].keypoints[k].position;
        const double span = static_cast<double>(i - static_cast<std::size_t>(prev));
        for (std::size_t m = static_cast<std::size_t>(prev) + 1; m < i; ++m) {
          const double t = static_cast<double>(m - static_cast<std::size_t>(prev)) / span;
          out[m].keypoints[k] = {a + t * (b - a), true};
        }
      }
      prev = static_cast<int>(i);
    }
  }
  return out;
}

}  // namespace muppet
