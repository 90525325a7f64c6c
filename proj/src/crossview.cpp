#include <muppet/crossview.hpp>

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <tuple>

namespace muppet {

namespace {

struct PairTask {
  std::size_t va, da, vb, db;
};

std::vector<PairTask> enumerate_pairs(const PerViewDetections& detections) {
  std::vector<PairTask> tasks;
  for (std::size_t va = 0; va < detections.size(); ++va)
    for (std::size_t vb = va + 1; vb < detections.size(); ++vb)
      for (std::size_t da = 0; da < detections[va].size(); ++da)
        for (std::size_t db = 0; db < detections[vb].size(); ++db)
          tasks.push_back({va, da, vb, db});
  return tasks;
}

std::optional<CandidatePose> triangulate_pair(const PerViewDetections& detections,
                                              const CameraRig& rig, const PairTask& t) {
  const Detection2D& a = detections[t.va][t.da];
  const Detection2D& b = detections[t.vb][t.db];
  const std::size_t n = std::min(a.keypoints.size(), b.keypoints.size());

  CandidatePose c{t.va, t.da, t.vb, t.db, std::vector<Keypoint3D>(n), 0.0};
  std::size_t valid = 0;
  double reproj_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!a.keypoints[k].usable() || !b.keypoints[k].usable()) continue;
    const Observation obs[2] = {{&rig[t.va], a.keypoints[k].px}, {&rig[t.vb], b.keypoints[k].px}};
    const auto tri = triangulate(obs);
    if (!tri) continue;
    c.pose[k] = {tri->point, true};
    reproj_sum += tri->rms_reprojection_px;
    ++valid;
  }
  if (valid == 0) return std::nullopt;
  c.mean_pairwise_reproj = reproj_sum / static_cast<double>(valid);
  return c;
}

std::vector<CandidatePose> compact(std::vector<std::optional<CandidatePose>>& slots) {
  std::vector<CandidatePose> out;
  for (auto& s : slots)
    if (s) out.push_back(std::move(*s));
  return out;
}

std::optional<double> try_pose_distance(const std::vector<Keypoint3D>& a,
                                        const std::vector<Keypoint3D>& b) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < std::min(a.size(), b.size()); ++k) {
    if (!a[k].valid || !b[k].valid) continue;
    sum += (a[k].position - b[k].position).norm();
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

using RayBundle = std::vector<std::optional<Ray>>;

struct Cluster {
  std::vector<NodeRef> members;  // sorted
  std::uint64_t view_mask = 0;
  std::optional<std::vector<Keypoint3D>> rep;
  bool active = true;
};

class GreedyMatcher {
 public:
  GreedyMatcher(const std::vector<CandidatePose>& candidates, const PerViewDetections& detections,
                const CameraRig& rig)
      : candidates_(candidates) {
    if (detections.size() > 64) throw std::invalid_argument("greedy_match supports <= 64 views");
    for (std::size_t v = 0; v < detections.size(); ++v) {
      node_base_.push_back(rays_.size());
      for (std::size_t d = 0; d < detections[v].size(); ++d) {
        RayBundle bundle;
        for (const auto& k : detections[v][d].keypoints)
          bundle.push_back(k.usable() ? back_project(rig[v], k.px) : std::nullopt);
        rays_.push_back(std::move(bundle));
        Cluster c;
        c.members = {{v, d}};
        c.view_mask = std::uint64_t{1} << v;
        clusters_.push_back(std::move(c));
      }
    }
    for (std::size_t i = 0; i < candidates_.size(); ++i) {
      const auto& c = candidates_[i];
      by_pair_[{NodeRef{c.view_a, c.det_a}, NodeRef{c.view_b, c.det_b}}] = i;
    }
  }

  Clustering run(double threshold_mm) {
    const std::size_t n = clusters_.size();
    const double inf = std::numeric_limits<double>::infinity();
    // Pairwise distance cache over cluster slots; inf marks inadmissible.
    dist_.assign(n, std::vector<double>(n, inf));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) dist_[i][j] = distance(clusters_[i], clusters_[j]);

    while (true) {
      double best = inf;
      std::size_t bi = 0, bj = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!clusters_[i].active) continue;
        for (std::size_t j = i + 1; j < n; ++j) {
          if (!clusters_[j].active) continue;
          const double d = dist_[i][j];
          if (d < best || (d == best && d < inf && tie_key(i, j) < tie_key(bi, bj))) {
            best = d;
            bi = i;
            bj = j;
          }
        }
      }
      if (!(best <= threshold_mm)) break;
      merge(bi, bj);
      for (std::size_t k = 0; k < n; ++k) {
        if (k == bi || !clusters_[k].active) continue;
        const double d = distance(clusters_[bi], clusters_[k]);
        if (k < bi) dist_[k][bi] = d; else dist_[bi][k] = d;
      }
    }

    Clustering out;
    for (const auto& c : clusters_)
      if (c.active) out.push_back(c.members);
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
    return out;
  }

 private:
  const RayBundle& rays(const NodeRef& r) const { return rays_[node_base_[r.view] + r.det]; }

  const CandidatePose* candidate(NodeRef a, NodeRef b) const {
    if (b < a) std::swap(a, b);
    const auto it = by_pair_.find({a, b});
    return it == by_pair_.end() ? nullptr : &candidates_[it->second];
  }

  std::tuple<NodeRef, NodeRef> tie_key(std::size_t i, std::size_t j) const {
    NodeRef a = clusters_[i].members.front(), b = clusters_[j].members.front();
    if (b < a) std::swap(a, b);
    return {a, b};
  }

  double distance(const Cluster& a, const Cluster& b) const {
    const double inf = std::numeric_limits<double>::infinity();
    if (a.view_mask & b.view_mask) return inf;
    const bool single_a = a.members.size() == 1, single_b = b.members.size() == 1;

    if (single_a && single_b) {
      const CandidatePose* c = candidate(a.members.front(), b.members.front());
      if (!c) return inf;
      const auto& ra = rays(a.members.front());
      const auto& rb = rays(b.members.front());
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t k = 0; k < c->pose.size(); ++k) {
        if (!c->pose[k].valid || !ra[k] || !rb[k]) continue;
        sum += ray_distance(*ra[k], *rb[k]);
        ++n;
      }
      return n ? sum / static_cast<double>(n) : inf;
    }
    if (single_a || single_b) {
      const Cluster& one = single_a ? a : b;
      const Cluster& many = single_a ? b : a;
      if (!many.rep) return inf;
      const auto& r = rays(one.members.front());
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t k = 0; k < many.rep->size() && k < r.size(); ++k) {
        if (!(*many.rep)[k].valid || !r[k]) continue;
        sum += point_ray_distance((*many.rep)[k].position, *r[k]);
        ++n;
      }
      return n ? sum / static_cast<double>(n) : inf;
    }
    if (!a.rep || !b.rep) return inf;
    return try_pose_distance(*a.rep, *b.rep).value_or(inf);
  }

  void merge(std::size_t i, std::size_t j) {
    Cluster& a = clusters_[i];
    Cluster& b = clusters_[j];
    a.members.insert(a.members.end(), b.members.begin(), b.members.end());
    std::sort(a.members.begin(), a.members.end());
    a.view_mask |= b.view_mask;
    b.active = false;

    // Representative: keypoint-wise centroid of member-pair candidates.
    std::vector<Vec3> sum;
    std::vector<int> count;
    for (std::size_t x = 0; x < a.members.size(); ++x) {
      for (std::size_t y = x + 1; y < a.members.size(); ++y) {
        const CandidatePose* c = candidate(a.members[x], a.members[y]);
        if (!c) continue;
        if (sum.empty()) {
          sum.assign(c->pose.size(), Vec3::Zero());
          count.assign(c->pose.size(), 0);
        }
        for (std::size_t k = 0; k < c->pose.size() && k < sum.size(); ++k) {
          if (!c->pose[k].valid) continue;
          sum[k] += c->pose[k].position;
          ++count[k];
        }
      }
    }
    if (sum.empty()) {
      a.rep.reset();
      return;
    }
    std::vector<Keypoint3D> rep(sum.size());
    for (std::size_t k = 0; k < sum.size(); ++k)
      if (count[k] > 0) rep[k] = {sum[k] / count[k], true};
    a.rep = std::move(rep);
  }

  const std::vector<CandidatePose>& candidates_;
  std::vector<std::size_t> node_base_;
  std::vector<RayBundle> rays_;
  std::vector<Cluster> clusters_;
  std::map<std::pair<NodeRef, NodeRef>, std::size_t> by_pair_;
  std::vector<std::vector<double>> dist_;
};

}  // namespace

std::size_t CandidatePose::valid_count() const {
  return static_cast<std::size_t>(
      std::count_if(pose.begin(), pose.end(), [](const Keypoint3D& k) { return k.valid; }));
}

std::vector<CandidatePose> candidate_poses_serial(const PerViewDetections& detections,
                                                  const CameraRig& rig) {
  const auto tasks = enumerate_pairs(detections);
  std::vector<std::optional<CandidatePose>> slots(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) slots[i] = triangulate_pair(detections, rig, tasks[i]);
  return compact(slots);
}

std::vector<CandidatePose> candidate_poses(const PerViewDetections& detections,
                                           const CameraRig& rig) {
  const auto tasks = enumerate_pairs(detections);
  std::vector<std::optional<CandidatePose>> slots(tasks.size());
  const auto n = static_cast<std::int64_t>(tasks.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t i = 0; i < n; ++i) slots[i] = triangulate_pair(detections, rig, tasks[i]);
  return compact(slots);
}

double pose_distance(const std::vector<Keypoint3D>& a, const std::vector<Keypoint3D>& b) {
  const auto d = try_pose_distance(a, b);
  if (!d) throw NoSharedKeypoints("poses share no valid keypoint");
  return *d;
}

Clustering greedy_match(const std::vector<CandidatePose>& candidates,
                        const PerViewDetections& detections, const CameraRig& rig,
                        double threshold_mm) {
  return GreedyMatcher(candidates, detections, rig).run(threshold_mm);
}

// ---------------------------------------------------------------------------
// GlobalIdentityMap

void GlobalIdentityMap::assign(const TrackKey& key, int global_id) {
  if (entries_.contains(key))
    throw std::invalid_argument("track (" + key.view_id + "," + std::to_string(key.local_id) +
                                ") is already mapped");
  for (const auto& [k, g] : entries_)
    if (g == global_id && k.view_id == key.view_id)
      throw std::invalid_argument("global " + std::to_string(global_id) +
                                  " already owns a track in view " + key.view_id);
  entries_.emplace(key, global_id);
  n_globals_ = std::max(n_globals_, global_id + 1);
}

std::optional<int> GlobalIdentityMap::find(const TrackKey& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::vector<int> GlobalIdentityMap::global_ids() const {
  std::vector<int> ids;
  for (const auto& [k, g] : entries_) ids.push_back(g);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::vector<TrackKey> GlobalIdentityMap::members(int global_id) const {
  std::vector<TrackKey> out;
  for (const auto& [k, g] : entries_)
    if (g == global_id) out.push_back(k);
  return out;
}

GlobalIdentityMap match_identities(const std::vector<std::vector<TrackedDetection>>& tracked,
                                   const CameraRig& rig, double threshold_mm) {
  PerViewDetections detections(tracked.size());
  for (std::size_t v = 0; v < tracked.size(); ++v)
    for (const auto& t : tracked[v]) detections[v].push_back(t.detection);

  const auto candidates = candidate_poses(detections, rig);
  const Clustering clusters = greedy_match(candidates, detections, rig, threshold_mm);

  GlobalIdentityMap map;
  std::size_t singletons = 0;
  for (std::size_t g = 0; g < clusters.size(); ++g) {
    if (clusters[g].size() == 1) ++singletons;
    for (const NodeRef& n : clusters[g])
      map.assign({rig[n.view].id(), tracked[n.view][n.det].local_track_id}, static_cast<int>(g));
  }
  if (singletons > 0)
    spdlog::warn("identity matching left {} detection(s) unmatched across views; "
                 "they become single-view identities",
                 singletons);
  spdlog::debug("identity matching: {} candidates, {} identities", candidates.size(),
                clusters.size());
  return map;
}

}  // namespace muppet
