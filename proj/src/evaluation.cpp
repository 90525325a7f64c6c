#include <muppet/evaluation.hpp>

#include <muppet/assignment.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

namespace muppet {

namespace {

KeypointInstance instance_of(const std::vector<Keypoint3D>& kps) {
  KeypointInstance inst;
  for (const auto& k : kps) {
    inst.points.push_back(k.position);
    inst.valid.push_back(k.valid);
  }
  return inst;
}

KeypointInstance instance_of(const std::vector<Keypoint2D>& kps, const BBox* box) {
  KeypointInstance inst;
  for (const auto& k : kps) {
    inst.points.emplace_back(k.px.x(), k.px.y(), 0.0);
    inst.valid.push_back(k.usable());
  }
  if (box) inst.bbox = *box;
  return inst;
}

KeypointInstance invalid_like(const KeypointInstance& gt) {
  KeypointInstance inst;
  inst.points.assign(gt.points.size(), Vec3::Zero());
  inst.valid.assign(gt.points.size(), false);
  return inst;
}

double mean_keypoint_distance(const std::vector<Keypoint3D>& a, const std::vector<Keypoint3D>& b) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t k = 0; k < std::min(a.size(), b.size()); ++k)
    if (a[k].valid && b[k].valid) {
      sum += (a[k].position - b[k].position).norm();
      ++n;
    }
  return n > 0 ? sum / n : std::numeric_limits<double>::infinity();
}

// Runs a gated assignment on a cost matrix whose forbidden entries may be infinite.
Assignment gated(Eigen::MatrixXd cost, double gate) {
  for (Eigen::Index i = 0; i < cost.size(); ++i)
    if (!std::isfinite(cost(i))) cost(i) = gate + 1.0;
  return hungarian_gated(cost, gate);
}

}  // namespace

std::vector<PosePair> match_poses_3d(const std::vector<Pose3D>& pred,
                                     const std::vector<Pose3D>& gt,
                                     double max_mean_distance_mm) {
  std::map<int, std::pair<std::vector<const Pose3D*>, std::vector<const Pose3D*>>> by_frame;
  for (const auto& g : gt) by_frame[g.frame].first.push_back(&g);
  for (const auto& p : pred) by_frame[p.frame].second.push_back(&p);

  std::vector<PosePair> pairs;
  for (const auto& [frame, objs] : by_frame) {
    const auto& [gts, preds] = objs;
    if (gts.empty()) continue;
    std::vector<int> match(gts.size(), -1);
    if (!preds.empty()) {
      Eigen::MatrixXd cost(gts.size(), preds.size());
      for (std::size_t i = 0; i < gts.size(); ++i)
        for (std::size_t j = 0; j < preds.size(); ++j)
          cost(i, j) = mean_keypoint_distance(gts[i]->keypoints, preds[j]->keypoints);
      for (const auto& [i, j] : gated(cost, max_mean_distance_mm)) match[i] = j;
    }
    for (std::size_t i = 0; i < gts.size(); ++i) {
      KeypointInstance g = instance_of(gts[i]->keypoints);
      KeypointInstance p = match[i] >= 0 ? instance_of(preds[match[i]]->keypoints) : invalid_like(g);
      pairs.push_back({std::move(p), std::move(g)});
    }
  }
  return pairs;
}

std::vector<PosePair> match_poses_2d(const std::vector<Detection2D>& pred,
                                     const std::vector<SidecarEntry>& gt, double iou_gate) {
  using Key = std::pair<std::string, int>;
  std::map<Key, std::pair<std::vector<const SidecarEntry*>, std::vector<const Detection2D*>>> groups;
  for (const auto& g : gt)
    if (g.id >= 0) groups[{g.view_id, g.frame}].first.push_back(&g);
  for (const auto& p : pred) groups[{p.view_id, p.frame}].second.push_back(&p);

  std::vector<PosePair> pairs;
  for (const auto& [key, objs] : groups) {
    const auto& [gts, preds] = objs;
    if (gts.empty()) continue;
    std::vector<int> match(gts.size(), -1);
    if (!preds.empty()) {
      Eigen::MatrixXd cost(gts.size(), preds.size());
      for (std::size_t i = 0; i < gts.size(); ++i)
        for (std::size_t j = 0; j < preds.size(); ++j)
          cost(i, j) = 1.0 - iou(gts[i]->bbox, preds[j]->bbox);
      for (const auto& [i, j] : gated(cost, 1.0 - iou_gate)) match[i] = j;
    }
    for (std::size_t i = 0; i < gts.size(); ++i) {
      KeypointInstance g = instance_of(gts[i]->keypoints, &gts[i]->bbox);
      KeypointInstance p =
          match[i] >= 0 ? instance_of(preds[match[i]]->keypoints, nullptr) : invalid_like(g);
      pairs.push_back({std::move(p), std::move(g)});
    }
  }
  return pairs;
}

TrackingProblem mot_problem_3d(const std::vector<Pose3D>& pred, const std::vector<Pose3D>& gt,
                               double gate_mm, std::size_t keypoint, bool interpolate_gt) {
  std::map<int, KeypointTrack> tracks;
  for (const auto& g : gt) tracks[g.global_id].push_back({g.frame, g.keypoints});

  std::vector<TrackedPoint> gt_points, pred_points;
  for (auto& [id, track] : tracks) {
    std::sort(track.begin(), track.end(),
              [](const TrackSample& a, const TrackSample& b) { return a.frame < b.frame; });
    const KeypointTrack filled = interpolate_gt ? interpolate_gaps(track) : track;
    for (const auto& s : filled)
      if (keypoint < s.keypoints.size() && s.keypoints[keypoint].valid)
        gt_points.push_back({s.frame, id, s.keypoints[keypoint].position});
  }
  for (const auto& p : pred)
    if (keypoint < p.keypoints.size() && p.keypoints[keypoint].valid)
      pred_points.push_back({p.frame, p.global_id, p.keypoints[keypoint].position});
  return make_problem_3d(gt_points, pred_points, gate_mm);
}

TrackingProblem mot_problem_2d(const std::vector<TrackedDetection>& pred,
                               const std::vector<SidecarEntry>& gt, double iou_gate) {
  // Each view gets its own block of frame and identity numbers.
  constexpr int kBlock = 1 << 20;
  std::map<std::string, int> views;
  for (const auto& g : gt) views.emplace(g.view_id, 0);
  for (const auto& p : pred) views.emplace(p.detection.view_id, 0);
  int index = 0;
  for (auto& [name, v] : views) v = index++;

  std::vector<TrackedBox> gt_boxes, pred_boxes;
  for (const auto& g : gt)
    if (g.id >= 0) {
      const int v = views.at(g.view_id);
      gt_boxes.push_back({v * kBlock + g.frame, v * kBlock + g.id, g.bbox});
    }
  for (const auto& p : pred) {
    const int v = views.at(p.detection.view_id);
    pred_boxes.push_back({v * kBlock + p.detection.frame, v * kBlock + p.local_track_id,
                          p.detection.bbox});
  }
  return make_problem_2d(gt_boxes, pred_boxes, iou_gate);
}

std::vector<Pose3D> flatten(const GroundTruth& gt) {
  std::vector<Pose3D> out;
  for (const auto& frame : gt.frames) out.insert(out.end(), frame.begin(), frame.end());
  return out;
}

}  // namespace muppet
