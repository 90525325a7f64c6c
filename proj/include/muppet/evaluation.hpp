#pragma once

#include <muppet/fusion3d.hpp>
#include <muppet/metrics.hpp>
#include <muppet/synthgen.hpp>
#include <muppet/tracking2d.hpp>

#include <vector>

namespace muppet {

// Adapters from pipeline/ground-truth records to metric inputs.

inline constexpr double kPoseMatchMm = 200.0;

/// Pairs predicted and GT poses frame by frame with a Hungarian assignment on
/// the mean distance over jointly valid keypoints; pairs farther apart than
/// `max_mean_distance_mm` stay unmatched. GT poses left unmatched are added
/// with an all-invalid prediction so their keypoints count as unmatched.
std::vector<PosePair> match_poses_3d(const std::vector<Pose3D>& pred,
                                     const std::vector<Pose3D>& gt,
                                     double max_mean_distance_mm = kPoseMatchMm);

/// Same for 2D: per (view, frame), bbox IoU >= iou_gate. Clutter GT (id < 0)
/// is ignored.
std::vector<PosePair> match_poses_2d(const std::vector<Detection2D>& pred,
                                     const std::vector<SidecarEntry>& gt,
                                     double iou_gate = kIouGate2D);

/// 3D tracking problem on one keypoint (bottom keel by default). GT tracks are
/// gap-interpolated first when `interpolate_gt` is set.
TrackingProblem mot_problem_3d(const std::vector<Pose3D>& pred, const std::vector<Pose3D>& gt,
                               double gate_mm = kDistanceGate3DMm,
                               std::size_t keypoint = kp::kBottomKeel, bool interpolate_gt = true);

/// 2D tracking problem over all views at once: each (view, frame) becomes one
/// evaluation frame and identities are made unique per view.
TrackingProblem mot_problem_2d(const std::vector<TrackedDetection>& pred,
                               const std::vector<SidecarEntry>& gt, double iou_gate = kIouGate2D);

/// Flattens [frame][individual] ground truth.
std::vector<Pose3D> flatten(const GroundTruth& gt);

}  // namespace muppet
