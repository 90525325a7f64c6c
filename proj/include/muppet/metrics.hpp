#pragma once

#include <muppet/tracking2d.hpp>
#include <muppet/types.hpp>

#include <Eigen/Core>

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace muppet {

// ---------------------------------------------------------------------------
// Pose accuracy

/// Keypoints of one individual in one frame. 2D points are stored as (u, v, 0).
struct KeypointInstance {
  std::vector<Vec3> points;
  std::vector<bool> valid;
  std::optional<BBox> bbox;  ///< ground-truth box, required for 2D PCK
};

/// A prediction matched to its ground truth (same individual, same frame).
struct PosePair {
  KeypointInstance pred;
  KeypointInstance gt;
};

enum class PoseMode { k2D, k3D };

struct PoseErrors {
  double rmse = 0.0;
  double median = 0.0;
  std::size_t n_keypoints = 0;    ///< jointly valid keypoints evaluated
  std::size_t n_unmatched_gt = 0; ///< valid GT keypoints without a valid prediction
};

/// RMSE and median of per-keypoint Euclidean errors. Throws EmptyMatchSet.
PoseErrors pose_errors(const std::vector<PosePair>& pairs);

/// Per-instance PCK threshold: largest GT bbox side (2D) or the largest
/// distance between two valid GT keypoints (3D), times `fraction`.
/// Throws DegenerateThreshold.
double pck_threshold(const KeypointInstance& gt, double fraction, PoseMode mode);

/// Percentage (0-100) of jointly valid keypoints whose error is within the
/// per-instance threshold. Throws EmptyMatchSet / DegenerateThreshold.
double pck(const std::vector<PosePair>& pairs, double fraction, PoseMode mode);

struct PoseReport {
  double rmse = 0.0;
  double median = 0.0;
  double pck05 = 0.0;
  double pck10 = 0.0;
  std::size_t n_keypoints = 0;
  std::size_t n_unmatched_gt = 0;
};

PoseReport evaluate_pose(const std::vector<PosePair>& pairs, PoseMode mode);

// ---------------------------------------------------------------------------
// Tracking accuracy

/// Ground-truth and predicted objects of one frame with their pairwise
/// distances (rows = gt, cols = pred).
struct FrameObjects {
  int frame = 0;
  std::vector<int> gt_ids;
  std::vector<int> pred_ids;
  Eigen::MatrixXd distance;
};

/// A whole sequence prepared for evaluation. Pairs with distance > gate can
/// never match. Similarity for HOTA and MOTP is max(0, 1 - distance / scale).
struct TrackingProblem {
  std::vector<FrameObjects> frames;
  double gate = 0.5;
  double scale = 1.0;

  double similarity(double distance) const;
};

struct TrackedBox {
  int frame = 0;
  int id = 0;
  BBox box;
};

struct TrackedPoint {
  int frame = 0;
  int id = 0;
  Point3 position = Point3::Zero();
};

inline constexpr double kIouGate2D = 0.5;
inline constexpr double kDistanceGate3DMm = 30.0;

/// 2D problem: distance = 1 - IoU, matches need IoU >= 1 - gate (0.5 by default).
TrackingProblem make_problem_2d(const std::vector<TrackedBox>& gt,
                                const std::vector<TrackedBox>& pred,
                                double iou_gate = kIouGate2D);
/// 3D problem: Euclidean distance in mm, gate and similarity scale = gate_mm.
TrackingProblem make_problem_3d(const std::vector<TrackedPoint>& gt,
                                const std::vector<TrackedPoint>& pred,
                                double gate_mm = kDistanceGate3DMm);

struct ClearMotResult {
  double mota = 0.0;
  double motp = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  double mt = 0.0;  ///< fraction of GT tracks covered >= 80%
  double ml = 0.0;  ///< fraction of GT tracks covered < 20%
  double fpf = 0.0;
  int ids = 0;
  int frag = 0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
  int n_gt = 0;
  int n_frames = 0;
};

/// CLEAR-MOT accumulation: per frame, previous matches that are still within
/// the gate are kept, the rest are matched by gated Hungarian assignment.
ClearMotResult clearmot(const TrackingProblem& problem);

struct IdentityResult {
  double idf1 = 0.0;
  int idtp = 0;
  int idfp = 0;
  int idfn = 0;
};

/// Whole-sequence optimal GT/prediction trajectory assignment (IDF1).
IdentityResult idf1(const TrackingProblem& problem);

inline constexpr int kHotaAlphaCount = 19;

struct HotaResult {
  double hota = 0.0;
  double deta = 0.0;
  double assa = 0.0;
  std::array<double, kHotaAlphaCount> hota_alpha{};
  std::array<double, kHotaAlphaCount> deta_alpha{};
  std::array<double, kHotaAlphaCount> assa_alpha{};
};

/// Localization thresholds 0.05, 0.10, ..., 0.95.
std::array<double, kHotaAlphaCount> hota_alphas();

HotaResult hota(const TrackingProblem& problem);

struct MotReport {
  double hota = 0.0;
  double mota = 0.0;
  double motp = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  double mt = 0.0;
  double ml = 0.0;
  double fpf = 0.0;
  int ids = 0;
  int frag = 0;
  double idf1 = 0.0;
};

MotReport evaluate_mot(const TrackingProblem& problem);

// ---------------------------------------------------------------------------
// Ground-truth preparation

/// One individual's keypoints over time, sorted by frame.
struct TrackSample {
  int frame = 0;
  std::vector<Keypoint3D> keypoints;
};
using KeypointTrack = std::vector<TrackSample>;

/// Fills interior gaps (missing frames or invalid keypoints bracketed by valid
/// samples) by per-coordinate linear interpolation. Leading and trailing gaps
/// stay missing. Output covers every frame from the first to the last sample.
KeypointTrack interpolate_gaps(const KeypointTrack& track);

}  // namespace muppet
