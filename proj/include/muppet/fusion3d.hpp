#pragma once

#include <muppet/crossview.hpp>
#include <muppet/geometry.hpp>
#include <muppet/tracking2d.hpp>
#include <muppet/types.hpp>

#include <Eigen/Core>

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace muppet {

struct Pose3D {
  int frame = 0;
  int global_id = 0;
  std::vector<Keypoint3D> keypoints;
  std::vector<std::string> contributing_views;  ///< sorted by rig order
  bool smoothed = false;

  bool any_valid() const;
};

/// Tracker output of one frame, indexed by view (rig order).
using FrameAssociations = std::vector<std::vector<TrackedDetection>>;

struct FusionOptions {
  /// A view whose median keypoint reprojection error exceeds this gate is
  /// treated as a lost or switched tracklet and skipped for the frame.
  double view_consistency_gate_px = 25.0;
  RefineOptions refine;
};

/// Triangulates every global identity of the map for one frame. Keypoints seen
/// in fewer than two views are invalid. Output is sorted by global id and holds
/// one pose per global. Globals are processed in parallel with OpenMP.
std::vector<Pose3D> fuse_frame(int frame, const FrameAssociations& associations,
                               const GlobalIdentityMap& id_map, const CameraRig& rig,
                               const FusionOptions& options = {});
/// Serial reference of fuse_frame; bit-identical output.
std::vector<Pose3D> fuse_frame_serial(int frame, const FrameAssociations& associations,
                                      const GlobalIdentityMap& id_map, const CameraRig& rig,
                                      const FusionOptions& options = {});

struct SmootherConfig {
  double measurement_sigma_mm = 5.0;
  double accel_sigma_mm = 2.0;  ///< per frame^2
  double initial_velocity_sigma_mm = 50.0;
  int gap_limit = 10;

  void validate() const;
};

/// Constant-velocity Kalman filter for one keypoint: state (position, velocity)
/// in mm and mm/frame.
class KeypointFilter {
 public:
  using State = Eigen::Matrix<double, 6, 1>;
  using Covariance = Eigen::Matrix<double, 6, 6>;

  bool initialized() const { return initialized_; }
  int gap() const { return gap_; }
  const State& state() const { return x_; }
  const Covariance& covariance() const { return P_; }

  /// One frame. Returns the output keypoint and whether it is prediction-only.
  Keypoint3D step(const Keypoint3D& measurement, const SmootherConfig& config,
                  bool& predicted_only);

 private:
  bool initialized_ = false;
  int gap_ = 0;
  State x_ = State::Zero();
  Covariance P_ = Covariance::Identity();
};

/// Per (global id, keypoint) temporal smoothing.
class Smoother3D {
 public:
  explicit Smoother3D(SmootherConfig config = {});

  /// Poses of one frame; frames must be presented in order per global id.
  std::vector<Pose3D> step(const std::vector<Pose3D>& poses);

  const SmootherConfig& config() const { return config_; }
  const KeypointFilter* filter(int global_id, std::size_t keypoint) const;

 private:
  SmootherConfig config_;
  std::map<int, std::vector<KeypointFilter>> filters_;
  std::map<int, int> last_frame_;
};

struct PipelineConfig {
  TrackerConfig tracker;
  double match_threshold_mm = kDefaultMatchThresholdMm;
  FusionOptions fusion;
  SmootherConfig smoother;
  bool smoothing = true;
  /// Worker threads for per-view tracking and fusion; 0 = number of views.
  int threads = 0;
  /// Re-run identity matching at this frame (recovery aid).
  std::optional<int> rematch_frame;

  void validate() const;
};

struct FrameResult {
  int frame = 0;
  FrameAssociations tracks;        ///< confirmed 2D associations per view
  std::vector<Pose3D> triangulated;  ///< per-frame fusion, before smoothing
  std::vector<Pose3D> poses;         ///< final output (smoothed if enabled)
};

/// Online multi-view 3D tracking: per-view SORT, first-frame identity matching,
/// per-frame fusion and smoothing. Output for frame k depends on frames <= k only.
class Pipeline {
 public:
  Pipeline(CameraRig rig, PipelineConfig config = {});

  /// `detections` is indexed by view (rig order). The first call must carry at
  /// least one detection (EmptyFirstFrame otherwise).
  FrameResult process(int frame, const std::vector<std::vector<Detection2D>>& detections);

  const CameraRig& rig() const { return rig_; }
  const PipelineConfig& config() const { return config_; }
  const std::optional<GlobalIdentityMap>& identities() const { return id_map_; }
  std::size_t frames_processed() const { return frames_processed_; }

 private:
  void rematch(const FrameAssociations& tracks);

  CameraRig rig_;
  PipelineConfig config_;
  std::vector<SortTracker> trackers_;
  std::optional<GlobalIdentityMap> id_map_;
  Smoother3D smoother_;
  std::set<TrackKey> ignored_tracks_;
  std::size_t frames_processed_ = 0;
};

/// Runs the pipeline over in-memory streams indexed [frame][view][detection].
std::vector<FrameResult> run_pipeline(
    const std::vector<std::vector<std::vector<Detection2D>>>& frames, const CameraRig& rig,
    const PipelineConfig& config = {});

}  // namespace muppet
