#pragma once

#include <muppet/types.hpp>

#include <Eigen/Core>

#include <string>
#include <utility>
#include <vector>

namespace muppet {

/// Axis-aligned box, top-left origin, pixels.
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
  Point2 center() const { return {x + 0.5 * w, y + 0.5 * h}; }
};

/// Intersection over union. Boxes with non-positive extent give 0.
double iou(const BBox& a, const BBox& b);

/// One individual seen in one view at one frame.
struct Detection2D {
  std::string view_id;
  int frame = 0;
  BBox bbox;
  std::vector<Keypoint2D> keypoints;
  double score = 1.0;
};

/// Throws FormatError if the detection violates its invariants.
void validate(const Detection2D& d, std::size_t schema_size = kNumKeypoints);

struct TrackerConfig {
  int max_age = 10;
  int min_hits = 3;
  double iou_threshold = 0.3;
  double score_threshold = 0.5;

  /// Throws ConfigError.
  void validate() const;
};

/// Constant-velocity Kalman filter over (cx, cy, area, aspect, vcx, vcy, varea)
/// with aspect held constant.
class BoxKalman {
 public:
  using State = Eigen::Matrix<double, 7, 1>;
  using Covariance = Eigen::Matrix<double, 7, 7>;

  explicit BoxKalman(const BBox& initial);

  /// Advances one frame; returns the predicted box.
  BBox predict();
  void update(const BBox& measurement);

  BBox box() const;
  const State& state() const { return x_; }
  const Covariance& covariance() const { return P_; }
  State& mutable_state() { return x_; }

  static Eigen::Matrix<double, 4, 1> to_measurement(const BBox& b);
  static BBox to_box(const State& x);

 private:
  State x_;
  Covariance P_;
};

struct Tracklet2D {
  std::string view_id;
  int local_track_id = 0;
  BoxKalman kalman;
  int age = 0;                ///< frames since creation
  int hits = 0;               ///< matched frames
  int hit_streak = 0;         ///< consecutive matched frames
  int time_since_update = 0;  ///< frames since last match
  std::vector<Keypoint2D> last_keypoints;
};

/// Advances the tracklet one frame and returns its predicted box.
BBox predict(Tracklet2D& t);
/// Kalman correction with a matched detection. Throws FormatError on a view mismatch.
void update(Tracklet2D& t, const Detection2D& d);

/// One confirmed association output by the tracker for the current frame.
struct TrackedDetection {
  int local_track_id = 0;
  Detection2D detection;
};

/// SORT: Kalman prediction + Hungarian IoU association, one instance per view.
class SortTracker {
 public:
  explicit SortTracker(std::string view_id, TrackerConfig config = {});

  /// Processes one frame. All detections must belong to this view and share
  /// one frame index, which must not decrease between calls.
  std::vector<TrackedDetection> step(const std::vector<Detection2D>& detections);

  const std::vector<Tracklet2D>& tracklets() const { return tracklets_; }
  const std::string& view_id() const { return view_id_; }
  const TrackerConfig& config() const { return config_; }
  int frames_processed() const { return frame_count_; }

 private:
  std::string view_id_;
  TrackerConfig config_;
  std::vector<Tracklet2D> tracklets_;
  int next_id_ = 1;
  int frame_count_ = 0;
  int last_frame_ = -1;
};

}  // namespace muppet
