#include <muppet/tracking2d.hpp>

#include <muppet/assignment.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

namespace muppet {

namespace {

using Mat7 = Eigen::Matrix<double, 7, 7>;
using Mat4x7 = Eigen::Matrix<double, 4, 7>;

constexpr double kMinArea = 1e-6;
constexpr double kMinAspect = 1e-6;

const Mat7& transition() {
  static const Mat7 F = [] {
    Mat7 f = Mat7::Identity();
    f(0, 4) = f(1, 5) = f(2, 6) = 1.0;
    return f;
  }();
  return F;
}

const Mat4x7& observation() {
  static const Mat4x7 H = [] {
    Mat4x7 h = Mat4x7::Zero();
    h.leftCols<4>().setIdentity();
    return h;
  }();
  return H;
}

// Noise settings of the reference SORT implementation.
const Mat7& process_noise() {
  static const Mat7 Q = [] {
    Eigen::Matrix<double, 7, 1> d;
    d << 1.0, 1.0, 1.0, 1.0, 1e-2, 1e-2, 1e-4;
    return Mat7(d.asDiagonal());
  }();
  return Q;
}

const Eigen::Matrix4d& measurement_noise() {
  static const Eigen::Matrix4d R = Eigen::Vector4d(1.0, 1.0, 10.0, 10.0).asDiagonal();
  return R;
}

}  // namespace

double iou(const BBox& a, const BBox& b) {
  if (!(a.w > 0.0 && a.h > 0.0 && b.w > 0.0 && b.h > 0.0)) return 0.0;
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

void validate(const Detection2D& d, std::size_t schema_size) {
  if (!(d.bbox.w > 0.0) || !(d.bbox.h > 0.0))
    throw FormatError("detection bbox must have positive width and height");
  if (d.frame < 0) throw FormatError("detection frame must be non-negative");
  if (d.keypoints.size() != schema_size)
    throw FormatError("detection has " + std::to_string(d.keypoints.size()) +
                      " keypoints, schema expects " + std::to_string(schema_size));
  if (!(d.score >= 0.0 && d.score <= 1.0)) throw FormatError("detection score outside [0,1]");
  for (const auto& k : d.keypoints) {
    if (!(k.confidence >= 0.0 && k.confidence <= 1.0))
      throw FormatError("keypoint confidence outside [0,1]");
    if (!k.px.allFinite()) throw FormatError("keypoint position is not finite");
  }
}

void TrackerConfig::validate() const {
  if (max_age < 1) throw ConfigError("max_age must be >= 1");
  if (min_hits < 0) throw ConfigError("min_hits must be >= 0");
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0))
    throw ConfigError("iou_threshold must lie in [0,1]");
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0))
    throw ConfigError("score_threshold must lie in [0,1]");
}

// ---------------------------------------------------------------------------
// BoxKalman

Eigen::Matrix<double, 4, 1> BoxKalman::to_measurement(const BBox& b) {
  return {b.x + 0.5 * b.w, b.y + 0.5 * b.h, b.w * b.h, b.w / b.h};
}

BBox BoxKalman::to_box(const State& x) {
  const double s = std::max(x(2), kMinArea);
  const double r = std::max(x(3), kMinAspect);
  const double w = std::sqrt(s * r);
  const double h = s / w;
  return {x(0) - 0.5 * w, x(1) - 0.5 * h, w, h};
}

BoxKalman::BoxKalman(const BBox& initial) {
  x_.setZero();
  x_.head<4>() = to_measurement(initial);
  Eigen::Matrix<double, 7, 1> d;
  d << 10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4;
  P_ = d.asDiagonal();
}

BBox BoxKalman::predict() {
  if (x_(6) + x_(2) <= 0.0) x_(6) = 0.0;
  x_ = transition() * x_;
  P_ = transition() * P_ * transition().transpose() + process_noise();
  P_ = (0.5 * (P_ + P_.transpose())).eval();
  return box();
}

void BoxKalman::update(const BBox& measurement) {
  const auto& H = observation();
  const Eigen::Vector4d innovation = to_measurement(measurement) - H * x_;
  const Eigen::Matrix4d S = H * P_ * H.transpose() + measurement_noise();
  const Eigen::Matrix<double, 7, 4> K = P_ * H.transpose() * S.inverse();
  x_ += K * innovation;
  // Joseph form keeps P symmetric positive semi-definite.
  const Mat7 IKH = Mat7::Identity() - K * H;
  P_ = IKH * P_ * IKH.transpose() + K * measurement_noise() * K.transpose();
  P_ = (0.5 * (P_ + P_.transpose())).eval();
}

BBox BoxKalman::box() const { return to_box(x_); }

BBox predict(Tracklet2D& t) {
  const BBox b = t.kalman.predict();
  ++t.age;
  if (t.time_since_update > 0) t.hit_streak = 0;
  ++t.time_since_update;
  return b;
}

void update(Tracklet2D& t, const Detection2D& d) {
  if (d.view_id != t.view_id)
    throw FormatError("detection view '" + d.view_id + "' does not match tracklet view '" +
                      t.view_id + "'");
  t.kalman.update(d.bbox);
  t.time_since_update = 0;
  ++t.hits;
  ++t.hit_streak;
  t.last_keypoints = d.keypoints;
}

// ---------------------------------------------------------------------------
// SortTracker

SortTracker::SortTracker(std::string view_id, TrackerConfig config)
    : view_id_(std::move(view_id)), config_(config) {
  config_.validate();
}

std::vector<TrackedDetection> SortTracker::step(const std::vector<Detection2D>& detections) {
  std::vector<const Detection2D*> dets;
  dets.reserve(detections.size());
  for (const auto& d : detections) {
    if (d.view_id != view_id_)
      throw FormatError("detection for view '" + d.view_id + "' fed to tracker of view '" +
                        view_id_ + "'");
    if (d.frame != detections.front().frame)
      throw FormatError("detections passed to one step must share a frame index");
    if (d.score >= config_.score_threshold) dets.push_back(&d);
  }
  if (!detections.empty()) {
    if (detections.front().frame <= last_frame_)
      throw FormatError("frame indices must increase between tracker steps");
    last_frame_ = detections.front().frame;
  }
  ++frame_count_;

  // Predict; drop tracklets whose state went non-finite.
  std::vector<BBox> predicted;
  predicted.reserve(tracklets_.size());
  for (auto& t : tracklets_) predict(t);
  std::erase_if(tracklets_, [](const Tracklet2D& t) { return !t.kalman.state().allFinite(); });
  for (const auto& t : tracklets_) predicted.push_back(t.kalman.box());

  // Associate on 1 - IoU.
  std::vector<int> det_to_trk(dets.size(), -1);
  if (!dets.empty() && !tracklets_.empty()) {
    Eigen::MatrixXd cost(dets.size(), tracklets_.size());
    for (std::size_t i = 0; i < dets.size(); ++i)
      for (std::size_t j = 0; j < tracklets_.size(); ++j)
        cost(i, j) = 1.0 - iou(dets[i]->bbox, predicted[j]);
    for (const auto& [i, j] : hungarian(cost))
      if (1.0 - cost(i, j) >= config_.iou_threshold) det_to_trk[i] = j;
  }

  std::vector<TrackedDetection> out;
  std::vector<std::pair<int, const Detection2D*>> matched;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (det_to_trk[i] >= 0) {
      auto& t = tracklets_[det_to_trk[i]];
      update(t, *dets[i]);
      matched.emplace_back(t.local_track_id, dets[i]);
    } else {
      Tracklet2D t{view_id_, next_id_++, BoxKalman(dets[i]->bbox), 0, 0, 0, 0,
                   dets[i]->keypoints};
      matched.emplace_back(t.local_track_id, dets[i]);
      tracklets_.push_back(std::move(t));
    }
  }

  const bool warm_up = frame_count_ <= config_.min_hits;
  for (const auto& [id, det] : matched) {
    const auto it = std::find_if(tracklets_.begin(), tracklets_.end(),
                                 [id = id](const Tracklet2D& t) { return t.local_track_id == id; });
    if (it->hits >= config_.min_hits || warm_up) out.push_back({id, *det});
  }
  std::sort(out.begin(), out.end(), [](const TrackedDetection& a, const TrackedDetection& b) {
    return a.local_track_id < b.local_track_id;
  });

  std::erase_if(tracklets_,
                [&](const Tracklet2D& t) { return t.time_since_update > config_.max_age; });
  return out;
}

}  // namespace muppet
