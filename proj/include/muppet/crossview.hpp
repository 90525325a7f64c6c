#pragma once

#include <muppet/geometry.hpp>
#include <muppet/tracking2d.hpp>
#include <muppet/types.hpp>

#include <compare>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace muppet {

/// Detections of one frame, indexed [view][detection]; view order follows the rig.
using PerViewDetections = std::vector<std::vector<Detection2D>>;

/// 3D pose triangulated from one detection in each of two views.
struct CandidatePose {
  std::size_t view_a = 0;
  std::size_t det_a = 0;
  std::size_t view_b = 0;
  std::size_t det_b = 0;
  std::vector<Keypoint3D> pose;
  double mean_pairwise_reproj = 0.0;  ///< px, mean over valid keypoints

  std::size_t valid_count() const;
};

/// Triangulates every cross-view pair of detections (DLT + refinement per
/// jointly usable keypoint). Candidates without any valid keypoint are
/// dropped. The result order is (view_a, view_b, det_a, det_b) lexicographic.
/// Runs the pair loop with OpenMP.
std::vector<CandidatePose> candidate_poses(const PerViewDetections& detections,
                                           const CameraRig& rig);
/// Single-threaded reference of candidate_poses; identical output.
std::vector<CandidatePose> candidate_poses_serial(const PerViewDetections& detections,
                                                  const CameraRig& rig);

/// Mean Euclidean distance over keypoints valid in both poses (mm).
/// Throws NoSharedKeypoints.
double pose_distance(const std::vector<Keypoint3D>& a, const std::vector<Keypoint3D>& b);

/// (view index, detection index) in a PerViewDetections.
struct NodeRef {
  std::size_t view = 0;
  std::size_t det = 0;
  auto operator<=>(const NodeRef&) const = default;
};

/// Each cluster holds at most one node per view, sorted by view.
using Clustering = std::vector<std::vector<NodeRef>>;

inline constexpr double kDefaultMatchThresholdMm = 200.0;

/// Greedy agglomerative clustering of detections into individuals. Repeatedly
/// merges the closest admissible pair of clusters until the smallest distance
/// exceeds `threshold_mm`. Clusters never hold two detections from one view.
///
/// Distances are 3D Euclidean between the geometric objects a cluster
/// represents: a lone detection is its bundle of keypoint viewing rays, a
/// larger cluster is the keypoint-wise centroid of its member-pair candidate
/// poses. Singleton-singleton uses the mean ray gap, singleton-cluster the
/// mean point-to-ray distance, cluster-cluster pose_distance.
///
/// Unclustered detections are returned as singleton clusters. Output clusters
/// are ordered by their first member.
Clustering greedy_match(const std::vector<CandidatePose>& candidates,
                        const PerViewDetections& detections, const CameraRig& rig,
                        double threshold_mm = kDefaultMatchThresholdMm);

struct TrackKey {
  std::string view_id;
  int local_id = 0;
  auto operator<=>(const TrackKey&) const = default;
};

/// (view, local track id) -> global identity.
class GlobalIdentityMap {
 public:
  /// Throws std::invalid_argument if the key is already mapped or the global
  /// already owns a track in that view.
  void assign(const TrackKey& key, int global_id);
  std::optional<int> find(const TrackKey& key) const;
  std::optional<int> find(const std::string& view_id, int local_id) const {
    return find(TrackKey{view_id, local_id});
  }

  const std::map<TrackKey, int>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  int n_globals() const { return n_globals_; }
  std::vector<int> global_ids() const;
  std::vector<TrackKey> members(int global_id) const;

 private:
  std::map<TrackKey, int> entries_;
  int n_globals_ = 0;
};

/// Runs candidate_poses + greedy_match on tracker output of one frame and
/// numbers the clusters 0..n-1 in cluster order.
GlobalIdentityMap match_identities(const std::vector<std::vector<TrackedDetection>>& tracked,
                                   const CameraRig& rig,
                                   double threshold_mm = kDefaultMatchThresholdMm);

}  // namespace muppet
