#pragma once

#include <muppet/fusion3d.hpp>
#include <muppet/geometry.hpp>
#include <muppet/tracking2d.hpp>
#include <muppet/types.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace muppet {

/// Rigid 3D keypoint layout in the body frame (x forward, y left, z up), mm.
struct SkeletonTemplate {
  std::vector<Vec3> offsets;

  static SkeletonTemplate pigeon();
  /// Largest distance between two keypoints.
  double body_length() const;
  /// Largest horizontal distance of a keypoint from the body origin.
  double footprint_radius() const;
};

struct ScenarioConfig {
  int n_individuals = 10;
  int n_frames = 500;
  double arena_x_mm = 3000.0;
  double arena_y_mm = 2400.0;
  double speed_min_mm = 2.0;  ///< per frame
  double speed_max_mm = 10.0;
  double heading_persistence = 0.9;  ///< 1 = straight lines
  double max_turn_rad = 0.1;         ///< body yaw rate limit per frame
  double articulation_mm = 2.0;
  std::uint64_t seed = 1;

  double noise_px = 0.0;
  double miss_prob = 0.0;
  double clutter_rate = 0.0;  ///< expected clutter detections per frame and view

  int n_cameras = 4;
  int image_width = 3840;
  int image_height = 2160;
  double camera_height_mm = 2500.0;
  double camera_offset_mm = 1000.0;  ///< horizontal distance outside the arena corners
  double image_margin = 0.05;        ///< fraction of the half-image kept free at the border
  Distortion distortion{-0.05, 0.01, 0.0, 0.0};

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Inward-looking cameras placed around the arena at angles pi/4 + 2*pi*i/n
/// (the rectangle corners for n = 4). One focal length is chosen for all
/// cameras so the whole arena volume projects inside every image.
CameraRig build_rig(const ScenarioConfig& config);

/// Ground-truth poses indexed [frame][individual]; global_id = individual.
struct GroundTruth {
  std::vector<std::vector<Pose3D>> frames;

  std::size_t n_frames() const { return frames.size(); }
};

/// Correlated random walk in the arena with reflective walls, short-range
/// repulsion and a heading-aligned skeleton with AR(1) articulation jitter.
GroundTruth simulate(const ScenarioConfig& config);

/// Per-view ground truth of one individual (or clutter, id -1) in one frame.
struct SidecarEntry {
  std::string view_id;
  int frame = 0;
  int id = 0;
  int det_index = -1;  ///< index into that frame's detection list, -1 if missed
  BBox bbox;           ///< from the noiseless projection
  std::vector<Keypoint2D> keypoints;
};

struct RenderedScene {
  /// Detections indexed [frame][view][detection].
  std::vector<std::vector<std::vector<Detection2D>>> detections;
  std::vector<SidecarEntry> sidecar;
};

inline constexpr double kBoxMargin = 1.15;

/// Box around the keypoints, enlarged by kBoxMargin about its centre.
BBox keypoint_box(const std::vector<Keypoint2D>& keypoints);

/// Projects the ground truth into every view and adds noise, misses, clutter.
RenderedScene render(const GroundTruth& gt, const CameraRig& rig, const ScenarioConfig& config);

}  // namespace muppet
