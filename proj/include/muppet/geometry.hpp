#pragma once

#include <muppet/types.hpp>

#include <Eigen/Core>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace muppet {

/// Brown-Conrady lens distortion with two radial and two tangential terms.
struct Distortion {
  double k1 = 0.0;
  double k2 = 0.0;
  double p1 = 0.0;
  double p2 = 0.0;

  bool is_zero() const { return k1 == 0.0 && k2 == 0.0 && p1 == 0.0 && p2 == 0.0; }

  /// Maps an ideal normalized image point to its distorted position.
  Vec2 apply(const Vec2& xn) const;
  /// Jacobian of apply() with respect to the ideal normalized point.
  Eigen::Matrix2d jacobian(const Vec2& xn) const;
};

/// Calibrated pinhole camera. Extrinsics map world (mm) to camera frame:
/// x_cam = R * x_world + t.
class CameraModel {
 public:
  CameraModel() = default;
  /// Throws InvalidCamera when R is not a proper rotation, focal lengths are
  /// not positive, or the image size is empty.
  CameraModel(std::string id, const Mat3& intrinsics, const Distortion& distortion,
              const Mat3& rotation, const Vec3& translation, int width, int height);

  const std::string& id() const { return id_; }
  const Mat3& intrinsics() const { return K_; }
  const Mat3& intrinsics_inverse() const { return K_inv_; }
  const Distortion& distortion() const { return dist_; }
  const Mat3& rotation() const { return R_; }
  const Vec3& translation() const { return t_; }
  int width() const { return width_; }
  int height() const { return height_; }

  double fx() const { return K_(0, 0); }
  double fy() const { return K_(1, 1); }
  double cx() const { return K_(0, 2); }
  double cy() const { return K_(1, 2); }

  /// Optical centre in world coordinates.
  Vec3 center() const { return -R_.transpose() * t_; }
  Vec3 to_camera(const Point3& p) const { return R_ * p + t_; }

  /// Normalized image coordinates -> pixels (no distortion).
  Point2 normalized_to_pixel(const Vec2& xn) const;
  Vec2 pixel_to_normalized(const Point2& px) const;

  bool in_image(const Point2& px) const {
    return px.x() >= 0.0 && px.y() >= 0.0 && px.x() < width_ && px.y() < height_;
  }

 private:
  std::string id_;
  Mat3 K_ = Mat3::Identity();
  Mat3 K_inv_ = Mat3::Identity();
  Distortion dist_;
  Mat3 R_ = Mat3::Identity();
  Vec3 t_ = Vec3::Zero();
  int width_ = 1;
  int height_ = 1;
};

/// Ordered set of calibrated cameras; view indices refer to this order.
struct CameraRig {
  std::vector<CameraModel> cameras;

  std::size_t size() const { return cameras.size(); }
  const CameraModel& operator[](std::size_t i) const { return cameras[i]; }
  std::optional<std::size_t> index_of(std::string_view id) const;
};

inline constexpr double kMinDepthMm = 1e-9;
inline constexpr int kUndistortMaxIterations = 20;
inline constexpr double kUndistortTolerancePx = 1e-6;

/// Projects a world point to distorted pixel coordinates.
/// Throws NonPositiveDepth when the point is not in front of the camera.
Point2 project(const CameraModel& cam, const Point3& p);

/// Projection without distortion (ideal pinhole pixel).
Point2 project_ideal(const CameraModel& cam, const Point3& p);

/// Recovers the ideal pixel whose distortion reproduces `q`. Newton iteration,
/// at most kUndistortMaxIterations steps. Throws NoConvergence.
Point2 undistort(const CameraModel& cam, const Point2& q);

/// Non-throwing variants used on hot paths.
std::optional<Point2> try_project(const CameraModel& cam, const Point3& p);
std::optional<Point2> try_undistort(const CameraModel& cam, const Point2& q);

/// A raw (distorted) pixel observation of one point by one camera.
struct Observation {
  const CameraModel* camera = nullptr;
  Point2 pixel = Point2::Zero();
};

inline constexpr double kDegenerateSingularRatio = 0.99;

/// Linear triangulation. Pixels are undistorted before the homogeneous system
/// is assembled. Throws InsufficientViews (< 2 observations) or
/// DegenerateGeometry (near-parallel or coincident rays).
Point3 triangulate_dlt(std::span<const Observation> observations);

/// DLT on ideal (already undistorted) homogeneous pixels (s*u, s*v, s).
Point3 triangulate_dlt_homogeneous(std::span<const CameraModel* const> cameras,
                                   std::span<const Vec3> ideal_pixels_h);

struct RefineOptions {
  double initial_damping = 1e-3;
  double damping_up = 10.0;
  double damping_down = 10.0;
  double step_tolerance_mm = 1e-8;
  int max_iterations = 50;
};

struct RefineResult {
  Point3 point = Point3::Zero();
  double initial_cost = 0.0;  ///< sum of squared reprojection errors, px^2
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Levenberg-Marquardt refinement of a single 3D point against fixed cameras.
/// The returned cost never exceeds the initial cost. Throws InsufficientViews
/// and NonPositiveDepth (if `init` is behind a camera).
RefineResult refine_point(std::span<const CameraModel* const> cameras,
                          std::span<const Point2> observations, const Point3& init,
                          const RefineOptions& options = {});
RefineResult refine_point(std::span<const Observation> observations, const Point3& init,
                          const RefineOptions& options = {});

/// Pixel distance between project(cam, p) and q.
double reprojection_error(const CameraModel& cam, const Point3& p, const Point2& q);

/// DLT followed by refinement, never throwing.
struct TriangulatedPoint {
  Point3 point = Point3::Zero();
  double rms_reprojection_px = 0.0;
  bool converged = false;
};
std::optional<TriangulatedPoint> triangulate(std::span<const Observation> observations,
                                             const RefineOptions& options = {});

/// Back-projected viewing ray for a raw pixel (origin = camera centre, unit direction).
struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
};
std::optional<Ray> back_project(const CameraModel& cam, const Point2& raw_pixel);

/// Closest-approach distance between two rays (treated as half-lines).
double ray_distance(const Ray& a, const Ray& b);
/// Distance from a point to a ray (half-line).
double point_ray_distance(const Point3& p, const Ray& r);

}  // namespace muppet
