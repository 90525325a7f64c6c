#include <muppet/geometry.hpp>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace muppet {

namespace {

constexpr double kRotationTolerance = 1e-9;

Eigen::Matrix<double, 3, 4> extrinsic_matrix(const CameraModel& cam) {
  Eigen::Matrix<double, 3, 4> P;
  P.leftCols<3>() = cam.rotation();
  P.col(3) = cam.translation();
  return P;
}

// Distorted pixel and its Jacobian with respect to the world point.
// Returns false when the point is not in front of the camera.
bool project_with_jacobian(const CameraModel& cam, const Point3& p, Point2& px,
                           Eigen::Matrix<double, 2, 3>* jac) {
  const Vec3 xc = cam.to_camera(p);
  if (!(xc.z() > kMinDepthMm)) return false;
  const double inv_z = 1.0 / xc.z();
  const Vec2 xn(xc.x() * inv_z, xc.y() * inv_z);
  const Vec2 xd = cam.distortion().apply(xn);
  px = cam.normalized_to_pixel(xd);
  if (jac) {
    Eigen::Matrix<double, 2, 3> dn_dc;
    dn_dc << inv_z, 0.0, -xc.x() * inv_z * inv_z,
             0.0, inv_z, -xc.y() * inv_z * inv_z;
    const Eigen::Matrix2d k2 = cam.intrinsics().topLeftCorner<2, 2>();
    *jac = k2 * cam.distortion().jacobian(xn) * dn_dc * cam.rotation();
  }
  return true;
}

double total_cost(std::span<const CameraModel* const> cams, std::span<const Point2> obs,
                  const Point3& p) {
  double cost = 0.0;
  for (std::size_t i = 0; i < cams.size(); ++i) {
    Point2 px;
    if (!project_with_jacobian(*cams[i], p, px, nullptr))
      return std::numeric_limits<double>::infinity();
    cost += (px - obs[i]).squaredNorm();
  }
  return cost;
}

enum class DltStatus { kOk, kInsufficient, kDegenerate };

DltStatus dlt_core(std::span<const CameraModel* const> cams, std::span<const Vec3> ideal_h,
                   Point3& out) {
  const std::size_t n = cams.size();
  if (n < 2 || ideal_h.size() != n) return DltStatus::kInsufficient;

  Eigen::MatrixXd A(2 * n, 4);
  for (std::size_t i = 0; i < n; ++i) {
    // Move the homogeneous pixel into normalized camera coordinates; fixing
    // its scale keeps the row weights independent of the representation.
    Vec3 x = cams[i]->intrinsics_inverse() * ideal_h[i];
    if (x(2) != 0.0) x /= x(2);
    const auto P = extrinsic_matrix(*cams[i]);
    A.row(2 * i) = x(0) * P.row(2) - x(2) * P.row(0);
    A.row(2 * i + 1) = x(1) * P.row(2) - x(2) * P.row(1);
  }

  // Column equilibration keeps the millimetre-scale translation column from
  // dominating the spectrum.
  Eigen::Vector4d scale;
  for (int c = 0; c < 4; ++c) {
    const double norm = A.col(c).norm();
    scale(c) = norm > 0.0 ? norm : 1.0;
    A.col(c) /= scale(c);
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::Vector4d sv = svd.singularValues().head<4>();
  if (!(sv(2) > 1e-12 * sv(0))) return DltStatus::kDegenerate;
  if (sv(3) / sv(2) > kDegenerateSingularRatio) return DltStatus::kDegenerate;

  const Eigen::Vector4d y = svd.matrixV().col(3);
  const Eigen::Vector4d X = y.cwiseQuotient(scale);
  if (std::abs(X(3)) < 1e-12 * X.head<3>().norm() || X(3) == 0.0) return DltStatus::kDegenerate;
  out = X.head<3>() / X(3);
  if (!out.allFinite()) return DltStatus::kDegenerate;
  return DltStatus::kOk;
}

}  // namespace

// ---------------------------------------------------------------------------
// Distortion

Vec2 Distortion::apply(const Vec2& xn) const {
  const double x = xn.x(), y = xn.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + k1 * r2 + k2 * r2 * r2;
  return {x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
          y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y};
}

Eigen::Matrix2d Distortion::jacobian(const Vec2& xn) const {
  const double x = xn.x(), y = xn.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + k1 * r2 + k2 * r2 * r2;
  const double dradial = k1 + 2.0 * k2 * r2;  // d(radial)/d(r2)
  Eigen::Matrix2d J;
  J(0, 0) = radial + x * dradial * 2.0 * x + 2.0 * p1 * y + 6.0 * p2 * x;
  J(0, 1) = x * dradial * 2.0 * y + 2.0 * p1 * x + 2.0 * p2 * y;
  J(1, 0) = y * dradial * 2.0 * x + 2.0 * p1 * x + 2.0 * p2 * y;
  J(1, 1) = radial + y * dradial * 2.0 * y + 6.0 * p1 * y + 2.0 * p2 * x;
  return J;
}

// ---------------------------------------------------------------------------
// CameraModel

CameraModel::CameraModel(std::string id, const Mat3& intrinsics, const Distortion& distortion,
                         const Mat3& rotation, const Vec3& translation, int width, int height)
    : id_(std::move(id)),
      K_(intrinsics),
      dist_(distortion),
      R_(rotation),
      t_(translation),
      width_(width),
      height_(height) {
  if (!(K_(0, 0) > 0.0) || !(K_(1, 1) > 0.0))
    throw InvalidCamera("camera '" + id_ + "': focal lengths must be positive");
  if (std::abs(K_(2, 2) - 1.0) > 1e-12 || K_(1, 0) != 0.0 || K_(2, 0) != 0.0 || K_(2, 1) != 0.0)
    throw InvalidCamera("camera '" + id_ + "': intrinsics must be upper triangular with K[2][2]=1");
  if (width_ <= 0 || height_ <= 0)
    throw InvalidCamera("camera '" + id_ + "': image size must be positive");
  if (!R_.allFinite() || !t_.allFinite() || !K_.allFinite())
    throw InvalidCamera("camera '" + id_ + "': non-finite parameters");
  if ((R_ * R_.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > kRotationTolerance ||
      std::abs(R_.determinant() - 1.0) > kRotationTolerance)
    throw InvalidCamera("camera '" + id_ + "': rotation must be orthonormal with det +1");
  K_inv_ = K_.inverse();
}

Point2 CameraModel::normalized_to_pixel(const Vec2& xn) const {
  return {K_(0, 0) * xn.x() + K_(0, 1) * xn.y() + K_(0, 2), K_(1, 1) * xn.y() + K_(1, 2)};
}

Vec2 CameraModel::pixel_to_normalized(const Point2& px) const {
  const Vec3 x = K_inv_ * Vec3(px.x(), px.y(), 1.0);
  return x.head<2>();
}

std::optional<std::size_t> CameraRig::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < cameras.size(); ++i)
    if (cameras[i].id() == id) return i;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Projection

std::optional<Point2> try_project(const CameraModel& cam, const Point3& p) {
  Point2 px;
  if (!project_with_jacobian(cam, p, px, nullptr)) return std::nullopt;
  return px;
}

Point2 project(const CameraModel& cam, const Point3& p) {
  auto px = try_project(cam, p);
  if (!px) throw NonPositiveDepth("point is not in front of camera '" + cam.id() + "'");
  return *px;
}

Point2 project_ideal(const CameraModel& cam, const Point3& p) {
  const Vec3 xc = cam.to_camera(p);
  if (!(xc.z() > kMinDepthMm))
    throw NonPositiveDepth("point is not in front of camera '" + cam.id() + "'");
  return cam.normalized_to_pixel(xc.head<2>() / xc.z());
}

std::optional<Point2> try_undistort(const CameraModel& cam, const Point2& q) {
  if (!q.allFinite()) return std::nullopt;
  if (cam.distortion().is_zero()) return q;

  const Vec2 target = cam.pixel_to_normalized(q);
  const Eigen::Matrix2d k2 = cam.intrinsics().topLeftCorner<2, 2>();
  Vec2 x = target;
  for (int it = 0; it <= kUndistortMaxIterations; ++it) {
    const Vec2 f = cam.distortion().apply(x) - target;
    const bool done = (k2 * f).norm() <= kUndistortTolerancePx;
    if (!done && it == kUndistortMaxIterations) break;
    const Eigen::Matrix2d J = cam.distortion().jacobian(x);
    if (!(std::abs(J.determinant()) > 1e-14)) break;
    // The tolerance bounds the distorted residual; one more step brings the
    // ideal-space error well below it as well.
    const Vec2 polished = x - J.inverse() * f;
    if (!polished.allFinite()) break;
    x = polished;
    if (done) return cam.normalized_to_pixel(x);
  }
  return std::nullopt;
}

Point2 undistort(const CameraModel& cam, const Point2& q) {
  auto ideal = try_undistort(cam, q);
  if (!ideal) throw NoConvergence("undistortion did not converge for camera '" + cam.id() + "'");
  return *ideal;
}

double reprojection_error(const CameraModel& cam, const Point3& p, const Point2& q) {
  return (project(cam, p) - q).norm();
}

// ---------------------------------------------------------------------------
// Triangulation

Point3 triangulate_dlt_homogeneous(std::span<const CameraModel* const> cameras,
                                   std::span<const Vec3> ideal_pixels_h) {
  if (cameras.size() < 2 || ideal_pixels_h.size() != cameras.size())
    throw InsufficientViews("triangulation needs at least two observations");
  Point3 out;
  if (dlt_core(cameras, ideal_pixels_h, out) != DltStatus::kOk)
    throw DegenerateGeometry("rays do not intersect in a unique point");
  return out;
}

Point3 triangulate_dlt(std::span<const Observation> observations) {
  if (observations.size() < 2)
    throw InsufficientViews("triangulation needs at least two observations");
  std::vector<const CameraModel*> cams;
  std::vector<Vec3> ideal;
  cams.reserve(observations.size());
  ideal.reserve(observations.size());
  for (const auto& o : observations) {
    const Point2 u = undistort(*o.camera, o.pixel);
    cams.push_back(o.camera);
    ideal.emplace_back(u.x(), u.y(), 1.0);
  }
  return triangulate_dlt_homogeneous(cams, ideal);
}

RefineResult refine_point(std::span<const CameraModel* const> cameras,
                          std::span<const Point2> observations, const Point3& init,
                          const RefineOptions& options) {
  if (cameras.size() < 2 || observations.size() != cameras.size())
    throw InsufficientViews("refinement needs at least two observations");

  const std::size_t n = cameras.size();
  Eigen::MatrixXd J(2 * n, 3);
  Eigen::VectorXd r(2 * n);

  auto linearize = [&](const Point3& p) {
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      Point2 px;
      Eigen::Matrix<double, 2, 3> Ji;
      if (!project_with_jacobian(*cameras[i], p, px, &Ji))
        return std::numeric_limits<double>::infinity();
      const Vec2 ri = px - observations[i];
      r.segment<2>(2 * i) = ri;
      J.block<2, 3>(2 * i, 0) = Ji;
      cost += ri.squaredNorm();
    }
    return cost;
  };

  RefineResult result;
  result.point = init;
  double cost = linearize(init);
  if (!std::isfinite(cost))
    throw NonPositiveDepth("refinement initial point is behind a camera");
  result.initial_cost = cost;

  double lambda = options.initial_damping;
  for (int it = 0; it < options.max_iterations; ++it) {
    result.iterations = it + 1;
    if (cost == 0.0) {
      result.converged = true;
      break;
    }
    const Eigen::Matrix3d H = J.transpose() * J;
    const Vec3 g = J.transpose() * r;
    Eigen::Matrix3d Hd = H;
    for (int d = 0; d < 3; ++d) Hd(d, d) += lambda * std::max(H(d, d), 1e-12);
    const Vec3 step = Hd.ldlt().solve(-g);
    if (!step.allFinite()) {
      lambda *= options.damping_up;
      continue;
    }
    const Point3 candidate = result.point + step;
    const double candidate_cost = total_cost(cameras, observations, candidate);
    if (candidate_cost < cost) {
      result.point = candidate;
      cost = linearize(candidate);
      lambda /= options.damping_down;
      if (step.norm() < options.step_tolerance_mm) {
        result.converged = true;
        break;
      }
    } else {
      lambda *= options.damping_up;
      if (step.norm() < options.step_tolerance_mm) {
        result.converged = true;
        break;
      }
    }
  }
  result.final_cost = cost;
  return result;
}

RefineResult refine_point(std::span<const Observation> observations, const Point3& init,
                          const RefineOptions& options) {
  std::vector<const CameraModel*> cams;
  std::vector<Point2> obs;
  for (const auto& o : observations) {
    cams.push_back(o.camera);
    obs.push_back(o.pixel);
  }
  return refine_point(cams, obs, init, options);
}

std::optional<TriangulatedPoint> triangulate(std::span<const Observation> observations,
                                             const RefineOptions& options) {
  const std::size_t n = observations.size();
  if (n < 2) return std::nullopt;

  std::vector<const CameraModel*> cams(n);
  std::vector<Vec3> ideal(n);
  std::vector<Point2> raw(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto u = try_undistort(*observations[i].camera, observations[i].pixel);
    if (!u) return std::nullopt;
    cams[i] = observations[i].camera;
    ideal[i] = Vec3(u->x(), u->y(), 1.0);
    raw[i] = observations[i].pixel;
  }
  Point3 init;
  if (dlt_core(cams, ideal, init) != DltStatus::kOk) return std::nullopt;
  if (!std::isfinite(total_cost(cams, raw, init))) return std::nullopt;

  const RefineResult refined = refine_point(cams, raw, init, options);
  TriangulatedPoint out;
  out.point = refined.point;
  out.rms_reprojection_px = std::sqrt(refined.final_cost / static_cast<double>(n));
  out.converged = refined.converged;
  return out;
}

// ---------------------------------------------------------------------------
// Rays

std::optional<Ray> back_project(const CameraModel& cam, const Point2& raw_pixel) {
  const auto ideal = try_undistort(cam, raw_pixel);
  if (!ideal) return std::nullopt;
  const Vec2 xn = cam.pixel_to_normalized(*ideal);
  Ray ray;
  ray.origin = cam.center();
  ray.direction = (cam.rotation().transpose() * Vec3(xn.x(), xn.y(), 1.0)).normalized();
  return ray;
}

double point_ray_distance(const Point3& p, const Ray& r) {
  const double s = std::max(0.0, r.direction.dot(p - r.origin));
  return (p - (r.origin + s * r.direction)).norm();
}

double ray_distance(const Ray& a, const Ray& b) {
  const Vec3 w0 = a.origin - b.origin;
  const double bdot = a.direction.dot(b.direction);
  const double d = a.direction.dot(w0);
  const double e = b.direction.dot(w0);
  auto gap = [&](double s, double t) {
    return (w0 + s * a.direction - t * b.direction).norm();
  };

  const double denom = 1.0 - bdot * bdot;
  if (denom > 1e-14) {
    const double s = (bdot * e - d) / denom;
    const double t = e + s * bdot;
    if (s >= 0.0 && t >= 0.0) return gap(s, t);
  }
  // Minimum lies on a boundary of the (s >= 0, t >= 0) quadrant.
  const double on_a = gap(0.0, std::max(0.0, e));
  const double on_b = gap(std::max(0.0, -d), 0.0);
  return std::min(on_a, on_b);
}

}  // namespace muppet
