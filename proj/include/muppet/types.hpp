#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace muppet {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Pixel position (u, v), top-left image origin.
using Point2 = Vec2;
/// World position in millimetres.
using Point3 = Vec3;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MUPPET_DECLARE_ERROR(Name)          \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

MUPPET_DECLARE_ERROR(NonPositiveDepth);
MUPPET_DECLARE_ERROR(NoConvergence);
MUPPET_DECLARE_ERROR(DegenerateGeometry);
MUPPET_DECLARE_ERROR(InsufficientViews);
MUPPET_DECLARE_ERROR(InvalidCamera);
MUPPET_DECLARE_ERROR(NoSharedKeypoints);
MUPPET_DECLARE_ERROR(EmptyMatchSet);
MUPPET_DECLARE_ERROR(DegenerateThreshold);
MUPPET_DECLARE_ERROR(EmptyFirstFrame);
MUPPET_DECLARE_ERROR(ConfigError);
MUPPET_DECLARE_ERROR(FormatError);

#undef MUPPET_DECLARE_ERROR

/// Ordered keypoint names. The default is the 9-point pigeon layout.
class KeypointSchema {
 public:
  explicit KeypointSchema(std::vector<std::string> names);

  static const KeypointSchema& pigeon();

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<std::size_t> index_of(std::string_view name) const;

 private:
  std::vector<std::string> names_;
};

inline constexpr std::size_t kNumKeypoints = 9;

// Indices into the default schema.
namespace kp {
inline constexpr std::size_t kBeak = 0;
inline constexpr std::size_t kNose = 1;
inline constexpr std::size_t kLeftEye = 2;
inline constexpr std::size_t kRightEye = 3;
inline constexpr std::size_t kLeftShoulder = 4;
inline constexpr std::size_t kRightShoulder = 5;
inline constexpr std::size_t kTopKeel = 6;
inline constexpr std::size_t kBottomKeel = 7;
inline constexpr std::size_t kTail = 8;
}  // namespace kp

struct Keypoint2D {
  Point2 px = Point2::Zero();
  double confidence = 0.0;
  bool visible = false;

  bool usable() const { return visible && confidence > 0.0; }
};

struct Keypoint3D {
  Point3 position = Point3::Zero();
  bool valid = false;
};

}  // namespace muppet
