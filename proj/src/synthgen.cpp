#include <muppet/synthgen.hpp>

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>

namespace muppet {

namespace {

using Rng = std::mt19937_64;

// Independent deterministic streams so that e.g. changing the noise level does
// not perturb the trajectories.
enum Stream : std::uint64_t { kInit = 1, kMotion = 2, kArticulation = 3, kRenderBase = 100 };

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

double wrap_angle(double a) {
  return std::remainder(a, 2.0 * std::numbers::pi);
}

constexpr double kArenaHeadroomMm = 250.0;

}  // namespace

SkeletonTemplate SkeletonTemplate::pigeon() {
  return {{
      {120.0, 0.0, 150.0},    // beak
      {100.0, 0.0, 160.0},    // nose
      {85.0, 15.0, 165.0},    // left eye
      {85.0, -15.0, 165.0},   // right eye
      {20.0, 35.0, 120.0},    // left shoulder
      {20.0, -35.0, 120.0},   // right shoulder
      {0.0, 0.0, 135.0},      // top keel
      {10.0, 0.0, 60.0},      // bottom keel
      {-130.0, 0.0, 90.0},    // tail
  }};
}

double SkeletonTemplate::body_length() const {
  double best = 0.0;
  for (std::size_t i = 0; i < offsets.size(); ++i)
    for (std::size_t j = i + 1; j < offsets.size(); ++j)
      best = std::max(best, (offsets[i] - offsets[j]).norm());
  return best;
}

double SkeletonTemplate::footprint_radius() const {
  double r = 0.0;
  for (const auto& o : offsets) r = std::max(r, o.head<2>().norm());
  return r;
}

void ScenarioConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError(field + ": " + why);
  };
  auto probability = [&](const char* field, double p) {
    if (!(p >= 0.0 && p <= 1.0)) fail(field, "must lie in [0, 1]");
  };
  if (n_individuals < 1 || n_individuals > 10) fail("n_individuals", "must lie in [1, 10]");
  if (n_frames < 1) fail("n_frames", "must be >= 1");
  if (!(arena_x_mm > 0.0)) fail("arena_x_mm", "must be > 0");
  if (!(arena_y_mm > 0.0)) fail("arena_y_mm", "must be > 0");
  if (!(speed_min_mm >= 0.0)) fail("speed_min_mm", "must be >= 0");
  if (!(speed_max_mm >= speed_min_mm)) fail("speed_max_mm", "must be >= speed_min_mm");
  probability("heading_persistence", heading_persistence);
  if (!(max_turn_rad >= 0.0)) fail("max_turn_rad", "must be >= 0");
  if (!(articulation_mm >= 0.0)) fail("articulation_mm", "must be >= 0");
  if (!(noise_px >= 0.0)) fail("noise_px", "must be >= 0");
  probability("miss_prob", miss_prob);
  if (!(clutter_rate >= 0.0)) fail("clutter_rate", "must be >= 0");
  if (n_cameras < 2 || n_cameras > 64) fail("n_cameras", "must lie in [2, 64]");
  if (image_width < 1) fail("image_width", "must be >= 1");
  if (image_height < 1) fail("image_height", "must be >= 1");
  if (!(camera_height_mm > kArenaHeadroomMm)) fail("camera_height_mm", "must clear the arena headroom");
  if (!(camera_offset_mm >= 0.0)) fail("camera_offset_mm", "must be >= 0");
  if (!(image_margin >= 0.0 && image_margin < 1.0)) fail("image_margin", "must lie in [0, 1)");

  const SkeletonTemplate skel = SkeletonTemplate::pigeon();
  const double r = skel.footprint_radius();
  if (arena_x_mm <= 2.0 * r || arena_y_mm <= 2.0 * r)
    fail("arena_x_mm", "arena smaller than one individual");
}

CameraRig build_rig(const ScenarioConfig& config) {
  config.validate();
  const Vec3 target(0.5 * config.arena_x_mm, 0.5 * config.arena_y_mm, 0.0);
  const double half_x = 0.5 * config.arena_x_mm + config.camera_offset_mm;
  const double half_y = 0.5 * config.arena_y_mm + config.camera_offset_mm;

  std::vector<Vec3> centers;
  std::vector<Mat3> rotations;
  for (int i = 0; i < config.n_cameras; ++i) {
    const double a = std::numbers::pi / 4.0 + 2.0 * std::numbers::pi * i / config.n_cameras;
    const Vec3 c(target.x() + std::numbers::sqrt2 * half_x * std::cos(a),
                 target.y() + std::numbers::sqrt2 * half_y * std::sin(a), config.camera_height_mm);
    const Vec3 forward = (target - c).normalized();
    const Vec3 right = forward.cross(Vec3::UnitZ()).normalized();
    const Vec3 down = forward.cross(right);
    Mat3 R;
    R.row(0) = right.transpose();
    R.row(1) = down.transpose();
    R.row(2) = forward.transpose();
    centers.push_back(c);
    rotations.push_back(R);
  }

  // Sample the arena volume edges; the distorted normalized extent bounds f.
  std::vector<Vec3> samples;
  constexpr int kPerEdge = 16;
  const double xs[2] = {0.0, config.arena_x_mm};
  const double ys[2] = {0.0, config.arena_y_mm};
  const double zs[2] = {0.0, kArenaHeadroomMm};
  for (int s = 0; s <= kPerEdge; ++s) {
    const double t = static_cast<double>(s) / kPerEdge;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        samples.emplace_back(t * config.arena_x_mm, ys[a], zs[b]);
        samples.emplace_back(xs[a], t * config.arena_y_mm, zs[b]);
        samples.emplace_back(xs[a], ys[b], t * kArenaHeadroomMm);
      }
  }
  const double half_w = 0.5 * config.image_width * (1.0 - config.image_margin);
  const double half_h = 0.5 * config.image_height * (1.0 - config.image_margin);
  double f = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < centers.size(); ++i) {
    for (const auto& p : samples) {
      const Vec3 pc = rotations[i] * (p - centers[i]);
      const Vec2 d = config.distortion.apply(pc.head<2>() / pc.z());
      if (std::abs(d.x()) > 0.0) f = std::min(f, half_w / std::abs(d.x()));
      if (std::abs(d.y()) > 0.0) f = std::min(f, half_h / std::abs(d.y()));
    }
  }

  Mat3 K = Mat3::Identity();
  K(0, 0) = K(1, 1) = f;
  K(0, 2) = 0.5 * config.image_width;
  K(1, 2) = 0.5 * config.image_height;

  CameraRig rig;
  for (std::size_t i = 0; i < centers.size(); ++i)
    rig.cameras.emplace_back("cam" + std::to_string(i), K, config.distortion, rotations[i],
                             -rotations[i] * centers[i], config.image_width, config.image_height);
  return rig;
}

GroundTruth simulate(const ScenarioConfig& config) {
  config.validate();
  const SkeletonTemplate skel = SkeletonTemplate::pigeon();
  const double L = skel.body_length();
  const double r = skel.footprint_radius();
  const double lo_x = r, hi_x = config.arena_x_mm - r;
  const double lo_y = r, hi_y = config.arena_y_mm - r;
  const int n = config.n_individuals;

  Rng init = make_rng(config.seed, kInit);
  std::uniform_real_distribution<double> ux(lo_x, hi_x), uy(lo_y, hi_y);
  std::uniform_real_distribution<double> uangle(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> uspeed(config.speed_min_mm, config.speed_max_mm);

  std::vector<Vec2> pos;
  std::vector<double> heading, yaw, speed;
  constexpr int kMaxAttempts = 100000;
  for (int i = 0; i < n; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      const Vec2 p(ux(init), uy(init));
      placed = std::all_of(pos.begin(), pos.end(),
                           [&](const Vec2& q) { return (p - q).norm() >= 2.0 * L; });
      if (placed) pos.push_back(p);
    }
    if (!placed) throw ConfigError("n_individuals: arena too small for the required separation");
    heading.push_back(uangle(init));
    yaw.push_back(heading.back());
    speed.push_back(uspeed(init));
  }

  Rng motion = make_rng(config.seed, kMotion);
  Rng artic = make_rng(config.seed, kArticulation);
  std::normal_distribution<double> unit(0.0, 1.0);
  const double turn_sigma = 0.5 * (1.0 - config.heading_persistence);
  const double speed_sigma = 0.2 * (config.speed_max_mm - config.speed_min_mm) *
                             (1.0 - config.heading_persistence);
  constexpr double kArticulationMemory = 0.9;
  const double artic_step =
      config.articulation_mm * std::sqrt(1.0 - kArticulationMemory * kArticulationMemory);

  const std::size_t n_kp = skel.offsets.size();
  std::vector<std::vector<Vec3>> jitter(n, std::vector<Vec3>(n_kp, Vec3::Zero()));
  for (auto& j : jitter)
    for (auto& v : j) v = config.articulation_mm * Vec3(unit(artic), unit(artic), unit(artic));

  auto pose_of = [&](int i, int frame) {
    Pose3D p;
    p.frame = frame;
    p.global_id = i;
    const Eigen::AngleAxisd rot(yaw[i], Vec3::UnitZ());
    const Vec3 origin(pos[i].x(), pos[i].y(), 0.0);
    for (std::size_t k = 0; k < n_kp; ++k)
      p.keypoints.push_back({origin + rot * skel.offsets[k] + jitter[i][k], true});
    return p;
  };

  GroundTruth gt;
  gt.frames.reserve(config.n_frames);
  for (int frame = 0; frame < config.n_frames; ++frame) {
    if (frame > 0) {
      for (int i = 0; i < n; ++i) {
        heading[i] = wrap_angle(heading[i] + turn_sigma * unit(motion));
        speed[i] = std::clamp(speed[i] + speed_sigma * unit(motion), config.speed_min_mm,
                              config.speed_max_mm);

        Vec2 step = speed[i] * Vec2(std::cos(heading[i]), std::sin(heading[i]));
        for (int j = 0; j < n; ++j) {
          if (j == i) continue;
          const Vec2 d = pos[i] - pos[j];
          const double dist = d.norm();
          if (dist < L && dist > 0.0) step += 0.5 * (L - dist) * d / dist;
        }
        const double len = step.norm();
        if (len > config.speed_max_mm) step *= config.speed_max_mm / len;

        Vec2 next = pos[i] + step;
        if (next.x() < lo_x || next.x() > hi_x) {
          next.x() = next.x() < lo_x ? 2.0 * lo_x - next.x() : 2.0 * hi_x - next.x();
          heading[i] = wrap_angle(std::numbers::pi - heading[i]);
        }
        if (next.y() < lo_y || next.y() > hi_y) {
          next.y() = next.y() < lo_y ? 2.0 * lo_y - next.y() : 2.0 * hi_y - next.y();
          heading[i] = wrap_angle(-heading[i]);
        }
        next.x() = std::clamp(next.x(), lo_x, hi_x);
        next.y() = std::clamp(next.y(), lo_y, hi_y);

        const bool clear = std::all_of(pos.begin(), pos.end(), [&, i](const Vec2& q) {
          return &q == &pos[i] || (next - q).norm() >= 0.6 * L;
        });
        const bool moved = clear && next != pos[i];
        if (clear) {
          pos[i] = next;
        } else {
          heading[i] = wrap_angle(heading[i] + std::numbers::pi / 2.0);
        }

        // The body turns towards the heading only while walking.
        if (moved) {
          const double turn = std::clamp(wrap_angle(heading[i] - yaw[i]), -config.max_turn_rad,
                                         config.max_turn_rad);
          yaw[i] = wrap_angle(yaw[i] + turn);
        }
        for (auto& v : jitter[i])
          v = kArticulationMemory * v + artic_step * Vec3(unit(artic), unit(artic), unit(artic));
      }
    }
    std::vector<Pose3D> poses;
    poses.reserve(n);
    for (int i = 0; i < n; ++i) poses.push_back(pose_of(i, frame));
    gt.frames.push_back(std::move(poses));
  }
  return gt;
}

BBox keypoint_box(const std::vector<Keypoint2D>& keypoints) {
  double min_u = std::numeric_limits<double>::infinity(), max_u = -min_u;
  double min_v = min_u, max_v = -min_u;
  for (const auto& k : keypoints) {
    min_u = std::min(min_u, k.px.x());
    max_u = std::max(max_u, k.px.x());
    min_v = std::min(min_v, k.px.y());
    max_v = std::max(max_v, k.px.y());
  }
  const double w = std::max(1.0, (max_u - min_u) * kBoxMargin);
  const double h = std::max(1.0, (max_v - min_v) * kBoxMargin);
  return {0.5 * (min_u + max_u) - 0.5 * w, 0.5 * (min_v + max_v) - 0.5 * h, w, h};
}

namespace {

// Projects all keypoints; empty when any point is behind the camera or off-image.
std::vector<Keypoint2D> project_all(const CameraModel& cam, const std::vector<Keypoint3D>& kps) {
  std::vector<Keypoint2D> out;
  out.reserve(kps.size());
  for (const auto& k : kps) {
    const auto px = try_project(cam, k.position);
    if (!px || !cam.in_image(*px)) return {};
    out.push_back({*px, 1.0, true});
  }
  return out;
}

}  // namespace

RenderedScene render(const GroundTruth& gt, const CameraRig& rig, const ScenarioConfig& config) {
  config.validate();
  const SkeletonTemplate skel = SkeletonTemplate::pigeon();
  const double r = skel.footprint_radius();

  RenderedScene scene;
  scene.detections.assign(gt.n_frames(), std::vector<std::vector<Detection2D>>(rig.size()));

  for (std::size_t v = 0; v < rig.size(); ++v) {
    const CameraModel& cam = rig[v];
    Rng rng = make_rng(config.seed, kRenderBase + v);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_real_distribution<double> uconf(0.5, 1.0);
    std::uniform_real_distribution<double> uscore(0.6, 1.0);
    std::uniform_real_distribution<double> uclutter_score(0.5, 1.0);
    std::poisson_distribution<int> n_clutter(config.clutter_rate > 0.0 ? config.clutter_rate : 1.0);

    auto perturb = [&](std::vector<Keypoint2D> kps) {
      for (auto& k : kps) {
        k.px += config.noise_px * Vec2(noise(rng), noise(rng));
        k.confidence = uconf(rng);
      }
      return kps;
    };

    for (std::size_t f = 0; f < gt.n_frames(); ++f) {
      const int frame = static_cast<int>(f);
      std::vector<Detection2D> dets;
      std::vector<SidecarEntry> entries;

      for (const Pose3D& pose : gt.frames[f]) {
        std::vector<Keypoint2D> clean = project_all(cam, pose.keypoints);
        if (clean.empty()) continue;
        SidecarEntry e{cam.id(), frame, pose.global_id, -1, keypoint_box(clean), clean};
        const bool missed = u01(rng) < config.miss_prob;
        if (!missed) {
          Detection2D d;
          d.view_id = cam.id();
          d.frame = frame;
          d.keypoints = perturb(std::move(clean));
          d.bbox = keypoint_box(d.keypoints);
          d.score = uscore(rng);
          e.det_index = static_cast<int>(dets.size());
          dets.push_back(std::move(d));
        }
        entries.push_back(std::move(e));
      }

      const int n_fake = config.clutter_rate > 0.0 ? n_clutter(rng) : 0;
      for (int c = 0; c < n_fake; ++c) {
        const Vec3 origin(r + u01(rng) * (config.arena_x_mm - 2.0 * r),
                          r + u01(rng) * (config.arena_y_mm - 2.0 * r), 0.0);
        const Eigen::AngleAxisd rot((2.0 * u01(rng) - 1.0) * std::numbers::pi, Vec3::UnitZ());
        const double scale = 0.8 + 0.4 * u01(rng);
        std::vector<Keypoint3D> body;
        for (const auto& o : skel.offsets)
          body.push_back({origin + rot * (scale * o) + 10.0 * Vec3(noise(rng), noise(rng), noise(rng)),
                          true});
        std::vector<Keypoint2D> clean = project_all(cam, body);
        if (clean.empty()) continue;
        Detection2D d;
        d.view_id = cam.id();
        d.frame = frame;
        d.keypoints = perturb(clean);
        d.bbox = keypoint_box(d.keypoints);
        d.score = uclutter_score(rng);
        entries.push_back({cam.id(), frame, -1, static_cast<int>(dets.size()), keypoint_box(clean),
                           std::move(clean)});
        dets.push_back(std::move(d));
      }

      // Shuffle so that detection order carries no identity information.
      std::vector<int> order(dets.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      for (std::size_t i = order.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(rng)]);
      }
      std::vector<int> new_index(dets.size());
      auto& out = scene.detections[f][v];
      out.reserve(dets.size());
      for (std::size_t i = 0; i < order.size(); ++i) {
        new_index[order[i]] = static_cast<int>(i);
        out.push_back(std::move(dets[order[i]]));
      }
      for (auto& e : entries) {
        if (e.det_index >= 0) e.det_index = new_index[e.det_index];
        scene.sidecar.push_back(std::move(e));
      }
    }
  }
  return scene;
}

}  // namespace muppet
