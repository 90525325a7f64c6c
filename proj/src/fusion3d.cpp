#include <muppet/fusion3d.hpp>

#include <spdlog/spdlog.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <exception>
#include <stdexcept>
#include <utility>

namespace muppet {

namespace {

struct GlobalMembers {
  int global_id = 0;
  std::vector<std::pair<std::size_t, const Detection2D*>> views;  // sorted by view index
};

std::vector<GlobalMembers> collect_members(const FrameAssociations& associations,
                                           const GlobalIdentityMap& id_map,
                                           const CameraRig& rig) {
  std::vector<GlobalMembers> members;
  const auto ids = id_map.global_ids();
  std::map<int, std::size_t> slot;
  for (int g : ids) {
    slot[g] = members.size();
    members.push_back({g, {}});
  }
  for (std::size_t v = 0; v < associations.size() && v < rig.size(); ++v) {
    for (const auto& t : associations[v]) {
      const auto g = id_map.find(rig[v].id(), t.local_track_id);
      if (!g) continue;
      members[slot.at(*g)].views.emplace_back(v, &t.detection);
    }
  }
  return members;
}

double median(std::vector<double> values) {
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  double m = values[mid];
  if (values.size() % 2 == 0) {
    const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    m = 0.5 * (m + lower);
  }
  return m;
}

Pose3D fuse_global(int frame, const GlobalMembers& members, const CameraRig& rig,
                   const FusionOptions& options) {
  Pose3D pose;
  pose.frame = frame;
  pose.global_id = members.global_id;
  std::size_t n_kp = 0;
  for (const auto& [v, det] : members.views) n_kp = std::max(n_kp, det->keypoints.size());
  if (n_kp == 0) n_kp = kNumKeypoints;
  pose.keypoints.assign(n_kp, Keypoint3D{});

  auto active = members.views;
  std::vector<Observation> obs;
  std::vector<std::size_t> obs_view;
  while (active.size() >= 2) {
    std::vector<Keypoint3D> kps(n_kp);
    std::vector<std::vector<double>> residuals(active.size());
    for (std::size_t k = 0; k < n_kp; ++k) {
      obs.clear();
      obs_view.clear();
      for (std::size_t a = 0; a < active.size(); ++a) {
        const Detection2D* det = active[a].second;
        if (k >= det->keypoints.size() || !det->keypoints[k].usable()) continue;
        obs.push_back({&rig[active[a].first], det->keypoints[k].px});
        obs_view.push_back(a);
      }
      if (obs.size() < 2) continue;
      const auto tri = triangulate(obs, options.refine);
      if (!tri) continue;
      kps[k] = {tri->point, true};
      for (std::size_t i = 0; i < obs.size(); ++i) {
        const auto px = try_project(*obs[i].camera, tri->point);
        if (px) residuals[obs_view[i]].push_back((*px - obs[i].pixel).norm());
      }
    }

    double worst = -1.0;
    std::size_t worst_idx = 0;
    for (std::size_t a = 0; a < active.size(); ++a) {
      if (residuals[a].empty()) continue;
      const double m = median(residuals[a]);
      if (m > worst) {
        worst = m;
        worst_idx = a;
      }
    }
    if (worst <= options.view_consistency_gate_px) {
      pose.keypoints = std::move(kps);
      for (std::size_t a = 0; a < active.size(); ++a)
        if (!residuals[a].empty()) pose.contributing_views.push_back(rig[active[a].first].id());
      break;
    }
    if (active.size() == 2) break;  // cannot tell which of two views is wrong
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(worst_idx));
  }
  return pose;
}

}  // namespace

bool Pose3D::any_valid() const {
  return std::any_of(keypoints.begin(), keypoints.end(),
                     [](const Keypoint3D& k) { return k.valid; });
}

std::vector<Pose3D> fuse_frame_serial(int frame, const FrameAssociations& associations,
                                      const GlobalIdentityMap& id_map, const CameraRig& rig,
                                      const FusionOptions& options) {
  const auto members = collect_members(associations, id_map, rig);
  std::vector<Pose3D> out(members.size());
  for (std::size_t i = 0; i < members.size(); ++i)
    out[i] = fuse_global(frame, members[i], rig, options);
  return out;
}

std::vector<Pose3D> fuse_frame(int frame, const FrameAssociations& associations,
                               const GlobalIdentityMap& id_map, const CameraRig& rig,
                               const FusionOptions& options) {
  const auto members = collect_members(associations, id_map, rig);
  std::vector<Pose3D> out(members.size());
  const auto n = static_cast<std::int64_t>(members.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) out[i] = fuse_global(frame, members[i], rig, options);
  return out;
}

// ---------------------------------------------------------------------------
// Smoothing

void SmootherConfig::validate() const {
  if (!(measurement_sigma_mm > 0.0)) throw ConfigError("smoother measurement_sigma_mm must be > 0");
  if (!(accel_sigma_mm >= 0.0)) throw ConfigError("smoother accel_sigma_mm must be >= 0");
  if (!(initial_velocity_sigma_mm > 0.0))
    throw ConfigError("smoother initial_velocity_sigma_mm must be > 0");
  if (gap_limit < 0) throw ConfigError("smoother gap_limit must be >= 0");
}

Keypoint3D KeypointFilter::step(const Keypoint3D& measurement, const SmootherConfig& config,
                                bool& predicted_only) {
  using Mat6 = Eigen::Matrix<double, 6, 6>;
  using Mat3x6 = Eigen::Matrix<double, 3, 6>;
  predicted_only = false;
  const double r = config.measurement_sigma_mm * config.measurement_sigma_mm;

  if (!initialized_) {
    if (!measurement.valid) return {};
    x_.head<3>() = measurement.position;
    x_.tail<3>().setZero();
    const double pv = config.initial_velocity_sigma_mm * config.initial_velocity_sigma_mm;
    P_.setZero();
    P_.diagonal() << r, r, r, pv, pv, pv;
    initialized_ = true;
    gap_ = 0;
    return {x_.head<3>(), true};
  }

  Mat6 F = Mat6::Identity();
  F.topRightCorner<3, 3>().setIdentity();
  const double q = config.accel_sigma_mm * config.accel_sigma_mm;
  Mat6 Q;
  Q << 0.25 * Mat3::Identity(), 0.5 * Mat3::Identity(), 0.5 * Mat3::Identity(), Mat3::Identity();
  Q *= q;
  x_ = F * x_;
  P_ = F * P_ * F.transpose() + Q;

  if (measurement.valid) {
    Mat3x6 H = Mat3x6::Zero();
    H.leftCols<3>().setIdentity();
    const Mat3 S = H * P_ * H.transpose() + r * Mat3::Identity();
    const Eigen::Matrix<double, 6, 3> K = P_ * H.transpose() * S.inverse();
    x_ += K * (measurement.position - H * x_);
    const Mat6 IKH = Mat6::Identity() - K * H;
    P_ = IKH * P_ * IKH.transpose() + K * (r * Mat3::Identity()) * K.transpose();
    P_ = (0.5 * (P_ + P_.transpose())).eval();
    gap_ = 0;
    return {x_.head<3>(), true};
  }

  ++gap_;
  if (gap_ <= config.gap_limit) {
    predicted_only = true;
    return {x_.head<3>(), true};
  }
  initialized_ = false;  // re-seed on the next measurement
  return {};
}

Smoother3D::Smoother3D(SmootherConfig config) : config_(config) { config_.validate(); }

const KeypointFilter* Smoother3D::filter(int global_id, std::size_t keypoint) const {
  const auto it = filters_.find(global_id);
  if (it == filters_.end() || keypoint >= it->second.size()) return nullptr;
  return &it->second[keypoint];
}

std::vector<Pose3D> Smoother3D::step(const std::vector<Pose3D>& poses) {
  std::vector<Pose3D> out;
  out.reserve(poses.size());
  for (const Pose3D& in : poses) {
    auto& filters = filters_[in.global_id];
    if (filters.size() < in.keypoints.size()) filters.resize(in.keypoints.size());

    const auto last = last_frame_.find(in.global_id);
    if (last != last_frame_.end()) {
      if (in.frame <= last->second)
        throw std::invalid_argument("smoother frames must increase per global id");
      // Frames skipped by the caller are prediction-only steps.
      for (int f = last->second + 1; f < in.frame; ++f) {
        bool unused = false;
        for (auto& filt : filters) filt.step({}, config_, unused);
      }
    }
    last_frame_[in.global_id] = in.frame;

    Pose3D o = in;
    o.smoothed = false;
    for (std::size_t k = 0; k < in.keypoints.size(); ++k) {
      bool predicted_only = false;
      o.keypoints[k] = filters[k].step(in.keypoints[k], config_, predicted_only);
      if (predicted_only) o.smoothed = true;
    }
    out.push_back(std::move(o));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

void PipelineConfig::validate() const {
  tracker.validate();
  smoother.validate();
  if (!(match_threshold_mm > 0.0)) throw ConfigError("match_threshold_mm must be > 0");
  if (!(fusion.view_consistency_gate_px > 0.0))
    throw ConfigError("view_consistency_gate_px must be > 0");
  if (threads < 0) throw ConfigError("threads must be >= 0");
}

Pipeline::Pipeline(CameraRig rig, PipelineConfig config)
    : rig_(std::move(rig)), config_(config), smoother_(config.smoother) {
  config_.validate();
  if (rig_.size() < 2) throw ConfigError("pipeline needs at least two cameras");
  for (const auto& cam : rig_.cameras) trackers_.emplace_back(cam.id(), config_.tracker);
}

FrameResult Pipeline::process(int frame,
                              const std::vector<std::vector<Detection2D>>& detections) {
  if (detections.size() != rig_.size())
    throw FormatError("expected detections for " + std::to_string(rig_.size()) + " views, got " +
                      std::to_string(detections.size()));

  FrameResult result;
  result.frame = frame;
  result.tracks.resize(rig_.size());

  const int n_views = static_cast<int>(rig_.size());
  const int threads = config_.threads > 0 ? config_.threads : n_views;
  std::vector<std::exception_ptr> errors(rig_.size());
#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1)
  for (int v = 0; v < n_views; ++v) {
    try {
      result.tracks[v] = trackers_[v].step(detections[v]);
    } catch (...) {
      errors[v] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  if (!id_map_) {
    std::size_t total = 0;
    for (const auto& d : detections) total += d.size();
    if (total == 0) throw EmptyFirstFrame("no view has detections in the first frame");
    id_map_ = match_identities(result.tracks, rig_, config_.match_threshold_mm);
    spdlog::info("frame {}: matched {} tracks into {} identities", frame, id_map_->size(),
                 id_map_->global_ids().size());
  } else if (config_.rematch_frame && *config_.rematch_frame == frame) {
    rematch(result.tracks);
  }

  for (std::size_t v = 0; v < rig_.size(); ++v) {
    for (const auto& t : result.tracks[v]) {
      TrackKey key{rig_[v].id(), t.local_track_id};
      if (!id_map_->find(key) && ignored_tracks_.insert(key).second)
        spdlog::debug("frame {}: new track ({},{}) has no global identity; skipped for fusion",
                      frame, key.view_id, key.local_id);
    }
  }

  result.triangulated = threads > 1
                            ? fuse_frame(frame, result.tracks, *id_map_, rig_, config_.fusion)
                            : fuse_frame_serial(frame, result.tracks, *id_map_, rig_, config_.fusion);
  result.poses = config_.smoothing ? smoother_.step(result.triangulated) : result.triangulated;
  ++frames_processed_;
  return result;
}

void Pipeline::rematch(const FrameAssociations& tracks) {
  const GlobalIdentityMap fresh = match_identities(tracks, rig_, config_.match_threshold_mm);
  const GlobalIdentityMap& old = *id_map_;
  GlobalIdentityMap merged;
  std::set<int> used;
  int next = old.n_globals();

  for (int g : fresh.global_ids()) {
    std::map<int, int> votes;
    const auto keys = fresh.members(g);
    for (const auto& k : keys)
      if (const auto prev = old.find(k)) ++votes[*prev];
    int target = -1, best = 0;
    for (const auto& [prev, n] : votes)
      if (n > best && !used.contains(prev)) {
        best = n;
        target = prev;
      }
    if (target < 0) target = next++;
    used.insert(target);
    for (const auto& k : keys) merged.assign(k, target);
  }
  for (const auto& [k, g] : old.entries()) {
    if (merged.find(k)) continue;
    try {
      merged.assign(k, g);
    } catch (const std::invalid_argument&) {
      // the global already owns a fresher track in that view
    }
  }
  spdlog::info("re-matched identities: {} globals", merged.global_ids().size());
  id_map_ = std::move(merged);
  ignored_tracks_.clear();
}

std::vector<FrameResult> run_pipeline(
    const std::vector<std::vector<std::vector<Detection2D>>>& frames, const CameraRig& rig,
    const PipelineConfig& config) {
  Pipeline pipeline(rig, config);
  std::vector<FrameResult> out;
  out.reserve(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f)
    out.push_back(pipeline.process(static_cast<int>(f), frames[f]));
  return out;
}

}  // namespace muppet
