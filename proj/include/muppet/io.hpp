#pragma once

#include <muppet/fusion3d.hpp>
#include <muppet/geometry.hpp>
#include <muppet/synthgen.hpp>
#include <muppet/tracking2d.hpp>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace muppet::io {

namespace fs = std::filesystem;
using nlohmann::json;

// All readers throw FormatError with the file name and line number.

// Calibration: array of {id, K[9], dist[4], R[9], t[3], size[2]}.
json calibration_to_json(const CameraRig& rig);
CameraRig calibration_from_json(const json& j);
CameraRig read_calibration(const fs::path& path);
void write_calibration(const fs::path& path, const CameraRig& rig);

// Detections: {view, frame, bbox[4], score, kp[[u,v,conf,vis]...]}.
json detection_to_json(const Detection2D& d);
Detection2D detection_from_json(const json& j, std::size_t schema_size = kNumKeypoints);

// 2D tracks: a detection plus its local track id under "id".
json tracked_to_json(const TrackedDetection& t);
TrackedDetection tracked_from_json(const json& j, std::size_t schema_size = kNumKeypoints);

// 3D poses: {frame, id, views[], kp3d[[x,y,z,valid]...], smoothed}.
json pose_to_json(const Pose3D& p);
Pose3D pose_from_json(const json& j, std::size_t schema_size = kNumKeypoints);
std::vector<Pose3D> read_poses(const fs::path& path);

// Ground-truth sidecar: {view, frame, id, det, bbox[4], kp[[u,v]...]}.
json sidecar_to_json(const SidecarEntry& e);
SidecarEntry sidecar_from_json(const json& j);
std::vector<SidecarEntry> read_sidecar(const fs::path& path);

/// {"(view,local_id)": global_id}
json identities_to_json(const GlobalIdentityMap& map);

/// Scenario and pipeline configuration files. Unknown keys and wrong types
/// raise ConfigError naming the field.
ScenarioConfig scenario_from_json(const json& j);
json scenario_to_json(const ScenarioConfig& c);
PipelineConfig pipeline_from_json(const json& j);
json pipeline_to_json(const PipelineConfig& c);

/// Parses a JSON document; syntax errors raise ConfigError with line and column.
json parse_config_file(const fs::path& path);

/// Reads every line of a JSON-lines file.
std::vector<json> read_jsonl(const fs::path& path);

/// Streams one view's detection file frame by frame. Frames must be
/// non-decreasing and every record must belong to `view_id`.
class DetectionReader {
 public:
  DetectionReader(fs::path path, std::string view_id, std::size_t schema_size = kNumKeypoints);

  /// Detections of `frame`. Frames must be requested in increasing order;
  /// records of skipped earlier frames are discarded.
  std::vector<Detection2D> read_frame(int frame);

  const fs::path& path() const { return path_; }

  /// Frame index of the last record, or -1 for an empty file. Reads only the
  /// tail of the file.
  static int last_frame(const fs::path& path);

 private:
  bool fetch();

  fs::path path_;
  std::string view_id_;
  std::size_t schema_size_;
  std::ifstream in_;
  std::size_t line_no_ = 0;
  std::optional<Detection2D> pending_;
  int last_seen_ = -1;
};

/// Writes to `path.tmp` and renames over `path` on commit(). An uncommitted
/// writer removes its temporary file.
class AtomicWriter {
 public:
  explicit AtomicWriter(fs::path path);
  ~AtomicWriter();
  AtomicWriter(const AtomicWriter&) = delete;
  AtomicWriter& operator=(const AtomicWriter&) = delete;

  std::ostream& stream() { return out_; }
  void write_line(const json& j) { out_ << j.dump() << '\n'; }
  void commit();

 private:
  fs::path path_;
  fs::path tmp_;
  std::ofstream out_;
  bool committed_ = false;
};

void write_json_file(const fs::path& path, const json& j);
void write_jsonl_file(const fs::path& path, const std::vector<json>& lines);

/// Detection file of a view inside a detections directory.
fs::path detection_path(const fs::path& dir, const std::string& view_id);

}  // namespace muppet::io
