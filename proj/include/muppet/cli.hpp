#pragma once

#include <muppet/fusion3d.hpp>
#include <muppet/synthgen.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace muppet::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kEmptyFirstFrame = 3,
  kCalibrationError = 4,
  kEvalMismatch = 5,
};

/// Entry point; `args` excludes the program name.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

/// Writes calib.json, detections/<view>.jsonl, gt_poses.jsonl, gt_2d.jsonl.
/// Returns the written paths relative to `out_dir`.
std::vector<std::string> write_scenario(const ScenarioConfig& config, const fs::path& out_dir);

struct TrackOptions {
  fs::path detections_dir;
  fs::path calibration;
  fs::path output;
  std::optional<fs::path> tracks2d;
  std::optional<fs::path> identities;
  std::optional<int> max_frames;
  PipelineConfig config;
};

struct TrackStats {
  int frames = 0;
  int individuals = 0;  ///< global identities with a pose in the output
  bool truncated = false;
  double load_s = 0.0;
  double process_s = 0.0;
  double save_s = 0.0;
  double total_s = 0.0;
};

/// Streams detections through the pipeline and writes pose JSON-lines.
/// Frames 0 .. (last frame common to all views) are processed. Throws the
/// library errors (FormatError for missing or malformed inputs).
TrackStats track(const TrackOptions& options);

}  // namespace muppet::cli
