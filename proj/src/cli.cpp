#include <muppet/cli.hpp>

#include <muppet/evaluation.hpp>
#include <muppet/io.hpp>
#include <muppet/metrics.hpp>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <climits>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <unistd.h>

#ifndef MUPPET_VERSION
#define MUPPET_VERSION "unknown"
#endif

namespace muppet::cli {

namespace {

using io::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void configure_logging() {
  static const bool once = [] {
    auto logger = spdlog::stderr_color_mt("muppet");
    spdlog::set_default_logger(logger);
    return true;
  }();
  (void)once;
  spdlog::level::level_enum level = spdlog::level::info;
  if (const char* env = std::getenv("MUPPET_LOG"); env && *env) {
    level = spdlog::level::from_str(env);
    if (level == spdlog::level::off && std::string(env) != "off") {
      spdlog::warn("MUPPET_LOG='{}' is not a log level; using info", env);
      level = spdlog::level::info;
    }
  }
  spdlog::set_level(level);
}

// Maps library errors onto the exit-code taxonomy.
int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kConfigError;
  if (dynamic_cast<const EmptyFirstFrame*>(&e)) return kEmptyFirstFrame;
  if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const InvalidCamera*>(&e))
    return kCalibrationError;
  if (dynamic_cast<const EmptyMatchSet*>(&e)) return kEvalMismatch;
  return kFailure;
}

json base_manifest(const std::string& command) {
  return {{"command", command}, {"version", MUPPET_VERSION}, {"status", "running"}};
}

// Runs `body`, records the outcome in the manifest and always writes it.
int with_manifest(json& manifest, const std::optional<fs::path>& path,
                  const std::function<void()>& body) {
  int code = kOk;
  try {
    body();
    manifest["status"] = "ok";
  } catch (const std::exception& e) {
    code = exit_code_for(e);
    manifest["status"] = "error";
    manifest["error"] = e.what();
    std::cerr << "error: " << e.what() << '\n';
  }
  manifest["exit_code"] = code;
  if (path) {
    try {
      io::write_json_file(*path, manifest);
    } catch (const std::exception& e) {
      std::cerr << "error: cannot write manifest: " << e.what() << '\n';
      if (code == kOk) code = kFailure;
    }
  }
  return code;
}

std::string table(const std::vector<std::string>& header, const std::vector<std::string>& row) {
  std::ostringstream os;
  std::vector<std::size_t> width(header.size());
  for (std::size_t i = 0; i < header.size(); ++i)
    width[i] = std::max(header[i].size(), row[i].size()) + 2;
  for (std::size_t i = 0; i < header.size(); ++i) os << std::setw(static_cast<int>(width[i])) << header[i];
  os << '\n';
  for (std::size_t i = 0; i < row.size(); ++i) os << std::setw(static_cast<int>(width[i])) << row[i];
  os << '\n';
  return os.str();
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

void emit_report(const json& report, const std::string& text, const std::optional<fs::path>& json_out) {
  std::cout << report.dump(2) << '\n' << text;
  if (json_out) io::write_json_file(*json_out, report);
}

std::set<int> frames_of(const std::vector<Pose3D>& poses) {
  std::set<int> s;
  for (const auto& p : poses) s.insert(p.frame);
  return s;
}

void require_overlap(const std::set<int>& a, const std::set<int>& b) {
  for (int f : a)
    if (b.contains(f)) return;
  throw EmptyMatchSet("prediction and ground truth share no frames");
}

}  // namespace

std::vector<std::string> write_scenario(const ScenarioConfig& config, const fs::path& out_dir) {
  config.validate();
  const CameraRig rig = build_rig(config);
  const GroundTruth gt = simulate(config);
  const RenderedScene scene = render(gt, rig, config);

  std::vector<std::string> written;
  io::write_calibration(out_dir / "calib.json", rig);
  written.push_back("calib.json");

  for (std::size_t v = 0; v < rig.size(); ++v) {
    const fs::path rel = fs::path("detections") / (rig[v].id() + ".jsonl");
    io::AtomicWriter w(out_dir / rel);
    for (const auto& frame : scene.detections)
      for (const auto& d : frame[v]) w.write_line(io::detection_to_json(d));
    w.commit();
    written.push_back(rel.string());
  }

  {
    io::AtomicWriter w(out_dir / "gt_poses.jsonl");
    for (const auto& frame : gt.frames)
      for (const auto& p : frame) w.write_line(io::pose_to_json(p));
    w.commit();
    written.push_back("gt_poses.jsonl");
  }
  {
    io::AtomicWriter w(out_dir / "gt_2d.jsonl");
    for (const auto& e : scene.sidecar) w.write_line(io::sidecar_to_json(e));
    w.commit();
    written.push_back("gt_2d.jsonl");
  }
  return written;
}

TrackStats track(const TrackOptions& options) {
  const auto t_start = Clock::now();
  TrackStats stats;

  auto t0 = Clock::now();
  const CameraRig rig = io::read_calibration(options.calibration);
  std::vector<io::DetectionReader> readers;
  int common_last = INT_MAX, longest = -1;
  for (const auto& cam : rig.cameras) {
    const fs::path path = io::detection_path(options.detections_dir, cam.id());
    if (!fs::exists(path))
      throw FormatError("missing detection stream for view '" + cam.id() + "': " + path.string());
    const int last = io::DetectionReader::last_frame(path);
    common_last = std::min(common_last, last);
    longest = std::max(longest, last);
    readers.emplace_back(path, cam.id());
  }
  if (common_last < longest) {
    stats.truncated = true;
    spdlog::warn("detection streams end at different frames; processing the common prefix 0..{}",
                 common_last);
  }
  if (options.max_frames) common_last = std::min(common_last, *options.max_frames - 1);
  if (common_last < 0) throw EmptyFirstFrame("no detections in the first frame");
  stats.load_s += seconds_since(t0);

  Pipeline pipeline(rig, options.config);
  io::AtomicWriter out(options.output);
  std::optional<io::AtomicWriter> tracks_out;
  if (options.tracks2d) tracks_out.emplace(*options.tracks2d);
  std::set<int> seen_globals;

  for (int frame = 0; frame <= common_last; ++frame) {
    t0 = Clock::now();
    std::vector<std::vector<Detection2D>> detections(rig.size());
    for (std::size_t v = 0; v < rig.size(); ++v) detections[v] = readers[v].read_frame(frame);
    stats.load_s += seconds_since(t0);

    t0 = Clock::now();
    const FrameResult result = pipeline.process(frame, detections);
    stats.process_s += seconds_since(t0);

    t0 = Clock::now();
    for (const auto& pose : result.poses) {
      if (!pose.any_valid()) continue;
      out.write_line(io::pose_to_json(pose));
      seen_globals.insert(pose.global_id);
    }
    if (tracks_out)
      for (const auto& view : result.tracks)
        for (const auto& t : view) tracks_out->write_line(io::tracked_to_json(t));
    stats.save_s += seconds_since(t0);
    ++stats.frames;
  }

  t0 = Clock::now();
  out.commit();
  if (tracks_out) tracks_out->commit();
  if (options.identities && pipeline.identities())
    io::write_json_file(*options.identities, io::identities_to_json(*pipeline.identities()));
  stats.save_s += seconds_since(t0);

  stats.individuals = static_cast<int>(seen_globals.size());
  stats.total_s = seconds_since(t_start);
  return stats;
}

namespace {

json stats_json(const TrackStats& s) {
  return {{"frames", s.frames},
          {"individuals", s.individuals},
          {"truncated", s.truncated},
          {"timings_s",
           {{"load", s.load_s}, {"process", s.process_s}, {"save", s.save_s}, {"total", s.total_s}}},
          {"fps", s.total_s > 0.0 ? s.frames / s.total_s : 0.0}};
}

PipelineConfig load_pipeline_config(const std::optional<fs::path>& path) {
  if (!path) return {};
  return io::pipeline_from_json(io::parse_config_file(*path));
}

json pose_report_json(const PoseReport& r, const std::string& mode) {
  return {{"mode", mode},       {"rmse", r.rmse},   {"median", r.median},
          {"pck05", r.pck05},   {"pck10", r.pck10}, {"n_keypoints", r.n_keypoints},
          {"n_unmatched_gt", r.n_unmatched_gt}};
}

json mot_report_json(const MotReport& r, const std::string& mode) {
  return {{"mode", mode},         {"hota", r.hota}, {"mota", r.mota}, {"motp", r.motp},
          {"recall", r.recall},   {"precision", r.precision},        {"mt", r.mt},
          {"ml", r.ml},           {"fpf", r.fpf},   {"ids", r.ids},   {"frag", r.frag},
          {"idf1", r.idf1}};
}

}  // namespace

int run(int argc, const char* const* argv) {
  configure_logging();

  CLI::App app{"Multi-view 3D multi-animal pose tracking from 2D keypoint detections"};
  app.set_version_flag("--version", MUPPET_VERSION);
  app.require_subcommand(1);
  int code = kOk;

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-view scene");
  std::optional<fs::path> synth_config;
  fs::path synth_out;
  std::optional<std::uint64_t> seed;
  std::optional<int> individuals, frames, cameras;
  std::optional<double> noise, miss, clutter;
  synth->add_option("--config", synth_config, "Scenario JSON");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", seed);
  synth->add_option("--individuals", individuals);
  synth->add_option("--frames", frames);
  synth->add_option("--cameras", cameras);
  synth->add_option("--noise", noise, "Keypoint noise sigma, px");
  synth->add_option("--miss", miss, "Miss probability");
  synth->add_option("--clutter", clutter, "Clutter detections per frame and view");
  synth->callback([&] {
    json manifest = base_manifest("synth");
    code = with_manifest(manifest, synth_out / "manifest.json", [&] {
      const auto t0 = Clock::now();
      ScenarioConfig c;
      if (synth_config) c = io::scenario_from_json(io::parse_config_file(*synth_config));
      if (seed) c.seed = *seed;
      if (individuals) c.n_individuals = *individuals;
      if (frames) c.n_frames = *frames;
      if (cameras) c.n_cameras = *cameras;
      if (noise) c.noise_px = *noise;
      if (miss) c.miss_prob = *miss;
      if (clutter) c.clutter_rate = *clutter;
      c.validate();
      manifest["config"] = io::scenario_to_json(c);
      manifest["outputs"] = write_scenario(c, synth_out);
      manifest["timings_s"] = {{"total", seconds_since(t0)}};
      spdlog::info("wrote scenario ({} individuals, {} frames) to {}", c.n_individuals,
                   c.n_frames, synth_out.string());
    });
  });

  // track
  auto* trk = app.add_subcommand("track", "Run the tracking pipeline on detection streams");
  TrackOptions topt;
  std::optional<fs::path> track_config, track_manifest;
  std::optional<int> threads, rematch, max_frames;
  bool no_smooth = false;
  trk->add_option("--detections", topt.detections_dir, "Directory with <view>.jsonl streams")->required();
  trk->add_option("--calib", topt.calibration, "Calibration JSON")->required();
  trk->add_option("--out", topt.output, "Output pose JSON-lines")->required();
  trk->add_option("--config", track_config, "Pipeline config JSON");
  trk->add_option("--threads", threads, "Worker threads (default: number of views)");
  trk->add_option("--rematch-frame", rematch, "Re-run identity matching at this frame");
  trk->add_flag("--no-smooth", no_smooth, "Disable temporal smoothing");
  trk->add_option("--tracks2d", topt.tracks2d, "Also write per-view 2D tracks JSON-lines");
  trk->add_option("--identities", topt.identities, "Write the identity map JSON");
  trk->add_option("--max-frames", max_frames, "Process at most this many frames");
  trk->add_option("--manifest", track_manifest, "Run manifest (default: <out>.manifest.json)");
  trk->callback([&] {
    json manifest = base_manifest("track");
    const fs::path mpath = track_manifest ? *track_manifest : fs::path(topt.output.string() + ".manifest.json");
    manifest["inputs"] = {{"detections", topt.detections_dir.string()},
                          {"calib", topt.calibration.string()}};
    manifest["outputs"] = {{"poses", topt.output.string()}};
    code = with_manifest(manifest, mpath, [&] {
      topt.config = load_pipeline_config(track_config);
      if (threads) topt.config.threads = *threads;
      if (rematch) topt.config.rematch_frame = *rematch;
      if (no_smooth) topt.config.smoothing = false;
      topt.max_frames = max_frames;
      topt.config.validate();
      manifest["config"] = io::pipeline_to_json(topt.config);
      const TrackStats s = track(topt);
      manifest.update(stats_json(s));
      spdlog::info("tracked {} frames, {} individuals, {:.1f} fps", s.frames, s.individuals,
                   s.total_s > 0 ? s.frames / s.total_s : 0.0);
    });
  });

  // eval-pose
  auto* epose = app.add_subcommand("eval-pose", "Pose accuracy: RMSE, median, PCK");
  fs::path pose_pred, pose_gt;
  std::string pose_mode = "3d";
  std::optional<fs::path> pose_json;
  double match_mm = kPoseMatchMm;
  epose->add_option("--pred", pose_pred)->required();
  epose->add_option("--gt", pose_gt)->required();
  epose->add_option("--mode", pose_mode)->check(CLI::IsMember({"2d", "3d"}));
  epose->add_option("--match-mm", match_mm, "3D pose association distance");
  epose->add_option("--json", pose_json, "Write the report JSON here");
  epose->callback([&] {
    json manifest = base_manifest("eval-pose");
    code = with_manifest(manifest, std::nullopt, [&] {
      std::vector<PosePair> pairs;
      PoseMode mode = PoseMode::k3D;
      if (pose_mode == "3d") {
        const auto pred = io::read_poses(pose_pred);
        const auto gt = io::read_poses(pose_gt);
        require_overlap(frames_of(pred), frames_of(gt));
        pairs = match_poses_3d(pred, gt, match_mm);
      } else {
        mode = PoseMode::k2D;
        std::vector<Detection2D> pred;
        for (const auto& j : io::read_jsonl(pose_pred)) pred.push_back(io::detection_from_json(j));
        const auto gt = io::read_sidecar(pose_gt);
        std::set<int> pf, gf;
        for (const auto& d : pred) pf.insert(d.frame);
        for (const auto& e : gt) gf.insert(e.frame);
        require_overlap(pf, gf);
        pairs = match_poses_2d(pred, gt);
      }
      const PoseReport r = evaluate_pose(pairs, mode);
      const std::string unit = mode == PoseMode::k2D ? "px" : "mm";
      emit_report(pose_report_json(r, pose_mode),
                  table({"RMSE(" + unit + ")", "Median(" + unit + ")", "PCK05(%)", "PCK10(%)"},
                        {fmt(r.rmse), fmt(r.median), fmt(r.pck05, 2), fmt(r.pck10, 2)}),
                  pose_json);
    });
  });

  // eval-mot
  auto* emot = app.add_subcommand("eval-mot", "Tracking accuracy: HOTA, CLEAR-MOT, IDF1");
  fs::path mot_pred, mot_gt;
  std::string mot_mode = "3d";
  std::optional<fs::path> mot_json;
  double gate_mm = kDistanceGate3DMm;
  bool no_interp = false;
  emot->add_option("--pred", mot_pred)->required();
  emot->add_option("--gt", mot_gt)->required();
  emot->add_option("--mode", mot_mode)->check(CLI::IsMember({"2d", "3d"}));
  emot->add_option("--gate-mm", gate_mm, "3D association gate on the bottom keel");
  emot->add_flag("--no-interpolate", no_interp, "Do not fill ground-truth gaps");
  emot->add_option("--json", mot_json, "Write the report JSON here");
  emot->callback([&] {
    json manifest = base_manifest("eval-mot");
    code = with_manifest(manifest, std::nullopt, [&] {
      TrackingProblem problem;
      if (mot_mode == "3d") {
        const auto pred = io::read_poses(mot_pred);
        const auto gt = io::read_poses(mot_gt);
        require_overlap(frames_of(pred), frames_of(gt));
        problem = mot_problem_3d(pred, gt, gate_mm, kp::kBottomKeel, !no_interp);
      } else {
        std::vector<TrackedDetection> pred;
        for (const auto& j : io::read_jsonl(mot_pred)) pred.push_back(io::tracked_from_json(j));
        const auto gt = io::read_sidecar(mot_gt);
        std::set<int> pf, gf;
        for (const auto& t : pred) pf.insert(t.detection.frame);
        for (const auto& e : gt) gf.insert(e.frame);
        require_overlap(pf, gf);
        problem = mot_problem_2d(pred, gt);
      }
      const MotReport r = evaluate_mot(problem);
      emit_report(mot_report_json(r, mot_mode),
                  table({"HOTA", "MOTA", "MOTP", "Rcll", "Prcn", "MT", "ML", "FPF", "IDS", "Frag",
                         "IDF1"},
                        {fmt(r.hota), fmt(r.mota), fmt(r.motp), fmt(r.recall), fmt(r.precision),
                         fmt(r.mt), fmt(r.ml), fmt(r.fpf), std::to_string(r.ids),
                         std::to_string(r.frag), fmt(r.idf1)}),
                  mot_json);
    });
  });

  // bench
  auto* bench = app.add_subcommand("bench", "Timed end-to-end runs including loading and saving");
  TrackOptions bopt;
  std::optional<fs::path> bench_config, bench_json, bench_out;
  int repeat = 3;
  std::optional<int> bench_threads;
  bench->add_option("--detections", bopt.detections_dir)->required();
  bench->add_option("--calib", bopt.calibration)->required();
  bench->add_option("--config", bench_config);
  bench->add_option("--repeat", repeat)->check(CLI::PositiveNumber);
  bench->add_option("--threads", bench_threads);
  bench->add_option("--out", bench_out, "Pose output path (default: a temporary file)");
  bench->add_option("--json", bench_json, "Write the benchmark manifest here");
  bench->callback([&] {
    json manifest = base_manifest("bench");
    code = with_manifest(manifest, bench_json, [&] {
      bopt.config = load_pipeline_config(bench_config);
      if (bench_threads) bopt.config.threads = *bench_threads;
      bopt.config.validate();
      bopt.output = bench_out ? *bench_out
                              : fs::temp_directory_path() /
                                    ("muppet_bench_" + std::to_string(::getpid()) + ".jsonl");
      manifest["config"] = io::pipeline_to_json(bopt.config);
      json runs = json::array();
      std::vector<double> fps;
      TrackStats last;
      for (int r = 0; r < repeat; ++r) {
        last = track(bopt);
        fps.push_back(last.total_s > 0.0 ? last.frames / last.total_s : 0.0);
        runs.push_back(stats_json(last));
      }
      if (!bench_out) fs::remove(bopt.output);
      const double mean_fps = std::accumulate(fps.begin(), fps.end(), 0.0) / fps.size();
      double mean_s = 0.0;
      for (const auto& r : runs) mean_s += r["timings_s"]["total"].get<double>() / runs.size();
      manifest["repeat"] = repeat;
      manifest["runs"] = runs;
      manifest["frames"] = last.frames;
      manifest["individuals"] = last.individuals;
      manifest["mean_total_s"] = mean_s;
      manifest["mean_fps"] = mean_fps;
      std::cout << json({{"individuals", last.individuals},
                         {"frames", last.frames},
                         {"repeat", repeat},
                         {"mean_fps", mean_fps}})
                       .dump()
                << '\n';
    });
  });

  // project
  auto* proj = app.add_subcommand("project", "Dump reprojections of 3D poses into every view");
  fs::path proj_calib, proj_poses, proj_out;
  proj->add_option("--calib", proj_calib)->required();
  proj->add_option("--poses", proj_poses)->required();
  proj->add_option("--out", proj_out)->required();
  proj->callback([&] {
    json manifest = base_manifest("project");
    code = with_manifest(manifest, std::nullopt, [&] {
      const CameraRig rig = io::read_calibration(proj_calib);
      io::AtomicWriter w(proj_out);
      for (const auto& pose : io::read_poses(proj_poses)) {
        for (const auto& cam : rig.cameras) {
          json kp = json::array();
          for (const auto& k : pose.keypoints) {
            const auto px = k.valid ? try_project(cam, k.position) : std::nullopt;
            if (px)
              kp.push_back(json::array({px->x(), px->y(), cam.in_image(*px) ? 1 : 0}));
            else
              kp.push_back(json::array({nullptr, nullptr, 0}));
          }
          w.write_line({{"frame", pose.frame}, {"id", pose.global_id}, {"view", cam.id()}, {"kp", kp}});
        }
      }
      w.commit();
    });
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }
  return code;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"muppet"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace muppet::cli
