#include "support.hpp"

#include <muppet/cli.hpp>
#include <muppet/io.hpp>

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <iostream>

using namespace muppet;
using namespace testsupport;
namespace io = muppet::io;
namespace fs = std::filesystem;

namespace {

ScenarioConfig small_scene(int individuals = 3, int frames = 40) {
  ScenarioConfig c;
  c.n_individuals = individuals;
  c.n_frames = frames;
  c.seed = 5;
  return c;
}

// Swallows stdout while a command runs so report dumps stay out of the test log.
int quiet_run(const std::vector<std::string>& args) {
  std::ostringstream sink;
  auto* old = std::cout.rdbuf(sink.rdbuf());
  const int rc = cli::run(args);
  std::cout.rdbuf(old);
  return rc;
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p, std::ios::trunc);
  for (const auto& l : lines) out << l << '\n';
}

Pose3D flat_pose(int frame, int id, const Vec3& centre) {
  Pose3D p;
  p.frame = frame;
  p.global_id = id;
  p.keypoints.resize(kNumKeypoints);
  for (std::size_t k = 0; k < kNumKeypoints; ++k)
    p.keypoints[k] = {centre + Vec3(10.0 * k, 0, 0), true};
  return p;
}

void write_poses(const fs::path& path, const std::vector<Pose3D>& poses) {
  io::AtomicWriter w(path);
  for (const auto& p : poses) w.write_line(io::pose_to_json(p));
  w.commit();
}

std::vector<std::string> track_args(const fs::path& dir, const fs::path& out) {
  return {"track", "--detections", (dir / "detections").string(), "--calib",
          (dir / "calib.json").string(), "--out", out.string()};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("synth writes calibration, streams, ground truth and a manifest") {
  const fs::path dir = temp_dir("cli_synth");
  REQUIRE(quiet_run({"synth", "--out", dir.string(), "--individuals", "2", "--frames", "5"}) ==
          cli::kOk);
  CHECK(fs::exists(dir / "calib.json"));
  for (int v = 0; v < 4; ++v)
    CHECK(fs::exists(dir / "detections" / ("cam" + std::to_string(v) + ".jsonl")));
  CHECK(fs::exists(dir / "gt_poses.jsonl"));
  CHECK(fs::exists(dir / "gt_2d.jsonl"));
  const io::json m = io::json::parse(slurp(dir / "manifest.json"));
  CHECK(m["status"] == "ok");
  CHECK(m["config"]["n_individuals"] == 2);
  CHECK(m["outputs"].size() == 7);
}

TEST_CASE("synth rejects zero individuals with exit 2 and names the field") {
  const fs::path dir = temp_dir("cli_synth_bad");
  const fs::path cfg = dir / "scenario.json";
  std::ofstream(cfg) << R"({"n_individuals": 0})";
  std::ostringstream err;
  auto* old = std::cerr.rdbuf(err.rdbuf());
  const int rc = quiet_run({"synth", "--config", cfg.string(), "--out", (dir / "out").string()});
  std::cerr.rdbuf(old);
  CHECK(rc == cli::kConfigError);
  CHECK(err.str().find("n_individuals") != std::string::npos);
  const io::json m = io::json::parse(slurp(dir / "out" / "manifest.json"));
  CHECK(m["status"] == "error");
  CHECK(m["exit_code"] == 2);
}

TEST_CASE("synth is deterministic for a fixed seed") {
  const fs::path a = temp_dir("cli_det_a"), b = temp_dir("cli_det_b");
  const std::vector<std::string> common{"--individuals", "3", "--frames", "20", "--seed", "9",
                                        "--noise", "2", "--miss", "0.05", "--clutter", "0.3"};
  auto args_a = common, args_b = common;
  args_a.insert(args_a.begin(), {"synth", "--out", a.string()});
  args_b.insert(args_b.begin(), {"synth", "--out", b.string()});
  REQUIRE(quiet_run(args_a) == cli::kOk);
  REQUIRE(quiet_run(args_b) == cli::kOk);
  for (const char* f : {"calib.json", "gt_poses.jsonl", "gt_2d.jsonl", "detections/cam0.jsonl",
                        "detections/cam3.jsonl"})
    CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);
}

TEST_CASE("track on a noiseless scene evaluates to perfect MOTA") {
  const fs::path dir = temp_dir("cli_track");
  cli::write_scenario(small_scene(), dir);
  const fs::path out = dir / "poses.jsonl";
  REQUIRE(quiet_run(track_args(dir, out)) == cli::kOk);
  const io::json m = io::json::parse(slurp(fs::path(out.string() + ".manifest.json")));
  CHECK(m["status"] == "ok");
  CHECK(m["frames"] == 40);
  CHECK(m["individuals"] == 3);
  CHECK(m["timings_s"].contains("process"));

  const fs::path report = dir / "mot.json";
  REQUIRE(quiet_run({"eval-mot", "--pred", out.string(), "--gt", (dir / "gt_poses.jsonl").string(),
                     "--json", report.string()}) == cli::kOk);
  const io::json r = io::json::parse(slurp(report));
  CHECK(r["mota"].get<double>() == doctest::Approx(1.0));
  CHECK(r["ids"] == 0);
}

TEST_CASE("track processes the common prefix of a truncated stream") {
  const fs::path dir = temp_dir("cli_trunc");
  cli::write_scenario(small_scene(2, 30), dir);
  const fs::path cam1 = dir / "detections" / "cam1.jsonl";
  std::vector<std::string> kept;
  for (const auto& l : lines_of(cam1))
    if (io::json::parse(l)["frame"].get<int>() < 20) kept.push_back(l);
  write_lines(cam1, kept);
  const fs::path out = dir / "poses.jsonl";
  REQUIRE(quiet_run(track_args(dir, out)) == cli::kOk);
  const io::json m = io::json::parse(slurp(fs::path(out.string() + ".manifest.json")));
  CHECK(m["frames"] == 20);
  CHECK(m["truncated"] == true);
  int max_frame = -1;
  for (const auto& p : io::read_poses(out)) max_frame = std::max(max_frame, p.frame);
  CHECK(max_frame == 19);
}

TEST_CASE("track exit codes") {
  const fs::path dir = temp_dir("cli_track_errors");
  cli::write_scenario(small_scene(2, 10), dir);

  SUBCASE("missing calibration") {
    auto args = track_args(dir, dir / "poses.jsonl");
    args[4] = (dir / "nope.json").string();
    CHECK(quiet_run(args) == cli::kCalibrationError);
    const io::json m = io::json::parse(slurp(dir / "poses.jsonl.manifest.json"));
    CHECK(m["status"] == "error");
  }
  SUBCASE("missing view stream") {
    fs::remove(dir / "detections" / "cam2.jsonl");
    CHECK(quiet_run(track_args(dir, dir / "poses.jsonl")) == cli::kCalibrationError);
  }
  SUBCASE("empty first frame") {
    for (int v = 0; v < 4; ++v) {
      const fs::path p = dir / "detections" / ("cam" + std::to_string(v) + ".jsonl");
      std::vector<std::string> kept;
      for (const auto& l : lines_of(p))
        if (io::json::parse(l)["frame"].get<int>() > 0) kept.push_back(l);
      write_lines(p, kept);
    }
    CHECK(quiet_run(track_args(dir, dir / "poses.jsonl")) == cli::kEmptyFirstFrame);
    CHECK_FALSE(fs::exists(dir / "poses.jsonl"));
  }
  SUBCASE("bad pipeline config") {
    const fs::path cfg = dir / "pipeline.json";
    std::ofstream(cfg) << R"({"match_threshold_mm": -1})";
    auto args = track_args(dir, dir / "poses.jsonl");
    args.insert(args.end(), {"--config", cfg.string()});
    CHECK(quiet_run(args) == cli::kConfigError);
  }
  SUBCASE("unknown flag") {
    auto args = track_args(dir, dir / "poses.jsonl");
    args.push_back("--bogus");
    std::ostringstream err;
    auto* old = std::cerr.rdbuf(err.rdbuf());
    CHECK(quiet_run(args) == cli::kConfigError);
    std::cerr.rdbuf(old);
  }
}

TEST_CASE("eval commands report perfect scores when prediction equals ground truth") {
  const fs::path dir = temp_dir("cli_eval_self");
  cli::write_scenario(small_scene(3, 15), dir);
  const std::string gt = (dir / "gt_poses.jsonl").string();
  REQUIRE(quiet_run({"eval-pose", "--pred", gt, "--gt", gt, "--json",
                     (dir / "pose.json").string()}) == cli::kOk);
  const io::json pose = io::json::parse(slurp(dir / "pose.json"));
  CHECK(pose["rmse"].get<double>() == 0.0);
  CHECK(pose["pck05"].get<double>() == 100.0);
  CHECK(pose["pck10"].get<double>() == 100.0);
  CHECK(pose["n_unmatched_gt"] == 0);

  REQUIRE(quiet_run({"eval-mot", "--pred", gt, "--gt", gt, "--json",
                     (dir / "mot.json").string()}) == cli::kOk);
  const io::json mot = io::json::parse(slurp(dir / "mot.json"));
  for (const char* k : {"hota", "mota", "motp", "recall", "precision", "mt", "idf1"})
    CHECK_MESSAGE(mot[k].get<double>() == doctest::Approx(1.0), k);
  CHECK(mot["ids"] == 0);
  CHECK(mot["frag"] == 0);

  const std::string gt2d = (dir / "gt_2d.jsonl").string();
  const std::string det0 = (dir / "detections" / "cam0.jsonl").string();
  REQUIRE(quiet_run({"eval-pose", "--mode", "2d", "--pred", det0, "--gt", gt2d, "--json",
                     (dir / "pose2d.json").string()}) == cli::kOk);
  const io::json p2 = io::json::parse(slurp(dir / "pose2d.json"));
  CHECK(p2["rmse"].get<double>() == doctest::Approx(0.0));
  CHECK(p2["pck05"].get<double>() <= p2["pck10"].get<double>());
}

TEST_CASE("eval-mot on the two-object swap fixture") {
  const fs::path dir = temp_dir("cli_eval_swap");
  std::vector<Pose3D> gt, pred;
  const Vec3 a(0, 0, 0), b(1000, 0, 0);
  for (int f = 0; f < 4; ++f) {
    gt.push_back(flat_pose(f, 0, a));
    gt.push_back(flat_pose(f, 1, b));
    pred.push_back(flat_pose(f, f < 2 ? 10 : 11, a));
    pred.push_back(flat_pose(f, f < 2 ? 11 : 10, b));
  }
  write_poses(dir / "gt.jsonl", gt);
  write_poses(dir / "pred.jsonl", pred);
  REQUIRE(quiet_run({"eval-mot", "--pred", (dir / "pred.jsonl").string(), "--gt",
                     (dir / "gt.jsonl").string(), "--json", (dir / "r.json").string()}) == cli::kOk);
  const io::json r = io::json::parse(slurp(dir / "r.json"));
  CHECK(r["mota"].get<double>() == doctest::Approx(0.75));
  CHECK(r["ids"] == 2);
  CHECK(r["idf1"].get<double>() == doctest::Approx(0.5));
}

TEST_CASE("eval with no overlapping frames exits 5") {
  const fs::path dir = temp_dir("cli_eval_disjoint");
  write_poses(dir / "gt.jsonl", {flat_pose(0, 0, Vec3::Zero()), flat_pose(1, 0, Vec3::Zero())});
  write_poses(dir / "pred.jsonl", {flat_pose(5, 0, Vec3::Zero())});
  const std::string pred = (dir / "pred.jsonl").string(), gt = (dir / "gt.jsonl").string();
  CHECK(quiet_run({"eval-mot", "--pred", pred, "--gt", gt}) == cli::kEvalMismatch);
  CHECK(quiet_run({"eval-pose", "--pred", pred, "--gt", gt}) == cli::kEvalMismatch);
}

TEST_CASE("bench lists one timing per repeat and their mean") {
  const fs::path dir = temp_dir("cli_bench");
  cli::write_scenario(small_scene(2, 20), dir);
  const fs::path m = dir / "bench.json";
  REQUIRE(quiet_run({"bench", "--detections", (dir / "detections").string(), "--calib",
                     (dir / "calib.json").string(), "--repeat", "3", "--json", m.string()}) ==
          cli::kOk);
  const io::json j = io::json::parse(slurp(m));
  CHECK(j["status"] == "ok");
  REQUIRE(j["runs"].size() == 3);
  double mean = 0.0;
  for (const auto& r : j["runs"]) {
    CHECK(r["frames"] == 20);
    mean += r["timings_s"]["total"].get<double>() / 3.0;
  }
  CHECK(j["mean_total_s"].get<double>() == doctest::Approx(mean));
  CHECK(j["mean_fps"].get<double>() > 0.0);
}

TEST_CASE("bench: one individual runs at least as fast as ten") {
  auto fps_for = [](int individuals) {
    const fs::path dir = temp_dir("cli_bench_" + std::to_string(individuals));
    cli::write_scenario(small_scene(individuals, 100), dir);
    const fs::path m = dir / "bench.json";
    REQUIRE(quiet_run({"bench", "--detections", (dir / "detections").string(), "--calib",
                       (dir / "calib.json").string(), "--threads", "1", "--json", m.string()}) ==
            cli::kOk);
    return io::json::parse(slurp(m))["mean_fps"].get<double>();
  };
  const double one = fps_for(1), ten = fps_for(10);
  MESSAGE("fps: 1 individual " << one << ", 10 individuals " << ten);
  CHECK(one >= ten);
}

TEST_CASE("project writes one line per pose and view") {
  const fs::path dir = temp_dir("cli_project");
  cli::write_scenario(small_scene(2, 3), dir);
  const fs::path out = dir / "proj.jsonl";
  REQUIRE(quiet_run({"project", "--calib", (dir / "calib.json").string(), "--poses",
                     (dir / "gt_poses.jsonl").string(), "--out", out.string()}) == cli::kOk);
  const auto lines = lines_of(out);
  CHECK(lines.size() == 2 * 3 * 4);
  const io::json first = io::json::parse(lines.front());
  CHECK(first["kp"].size() == kNumKeypoints);
  CHECK(first["kp"][0][2] == 1);
}

TEST_CASE("an unknown MUPPET_LOG level falls back to info") {
  ::setenv("MUPPET_LOG", "chatty", 1);
  const fs::path dir = temp_dir("cli_log");
  CHECK(quiet_run({"synth", "--out", dir.string(), "--individuals", "1", "--frames", "2"}) ==
        cli::kOk);
  ::setenv("MUPPET_LOG", "warn", 1);
  CHECK(quiet_run({"synth", "--out", dir.string(), "--individuals", "1", "--frames", "2"}) ==
        cli::kOk);
  ::unsetenv("MUPPET_LOG");
}

}  // TEST_SUITE
