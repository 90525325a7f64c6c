#include <muppet/io.hpp>

#include <algorithm>
#include <set>
#include <sstream>
#include <system_error>
#include <type_traits>

namespace muppet {

// The schema lives here because every file format refers to it.
KeypointSchema::KeypointSchema(std::vector<std::string> names) : names_(std::move(names)) {
  std::set<std::string> seen;
  for (const auto& n : names_)
    if (!seen.insert(n).second) throw ConfigError("keypoint schema: duplicate name '" + n + "'");
}

const KeypointSchema& KeypointSchema::pigeon() {
  static const KeypointSchema schema({"beak", "nose", "left_eye", "right_eye", "left_shoulder",
                                      "right_shoulder", "top_keel", "bottom_keel", "tail"});
  return schema;
}

std::optional<std::size_t> KeypointSchema::index_of(std::string_view name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names_.begin());
}

namespace io {

namespace {

std::string where(const fs::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

template <typename M>
json flatten(const M& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) a.push_back(m(r, c));
  return a;
}

template <int R, int C>
Eigen::Matrix<double, R, C> unflatten(const json& a, const char* field) {
  if (!a.is_array() || a.size() != static_cast<std::size_t>(R * C))
    throw FormatError(std::string(field) + ": expected " + std::to_string(R * C) + " numbers");
  Eigen::Matrix<double, R, C> m;
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      const json& v = a[static_cast<std::size_t>(r * C + c)];
      if (!v.is_number()) throw FormatError(std::string(field) + ": expected numbers");
      m(r, c) = v.get<double>();
    }
  return m;
}

const json& member(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw FormatError(std::string("missing field '") + key + "'");
  return j.at(key);
}

double number(const json& j, const char* key) {
  const json& v = member(j, key);
  if (!v.is_number()) throw FormatError(std::string("field '") + key + "' must be a number");
  return v.get<double>();
}

int integer(const json& j, const char* key) {
  const json& v = member(j, key);
  if (!v.is_number_integer()) throw FormatError(std::string("field '") + key + "' must be an integer");
  return v.get<int>();
}

bool flag(const json& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number()) return v.get<double>() != 0.0;
  throw FormatError("flag must be a boolean or 0/1");
}

BBox bbox_from(const json& j) {
  const Eigen::Vector4d b = unflatten<4, 1>(member(j, "bbox"), "bbox");
  return {b(0), b(1), b(2), b(3)};
}

json bbox_to(const BBox& b) { return json::array({b.x, b.y, b.w, b.h}); }

json keypoints2d_to(const std::vector<Keypoint2D>& kps) {
  json a = json::array();
  for (const auto& k : kps)
    a.push_back(json::array({k.px.x(), k.px.y(), k.confidence, k.visible ? 1 : 0}));
  return a;
}

std::vector<Keypoint2D> keypoints2d_from(const json& a, std::size_t schema_size) {
  if (!a.is_array() || a.size() != schema_size)
    throw FormatError("kp: expected " + std::to_string(schema_size) + " keypoints");
  std::vector<Keypoint2D> kps;
  kps.reserve(a.size());
  for (const auto& e : a) {
    if (!e.is_array() || e.size() < 2 || e.size() > 4)
      throw FormatError("kp: each keypoint is [u, v, conf, vis]");
    Keypoint2D k;
    k.px = {e[0].get<double>(), e[1].get<double>()};
    k.confidence = e.size() > 2 ? e[2].get<double>() : 1.0;
    k.visible = e.size() > 3 ? flag(e[3]) : true;
    kps.push_back(k);
  }
  return kps;
}

template <typename F>
auto with_location(const fs::path& path, std::size_t line, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw FormatError(where(path, line) + e.what());
  } catch (const FormatError& e) {
    throw FormatError(where(path, line) + e.what());
  }
}

// Strict field access for configuration objects.
class Fields {
 public:
  Fields(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j.is_object()) throw ConfigError(name("") + "expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    bool ok = false;
    if constexpr (std::is_same_v<T, bool>) ok = v.is_boolean();
    else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) ok = v.is_number_unsigned();
    else if constexpr (std::is_integral_v<T>) ok = v.is_number_integer();
    else if constexpr (std::is_floating_point_v<T>) ok = v.is_number();
    if (!ok) throw ConfigError(name(key) + "wrong type (" + v.type_name() + ")");
    out = v.get<T>();
  }

  const json* sub(const char* key) {
    known_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!known_.contains(k)) throw ConfigError(name(k) + "unknown field");
  }

  std::string name(const std::string& key) const { return prefix_ + key + ": "; }

 private:
  const json& j_;
  std::string prefix_;
  std::set<std::string> known_;
};

}  // namespace

json calibration_to_json(const CameraRig& rig) {
  json a = json::array();
  for (const auto& c : rig.cameras) {
    const auto& d = c.distortion();
    a.push_back({{"id", c.id()},
                 {"K", flatten(c.intrinsics())},
                 {"dist", json::array({d.k1, d.k2, d.p1, d.p2})},
                 {"R", flatten(c.rotation())},
                 {"t", flatten(c.translation())},
                 {"size", json::array({c.width(), c.height()})}});
  }
  return a;
}

CameraRig calibration_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw FormatError("calibration must be a non-empty array of cameras");
  CameraRig rig;
  std::set<std::string> ids;
  for (const auto& c : j) {
    const json& id = member(c, "id");
    if (!id.is_string()) throw FormatError("camera id must be a string");
    Distortion dist;
    if (c.contains("dist")) {
      const Eigen::Vector4d d = unflatten<4, 1>(c.at("dist"), "dist");
      dist = {d(0), d(1), d(2), d(3)};
    }
    const json& size = member(c, "size");
    if (!size.is_array() || size.size() != 2 || !size[0].is_number_integer() ||
        !size[1].is_number_integer())
      throw FormatError("size: expected [width, height]");
    try {
      rig.cameras.emplace_back(id.get<std::string>(), unflatten<3, 3>(member(c, "K"), "K"), dist,
                               unflatten<3, 3>(member(c, "R"), "R"),
                               unflatten<3, 1>(member(c, "t"), "t"), size[0].get<int>(),
                               size[1].get<int>());
    } catch (const InvalidCamera& e) {
      throw FormatError(std::string("camera '") + id.get<std::string>() + "': " + e.what());
    }
    if (!ids.insert(rig.cameras.back().id()).second)
      throw FormatError("duplicate camera id '" + rig.cameras.back().id() + "'");
  }
  return rig;
}

CameraRig read_calibration(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open calibration file " + path.string());
  try {
    return calibration_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_calibration(const fs::path& path, const CameraRig& rig) {
  write_json_file(path, calibration_to_json(rig));
}

json detection_to_json(const Detection2D& d) {
  return {{"view", d.view_id},
          {"frame", d.frame},
          {"bbox", bbox_to(d.bbox)},
          {"score", d.score},
          {"kp", keypoints2d_to(d.keypoints)}};
}

Detection2D detection_from_json(const json& j, std::size_t schema_size) {
  Detection2D d;
  const json& view = member(j, "view");
  if (!view.is_string()) throw FormatError("field 'view' must be a string");
  d.view_id = view.get<std::string>();
  d.frame = integer(j, "frame");
  d.bbox = bbox_from(j);
  d.score = j.contains("score") ? number(j, "score") : 1.0;
  d.keypoints = keypoints2d_from(member(j, "kp"), schema_size);
  validate(d, schema_size);
  return d;
}

json tracked_to_json(const TrackedDetection& t) {
  json j = detection_to_json(t.detection);
  j["id"] = t.local_track_id;
  return j;
}

TrackedDetection tracked_from_json(const json& j, std::size_t schema_size) {
  return {integer(j, "id"), detection_from_json(j, schema_size)};
}

json pose_to_json(const Pose3D& p) {
  json kp = json::array();
  for (const auto& k : p.keypoints)
    kp.push_back(json::array({k.position.x(), k.position.y(), k.position.z(), k.valid ? 1 : 0}));
  return {{"frame", p.frame},
          {"id", p.global_id},
          {"views", p.contributing_views},
          {"kp3d", kp},
          {"smoothed", p.smoothed}};
}

Pose3D pose_from_json(const json& j, std::size_t schema_size) {
  Pose3D p;
  p.frame = integer(j, "frame");
  p.global_id = integer(j, "id");
  if (j.contains("views")) p.contributing_views = j.at("views").get<std::vector<std::string>>();
  if (j.contains("smoothed")) p.smoothed = flag(j.at("smoothed"));
  const json& kp = member(j, "kp3d");
  if (!kp.is_array() || kp.size() != schema_size)
    throw FormatError("kp3d: expected " + std::to_string(schema_size) + " keypoints");
  for (const auto& e : kp) {
    if (!e.is_array() || e.size() != 4) throw FormatError("kp3d: each keypoint is [x, y, z, valid]");
    p.keypoints.push_back({{e[0].get<double>(), e[1].get<double>(), e[2].get<double>()}, flag(e[3])});
  }
  return p;
}

std::vector<Pose3D> read_poses(const fs::path& path) {
  std::vector<Pose3D> out;
  std::size_t line = 0;
  for (const auto& j : read_jsonl(path)) {
    ++line;
    out.push_back(with_location(path, line, [&] { return pose_from_json(j); }));
  }
  return out;
}

json sidecar_to_json(const SidecarEntry& e) {
  json kp = json::array();
  for (const auto& k : e.keypoints) kp.push_back(json::array({k.px.x(), k.px.y()}));
  return {{"view", e.view_id}, {"frame", e.frame}, {"id", e.id},
          {"det", e.det_index}, {"bbox", bbox_to(e.bbox)}, {"kp", kp}};
}

SidecarEntry sidecar_from_json(const json& j) {
  SidecarEntry e;
  e.view_id = member(j, "view").get<std::string>();
  e.frame = integer(j, "frame");
  e.id = integer(j, "id");
  e.det_index = j.contains("det") ? integer(j, "det") : -1;
  e.bbox = bbox_from(j);
  const json& kp = member(j, "kp");
  e.keypoints = keypoints2d_from(kp, kp.is_array() ? kp.size() : 0);
  return e;
}

std::vector<SidecarEntry> read_sidecar(const fs::path& path) {
  std::vector<SidecarEntry> out;
  std::size_t line = 0;
  for (const auto& j : read_jsonl(path)) {
    ++line;
    out.push_back(with_location(path, line, [&] { return sidecar_from_json(j); }));
  }
  return out;
}

json identities_to_json(const GlobalIdentityMap& map) {
  json j = json::object();
  for (const auto& [key, g] : map.entries())
    j["(" + key.view_id + "," + std::to_string(key.local_id) + ")"] = g;
  return j;
}

ScenarioConfig scenario_from_json(const json& j) {
  ScenarioConfig c;
  Fields f(j, "");
  f.get("n_individuals", c.n_individuals);
  f.get("n_frames", c.n_frames);
  f.get("arena_x_mm", c.arena_x_mm);
  f.get("arena_y_mm", c.arena_y_mm);
  f.get("speed_min_mm", c.speed_min_mm);
  f.get("speed_max_mm", c.speed_max_mm);
  f.get("heading_persistence", c.heading_persistence);
  f.get("max_turn_rad", c.max_turn_rad);
  f.get("articulation_mm", c.articulation_mm);
  f.get("seed", c.seed);
  f.get("noise_px", c.noise_px);
  f.get("miss_prob", c.miss_prob);
  f.get("clutter_rate", c.clutter_rate);
  f.get("n_cameras", c.n_cameras);
  f.get("image_width", c.image_width);
  f.get("image_height", c.image_height);
  f.get("camera_height_mm", c.camera_height_mm);
  f.get("camera_offset_mm", c.camera_offset_mm);
  f.get("image_margin", c.image_margin);
  if (const json* d = f.sub("distortion")) {
    try {
      const Eigen::Vector4d v = unflatten<4, 1>(*d, "distortion");
      c.distortion = {v(0), v(1), v(2), v(3)};
    } catch (const FormatError&) {
      throw ConfigError(f.name("distortion") + "expected [k1, k2, p1, p2]");
    }
  }
  f.finish();
  c.validate();
  return c;
}

json scenario_to_json(const ScenarioConfig& c) {
  return {{"n_individuals", c.n_individuals},
          {"n_frames", c.n_frames},
          {"arena_x_mm", c.arena_x_mm},
          {"arena_y_mm", c.arena_y_mm},
          {"speed_min_mm", c.speed_min_mm},
          {"speed_max_mm", c.speed_max_mm},
          {"heading_persistence", c.heading_persistence},
          {"max_turn_rad", c.max_turn_rad},
          {"articulation_mm", c.articulation_mm},
          {"seed", c.seed},
          {"noise_px", c.noise_px},
          {"miss_prob", c.miss_prob},
          {"clutter_rate", c.clutter_rate},
          {"n_cameras", c.n_cameras},
          {"image_width", c.image_width},
          {"image_height", c.image_height},
          {"camera_height_mm", c.camera_height_mm},
          {"camera_offset_mm", c.camera_offset_mm},
          {"image_margin", c.image_margin},
          {"distortion", json::array({c.distortion.k1, c.distortion.k2, c.distortion.p1,
                                      c.distortion.p2})}};
}

PipelineConfig pipeline_from_json(const json& j) {
  PipelineConfig c;
  Fields f(j, "");
  if (const json* t = f.sub("tracker")) {
    Fields ft(*t, "tracker.");
    ft.get("max_age", c.tracker.max_age);
    ft.get("min_hits", c.tracker.min_hits);
    ft.get("iou_threshold", c.tracker.iou_threshold);
    ft.get("score_threshold", c.tracker.score_threshold);
    ft.finish();
  }
  f.get("match_threshold_mm", c.match_threshold_mm);
  f.get("view_consistency_gate_px", c.fusion.view_consistency_gate_px);
  if (const json* r = f.sub("refine")) {
    Fields fr(*r, "refine.");
    fr.get("initial_damping", c.fusion.refine.initial_damping);
    fr.get("step_tolerance_mm", c.fusion.refine.step_tolerance_mm);
    fr.get("max_iterations", c.fusion.refine.max_iterations);
    fr.finish();
  }
  if (const json* s = f.sub("smoother")) {
    Fields fs(*s, "smoother.");
    fs.get("measurement_sigma_mm", c.smoother.measurement_sigma_mm);
    fs.get("accel_sigma_mm", c.smoother.accel_sigma_mm);
    fs.get("initial_velocity_sigma_mm", c.smoother.initial_velocity_sigma_mm);
    fs.get("gap_limit", c.smoother.gap_limit);
    fs.finish();
  }
  f.get("smoothing", c.smoothing);
  f.get("threads", c.threads);
  if (j.contains("rematch_frame")) {
    int frame = 0;
    f.get("rematch_frame", frame);
    c.rematch_frame = frame;
  } else {
    f.sub("rematch_frame");
  }
  f.finish();
  c.validate();
  return c;
}

json pipeline_to_json(const PipelineConfig& c) {
  json j = {{"tracker",
             {{"max_age", c.tracker.max_age},
              {"min_hits", c.tracker.min_hits},
              {"iou_threshold", c.tracker.iou_threshold},
              {"score_threshold", c.tracker.score_threshold}}},
            {"match_threshold_mm", c.match_threshold_mm},
            {"view_consistency_gate_px", c.fusion.view_consistency_gate_px},
            {"refine",
             {{"initial_damping", c.fusion.refine.initial_damping},
              {"step_tolerance_mm", c.fusion.refine.step_tolerance_mm},
              {"max_iterations", c.fusion.refine.max_iterations}}},
            {"smoother",
             {{"measurement_sigma_mm", c.smoother.measurement_sigma_mm},
              {"accel_sigma_mm", c.smoother.accel_sigma_mm},
              {"initial_velocity_sigma_mm", c.smoother.initial_velocity_sigma_mm},
              {"gap_limit", c.smoother.gap_limit}}},
            {"smoothing", c.smoothing},
            {"threads", c.threads}};
  if (c.rematch_frame) j["rematch_frame"] = *c.rematch_frame;
  return j;
}

json parse_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t pos = std::min(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos > 0 ? pos - 1 : 0), '\n');
    throw ConfigError(path.string() + ":" + std::to_string(line) + ": " + e.what());
  }
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError(where(path, n) + e.what());
    }
  }
  return out;
}

DetectionReader::DetectionReader(fs::path path, std::string view_id, std::size_t schema_size)
    : path_(std::move(path)), view_id_(std::move(view_id)), schema_size_(schema_size), in_(path_) {
  if (!in_) throw FormatError("cannot open detection stream " + path_.string());
}

bool DetectionReader::fetch() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Detection2D d = with_location(path_, line_no_, [&] {
      return detection_from_json(json::parse(line), schema_size_);
    });
    if (d.view_id != view_id_)
      throw FormatError(where(path_, line_no_) + "record of view '" + d.view_id +
                        "' in the stream of view '" + view_id_ + "'");
    if (d.frame < last_seen_)
      throw FormatError(where(path_, line_no_) + "frames must be non-decreasing");
    last_seen_ = d.frame;
    pending_ = std::move(d);
    return true;
  }
  return false;
}

std::vector<Detection2D> DetectionReader::read_frame(int frame) {
  std::vector<Detection2D> out;
  while (pending_ || fetch()) {
    if (pending_->frame > frame) break;
    if (pending_->frame == frame) out.push_back(std::move(*pending_));
    pending_.reset();
  }
  return out;
}

int DetectionReader::last_frame(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open detection stream " + path.string());
  in.seekg(0, std::ios::end);
  const std::streamoff size = in.tellg();
  std::streamoff chunk = 4096;
  while (true) {
    const std::streamoff start = std::max<std::streamoff>(0, size - chunk);
    in.seekg(start);
    std::string tail(static_cast<std::size_t>(size - start), '\0');
    in.read(tail.data(), static_cast<std::streamsize>(tail.size()));
    const auto end = tail.find_last_not_of(" \t\r\n");
    if (end == std::string::npos) {
      if (start == 0) return -1;
    } else {
      const auto begin = tail.rfind('\n', end);
      if (begin != std::string::npos || start == 0) {
        const std::size_t first = begin == std::string::npos ? 0 : begin + 1;
        const std::string line = tail.substr(first, end - first + 1);
        try {
          return integer(json::parse(line), "frame");
        } catch (const std::exception& e) {
          throw FormatError(path.string() + ": last record: " + e.what());
        }
      }
    }
    chunk *= 4;
  }
}

AtomicWriter::AtomicWriter(fs::path path) : path_(std::move(path)) {
  tmp_ = path_;
  tmp_ += ".tmp";
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  out_.open(tmp_, std::ios::binary | std::ios::trunc);
  if (!out_) throw FormatError("cannot write " + tmp_.string());
}

AtomicWriter::~AtomicWriter() {
  if (committed_) return;
  out_.close();
  std::error_code ec;
  fs::remove(tmp_, ec);
}

void AtomicWriter::commit() {
  out_.flush();
  if (!out_) throw FormatError("write failed for " + tmp_.string());
  out_.close();
  fs::rename(tmp_, path_);
  committed_ = true;
}

void write_json_file(const fs::path& path, const json& j) {
  AtomicWriter w(path);
  w.stream() << j.dump(2) << '\n';
  w.commit();
}

void write_jsonl_file(const fs::path& path, const std::vector<json>& lines) {
  AtomicWriter w(path);
  for (const auto& l : lines) w.write_line(l);
  w.commit();
}

fs::path detection_path(const fs::path& dir, const std::string& view_id) {
  return dir / (view_id + ".jsonl");
}

}  // namespace io
}  // namespace muppet
