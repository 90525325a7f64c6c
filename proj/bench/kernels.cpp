// OpenMP kernels against their serial references on synthetic frames.

#include <muppet/crossview.hpp>
#include <muppet/fusion3d.hpp>
#include <muppet/synthgen.hpp>

#include <benchmark/benchmark.h>
#include <omp.h>
#include <spdlog/spdlog.h>

using namespace muppet;

namespace {

struct Frame {
  CameraRig rig;
  PerViewDetections detections;
  FrameAssociations tracks;
  GlobalIdentityMap ids;
};

// A noisy scene run for a few frames so trackers are confirmed and the
// identity map is populated.
const Frame& frame_for(int individuals) {
  static std::map<int, Frame> cache;
  if (auto it = cache.find(individuals); it != cache.end()) return it->second;
  ScenarioConfig c;
  c.n_individuals = individuals;
  c.n_frames = 6;
  c.noise_px = 2.0;
  Frame f;
  f.rig = build_rig(c);
  const RenderedScene scene = render(simulate(c), f.rig, c);
  Pipeline pipeline(f.rig);
  FrameResult last;
  for (int k = 0; k < c.n_frames; ++k) last = pipeline.process(k, scene.detections[k]);
  f.detections = scene.detections.back();
  f.tracks = last.tracks;
  f.ids = *pipeline.identities();
  return cache.emplace(individuals, std::move(f)).first->second;
}

void BM_CandidatePosesSerial(benchmark::State& state) {
  const Frame& f = frame_for(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(candidate_poses_serial(f.detections, f.rig));
}

void BM_CandidatePosesParallel(benchmark::State& state) {
  const Frame& f = frame_for(static_cast<int>(state.range(0)));
  omp_set_num_threads(static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(candidate_poses(f.detections, f.rig));
}

void BM_FuseFrameSerial(benchmark::State& state) {
  const Frame& f = frame_for(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(fuse_frame_serial(5, f.tracks, f.ids, f.rig));
}

void BM_FuseFrameParallel(benchmark::State& state) {
  const Frame& f = frame_for(static_cast<int>(state.range(0)));
  omp_set_num_threads(static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(fuse_frame(5, f.tracks, f.ids, f.rig));
}

void serial_args(benchmark::internal::Benchmark* b) {
  for (int n : {1, 5, 10}) b->Args({n});
  b->ArgNames({"individuals"})->Unit(benchmark::kMicrosecond);
}

void parallel_args(benchmark::internal::Benchmark* b) {
  const int max_threads = omp_get_max_threads();
  for (int n : {1, 5, 10})
    for (int t = 1; t <= max_threads; t *= 2) b->Args({n, t});
  b->ArgNames({"individuals", "threads"})->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK(BM_CandidatePosesSerial)->Apply(serial_args);
BENCHMARK(BM_CandidatePosesParallel)->Apply(parallel_args);
BENCHMARK(BM_FuseFrameSerial)->Apply(serial_args);
BENCHMARK(BM_FuseFrameParallel)->Apply(parallel_args);

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
