// Throughput of the hot kernels: scatter, conv, attention, voting, clustering.

#include <benchmark/benchmark.h>

#include <random>

#include "streammos/evalkit.hpp"
#include "streammos/gridproj.hpp"
#include "streammos/memfuse.hpp"
#include "streammos/numkern.hpp"
#include "streammos/voting.hpp"

using namespace streammos;

namespace {

std::mt19937_64& rng() {
  static std::mt19937_64 r(12345);
  return r;
}

double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng()); }

PointCloud random_cloud(std::size_t n, double extent) {
  PointCloud c;
  c.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    c.points.emplace_back(uniform(-extent, extent), uniform(-extent, extent), uniform(-3.5, 1.5));
  return c;
}

Tensor2D random_tensor(int h, int w, int c) {
  Tensor2D t(h, w, c);
  for (float& v : t.data) v = static_cast<float>(uniform(-1, 1));
  return t;
}

KernelParams random_conv(int kh, int kw, int cin, int cout) {
  KernelParams k = KernelParams::conv(kh, kw, cin, cout);
  for (float& v : k.weights) v = static_cast<float>(uniform(-0.3, 0.3));
  return k;
}

LabelList random_labels(std::size_t n) {
  LabelList l(n);
  for (auto& s : l) s = uniform(0, 1) < 0.2 ? MotionState::kMoving : MotionState::kStatic;
  return l;
}

void BM_ScatterMax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  BevConfig cfg;
  const PointCloud c = random_cloud(n, 50.0);
  FeatureMatrix f(n, 32);
  for (float& v : f.data) v = static_cast<float>(uniform(-1, 1));
  const ProjectionIndex idx = bev_index(c, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(scatter_max(f, idx));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(BM_ScatterMax)->Arg(10'000)->Arg(130'000)->Unit(benchmark::kMillisecond);

void BM_Conv2d(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const Tensor2D in = random_tensor(size, size, 32);
  const KernelParams k = random_conv(3, 3, 32, 32);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(in, k, 1, Padding::same(k)));
}
BENCHMARK(BM_Conv2d)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_Acb(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const Tensor2D in = random_tensor(size, size, 16);
  const AcbParams p{random_conv(3, 5, 16, 16), random_conv(5, 3, 16, 16), random_conv(3, 3, 32, 16)};
  for (auto _ : state) benchmark::DoNotOptimize(acb(in, p));
}
BENCHMARK(BM_Acb)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_DeformAttend(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  BevConfig bev;
  bev.width = size;
  bev.height = size;
  const FeatureMap f{random_tensor(size, size, 32), bev, {}};
  const FeatureMap h{random_tensor(size, size, 32), bev, {}};
  AttentionParams p = AttentionParams::identity(32, 4, 4);
  for (float& v : p.offset_head.weights) v = static_cast<float>(uniform(-0.2, 0.2));
  for (float& v : p.weight_head.weights) v = static_cast<float>(uniform(-0.2, 0.2));
  for (auto _ : state) benchmark::DoNotOptimize(deform_attend(h, f, p));
}
BENCHMARK(BM_DeformAttend)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_VoxelVote(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const PointCloud current = random_cloud(n, 50.0);
  const LabelList coarse = random_labels(n);
  std::vector<LabeledCloud> history;
  for (int m = 0; m < 8; ++m) history.push_back({random_cloud(n, 50.0), random_labels(n)});
  for (auto _ : state) benchmark::DoNotOptimize(voxel_vote(current, coarse, history, VoxelGrid{}));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * 9));
}
BENCHMARK(BM_VoxelVote)->Arg(10'000)->Arg(130'000)->Unit(benchmark::kMillisecond);

void BM_Dbscan(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  PointCloud c;
  const int blobs = 20;
  for (std::size_t i = 0; i < n; ++i) {
    const double cx = -40.0 + 4.0 * static_cast<double>(i % blobs);
    c.points.emplace_back(cx + uniform(-1, 1), uniform(-1, 1), uniform(-0.8, 0.8));
  }
  for (auto _ : state) benchmark::DoNotOptimize(dbscan(c, 0.5, 5));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(BM_Dbscan)->Arg(2'000)->Arg(20'000)->Unit(benchmark::kMillisecond);

void BM_VoteFrame(benchmark::State& state) {
  const std::size_t n = 130'000;
  SceneSpec spec;
  spec.frames = 9;
  spec.background_points = n - 1000;
  spec.background_extent = 45.0;
  spec.actors.push_back(ActorSpec{});
  const auto frames = synth_scene(spec);
  LongTermMemory memory(8);
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
    LabelList labels;
    for (const auto& l : frames[i].gt) labels.push_back(l.state);
    memory.push({static_cast<std::int64_t>(i), frames[i].cloud, labels, frames[i].pose});
  }
  const auto& last = frames.back();
  LabelList gt;
  for (const auto& l : last.gt) gt.push_back(l.state);
  const LabelList coarse = corrupt_labels(gt, 0.1, 1);
  std::vector<std::uint8_t> fg(coarse.size());
  for (std::size_t i = 0; i < fg.size(); ++i) fg[i] = last.gt[i].movable == Movability::kMovable;
  const VotingConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(vote_frame(last.cloud, coarse, fg, memory, last.pose, cfg));
}
BENCHMARK(BM_VoteFrame)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
