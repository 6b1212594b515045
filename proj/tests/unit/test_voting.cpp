#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "oracles/oracles.hpp"
#include "streammos/voting.hpp"

using namespace streammos;

namespace {

constexpr MotionState S = MotionState::kStatic;
constexpr MotionState M = MotionState::kMoving;
constexpr MotionState U = MotionState::kUnknown;

PointCloud cloud_of(std::vector<Eigen::Vector3d> pts) {
  PointCloud c;
  c.points = std::move(pts);
  return c;
}

PointCloud blob(oracle::Rng& rng, const Eigen::Vector3d& centre, std::size_t n, double r) {
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i)
    c.points.push_back(centre + Eigen::Vector3d(oracle::uniform(rng, -r, r), oracle::uniform(rng, -r, r),
                                                oracle::uniform(rng, -r, r)));
  return c;
}

PointCloud concat(const PointCloud& a, const PointCloud& b) {
  PointCloud c = a;
  c.points.insert(c.points.end(), b.points.begin(), b.points.end());
  return c;
}

// Random scene with clustered points so voxels and boxes collect several votes.
std::vector<LabeledCloud> random_history(oracle::Rng& rng, int frames, std::size_t n, double extent) {
  std::vector<LabeledCloud> out;
  for (int f = 0; f < frames; ++f) {
    PointCloud c = oracle::random_cloud(rng, n, extent);
    out.push_back({c, oracle::random_labels(rng, n)});
  }
  return out;
}

Pose random_pose(oracle::Rng& rng) {
  Pose p;
  p.rotation = Eigen::AngleAxisd(oracle::uniform(rng, -3, 3), Eigen::Vector3d::UnitZ()).toRotationMatrix();
  p.translation = Eigen::Vector3d(oracle::uniform(rng, -20, 20), oracle::uniform(rng, -20, 20), oracle::uniform(rng, -1, 1));
  return p;
}

}  // namespace

TEST(VoteTally, DecisiveIgnoresUnknown) {
  VoteTally t;
  EXPECT_FALSE(t.decisive());
  for (int i = 0; i < 10; ++i) t.add(U);
  EXPECT_FALSE(t.decisive());
  t.add(M);
  EXPECT_EQ(t.decisive(), M);
  t.add(S);
  EXPECT_FALSE(t.decisive());
  t.add(S);
  EXPECT_EQ(t.decisive(), S);
  EXPECT_EQ(t.unknown, 10u);
}

TEST(VoxelVote, SinglePointWithoutHistoryIsUnchanged) {
  const PointCloud c = cloud_of({{1, 1, 1}});
  for (MotionState s : {U, S, M}) EXPECT_EQ(voxel_vote(c, {s}, {}, VoxelGrid{}), LabelList{s});
}

TEST(VoxelVote, FiveStaticAgainstTwoMoving) {
  const PointCloud c = cloud_of({{0.1, 0.1, 0.1}, {0.2, 0.2, 0.2}, {3.1, 0.1, 0.1}});
  std::vector<LabeledCloud> history{{cloud_of({{0.3, 0.1, 0.1}, {0.1, 0.3, 0.1}, {0.4, 0.4, 0.4}}), {S, S, S}},
                                    {cloud_of({{0.05, 0.05, 0.05}, {0.45, 0.1, 0.2}, {9, 9, 0}}), {S, S, M}}};
  VoxelGrid grid;
  grid.origin = {0, 0, 0};
  const LabelList out = voxel_vote(c, {M, M, M}, history, grid);
  EXPECT_EQ(out, (LabelList{S, S, M}));
}

TEST(VoxelVote, TieKeepsEachPointsOwnLabel) {
  const PointCloud c = cloud_of({{0.1, 0.1, 0.1}, {0.2, 0.2, 0.2}});
  VoxelGrid grid;
  grid.origin = {0, 0, 0};
  EXPECT_EQ(voxel_vote(c, {S, M}, {}, grid), (LabelList{S, M}));
  // Unknown current labels are never overwritten by a tie and always lose to a decisive vote.
  const std::vector<LabeledCloud> hist{{cloud_of({{0.3, 0.3, 0.3}}), {M}}};
  EXPECT_EQ(voxel_vote(c, {U, U}, hist, grid), (LabelList{M, M}));
}

TEST(VoxelVote, MatchesBruteForceOracle) {
  oracle::Rng rng(70);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = static_cast<std::size_t>(oracle::uniform_int(rng, 1, 2000));
    const PointCloud cur = oracle::random_cloud(rng, n, 3.0);
    const LabelList coarse = oracle::random_labels(rng, n);
    const auto hist = random_history(rng, oracle::uniform_int(rng, 0, 4), 1000, 3.0);
    VoxelGrid grid;
    grid.size = oracle::uniform(rng, 0.2, 1.5);
    grid.origin = {oracle::uniform(rng, -5, -3), oracle::uniform(rng, -5, -3), oracle::uniform(rng, -5, -3)};
    EXPECT_EQ(voxel_vote(cur, coarse, hist, grid), oracle::voxel_vote(cur, coarse, hist, grid.size, grid.origin));
  }
}

TEST(VoxelVote, ConsensusIsIdempotent) {
  oracle::Rng rng(71);
  const PointCloud cur = oracle::random_cloud(rng, 500, 4.0);
  const LabelList coarse = oracle::random_labels(rng, 500, false);
  const std::vector<LabeledCloud> hist{{cur, coarse}, {cur, coarse}};
  const LabelList once = voxel_vote(cur, coarse, {}, VoxelGrid{});
  EXPECT_EQ(voxel_vote(cur, once, {{cur, once}, {cur, once}}, VoxelGrid{}), once);
  // Points that agree with every source in their voxel stay put.
  std::vector<MotionState> same(500, M);
  EXPECT_EQ(voxel_vote(cur, same, {{cur, same}}, VoxelGrid{}), same);
}

TEST(VoxelVote, Errors) {
  const PointCloud c = cloud_of({{0, 0, 0}});
  VoxelGrid g;
  g.size = 0;
  EXPECT_THROW(voxel_vote(c, {S}, {}, g), Error);
  EXPECT_THROW(voxel_vote(c, {S, S}, {}, VoxelGrid{}), Error);
  EXPECT_THROW(voxel_vote(c, {S}, {{c, {S, S}}}, VoxelGrid{}), Error);
}

TEST(Dbscan, TwoSeparatedBlobs) {
  oracle::Rng rng(72);
  const PointCloud c = concat(blob(rng, {0, 0, 0}, 50, 0.3), blob(rng, {10, 0, 0}, 50, 0.3));
  const auto ids = dbscan(c, 0.5, 5);
  const std::set<int> distinct(ids.begin(), ids.end());
  EXPECT_EQ(distinct, (std::set<int>{0, 1}));
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(ids[i], ids[0]);
    EXPECT_EQ(ids[50 + i], ids[50]);
  }
}

TEST(Dbscan, IsolatedPointAndIdenticalPoints) {
  EXPECT_EQ(dbscan(cloud_of({{0, 0, 0}}), 0.5, 2), std::vector<int>{-1});
  EXPECT_EQ(dbscan(cloud_of({{1, 2, 3}, {1, 2, 3}, {1, 2, 3}}), 0.5, 3), (std::vector<int>{0, 0, 0}));
  EXPECT_TRUE(dbscan(PointCloud{}, 0.5, 5).empty());
  EXPECT_THROW(dbscan(cloud_of({{0, 0, 0}}), 0.0, 1), Error);
  EXPECT_THROW(dbscan(cloud_of({{0, 0, 0}}), 0.5, 0), Error);
}

TEST(Dbscan, ClosedBallIncludesBoundary) {
  // Two points exactly eps apart form a cluster with min_pts = 2.
  EXPECT_EQ(dbscan(cloud_of({{0, 0, 0}, {0.5, 0, 0}}), 0.5, 2), (std::vector<int>{0, 0}));
}

TEST(Dbscan, MatchesQuadraticOracle) {
  oracle::Rng rng(73);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = static_cast<std::size_t>(oracle::uniform_int(rng, 1, 800));
    const PointCloud c = oracle::random_cloud(rng, n, oracle::uniform(rng, 1.0, 8.0));
    const double eps = oracle::uniform(rng, 0.2, 1.0);
    const std::size_t min_pts = static_cast<std::size_t>(oracle::uniform_int(rng, 1, 8));
    EXPECT_EQ(dbscan(c, eps, min_pts), oracle::dbscan(c, eps, min_pts));
  }
}

TEST(BuildInstances, EmptyForegroundAndCubeBox) {
  oracle::Rng rng(74);
  const PointCloud c = blob(rng, {0, 0, 0}, 30, 0.2);
  EXPECT_TRUE(build_instances(c, std::vector<std::uint8_t>(30, 0), DbscanParams{}).empty());

  PointCloud cube;
  for (int x = 0; x <= 4; ++x)
    for (int y = 0; y <= 4; ++y)
      for (int z = 0; z <= 4; ++z) cube.points.emplace_back(x * 0.25, y * 0.25, z * 0.25);
  const auto inst = build_instances(cube, std::vector<std::uint8_t>(cube.size(), 1), DbscanParams{});
  ASSERT_EQ(inst.size(), 1u);
  EXPECT_EQ(inst[0].members.size(), cube.size());
  EXPECT_EQ(inst[0].box_min, Eigen::Vector3d(0, 0, 0));
  EXPECT_EQ(inst[0].box_max, Eigen::Vector3d(1, 1, 1));
}

TEST(BuildInstances, PartitionAudit) {
  oracle::Rng rng(75);
  for (int trial = 0; trial < 20; ++trial) {
    PointCloud c;
    for (int b = 0; b < 5; ++b) {
      const Eigen::Vector3d centre(oracle::uniform(rng, -20, 20), oracle::uniform(rng, -20, 20), 0);
      c = concat(c, blob(rng, centre, 40, 0.6));
    }
    c = concat(c, oracle::random_cloud(rng, 100, 25));
    std::vector<std::uint8_t> fg(c.size());
    for (auto& f : fg) f = oracle::uniform(rng, 0, 1) < 0.7 ? 1 : 0;
    const auto inst = build_instances(c, fg, DbscanParams{});

    std::vector<std::size_t> fg_idx;
    for (std::size_t i = 0; i < c.size(); ++i)
      if (fg[i]) fg_idx.push_back(i);
    const auto ids = oracle::dbscan(select(c, fg_idx), 0.5, 5);
    std::vector<int> owner(c.size(), -1);
    for (std::size_t k = 0; k < inst.size(); ++k) {
      EXPECT_GE(inst[k].members.size(), 5u);
      for (std::size_t m : inst[k].members) {
        ASSERT_TRUE(fg[m]);
        EXPECT_EQ(owner[m], -1);
        owner[m] = static_cast<int>(k);
        EXPECT_TRUE(inst[k].contains(c.points[m]));
      }
    }
    std::map<int, std::size_t> cluster_size;
    for (int id : ids)
      if (id >= 0) ++cluster_size[id];
    for (std::size_t j = 0; j < fg_idx.size(); ++j)
      EXPECT_EQ(owner[fg_idx[j]] >= 0, ids[j] >= 0 && cluster_size[ids[j]] >= 5);
  }
}

TEST(InstanceVote, UnanimousInstanceUnchanged) {
  oracle::Rng rng(76);
  const PointCloud c = blob(rng, {0, 0, 0}, 20, 0.3);
  const auto inst = build_instances(c, std::vector<std::uint8_t>(20, 1), DbscanParams{});
  const LabelList labels(20, M);
  EXPECT_EQ(instance_vote(c, labels, {{blob(rng, {0, 0, 0}, 10, 0.2), LabelList(10, M)}}, inst), labels);
}

TEST(InstanceVote, HistoryMajorityDecides) {
  oracle::Rng rng(77);
  // Three moving members plus five static ones; in-box history moving x10, static x2.
  const PointCloud members = blob(rng, {0, 0, 0}, 8, 0.5);
  Instance inst;
  inst.members.resize(8);
  std::iota(inst.members.begin(), inst.members.end(), 0);
  inst.box_min = Eigen::Vector3d(-0.5, -0.5, -0.5);
  inst.box_max = Eigen::Vector3d(0.5, 0.5, 0.5);
  const LabelList labels{M, M, M, S, S, S, S, S};
  PointCloud hist = blob(rng, {0, 0, 0}, 12, 0.4);
  hist.points.emplace_back(5, 5, 5);
  LabelList hl(10, M);
  hl.insert(hl.end(), {S, S, S});
  EXPECT_EQ(instance_vote(members, labels, {{hist, hl}}, {inst}), LabelList(8, M));

  const LabelList three{M, M, M};
  Instance small = inst;
  small.members = {0, 1, 2};
  const PointCloud m3 = select(members, {0, 1, 2});
  EXPECT_EQ(instance_vote(m3, three, {{hist, hl}}, {small}), three);
}

TEST(InstanceVote, TieFallsBackToMemberMajority) {
  const PointCloud c = cloud_of({{0, 0, 0}, {0.1, 0, 0}, {0.2, 0, 0}, {5, 5, 5}});
  Instance inst;
  inst.members = {0, 1, 2};
  inst.box_min = Eigen::Vector3d(0, 0, 0);
  inst.box_max = Eigen::Vector3d(0.2, 0, 0);
  // Members M, M, S plus history S: 2 vs 2; members decide moving. Point 3 is untouched.
  const std::vector<LabeledCloud> hist{{cloud_of({{0.1, 0, 0}}), {S}}};
  EXPECT_EQ(instance_vote(c, {M, M, S, S}, hist, {inst}), (LabelList{M, M, M, S}));
  // Members M, S, U with no history tie on both counts and keep their labels.
  EXPECT_EQ(instance_vote(c, {M, S, U, S}, {}, {inst}), (LabelList{M, S, U, S}));
}

TEST(InstanceVote, MatchesBruteForceOracleAndIsConstantPerInstance) {
  oracle::Rng rng(78);
  for (int trial = 0; trial < 30; ++trial) {
    PointCloud c;
    for (int b = 0; b < 6; ++b) {
      const Eigen::Vector3d centre(oracle::uniform(rng, -15, 15), oracle::uniform(rng, -15, 15), 0);
      c = concat(c, blob(rng, centre, static_cast<std::size_t>(oracle::uniform_int(rng, 3, 60)), 0.8));
    }
    const LabelList labels = oracle::random_labels(rng, c.size());
    std::vector<std::uint8_t> fg(c.size());
    for (auto& f : fg) f = oracle::uniform(rng, 0, 1) < 0.8 ? 1 : 0;
    const auto inst = build_instances(c, fg, DbscanParams{});
    const auto hist = random_history(rng, oracle::uniform_int(rng, 0, 4), 1200, 16);
    const LabelList out = instance_vote(c, labels, hist, inst);
    EXPECT_EQ(out, oracle::instance_vote(c, labels, hist, inst));
    for (const Instance& in : inst) {
      const bool decided = std::all_of(in.members.begin(), in.members.end(),
                                       [&](std::size_t m) { return out[m] == out[in.members[0]]; });
      const bool untouched = std::all_of(in.members.begin(), in.members.end(),
                                         [&](std::size_t m) { return out[m] == labels[m]; });
      EXPECT_TRUE(decided || untouched);
    }
  }
}

TEST(LongTermMemory, CapacityOrderAndErrors) {
  LongTermMemory mem(8);
  const PointCloud c = cloud_of({{0, 0, 0}});
  mem = push_memory(mem, 0, c, {S}, Pose::identity());
  EXPECT_EQ(mem.size(), 1u);
  for (int f = 1; f <= 8; ++f) mem = push_memory(mem, f, c, {S}, Pose::identity());
  EXPECT_EQ(mem.size(), 8u);
  EXPECT_EQ(mem.entries().front().frame_id, 1);
  EXPECT_EQ(mem.entries().back().frame_id, 8);
  for (std::size_t i = 1; i < mem.size(); ++i)
    EXPECT_LT(mem.entries()[i - 1].frame_id, mem.entries()[i].frame_id);
  EXPECT_THROW(mem.push({8, c, {S}, Pose::identity()}), Error);
  EXPECT_THROW(mem.push({3, c, {S}, Pose::identity()}), Error);
  EXPECT_THROW(mem.push({9, c, {S, S}, Pose::identity()}), Error);
  EXPECT_THROW(LongTermMemory(0), Error);
}

TEST(ReprojectHistory, StationaryEmptyAndRoundTrip) {
  oracle::Rng rng(79);
  EXPECT_TRUE(reproject_history(LongTermMemory{}, Pose::identity()).empty());

  const PointCloud c = oracle::random_cloud(rng, 100, 20);
  const LabelList l = oracle::random_labels(rng, 100);
  const Pose still = random_pose(rng);
  LongTermMemory mem;
  mem.push({0, c, l, still});
  const auto same = reproject_history(mem, still);
  ASSERT_EQ(same.size(), 1u);
  EXPECT_EQ(same[0].labels, l);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_LT((same[0].cloud.points[i] - c.points[i]).norm(), 1e-9);

  // t -> t' -> t recovers the original cloud.
  const Pose other = random_pose(rng);
  const auto there = reproject_history(mem, other);
  LongTermMemory back_mem;
  back_mem.push({1, there[0].cloud, l, other});
  const auto back = reproject_history(back_mem, still);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_LT((back[0].cloud.points[i] - c.points[i]).norm(), 1e-9);
  // World positions agree.
  for (std::size_t i = 0; i < 100; ++i)
    EXPECT_LT((other.apply(there[0].cloud.points[i]) - still.apply(c.points[i])).norm(), 1e-9);
}

TEST(VoteFrame, ComposesVoxelAndInstanceStages) {
  oracle::Rng rng(80);
  const PointCloud cur = concat(blob(rng, {2, 2, 0}, 40, 0.5), oracle::random_cloud(rng, 200, 20));
  const LabelList coarse = oracle::random_labels(rng, cur.size());
  std::vector<std::uint8_t> fg(cur.size(), 0);
  std::fill(fg.begin(), fg.begin() + 40, 1);
  LongTermMemory mem;
  const Pose p0 = random_pose(rng);
  mem.push({0, cur, oracle::random_labels(rng, cur.size()), p0});
  mem.push({1, cur, oracle::random_labels(rng, cur.size()), p0});
  VotingConfig cfg;
  const VotingResult r = vote_frame(cur, coarse, fg, mem, p0, cfg);
  const auto hist = reproject_history(mem, p0);
  EXPECT_EQ(r.voxel_refined, voxel_vote(cur, coarse, hist, cfg.voxel));
  EXPECT_EQ(r.refined, instance_vote(cur, r.voxel_refined, hist, build_instances(cur, fg, cfg.dbscan)));
  cfg.instance_stage = false;
  EXPECT_EQ(vote_frame(cur, coarse, fg, mem, p0, cfg).refined, r.voxel_refined);
}
