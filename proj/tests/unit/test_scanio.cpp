#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "oracles/oracles.hpp"
#include "streammos/scanio.hpp"

using namespace streammos;
namespace fs = std::filesystem;

namespace {

void write_bytes(const fs::path& p, const std::vector<float>& values) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
}

Pose random_pose(oracle::Rng& rng) {
  const Eigen::Quaterniond q(oracle::uniform(rng, -1, 1), oracle::uniform(rng, -1, 1), oracle::uniform(rng, -1, 1),
                             oracle::uniform(rng, -1, 1));
  Pose p;
  p.rotation = q.normalized().toRotationMatrix();
  p.translation = {oracle::uniform(rng, -20, 20), oracle::uniform(rng, -20, 20), oracle::uniform(rng, -2, 2)};
  return p;
}

std::string pose_line(const Eigen::Matrix4d& m) {
  std::ostringstream os;
  os.precision(17);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) os << m(r, c) << (r == 2 && c == 3 ? "\n" : " ");
  return os.str();
}

}  // namespace

TEST(Pose, GroupLaws) {
  oracle::Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const Pose a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    const Pose id = a * a.inverse();
    EXPECT_LT((id.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT(id.translation.cwiseAbs().maxCoeff(), 1e-9);
    const Pose id2 = a.inverse() * a;
    EXPECT_LT((id2.matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    const Pose l = (a * b) * c, r = a * (b * c);
    EXPECT_LT((l.matrix() - r.matrix()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_TRUE(a.is_rigid());
  }
  Pose bad;
  bad.rotation(0, 0) = -1.0;  // reflection
  EXPECT_FALSE(bad.is_rigid());
}

TEST(ReadScan, SingleRecord) {
  oracle::TempDir dir("scan1");
  write_bytes(dir.path() / "a.bin", {1.0f, 2.0f, 3.0f, 0.5f});
  const PointCloud c = read_scan(dir.path() / "a.bin");
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.points[0], Eigen::Vector3d(1, 2, 3));
  ASSERT_TRUE(c.has_intensity());
  EXPECT_EQ(c.intensity[0], 0.5f);
}

TEST(ReadScan, EmptyFile) {
  oracle::TempDir dir("scan0");
  write_bytes(dir.path() / "a.bin", {});
  EXPECT_EQ(read_scan(dir.path() / "a.bin").size(), 0u);
}

TEST(ReadScan, Errors) {
  oracle::TempDir dir("scanerr");
  EXPECT_THROW(read_scan(dir.path() / "missing.bin"), Error);
  write_bytes(dir.path() / "short.bin", {1.0f, 2.0f, 3.0f});
  EXPECT_THROW(read_scan(dir.path() / "short.bin"), Error);
}

TEST(ReadScan, NonFiniteRecordsRejectedAndCounted) {
  oracle::TempDir dir("scannan");
  write_bytes(dir.path() / "a.bin", {1, 2, 3, 0, NAN, 0, 0, 0, 4, 5, 6, 1, 0, INFINITY, 0, 0});
  ScanReadStats stats;
  const PointCloud c = read_scan(dir.path() / "a.bin", &stats);
  EXPECT_EQ(stats.records, 4u);
  EXPECT_EQ(stats.rejected, 2u);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.points[1], Eigen::Vector3d(4, 5, 6));
}

TEST(ReadScan, RoundTripIsBitwise) {
  oracle::TempDir dir("scanrt");
  oracle::Rng rng(2);
  std::vector<float> raw(400);
  for (float& v : raw) v = static_cast<float>(oracle::uniform(rng, -80, 80));
  for (std::size_t i = 3; i < raw.size(); i += 4) raw[i] = static_cast<float>(oracle::uniform(rng, 0, 1));
  write_bytes(dir.path() / "in.bin", raw);
  const PointCloud c = read_scan(dir.path() / "in.bin");
  ASSERT_EQ(c.size(), 100u);
  write_scan(dir.path() / "out.bin", c);
  std::ifstream a(dir.path() / "in.bin", std::ios::binary), b(dir.path() / "out.bin", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(sa, sb);
}

TEST(ReadPoses, IdentityAndTranslation) {
  std::istringstream in("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 1 0 1 0 2 0 0 1 3\n");
  const auto poses = parse_poses(in, Eigen::Matrix4d::Identity());
  ASSERT_EQ(poses.size(), 2u);
  EXPECT_EQ(poses[0].matrix(), Eigen::Matrix4d::Identity());
  EXPECT_EQ(poses[1].translation, Eigen::Vector3d(1, 2, 3));
}

TEST(ReadPoses, RandomPosesSatisfyGroupLaws) {
  oracle::Rng rng(3);
  oracle::TempDir dir("poses");
  const Pose tr = random_pose(rng);
  {
    std::ofstream calib(dir.path() / "calib.txt");
    calib << "P0: 1 0 0 0 0 1 0 0 0 0 1 0\nTr: " << pose_line(tr.matrix());
    std::ofstream poses(dir.path() / "poses.txt");
    for (int i = 0; i < 50; ++i) poses << pose_line(random_pose(rng).matrix());
  }
  const auto poses = read_poses(dir.path() / "poses.txt", dir.path() / "calib.txt");
  ASSERT_EQ(poses.size(), 50u);
  for (const Pose& p : poses) {
    const Pose id = p * p.inverse();
    EXPECT_LT((id.matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(ReadPoses, ConjugatesByCalibration) {
  const Pose tr = Pose::from_translation({0.5, -1.0, 2.0});
  const Pose p = Pose::from_translation({1, 2, 3});
  std::istringstream in(pose_line(p.matrix()));
  const auto poses = parse_poses(in, tr.matrix());
  const Eigen::Matrix4d expected = tr.matrix().inverse() * p.matrix() * tr.matrix();
  EXPECT_LT((poses[0].matrix() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ReadPoses, Errors) {
  std::istringstream bad("1 0 0 0 0 1 0 0 0 0 1\n");
  EXPECT_THROW(parse_poses(bad, Eigen::Matrix4d::Identity()), Error);
  std::istringstream ok("1 0 0 0 0 1 0 0 0 0 1 0\n");
  Eigen::Matrix4d singular = Eigen::Matrix4d::Identity();
  singular(0, 0) = 0.0;
  EXPECT_THROW(parse_poses(ok, singular), Error);
  oracle::TempDir dir("calibbad");
  std::ofstream(dir.path() / "calib.txt") << "P0: 1 0 0\n";
  std::ofstream(dir.path() / "poses.txt") << "1 0 0 0 0 1 0 0 0 0 1 0\n";
  EXPECT_THROW(read_poses(dir.path() / "poses.txt", dir.path() / "calib.txt"), Error);
}

TEST(Labels, DefaultRemap) {
  const LabelRemap remap = LabelRemap::semantic_kitti_mos();
  EXPECT_EQ(remap.map(9).state, MotionState::kStatic);
  EXPECT_EQ(remap.map(251).state, MotionState::kMoving);
  EXPECT_EQ(remap.map(0).state, MotionState::kUnknown);
  EXPECT_EQ(remap.map(252).state, MotionState::kMoving);
  EXPECT_EQ(remap.map(10).state, MotionState::kStatic);
  EXPECT_EQ(remap.map(10).movable, Movability::kMovable);
  EXPECT_EQ(remap.map(40).movable, Movability::kBackground);
  EXPECT_EQ(remap.map(12345).state, MotionState::kUnknown);
  // Upper 16 bits carry the instance id and are ignored.
  EXPECT_EQ(remap.map((7u << 16) | 251u).state, MotionState::kMoving);
}

TEST(Labels, ParseRemapText) {
  std::istringstream in("# comment\n5 moving movable\n6 static\n7 unknown background # trailing\n");
  const LabelRemap r = LabelRemap::parse(in);
  EXPECT_EQ(r.size(), 3u);
  EXPECT_EQ(r.map(5).state, MotionState::kMoving);
  EXPECT_EQ(r.map(5).movable, Movability::kMovable);
  EXPECT_EQ(r.map(6).state, MotionState::kStatic);
  EXPECT_FALSE(r.map(6).movable.has_value());
  std::istringstream bad("5 walking\n");
  EXPECT_THROW(LabelRemap::parse(bad), Error);
}

TEST(Labels, RoundTripIsBitwise) {
  oracle::TempDir dir("labels");
  oracle::Rng rng(4);
  std::vector<std::uint32_t> raw(1000);
  for (auto& v : raw) v = static_cast<std::uint32_t>(rng());
  write_raw_labels(dir.path() / "a.label", raw);
  EXPECT_EQ(read_raw_labels(dir.path() / "a.label"), raw);

  const LabelList states = oracle::random_labels(rng, 500);
  write_labels(dir.path() / "b.label", states);
  const auto back = read_labels(dir.path() / "b.label", LabelRemap::semantic_kitti_mos());
  ASSERT_EQ(back.size(), states.size());
  for (std::size_t i = 0; i < states.size(); ++i) EXPECT_EQ(back[i].state, states[i]);
}

TEST(Labels, TruncatedFileRejected) {
  oracle::TempDir dir("labtrunc");
  std::ofstream(dir.path() / "a.label", std::ios::binary) << "abcdef";
  EXPECT_THROW(read_raw_labels(dir.path() / "a.label"), Error);
}

TEST(TransformCloud, Basics) {
  PointCloud c;
  c.points = {{0, 0, 0}};
  c.intensity = {0.25f};
  const PointCloud same = transform_cloud(c, Pose::identity());
  EXPECT_EQ(same.points, c.points);
  const PointCloud moved = transform_cloud(c, Pose::from_translation({1, 0, 0}));
  EXPECT_EQ(moved.points[0], Eigen::Vector3d(1, 0, 0));
  EXPECT_EQ(moved.intensity, c.intensity);
}

TEST(TransformCloud, InverseRoundTripAndRigidity) {
  oracle::Rng rng(5);
  const PointCloud c = oracle::random_cloud(rng, 200, 50.0);
  const Pose t = random_pose(rng);
  const PointCloud back = transform_cloud(transform_cloud(c, t), t.inverse());
  const PointCloud moved = transform_cloud(c, t);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_LT((back.points[i] - c.points[i]).norm(), 1e-9);
    const std::size_t j = (i * 7 + 3) % c.size();
    const double d0 = (c.points[i] - c.points[j]).norm();
    const double d1 = (moved.points[i] - moved.points[j]).norm();
    EXPECT_LE(std::abs(d0 - d1), 1e-9 * std::max(1.0, d0));
  }
}

TEST(EgoCompensate, StationarySensorLeavesHistoryUnchanged) {
  oracle::Rng rng(6);
  PointCloud h = oracle::random_cloud(rng, 50, 10.0);
  h.frame_id = 0;
  const auto out = ego_compensate({h}, {Pose::identity(), Pose::identity()}, 1);
  EXPECT_EQ(out[0].points, h.points);
}

TEST(EgoCompensate, StaticWorldPointAlignsAfterSensorMotion) {
  const Eigen::Vector3d world(10.0, 3.0, -1.0);
  const Pose p0 = Pose::identity();
  const Pose p1 = Pose::from_translation({1.0, 0.0, 0.0});
  PointCloud h0;
  h0.points = {p0.inverse().apply(world)};
  h0.frame_id = 0;
  const auto out = ego_compensate({h0}, {p0, p1}, 1);
  const Eigen::Vector3d current = p1.inverse().apply(world);
  EXPECT_LT((out[0].points[0] - current).norm(), 1e-9);
}

TEST(EgoCompensate, CurrentFrameUnchangedAndMissingPoseRejected) {
  PointCloud c;
  c.points = {{1, 2, 3}};
  c.frame_id = 1;
  const auto out = ego_compensate({c}, {Pose::identity(), Pose::from_translation({4, 5, 6})}, 1);
  EXPECT_EQ(out[0].points, c.points);
  c.frame_id = 5;
  EXPECT_THROW(ego_compensate({c}, {Pose::identity()}, 0), Error);
}

TEST(CropCloud, HalfOpenBounds) {
  PointCloud c;
  c.points = {{-50, 0, 0}, {50, 0, 0}, {0, -50, -4}, {0, 49.999, 1.999}, {0, 0, 2}, {0, 0, -4.0001}};
  const IndexedCloud out = crop_cloud(c, CropBox{});
  EXPECT_EQ(out.source_index, (std::vector<std::size_t>{0, 2, 3}));
  oracle::Rng rng(7);
  const IndexedCloud big = crop_cloud(oracle::random_cloud(rng, 5000, 80.0), CropBox{});
  for (const auto& p : big.cloud.points) EXPECT_TRUE(CropBox{}.contains(p));
}

TEST(SamplePoints, IdentityWhenSizesMatch) {
  oracle::Rng rng(8);
  const PointCloud c = oracle::random_cloud(rng, 20, 5.0);
  const IndexedCloud s = sample_points(c, 20, 99);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(s.source_index[i], i);
}

TEST(SamplePoints, DownsampleIsDeterministicWithoutReplacement) {
  oracle::Rng rng(9);
  const PointCloud c = oracle::random_cloud(rng, 10, 5.0);
  const IndexedCloud a = sample_points(c, 4, 42);
  const IndexedCloud b = sample_points(c, 4, 42);
  EXPECT_EQ(a.source_index, b.source_index);
  EXPECT_EQ(a.cloud.size(), 4u);
  EXPECT_EQ(std::set<std::size_t>(a.source_index.begin(), a.source_index.end()).size(), 4u);
}

TEST(SamplePoints, FillContainsEveryPoint) {
  oracle::Rng rng(10);
  const PointCloud c = oracle::random_cloud(rng, 3, 5.0);
  const IndexedCloud s = sample_points(c, 7, 1);
  ASSERT_EQ(s.cloud.size(), 7u);
  const std::set<std::size_t> seen(s.source_index.begin(), s.source_index.end());
  EXPECT_EQ(seen, (std::set<std::size_t>{0, 1, 2}));
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(s.cloud.points[i], c.points[s.source_index[i]]);
}

TEST(SamplePoints, Errors) {
  EXPECT_THROW(sample_points(PointCloud{}, 4, 0), Error);
  PointCloud c;
  c.points = {{0, 0, 0}};
  EXPECT_THROW(sample_points(c, 0, 0), Error);
}

TEST(SequenceConfig, DefaultsAndValidation) {
  SequenceConfig cfg;
  EXPECT_EQ(cfg.target_points, 130000u);
  EXPECT_EQ(cfg.history_frames, 3u);
  EXPECT_NO_THROW(cfg.validate());
  cfg.crop.min.x() = 60;
  EXPECT_THROW(cfg.validate(), Error);
  SequenceConfig zero;
  zero.target_points = 0;
  EXPECT_THROW(zero.validate(), Error);
}

TEST(KittiSequence, LabelCountMismatchIsAnError) {
  oracle::TempDir dir("kitti");
  fs::create_directories(dir.path() / "velodyne");
  fs::create_directories(dir.path() / "labels");
  PointCloud c;
  c.points = {{1, 0, 0}, {2, 0, 0}};
  write_scan(dir.path() / "velodyne" / "000000.bin", c);
  write_raw_labels(dir.path() / "labels" / "000000.label", {9});
  const KittiSequence seq(dir.path());
  ASSERT_EQ(seq.size(), 1u);
  EXPECT_THROW(seq.labels(0, LabelRemap::semantic_kitti_mos(), 2), Error);
  write_raw_labels(dir.path() / "labels" / "000000.label", {9, 251});
  const auto labels = seq.labels(0, LabelRemap::semantic_kitti_mos(), 2);
  EXPECT_EQ(labels[1].state, MotionState::kMoving);
  EXPECT_EQ(KittiSequence::frame_name(42), "000042");
}
