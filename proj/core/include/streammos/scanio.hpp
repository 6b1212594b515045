#pragma once

// KITTI-style scan/label/pose ingestion, rigid transforms, ego-motion
// compensation and fixed-size point sampling.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <unordered_map>
#include <vector>

#include "streammos/types.hpp"

namespace streammos {

/// Axis-aligned crop, half-open on every axis: min <= p < max.
struct CropBox {
  Eigen::Vector3d min{-50.0, -50.0, -4.0};
  Eigen::Vector3d max{50.0, 50.0, 2.0};

  bool contains(const Eigen::Vector3d& p) const {
    return p.x() >= min.x() && p.x() < max.x() && p.y() >= min.y() && p.y() < max.y() &&
           p.z() >= min.z() && p.z() < max.z();
  }
};

/// Raw semantic id (lower 16 bits of a label record) -> motion state and
/// movable mask. Ids absent from the table map to unknown / no movable info.
class LabelRemap {
 public:
  /// Table derived from the public SemanticKITTI-MOS remap.
  static LabelRemap semantic_kitti_mos();
  /// Text format, one entry per line: `<id> <unknown|static|moving> [movable|background]`.
  /// '#' starts a comment.
  static LabelRemap parse(std::istream& in);
  static LabelRemap load(const std::filesystem::path& path);

  void set(std::uint32_t id, MotionState state, std::optional<Movability> movable = std::nullopt);
  MotionLabel map(std::uint32_t raw) const;
  std::size_t size() const { return states_.size(); }

  /// Raw id written for each state in output label files.
  static std::uint32_t encode(MotionState s);

 private:
  std::unordered_map<std::uint32_t, MotionState> states_;
  std::unordered_map<std::uint32_t, Movability> movable_;
};

struct SequenceConfig {
  CropBox crop;
  std::size_t target_points = 130'000;  // V
  std::size_t history_frames = 3;       // N
  LabelRemap remap = LabelRemap::semantic_kitti_mos();
  bool use_intensity = false;

  void validate() const;
};

/// A cloud derived from another one plus, for every output point, the index
/// of the source point it came from.
struct IndexedCloud {
  PointCloud cloud;
  std::vector<std::size_t> source_index;
};

struct ScanReadStats {
  std::size_t records = 0;
  std::size_t rejected = 0;  // non-finite records dropped
};

PointCloud read_scan(const std::filesystem::path& path, ScanReadStats* stats = nullptr);
/// Writes 16-byte little-endian records; intensity 0 when the cloud has none.
void write_scan(const std::filesystem::path& path, const PointCloud& cloud);

/// Reads the `Tr:` line of a KITTI calibration file as a homogeneous matrix.
Eigen::Matrix4d read_calib_tr(const std::filesystem::path& calib_path);
/// Parses 3x4 row-major pose lines and converts them to the LiDAR frame as Tr^-1 * P * Tr.
std::vector<Pose> parse_poses(std::istream& in, const Eigen::Matrix4d& tr);
std::vector<Pose> read_poses(const std::filesystem::path& poses_path,
                             const std::filesystem::path& calib_path);
void write_poses(const std::filesystem::path& path, const std::vector<Pose>& poses);
void write_identity_calib(const std::filesystem::path& path);

std::vector<std::uint32_t> read_raw_labels(const std::filesystem::path& path);
std::vector<MotionLabel> read_labels(const std::filesystem::path& path, const LabelRemap& remap);
void write_labels(const std::filesystem::path& path, const LabelList& labels);
void write_raw_labels(const std::filesystem::path& path, const std::vector<std::uint32_t>& raw);

PointCloud transform_cloud(const PointCloud& cloud, const Pose& transform);

/// Relative transform taking points of frame `from` into frame `to`:
/// pose_to^-1 * pose_from.
Pose relative_pose(const Pose& pose_to, const Pose& pose_from);

/// Expresses each history cloud (identified by its frame_id) in frame `t`.
/// `poses` is indexed by frame id.
std::vector<PointCloud> ego_compensate(const std::vector<PointCloud>& history,
                                       const std::vector<Pose>& poses, std::int64_t t);

IndexedCloud crop_cloud(const PointCloud& cloud, const CropBox& crop);

/// Exactly `target` points: identity when sizes match, a uniform subset
/// without replacement when larger, and every source point once followed by
/// uniform draws with replacement when smaller. Deterministic for a seed.
IndexedCloud sample_points(const PointCloud& cloud, std::size_t target, std::uint64_t seed);

/// Standard KITTI odometry layout: velodyne/NNNNNN.bin, labels/NNNNNN.label,
/// poses.txt, calib.txt.
class KittiSequence {
 public:
  explicit KittiSequence(std::filesystem::path root);

  std::size_t size() const { return scans_.size(); }
  const std::filesystem::path& root() const { return root_; }
  bool has_labels() const;
  bool has_poses() const;

  PointCloud scan(std::size_t i) const;
  /// Labels for frame i; throws when their count differs from the scan's.
  std::vector<MotionLabel> labels(std::size_t i, const LabelRemap& remap,
                                  std::size_t expected_points) const;
  std::vector<Pose> poses() const;
  std::filesystem::path label_path(std::size_t i) const;

  static std::string frame_name(std::size_t i);

 private:
  std::filesystem::path root_;
  std::vector<std::filesystem::path> scans_;
};

}  // namespace streammos
