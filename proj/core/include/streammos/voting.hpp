#pragma once

// Long-term voting: pose-aligned historical predictions refine the current
// coarse labels per voxel, then per DBSCAN instance.
//
// Vote rules shared by both stages:
//   - only static and moving votes compete; unknown votes are abstentions;
//   - the larger count wins and is assigned to every current point in the
//     group;
//   - a static/moving tie keeps the current frame's own label;
//   - a group with no static or moving vote is left untouched.

#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "streammos/scanio.hpp"
#include "streammos/types.hpp"

namespace streammos {

struct VoteTally {
  std::uint32_t unknown = 0;
  std::uint32_t stat = 0;
  std::uint32_t moving = 0;

  void add(MotionState s);
  /// Modal state over {static, moving}; nullopt for a tie or no votes.
  std::optional<MotionState> decisive() const;
};

struct MemoryEntry {
  std::int64_t frame_id = 0;
  PointCloud cloud;  // in its own sensor frame
  LabelList labels;
  Pose pose;
};

/// Ring buffer of the last `capacity` refined predictions, oldest first.
class LongTermMemory {
 public:
  explicit LongTermMemory(std::size_t capacity = 8);

  /// Appends an entry and evicts the oldest beyond capacity. Frame ids must
  /// strictly increase.
  void push(MemoryEntry entry);
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }
  const std::deque<MemoryEntry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  std::size_t capacity_;
  std::deque<MemoryEntry> entries_;
};

/// Free-function form of LongTermMemory::push.
LongTermMemory push_memory(LongTermMemory memory, std::int64_t frame_id, PointCloud cloud, LabelList labels,
                           const Pose& pose);

struct LabeledCloud {
  PointCloud cloud;
  LabelList labels;
};

/// Every memory entry expressed in the frame with pose `pose_t`.
std::vector<LabeledCloud> reproject_history(const LongTermMemory& memory, const Pose& pose_t);

struct VoxelGrid {
  double size = 0.5;
  Eigen::Vector3d origin{-50.0, -50.0, -4.0};
};

/// Voxel-level vote. History points are counted individually; history points
/// in voxels with no current point are ignored.
LabelList voxel_vote(const PointCloud& current, const LabelList& coarse, const std::vector<LabeledCloud>& history,
                     const VoxelGrid& grid);

/// Cluster id per point, -1 for noise. Neighbourhoods are closed balls of
/// radius eps that include the point itself; clusters grow breadth-first
/// from core points in index order, so the result depends only on point order.
std::vector<int> dbscan(const PointCloud& points, double eps, std::size_t min_pts);

struct Instance {
  std::vector<std::size_t> members;  // indices into the current cloud
  Eigen::Vector3d box_min;
  Eigen::Vector3d box_max;

  bool contains(const Eigen::Vector3d& p) const {
    return (p.array() >= box_min.array()).all() && (p.array() <= box_max.array()).all();
  }
};

struct DbscanParams {
  double eps = 0.5;
  std::size_t min_pts = 5;
};

/// DBSCAN over the points flagged in `foreground`; one instance per cluster
/// with the tightest axis-aligned box around its members. Clusters left with
/// fewer than min_pts members (border points taken by an earlier cluster)
/// yield no instance.
std::vector<Instance> build_instances(const PointCloud& current, const std::vector<std::uint8_t>& foreground,
                                      const DbscanParams& params);

/// Instance-level vote over member labels plus history points inside each
/// box (closed box, no margin). On a tie the members' own majority decides;
/// if that ties too, members keep their labels.
LabelList instance_vote(const PointCloud& current, const LabelList& labels, const std::vector<LabeledCloud>& history,
                        const std::vector<Instance>& instances);

struct VotingConfig {
  bool enabled = true;
  bool instance_stage = true;
  VoxelGrid voxel;
  DbscanParams dbscan;
  std::size_t memory_frames = 8;  // M
};

struct VotingResult {
  LabelList voxel_refined;  // C^_t
  LabelList refined;        // M_t
  std::vector<Instance> instances;
};

/// voxel_vote followed by build_instances + instance_vote.
VotingResult vote_frame(const PointCloud& current, const LabelList& coarse,
                        const std::vector<std::uint8_t>& foreground, const LongTermMemory& memory,
                        const Pose& pose_t, const VotingConfig& cfg);

}  // namespace streammos
