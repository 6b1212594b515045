#include "streammos/voting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace streammos {

void VoteTally::add(MotionState s) {
  switch (s) {
    case MotionState::kUnknown:
      ++unknown;
      break;
    case MotionState::kStatic:
      ++stat;
      break;
    case MotionState::kMoving:
      ++moving;
      break;
  }
}

std::optional<MotionState> VoteTally::decisive() const {
  if (stat > moving) return MotionState::kStatic;
  if (moving > stat) return MotionState::kMoving;
  return std::nullopt;
}

LongTermMemory::LongTermMemory(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw Error("long-term memory capacity must be positive");
}

void LongTermMemory::push(MemoryEntry entry) {
  if (!entries_.empty() && entry.frame_id <= entries_.back().frame_id) {
    throw Error("long-term memory: frame id " + std::to_string(entry.frame_id) + " does not follow " +
                std::to_string(entries_.back().frame_id));
  }
  if (entry.labels.size() != entry.cloud.size()) throw Error("long-term memory: label count differs from cloud size");
  entries_.push_back(std::move(entry));
  while (entries_.size() > capacity_) entries_.pop_front();
}

LongTermMemory push_memory(LongTermMemory memory, std::int64_t frame_id, PointCloud cloud, LabelList labels,
                           const Pose& pose) {
  memory.push(MemoryEntry{frame_id, std::move(cloud), std::move(labels), pose});
  return memory;
}

std::vector<LabeledCloud> reproject_history(const LongTermMemory& memory, const Pose& pose_t) {
  std::vector<LabeledCloud> out;
  out.reserve(memory.size());
  for (const MemoryEntry& e : memory.entries()) {
    out.push_back({transform_cloud(e.cloud, relative_pose(pose_t, e.pose)), e.labels});
  }
  return out;
}

namespace {

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

CellKey cell_of(const Eigen::Vector3d& p, const Eigen::Vector3d& origin, double size) {
  return {static_cast<std::int64_t>(std::floor((p.x() - origin.x()) / size)),
          static_cast<std::int64_t>(std::floor((p.y() - origin.y()) / size)),
          static_cast<std::int64_t>(std::floor((p.z() - origin.z()) / size))};
}

void check_labels(const PointCloud& cloud, const LabelList& labels, const char* what) {
  if (cloud.size() != labels.size()) {
    throw Error(std::string(what) + ": " + std::to_string(labels.size()) + " labels for " +
                std::to_string(cloud.size()) + " points");
  }
}

}  // namespace

LabelList voxel_vote(const PointCloud& current, const LabelList& coarse, const std::vector<LabeledCloud>& history,
                     const VoxelGrid& grid) {
  if (!(grid.size > 0.0)) throw Error("voxel_vote: voxel size must be positive");
  check_labels(current, coarse, "voxel_vote");

  std::unordered_map<CellKey, std::uint32_t, CellKeyHash> voxel_of;
  voxel_of.reserve(current.size());
  std::vector<std::uint32_t> point_voxel(current.size());
  std::vector<VoteTally> tallies;
  for (std::size_t i = 0; i < current.size(); ++i) {
    const auto [it, inserted] =
        voxel_of.try_emplace(cell_of(current.points[i], grid.origin, grid.size), static_cast<std::uint32_t>(tallies.size()));
    if (inserted) tallies.emplace_back();
    point_voxel[i] = it->second;
    tallies[it->second].add(coarse[i]);
  }
  for (const LabeledCloud& h : history) {
    check_labels(h.cloud, h.labels, "voxel_vote history");
    for (std::size_t i = 0; i < h.cloud.size(); ++i) {
      const auto it = voxel_of.find(cell_of(h.cloud.points[i], grid.origin, grid.size));
      if (it != voxel_of.end()) tallies[it->second].add(h.labels[i]);
    }
  }

  LabelList out = coarse;
  for (std::size_t i = 0; i < current.size(); ++i) {
    if (const auto winner = tallies[point_voxel[i]].decisive()) out[i] = *winner;
  }
  return out;
}

std::vector<int> dbscan(const PointCloud& points, double eps, std::size_t min_pts) {
  if (!(eps > 0.0)) throw Error("dbscan: eps must be positive");
  if (min_pts < 1) throw Error("dbscan: min_pts must be >= 1");
  const std::size_t n = points.size();
  constexpr int kUnvisited = -2;
  constexpr int kNoise = -1;

  std::unordered_map<CellKey, std::vector<std::size_t>, CellKeyHash> buckets;
  buckets.reserve(n);
  const Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) buckets[cell_of(points.points[i], origin, eps)].push_back(i);

  const double eps2 = eps * eps;
  std::vector<std::size_t> neighbours;
  auto region = [&](std::size_t i) {
    neighbours.clear();
    const Eigen::Vector3d& p = points.points[i];
    const CellKey c = cell_of(p, origin, eps);
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          const auto it = buckets.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == buckets.end()) continue;
          for (std::size_t j : it->second) {
            if ((points.points[j] - p).squaredNorm() <= eps2) neighbours.push_back(j);
          }
        }
      }
    }
    std::sort(neighbours.begin(), neighbours.end());
  };

  std::vector<int> label(n, kUnvisited);
  std::vector<std::size_t> queue;
  int cluster = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] != kUnvisited) continue;
    region(i);
    if (neighbours.size() < min_pts) {
      label[i] = kNoise;
      continue;
    }
    label[i] = cluster;
    queue.assign(neighbours.begin(), neighbours.end());
    for (std::size_t q = 0; q < queue.size(); ++q) {
      const std::size_t j = queue[q];
      if (label[j] == kNoise) {
        label[j] = cluster;
        continue;
      }
      if (label[j] != kUnvisited) continue;
      label[j] = cluster;
      region(j);
      if (neighbours.size() >= min_pts) queue.insert(queue.end(), neighbours.begin(), neighbours.end());
    }
    ++cluster;
  }
  return label;
}

std::vector<Instance> build_instances(const PointCloud& current, const std::vector<std::uint8_t>& foreground,
                                      const DbscanParams& params) {
  if (foreground.size() != current.size()) throw Error("build_instances: foreground mask length mismatch");
  std::vector<std::size_t> fg;
  for (std::size_t i = 0; i < foreground.size(); ++i) {
    if (foreground[i]) fg.push_back(i);
  }
  if (fg.empty()) return {};
  const std::vector<int> cluster = dbscan(select(current, fg), params.eps, params.min_pts);
  const int count = cluster.empty() ? 0 : *std::max_element(cluster.begin(), cluster.end()) + 1;
  std::vector<Instance> out(static_cast<std::size_t>(std::max(count, 0)));
  for (auto& inst : out) {
    inst.box_min = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
    inst.box_max = Eigen::Vector3d::Constant(-std::numeric_limits<double>::infinity());
  }
  for (std::size_t k = 0; k < fg.size(); ++k) {
    if (cluster[k] < 0) continue;
    Instance& inst = out[static_cast<std::size_t>(cluster[k])];
    const Eigen::Vector3d& p = current.points[fg[k]];
    inst.members.push_back(fg[k]);
    inst.box_min = inst.box_min.cwiseMin(p);
    inst.box_max = inst.box_max.cwiseMax(p);
  }
  std::erase_if(out, [&](const Instance& inst) { return inst.members.size() < params.min_pts; });
  return out;
}

namespace {

// Buckets instance boxes on a coarse x/y grid so each history point only
// tests the boxes that can contain it.
class BoxIndex {
 public:
  BoxIndex(const std::vector<Instance>& instances, double cell) : instances_(instances), cell_(cell) {
    for (std::size_t k = 0; k < instances.size(); ++k) {
      const auto lo = key(instances[k].box_min);
      const auto hi = key(instances[k].box_max);
      const std::int64_t span = (hi.first - lo.first + 1) * (hi.second - lo.second + 1);
      if (span > 4096) {
        large_.push_back(k);
        continue;
      }
      for (std::int64_t x = lo.first; x <= hi.first; ++x)
        for (std::int64_t y = lo.second; y <= hi.second; ++y) cells_[{x, y, 0}].push_back(k);
    }
  }

  template <typename Fn>
  void for_each_containing(const Eigen::Vector3d& p, Fn&& fn) const {
    const auto k = key(p);
    if (const auto it = cells_.find({k.first, k.second, 0}); it != cells_.end()) {
      for (std::size_t i : it->second) {
        if (instances_[i].contains(p)) fn(i);
      }
    }
    for (std::size_t i : large_) {
      if (instances_[i].contains(p)) fn(i);
    }
  }

 private:
  std::pair<std::int64_t, std::int64_t> key(const Eigen::Vector3d& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x() / cell_)), static_cast<std::int64_t>(std::floor(p.y() / cell_))};
  }

  const std::vector<Instance>& instances_;
  double cell_;
  std::unordered_map<CellKey, std::vector<std::size_t>, CellKeyHash> cells_;
  std::vector<std::size_t> large_;
};

}  // namespace

LabelList instance_vote(const PointCloud& current, const LabelList& labels, const std::vector<LabeledCloud>& history,
                        const std::vector<Instance>& instances) {
  check_labels(current, labels, "instance_vote");
  LabelList out = labels;
  if (instances.empty()) return out;

  std::vector<VoteTally> total(instances.size());
  std::vector<VoteTally> own(instances.size());
  for (std::size_t k = 0; k < instances.size(); ++k) {
    for (std::size_t m : instances[k].members) {
      if (m >= current.size()) throw Error("instance_vote: member index out of range");
      own[k].add(labels[m]);
    }
    total[k] = own[k];
  }
  const BoxIndex index(instances, 2.0);
  for (const LabeledCloud& h : history) {
    check_labels(h.cloud, h.labels, "instance_vote history");
    for (std::size_t i = 0; i < h.cloud.size(); ++i) {
      index.for_each_containing(h.cloud.points[i], [&](std::size_t k) { total[k].add(h.labels[i]); });
    }
  }
  for (std::size_t k = 0; k < instances.size(); ++k) {
    std::optional<MotionState> winner = total[k].decisive();
    if (!winner && (total[k].stat > 0 || total[k].moving > 0)) winner = own[k].decisive();
    if (!winner) continue;
    for (std::size_t m : instances[k].members) out[m] = *winner;
  }
  return out;
}

VotingResult vote_frame(const PointCloud& current, const LabelList& coarse,
                        const std::vector<std::uint8_t>& foreground, const LongTermMemory& memory,
                        const Pose& pose_t, const VotingConfig& cfg) {
  VotingResult r;
  if (!cfg.enabled) {
    r.voxel_refined = coarse;
    r.refined = coarse;
    return r;
  }
  const std::vector<LabeledCloud> history = reproject_history(memory, pose_t);
  r.voxel_refined = voxel_vote(current, coarse, history, cfg.voxel);
  if (cfg.instance_stage) {
    r.instances = build_instances(current, foreground, cfg.dbscan);
    r.refined = instance_vote(current, r.voxel_refined, history, r.instances);
  } else {
    r.refined = r.voxel_refined;
  }
  return r;
}

}  // namespace streammos
