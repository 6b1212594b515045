#include "streammos/scanio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace streammos {

namespace fs = std::filesystem;

namespace {

std::vector<char> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw Error("cannot open " + path.string());
  const std::streamsize size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<char> bytes(static_cast<std::size_t>(size));
  if (size > 0 && !in.read(bytes.data(), size)) throw Error("short read on " + path.string());
  return bytes;
}

std::uint32_t load_u32_le(const char* p) {
  const auto* b = reinterpret_cast<const unsigned char*>(p);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void store_u32_le(std::uint32_t v, char* p) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
}

float load_f32_le(const char* p) { return std::bit_cast<float>(load_u32_le(p)); }

void store_f32_le(float v, char* p) { store_u32_le(std::bit_cast<std::uint32_t>(v), p); }

void write_file_bytes(const fs::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

Eigen::Matrix4d parse_3x4(const std::string& line, std::size_t line_no, const char* what) {
  std::istringstream ss(line);
  std::array<double, 12> v{};
  for (double& x : v) {
    if (!(ss >> x)) {
      throw Error(std::string("malformed ") + what + " line " + std::to_string(line_no) +
                  ": expected 12 numbers");
    }
  }
  std::string extra;
  if (ss >> extra) {
    throw Error(std::string("malformed ") + what + " line " + std::to_string(line_no) +
                ": trailing token '" + extra + "'");
  }
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = v[static_cast<std::size_t>(r * 4 + c)];
  return m;
}

// Projects a nearly-orthonormal rotation onto SO(3). Leaves already rigid
// rotations untouched so exact inputs stay exact.
Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& r) {
  const Eigen::Matrix3d gram = r.transpose() * r;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= 1e-12) return r;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0) u.col(2) *= -1.0;
  return u * v.transpose();
}

std::optional<MotionState> parse_state(const std::string& s) {
  if (s == "unknown") return MotionState::kUnknown;
  if (s == "static") return MotionState::kStatic;
  if (s == "moving") return MotionState::kMoving;
  return std::nullopt;
}

}  // namespace

// ---------------------------------------------------------------------------
// LabelRemap

LabelRemap LabelRemap::semantic_kitti_mos() {
  LabelRemap r;
  r.set(0, MotionState::kUnknown);  // unlabeled
  r.set(1, MotionState::kUnknown);  // outlier
  r.set(9, MotionState::kStatic);   // generic static (MOS relabel)
  for (std::uint32_t id : {10u, 11u, 13u, 15u, 16u, 18u, 20u, 30u, 31u, 32u}) {
    r.set(id, MotionState::kStatic, Movability::kMovable);
  }
  for (std::uint32_t id : {40u, 44u, 48u, 49u, 50u, 51u, 52u, 60u, 70u, 71u, 72u, 80u, 81u, 99u}) {
    r.set(id, MotionState::kStatic, Movability::kBackground);
  }
  r.set(251, MotionState::kMoving, Movability::kMovable);  // generic moving (MOS relabel)
  for (std::uint32_t id = 252; id <= 259; ++id) r.set(id, MotionState::kMoving, Movability::kMovable);
  return r;
}

LabelRemap LabelRemap::parse(std::istream& in) {
  LabelRemap r;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string id_tok;
    if (!(ss >> id_tok)) continue;
    std::string state_tok;
    std::uint32_t id = 0;
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(id_tok, &used);
      if (used != id_tok.size() || v > 0xffffu) throw std::invalid_argument(id_tok);
      id = static_cast<std::uint32_t>(v);
    } catch (const std::exception&) {
      throw Error("remap line " + std::to_string(line_no) + ": bad id '" + id_tok + "'");
    }
    if (!(ss >> state_tok)) throw Error("remap line " + std::to_string(line_no) + ": missing state");
    const auto state = parse_state(state_tok);
    if (!state) throw Error("remap line " + std::to_string(line_no) + ": bad state '" + state_tok + "'");
    std::optional<Movability> movable;
    std::string mov_tok;
    if (ss >> mov_tok) {
      if (mov_tok == "movable") {
        movable = Movability::kMovable;
      } else if (mov_tok == "background") {
        movable = Movability::kBackground;
      } else {
        throw Error("remap line " + std::to_string(line_no) + ": bad movable flag '" + mov_tok + "'");
      }
    }
    r.set(id, *state, movable);
  }
  return r;
}

LabelRemap LabelRemap::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open remap file " + path.string());
  return parse(in);
}

void LabelRemap::set(std::uint32_t id, MotionState state, std::optional<Movability> movable) {
  states_[id] = state;
  if (movable) {
    movable_[id] = *movable;
  } else {
    movable_.erase(id);
  }
}

MotionLabel LabelRemap::map(std::uint32_t raw) const {
  const std::uint32_t id = raw & 0xffffu;
  MotionLabel label;
  if (auto it = states_.find(id); it != states_.end()) label.state = it->second;
  if (auto it = movable_.find(id); it != movable_.end()) label.movable = it->second;
  return label;
}

std::uint32_t LabelRemap::encode(MotionState s) {
  switch (s) {
    case MotionState::kStatic:
      return 9;
    case MotionState::kMoving:
      return 251;
    case MotionState::kUnknown:
      break;
  }
  return 0;
}

void SequenceConfig::validate() const {
  if (target_points == 0) throw Error("target point count V must be positive");
  for (int a = 0; a < 3; ++a) {
    if (!(crop.min[a] < crop.max[a])) throw Error("crop min must be below max on every axis");
  }
}

// ---------------------------------------------------------------------------
// Files

PointCloud read_scan(const fs::path& path, ScanReadStats* stats) {
  if (!fs::exists(path)) throw Error("scan file missing: " + path.string());
  const std::vector<char> bytes = read_file_bytes(path);
  if (bytes.size() % 16 != 0) {
    throw Error("scan file " + path.string() + " has length " + std::to_string(bytes.size()) +
                ", not a multiple of 16");
  }
  const std::size_t n = bytes.size() / 16;
  PointCloud cloud;
  cloud.points.reserve(n);
  cloud.intensity.reserve(n);
  std::size_t rejected = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const char* rec = bytes.data() + i * 16;
    const float x = load_f32_le(rec);
    const float y = load_f32_le(rec + 4);
    const float z = load_f32_le(rec + 8);
    const float w = load_f32_le(rec + 12);
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z) || !std::isfinite(w)) {
      ++rejected;
      continue;
    }
    cloud.points.emplace_back(x, y, z);
    cloud.intensity.push_back(w);
  }
  if (stats) *stats = {n, rejected};
  return cloud;
}

void write_scan(const fs::path& path, const PointCloud& cloud) {
  cloud.validate();
  std::vector<char> bytes(cloud.size() * 16);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    char* rec = bytes.data() + i * 16;
    const auto& p = cloud.points[i];
    store_f32_le(static_cast<float>(p.x()), rec);
    store_f32_le(static_cast<float>(p.y()), rec + 4);
    store_f32_le(static_cast<float>(p.z()), rec + 8);
    store_f32_le(cloud.has_intensity() ? cloud.intensity[i] : 0.0f, rec + 12);
  }
  write_file_bytes(path, bytes);
}

Eigen::Matrix4d read_calib_tr(const fs::path& calib_path) {
  std::ifstream in(calib_path);
  if (!in) throw Error("cannot open calibration file " + calib_path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.rfind("Tr:", 0) == 0) return parse_3x4(line.substr(3), line_no, "calibration Tr");
  }
  throw Error("calibration file " + calib_path.string() + " has no Tr: line");
}

std::vector<Pose> parse_poses(std::istream& in, const Eigen::Matrix4d& tr) {
  Eigen::FullPivLU<Eigen::Matrix4d> lu(tr);
  if (!lu.isInvertible() || std::abs(tr.determinant()) < 1e-12) {
    throw Error("calibration transform Tr is not invertible");
  }
  const Eigen::Matrix4d tr_inv = lu.inverse();
  std::vector<Pose> poses;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const Eigen::Matrix4d cam = parse_3x4(line, line_no, "pose");
    Pose p = Pose::from_matrix(tr_inv * cam * tr);
    p.rotation = nearest_rotation(p.rotation);
    poses.push_back(p);
  }
  return poses;
}

std::vector<Pose> read_poses(const fs::path& poses_path, const fs::path& calib_path) {
  const Eigen::Matrix4d tr = read_calib_tr(calib_path);
  std::ifstream in(poses_path);
  if (!in) throw Error("cannot open pose file " + poses_path.string());
  return parse_poses(in, tr);
}

void write_poses(const fs::path& path, const std::vector<Pose>& poses) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(17);
  for (const Pose& p : poses) {
    const Eigen::Matrix4d m = p.matrix();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        out << m(r, c) << ((r == 2 && c == 3) ? '\n' : ' ');
      }
    }
  }
}

void write_identity_calib(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n";
}

std::vector<std::uint32_t> read_raw_labels(const fs::path& path) {
  if (!fs::exists(path)) throw Error("label file missing: " + path.string());
  const std::vector<char> bytes = read_file_bytes(path);
  if (bytes.size() % 4 != 0) {
    throw Error("label file " + path.string() + " has length not a multiple of 4");
  }
  std::vector<std::uint32_t> raw(bytes.size() / 4);
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = load_u32_le(bytes.data() + 4 * i);
  return raw;
}

std::vector<MotionLabel> read_labels(const fs::path& path, const LabelRemap& remap) {
  const auto raw = read_raw_labels(path);
  std::vector<MotionLabel> labels;
  labels.reserve(raw.size());
  for (std::uint32_t r : raw) labels.push_back(remap.map(r));
  return labels;
}

void write_raw_labels(const fs::path& path, const std::vector<std::uint32_t>& raw) {
  std::vector<char> bytes(raw.size() * 4);
  for (std::size_t i = 0; i < raw.size(); ++i) store_u32_le(raw[i], bytes.data() + 4 * i);
  write_file_bytes(path, bytes);
}

void write_labels(const fs::path& path, const LabelList& labels) {
  std::vector<std::uint32_t> raw(labels.size());
  std::transform(labels.begin(), labels.end(), raw.begin(), LabelRemap::encode);
  write_raw_labels(path, raw);
}

// ---------------------------------------------------------------------------
// Geometry

PointCloud transform_cloud(const PointCloud& cloud, const Pose& transform) {
  PointCloud out = cloud;
  for (auto& p : out.points) p = transform.apply(p);
  return out;
}

Pose relative_pose(const Pose& pose_to, const Pose& pose_from) {
  return pose_to.inverse().compose(pose_from);
}

std::vector<PointCloud> ego_compensate(const std::vector<PointCloud>& history,
                                       const std::vector<Pose>& poses, std::int64_t t) {
  const auto pose_at = [&](std::int64_t id) -> const Pose& {
    if (id < 0 || static_cast<std::size_t>(id) >= poses.size()) {
      throw Error("missing pose for frame " + std::to_string(id));
    }
    return poses[static_cast<std::size_t>(id)];
  };
  const Pose& current = pose_at(t);
  std::vector<PointCloud> out;
  out.reserve(history.size());
  for (const PointCloud& h : history) {
    PointCloud moved = transform_cloud(h, relative_pose(current, pose_at(h.frame_id)));
    out.push_back(std::move(moved));
  }
  return out;
}

IndexedCloud crop_cloud(const PointCloud& cloud, const CropBox& crop) {
  std::vector<std::size_t> keep;
  keep.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (crop.contains(cloud.points[i])) keep.push_back(i);
  }
  IndexedCloud out{select(cloud, keep), std::move(keep)};
  return out;
}

IndexedCloud sample_points(const PointCloud& cloud, std::size_t target, std::uint64_t seed) {
  if (target == 0) throw Error("sample_points: target count must be positive");
  if (cloud.empty()) throw Error("sample_points: input cloud is empty");
  const std::size_t n = cloud.size();
  std::vector<std::size_t> idx;
  idx.reserve(target);
  std::mt19937_64 rng(seed);
  if (n == target) {
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  } else if (n > target) {
    // Partial Fisher-Yates; the chosen subset is emitted in source order.
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = 0; i < target; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(perm[i], perm[pick(rng)]);
    }
    idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(target));
    std::sort(idx.begin(), idx.end());
  } else {
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    while (idx.size() < target) idx.push_back(pick(rng));
  }
  return {select(cloud, idx), std::move(idx)};
}

// ---------------------------------------------------------------------------
// KittiSequence

KittiSequence::KittiSequence(fs::path root) : root_(std::move(root)) {
  const fs::path scan_dir = root_ / "velodyne";
  if (!fs::is_directory(scan_dir)) throw Error("sequence has no velodyne/ directory: " + root_.string());
  for (const auto& entry : fs::directory_iterator(scan_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".bin") scans_.push_back(entry.path());
  }
  std::sort(scans_.begin(), scans_.end());
}

bool KittiSequence::has_labels() const { return fs::is_directory(root_ / "labels"); }

bool KittiSequence::has_poses() const {
  return fs::exists(root_ / "poses.txt") && fs::exists(root_ / "calib.txt");
}

std::string KittiSequence::frame_name(std::size_t i) {
  std::ostringstream ss;
  ss << std::setw(6) << std::setfill('0') << i;
  return ss.str();
}

PointCloud KittiSequence::scan(std::size_t i) const {
  PointCloud cloud = read_scan(scans_.at(i));
  cloud.frame_id = static_cast<std::int64_t>(i);
  return cloud;
}

fs::path KittiSequence::label_path(std::size_t i) const {
  return root_ / "labels" / (scans_.at(i).stem().string() + ".label");
}

std::vector<MotionLabel> KittiSequence::labels(std::size_t i, const LabelRemap& remap,
                                               std::size_t expected_points) const {
  auto labels = read_labels(label_path(i), remap);
  if (labels.size() != expected_points) {
    throw Error("frame " + std::to_string(i) + ": label count " + std::to_string(labels.size()) +
                " does not match scan point count " + std::to_string(expected_points));
  }
  return labels;
}

std::vector<Pose> KittiSequence::poses() const {
  return read_poses(root_ / "poses.txt", root_ / "calib.txt");
}

}  // namespace streammos
