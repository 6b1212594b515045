#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace streammos {

/// Raised by every operation that rejects its input.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class MotionState : std::uint8_t { kUnknown = 0, kStatic = 1, kMoving = 2 };

enum class Movability : std::uint8_t { kBackground = 0, kMovable = 1 };

inline constexpr int kNumMotionStates = 3;

struct MotionLabel {
  MotionState state = MotionState::kUnknown;
  std::optional<Movability> movable;

  friend bool operator==(const MotionLabel&, const MotionLabel&) = default;
};

using LabelList = std::vector<MotionState>;

const char* to_string(MotionState s);

/// Rigid transform p -> R p + t.
///
/// Group operations are exact compositions of the underlying matrices; no
/// re-orthonormalization happens implicitly.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose identity() { return {}; }
  static Pose from_translation(const Eigen::Vector3d& t);
  /// Builds a pose from the top 3x4 block of a homogeneous matrix.
  static Pose from_matrix(const Eigen::Matrix4d& m);

  Eigen::Matrix4d matrix() const;
  Pose inverse() const;
  /// (*this) * other, i.e. apply `other` first.
  Pose compose(const Pose& other) const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }

  /// True when R is orthonormal with det +1 within `tol`.
  bool is_rigid(double tol = 1e-6) const;
};

inline Pose operator*(const Pose& a, const Pose& b) { return a.compose(b); }

struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  /// Empty when the source carries no intensity; otherwise one entry per point.
  std::vector<float> intensity;
  std::int64_t frame_id = 0;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_intensity() const { return !intensity.empty(); }

  /// Throws Error when a coordinate is non-finite or intensity length differs.
  void validate() const;
};

/// Copies the points selected by `indices` (in that order).
PointCloud select(const PointCloud& cloud, const std::vector<std::size_t>& indices);

}  // namespace streammos
