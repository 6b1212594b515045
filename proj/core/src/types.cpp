#include "streammos/types.hpp"

#include <cmath>

namespace streammos {

const char* to_string(MotionState s) {
  switch (s) {
    case MotionState::kUnknown:
      return "unknown";
    case MotionState::kStatic:
      return "static";
    case MotionState::kMoving:
      return "moving";
  }
  return "invalid";
}

Pose Pose::from_translation(const Eigen::Vector3d& t) {
  Pose p;
  p.translation = t;
  return p;
}

Pose Pose::from_matrix(const Eigen::Matrix4d& m) {
  Pose p;
  p.rotation = m.topLeftCorner<3, 3>();
  p.translation = m.topRightCorner<3, 1>();
  return p;
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Pose Pose::inverse() const {
  Pose p;
  p.rotation = rotation.transpose();
  p.translation = -(p.rotation * translation);
  return p;
}

Pose Pose::compose(const Pose& other) const {
  Pose p;
  p.rotation = rotation * other.rotation;
  p.translation = rotation * other.translation + translation;
  return p;
}

bool Pose::is_rigid(double tol) const {
  const Eigen::Matrix3d gram = rotation.transpose() * rotation;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol && translation.allFinite();
}

void PointCloud::validate() const {
  if (!intensity.empty() && intensity.size() != points.size()) {
    throw Error("point cloud intensity length " + std::to_string(intensity.size()) +
                " does not match point count " + std::to_string(points.size()));
  }
  for (const auto& p : points) {
    if (!p.allFinite()) throw Error("point cloud contains a non-finite coordinate");
  }
}

PointCloud select(const PointCloud& cloud, const std::vector<std::size_t>& indices) {
  PointCloud out;
  out.frame_id = cloud.frame_id;
  out.points.reserve(indices.size());
  if (cloud.has_intensity()) out.intensity.reserve(indices.size());
  for (std::size_t i : indices) {
    out.points.push_back(cloud.points.at(i));
    if (cloud.has_intensity()) out.intensity.push_back(cloud.intensity[i]);
  }
  return out;
}

}  // namespace streammos
