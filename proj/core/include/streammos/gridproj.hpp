#pragma once

// Projections between points, bird's-eye-view grids and range images:
// P2B / P2R through scatter_max, B2P / R2P through gather_bilinear.

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "streammos/numkern.hpp"
#include "streammos/scanio.hpp"
#include "streammos/types.hpp"

namespace streammos {

/// Top-down grid over x/y. Columns (u) run along x, rows (v) along y.
struct BevConfig {
  int width = 512;   // W^b, cells along x
  int height = 512;  // H^b, cells along y
  double x_min = -50.0;
  double x_max = 50.0;
  double y_min = -50.0;
  double y_max = 50.0;

  static BevConfig from_crop(const CropBox& crop, int width, int height);

  double cell_w() const { return (x_max - x_min) / width; }
  double cell_h() const { return (y_max - y_min) / height; }
  /// Same extent, `factor` times fewer cells per axis.
  BevConfig downsampled(int factor) const;
  void validate() const;

  friend bool operator==(const BevConfig&, const BevConfig&) = default;
};

/// Spherical range image. Row 0 is the top of the vertical field of view.
struct RangeConfig {
  int width = 2048;
  int height = 64;
  double fov_up = 3.0 * 3.14159265358979323846 / 180.0;     // radians
  double fov_down = -25.0 * 3.14159265358979323846 / 180.0;  // radians

  RangeConfig downsampled_width(int factor) const;
  void validate() const;

  friend bool operator==(const RangeConfig&, const RangeConfig&) = default;
};

using GridGeometry = std::variant<BevConfig, RangeConfig>;

int geometry_height(const GridGeometry& g);
int geometry_width(const GridGeometry& g);

struct FeatureMap {
  Tensor2D grid;
  GridGeometry geometry;
  /// One flag per cell, set where at least one point was scattered. Empty for
  /// dense maps produced by convolutions.
  std::vector<std::uint8_t> occupancy;

  bool same_geometry(const FeatureMap& o) const { return geometry == o.geometry && grid.same_shape(o.grid); }
};

/// Per-point placement in a grid. Continuous coordinates use cell-edge units:
/// cell (row, col) spans [col, col+1) x [row, row+1), its centre is at +0.5.
struct ProjectionIndex {
  GridGeometry geometry;
  std::vector<int> col;
  std::vector<int> row;
  std::vector<double> u;
  std::vector<double> v;
  std::vector<std::uint8_t> valid;

  std::size_t size() const { return valid.size(); }
  int height() const { return geometry_height(geometry); }
  int width() const { return geometry_width(geometry); }
  std::size_t valid_count() const;
};

ProjectionIndex bev_index(const PointCloud& cloud, const BevConfig& cfg);

struct Spherical {
  double r = 0.0;
  double theta = 0.0;  // elevation: asin(z / r)
  double phi = 0.0;    // azimuth: atan2(y, x)
};

/// nullopt for the origin.
std::optional<Spherical> spherical_coords(const Eigen::Vector3d& p);
Eigen::Vector3d from_spherical(const Spherical& s);

/// u = (1 - (phi/pi + 1)/2) * W, v = (1 - (theta - fov_down)/(fov_up - fov_down)) * H.
/// Points outside the vertical field of view, or at the origin, are invalid.
ProjectionIndex range_index(const PointCloud& cloud, const RangeConfig& cfg);

/// Channel-wise max over the points in each cell. Unoccupied cells are zero.
FeatureMap scatter_max(const FeatureMatrix& features, const ProjectionIndex& index);

/// Bilinear blend of the 4 cells nearest each point's continuous position,
/// clamped at the border. Invalid points get zeros. The azimuth seam is not
/// wrapped.
FeatureMatrix gather_bilinear(const Tensor2D& map, const ProjectionIndex& index);
inline FeatureMatrix gather_bilinear(const FeatureMap& map, const ProjectionIndex& index) {
  return gather_bilinear(map.grid, index);
}

}  // namespace streammos
