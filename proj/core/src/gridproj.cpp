#include "streammos/gridproj.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace streammos {

BevConfig BevConfig::from_crop(const CropBox& crop, int width, int height) {
  BevConfig cfg;
  cfg.width = width;
  cfg.height = height;
  cfg.x_min = crop.min.x();
  cfg.x_max = crop.max.x();
  cfg.y_min = crop.min.y();
  cfg.y_max = crop.max.y();
  return cfg;
}

BevConfig BevConfig::downsampled(int factor) const {
  if (factor <= 0 || width % factor != 0 || height % factor != 0) {
    throw Error("BEV size " + std::to_string(width) + "x" + std::to_string(height) + " not divisible by " +
                std::to_string(factor));
  }
  BevConfig out = *this;
  out.width /= factor;
  out.height /= factor;
  return out;
}

void BevConfig::validate() const {
  if (width <= 0 || height <= 0) throw Error("BEV width and height must be positive");
  if (!(x_min < x_max) || !(y_min < y_max)) throw Error("BEV extent must have min < max");
}

RangeConfig RangeConfig::downsampled_width(int factor) const {
  if (factor <= 0 || width % factor != 0) throw Error("range width not divisible by " + std::to_string(factor));
  RangeConfig out = *this;
  out.width /= factor;
  return out;
}

void RangeConfig::validate() const {
  if (width <= 0 || height <= 0) throw Error("range image width and height must be positive");
  if (!(fov_down < fov_up)) throw Error("range image needs fov_down < fov_up");
}

int geometry_height(const GridGeometry& g) {
  return std::visit([](const auto& c) { return c.height; }, g);
}

int geometry_width(const GridGeometry& g) {
  return std::visit([](const auto& c) { return c.width; }, g);
}

std::size_t ProjectionIndex::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

namespace {

ProjectionIndex make_index(GridGeometry g, std::size_t n) {
  ProjectionIndex idx;
  idx.geometry = g;
  idx.col.assign(n, 0);
  idx.row.assign(n, 0);
  idx.u.assign(n, 0.0);
  idx.v.assign(n, 0.0);
  idx.valid.assign(n, 0);
  return idx;
}

}  // namespace

ProjectionIndex bev_index(const PointCloud& cloud, const BevConfig& cfg) {
  cfg.validate();
  ProjectionIndex idx = make_index(cfg, cloud.size());
  const double cw = cfg.cell_w();
  const double ch = cfg.cell_h();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    const double u = (p.x() - cfg.x_min) / cw;
    const double v = (p.y() - cfg.y_min) / ch;
    const double fu = std::floor(u);
    const double fv = std::floor(v);
    idx.u[i] = u;
    idx.v[i] = v;
    if (fu < 0.0 || fv < 0.0 || fu >= cfg.width || fv >= cfg.height) continue;
    idx.col[i] = static_cast<int>(fu);
    idx.row[i] = static_cast<int>(fv);
    idx.valid[i] = 1;
  }
  return idx;
}

std::optional<Spherical> spherical_coords(const Eigen::Vector3d& p) {
  const double r = p.norm();
  if (!(r > 0.0) || !std::isfinite(r)) return std::nullopt;
  Spherical s;
  s.r = r;
  s.phi = std::atan2(p.y(), p.x());
  s.theta = std::asin(std::clamp(p.z() / r, -1.0, 1.0));
  return s;
}

Eigen::Vector3d from_spherical(const Spherical& s) {
  const double c = std::cos(s.theta);
  return {s.r * c * std::cos(s.phi), s.r * c * std::sin(s.phi), s.r * std::sin(s.theta)};
}

ProjectionIndex range_index(const PointCloud& cloud, const RangeConfig& cfg) {
  cfg.validate();
  ProjectionIndex idx = make_index(cfg, cloud.size());
  const double fov = cfg.fov_up - cfg.fov_down;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto s = spherical_coords(cloud.points[i]);
    if (!s) continue;
    const double u = (1.0 - (s->phi / std::numbers::pi + 1.0) / 2.0) * cfg.width;
    const double v = (1.0 - (s->theta - cfg.fov_down) / fov) * cfg.height;
    idx.u[i] = u;
    idx.v[i] = v;
    if (s->theta < cfg.fov_down || s->theta > cfg.fov_up) continue;
    idx.col[i] = std::clamp(static_cast<int>(std::floor(u)), 0, cfg.width - 1);
    idx.row[i] = std::clamp(static_cast<int>(std::floor(v)), 0, cfg.height - 1);
    idx.valid[i] = 1;
  }
  return idx;
}

FeatureMap scatter_max(const FeatureMatrix& features, const ProjectionIndex& index) {
  if (features.rows != index.size()) {
    throw Error("scatter_max: " + std::to_string(features.rows) + " feature rows for " +
                std::to_string(index.size()) + " indexed points");
  }
  const int h = index.height();
  const int w = index.width();
  const int c = static_cast<int>(features.channels);
  FeatureMap out{Tensor2D(h, w, c), index.geometry, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, 0)};
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (!index.valid[i]) continue;
    const std::size_t cell = static_cast<std::size_t>(index.row[i]) * static_cast<std::size_t>(w) +
                             static_cast<std::size_t>(index.col[i]);
    float* dst = out.grid.data.data() + cell * static_cast<std::size_t>(c);
    const auto src = features.row(i);
    if (!out.occupancy[cell]) {
      std::copy(src.begin(), src.end(), dst);
      out.occupancy[cell] = 1;
    } else {
      for (int k = 0; k < c; ++k) dst[k] = std::max(dst[k], src[static_cast<std::size_t>(k)]);
    }
  }
  return out;
}

FeatureMatrix gather_bilinear(const Tensor2D& map, const ProjectionIndex& index) {
  if (map.height != index.height() || map.width != index.width()) {
    throw Error("gather_bilinear: map size does not match projection geometry");
  }
  FeatureMatrix out(index.size(), static_cast<std::size_t>(map.channels));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (!index.valid[i]) continue;
    // Edge-unit coordinates to centre-unit sample positions.
    bilinear_sample_into(map, index.u[i] - 0.5, index.v[i] - 0.5, out.row(i));
  }
  return out;
}

}  // namespace streammos
