#pragma once

// Forward-only dense kernels: convolutions, the asymmetric conv block,
// bilinear sampling and resizing, dense layers, normalization, softmax and
// loss evaluation.
//
// Feature maps are float32 in HWC order. Vector kernels (linear, softmax,
// layer_norm, mlp, losses) evaluate in double precision.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "streammos/types.hpp"

namespace streammos {

using Vec = std::vector<double>;

/// Dense H x W x C float map, channel-contiguous.
struct Tensor2D {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  Tensor2D() = default;
  Tensor2D(int h, int w, int c, float fill = 0.0f);

  std::size_t cells() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  std::size_t offset(int y, int x) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
           static_cast<std::size_t>(channels);
  }
  float& at(int y, int x, int c) { return data[offset(y, x) + static_cast<std::size_t>(c)]; }
  float at(int y, int x, int c) const { return data[offset(y, x) + static_cast<std::size_t>(c)]; }
  std::span<float> pixel(int y, int x) { return {data.data() + offset(y, x), static_cast<std::size_t>(channels)}; }
  std::span<const float> pixel(int y, int x) const {
    return {data.data() + offset(y, x), static_cast<std::size_t>(channels)};
  }
  bool same_shape(const Tensor2D& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  bool empty() const { return data.empty(); }
};

/// rows x channels float matrix; one row per point (or per sample).
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t channels = 0;
  std::vector<float> data;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), channels(c), data(r * c, fill) {}

  std::span<float> row(std::size_t i) { return {data.data() + i * channels, channels}; }
  std::span<const float> row(std::size_t i) const { return {data.data() + i * channels, channels}; }
};

/// Weights and bias of one layer.
///
/// Convolutions use shape {kh, kw, cin, cout} with weights laid out in that
/// order (cout fastest). Dense layers use shape {out, in}, row-major, so
/// y = W x + b. Normalization layers use shape {C}: weights hold the gain.
struct KernelParams {
  std::vector<int> shape;
  std::vector<float> weights;
  std::vector<float> bias;

  static KernelParams conv(int kh, int kw, int cin, int cout);
  static KernelParams dense(int out, int in);
  static KernelParams norm(int channels);

  bool is_conv() const { return shape.size() == 4; }
  bool is_dense() const { return shape.size() == 2; }
  bool is_norm() const { return shape.size() == 1; }
  int kernel_h() const { return shape.at(0); }
  int kernel_w() const { return shape.at(1); }
  int in_channels() const { return is_conv() ? shape.at(2) : is_dense() ? shape.at(1) : shape.at(0); }
  int out_channels() const { return is_conv() ? shape.at(3) : shape.at(0); }
  /// Fan-in used for initialization.
  int fan_in() const;

  float& conv_weight(int ky, int kx, int ci, int co);
  float conv_weight(int ky, int kx, int ci, int co) const;
  float& dense_weight(int o, int i) { return weights[static_cast<std::size_t>(o * in_channels() + i)]; }
  float dense_weight(int o, int i) const { return weights[static_cast<std::size_t>(o * in_channels() + i)]; }

  /// Throws Error unless weight/bias sizes agree with `shape`.
  void validate(std::string_view name = "layer") const;
};

struct Padding {
  int rows = 0;
  int cols = 0;
  constexpr Padding() = default;
  constexpr Padding(int p) : rows(p), cols(p) {}  // NOLINT(google-explicit-constructor)
  constexpr Padding(int r, int c) : rows(r), cols(c) {}
  /// Padding that preserves spatial size for an odd kernel at stride 1.
  static Padding same(const KernelParams& k) { return {k.kernel_h() / 2, k.kernel_w() / 2}; }
};

enum class Activation { kNone, kRelu };

Activation parse_activation(std::string_view name);

/// Cross-correlation with zero padding.
/// Output size per axis: floor((in + 2p - k) / stride) + 1.
Tensor2D conv2d(const Tensor2D& input, const KernelParams& params, int stride, Padding padding);

void relu_inplace(Tensor2D& t);
void apply_activation(Tensor2D& t, Activation act);

/// Channel-wise concatenation of equally sized maps, in argument order.
Tensor2D concat_channels(std::span<const Tensor2D* const> parts);
Tensor2D concat_channels(const Tensor2D& a, const Tensor2D& b);

struct AcbParams {
  KernelParams horizontal;  // kh x kw with kw > kh, C -> C
  KernelParams vertical;    // kh x kw with kh > kw, C -> C
  KernelParams fuse;        // 3 x 3, 2C -> C
};

/// Asymmetric conv block: fuse(concat(horizontal(f), vertical(f))) + f.
/// With `residual` false the skip connection is dropped.
Tensor2D acb(const Tensor2D& input, const AcbParams& params, bool residual = true);

/// Bilinear blend of the 4 cells around (u, v), where u is a column and v a
/// row in cell-index units (integer coordinates hit cell centres). Sample
/// positions outside the map are clamped to the border.
void bilinear_sample_into(const Tensor2D& map, double u, double v, std::span<float> out);
/// Row i of the result is the sample at coords[i] = (u, v).
FeatureMatrix bilinear_sample(const Tensor2D& map, std::span<const std::array<double, 2>> coords);

/// Parameter-free bilinear resize (half-pixel centres, border clamp).
/// Resizing to the same size returns an identical map.
Tensor2D resize_bilinear(const Tensor2D& input, int out_h, int out_w);

Vec softmax(std::span<const double> v);
Vec linear(std::span<const double> v, const KernelParams& params);

inline constexpr double kLayerNormEps = 1e-5;
Vec layer_norm(std::span<const double> v, std::span<const float> gain, std::span<const float> bias,
               double eps = kLayerNormEps);

/// Linear layers with `hidden` applied between them and `output` after the last.
Vec mlp(std::span<const double> v, std::span<const KernelParams> layers,
        Activation hidden = Activation::kRelu, Activation output = Activation::kNone);

/// mlp applied independently to every row.
FeatureMatrix mlp_rows(const FeatureMatrix& in, std::span<const KernelParams> layers,
                       Activation hidden = Activation::kRelu, Activation output = Activation::kNone);

// ---------------------------------------------------------------------------
// Losses

/// rows x classes probabilities (double).
struct ProbabilityTable {
  std::size_t rows = 0;
  std::size_t classes = 0;
  std::vector<double> p;

  ProbabilityTable() = default;
  ProbabilityTable(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), classes(c), p(r * c, fill) {}

  std::span<double> row(std::size_t i) { return {p.data() + i * classes, classes}; }
  std::span<const double> row(std::size_t i) const { return {p.data() + i * classes, classes}; }
};

struct LossValue {
  double value = 0.0;
  bool empty = false;  // no valid targets; value is 0 by definition
};

/// Class index 0 (unknown) is ignored by default.
inline constexpr int kIgnoreUnknown = 0;

/// Weighted cross-entropy, normalized by the summed weights of valid targets.
LossValue wce_loss(const ProbabilityTable& pred, std::span<const int> gt, std::span<const double> class_weights,
                   std::optional<int> ignore = kIgnoreUnknown);

enum class LovaszClasses { kPresent, kAll };

/// Lovász-Softmax. With `only_classes` set, the loss averages over exactly
/// those classes; otherwise over the classes selected by `mode`.
LossValue lovasz_softmax_loss(const ProbabilityTable& pred, std::span<const int> gt,
                              std::optional<int> ignore = kIgnoreUnknown,
                              LovaszClasses mode = LovaszClasses::kPresent,
                              std::span<const int> only_classes = {});

struct LossWeights {
  double wce = 1.0;        // lambda_1
  double lovasz = 1.5;     // lambda_2
  double auxiliary = 1.0;  // lambda_3
  std::array<double, 3> class_weights{1.0, 1.0, 1.0};
};

/// lambda_1 * wce + lambda_2 * lovasz for one prediction set.
double segmentation_loss(const ProbabilityTable& pred, std::span<const int> gt, const LossWeights& w);

/// Point loss plus lambda_3 times the sum over exactly three auxiliary BEV predictions.
double combined_loss(const ProbabilityTable& pred_points, std::span<const ProbabilityTable> pred_bev_aux,
                     std::span<const int> gt_points, std::span<const int> gt_bev, const LossWeights& w);

std::vector<int> to_class_indices(const LabelList& labels);

}  // namespace streammos
