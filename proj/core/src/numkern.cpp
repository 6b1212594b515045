#include "streammos/numkern.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace streammos {

Tensor2D::Tensor2D(int h, int w, int c, float fill) : height(h), width(w), channels(c) {
  if (h < 0 || w < 0 || c < 0) throw Error("Tensor2D: negative dimension");
  data.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c), fill);
}

KernelParams KernelParams::conv(int kh, int kw, int cin, int cout) {
  KernelParams k;
  k.shape = {kh, kw, cin, cout};
  k.weights.assign(static_cast<std::size_t>(kh * kw * cin * cout), 0.0f);
  k.bias.assign(static_cast<std::size_t>(cout), 0.0f);
  return k;
}

KernelParams KernelParams::dense(int out, int in) {
  KernelParams k;
  k.shape = {out, in};
  k.weights.assign(static_cast<std::size_t>(out * in), 0.0f);
  k.bias.assign(static_cast<std::size_t>(out), 0.0f);
  return k;
}

KernelParams KernelParams::norm(int channels) {
  KernelParams k;
  k.shape = {channels};
  k.weights.assign(static_cast<std::size_t>(channels), 1.0f);
  k.bias.assign(static_cast<std::size_t>(channels), 0.0f);
  return k;
}

int KernelParams::fan_in() const {
  if (is_conv()) return kernel_h() * kernel_w() * in_channels();
  if (is_dense()) return in_channels();
  return 1;
}

float& KernelParams::conv_weight(int ky, int kx, int ci, int co) {
  return weights[static_cast<std::size_t>(((ky * kernel_w() + kx) * in_channels() + ci) * out_channels() + co)];
}

float KernelParams::conv_weight(int ky, int kx, int ci, int co) const {
  return weights[static_cast<std::size_t>(((ky * kernel_w() + kx) * in_channels() + ci) * out_channels() + co)];
}

void KernelParams::validate(std::string_view name) const {
  if (shape.size() != 1 && shape.size() != 2 && shape.size() != 4) {
    throw Error(std::string(name) + ": kernel rank must be 1 (norm), 2 (dense) or 4 (conv)");
  }
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw Error(std::string(name) + ": non-positive kernel dimension");
    n *= static_cast<std::size_t>(d);
  }
  if (weights.size() != n) throw Error(std::string(name) + ": weight count does not match shape");
  if (bias.size() != static_cast<std::size_t>(out_channels())) {
    throw Error(std::string(name) + ": bias length does not match output channels");
  }
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "none" || name == "identity") return Activation::kNone;
  throw Error("unknown activation '" + std::string(name) + "'");
}

Tensor2D conv2d(const Tensor2D& input, const KernelParams& params, int stride, Padding padding) {
  params.validate("conv2d");
  if (!params.is_conv()) throw Error("conv2d: expected a convolution kernel");
  if (stride < 1) throw Error("conv2d: stride must be >= 1");
  if (params.in_channels() != input.channels) {
    throw Error("conv2d: input has " + std::to_string(input.channels) + " channels, kernel expects " +
                std::to_string(params.in_channels()));
  }
  const int kh = params.kernel_h();
  const int kw = params.kernel_w();
  const int cin = params.in_channels();
  const int cout = params.out_channels();
  const int span_h = input.height + 2 * padding.rows - kh;
  const int span_w = input.width + 2 * padding.cols - kw;
  if (span_h < 0 || span_w < 0) throw Error("conv2d: kernel larger than padded input");
  const int out_h = span_h / stride + 1;
  const int out_w = span_w / stride + 1;

  Tensor2D out(out_h, out_w, cout);
  const float* bias = params.bias.data();
  const float* w = params.weights.data();
  std::vector<double> acc(static_cast<std::size_t>(cout));
  double* o = acc.data();
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      std::copy(bias, bias + cout, o);
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride - padding.rows + ky;
        if (iy < 0 || iy >= input.height) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride - padding.cols + kx;
          if (ix < 0 || ix >= input.width) continue;
          const float* in = input.data.data() + input.offset(iy, ix);
          const float* wk = w + static_cast<std::size_t>((ky * kw + kx) * cin) * static_cast<std::size_t>(cout);
          for (int ci = 0; ci < cin; ++ci) {
            const float v = in[ci];
            if (v == 0.0f) continue;  // sparse BEV/RV inputs are mostly empty
            const float* wr = wk + static_cast<std::size_t>(ci) * static_cast<std::size_t>(cout);
            const double dv = v;
            for (int co = 0; co < cout; ++co) o[co] += dv * wr[co];
          }
        }
      }
      float* dst = out.data.data() + out.offset(oy, ox);
      for (int co = 0; co < cout; ++co) dst[co] = static_cast<float>(o[co]);
    }
  }
  return out;
}

void relu_inplace(Tensor2D& t) {
  for (float& v : t.data) v = std::max(v, 0.0f);
}

void apply_activation(Tensor2D& t, Activation act) {
  if (act == Activation::kRelu) relu_inplace(t);
}

Tensor2D concat_channels(std::span<const Tensor2D* const> parts) {
  if (parts.empty()) throw Error("concat_channels: nothing to concatenate");
  const int h = parts.front()->height;
  const int w = parts.front()->width;
  int c = 0;
  for (const Tensor2D* p : parts) {
    if (p->height != h || p->width != w) throw Error("concat_channels: spatial size mismatch");
    c += p->channels;
  }
  Tensor2D out(h, w, c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float* o = out.data.data() + out.offset(y, x);
      for (const Tensor2D* p : parts) {
        const auto src = p->pixel(y, x);
        o = std::copy(src.begin(), src.end(), o);
      }
    }
  }
  return out;
}

Tensor2D concat_channels(const Tensor2D& a, const Tensor2D& b) {
  const Tensor2D* parts[] = {&a, &b};
  return concat_channels(parts);
}

Tensor2D acb(const Tensor2D& input, const AcbParams& params, bool residual) {
  const Tensor2D h = conv2d(input, params.horizontal, 1, Padding::same(params.horizontal));
  const Tensor2D v = conv2d(input, params.vertical, 1, Padding::same(params.vertical));
  Tensor2D out = conv2d(concat_channels(h, v), params.fuse, 1, Padding::same(params.fuse));
  if (!out.same_shape(input)) throw Error("acb: fused output shape differs from input");
  if (residual) {
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += input.data[i];
  }
  return out;
}

void bilinear_sample_into(const Tensor2D& map, double u, double v, std::span<float> out) {
  if (out.size() != static_cast<std::size_t>(map.channels)) throw Error("bilinear_sample: output size mismatch");
  if (map.height <= 0 || map.width <= 0) throw Error("bilinear_sample: empty map");
  u = std::clamp(u, 0.0, static_cast<double>(map.width - 1));
  v = std::clamp(v, 0.0, static_cast<double>(map.height - 1));
  const int x0 = static_cast<int>(std::floor(u));
  const int y0 = static_cast<int>(std::floor(v));
  const int x1 = std::min(x0 + 1, map.width - 1);
  const int y1 = std::min(y0 + 1, map.height - 1);
  const double fx = u - x0;
  const double fy = v - y0;
  const double w00 = (1.0 - fx) * (1.0 - fy);
  const double w01 = fx * (1.0 - fy);
  const double w10 = (1.0 - fx) * fy;
  const double w11 = fx * fy;
  const float* a = map.data.data() + map.offset(y0, x0);
  const float* b = map.data.data() + map.offset(y0, x1);
  const float* c = map.data.data() + map.offset(y1, x0);
  const float* d = map.data.data() + map.offset(y1, x1);
  for (int ch = 0; ch < map.channels; ++ch) {
    out[static_cast<std::size_t>(ch)] =
        static_cast<float>(w00 * a[ch] + w01 * b[ch] + w10 * c[ch] + w11 * d[ch]);
  }
}

FeatureMatrix bilinear_sample(const Tensor2D& map, std::span<const std::array<double, 2>> coords) {
  FeatureMatrix out(coords.size(), static_cast<std::size_t>(map.channels));
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (!std::isfinite(coords[i][0]) || !std::isfinite(coords[i][1])) {
      throw Error("bilinear_sample: non-finite coordinate");
    }
    bilinear_sample_into(map, coords[i][0], coords[i][1], out.row(i));
  }
  return out;
}

Tensor2D resize_bilinear(const Tensor2D& input, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw Error("resize_bilinear: output size must be positive");
  if (out_h == input.height && out_w == input.width) return input;
  Tensor2D out(out_h, out_w, input.channels);
  const double sy = static_cast<double>(input.height) / out_h;
  const double sx = static_cast<double>(input.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double v = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < out_w; ++x) {
      const double u = (x + 0.5) * sx - 0.5;
      bilinear_sample_into(input, u, v, out.pixel(y, x));
    }
  }
  return out;
}

Vec softmax(std::span<const double> v) {
  Vec out(v.begin(), v.end());
  if (out.empty()) return out;
  const double m = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (double& x : out) {
    x = std::exp(x - m);
    sum += x;
  }
  for (double& x : out) x /= sum;
  return out;
}

namespace {

void linear_into(std::span<const double> v, const KernelParams& params, std::span<double> out) {
  const int in = params.in_channels();
  const int n_out = params.out_channels();
  for (int o = 0; o < n_out; ++o) {
    const float* w = params.weights.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
    double acc = params.bias[static_cast<std::size_t>(o)];
    for (int i = 0; i < in; ++i) acc += static_cast<double>(w[i]) * v[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(o)] = acc;
  }
}

void activate(std::span<double> v, Activation act) {
  if (act == Activation::kRelu) {
    for (double& x : v) x = std::max(x, 0.0);
  }
}

void check_dense(const KernelParams& params, std::size_t in_size, std::string_view what) {
  params.validate(what);
  if (!params.is_dense()) throw Error(std::string(what) + ": expected a dense kernel");
  if (static_cast<std::size_t>(params.in_channels()) != in_size) {
    throw Error(std::string(what) + ": input length " + std::to_string(in_size) + " does not match layer input " +
                std::to_string(params.in_channels()));
  }
}

}  // namespace

Vec linear(std::span<const double> v, const KernelParams& params) {
  check_dense(params, v.size(), "linear");
  Vec out(static_cast<std::size_t>(params.out_channels()));
  linear_into(v, params, out);
  return out;
}

Vec layer_norm(std::span<const double> v, std::span<const float> gain, std::span<const float> bias, double eps) {
  if (v.size() < 2) throw Error("layer_norm: need at least 2 elements");
  if (gain.size() != v.size() || bias.size() != v.size()) throw Error("layer_norm: gain/bias length mismatch");
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + eps);
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mean) * inv * gain[i] + bias[i];
  return out;
}

Vec mlp(std::span<const double> v, std::span<const KernelParams> layers, Activation hidden, Activation output) {
  if (layers.empty()) throw Error("mlp: no layers");
  Vec cur(v.begin(), v.end());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    cur = linear(cur, layers[l]);
    activate(cur, l + 1 == layers.size() ? output : hidden);
  }
  return cur;
}

FeatureMatrix mlp_rows(const FeatureMatrix& in, std::span<const KernelParams> layers, Activation hidden,
                       Activation output) {
  if (layers.empty()) throw Error("mlp: no layers");
  std::size_t width = in.channels;
  std::size_t widest = width;
  for (const KernelParams& layer : layers) {
    check_dense(layer, width, "mlp");
    width = static_cast<std::size_t>(layer.out_channels());
    widest = std::max(widest, width);
  }
  FeatureMatrix out(in.rows, width);
  Vec a(widest), b(widest);
  for (std::size_t r = 0; r < in.rows; ++r) {
    const auto src = in.row(r);
    std::copy(src.begin(), src.end(), a.begin());
    std::size_t cur = in.channels;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::size_t next = static_cast<std::size_t>(layers[l].out_channels());
      linear_into(std::span<const double>(a.data(), cur), layers[l], std::span<double>(b.data(), next));
      activate(std::span<double>(b.data(), next), l + 1 == layers.size() ? output : hidden);
      std::swap(a, b);
      cur = next;
    }
    auto dst = out.row(r);
    for (std::size_t c = 0; c < width; ++c) dst[c] = static_cast<float>(a[c]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses

namespace {

void check_targets(const ProbabilityTable& pred, std::span<const int> gt) {
  if (pred.rows != gt.size()) throw Error("loss: prediction rows do not match target count");
  for (int g : gt) {
    if (g < 0 || static_cast<std::size_t>(g) >= pred.classes) throw Error("loss: target class out of range");
  }
}

// Lovász extension gradient of the Jaccard loss for a sorted foreground mask.
double lovasz_class_loss(const std::vector<double>& errors_sorted, const std::vector<int>& fg_sorted) {
  const double gts = std::accumulate(fg_sorted.begin(), fg_sorted.end(), 0.0);
  double cum_fg = 0.0;
  double cum_bg = 0.0;
  double prev = 0.0;
  double loss = 0.0;
  for (std::size_t i = 0; i < errors_sorted.size(); ++i) {
    cum_fg += fg_sorted[i];
    cum_bg += 1 - fg_sorted[i];
    const double jaccard = 1.0 - (gts - cum_fg) / (gts + cum_bg);
    loss += errors_sorted[i] * (jaccard - prev);
    prev = jaccard;
  }
  return loss;
}

}  // namespace

LossValue wce_loss(const ProbabilityTable& pred, std::span<const int> gt, std::span<const double> class_weights,
                   std::optional<int> ignore) {
  check_targets(pred, gt);
  if (class_weights.size() < pred.classes) throw Error("wce_loss: too few class weights");
  constexpr double kFloor = 1e-300;
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int c = gt[i];
    if (ignore && c == *ignore) continue;
    const double w = class_weights[static_cast<std::size_t>(c)];
    num -= w * std::log(std::max(pred.row(i)[static_cast<std::size_t>(c)], kFloor));
    den += w;
  }
  if (den == 0.0) return {0.0, true};
  return {num / den, false};
}

LossValue lovasz_softmax_loss(const ProbabilityTable& pred, std::span<const int> gt, std::optional<int> ignore,
                              LovaszClasses mode, std::span<const int> only_classes) {
  check_targets(pred, gt);
  std::vector<std::size_t> valid;
  valid.reserve(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!(ignore && gt[i] == *ignore)) valid.push_back(i);
  }
  if (valid.empty()) return {0.0, true};

  std::vector<int> classes;
  if (!only_classes.empty()) {
    classes.assign(only_classes.begin(), only_classes.end());
  } else {
    for (int c = 0; c < static_cast<int>(pred.classes); ++c) {
      if (ignore && c == *ignore) continue;
      classes.push_back(c);
    }
  }

  std::vector<double> errors(valid.size());
  std::vector<int> fg(valid.size());
  std::vector<std::size_t> order(valid.size());
  std::vector<double> errors_sorted(valid.size());
  std::vector<int> fg_sorted(valid.size());
  double total = 0.0;
  int counted = 0;
  for (int c : classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= pred.classes) throw Error("lovasz: class out of range");
    bool present = false;
    for (std::size_t k = 0; k < valid.size(); ++k) {
      const std::size_t i = valid[k];
      fg[k] = gt[i] == c ? 1 : 0;
      present = present || fg[k] == 1;
      errors[k] = std::abs(fg[k] - pred.row(i)[static_cast<std::size_t>(c)]);
    }
    if (only_classes.empty() && mode == LovaszClasses::kPresent && !present) continue;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return errors[a] > errors[b]; });
    for (std::size_t k = 0; k < order.size(); ++k) {
      errors_sorted[k] = errors[order[k]];
      fg_sorted[k] = fg[order[k]];
    }
    total += lovasz_class_loss(errors_sorted, fg_sorted);
    ++counted;
  }
  if (counted == 0) return {0.0, true};
  return {total / counted, false};
}

double segmentation_loss(const ProbabilityTable& pred, std::span<const int> gt, const LossWeights& w) {
  return w.wce * wce_loss(pred, gt, w.class_weights).value + w.lovasz * lovasz_softmax_loss(pred, gt).value;
}

double combined_loss(const ProbabilityTable& pred_points, std::span<const ProbabilityTable> pred_bev_aux,
                     std::span<const int> gt_points, std::span<const int> gt_bev, const LossWeights& w) {
  if (pred_bev_aux.size() != 3) {
    throw Error("combined_loss: expected 3 auxiliary BEV predictions, got " + std::to_string(pred_bev_aux.size()));
  }
  double aux = 0.0;
  for (const ProbabilityTable& p : pred_bev_aux) aux += segmentation_loss(p, gt_bev, w);
  return segmentation_loss(pred_points, gt_points, w) + w.auxiliary * aux;
}

std::vector<int> to_class_indices(const LabelList& labels) {
  std::vector<int> out(labels.size());
  std::transform(labels.begin(), labels.end(), out.begin(), [](MotionState s) { return static_cast<int>(s); });
  return out;
}

}  // namespace streammos
