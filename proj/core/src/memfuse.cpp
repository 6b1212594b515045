#include "streammos/memfuse.hpp"

#include <string>

namespace streammos {

namespace {

void check_norm(const std::vector<float>& gain, const std::vector<float>& bias, int c, const char* name) {
  if (gain.size() != static_cast<std::size_t>(c) || bias.size() != static_cast<std::size_t>(c)) {
    throw Error(std::string("attention: ") + name + " gain/bias length must equal channel count");
  }
}

void check_dense(const KernelParams& k, int out, int in, const char* name) {
  k.validate(name);
  if (!k.is_dense() || k.out_channels() != out || k.in_channels() != in) {
    throw Error(std::string("attention: ") + name + " must be dense " + std::to_string(out) + "x" +
                std::to_string(in));
  }
}

Vec cell_vector(const Tensor2D& t, int y, int x) {
  const auto px = t.pixel(y, x);
  return Vec(px.begin(), px.end());
}

}  // namespace

void AttentionParams::validate(int c) const {
  if (heads <= 0 || points <= 0) throw Error("attention: heads and points must be positive");
  if (c % heads != 0) throw Error("attention: channel count must be divisible by the head count");
  check_dense(weight_head, heads * points, c, "weight_head");
  check_dense(offset_head, heads * points * 2, c, "offset_head");
  check_dense(output, c, c, "output");
  check_norm(norm1_gain, norm1_bias, c, "norm1");
  check_norm(norm2_gain, norm2_bias, c, "norm2");
  if (ffn.size() != 2) throw Error("attention: FFN must have two layers");
  check_dense(ffn[0], 2 * c, c, "ffn.0");
  check_dense(ffn[1], c, 2 * c, "ffn.1");
}

AttentionParams AttentionParams::identity(int c, int heads, int points) {
  AttentionParams p;
  p.heads = heads;
  p.points = points;
  p.weight_head = KernelParams::dense(heads * points, c);
  p.offset_head = KernelParams::dense(heads * points * 2, c);
  p.output = KernelParams::dense(c, c);
  for (int i = 0; i < c; ++i) p.output.dense_weight(i, i) = 1.0f;
  p.norm1_gain.assign(static_cast<std::size_t>(c), 1.0f);
  p.norm1_bias.assign(static_cast<std::size_t>(c), 0.0f);
  p.norm2_gain.assign(static_cast<std::size_t>(c), 1.0f);
  p.norm2_bias.assign(static_cast<std::size_t>(c), 0.0f);
  p.ffn = {KernelParams::dense(2 * c, c), KernelParams::dense(c, 2 * c)};
  return p;
}

CellAttention attention_at(std::span<const double> query, const AttentionParams& params) {
  CellAttention out;
  const Vec logits = linear(query, params.weight_head);
  out.weights.resize(logits.size());
  const auto k = static_cast<std::size_t>(params.points);
  for (std::size_t l = 0; l < static_cast<std::size_t>(params.heads); ++l) {
    const Vec w = softmax(std::span<const double>(logits.data() + l * k, k));
    std::copy(w.begin(), w.end(), out.weights.begin() + static_cast<std::ptrdiff_t>(l * k));
  }
  out.offsets = linear(query, params.offset_head);
  return out;
}

FeatureMap deform_attend(const FeatureMap& h_prev, const FeatureMap& f_t, const AttentionParams& params) {
  if (!h_prev.same_geometry(f_t)) throw Error("deform_attend: memory and current feature geometry differ");
  const int c = f_t.grid.channels;
  params.validate(c);
  const int heads = params.heads;
  const int points = params.points;
  const int head_c = c / heads;

  FeatureMap out{Tensor2D(f_t.grid.height, f_t.grid.width, c), f_t.geometry, {}};
  std::vector<float> sample(static_cast<std::size_t>(c));
  Vec aggregate(static_cast<std::size_t>(c));
  for (int y = 0; y < f_t.grid.height; ++y) {
    for (int x = 0; x < f_t.grid.width; ++x) {
      const Vec query = cell_vector(h_prev.grid, y, x);
      const CellAttention att = attention_at(query, params);
      std::fill(aggregate.begin(), aggregate.end(), 0.0);
      for (int l = 0; l < heads; ++l) {
        for (int k = 0; k < points; ++k) {
          const std::size_t lk = static_cast<std::size_t>(l * points + k);
          const double du = att.offsets[2 * lk];
          const double dv = att.offsets[2 * lk + 1];
          bilinear_sample_into(f_t.grid, x + du, y + dv, sample);
          const double a = att.weights[lk];
          for (int ch = l * head_c; ch < (l + 1) * head_c; ++ch) {
            aggregate[static_cast<std::size_t>(ch)] += a * sample[static_cast<std::size_t>(ch)];
          }
        }
      }
      const Vec mixed = linear(aggregate, params.output);
      auto dst = out.grid.pixel(y, x);
      for (int ch = 0; ch < c; ++ch) dst[static_cast<std::size_t>(ch)] = static_cast<float>(mixed[static_cast<std::size_t>(ch)]);
    }
  }
  return out;
}

FeatureMap fuse_update(const FeatureMap& h_hat, const FeatureMap& h_prev, const AttentionParams& params) {
  if (!h_hat.same_geometry(h_prev)) throw Error("fuse_update: geometry mismatch");
  const int c = h_hat.grid.channels;
  params.validate(c);
  FeatureMap out{Tensor2D(h_hat.grid.height, h_hat.grid.width, c), h_hat.geometry, {}};
  Vec sum(static_cast<std::size_t>(c));
  for (int y = 0; y < h_hat.grid.height; ++y) {
    for (int x = 0; x < h_hat.grid.width; ++x) {
      const auto a = h_hat.grid.pixel(y, x);
      const auto b = h_prev.grid.pixel(y, x);
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = static_cast<double>(a[i]) + b[i];
      const Vec tilde = layer_norm(sum, params.norm1_gain, params.norm1_bias);
      Vec ffn = mlp(tilde, params.ffn, Activation::kRelu, Activation::kNone);
      for (std::size_t i = 0; i < ffn.size(); ++i) ffn[i] += tilde[i];
      const Vec h = layer_norm(ffn, params.norm2_gain, params.norm2_bias);
      auto dst = out.grid.pixel(y, x);
      for (std::size_t i = 0; i < h.size(); ++i) dst[i] = static_cast<float>(h[i]);
    }
  }
  return out;
}

MemoryStep step_memory(const ShortTermMemory& state, const FeatureMap& f_t, std::int64_t frame_id,
                       const AttentionParams& params) {
  MemoryStep step;
  if (state.empty() || !state.feature->same_geometry(f_t)) {
    step.fused = f_t;
    step.cold_start = true;
  } else {
    const FeatureMap h_hat = deform_attend(*state.feature, f_t, params);
    step.fused = fuse_update(h_hat, *state.feature, params);
  }
  step.fused.occupancy.clear();
  step.memory.feature = step.fused;
  step.memory.frame_id = frame_id;
  return step;
}

}  // namespace streammos
