#pragma once

// Short-term memory and deformable-attention temporal fusion.
//
// The previous fused feature H_{t-1} queries the current encoder feature F_t:
// every cell predicts K sampling offsets and K attention weights per head,
// samples F_t bilinearly around its own centre, and the head aggregates are
// mixed by an output projection. A residual layer-norm / FFN stage produces
// the new memory H_t.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "streammos/gridproj.hpp"
#include "streammos/numkern.hpp"

namespace streammos {

struct AttentionParams {
  int heads = 4;   // L
  int points = 4;  // K

  /// C -> L*K logits, softmaxed over K within each head.
  KernelParams weight_head;
  /// C -> L*K*2 offsets in cell units, ordered (head, point, {du, dv}).
  KernelParams offset_head;
  /// C -> C. Its input is the concatenation of the L head aggregates; head l
  /// aggregates channels [l*C/L, (l+1)*C/L) of the sampled values, so the
  /// column block of head l is that head's W_l.
  KernelParams output;

  std::vector<float> norm1_gain, norm1_bias;
  std::vector<KernelParams> ffn;  // C -> 2C -> C, ReLU between
  std::vector<float> norm2_gain, norm2_bias;

  int channels() const { return output.out_channels(); }
  /// Throws Error when shapes disagree with `channels`, heads and points.
  void validate(int channels) const;

  /// Zero offsets, zero logits, identity output projection, identity-like
  /// norms and a zero FFN.
  static AttentionParams identity(int channels, int heads, int points);
};

struct CellAttention {
  Vec weights;  // L*K, each head's K entries sum to 1
  Vec offsets;  // L*K*2
};

CellAttention attention_at(std::span<const double> query, const AttentionParams& params);

/// Deformable attention evaluated at every cell of H_prev. Reference points are the
/// query cell's own centre; sampling positions are clamped to the map.
FeatureMap deform_attend(const FeatureMap& h_prev, const FeatureMap& f_t, const AttentionParams& params);

/// H~ = LN(H^ + H_prev); H = LN(FFN(H~) + H~), per cell.
FeatureMap fuse_update(const FeatureMap& h_hat, const FeatureMap& h_prev, const AttentionParams& params);

struct ShortTermMemory {
  std::optional<FeatureMap> feature;
  std::int64_t frame_id = -1;

  bool empty() const { return !feature.has_value(); }
};

struct MemoryStep {
  FeatureMap fused;
  ShortTermMemory memory;
  bool cold_start = false;
};

/// Cold start (empty memory, or memory from a different geometry) passes F_t
/// through and seeds the memory with it.
MemoryStep step_memory(const ShortTermMemory& state, const FeatureMap& f_t, std::int64_t frame_id,
                       const AttentionParams& params);

}  // namespace streammos
