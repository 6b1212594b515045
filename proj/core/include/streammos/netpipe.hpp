#pragma once

// Encoder / decoder network and weight persistence.
//
//   points --shared MLP--> E_n --P2B, concat--> G^0 (N+1)C
//   G^0 --MVE--> G^1 --MVE--> G^2 --BEV encoder--> F_t
//   F_t --short-term memory--> H_t
//   {G^1, G^2, H_t} --resize to H^b/2--> aux heads + B2P --[.., E_t]--> MLP_1 / MLP_2
//
// One MVE block: stride-2 conv, ACB (G^b), B2P + P2R into the range image,
// two 3x3 convs (G^r), R2P + P2B back to BEV, concat with G^b, 1x1 conv.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "streammos/gridproj.hpp"
#include "streammos/memfuse.hpp"
#include "streammos/numkern.hpp"

namespace streammos {

struct ModelConfig {
  int channels = 32;  // C
  int history_frames = 3;  // N
  bool use_intensity = false;
  BevConfig bev;
  RangeConfig range;
  int mve_blocks = 2;
  int acb_short = 3;
  int acb_long = 5;
  int attention_heads = 4;   // L
  int attention_points = 4;  // K
  int decoder_hidden = 32;
  /// When set, the range image of MVE block l has width W^r / 2^l.
  bool shrink_range_per_block = true;

  int input_dims() const { return use_intensity ? 4 : 3; }
  int frames() const { return history_frames + 1; }
  /// BEV grid of each encoder stage: index 0 is G^0, then one per MVE block,
  /// then the BEV-view encoder output (F_t).
  std::vector<BevConfig> stage_bev() const;
  RangeConfig block_range(int block) const;
  BevConfig decoder_bev() const { return bev.downsampled(2); }
  /// Point feature width fed to the decoder MLPs: three resized maps plus E_t.
  int decoder_input_channels() const { return 4 * channels; }
  void validate() const;
};

struct LayerSpec {
  std::string name;
  std::vector<int> shape;  // conv {kh,kw,cin,cout}, dense {out,in}, norm {C}
};

/// Every layer a configuration needs, in a stable order.
std::vector<LayerSpec> declare_layers(const ModelConfig& cfg);

struct WeightStore {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::map<std::string, KernelParams> layers;
  std::uint32_t version = kFormatVersion;
  std::uint64_t seed = 0;

  const KernelParams& at(const std::string& name) const;
  bool operator==(const WeightStore& o) const;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit norm
/// gains. Same config and seed give an identical store.
WeightStore init_weights(const ModelConfig& cfg, std::uint64_t seed);
/// Every weight and bias zero (norm gains included).
WeightStore zero_weights(const ModelConfig& cfg);

/// Layout: "SMOSWGT1" magic, u32 version, u64 seed, u32 layer count, then per
/// layer: u32 name length, name bytes, u32 rank, rank x u32 dims, f32 weights
/// followed by f32 bias. All integers and floats little-endian.
void save_weights(const WeightStore& store, const std::filesystem::path& path);
WeightStore load_weights(const std::filesystem::path& path);
std::vector<char> serialize_weights(const WeightStore& store);
WeightStore deserialize_weights(const std::vector<char>& bytes);

struct MveParams {
  KernelParams down;
  AcbParams acb;
  KernelParams rv0;
  KernelParams rv1;
  KernelParams fuse;
};

/// Typed view of a WeightStore for one ModelConfig.
struct ModelParams {
  std::vector<KernelParams> point;
  std::vector<MveParams> mve;
  KernelParams bev_down;
  AcbParams bev_acb;
  AttentionParams attention;
  std::array<KernelParams, 3> aux;
  std::vector<KernelParams> motion_head;
  std::vector<KernelParams> movable_head;

  /// Throws Error when a declared layer is missing or mis-shaped.
  static ModelParams bind(const ModelConfig& cfg, const WeightStore& store);
};

/// Raw per-point inputs (x, y, z[, intensity]).
FeatureMatrix point_inputs(const PointCloud& cloud, const ModelConfig& cfg);

/// Shared point-wise MLP applied to every cloud; all clouds must hold the same
/// number of points.
std::vector<FeatureMatrix> pointwise_encode(const std::vector<PointCloud>& clouds, const ModelParams& params,
                                            const ModelConfig& cfg);

/// Per-frame P2B scatter_max, concatenated along channels in input order
/// (oldest frame first).
FeatureMap assemble_bev(const std::vector<FeatureMatrix>& features, const std::vector<PointCloud>& clouds,
                        const BevConfig& bev);

/// Projection of the carrier points into one MVE block's grids.
/// Only points valid in both views are kept valid.
struct CarrierIndex {
  ProjectionIndex bev;    // at the block's output resolution
  ProjectionIndex range;  // the block's range image
};

CarrierIndex make_carrier_index(const PointCloud& carrier, const BevConfig& bev, const RangeConfig& range);

struct MveTrace {
  Tensor2D bev_branch;    // G^b
  Tensor2D range_branch;  // G^r
  Tensor2D back_projected;
};

Tensor2D mve_forward(const Tensor2D& g, const CarrierIndex& carrier, const MveParams& params,
                     MveTrace* trace = nullptr);

struct EncoderOutput {
  FeatureMap f_t;
  FeatureMap g1;
  FeatureMap g2;
  FeatureMatrix current_point_features;  // E_t of the last cloud
};

/// `clouds` are N+1 ego-compensated, equally sized clouds, oldest first; the
/// last one is the current frame and carries the BEV<->RV cascade.
EncoderOutput encoder_forward(const std::vector<PointCloud>& clouds, const ModelParams& params,
                              const ModelConfig& cfg);

struct DecoderOutput {
  ProbabilityTable motion;   // n x 3: unknown, static, moving
  ProbabilityTable movable;  // n x 2: background, movable
  std::array<FeatureMap, 3> aux;  // per-cell 3-class probabilities at H^b/2
};

/// Channel layout [G^1 | G^2 | H_t | E_t] at the given points.
FeatureMatrix decoder_point_features(const std::array<Tensor2D, 3>& resized, const FeatureMatrix& e_t,
                                     const ProjectionIndex& index);

DecoderOutput decode(const FeatureMap& g1, const FeatureMap& g2, const FeatureMap& h_t, const FeatureMatrix& e_t,
                     const PointCloud& cloud, const ModelParams& params, const ModelConfig& cfg);

LabelList motion_labels(const ProbabilityTable& motion);
std::vector<std::uint8_t> movable_mask(const ProbabilityTable& movable);

}  // namespace streammos
