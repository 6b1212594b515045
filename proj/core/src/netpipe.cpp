#include "streammos/netpipe.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace streammos {

namespace fs = std::filesystem;

namespace {

constexpr int kMveBlocks = 2;
constexpr char kMagic[8] = {'S', 'M', 'O', 'S', 'W', 'G', 'T', '1'};

std::string mve_name(int block, const char* layer) { return "mve" + std::to_string(block) + "." + layer; }

}  // namespace

// ---------------------------------------------------------------------------
// ModelConfig

std::vector<BevConfig> ModelConfig::stage_bev() const {
  std::vector<BevConfig> out;
  for (int s = 0; s <= mve_blocks + 1; ++s) out.push_back(bev.downsampled(1 << s));
  return out;
}

RangeConfig ModelConfig::block_range(int block) const {
  return shrink_range_per_block ? range.downsampled_width(1 << block) : range;
}

void ModelConfig::validate() const {
  if (channels <= 0) throw Error("model: channel width must be positive");
  if (history_frames < 0) throw Error("model: history frame count must be >= 0");
  if (mve_blocks != kMveBlocks) throw Error("model: the decoder expects exactly 2 MVE blocks");
  bev.validate();
  range.validate();
  const int total = 1 << (mve_blocks + 1);
  if (bev.width % total != 0 || bev.height % total != 0) {
    throw Error("model: BEV size " + std::to_string(bev.width) + "x" + std::to_string(bev.height) +
                " must be divisible by " + std::to_string(total));
  }
  if (shrink_range_per_block && range.width % (1 << (mve_blocks - 1)) != 0) {
    throw Error("model: range width must be divisible by " + std::to_string(1 << (mve_blocks - 1)));
  }
  if (acb_short <= 0 || acb_long <= 0 || acb_short % 2 == 0 || acb_long % 2 == 0) {
    throw Error("model: ACB kernel sizes must be positive and odd");
  }
  if (attention_heads <= 0 || attention_points <= 0 || channels % attention_heads != 0) {
    throw Error("model: channel width must be divisible by the attention head count");
  }
  if (decoder_hidden <= 0) throw Error("model: decoder hidden width must be positive");
}

std::vector<LayerSpec> declare_layers(const ModelConfig& cfg) {
  cfg.validate();
  const int c = cfg.channels;
  const int s = cfg.acb_short;
  const int l = cfg.acb_long;
  std::vector<LayerSpec> out;
  auto conv = [&](std::string name, int kh, int kw, int cin, int cout) {
    out.push_back({std::move(name), {kh, kw, cin, cout}});
  };
  auto dense = [&](std::string name, int o, int i) { out.push_back({std::move(name), {o, i}}); };
  auto norm = [&](std::string name, int n) { out.push_back({std::move(name), {n}}); };

  dense("point.0", c, cfg.input_dims());
  dense("point.1", c, c);
  for (int b = 0; b < cfg.mve_blocks; ++b) {
    conv(mve_name(b, "down"), 3, 3, b == 0 ? cfg.frames() * c : c, c);
    conv(mve_name(b, "acb.h"), s, l, c, c);
    conv(mve_name(b, "acb.v"), l, s, c, c);
    conv(mve_name(b, "acb.fuse"), 3, 3, 2 * c, c);
    conv(mve_name(b, "rv.0"), 3, 3, c, c);
    conv(mve_name(b, "rv.1"), 3, 3, c, c);
    conv(mve_name(b, "fuse"), 1, 1, 2 * c, c);
  }
  conv("bev.down", 3, 3, c, c);
  conv("bev.acb.h", s, l, c, c);
  conv("bev.acb.v", l, s, c, c);
  conv("bev.acb.fuse", 3, 3, 2 * c, c);
  const int lk = cfg.attention_heads * cfg.attention_points;
  dense("attn.weight", lk, c);
  dense("attn.offset", 2 * lk, c);
  dense("attn.output", c, c);
  norm("attn.norm1", c);
  dense("attn.ffn.0", 2 * c, c);
  dense("attn.ffn.1", c, 2 * c);
  norm("attn.norm2", c);
  for (int i = 0; i < 3; ++i) conv("aux." + std::to_string(i), 1, 1, c, 3);
  dense("head.motion.0", cfg.decoder_hidden, cfg.decoder_input_channels());
  dense("head.motion.1", 3, cfg.decoder_hidden);
  dense("head.movable.0", cfg.decoder_hidden, cfg.decoder_input_channels());
  dense("head.movable.1", 2, cfg.decoder_hidden);
  return out;
}

// ---------------------------------------------------------------------------
// WeightStore

const KernelParams& WeightStore::at(const std::string& name) const {
  auto it = layers.find(name);
  if (it == layers.end()) throw Error("weight store is missing layer '" + name + "'");
  return it->second;
}

bool WeightStore::operator==(const WeightStore& o) const {
  if (version != o.version || seed != o.seed || layers.size() != o.layers.size()) return false;
  for (auto a = layers.begin(), b = o.layers.begin(); a != layers.end(); ++a, ++b) {
    if (a->first != b->first || a->second.shape != b->second.shape) return false;
    // Bitwise comparison so that NaN payloads and signed zeros round-trip too.
    if (a->second.weights.size() != b->second.weights.size() || a->second.bias.size() != b->second.bias.size()) {
      return false;
    }
    if (std::memcmp(a->second.weights.data(), b->second.weights.data(), a->second.weights.size() * sizeof(float)) ||
        std::memcmp(a->second.bias.data(), b->second.bias.data(), a->second.bias.size() * sizeof(float))) {
      return false;
    }
  }
  return true;
}

namespace {

KernelParams empty_layer(const LayerSpec& spec) {
  if (spec.shape.size() == 4) return KernelParams::conv(spec.shape[0], spec.shape[1], spec.shape[2], spec.shape[3]);
  if (spec.shape.size() == 2) return KernelParams::dense(spec.shape[0], spec.shape[1]);
  return KernelParams::norm(spec.shape[0]);
}

}  // namespace

WeightStore init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  WeightStore store;
  store.seed = seed;
  std::mt19937_64 rng(seed);
  for (const LayerSpec& spec : declare_layers(cfg)) {
    KernelParams k = empty_layer(spec);
    if (!k.is_norm()) {
      const float bound = 1.0f / std::sqrt(static_cast<float>(k.fan_in()));
      std::uniform_real_distribution<float> dist(-bound, bound);
      for (float& w : k.weights) w = dist(rng);
    }
    store.layers.emplace(spec.name, std::move(k));
  }
  return store;
}

WeightStore zero_weights(const ModelConfig& cfg) {
  WeightStore store;
  for (const LayerSpec& spec : declare_layers(cfg)) {
    KernelParams k = empty_layer(spec);
    std::fill(k.weights.begin(), k.weights.end(), 0.0f);
    store.layers.emplace(spec.name, std::move(k));
  }
  return store;
}

namespace {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  std::vector<char> take() { return std::move(bytes_); }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<char>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error("weight file truncated");
  }
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<char> serialize_weights(const WeightStore& store) {
  ByteWriter w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(store.version);
  w.u64(store.seed);
  w.u32(static_cast<std::uint32_t>(store.layers.size()));
  for (const auto& [name, k] : store.layers) {
    k.validate(name);
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(k.shape.size()));
    for (int d : k.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : k.weights) w.f32(v);
    for (float v : k.bias) w.f32(v);
  }
  return w.take();
}

WeightStore deserialize_weights(const std::vector<char>& bytes) {
  ByteReader r(bytes);
  if (r.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) throw Error("weight file: bad magic");
  WeightStore store;
  store.version = r.u32();
  if (store.version != WeightStore::kFormatVersion) {
    throw Error("weight file: unsupported version " + std::to_string(store.version));
  }
  store.seed = r.u64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    if (name_len == 0 || name_len > 4096) throw Error("weight file: corrupt layer name length");
    std::string name = r.str(name_len);
    const std::uint32_t rank = r.u32();
    if (rank != 1 && rank != 2 && rank != 4) throw Error("weight file: layer '" + name + "' has bad rank");
    KernelParams k;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32();
      if (dim == 0 || dim > (1u << 24)) throw Error("weight file: layer '" + name + "' has bad dimension");
      k.shape.push_back(static_cast<int>(dim));
      n *= dim;
    }
    if (n > r.remaining() / 4) throw Error("weight file truncated");
    k.weights.resize(n);
    for (float& v : k.weights) v = r.f32();
    k.bias.resize(static_cast<std::size_t>(k.out_channels()));
    for (float& v : k.bias) v = r.f32();
    if (!store.layers.emplace(std::move(name), std::move(k)).second) throw Error("weight file: duplicate layer");
  }
  if (!r.done()) throw Error("weight file: trailing bytes after last layer");
  return store;
}

void save_weights(const WeightStore& store, const fs::path& path) {
  const std::vector<char> bytes = serialize_weights(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

WeightStore load_weights(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw Error("cannot open weight file " + path.string());
  const std::streamsize size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<char> bytes(static_cast<std::size_t>(size));
  if (size > 0 && !in.read(bytes.data(), size)) throw Error("short read on " + path.string());
  return deserialize_weights(bytes);
}

// ---------------------------------------------------------------------------
// ModelParams

ModelParams ModelParams::bind(const ModelConfig& cfg, const WeightStore& store) {
  for (const LayerSpec& spec : declare_layers(cfg)) {
    const KernelParams& k = store.at(spec.name);
    if (k.shape != spec.shape) throw Error("layer '" + spec.name + "' has the wrong shape for this config");
    k.validate(spec.name);
  }
  ModelParams p;
  p.point = {store.at("point.0"), store.at("point.1")};
  for (int b = 0; b < cfg.mve_blocks; ++b) {
    MveParams m;
    m.down = store.at(mve_name(b, "down"));
    m.acb = {store.at(mve_name(b, "acb.h")), store.at(mve_name(b, "acb.v")), store.at(mve_name(b, "acb.fuse"))};
    m.rv0 = store.at(mve_name(b, "rv.0"));
    m.rv1 = store.at(mve_name(b, "rv.1"));
    m.fuse = store.at(mve_name(b, "fuse"));
    p.mve.push_back(std::move(m));
  }
  p.bev_down = store.at("bev.down");
  p.bev_acb = {store.at("bev.acb.h"), store.at("bev.acb.v"), store.at("bev.acb.fuse")};
  AttentionParams& a = p.attention;
  a.heads = cfg.attention_heads;
  a.points = cfg.attention_points;
  a.weight_head = store.at("attn.weight");
  a.offset_head = store.at("attn.offset");
  a.output = store.at("attn.output");
  a.norm1_gain = store.at("attn.norm1").weights;
  a.norm1_bias = store.at("attn.norm1").bias;
  a.ffn = {store.at("attn.ffn.0"), store.at("attn.ffn.1")};
  a.norm2_gain = store.at("attn.norm2").weights;
  a.norm2_bias = store.at("attn.norm2").bias;
  for (int i = 0; i < 3; ++i) p.aux[static_cast<std::size_t>(i)] = store.at("aux." + std::to_string(i));
  p.motion_head = {store.at("head.motion.0"), store.at("head.motion.1")};
  p.movable_head = {store.at("head.movable.0"), store.at("head.movable.1")};
  return p;
}

// ---------------------------------------------------------------------------
// Forward

FeatureMatrix point_inputs(const PointCloud& cloud, const ModelConfig& cfg) {
  const int dims = cfg.input_dims();
  if (cfg.use_intensity && !cloud.has_intensity()) throw Error("model uses intensity but the cloud has none");
  FeatureMatrix in(cloud.size(), static_cast<std::size_t>(dims));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto row = in.row(i);
    row[0] = static_cast<float>(cloud.points[i].x());
    row[1] = static_cast<float>(cloud.points[i].y());
    row[2] = static_cast<float>(cloud.points[i].z());
    if (dims == 4) row[3] = cloud.intensity[i];
  }
  return in;
}

std::vector<FeatureMatrix> pointwise_encode(const std::vector<PointCloud>& clouds, const ModelParams& params,
                                            const ModelConfig& cfg) {
  std::vector<FeatureMatrix> out;
  out.reserve(clouds.size());
  for (const PointCloud& cloud : clouds) {
    if (cloud.size() != clouds.front().size()) {
      throw Error("pointwise_encode: frames hold different point counts (" + std::to_string(cloud.size()) +
                  " vs " + std::to_string(clouds.front().size()) + ")");
    }
    out.push_back(mlp_rows(point_inputs(cloud, cfg), params.point));
  }
  return out;
}

FeatureMap assemble_bev(const std::vector<FeatureMatrix>& features, const std::vector<PointCloud>& clouds,
                        const BevConfig& bev) {
  if (features.empty() || features.size() != clouds.size()) {
    throw Error("assemble_bev: need one feature set per cloud");
  }
  std::vector<Tensor2D> grids;
  grids.reserve(features.size());
  std::vector<std::uint8_t> occupancy(static_cast<std::size_t>(bev.width) * static_cast<std::size_t>(bev.height), 0);
  for (std::size_t f = 0; f < features.size(); ++f) {
    if (features[f].rows != clouds[f].size()) throw Error("assemble_bev: feature rows do not match cloud size");
    FeatureMap m = scatter_max(features[f], bev_index(clouds[f], bev));
    for (std::size_t i = 0; i < occupancy.size(); ++i) occupancy[i] |= m.occupancy[i];
    grids.push_back(std::move(m.grid));
  }
  std::vector<const Tensor2D*> parts;
  for (const Tensor2D& g : grids) parts.push_back(&g);
  return FeatureMap{concat_channels(parts), bev, std::move(occupancy)};
}

CarrierIndex make_carrier_index(const PointCloud& carrier, const BevConfig& bev, const RangeConfig& range) {
  CarrierIndex idx{bev_index(carrier, bev), range_index(carrier, range)};
  for (std::size_t i = 0; i < carrier.size(); ++i) {
    const std::uint8_t both = idx.bev.valid[i] & idx.range.valid[i];
    idx.bev.valid[i] = both;
    idx.range.valid[i] = both;
  }
  return idx;
}

Tensor2D mve_forward(const Tensor2D& g, const CarrierIndex& carrier, const MveParams& params, MveTrace* trace) {
  Tensor2D down = conv2d(g, params.down, 2, Padding(1));
  relu_inplace(down);
  Tensor2D bev_branch = acb(down, params.acb);
  relu_inplace(bev_branch);
  if (bev_branch.height != carrier.bev.height() || bev_branch.width != carrier.bev.width()) {
    throw Error("mve_forward: BEV branch size does not match the carrier index");
  }

  // B2P then P2R.
  const FeatureMap range_in = scatter_max(gather_bilinear(bev_branch, carrier.bev), carrier.range);
  Tensor2D range_branch = conv2d(range_in.grid, params.rv0, 1, Padding::same(params.rv0));
  relu_inplace(range_branch);
  range_branch = conv2d(range_branch, params.rv1, 1, Padding::same(params.rv1));
  relu_inplace(range_branch);

  // R2P then P2B.
  FeatureMap back = scatter_max(gather_bilinear(range_branch, carrier.range), carrier.bev);

  Tensor2D out = conv2d(concat_channels(bev_branch, back.grid), params.fuse, 1, Padding(0));
  relu_inplace(out);
  if (trace) {
    trace->bev_branch = std::move(bev_branch);
    trace->range_branch = std::move(range_branch);
    trace->back_projected = std::move(back.grid);
  }
  return out;
}

EncoderOutput encoder_forward(const std::vector<PointCloud>& clouds, const ModelParams& params,
                              const ModelConfig& cfg) {
  cfg.validate();
  if (clouds.size() != static_cast<std::size_t>(cfg.frames())) {
    throw Error("encoder_forward: expected " + std::to_string(cfg.frames()) + " clouds, got " +
                std::to_string(clouds.size()));
  }
  const std::vector<BevConfig> stages = cfg.stage_bev();
  std::vector<FeatureMatrix> feats = pointwise_encode(clouds, params, cfg);
  const FeatureMap g0 = assemble_bev(feats, clouds, stages[0]);

  EncoderOutput out;
  Tensor2D cur = g0.grid;
  for (int b = 0; b < cfg.mve_blocks; ++b) {
    const CarrierIndex carrier =
        make_carrier_index(clouds.back(), stages[static_cast<std::size_t>(b + 1)], cfg.block_range(b));
    cur = mve_forward(cur, carrier, params.mve[static_cast<std::size_t>(b)]);
    FeatureMap stage{cur, stages[static_cast<std::size_t>(b + 1)], {}};
    (b == 0 ? out.g1 : out.g2) = std::move(stage);
  }
  Tensor2D f = conv2d(cur, params.bev_down, 2, Padding(1));
  relu_inplace(f);
  f = acb(f, params.bev_acb);
  relu_inplace(f);
  out.f_t = FeatureMap{std::move(f), stages.back(), {}};
  out.current_point_features = std::move(feats.back());
  return out;
}

FeatureMatrix decoder_point_features(const std::array<Tensor2D, 3>& resized, const FeatureMatrix& e_t,
                                     const ProjectionIndex& index) {
  if (e_t.rows != index.size()) throw Error("decode: point feature rows do not match point count");
  std::size_t width = e_t.channels;
  for (const Tensor2D& m : resized) width += static_cast<std::size_t>(m.channels);
  FeatureMatrix out(index.size(), width);
  std::size_t at = 0;
  for (const Tensor2D& m : resized) {
    const FeatureMatrix g = gather_bilinear(m, index);
    for (std::size_t i = 0; i < index.size(); ++i) {
      const auto src = g.row(i);
      std::copy(src.begin(), src.end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(at));
    }
    at += g.channels;
  }
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto src = e_t.row(i);
    std::copy(src.begin(), src.end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(at));
  }
  return out;
}

namespace {

ProbabilityTable softmax_rows(const FeatureMatrix& logits) {
  ProbabilityTable p(logits.rows, logits.channels);
  Vec row(logits.channels);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const auto src = logits.row(i);
    std::copy(src.begin(), src.end(), row.begin());
    const Vec s = softmax(row);
    std::copy(s.begin(), s.end(), p.row(i).begin());
  }
  return p;
}

}  // namespace

DecoderOutput decode(const FeatureMap& g1, const FeatureMap& g2, const FeatureMap& h_t, const FeatureMatrix& e_t,
                     const PointCloud& cloud, const ModelParams& params, const ModelConfig& cfg) {
  const BevConfig target = cfg.decoder_bev();
  if (e_t.rows != cloud.size()) throw Error("decode: E_t rows do not match cloud size");
  const FeatureMap* sources[] = {&g1, &g2, &h_t};
  std::array<Tensor2D, 3> resized;
  DecoderOutput out;
  for (std::size_t i = 0; i < 3; ++i) {
    if (sources[i]->grid.channels != cfg.channels) throw Error("decode: feature map channel mismatch");
    resized[i] = resize_bilinear(sources[i]->grid, target.height, target.width);
    Tensor2D logits = conv2d(resized[i], params.aux[i], 1, Padding(0));
    Vec cell(3);
    for (std::size_t c = 0; c < logits.cells(); ++c) {
      float* px = logits.data.data() + c * 3;
      std::copy(px, px + 3, cell.begin());
      const Vec s = softmax(cell);
      for (int k = 0; k < 3; ++k) px[k] = static_cast<float>(s[static_cast<std::size_t>(k)]);
    }
    out.aux[i] = FeatureMap{std::move(logits), target, {}};
  }
  const FeatureMatrix feats = decoder_point_features(resized, e_t, bev_index(cloud, target));
  out.motion = softmax_rows(mlp_rows(feats, params.motion_head));
  out.movable = softmax_rows(mlp_rows(feats, params.movable_head));
  return out;
}

LabelList motion_labels(const ProbabilityTable& motion) {
  LabelList out(motion.rows);
  for (std::size_t i = 0; i < motion.rows; ++i) {
    const auto r = motion.row(i);
    const auto best = std::max_element(r.begin(), r.end()) - r.begin();
    out[i] = static_cast<MotionState>(best);
  }
  return out;
}

std::vector<std::uint8_t> movable_mask(const ProbabilityTable& movable) {
  std::vector<std::uint8_t> out(movable.rows);
  for (std::size_t i = 0; i < movable.rows; ++i) {
    const auto r = movable.row(i);
    out[i] = r[1] > r[0] ? 1 : 0;
  }
  return out;
}

}  // namespace streammos
