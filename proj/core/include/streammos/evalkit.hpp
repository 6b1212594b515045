#pragma once

// Moving-class IoU, synthetic scene generation and the streaming sequence
// runner tying every stage together.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "streammos/memfuse.hpp"
#include "streammos/netpipe.hpp"
#include "streammos/scanio.hpp"
#include "streammos/voting.hpp"

namespace streammos {

// ---------------------------------------------------------------------------
// IoU

struct FrameEval {
  std::int64_t frame_id = 0;
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::optional<double> iou;
  std::map<std::string, double> stage_ms;
};

struct EvalReport {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  /// TP / (TP + FP + FN); undefined when the denominator is zero.
  std::optional<double> iou;
  std::vector<FrameEval> frames;
  std::map<std::string, double> stage_ms;  // summed over frames

  /// Adds a frame's counts and timings and recomputes the IoU.
  void accumulate(const FrameEval& frame);
};

std::optional<double> iou_from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn);

/// Moving-class counts; points whose ground truth is unknown are skipped.
EvalReport iou(const LabelList& pred, const LabelList& gt);
EvalReport iou(const std::vector<MotionLabel>& pred, const std::vector<MotionLabel>& gt);

std::string report_table(const EvalReport& report);
std::string report_json(const EvalReport& report);

// ---------------------------------------------------------------------------
// Synthetic scenes

struct ActorSpec {
  Eigen::Vector3d center{10.0, 0.0, -0.8};  // world frame, at frame 0
  Eigen::Vector3d size{4.0, 2.0, 1.6};
  Eigen::Vector3d velocity{1.0, 0.0, 0.0};  // metres per frame
  std::size_t points_per_frame = 1000;
  bool movable = true;
};

struct SceneSpec {
  std::size_t frames = 20;
  Pose start;
  Eigen::Vector3d sensor_velocity = Eigen::Vector3d::Zero();  // metres per frame, world frame
  double sensor_yaw_rate = 0.0;                               // radians per frame
  std::vector<ActorSpec> actors;
  std::size_t background_points = 2000;
  double background_extent = 40.0;  // half-width of the ground square
  double ground_z = -1.7;
  double wall_fraction = 0.3;       // share of background points on vertical walls
  double noise = 0.0;               // per-coordinate Gaussian sigma, metres
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthFrame {
  PointCloud cloud;  // sensor frame
  std::vector<MotionLabel> gt;
  Pose pose;  // sensor pose in the world frame
};

std::vector<SynthFrame> synth_scene(const SceneSpec& spec);

SceneSpec parse_scene_spec(const std::string& json_text);
SceneSpec load_scene_spec(const std::filesystem::path& path);
std::string scene_spec_json(const SceneSpec& spec);

/// Writes velodyne/*.bin, labels/*.label, poses.txt and an identity calib.txt.
void write_sequence(const std::filesystem::path& dir, const std::vector<SynthFrame>& frames);

// ---------------------------------------------------------------------------
// Streaming runner

struct RuntimeConfig {
  SequenceConfig sequence;
  ModelConfig model;
  VotingConfig voting;
  bool crop = true;
  std::uint64_t seed = 0;

  /// Propagates shared settings (N, crop extent, intensity flag, voxel
  /// origin) from `sequence` into `model` and `voting`, then validates.
  void finalize();
};

struct Frame {
  PointCloud cloud;
  Pose pose;
  std::optional<std::vector<MotionLabel>> gt;
};

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::size_t size() const = 0;
  virtual Frame frame(std::size_t i) const = 0;
};

class KittiFrameSource : public FrameSource {
 public:
  KittiFrameSource(KittiSequence seq, LabelRemap remap);
  std::size_t size() const override { return seq_.size(); }
  Frame frame(std::size_t i) const override;

 private:
  KittiSequence seq_;
  LabelRemap remap_;
  std::vector<Pose> poses_;
};

class SynthFrameSource : public FrameSource {
 public:
  explicit SynthFrameSource(std::vector<SynthFrame> frames) : frames_(std::move(frames)) {}
  std::size_t size() const override { return frames_.size(); }
  Frame frame(std::size_t i) const override;

 private:
  std::vector<SynthFrame> frames_;
};

struct FrameInput {
  std::int64_t frame_id = 0;
  const IndexedCloud& crop;  // cropped current scan plus raw-scan indices
  std::size_t raw_size = 0;
  const Pose& pose;
  const std::vector<MotionLabel>* gt = nullptr;  // aligned with `crop.cloud` when present
};

struct CoarsePrediction {
  LabelList labels;                   // C_t
  std::vector<std::uint8_t> movable;  // O_t as a foreground mask
  std::map<std::string, double> stage_ms;
};

/// Produces the coarse per-point prediction that voting refines.
class CoarsePredictor {
 public:
  virtual ~CoarsePredictor() = default;
  virtual CoarsePrediction predict(const FrameInput& in) = 0;
  /// Scans currently retained for temporal context.
  virtual std::size_t scans_held() const { return 0; }
};

/// The network: sample, ego-compensate N history scans, encode, fuse with the
/// short-term memory and decode.
class NetworkPredictor : public CoarsePredictor {
 public:
  NetworkPredictor(const RuntimeConfig& cfg, const WeightStore& weights);
  CoarsePrediction predict(const FrameInput& in) override;
  std::size_t scans_held() const override { return history_.size(); }
  const ShortTermMemory& short_term_memory() const { return memory_; }

 private:
  struct HeldScan {
    PointCloud cloud;  // sampled, own sensor frame
    Pose pose;
  };

  RuntimeConfig cfg_;
  ModelParams params_;
  ShortTermMemory memory_;
  std::deque<HeldScan> history_;
};

/// Ground truth with a fixed fraction of the static/moving labels flipped,
/// standing in for an imperfect network. Movable mask comes from ground truth.
class OraclePredictor : public CoarsePredictor {
 public:
  OraclePredictor(double flip_fraction, std::uint64_t seed) : flip_fraction_(flip_fraction), seed_(seed) {}
  CoarsePrediction predict(const FrameInput& in) override;

 private:
  double flip_fraction_;
  std::uint64_t seed_;
};

/// Reads per-frame prediction label files; movable mask from the remap when
/// it knows the id, otherwise from the predicted moving state.
class LabelFilePredictor : public CoarsePredictor {
 public:
  LabelFilePredictor(std::filesystem::path dir, LabelRemap remap) : dir_(std::move(dir)), remap_(std::move(remap)) {}
  CoarsePrediction predict(const FrameInput& in) override;

 private:
  std::filesystem::path dir_;
  LabelRemap remap_;
};

/// Flips exactly round(fraction * n) static/moving labels chosen uniformly.
LabelList corrupt_labels(const LabelList& gt, double fraction, std::uint64_t seed);

struct SequenceResult {
  std::vector<LabelList> labels;  // M_t per frame, aligned with the raw scan
  EvalReport report;
  std::size_t max_scans_held = 0;
  std::size_t max_predictions_held = 0;
};

struct RunOptions {
  std::optional<std::filesystem::path> label_dir;  // write NNNNNN.label per frame
  bool keep_labels = true;
};

/// Streaming loop implementing one refined prediction per frame.
SequenceResult run_sequence(const FrameSource& source, const RuntimeConfig& cfg, CoarsePredictor& predictor,
                            const RunOptions& options = {});

/// Labels for every raw-scan point: cropped points take `cropped_labels`
/// through `crop.source_index`; the rest are unknown.
LabelList expand_labels(std::size_t raw_size, const IndexedCloud& crop, const LabelList& cropped_labels);

}  // namespace streammos
