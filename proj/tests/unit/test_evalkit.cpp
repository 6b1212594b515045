#include <gtest/gtest.h>

#include "json.hpp"

#include "oracles/oracles.hpp"
#include "streammos/evalkit.hpp"

using namespace streammos;

namespace {

constexpr MotionState S = MotionState::kStatic;
constexpr MotionState M = MotionState::kMoving;
constexpr MotionState U = MotionState::kUnknown;

RuntimeConfig small_runtime() {
  RuntimeConfig r;
  r.sequence.crop.min = Eigen::Vector3d(-16, -16, -4);
  r.sequence.crop.max = Eigen::Vector3d(16, 16, 2);
  r.sequence.target_points = 800;
  r.sequence.history_frames = 2;
  r.model.channels = 4;
  r.model.bev.width = 32;
  r.model.bev.height = 32;
  r.model.range.width = 64;
  r.model.range.height = 16;
  r.model.attention_heads = 2;
  r.model.attention_points = 2;
  r.model.decoder_hidden = 8;
  r.voting.memory_frames = 3;
  r.seed = 5;
  r.finalize();
  return r;
}

SceneSpec small_scene(std::size_t frames = 6) {
  SceneSpec s;
  s.frames = frames;
  s.background_points = 1500;
  s.background_extent = 14;
  s.sensor_velocity = Eigen::Vector3d(0.3, 0, 0);
  s.sensor_yaw_rate = 0.01;
  ActorSpec a;
  a.center = Eigen::Vector3d(3, 0, -0.8);
  a.velocity = Eigen::Vector3d(0.5, 0, 0);
  a.points_per_frame = 300;
  s.actors = {a};
  s.seed = 17;
  return s;
}

class ThrowingPredictor : public CoarsePredictor {
 public:
  explicit ThrowingPredictor(std::int64_t bad) : bad_(bad) {}
  CoarsePrediction predict(const FrameInput& in) override {
    if (in.frame_id == bad_) throw Error("boom");
    CoarsePrediction p;
    p.labels.assign(in.crop.cloud.size(), S);
    p.movable.assign(in.crop.cloud.size(), 0);
    return p;
  }

 private:
  std::int64_t bad_;
};

}  // namespace

TEST(Iou, PerfectPredictionAndDirectFormula) {
  const LabelList gt{M, S, M, U};
  const EvalReport r = iou(gt, gt);
  EXPECT_EQ(r.tp, 2u);
  EXPECT_EQ(r.iou, 1.0);

  LabelList pred, truth;
  for (int i = 0; i < 50; ++i) pred.push_back(M), truth.push_back(M);
  for (int i = 0; i < 25; ++i) pred.push_back(M), truth.push_back(S);
  for (int i = 0; i < 25; ++i) pred.push_back(S), truth.push_back(M);
  const EvalReport half = iou(pred, truth);
  EXPECT_EQ(half.tp, 50u);
  EXPECT_EQ(half.fp, 25u);
  EXPECT_EQ(half.fn, 25u);
  EXPECT_DOUBLE_EQ(*half.iou, 0.5);
}

TEST(Iou, UndefinedWithoutMovingPointsAndLengthMismatch) {
  EXPECT_FALSE(iou(LabelList{S, S, U}, LabelList{S, S, S}).iou.has_value());
  EXPECT_FALSE(iou(LabelList{}, LabelList{}).iou.has_value());
  EXPECT_FALSE(iou_from_counts(0, 0, 0).has_value());
  EXPECT_THROW(iou(LabelList{S}, LabelList{S, S}), Error);
}

TEST(Iou, GroundTruthUnknownIsExcluded) {
  EXPECT_EQ(iou(LabelList{M, M}, LabelList{M, U}).fp, 0u);
  std::vector<MotionLabel> p{{M, {}}, {M, {}}}, g{{M, {}}, {U, {}}};
  EXPECT_EQ(*iou(p, g).iou, 1.0);
}

TEST(Iou, MatchesBruteForceCounting) {
  oracle::Rng rng(90);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = static_cast<std::size_t>(oracle::uniform_int(rng, 0, 500));
    const LabelList p = oracle::random_labels(rng, n), g = oracle::random_labels(rng, n);
    const EvalReport r = iou(p, g);
    const oracle::Counts c = oracle::moving_counts(p, g);
    EXPECT_EQ(r.tp, c.tp);
    EXPECT_EQ(r.fp, c.fp);
    EXPECT_EQ(r.fn, c.fn);
    if (c.tp + c.fp + c.fn > 0) {
      EXPECT_DOUBLE_EQ(*r.iou, static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp + c.fn));
    }
  }
}

TEST(Iou, AddingCorrectMovingPredictionNeverDecreases) {
  oracle::Rng rng(91);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = static_cast<std::size_t>(oracle::uniform_int(rng, 1, 200));
    LabelList p = oracle::random_labels(rng, n);
    const LabelList g = oracle::random_labels(rng, n);
    const auto before = iou(p, g).iou;
    for (std::size_t i = 0; i < n; ++i)
      if (g[i] == M && p[i] != M) {
        p[i] = M;
        break;
      }
    const auto after = iou(p, g).iou;
    if (before) EXPECT_GE(*after, *before);
  }
}

TEST(Iou, ReportAccumulatesAndSerializes) {
  EvalReport r;
  FrameEval a{0, 3, 1, 0, iou_from_counts(3, 1, 0), {{"voting", 1.5}}};
  FrameEval b{1, 1, 0, 1, iou_from_counts(1, 0, 1), {{"voting", 0.5}}};
  r.accumulate(a);
  r.accumulate(b);
  EXPECT_EQ(r.tp, 4u);
  EXPECT_DOUBLE_EQ(*r.iou, 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(r.stage_ms.at("voting"), 2.0);
  const auto j = nlohmann::json::parse(report_json(r));
  EXPECT_EQ(j.at("tp").get<int>(), 4);
  EXPECT_EQ(j.at("frames").size(), 2u);
  EXPECT_NE(report_table(r).find("IoU"), std::string::npos);
}

TEST(Synth, ZeroVelocityActorIsStatic) {
  SceneSpec s = small_scene(3);
  s.actors[0].velocity = Eigen::Vector3d::Zero();
  for (const SynthFrame& f : synth_scene(s)) {
    ASSERT_EQ(f.cloud.size(), 1800u);
    ASSERT_EQ(f.gt.size(), 1800u);
    for (std::size_t i = 1500; i < 1800; ++i) {
      EXPECT_EQ(f.gt[i].state, S);
      EXPECT_EQ(f.gt[i].movable, Movability::kMovable);
    }
  }
}

TEST(Synth, ActorCentroidAdvancesOneMetrePerFrame) {
  SceneSpec s;
  s.frames = 5;
  ActorSpec a;
  a.velocity = Eigen::Vector3d(1, 0, 0);
  s.actors = {a};
  const auto frames = synth_scene(s);
  std::vector<Eigen::Vector3d> centroids;
  for (const SynthFrame& f : frames) {
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    std::size_t n = 0;
    for (std::size_t i = 0; i < f.cloud.size(); ++i)
      if (f.gt[i].state == M) sum += f.cloud.points[i], ++n;
    ASSERT_EQ(n, 1000u);
    centroids.push_back(sum / static_cast<double>(n));
  }
  for (std::size_t t = 1; t < centroids.size(); ++t) EXPECT_NEAR((centroids[t] - centroids[t - 1]).norm(), 1.0, 0.15);
}

TEST(Synth, BackgroundFixedInWorldFrame) {
  const auto frames = synth_scene(small_scene(4));
  for (std::size_t t = 1; t < frames.size(); ++t)
    for (std::size_t i = 0; i < 1500; ++i) {
      const Eigen::Vector3d w0 = frames[0].pose.apply(frames[0].cloud.points[i]);
      const Eigen::Vector3d wt = frames[t].pose.apply(frames[t].cloud.points[i]);
      ASSERT_LT((w0 - wt).norm(), 1e-9);
    }
}

TEST(Synth, SameSeedIsBitwiseIdenticalAndEmptySpecFails) {
  const auto a = synth_scene(small_scene()), b = synth_scene(small_scene());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_EQ(a[t].cloud.points, b[t].cloud.points);
    EXPECT_EQ(a[t].cloud.intensity, b[t].cloud.intensity);
    EXPECT_EQ(a[t].gt, b[t].gt);
  }
  SceneSpec other = small_scene();
  other.seed = 18;
  EXPECT_NE(synth_scene(other)[0].cloud.points, a[0].cloud.points);
  SceneSpec empty;
  empty.background_points = 0;
  EXPECT_THROW(synth_scene(empty), Error);
}

TEST(Synth, JsonRoundTrip) {
  SceneSpec s = small_scene();
  s.start.translation = Eigen::Vector3d(1, 2, 0);
  const SceneSpec back = parse_scene_spec(scene_spec_json(s));
  const auto a = synth_scene(s), b = synth_scene(back);
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_EQ(a[t].gt, b[t].gt);
    for (std::size_t i = 0; i < a[t].cloud.size(); ++i) ASSERT_LT((a[t].cloud.points[i] - b[t].cloud.points[i]).norm(), 1e-9);
  }
  EXPECT_THROW(parse_scene_spec("{not json"), Error);
  EXPECT_THROW(parse_scene_spec(R"({"frames": 0})"), Error);
}

TEST(Synth, WrittenSequenceReadsBack) {
  oracle::TempDir dir("synth_seq");
  const auto frames = synth_scene(small_scene(3));
  write_sequence(dir.path(), frames);
  const KittiFrameSource src(KittiSequence(dir.path()), LabelRemap::semantic_kitti_mos());
  ASSERT_EQ(src.size(), 3u);
  for (std::size_t t = 0; t < 3; ++t) {
    const Frame f = src.frame(t);
    ASSERT_EQ(f.cloud.size(), frames[t].cloud.size());
    for (std::size_t i = 0; i < f.cloud.size(); ++i)
      ASSERT_LT((f.cloud.points[i] - frames[t].cloud.points[i]).cwiseAbs().maxCoeff(), 1e-5);
    ASSERT_TRUE(f.gt);
    for (std::size_t i = 0; i < f.gt->size(); ++i) ASSERT_EQ((*f.gt)[i].state, frames[t].gt[i].state);
    EXPECT_LT((f.pose.matrix() - frames[t].pose.matrix()).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(CorruptLabels, FlipsExactCountAndKeepsUnknown) {
  oracle::Rng rng(92);
  const LabelList gt = oracle::random_labels(rng, 1000);
  const std::size_t known = static_cast<std::size_t>(std::count_if(gt.begin(), gt.end(), [](MotionState s) { return s != U; }));
  const LabelList c = corrupt_labels(gt, 0.1, 3);
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == U) EXPECT_EQ(c[i], U);
    flipped += c[i] != gt[i];
  }
  EXPECT_EQ(flipped, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(known))));
  EXPECT_EQ(corrupt_labels(gt, 0.1, 3), c);
  EXPECT_EQ(corrupt_labels(gt, 0.0, 3), gt);
  EXPECT_THROW(corrupt_labels(gt, 1.5, 3), Error);
}

TEST(ExpandLabels, OutOfCropPointsAreUnknown) {
  IndexedCloud crop;
  crop.cloud.points = {{0, 0, 0}, {1, 1, 1}};
  crop.source_index = {3, 0};
  EXPECT_EQ(expand_labels(4, crop, {M, S}), (LabelList{S, U, U, M}));
  EXPECT_THROW(expand_labels(4, crop, {M}), Error);
  EXPECT_THROW(expand_labels(2, crop, {M, S}), Error);
}

TEST(RunSequence, NetworkRunIsDeterministicAndBounded) {
  const RuntimeConfig cfg = small_runtime();
  const WeightStore w = init_weights(cfg.model, 11);
  const SynthFrameSource src(synth_scene(small_scene()));
  NetworkPredictor p1(cfg, w), p2(cfg, w);
  const SequenceResult a = run_sequence(src, cfg, p1);
  const SequenceResult b = run_sequence(src, cfg, p2);
  ASSERT_EQ(a.labels.size(), 6u);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.max_scans_held, 2u);
  EXPECT_EQ(a.max_predictions_held, 3u);
  EXPECT_EQ(a.report.frames.size(), 6u);
  for (const FrameEval& f : a.report.frames) {
    EXPECT_TRUE(f.stage_ms.count("encoder"));
    EXPECT_TRUE(f.stage_ms.count("voting"));
  }
  EXPECT_EQ(p1.short_term_memory().frame_id, 5);
}

TEST(RunSequence, FirstFrameRunsCold) {
  const RuntimeConfig cfg = small_runtime();
  const SynthFrameSource src(synth_scene(small_scene(1)));
  NetworkPredictor p(cfg, init_weights(cfg.model, 2));
  const SequenceResult r = run_sequence(src, cfg, p);
  ASSERT_EQ(r.labels.size(), 1u);
  EXPECT_EQ(r.labels[0].size(), 1800u);
  EXPECT_EQ(p.scans_held(), 1u);
}

TEST(RunSequence, PerfectOracleWithoutVotingScoresOne) {
  RuntimeConfig cfg = small_runtime();
  cfg.voting.enabled = false;
  const SynthFrameSource src(synth_scene(small_scene()));
  OraclePredictor p(0.0, 1);
  const SequenceResult r = run_sequence(src, cfg, p);
  EXPECT_DOUBLE_EQ(*r.report.iou, 1.0);
  // Points outside the crop come back unknown.
  const auto frames = synth_scene(small_scene());
  for (std::size_t t = 0; t < frames.size(); ++t)
    for (std::size_t i = 0; i < frames[t].cloud.size(); ++i)
      if (!cfg.sequence.crop.contains(frames[t].cloud.points[i])) EXPECT_EQ(r.labels[t][i], U);
}

TEST(RunSequence, WrittenLabelsReplayThroughLabelFiles) {
  oracle::TempDir dir("replay");
  RuntimeConfig cfg = small_runtime();
  const SynthFrameSource src(synth_scene(small_scene()));
  OraclePredictor p(0.1, 4);
  RunOptions opts;
  opts.label_dir = dir.path();
  const SequenceResult first = run_sequence(src, cfg, p, opts);
  cfg.voting.enabled = false;
  LabelFilePredictor replay(dir.path(), LabelRemap::semantic_kitti_mos());
  const SequenceResult second = run_sequence(src, cfg, replay);
  EXPECT_EQ(first.labels, second.labels);
}

TEST(RunSequence, ErrorsNameTheFrame) {
  const RuntimeConfig cfg = small_runtime();
  const SynthFrameSource src(synth_scene(small_scene()));
  ThrowingPredictor p(2);
  try {
    run_sequence(src, cfg, p);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()).rfind("frame 2:", 0), 0u) << e.what();
  }
}
