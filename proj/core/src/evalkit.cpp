#include "streammos/evalkit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace streammos {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::uint64_t mix_seed(std::uint64_t seed, std::int64_t frame) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(frame) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void count_pair(MotionState p, MotionState g, FrameEval& f) {
  if (g == MotionState::kUnknown) return;
  const bool pm = p == MotionState::kMoving;
  const bool gm = g == MotionState::kMoving;
  if (pm && gm) ++f.tp;
  else if (pm) ++f.fp;
  else if (gm) ++f.fn;
}

EvalReport single_frame(const FrameEval& f) {
  EvalReport r;
  r.accumulate(f);
  return r;
}

std::string fmt_iou(const std::optional<double>& v) {
  if (!v) return "undefined";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << *v;
  return os.str();
}

json iou_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

Eigen::Vector3d vec3(const json& j, const char* key) {
  const json& a = j.at(key);
  if (!a.is_array() || a.size() != 3) throw Error(std::string("scene spec: '") + key + "' must hold 3 numbers");
  return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

json vec3_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Matrix3d yaw_rotation(double yaw) {
  return Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

// Uniform sample on the surface of an axis-aligned box, faces weighted by area.
Eigen::Vector3d sample_box_surface(const Eigen::Vector3d& center, const Eigen::Vector3d& size, std::mt19937_64& rng) {
  const double ax = size.y() * size.z();
  const double ay = size.x() * size.z();
  const double az = size.x() * size.y();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double pick = unit(rng) * (ax + ay + az);
  Eigen::Vector3d local(unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5);
  const double side = unit(rng) < 0.5 ? -0.5 : 0.5;
  if (pick < ax) local.x() = side;
  else if (pick < ax + ay) local.y() = side;
  else local.z() = side;
  return center + local.cwiseProduct(size);
}

}  // namespace

// ---------------------------------------------------------------------------
// IoU

std::optional<double> iou_from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  const std::uint64_t den = tp + fp + fn;
  if (den == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(den);
}

void EvalReport::accumulate(const FrameEval& frame) {
  tp += frame.tp;
  fp += frame.fp;
  fn += frame.fn;
  iou = iou_from_counts(tp, fp, fn);
  for (const auto& [stage, ms] : frame.stage_ms) stage_ms[stage] += ms;
  frames.push_back(frame);
}

EvalReport iou(const LabelList& pred, const LabelList& gt) {
  if (pred.size() != gt.size()) {
    throw Error("iou: prediction has " + std::to_string(pred.size()) + " labels, ground truth " +
                std::to_string(gt.size()));
  }
  FrameEval f;
  for (std::size_t i = 0; i < pred.size(); ++i) count_pair(pred[i], gt[i], f);
  f.iou = iou_from_counts(f.tp, f.fp, f.fn);
  return single_frame(f);
}

EvalReport iou(const std::vector<MotionLabel>& pred, const std::vector<MotionLabel>& gt) {
  LabelList p(pred.size());
  LabelList g(gt.size());
  std::transform(pred.begin(), pred.end(), p.begin(), [](const MotionLabel& l) { return l.state; });
  std::transform(gt.begin(), gt.end(), g.begin(), [](const MotionLabel& l) { return l.state; });
  return iou(p, g);
}

std::string report_table(const EvalReport& report) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "frame" << std::right << std::setw(10) << "TP" << std::setw(10) << "FP"
     << std::setw(10) << "FN" << std::setw(12) << "IoU" << "\n";
  for (const FrameEval& f : report.frames) {
    os << std::left << std::setw(8) << f.frame_id << std::right << std::setw(10) << f.tp << std::setw(10) << f.fp
       << std::setw(10) << f.fn << std::setw(12) << fmt_iou(f.iou) << "\n";
  }
  os << std::left << std::setw(8) << "total" << std::right << std::setw(10) << report.tp << std::setw(10)
     << report.fp << std::setw(10) << report.fn << std::setw(12) << fmt_iou(report.iou) << "\n";
  if (!report.stage_ms.empty()) {
    os << "\nstage timings (ms, summed / mean per frame)\n";
    const double n = report.frames.empty() ? 1.0 : static_cast<double>(report.frames.size());
    for (const auto& [stage, ms] : report.stage_ms) {
      os << "  " << std::left << std::setw(16) << stage << std::right << std::fixed << std::setprecision(2)
         << std::setw(12) << ms << std::setw(12) << ms / n << "\n";
    }
  }
  return os.str();
}

std::string report_json(const EvalReport& report) {
  json j;
  j["tp"] = report.tp;
  j["fp"] = report.fp;
  j["fn"] = report.fn;
  j["iou"] = iou_json(report.iou);
  j["stage_ms"] = report.stage_ms;
  json frames = json::array();
  for (const FrameEval& f : report.frames) {
    frames.push_back({{"frame", f.frame_id},
                      {"tp", f.tp},
                      {"fp", f.fp},
                      {"fn", f.fn},
                      {"iou", iou_json(f.iou)},
                      {"stage_ms", f.stage_ms}});
  }
  j["frames"] = std::move(frames);
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Synthetic scenes

void SceneSpec::validate() const {
  if (frames == 0) throw Error("scene spec: frame count must be positive");
  if (background_points == 0 && actors.empty()) throw Error("scene spec: empty background and no actors");
  if (!start.is_rigid()) throw Error("scene spec: start pose is not rigid");
  if (!(background_extent > 0.0)) throw Error("scene spec: background extent must be positive");
  if (!(wall_fraction >= 0.0 && wall_fraction <= 1.0)) throw Error("scene spec: wall fraction must lie in [0, 1]");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw Error("scene spec: noise must be finite and non-negative");
  for (const ActorSpec& a : actors) {
    if (!(a.size.array() > 0.0).all()) throw Error("scene spec: actor size must be positive");
    if (!a.center.allFinite() || !a.velocity.allFinite()) throw Error("scene spec: actor values must be finite");
  }
}

std::vector<SynthFrame> synth_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double e = spec.background_extent;
  std::vector<Eigen::Vector3d> background(spec.background_points);
  for (Eigen::Vector3d& p : background) {
    if (unit(rng) < spec.wall_fraction) {
      const double along = (2.0 * unit(rng) - 1.0) * e;
      const double z = spec.ground_z + 3.0 * unit(rng);
      switch (static_cast<int>(unit(rng) * 4.0) & 3) {
        case 0: p = {e, along, z}; break;
        case 1: p = {-e, along, z}; break;
        case 2: p = {along, e, z}; break;
        default: p = {along, -e, z}; break;
      }
    } else {
      p = {(2.0 * unit(rng) - 1.0) * e, (2.0 * unit(rng) - 1.0) * e, spec.ground_z};
    }
  }
  const MotionLabel background_label{MotionState::kStatic, Movability::kBackground};

  std::vector<SynthFrame> out(spec.frames);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    const double td = static_cast<double>(t);
    SynthFrame& f = out[t];
    f.pose.rotation = yaw_rotation(spec.sensor_yaw_rate * td) * spec.start.rotation;
    f.pose.translation = spec.start.translation + spec.sensor_velocity * td;
    const Pose world_to_sensor = f.pose.inverse();

    std::vector<Eigen::Vector3d> world = background;
    f.gt.assign(background.size(), background_label);
    for (const ActorSpec& a : spec.actors) {
      const Eigen::Vector3d c = a.center + a.velocity * td;
      const MotionLabel label{a.velocity.isZero(0.0) ? MotionState::kStatic : MotionState::kMoving,
                              a.movable ? Movability::kMovable : Movability::kBackground};
      for (std::size_t k = 0; k < a.points_per_frame; ++k) {
        world.push_back(sample_box_surface(c, a.size, rng));
        f.gt.push_back(label);
      }
    }
    f.cloud.frame_id = static_cast<std::int64_t>(t);
    f.cloud.points.reserve(world.size());
    f.cloud.intensity.reserve(world.size());
    for (const Eigen::Vector3d& w : world) {
      Eigen::Vector3d p = world_to_sensor.apply(w);
      if (spec.noise > 0.0) p += spec.noise * Eigen::Vector3d(gauss(rng), gauss(rng), gauss(rng));
      f.cloud.points.push_back(p);
      f.cloud.intensity.push_back(static_cast<float>(unit(rng)));
    }
  }
  return out;
}

SceneSpec parse_scene_spec(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& ex) {
    throw Error(std::string("scene spec: ") + ex.what());
  }
  SceneSpec s;
  try {
    s.frames = j.value("frames", s.frames);
    if (j.contains("start")) {
      const json& st = j.at("start");
      if (st.contains("translation")) s.start.translation = vec3(st, "translation");
      if (st.contains("yaw")) s.start.rotation = yaw_rotation(st.at("yaw").get<double>());
    }
    if (j.contains("sensor_velocity")) s.sensor_velocity = vec3(j, "sensor_velocity");
    s.sensor_yaw_rate = j.value("sensor_yaw_rate", s.sensor_yaw_rate);
    s.background_points = j.value("background_points", s.background_points);
    s.background_extent = j.value("background_extent", s.background_extent);
    s.ground_z = j.value("ground_z", s.ground_z);
    s.wall_fraction = j.value("wall_fraction", s.wall_fraction);
    s.noise = j.value("noise", s.noise);
    s.seed = j.value("seed", s.seed);
    if (j.contains("actors")) {
      for (const json& a : j.at("actors")) {
        ActorSpec actor;
        if (a.contains("center")) actor.center = vec3(a, "center");
        if (a.contains("size")) actor.size = vec3(a, "size");
        if (a.contains("velocity")) actor.velocity = vec3(a, "velocity");
        actor.points_per_frame = a.value("points_per_frame", actor.points_per_frame);
        actor.movable = a.value("movable", actor.movable);
        s.actors.push_back(actor);
      }
    }
  } catch (const json::exception& ex) {
    throw Error(std::string("scene spec: ") + ex.what());
  }
  s.validate();
  return s;
}

SceneSpec load_scene_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("scene spec: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scene_spec(ss.str());
}

std::string scene_spec_json(const SceneSpec& spec) {
  json j;
  j["frames"] = spec.frames;
  const Eigen::Matrix3d& r = spec.start.rotation;
  j["start"] = {{"translation", vec3_json(spec.start.translation)}, {"yaw", std::atan2(r(1, 0), r(0, 0))}};
  j["sensor_velocity"] = vec3_json(spec.sensor_velocity);
  j["sensor_yaw_rate"] = spec.sensor_yaw_rate;
  j["background_points"] = spec.background_points;
  j["background_extent"] = spec.background_extent;
  j["ground_z"] = spec.ground_z;
  j["wall_fraction"] = spec.wall_fraction;
  j["noise"] = spec.noise;
  j["seed"] = spec.seed;
  json actors = json::array();
  for (const ActorSpec& a : spec.actors) {
    actors.push_back({{"center", vec3_json(a.center)},
                      {"size", vec3_json(a.size)},
                      {"velocity", vec3_json(a.velocity)},
                      {"points_per_frame", a.points_per_frame},
                      {"movable", a.movable}});
  }
  j["actors"] = std::move(actors);
  return j.dump(2);
}

void write_sequence(const fs::path& dir, const std::vector<SynthFrame>& frames) {
  fs::create_directories(dir / "velodyne");
  fs::create_directories(dir / "labels");
  std::vector<Pose> poses;
  poses.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const SynthFrame& f = frames[i];
    write_scan(dir / "velodyne" / (KittiSequence::frame_name(i) + ".bin"), f.cloud);
    std::vector<std::uint32_t> raw(f.gt.size());
    for (std::size_t k = 0; k < raw.size(); ++k) {
      const MotionLabel& l = f.gt[k];
      if (l.state == MotionState::kStatic && l.movable == Movability::kMovable) raw[k] = 10;
      else if (l.state == MotionState::kStatic) raw[k] = 40;
      else raw[k] = LabelRemap::encode(l.state);
    }
    write_raw_labels(dir / "labels" / (KittiSequence::frame_name(i) + ".label"), raw);
    poses.push_back(f.pose);
  }
  write_poses(dir / "poses.txt", poses);
  write_identity_calib(dir / "calib.txt");
}

// ---------------------------------------------------------------------------
// Streaming runner

void RuntimeConfig::finalize() {
  sequence.validate();
  model.history_frames = static_cast<int>(sequence.history_frames);
  model.use_intensity = sequence.use_intensity;
  model.bev = BevConfig::from_crop(sequence.crop, model.bev.width, model.bev.height);
  voting.voxel.origin = sequence.crop.min;
  model.validate();
  if (voting.memory_frames == 0) throw Error("runtime config: voting memory must hold at least one frame");
  if (!(voting.voxel.size > 0.0)) throw Error("runtime config: voxel size must be positive");
  if (!(voting.dbscan.eps > 0.0) || voting.dbscan.min_pts == 0) {
    throw Error("runtime config: DBSCAN eps and min_pts must be positive");
  }
}

KittiFrameSource::KittiFrameSource(KittiSequence seq, LabelRemap remap)
    : seq_(std::move(seq)), remap_(std::move(remap)) {
  if (seq_.has_poses()) {
    poses_ = seq_.poses();
    if (poses_.size() < seq_.size()) {
      throw Error("sequence " + seq_.root().string() + ": " + std::to_string(poses_.size()) + " poses for " +
                  std::to_string(seq_.size()) + " scans");
    }
  }
}

Frame KittiFrameSource::frame(std::size_t i) const {
  Frame f;
  f.cloud = seq_.scan(i);
  f.cloud.frame_id = static_cast<std::int64_t>(i);
  f.pose = poses_.empty() ? Pose::identity() : poses_[i];
  if (fs::exists(seq_.label_path(i))) f.gt = seq_.labels(i, remap_, f.cloud.size());
  return f;
}

Frame SynthFrameSource::frame(std::size_t i) const {
  const SynthFrame& s = frames_.at(i);
  return Frame{s.cloud, s.pose, s.gt};
}

NetworkPredictor::NetworkPredictor(const RuntimeConfig& cfg, const WeightStore& weights)
    : cfg_(cfg), params_(ModelParams::bind(cfg.model, weights)) {}

CoarsePrediction NetworkPredictor::predict(const FrameInput& in) {
  CoarsePrediction out;
  const PointCloud& cloud = in.crop.cloud;
  if (cloud.empty()) return out;
  const std::size_t n_hist = static_cast<std::size_t>(cfg_.model.history_frames);

  auto t0 = Clock::now();
  IndexedCloud sampled = sample_points(cloud, cfg_.sequence.target_points, mix_seed(cfg_.seed, in.frame_id));
  sampled.cloud.frame_id = in.frame_id;
  out.stage_ms["sample"] = ms_since(t0);

  t0 = Clock::now();
  std::vector<PointCloud> clouds;
  clouds.reserve(n_hist + 1);
  for (std::size_t k = n_hist; k >= 1; --k) {
    if (history_.empty()) {
      clouds.push_back(sampled.cloud);
      continue;
    }
    const std::size_t idx = history_.size() >= k ? history_.size() - k : 0;
    const HeldScan& h = history_[idx];
    clouds.push_back(transform_cloud(h.cloud, relative_pose(in.pose, h.pose)));
  }
  clouds.push_back(sampled.cloud);
  out.stage_ms["ego_compensate"] = ms_since(t0);

  t0 = Clock::now();
  EncoderOutput enc = encoder_forward(clouds, params_, cfg_.model);
  out.stage_ms["encoder"] = ms_since(t0);

  t0 = Clock::now();
  MemoryStep step = step_memory(memory_, enc.f_t, in.frame_id, params_.attention);
  memory_ = std::move(step.memory);
  out.stage_ms["memory"] = ms_since(t0);

  t0 = Clock::now();
  const bool identity_sample = sampled.cloud.size() == cloud.size();
  const FeatureMatrix e_t =
      identity_sample ? std::move(enc.current_point_features) : pointwise_encode({cloud}, params_, cfg_.model)[0];
  const DecoderOutput dec = decode(enc.g1, enc.g2, step.fused, e_t, cloud, params_, cfg_.model);
  out.labels = motion_labels(dec.motion);
  out.movable = movable_mask(dec.movable);
  out.stage_ms["decode"] = ms_since(t0);

  history_.push_back(HeldScan{std::move(sampled.cloud), in.pose});
  while (history_.size() > n_hist) history_.pop_front();
  return out;
}

LabelList corrupt_labels(const LabelList& gt, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error("corrupt_labels: fraction must lie in [0, 1]");
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] != MotionState::kUnknown) eligible.push_back(i);
  }
  const auto flips = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(eligible.size())));
  std::mt19937_64 rng(seed);
  LabelList out = gt;
  for (std::size_t k = 0; k < flips; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, eligible.size() - 1);
    std::swap(eligible[k], eligible[pick(rng)]);
    MotionState& s = out[eligible[k]];
    s = s == MotionState::kMoving ? MotionState::kStatic : MotionState::kMoving;
  }
  return out;
}

CoarsePrediction OraclePredictor::predict(const FrameInput& in) {
  if (!in.gt) throw Error("oracle predictor: frame has no ground truth");
  CoarsePrediction out;
  LabelList gt(in.gt->size());
  out.movable.resize(in.gt->size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    gt[i] = (*in.gt)[i].state;
    out.movable[i] = (*in.gt)[i].movable == Movability::kMovable ? 1 : 0;
  }
  out.labels = corrupt_labels(gt, flip_fraction_, mix_seed(seed_, in.frame_id));
  return out;
}

CoarsePrediction LabelFilePredictor::predict(const FrameInput& in) {
  const fs::path path = dir_ / (KittiSequence::frame_name(static_cast<std::size_t>(in.frame_id)) + ".label");
  const std::vector<std::uint32_t> raw = read_raw_labels(path);
  if (raw.size() != in.raw_size) {
    throw Error(path.string() + ": " + std::to_string(raw.size()) + " labels for " + std::to_string(in.raw_size) +
                " points");
  }
  CoarsePrediction out;
  const std::size_t n = in.crop.cloud.size();
  out.labels.resize(n);
  out.movable.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const MotionLabel l = remap_.map(raw[in.crop.source_index[i]]);
    out.labels[i] = l.state;
    out.movable[i] = l.movable ? (*l.movable == Movability::kMovable ? 1 : 0) : (l.state == MotionState::kMoving ? 1 : 0);
  }
  return out;
}

LabelList expand_labels(std::size_t raw_size, const IndexedCloud& crop, const LabelList& cropped_labels) {
  if (cropped_labels.size() != crop.cloud.size() || crop.source_index.size() != crop.cloud.size()) {
    throw Error("expand_labels: label count does not match the cropped cloud");
  }
  LabelList out(raw_size, MotionState::kUnknown);
  for (std::size_t i = 0; i < cropped_labels.size(); ++i) {
    if (crop.source_index[i] >= raw_size) throw Error("expand_labels: source index out of range");
    out[crop.source_index[i]] = cropped_labels[i];
  }
  return out;
}

SequenceResult run_sequence(const FrameSource& source, const RuntimeConfig& cfg_in, CoarsePredictor& predictor,
                            const RunOptions& options) {
  RuntimeConfig cfg = cfg_in;
  cfg.finalize();
  const std::size_t max_scans = cfg.sequence.history_frames;
  const std::size_t max_predictions = cfg.voting.memory_frames;
  if (options.label_dir) fs::create_directories(*options.label_dir);

  SequenceResult result;
  LongTermMemory memory(max_predictions);
  for (std::size_t i = 0; i < source.size(); ++i) {
    try {
      FrameEval eval;
      eval.frame_id = static_cast<std::int64_t>(i);

      auto t0 = Clock::now();
      Frame frame = source.frame(i);
      frame.cloud.frame_id = eval.frame_id;
      frame.cloud.validate();
      eval.stage_ms["load"] = ms_since(t0);

      t0 = Clock::now();
      IndexedCloud crop;
      if (cfg.crop) {
        crop = crop_cloud(frame.cloud, cfg.sequence.crop);
      } else {
        crop.cloud = frame.cloud;
        crop.source_index.resize(frame.cloud.size());
        std::iota(crop.source_index.begin(), crop.source_index.end(), std::size_t{0});
      }
      crop.cloud.frame_id = eval.frame_id;
      std::vector<MotionLabel> cropped_gt;
      if (frame.gt) {
        if (frame.gt->size() != frame.cloud.size()) throw Error("ground truth count does not match the scan");
        cropped_gt.reserve(crop.source_index.size());
        for (std::size_t s : crop.source_index) cropped_gt.push_back((*frame.gt)[s]);
      }
      eval.stage_ms["crop"] = ms_since(t0);

      const FrameInput input{eval.frame_id, crop, frame.cloud.size(), frame.pose,
                             frame.gt ? &cropped_gt : nullptr};
      CoarsePrediction coarse = predictor.predict(input);
      for (const auto& [stage, ms] : coarse.stage_ms) eval.stage_ms[stage] += ms;
      if (coarse.labels.size() != crop.cloud.size() || coarse.movable.size() != crop.cloud.size()) {
        throw Error("coarse prediction size does not match the cropped scan");
      }

      t0 = Clock::now();
      LabelList refined;
      if (cfg.voting.enabled) {
        refined = vote_frame(crop.cloud, coarse.labels, coarse.movable, memory, frame.pose, cfg.voting).refined;
      } else {
        refined = coarse.labels;
      }
      eval.stage_ms["voting"] = ms_since(t0);

      memory.push(MemoryEntry{eval.frame_id, crop.cloud, refined, frame.pose});
      if (predictor.scans_held() > max_scans || memory.size() > max_predictions) {
        throw Error("streaming bound violated: " + std::to_string(predictor.scans_held()) + " scans, " +
                    std::to_string(memory.size()) + " predictions held");
      }
      result.max_scans_held = std::max(result.max_scans_held, predictor.scans_held());
      result.max_predictions_held = std::max(result.max_predictions_held, memory.size());

      LabelList labels = expand_labels(frame.cloud.size(), crop, refined);
      if (options.label_dir) {
        write_labels(*options.label_dir / (KittiSequence::frame_name(i) + ".label"), labels);
      }
      if (frame.gt) {
        for (std::size_t k = 0; k < labels.size(); ++k) count_pair(labels[k], (*frame.gt)[k].state, eval);
        eval.iou = iou_from_counts(eval.tp, eval.fp, eval.fn);
      }
      result.report.accumulate(eval);
      if (options.keep_labels) result.labels.push_back(std::move(labels));
    } catch (const std::exception& ex) {
      throw Error("frame " + std::to_string(i) + ": " + ex.what());
    }
  }
  return result;
}

}  // namespace streammos
