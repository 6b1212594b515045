// streammos command-line interface: infer, vote, eval, synth, selftest.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "acceptance/suites.hpp"
#include "streammos/config.hpp"
#include "streammos/evalkit.hpp"

namespace fs = std::filesystem;
using namespace streammos;

namespace {

struct ConfigOptions {
  std::string file;
  std::vector<std::string> overrides;
  std::string json;
  std::size_t max_frames = 0;
};

void add_config_options(CLI::App* cmd, ConfigOptions& opt) {
  cmd->add_option("-c,--config", opt.file, "key=value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", opt.overrides, "override one key, key=value (repeatable)");
  cmd->add_option("--json", opt.json, "also write the report as JSON to this path");
}

RuntimeConfig load_config(const ConfigOptions& opt) {
  ConfigFile file;
  fs::path base_dir = fs::current_path();
  if (!opt.file.empty()) {
    file = ConfigFile::load(opt.file);
    base_dir = fs::absolute(opt.file).parent_path();
  }
  for (const auto& o : opt.overrides) file.override_with(o);
  return apply_config(file, {}, base_dir);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

void emit_report(const EvalReport& report, const std::vector<fs::path>& json_paths) {
  std::cout << report_table(report);
  const std::string json = report_json(report);
  for (const auto& p : json_paths) {
    if (p.empty()) continue;
    write_text(p, json);
    std::cout << "report: " << p.string() << "\n";
  }
}

// The first `n` frames of another source.
class PrefixSource : public FrameSource {
 public:
  PrefixSource(const FrameSource& inner, std::size_t n) : inner_(inner), n_(std::min(n, inner.size())) {}
  std::size_t size() const override { return n_; }
  Frame frame(std::size_t i) const override { return inner_.frame(i); }

 private:
  const FrameSource& inner_;
  std::size_t n_;
};

SequenceResult stream(const fs::path& sequence, const RuntimeConfig& cfg, CoarsePredictor& predictor,
                      const fs::path& out_dir, std::size_t max_frames) {
  const KittiFrameSource source(KittiSequence(sequence), cfg.sequence.remap);
  const PrefixSource frames(source, max_frames == 0 ? source.size() : max_frames);
  RunOptions run;
  run.label_dir = out_dir / "predictions";
  run.keep_labels = false;
  return run_sequence(frames, cfg, predictor, run);
}

// ---------------------------------------------------------------------------

struct InferOptions {
  ConfigOptions cfg;
  std::string sequence;
  std::string out;
  std::string weights;
  std::optional<std::uint64_t> init_seed;
  std::string save_weights;
};

int cmd_infer(const InferOptions& opt) {
  const RuntimeConfig cfg = load_config(opt.cfg);
  WeightStore weights;
  if (!opt.weights.empty()) {
    weights = load_weights(opt.weights);
  } else {
    weights = init_weights(cfg.model, opt.init_seed.value_or(cfg.seed));
    std::cout << "weights: random initialization, seed " << opt.init_seed.value_or(cfg.seed) << "\n";
  }
  if (!opt.save_weights.empty()) save_weights(weights, opt.save_weights);

  const fs::path out(opt.out);
  fs::create_directories(out);
  write_text(out / "config.conf", describe(cfg));
  NetworkPredictor predictor(cfg, weights);
  const SequenceResult r = stream(opt.sequence, cfg, predictor, out, opt.cfg.max_frames);
  std::cout << r.report.frames.size() << " frames, labels in " << (out / "predictions").string() << "\n";
  emit_report(r.report, {out / "report.json", opt.cfg.json});
  return 0;
}

struct VoteOptions {
  ConfigOptions cfg;
  std::string sequence;
  std::string predictions;
  std::string out;
};

int cmd_vote(const VoteOptions& opt) {
  RuntimeConfig cfg = load_config(opt.cfg);
  cfg.voting.enabled = true;
  const fs::path out(opt.out);
  fs::create_directories(out);
  write_text(out / "config.conf", describe(cfg));
  LabelFilePredictor predictor(opt.predictions, cfg.sequence.remap);
  const SequenceResult r = stream(opt.sequence, cfg, predictor, out, opt.cfg.max_frames);
  std::cout << r.report.frames.size() << " frames, refined labels in " << (out / "predictions").string() << "\n";
  emit_report(r.report, {out / "report.json", opt.cfg.json});
  return 0;
}

struct EvalOptions {
  ConfigOptions cfg;
  std::string predictions;
  std::string ground_truth;
};

std::vector<fs::path> label_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".label") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

int cmd_eval(const EvalOptions& opt) {
  const RuntimeConfig cfg = load_config(opt.cfg);
  fs::path gt_dir(opt.ground_truth);
  if (fs::is_directory(gt_dir / "labels")) gt_dir /= "labels";
  const auto gt_files = label_files(gt_dir);
  if (gt_files.empty()) throw Error("no .label files in " + gt_dir.string());

  EvalReport report;
  for (const auto& gt_path : gt_files) {
    const fs::path pred_path = fs::path(opt.predictions) / gt_path.filename();
    if (!fs::exists(pred_path)) throw Error("missing prediction " + pred_path.string());
    const auto pred = read_labels(pred_path, cfg.sequence.remap);
    const auto gt = read_labels(gt_path, cfg.sequence.remap);
    if (pred.size() != gt.size()) {
      throw Error(pred_path.string() + ": " + std::to_string(pred.size()) + " labels, ground truth has " +
                  std::to_string(gt.size()));
    }
    const EvalReport one = iou(pred, gt);
    FrameEval f;
    f.frame_id = std::stoll(gt_path.stem().string());
    f.tp = one.tp;
    f.fp = one.fp;
    f.fn = one.fn;
    f.iou = one.iou;
    report.accumulate(f);
  }
  emit_report(report, {opt.cfg.json});
  return 0;
}

struct SynthOptions {
  std::string spec;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> frames;
  bool print_spec = false;
};

int cmd_synth(const SynthOptions& opt) {
  SceneSpec spec;
  if (!opt.spec.empty()) {
    spec = load_scene_spec(opt.spec);
  } else {
    spec.actors.push_back(ActorSpec{});
  }
  if (opt.seed) spec.seed = *opt.seed;
  if (opt.frames) spec.frames = *opt.frames;
  spec.validate();
  if (opt.print_spec) {
    std::cout << scene_spec_json(spec) << "\n";
    if (opt.out.empty()) return 0;
  }
  if (opt.out.empty()) throw Error("synth: --out is required");
  const auto frames = synth_scene(spec);
  write_sequence(opt.out, frames);
  std::size_t points = 0, moving = 0;
  for (const auto& f : frames) {
    points += f.cloud.size();
    moving += static_cast<std::size_t>(std::count_if(f.gt.begin(), f.gt.end(), [](const MotionLabel& l) {
      return l.state == MotionState::kMoving;
    }));
  }
  std::cout << "wrote " << frames.size() << " frames (" << points << " points, " << moving << " moving) to " << opt.out
            << "\n";
  return 0;
}

struct SelftestOptions {
  std::vector<std::size_t> only;
  bool list = false;
};

int cmd_selftest(const SelftestOptions& opt) {
  const auto& all = acceptance::criteria();
  if (opt.list) {
    for (std::size_t i = 0; i < all.size(); ++i) std::printf("%2zu %s\n", i + 1, all[i].name.c_str());
    return 0;
  }
  std::vector<std::size_t> picked;
  for (std::size_t n : opt.only) {
    if (n < 1 || n > all.size()) throw Error("selftest: no criterion " + std::to_string(n));
    picked.push_back(n - 1);
  }
  return acceptance::run_all(stdout, picked);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"StreamMOS streaming LiDAR moving-object segmentation"};
  app.require_subcommand(1);

  InferOptions infer;
  auto* c_infer = app.add_subcommand("infer", "run the network and voting over a sequence");
  c_infer->add_option("--sequence", infer.sequence, "sequence dir (velodyne/, poses.txt, calib.txt, labels/)")
      ->required()
      ->check(CLI::ExistingDirectory);
  c_infer->add_option("-o,--out", infer.out, "output dir")->required();
  auto* w = c_infer->add_option("-w,--weights", infer.weights, "weight file")->check(CLI::ExistingFile);
  c_infer->add_option("--init-seed", infer.init_seed, "random weights with this seed")->excludes(w);
  c_infer->add_option("--save-weights", infer.save_weights, "write the weights used");
  c_infer->add_option("-n,--frames", infer.cfg.max_frames, "process at most this many frames");
  add_config_options(c_infer, infer.cfg);

  VoteOptions vote;
  auto* c_vote = app.add_subcommand("vote", "refine existing predictions with the voting stage");
  c_vote->add_option("--sequence", vote.sequence, "sequence dir with scans and poses")
      ->required()
      ->check(CLI::ExistingDirectory);
  c_vote->add_option("-p,--predictions", vote.predictions, "dir of NNNNNN.label predictions")
      ->required()
      ->check(CLI::ExistingDirectory);
  c_vote->add_option("-o,--out", vote.out, "output dir")->required();
  c_vote->add_option("-n,--frames", vote.cfg.max_frames, "process at most this many frames");
  add_config_options(c_vote, vote.cfg);

  EvalOptions eval;
  auto* c_eval = app.add_subcommand("eval", "moving-class IoU of predictions against ground truth");
  c_eval->add_option("-p,--predictions", eval.predictions, "dir of NNNNNN.label predictions")
      ->required()
      ->check(CLI::ExistingDirectory);
  c_eval->add_option("-g,--ground-truth", eval.ground_truth, "label dir or sequence dir")
      ->required()
      ->check(CLI::ExistingDirectory);
  add_config_options(c_eval, eval.cfg);

  SynthOptions synth;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic sequence");
  c_synth->add_option("--spec", synth.spec, "scene JSON (default: one actor)")->check(CLI::ExistingFile);
  c_synth->add_option("-o,--out", synth.out, "sequence dir to write");
  c_synth->add_option("--seed", synth.seed, "override the scene seed");
  c_synth->add_option("--frames", synth.frames, "override the frame count");
  c_synth->add_flag("--print-spec", synth.print_spec, "print the resolved scene JSON");

  SelftestOptions selftest;
  auto* c_self = app.add_subcommand("selftest", "run the oracle and acceptance suites");
  c_self->add_option("--only", selftest.only, "criterion numbers to run (repeatable)");
  c_self->add_flag("--list", selftest.list, "list criteria and exit");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_infer) return cmd_infer(infer);
    if (*c_vote) return cmd_vote(vote);
    if (*c_eval) return cmd_eval(eval);
    if (*c_synth) return cmd_synth(synth);
    if (*c_self) return cmd_selftest(selftest);
  } catch (const std::exception& e) {
    std::cerr << "streammos: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
