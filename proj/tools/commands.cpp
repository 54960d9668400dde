#include "commands.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <new>

#include "CLI11.hpp"
#include "veil/error.hpp"
#include "veil/ops.hpp"
#include "veil/parallel.hpp"
#include "veil/params.hpp"

namespace veil::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// FNV-1a over the file bytes; identifies outputs in the manifest.
std::string file_digest(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::uint64_t h = 1469598103934665603ull;
  char buf[1 << 14];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

class Run {
 public:
  Run(fs::path dir, std::string command, std::vector<std::string> argv, RunConfig cfg)
      : dir_(std::move(dir)), command_(std::move(command)), argv_(std::move(argv)), cfg_(std::move(cfg)) {
    fs::create_directories(dir_);
    write_json(dir_ / "config.json", config_to_json(cfg_));
  }

  const RunConfig& cfg() const { return cfg_; }
  const fs::path& dir() const { return dir_; }
  json& summary() { return summary_; }

  /// A fresh output directory inside the run.
  fs::path clean_dir(const std::string& name) const {
    const fs::path p = dir_ / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }

  void finish() const {
    json outputs = json::array();
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir_))
      if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files)
      outputs.push_back({{"path", fs::relative(f, dir_).generic_string()},
                         {"bytes", fs::file_size(f)},
                         {"fnv1a64", file_digest(f)}});
    write_json(dir_ / "manifest.json", {{"command", command_},
                                        {"argv", argv_},
                                        {"config", "config.json"},
                                        {"summary", summary_},
                                        {"outputs", outputs}});
  }

 private:
  fs::path dir_;
  std::string command_;
  std::vector<std::string> argv_;
  RunConfig cfg_;
  json summary_ = json::object();
};

fs::path require_checkpoint(const std::string& path, const std::string& what, const std::string& flag) {
  if (path.empty()) throw CheckpointError("this command needs the " + what + " checkpoint (" + flag + ")");
  if (!fs::is_regular_file(path)) throw CheckpointError(what + " checkpoint not found: " + path);
  return path;
}

fs::path require_dir(const std::string& path, const std::string& what, const std::string& flag) {
  if (path.empty()) throw DataError("missing " + what + " (" + flag + ")");
  if (!fs::is_directory(path)) throw DataError(what + " not found: " + path);
  return path;
}

Codec load_codec(const RunConfig& c) {
  return Codec::from_state(load_checkpoint(require_checkpoint(c.paths.codec, "codec", "--codec")));
}

ContentEncoder load_content(const RunConfig& c) {
  ContentEncoder enc =
      ContentEncoder::from_state(load_checkpoint(require_checkpoint(c.paths.content, "content encoder", "--content")));
  if (!enc.trained()) throw CheckpointError("content encoder checkpoint is untrained: " + c.paths.content);
  return enc;
}

DiffusionModel load_model(const RunConfig& c) {
  return DiffusionModel::from_checkpoint(load_checkpoint(require_checkpoint(c.paths.model, "diffusion model", "--model")));
}

void check_compatible(const UNet& u, const Codec& codec, const ContentEncoder& enc) {
  if (u.config().latent_channels != codec.config().latent_channels)
    throw CheckpointError("model and codec disagree on latent channels");
  if (u.config().content_dim != enc.config().dim) throw CheckpointError("model and content encoder disagree on content dim");
}

// Unit-length mean of the frame embeddings.
Tensor mean_embedding(const ContentEncoder& enc, const Tensor& frames) {
  NoGradGuard ng;
  const Tensor e = enc.embed(frames);
  const std::int64_t n = e.dim(0), d = e.dim(1);
  Tensor m(Shape{d});
  double norm = 0.0;
  for (std::int64_t k = 0; k < d; ++k) {
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += e[i * d + k];
    m[k] = static_cast<float>(s / static_cast<double>(n));
    norm += static_cast<double>(m[k]) * m[k];
  }
  if (norm == 0.0) throw NumericError("prompt embedding has zero norm");
  return scale(m, static_cast<float>(1.0 / std::sqrt(norm)));
}

Tensor edit_content(const RunConfig& c, const ContentEncoder& enc, const Tensor& frames) {
  if (!c.paths.prompt.empty()) return mean_embedding(enc, read_frames(require_dir(c.paths.prompt, "prompt frames", "--prompt")));
  if (!c.edit.style.empty()) return enc.prototype(c.edit.style);
  return mean_embedding(enc, slice(frames, 0, 0, 1));
}

void check_finite(const Tensor& t, const std::string& what) {
  for (float v : t.data())
    if (!std::isfinite(v)) throw NumericError(what + " contains non-finite values");
}

json stage_json(const StageReport& s) {
  return {{"stage", to_string(s.kind)},
          {"steps", s.steps},
          {"start_loss", s.start_loss},
          {"end_loss_ema", s.end_loss_ema},
          {"temporal_calls", s.temporal_calls}};
}

json optional_number(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return *v;
}

// Commands.

void cmd_gen_corpus(Run& run) {
  const auto& c = run.cfg();
  const auto corpus = generate_corpus(c.corpus);
  export_corpus(corpus, run.clean_dir("corpus"));
  ClipRecord subject = load_subject(c);
  export_clip(subject, run.clean_dir("subject"));
  run.summary() = {{"clips", corpus.size()}, {"subject_style", subject.style_name}, {"subject_frames", subject.length()}};
}

void cmd_train_codec(Run& run) {
  const auto& c = run.cfg();
  CodecTrainReport rep;
  const Codec codec = fit_codec(c, load_corpus(c), &rep);
  save_checkpoint(run.dir() / "codec.vftn", codec.state());
  run.summary() = {{"heldout_mse_before", rep.heldout_mse_before},
                   {"heldout_mse_after", rep.heldout_mse_after},
                   {"first_loss", rep.first_loss},
                   {"last_loss", rep.last_loss},
                   {"latent_scale", codec.latent_scale}};
}

void cmd_train_content(Run& run) {
  const auto& c = run.cfg();
  ContentTrainReport rep;
  const ContentEncoder enc = fit_content(c, load_corpus(c), &rep);
  save_checkpoint(run.dir() / "content.vftn", enc.state());
  run.summary() = {{"loss_before", rep.loss_before},
                   {"loss_after", rep.loss_after},
                   {"prototypes", enc.prototype_names()}};
}

void cmd_train_diffusion(Run& run) {
  RunConfig c = run.cfg();
  const Codec codec = load_codec(c);
  const ContentEncoder enc = load_content(c);
  const auto corpus = load_corpus(c);
  DiffusionModel dm = c.paths.model.empty() ? DiffusionModel(c.unet, c.unet_seed) : load_model(c);
  check_compatible(dm.model, codec, enc);
  c.diffusion.checkpoint_dir = run.clean_dir("stages");
  const auto rep = train_diffusion(dm, codec, enc, corpus, build_schedule(c), c.diffusion);
  save_checkpoint(run.dir() / "model.vftn", dm.checkpoint());
  json stages = json::array();
  std::ofstream dat(run.dir() / "stages.dat");
  dat << "# stage start_loss end_loss_ema\n";
  for (std::size_t i = 0; i < rep.stages.size(); ++i) {
    stages.push_back(stage_json(rep.stages[i]));
    dat << i + 1 << " " << rep.stages[i].start_loss << " " << rep.stages[i].end_loss_ema << "\n";
  }
  run.summary() = {{"stages", stages}};
}

void cmd_edit(Run& run, bool masked) {
  const auto& c = run.cfg();
  const Codec codec = load_codec(c);
  const ContentEncoder enc = load_content(c);
  const DiffusionModel dm = load_model(c);
  check_compatible(dm.ema, codec, enc);
  const VideoInput in = read_video(require_dir(c.paths.input, "input frame directory", "--input"), c.paths.depth);
  const NoiseSchedule sched = build_schedule(c);
  EditRequest req;
  req.frames = in.frames;
  req.depth = in.depth;
  req.content = edit_content(c, enc, in.frames);
  req.t_s = c.edit.t_s;
  req.guidance = c.guidance;
  req.seed = c.edit.seed;
  const EditModels models{dm.ema, codec, sched};
  Tensor out;
  if (masked) {
    const Tensor mask = read_masks(require_dir(c.paths.mask, "mask directory", "--mask"));
    out = masked_edit(models, req, mask);
    std::int64_t kept = 0;
    for (float v : mask.data()) kept += v > 0.5f;
    run.summary()["kept_fraction"] = static_cast<double>(kept) / static_cast<double>(mask.numel());
  } else {
    out = edit_video(models, req);
  }
  check_finite(out, "edited video");
  write_frames(out, run.clean_dir("out"));
  run.summary()["frames"] = out.dim(0);
  run.summary()["content"] = !c.paths.prompt.empty() ? "prompt" : c.edit.style.empty() ? "input" : c.edit.style;
}

void cmd_customize(Run& run) {
  const auto& c = run.cfg();
  const Codec codec = load_codec(c);
  const ContentEncoder enc = load_content(c);
  const DiffusionModel dm = load_model(c);
  check_compatible(dm.ema, codec, enc);
  const ClipRecord subject = load_subject(c);
  if (!subject.depth) throw DataError("subject clip has no depth maps");
  UNet u = copy_unet(dm.ema);
  const auto rep = customize(u, codec, enc, subject.frames, *subject.depth, load_corpus(c), build_schedule(c), c.customize);
  save_checkpoint(run.dir() / "model.vftn", DiffusionModel(u).checkpoint());
  ContentEncoder with_subject = ContentEncoder::from_state(enc.state());
  build_prototypes(with_subject, {subject}, c.prototype_frames);
  save_checkpoint(run.dir() / "content.vftn", with_subject.state());
  run.summary() = {{"steps", rep.steps},
                   {"subject_style", subject.style_name},
                   {"subject_frames", subject.length()},
                   {"first_loss", rep.first_loss},
                   {"last_loss", rep.last_loss},
                   {"min_subject_per_batch", rep.min_subject_per_batch},
                   {"max_subject_per_batch", rep.max_subject_per_batch}};
}

void cmd_sweep(Run& run) {
  const auto& c = run.cfg();
  const Codec codec = load_codec(c);
  const ContentEncoder enc = load_content(c);
  const DiffusionModel dm = load_model(c);
  check_compatible(dm.ema, codec, enc);
  const NoiseSchedule sched = build_schedule(c);
  const auto items = make_eval_set(load_eval_corpus(c), enc, c.eval.n_frames, c.eval.stride, c.eval.seed);
  EditRequest base;
  base.t_s = c.edit.t_s;
  base.guidance = c.guidance;
  const auto rep = run_sweep(c.eval.axis, c.eval.values, items, EditModels{dm.ema, codec, sched}, enc, base);
  rep.write_csv(run.dir() / "metrics.csv");
  rep.write_gnuplot(run.dir() / "metrics.dat");
  json means = json::array();
  for (const auto& m : rep.means)
    means.push_back({{"value", m.value},
                     {"frame_consistency", m.frame_consistency},
                     {"prompt_consistency", m.prompt_consistency},
                     {"warped_mse", std::isfinite(m.warped_mse) ? json(m.warped_mse) : json(nullptr)}});
  run.summary() = {{"axis", to_string(rep.axis)},
                   {"items", items.size()},
                   {"rows", rep.rows.size()},
                   {"means", means},
                   {"spearman_frame", optional_number(rep.spearman_frame)},
                   {"spearman_prompt", optional_number(rep.spearman_prompt)},
                   {"spearman_warped", optional_number(rep.spearman_warped)}};
}

void cmd_eval(Run& run) {
  const auto& c = run.cfg();
  const ContentEncoder enc = load_content(c);
  const fs::path input = require_dir(c.paths.input, "input frame directory", "--input");
  const Tensor frames = read_frames(input);
  json& s = run.summary();
  s["frames"] = frames.dim(0);
  s["frame_consistency"] = frames.dim(0) >= 2 ? json(frame_consistency(frames, enc)) : json(nullptr);
  if (!c.paths.prompt.empty() || !c.edit.style.empty())
    s["prompt_consistency"] = prompt_consistency(frames, edit_content(c, enc, frames), enc);
  fs::path scene_dir = c.paths.scene;
  if (scene_dir.empty() && fs::exists(input / "clip.json")) scene_dir = input;
  if (!scene_dir.empty() && frames.dim(0) >= 2) {
    const ClipRecord ref = import_clip(scene_dir);
    std::vector<int> idx(static_cast<std::size_t>(frames.dim(0)));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    s["warped_mse"] = warped_mse(frames, ref.scene, idx);
  }
  write_json(run.dir() / "eval.json", s);
}

// Command line.

const std::map<std::string, std::string>& seed_keys() {
  static const std::map<std::string, std::string> keys = {
      {"gen-corpus", "corpus.seed"},      {"train-codec", "codec.train.seed"}, {"train-content", "content.train.seed"},
      {"train-diffusion", "train.seed"},  {"edit", "edit.seed"},           {"masked-edit", "edit.seed"},
      {"customize", "customize.seed"},    {"sweep", "eval.seed"},          {"eval", "eval.seed"}};
  return keys;
}

const std::map<std::string, std::string>& steps_keys() {
  static const std::map<std::string, std::string> keys = {{"train-codec", "codec.train.steps"},
                                                          {"train-content", "content.train.steps"},
                                                          {"customize", "customize.steps"},
                                                          {"edit", "guidance.steps"},
                                                          {"masked-edit", "guidance.steps"},
                                                          {"sweep", "guidance.steps"}};
  return keys;
}

// "a,b,c" as a JSON array of numbers.
std::string number_list(const std::string& s) {
  std::string out = "[";
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t comma = std::min(s.find(',', pos), s.size());
    std::string item = s.substr(pos, comma - pos);
    if (item.empty()) throw ConfigError("empty entry in list '" + s + "'");
    try {
      std::size_t used = 0;
      (void)std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("'" + item + "' is not a number");
    }
    out += (out.size() > 1 ? "," : "") + item;
    pos = comma + 1;
  }
  return out + "]";
}

// "kind:steps,..." as a JSON stage list.
std::string stage_list(const std::string& s) {
  json stages = json::array();
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t comma = std::min(s.find(',', pos), s.size());
    const std::string item = s.substr(pos, comma - pos);
    const std::size_t colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("stage '" + item + "' must be kind:steps");
    int steps = 0;
    try {
      steps = std::stoi(item.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError("stage '" + item + "' has no step count");
    }
    stages.push_back({{"kind", item.substr(0, colon)}, {"steps", steps}});
    pos = comma + 1;
  }
  return stages.dump();
}

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return kExitConfig;
    case ErrorCategory::data: return kExitData;
    case ErrorCategory::checkpoint: return kExitCheckpoint;
    case ErrorCategory::numeric: return kExitNumeric;
    case ErrorCategory::contract: return kExitContract;
  }
  return kExitInternal;
}

void make_absolute(std::string& p) {
  if (!p.empty()) p = fs::absolute(p).lexically_normal().string();
}

}  // namespace

std::vector<ClipRecord> load_corpus(const RunConfig& c) {
  if (c.paths.corpus.empty()) return generate_corpus(c.corpus);
  auto clips = import_corpus(require_dir(c.paths.corpus, "corpus directory", "--corpus"));
  if (clips.empty()) throw DataError("corpus directory holds no clips: " + c.paths.corpus);
  return clips;
}

std::vector<ClipRecord> load_eval_corpus(const RunConfig& c) {
  std::vector<ClipRecord> clips;
  if (!c.paths.eval_corpus.empty()) {
    clips = import_corpus(require_dir(c.paths.eval_corpus, "evaluation corpus", "--eval-corpus"));
  } else {
    CorpusSpec s = c.corpus;
    s.clips = c.eval.clips;
    s.seed = c.eval.corpus_seed;
    s.frames = std::max(s.frames, (c.eval.n_frames - 1) * c.eval.stride + 1);
    clips = generate_corpus(s);
  }
  if (clips.empty()) throw DataError("evaluation corpus holds no clips");
  if (static_cast<int>(clips.size()) > c.eval.clips) clips.resize(static_cast<std::size_t>(c.eval.clips));
  return clips;
}

ClipRecord load_subject(const RunConfig& c) {
  if (!c.paths.subject.empty()) return import_clip(require_dir(c.paths.subject, "subject clip", "--subject"));
  const int style = style_index(c.subject.style);
  if (style < c.corpus.styles)
    spdlog::warn("subject style '{}' also occurs in the training corpus", c.subject.style);
  Rng rng(c.subject.seed);
  SceneSpec scene = random_scene(rng, style, c.subject.frames, c.corpus.height, c.corpus.width, c.corpus.min_shapes,
                                 c.corpus.max_shapes);
  ClipRecord rec = generate_clip(scene);
  rec.id = "subject_" + c.subject.style;
  return rec;
}

namespace {

std::vector<std::int64_t> spread(std::int64_t n, int k) {
  const std::int64_t m = std::min<std::int64_t>(n, k);
  std::vector<std::int64_t> idx;
  for (std::int64_t i = 0; i < m; ++i) idx.push_back(i * n / m);
  return idx;
}

}  // namespace

Tensor sample_frames(const std::vector<ClipRecord>& clips, int per_clip, std::vector<int>* labels) {
  std::vector<Tensor> parts;
  for (const auto& clip : clips)
    for (std::int64_t i : spread(clip.frames.dim(0), per_clip)) {
      parts.push_back(slice(clip.frames, 0, i, 1));
      if (labels) labels->push_back(clip.style_id);
    }
  if (parts.empty()) throw DataError("no frames to sample");
  return concat(parts, 0).detach();
}

Tensor sample_depth_rgb(const std::vector<ClipRecord>& clips, int per_clip) {
  std::vector<Tensor> parts;
  for (const auto& clip : clips) {
    if (!clip.depth) continue;
    for (std::int64_t i : spread(clip.depth->dim(0), per_clip)) {
      const Tensor d = add_scalar(scale(slice(*clip.depth, 0, i, 1), 2.0f), -1.0f);
      parts.push_back(concat({d, d, d}, 1));
    }
  }
  if (parts.empty()) return Tensor();
  return concat(parts, 0).detach();
}

Codec fit_codec(const RunConfig& c, const std::vector<ClipRecord>& corpus, CodecTrainReport* report) {
  if (corpus.empty()) throw DataError("codec training needs at least one clip");
  const std::size_t held = corpus.size() >= 2 ? std::max<std::size_t>(1, corpus.size() / 8) : 0;
  const std::vector<ClipRecord> train(corpus.begin(), corpus.end() - static_cast<std::ptrdiff_t>(held));
  const std::vector<ClipRecord> heldout = held ? std::vector<ClipRecord>(corpus.end() - static_cast<std::ptrdiff_t>(held), corpus.end()) : train;
  auto with_depth = [&](const std::vector<ClipRecord>& clips) {
    const Tensor f = sample_frames(clips, c.frames_per_clip);
    const Tensor d = sample_depth_rgb(clips, std::max(1, c.frames_per_clip / 2));
    return d.defined() ? concat({f, d}, 0).detach() : f;
  };
  Codec codec(c.codec, c.codec_train.seed);
  const auto rep = train_codec(codec, with_depth(train), with_depth(heldout), c.codec_train);
  if (report) *report = rep;
  return codec;
}

void build_prototypes(ContentEncoder& enc, const std::vector<ClipRecord>& clips, int max_frames) {
  std::map<int, std::vector<const ClipRecord*>> by_style;
  for (const auto& clip : clips) by_style[clip.style_id].push_back(&clip);
  for (const auto& [style, members] : by_style) {
    std::vector<Tensor> frames;
    std::int64_t longest = 0;
    for (const auto* m : members) longest = std::max(longest, m->frames.dim(0));
    // Round robin over clips so every clip contributes before any repeats.
    for (std::int64_t j = 0; j < longest && static_cast<int>(frames.size()) < max_frames; ++j)
      for (const auto* m : members) {
        if (j >= m->frames.dim(0) || static_cast<int>(frames.size()) >= max_frames) continue;
        frames.push_back(slice(m->frames, 0, j, 1));
      }
    enc.set_prototype(members.front()->style_name, concat(frames, 0));
  }
}

ContentEncoder fit_content(const RunConfig& c, const std::vector<ClipRecord>& corpus, ContentTrainReport* report) {
  std::vector<int> labels;
  const Tensor frames = sample_frames(corpus, c.frames_per_clip, &labels);
  ContentEncoder enc(c.content, c.content_train.seed);
  const auto rep = train_content_encoder(enc, frames, labels, c.content_train);
  if (report) *report = rep;
  build_prototypes(enc, corpus, c.prototype_frames);
  return enc;
}

VideoInput read_video(const fs::path& input, const fs::path& depth_dir) {
  VideoInput v;
  if (fs::exists(input / "clip.json")) {
    ClipRecord rec = import_clip(input);
    v.frames = rec.frames;
    if (rec.depth) v.depth = *rec.depth;
    v.scene = rec.scene;
  } else {
    v.frames = read_frames(input);
  }
  if (!depth_dir.empty())
    v.depth = ingest_depth(depth_dir);
  else if (!v.depth.defined() && fs::exists(input / "depth_00000.png"))
    v.depth = ingest_depth(input);
  if (!v.depth.defined()) throw DataError("no depth maps for " + input.string() + " (add depth_*.png or pass --depth)");
  if (v.depth.dim(0) != v.frames.dim(0))
    throw DataError("found " + std::to_string(v.depth.dim(0)) + " depth maps for " + std::to_string(v.frames.dim(0)) +
                    " frames");
  return v;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Structure- and content-guided video diffusion toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, run_dir, log_level = "info";
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flags;
  app.add_option("--config", config_path, "JSON run config; flags override its keys")->check(CLI::ExistingFile);
  app.add_option("--run-dir", run_dir, "Directory for all outputs of this run")->required();
  app.add_option("--set", sets, "Override a config key, e.g. --set guidance.omega=5");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  struct Flag {
    const char* name;
    const char* key;
    const char* help;
    std::function<std::string(const std::string&)> convert;
  };
  auto identity = [](const std::string& s) { return s; };
  auto quoted = [](const std::string& s) { return json(s).dump(); };
  const std::vector<Flag> common = {
      {"--threads", "threads", "Worker threads (0 keeps the default)", identity},
      {"--corpus", "paths.corpus", "Corpus directory (default: generated from the config)", quoted},
      {"--codec", "paths.codec", "Codec checkpoint", quoted},
      {"--content", "paths.content", "Content encoder checkpoint", quoted},
      {"--model", "paths.model", "Diffusion model checkpoint", quoted},
  };
  const std::map<std::string, std::vector<Flag>> specific = {
      {"gen-corpus",
       {{"--clips", "corpus.clips", "Number of clips", identity},
        {"--frames", "corpus.frames", "Frames per clip", identity},
        {"--size", "corpus.height", "Frame height and width", identity},
        {"--subject-style", "subject.style", "Held-out style of the subject clip", quoted}}},
      {"train-codec", {}},
      {"train-content", {}},
      {"train-diffusion", {{"--stages", "train.stages", "Stage plan, e.g. image_only:1000,joint_temporal:12000", stage_list}}},
      {"edit", {}},
      {"masked-edit", {{"--mask", "paths.mask", "Directory of mask_%05d.png files (white = keep)", quoted}}},
      {"customize", {{"--subject", "paths.subject", "Subject clip directory (frames and depth)", quoted}}},
      {"sweep",
       {{"--axis", "eval.axis", "omega_t, t_s or omega", quoted},
        {"--values", "eval.values", "Comma-separated axis values", number_list},
        {"--eval-corpus", "paths.eval_corpus", "Evaluation corpus directory", quoted},
        {"--clips", "eval.clips", "Evaluation clips", identity}}},
      {"eval", {{"--scene", "paths.scene", "Clip directory whose motion scores the warped error", quoted}}},
  };
  const std::vector<Flag> editing = {
      {"--input", "paths.input", "Input frame directory", quoted},
      {"--depth", "paths.depth", "Depth directory (depth_%05d.png)", quoted},
      {"--style", "edit.style", "Target style prototype", quoted},
      {"--prompt", "paths.prompt", "Frame directory used as the content prompt", quoted},
      {"--ts", "edit.t_s", "Structure blur level", identity},
      {"--omega", "guidance.omega", "Content guidance scale", identity},
      {"--omega-t", "guidance.omega_t", "Temporal guidance scale", identity},
      {"--eta", "guidance.eta", "DDIM stochasticity", identity},
  };

  std::map<std::string, CLI::App*> subs;
  auto add_flag = [&](CLI::App* sub, const Flag& f) {
    sub->add_option_function<std::string>(
        f.name,
        [&flags, f](const std::string& v) {
          try {
            flags.emplace_back(f.key, f.convert(v));
          } catch (const ConfigError& e) {
            throw CLI::ValidationError(f.name, e.what());
          }
        },
        f.help);
  };
  for (const auto& [name, own] : specific) {
    CLI::App* sub = app.add_subcommand(name);
    subs[name] = sub;
    for (const auto& f : common) add_flag(sub, f);
    for (const auto& f : own) add_flag(sub, f);
    const std::string n = name;
    sub->add_option_function<std::string>(
        "--seed", [&flags, n](const std::string& v) { flags.emplace_back(seed_keys().at(n), v); }, "Seed of this command");
    if (steps_keys().count(name))
      sub->add_option_function<std::string>(
          "--steps", [&flags, n](const std::string& v) { flags.emplace_back(steps_keys().at(n), v); },
          "Training or sampling steps");
    if (name == "edit" || name == "masked-edit" || name == "sweep" || name == "eval")
      for (const auto& f : editing)
        if (name != "eval" || std::string(f.name) == "--input" || std::string(f.name) == "--style" ||
            std::string(f.name) == "--prompt")
          add_flag(sub, f);
  }
  subs["gen-corpus"]->description("Render the synthetic corpus and a held-out subject clip");
  subs["train-codec"]->description("Train the frame autoencoder");
  subs["train-content"]->description("Train the content encoder and build style prototypes");
  subs["train-diffusion"]->description("Run the staged diffusion training");
  subs["edit"]->description("Edit a video: keep its depth structure, replace its content");
  subs["masked-edit"]->description("Edit only where the mask is black");
  subs["customize"]->description("Finetune the model on a subject clip");
  subs["sweep"]->description("Sweep a control knob over an evaluation set and score the edits");
  subs["eval"]->description("Score a frame directory");

  std::vector<std::string> args(argv, argv + argc);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  spdlog::set_level(spdlog::level::from_str(log_level));
  std::string command;
  for (const auto& [name, sub] : subs)
    if (sub->parsed()) command = name;

  try {
    json doc = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      doc = json::parse(in, nullptr, false);
      if (doc.is_discarded()) throw ConfigError("config " + config_path + " is not valid JSON");
    }
    for (const auto& s : sets) {
      const std::size_t eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      set_key(doc, s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [key, value] : flags) {
      set_key(doc, key, value);
      if (key == "corpus.height") set_key(doc, "corpus.width", value);
    }
    RunConfig cfg = config_from_json(doc);
    for (std::string* p : {&cfg.paths.corpus, &cfg.paths.eval_corpus, &cfg.paths.codec, &cfg.paths.content,
                           &cfg.paths.model, &cfg.paths.input, &cfg.paths.depth, &cfg.paths.mask, &cfg.paths.subject,
                           &cfg.paths.prompt, &cfg.paths.scene})
      make_absolute(*p);
    if (cfg.threads > 0) set_num_threads(std::min(cfg.threads, num_threads()));

    Run run(run_dir, command, args, cfg);
    spdlog::info("{}: run directory {}", command, fs::absolute(run_dir).string());
    if (command == "gen-corpus") cmd_gen_corpus(run);
    else if (command == "train-codec") cmd_train_codec(run);
    else if (command == "train-content") cmd_train_content(run);
    else if (command == "train-diffusion") cmd_train_diffusion(run);
    else if (command == "edit") cmd_edit(run, false);
    else if (command == "masked-edit") cmd_edit(run, true);
    else if (command == "customize") cmd_customize(run);
    else if (command == "sweep") cmd_sweep(run);
    else if (command == "eval") cmd_eval(run);
    run.finish();
    spdlog::info("{}: done", command);
    return kExitOk;
  } catch (const Error& e) {
    spdlog::error("{} error: {}", category_name(e.category()), e.what());
    return exit_code(e.category());
  } catch (const fs::filesystem_error& e) {
    spdlog::error("data error: {}", e.what());
    return kExitData;
  } catch (const std::bad_alloc&) {
    spdlog::error("out of memory");
    return kExitInternal;
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return kExitInternal;
  }
}

}  // namespace veil::app
