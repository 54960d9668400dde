#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace veil::app {

/// Exit codes by error category.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitCheckpoint = 4,
  kExitNumeric = 5,
  kExitContract = 6,
};

/// Parses the command line, runs one command and maps failures to exit codes.
int run_cli(int argc, const char* const* argv);

/// The corpus under paths.corpus, or the one described by the corpus spec.
std::vector<ClipRecord> load_corpus(const RunConfig& c);
/// Evaluation clips: paths.eval_corpus, or eval.clips generated clips from eval.corpus_seed.
std::vector<ClipRecord> load_eval_corpus(const RunConfig& c);
/// The subject clip under paths.subject, or one generated from the subject spec.
ClipRecord load_subject(const RunConfig& c);

/// frames_per_clip evenly spaced frames of each clip, [N, 3, H, W], with
/// their style labels when `labels` is given.
Tensor sample_frames(const std::vector<ClipRecord>& clips, int per_clip, std::vector<int>* labels = nullptr);
/// Depth maps of the same frames replicated to three channels in [-1, 1].
Tensor sample_depth_rgb(const std::vector<ClipRecord>& clips, int per_clip);

Codec fit_codec(const RunConfig& c, const std::vector<ClipRecord>& corpus, CodecTrainReport* report = nullptr);
/// Trains the encoder and stores one prototype per corpus style.
ContentEncoder fit_content(const RunConfig& c, const std::vector<ClipRecord>& corpus,
                           ContentTrainReport* report = nullptr);
/// Adds prototypes for every style present in `clips`.
void build_prototypes(ContentEncoder& enc, const std::vector<ClipRecord>& clips, int max_frames);

struct VideoInput {
  Tensor frames;  // [n, 3, H, W]
  Tensor depth;   // [n, 1, H, W]
  std::optional<SceneSpec> scene;
};
/// Reads a clip directory (with clip.json) or a bare frame directory whose
/// depth comes from `depth_dir` or from depth_*.png files next to the frames.
VideoInput read_video(const std::filesystem::path& input, const std::filesystem::path& depth_dir);

}  // namespace veil::app
