#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "veil/trainer.hpp"

namespace veil::app {

struct ScheduleConfig {
  int steps = 1000;
  ScheduleKind kind = ScheduleKind::linear;
  double beta_min = 1e-4;
  double beta_max = 0.02;
};

struct EditConfig {
  /// Style prototype used as content; empty means the input's own first frame.
  std::string style;
  int t_s = 0;
  std::uint64_t seed = 0;
};

struct EvalConfig {
  int clips = 16;
  int n_frames = 8;
  int stride = 4;
  std::uint64_t seed = 0;
  /// Seed of the generated evaluation corpus when no corpus path is given.
  std::uint64_t corpus_seed = 1000;
  SweepAxis axis = SweepAxis::omega_t;
  std::vector<double> values = {0.5, 0.75, 1.0, 1.25, 1.5};
};

struct SubjectConfig {
  std::string style = "aurora";
  int frames = 20;
  std::uint64_t seed = 77;
};

/// Files and directories a command reads. Empty entries fall back to the
/// generated corpus or to the run directory of the producing command.
struct PathConfig {
  std::string corpus;
  std::string eval_corpus;
  std::string codec;
  std::string content;
  std::string model;
  std::string input;
  std::string depth;
  std::string mask;
  std::string subject;
  /// Frame directory whose mean embedding replaces the style prototype.
  std::string prompt;
  /// Clip directory whose scene drives the warped error in eval.
  std::string scene;
};

struct RunConfig {
  int threads = 0;  // 0 keeps the default (hardware, capped by VEIL_THREADS)
  ScheduleConfig schedule;
  CorpusSpec corpus;
  SubjectConfig subject;
  CodecConfig codec;
  CodecTrainConfig codec_train;
  ContentConfig content;
  ContentTrainConfig content_train;
  /// Frames per style used to build each prototype.
  int prototype_frames = 64;
  /// Evenly spaced frames taken from each clip for codec and encoder training.
  int frames_per_clip = 4;
  UNetConfig unet;
  std::uint64_t unet_seed = 0;
  DiffusionTrainConfig diffusion;
  GuidanceConfig guidance;
  CustomizeConfig customize;
  EditConfig edit;
  EvalConfig eval;
  PathConfig paths;
};

/// Reads a config document; unknown keys and mistyped values throw ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& c);
RunConfig load_config(const std::filesystem::path& path);

/// Sets a dotted key ("guidance.omega") in a config document. The value is
/// parsed as JSON when possible and taken as a string otherwise.
void set_key(nlohmann::json& doc, const std::string& dotted, const std::string& value);

/// Throws ConfigError on values no module accepts.
void validate(const RunConfig& c);

NoiseSchedule build_schedule(const RunConfig& c);

}  // namespace veil::app
