#include "run_config.hpp"

#include <fstream>
#include <set>
#include <type_traits>

#include "veil/error.hpp"

namespace veil::app {

using nlohmann::json;

namespace {

template <class T>
struct is_vector : std::false_type {};
template <class T>
struct is_vector<std::vector<T>> : std::true_type {};

void read_value(const json& j, TrainStage& s);

template <class T>
void read_value(const json& j, T& out) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) throw ConfigError("expected a boolean");
    out = j.get<bool>();
  } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
    if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<std::int64_t>() < 0))
      throw ConfigError("expected a non-negative integer");
    out = j.get<T>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_integer()) throw ConfigError("expected an integer");
    out = j.get<T>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) throw ConfigError("expected a number");
    out = j.get<T>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) throw ConfigError("expected a string");
    out = j.get<std::string>();
  } else if constexpr (std::is_same_v<T, ScheduleKind>) {
    std::string s;
    read_value(j, s);
    out = parse_schedule_kind(s);
  } else if constexpr (std::is_same_v<T, LossWeighting>) {
    std::string s;
    read_value(j, s);
    out = parse_loss_weighting(s);
  } else if constexpr (std::is_same_v<T, SweepAxis>) {
    std::string s;
    read_value(j, s);
    out = parse_sweep_axis(s);
  } else if constexpr (is_vector<T>::value) {
    if (!j.is_array()) throw ConfigError("expected an array");
    T v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) read_value(j[i], v[i]);
    out = std::move(v);
  } else {
    static_assert(sizeof(T) == 0, "unsupported config field type");
  }
}

template <class T>
json write_value(const T& v) {
  if constexpr (std::is_same_v<T, ScheduleKind> || std::is_same_v<T, LossWeighting> || std::is_same_v<T, SweepAxis>) {
    return to_string(v);
  } else if constexpr (std::is_same_v<T, TrainStage>) {
    return json{{"kind", to_string(v.kind)}, {"steps", v.steps}};
  } else if constexpr (is_vector<T>::value) {
    json a = json::array();
    for (const auto& e : v) a.push_back(write_value(e));
    return a;
  } else {
    return v;
  }
}

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError((path_.empty() ? std::string("config") : path_) + " must be an object");
  }

  template <class T>
  void field(const char* key, T& out) {
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    try {
      read_value(*it, out);
    } catch (const json::exception& e) {
      throw ConfigError(path_ + key + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(path_ + key + ": " + e.what());
    }
  }

  template <class F>
  void object(const char* key, F&& f) {
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    Reader sub(*it, path_ + key + ".");
    f(sub);
    sub.finish();
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + path_ + k + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

class Writer {
 public:
  explicit Writer(json& j) : j_(j) { j_ = json::object(); }

  template <class T>
  void field(const char* key, const T& v) {
    j_[key] = write_value(v);
  }

  template <class F>
  void object(const char* key, F&& f) {
    Writer sub(j_[key]);
    f(sub);
  }

 private:
  json& j_;
};

void read_value(const json& j, TrainStage& s) {
  Reader r(j, "stage.");
  std::string kind;
  r.field("kind", kind);
  r.field("steps", s.steps);
  r.finish();
  if (kind.empty()) throw ConfigError("stage needs a kind");
  s.kind = parse_stage_kind(kind);
}

// One field list serves both directions.
template <class V, class C>
void visit(V& v, C& c) {
  v.field("threads", c.threads);
  v.field("prototype_frames", c.prototype_frames);
  v.field("frames_per_clip", c.frames_per_clip);
  v.object("schedule", [&](auto& s) {
    s.field("steps", c.schedule.steps);
    s.field("kind", c.schedule.kind);
    s.field("beta_min", c.schedule.beta_min);
    s.field("beta_max", c.schedule.beta_max);
  });
  v.object("corpus", [&](auto& s) {
    s.field("clips", c.corpus.clips);
    s.field("frames", c.corpus.frames);
    s.field("height", c.corpus.height);
    s.field("width", c.corpus.width);
    s.field("styles", c.corpus.styles);
    s.field("min_shapes", c.corpus.min_shapes);
    s.field("max_shapes", c.corpus.max_shapes);
    s.field("seed", c.corpus.seed);
  });
  v.object("subject", [&](auto& s) {
    s.field("style", c.subject.style);
    s.field("frames", c.subject.frames);
    s.field("seed", c.subject.seed);
  });
  v.object("codec", [&](auto& s) {
    s.field("latent_channels", c.codec.latent_channels);
    s.field("factor", c.codec.factor);
    s.field("base", c.codec.base);
    s.object("train", [&](auto& t) {
      t.field("steps", c.codec_train.steps);
      t.field("lr", c.codec_train.lr);
      t.field("batch", c.codec_train.batch);
      t.field("seed", c.codec_train.seed);
      t.field("log_every", c.codec_train.log_every);
    });
  });
  v.object("content", [&](auto& s) {
    s.field("dim", c.content.dim);
    s.field("base", c.content.base);
    s.field("temperature", c.content.temperature);
    s.object("train", [&](auto& t) {
      t.field("steps", c.content_train.steps);
      t.field("lr", c.content_train.lr);
      t.field("batch", c.content_train.batch);
      t.field("seed", c.content_train.seed);
      t.field("log_every", c.content_train.log_every);
    });
  });
  v.object("unet", [&](auto& s) {
    s.field("base", c.unet.base);
    s.field("mults", c.unet.mults);
    s.field("attention_resolutions", c.unet.attention_resolutions);
    s.field("res_blocks", c.unet.res_blocks);
    s.field("content_dim", c.unet.content_dim);
    s.field("latent_channels", c.unet.latent_channels);
    s.field("latent_size", c.unet.latent_size);
    s.field("max_frames", c.unet.max_frames);
    s.field("seed", c.unet_seed);
  });
  v.object("train", [&](auto& s) {
    s.field("stages", c.diffusion.stages);
    s.object("batch", [&](auto& b) {
      b.field("batch_size", c.diffusion.batch.batch_size);
      b.field("image_prob", c.diffusion.batch.image_prob);
      b.field("n_frames", c.diffusion.batch.n_frames);
      b.field("stride", c.diffusion.batch.stride);
    });
    s.field("lr", c.diffusion.lr);
    s.field("grad_clip", c.diffusion.grad_clip);
    s.field("p_drop", c.diffusion.p_drop);
    s.field("weight_ema", c.diffusion.weight_ema);
    s.field("loss_ema", c.diffusion.loss_ema);
    s.field("max_ts", c.diffusion.max_ts);
    s.field("loss_weighting", c.diffusion.loss.weighting);
    s.field("seed", c.diffusion.seed);
    s.field("log_every", c.diffusion.log_every);
  });
  v.object("guidance", [&](auto& s) {
    s.field("omega", c.guidance.omega);
    s.field("omega_t", c.guidance.omega_t);
    s.field("eta", c.guidance.eta);
    s.field("steps", c.guidance.steps);
  });
  v.object("customize", [&](auto& s) {
    s.field("steps", c.customize.steps);
    s.field("batch", c.customize.batch);
    s.field("lr", c.customize.lr);
    s.field("grad_clip", c.customize.grad_clip);
    s.field("p_drop", c.customize.p_drop);
    s.field("max_ts", c.customize.max_ts);
    s.field("loss_weighting", c.customize.loss.weighting);
    s.field("seed", c.customize.seed);
    s.field("log_every", c.customize.log_every);
  });
  v.object("edit", [&](auto& s) {
    s.field("style", c.edit.style);
    s.field("t_s", c.edit.t_s);
    s.field("seed", c.edit.seed);
  });
  v.object("eval", [&](auto& s) {
    s.field("clips", c.eval.clips);
    s.field("n_frames", c.eval.n_frames);
    s.field("stride", c.eval.stride);
    s.field("seed", c.eval.seed);
    s.field("corpus_seed", c.eval.corpus_seed);
    s.field("axis", c.eval.axis);
    s.field("values", c.eval.values);
  });
  v.object("paths", [&](auto& s) {
    s.field("corpus", c.paths.corpus);
    s.field("eval_corpus", c.paths.eval_corpus);
    s.field("codec", c.paths.codec);
    s.field("content", c.paths.content);
    s.field("model", c.paths.model);
    s.field("input", c.paths.input);
    s.field("depth", c.paths.depth);
    s.field("mask", c.paths.mask);
    s.field("subject", c.paths.subject);
    s.field("prompt", c.paths.prompt);
    s.field("scene", c.paths.scene);
  });
}

}  // namespace

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Reader r(j, "");
  visit(r, c);
  r.finish();
  validate(c);
  return c;
}

json config_to_json(const RunConfig& c) {
  json j;
  Writer w(j);
  visit(w, c);
  return j;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void set_key(json& doc, const std::string& dotted, const std::string& value) {
  if (dotted.empty()) throw ConfigError("empty config key");
  json* node = &doc;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t dot = dotted.find('.', pos);
    const std::string key = dotted.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (key.empty()) throw ConfigError("malformed config key '" + dotted + "'");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[key];
    pos = dot + 1;
  }
}

void validate(const RunConfig& c) {
  if (c.threads < 0) throw ConfigError("threads must be >= 0");
  if (c.schedule.steps < 1) throw ConfigError("schedule.steps must be >= 1");
  if (c.frames_per_clip < 1) throw ConfigError("frames_per_clip must be >= 1");
  if (c.prototype_frames < 1) throw ConfigError("prototype_frames must be >= 1");
  validate_stages(c.diffusion.stages);
  c.guidance.validate();
  if (c.edit.t_s < 0 || c.edit.t_s > kMaxStructureLevel)
    throw ConfigError("edit.t_s must lie in [0, " + std::to_string(kMaxStructureLevel) + "]");
  if (c.unet.content_dim != c.content.dim) throw ConfigError("unet.content_dim must equal content.dim");
  if (c.unet.latent_channels != c.codec.latent_channels)
    throw ConfigError("unet.latent_channels must equal codec.latent_channels");
  if (c.corpus.height % c.codec.factor != 0 || c.corpus.height / c.codec.factor != c.unet.latent_size ||
      c.corpus.width != c.corpus.height)
    throw ConfigError("unet.latent_size must equal corpus.height / codec.factor on square frames");
  if (c.eval.clips < 1 || c.eval.n_frames < 1 || c.eval.stride < 1) throw ConfigError("eval sizes must be positive");
  if (c.customize.batch < 2 || c.customize.batch % 2 != 0) throw ConfigError("customize.batch must be even and >= 2");
  if (c.subject.frames < 1) throw ConfigError("subject.frames must be >= 1");
}

NoiseSchedule build_schedule(const RunConfig& c) {
  return make_schedule(c.schedule.steps, c.schedule.kind, c.schedule.beta_min, c.schedule.beta_max);
}

}  // namespace veil::app
