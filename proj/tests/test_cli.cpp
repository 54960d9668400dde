#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "commands.hpp"
#include "doctest.h"
#include "veil/error.hpp"
#include "veil/image_io.hpp"
#include "veil/ops.hpp"
#include "veil/params.hpp"

using namespace veil;
using namespace veil::app;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kSmokeConfig = fs::path(VEIL_SOURCE_DIR) / "configs" / "smoke.json";

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "veil_cli");
  args.push_back("--log-level=off");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

// A small trained pipeline shared by all cases.
struct Pipeline {
  fs::path root;
  std::vector<std::string> models;

  Pipeline() {
    root = fs::temp_directory_path() / ("veil_cli_" + std::to_string(::getpid()));
    fs::remove_all(root);
    const std::string cfg = kSmokeConfig.string(), corpus = (root / "gen" / "corpus").string();
    REQUIRE(cli({"gen-corpus", "--config", cfg, "--run-dir", (root / "gen").string()}) == 0);
    REQUIRE(cli({"train-codec", "--config", cfg, "--run-dir", (root / "codec").string(), "--corpus", corpus}) == 0);
    REQUIRE(cli({"train-content", "--config", cfg, "--run-dir", (root / "content").string(), "--corpus", corpus}) == 0);
    models = {"--codec", (root / "codec" / "codec.vftn").string(), "--content", (root / "content" / "content.vftn").string()};
    auto args = models;
    args.insert(args.begin(), {"train-diffusion", "--config", cfg, "--run-dir", (root / "diff").string(), "--corpus", corpus});
    REQUIRE(cli(args) == 0);
    models.push_back("--model");
    models.push_back((root / "diff" / "model.vftn").string());
  }
  ~Pipeline() { fs::remove_all(root); }

  int run(const std::string& command, const std::string& dir, std::vector<std::string> extra) const {
    std::vector<std::string> args = {command, "--config", kSmokeConfig.string(), "--run-dir", (root / dir).string()};
    args.insert(args.end(), models.begin(), models.end());
    args.insert(args.end(), extra.begin(), extra.end());
    return cli(args);
  }
  std::string clip(int i) const {
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%05d", i);
    return (root / "gen" / "corpus" / name).string();
  }
};

Pipeline& pipeline() {
  static Pipeline p;
  return p;
}

std::vector<std::uint16_t> pixels(const fs::path& dir) {
  std::vector<std::uint16_t> all;
  for (const auto& f : numbered_pngs(dir, "frame_")) {
    const Image img = read_png(f);
    all.insert(all.end(), img.samples.begin(), img.samples.end());
  }
  return all;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

}  // namespace

TEST_CASE("edit is deterministic") {
  const auto& p = pipeline();
  const std::vector<std::string> args = {"--input", p.clip(0), "--style", "ocean", "--ts", "2", "--omega", "7.5",
                                         "--omega-t", "1.0", "--seed", "7"};
  REQUIRE(p.run("edit", "edit_a", args) == 0);
  REQUIRE(p.run("edit", "edit_b", args) == 0);
  const auto a = pixels(p.root / "edit_a" / "out"), b = pixels(p.root / "edit_b" / "out");
  CHECK(a.size() == 6u * 3u * 16u * 16u);
  CHECK(a == b);
  REQUIRE(p.run("edit", "edit_c", {"--input", p.clip(0), "--style", "ocean", "--ts", "2", "--seed", "8"}) == 0);
  CHECK(pixels(p.root / "edit_c" / "out") != a);

  SUBCASE("rerunning from the resolved config reproduces the outputs") {
    const fs::path cfg = p.root / "edit_a" / "config.json";
    REQUIRE(cli({"edit", "--config", cfg.string(), "--run-dir", (p.root / "edit_rerun").string()}) == 0);
    CHECK(pixels(p.root / "edit_rerun" / "out") == a);
    const json m1 = read_json(p.root / "edit_a" / "manifest.json"), m2 = read_json(p.root / "edit_rerun" / "manifest.json");
    CHECK(m1["outputs"] == m2["outputs"]);
    CHECK(read_json(cfg) == read_json(p.root / "edit_rerun" / "config.json"));
  }
}

TEST_CASE("sweep writes one row per clip and value") {
  const auto& p = pipeline();
  REQUIRE(p.run("sweep", "sweep", {"--axis", "omega_t", "--values", "0.5,1.0,1.5"}) == 0);
  std::ifstream in(p.root / "sweep" / "metrics.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "clip_id,axis,value,frame_consistency,prompt_consistency,warped_mse");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  const json m = read_json(p.root / "sweep" / "manifest.json");
  CHECK(m["summary"]["items"] == 2);
  CHECK(rows == 3 * 2);
  CHECK(fs::exists(p.root / "sweep" / "metrics.dat"));
}

TEST_CASE("masked edit with an all-keep mask returns the codec reconstruction") {
  const auto& p = pipeline();
  const fs::path masks = p.root / "masks";
  fs::create_directories(masks);
  for (int i = 0; i < 6; ++i) {
    Image img;
    img.width = img.height = 16;
    img.channels = 1;
    img.bit_depth = 8;
    img.samples.assign(256, 255);
    char name[32];
    std::snprintf(name, sizeof(name), "mask_%05d.png", i);
    write_png(masks / name, img);
  }
  REQUIRE(p.run("masked-edit", "masked", {"--input", p.clip(1), "--mask", masks.string(), "--style", "ocean"}) == 0);

  const Codec codec = Codec::from_state(load_checkpoint(p.root / "codec" / "codec.vftn"));
  const ClipRecord clip = import_clip(p.clip(1));
  Tensor recon;
  {
    NoGradGuard ng;
    recon = reshape(codec.decode(codec.encode(reshape(clip.frames, {1, 6, 3, 16, 16}))), {6, 3, 16, 16});
  }
  write_frames(recon, p.root / "recon");
  CHECK(pixels(p.root / "masked" / "out") == pixels(p.root / "recon"));
}

TEST_CASE("customize and eval produce their reports") {
  const auto& p = pipeline();
  REQUIRE(p.run("customize", "cust", {"--corpus", (p.root / "gen" / "corpus").string(), "--subject",
                                      (p.root / "gen" / "subject").string()}) == 0);
  const json m = read_json(p.root / "cust" / "manifest.json");
  CHECK(m["summary"]["min_subject_per_batch"] == 1);
  CHECK(m["summary"]["max_subject_per_batch"] == 1);
  const ContentEncoder enc = ContentEncoder::from_state(load_checkpoint(p.root / "cust" / "content.vftn"));
  CHECK(enc.has_prototype("aurora"));

  REQUIRE(cli({"eval", "--config", kSmokeConfig.string(), "--run-dir", (p.root / "eval").string(), "--content",
               (p.root / "content" / "content.vftn").string(), "--input", p.clip(0), "--style", "ocean"}) == 0);
  const json e = read_json(p.root / "eval" / "eval.json");
  CHECK(e["frame_consistency"].get<double>() <= 1.0);
  CHECK(e["prompt_consistency"].get<double>() >= -1.0);
  CHECK(e.contains("warped_mse"));
}

TEST_CASE("failures map to categorized exit codes") {
  const auto& p = pipeline();
  const std::string dir = (p.root / "fail").string();
  CHECK(cli({"edit", "--run-dir", dir, "--input", p.clip(0)}) == kExitCheckpoint);
  CHECK(cli({"edit", "--run-dir", dir, "--set", "guidance.omgea=2"}) == kExitConfig);
  CHECK(cli({"edit", "--run-dir", dir, "--set", "guidance.steps=\"many\""}) == kExitConfig);
  CHECK(p.run("edit", "fail", {"--input", (p.root / "missing").string()}) == kExitData);
  CHECK(p.run("edit", "fail", {"--input", p.clip(0), "--style", "plaid"}) == kExitConfig);
  CHECK(cli({"sweep", "--run-dir", dir, "--values", "0.5,x"}) == kExitConfig);
  CHECK(cli({"edit", "--run-dir", dir, "--no-such-flag"}) == kExitConfig);
  CHECK(cli({"--run-dir", dir}) == kExitConfig);
}

TEST_CASE("config documents") {
  const RunConfig d;
  const json j = config_to_json(d);
  CHECK(config_to_json(config_from_json(j)) == j);
  CHECK(j["train"]["stages"].size() == 4);
  json bad = j;
  bad["unet"]["extra"] = 1;
  CHECK_THROWS_AS(config_from_json(bad), ConfigError);
  json doc = json::object();
  set_key(doc, "guidance.omega", "5");
  set_key(doc, "edit.style", "ocean");
  const RunConfig c = config_from_json(doc);
  CHECK(c.guidance.omega == 5.0f);
  CHECK(c.edit.style == "ocean");
  const RunConfig smoke = load_config(kSmokeConfig);
  CHECK(smoke.unet.latent_size == 4);
}
