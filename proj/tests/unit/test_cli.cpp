// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "rsr/analysis/export.hpp"
#include "rsr/cli/checkpoint.hpp"
#include "rsr/cli/commands.hpp"
#include "rsr/cli/config.hpp"
#include "rsr/cli/gradcheck_suite.hpp"
#include "rsr/cli/image_io.hpp"
#include "rsr/diffusion/sample.hpp"

namespace fs = std::filesystem;
using namespace rsr;
using namespace rsr::cli;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("rsr_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

const char* kSmokeConfig =
    "# smoke run\n"
    "seed = 7\n"
    "dataset_size = 128\n"
    "pretrain_steps = 100\n"
    "finetune_steps = 100\n"
    "log_every = 50\n"
    "sample_chunk = 8\n";

// One trained 200-step model shared by the slower tests.
class TrainedModel : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("trained");
    analysis::write_text_file(*dir_ / "smoke.ini", kSmokeConfig);
    std::ostringstream out, err;
    code_ = cmd_train({.config = *dir_ / "smoke.ini", .out = *dir_ / "run"}, out, err);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path ckpt() { return *dir_ / "run" / "model.ckpt"; }

  static TempDir* dir_;
  static int code_;
};
TempDir* TrainedModel::dir_ = nullptr;
int TrainedModel::code_ = -1;

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  RunConfig a;
  const auto text = serialize_config(a);
  EXPECT_EQ(parse_config(text), a);
  EXPECT_EQ(serialize_config(parse_config(text)), text);
}

TEST(Config, ModifiedRoundTrip) {
  auto a = parse_config(
      "task = frozenlake\nseed = 99\nlr = 0.00123\ntarget_layers = 2, 5\nbeta2 = 0.95\nrecursion = false\n"
      "output_dir = out/x y\ntau = 0.1\nhole_density = 0.3\n");
  EXPECT_EQ(a.task, Task::FrozenLake);
  EXPECT_EQ(a.seed, 99u);
  EXPECT_DOUBLE_EQ(a.lr, 0.00123);
  EXPECT_EQ(a.target_layers, (std::vector<int>{2, 5}));
  EXPECT_FALSE(a.recursion);
  EXPECT_EQ(a.output_dir, "out/x y");
  const auto b = parse_config(serialize_config(a));
  EXPECT_EQ(a, b);
}

TEST(Config, CommentsAndBlankLinesIgnored) {
  auto c = parse_config("\n# comment\n; other\n   \nseed = 4\n");
  EXPECT_EQ(c.seed, 4u);
}

TEST(Config, ErrorsNameTheField) {
  auto msg = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(msg("seed = 1\nbogus = 3\n").find("line 2: unknown key 'bogus'"), std::string::npos);
  EXPECT_NE(msg("lr = fast\n").find("lr: expected a number"), std::string::npos);
  EXPECT_NE(msg("batch_size = -1\n").find("batch_size"), std::string::npos);
  EXPECT_NE(msg("recursion = maybe\n").find("recursion: expected true or false"), std::string::npos);
  EXPECT_NE(msg("task = chess\n").find("task"), std::string::npos);
  EXPECT_NE(msg("just words\n").find("expected key = value"), std::string::npos);
  EXPECT_NE(msg("lr = 0\n").find("lr: must be positive"), std::string::npos);
  EXPECT_NE(msg("target_layers = 9\n").find("target_layers"), std::string::npos);
  EXPECT_NE(msg("tau = -1\n").find("tau"), std::string::npos);
  EXPECT_NE(msg("classes = 9\n").find("classes"), std::string::npos);
  EXPECT_NE(msg("hole_density = 0.9\n").find("hole_density"), std::string::npos);
  EXPECT_NE(msg("lora_rank = 0\n").find("lora_rank"), std::string::npos);
}

TEST(Config, ConversionsCarryHyperparameters) {
  auto c = parse_config("dim = 32\nheads = 2\nexperts = 3\nlatent_steps = 5\nlora_rank = 4\nlr = 0.001\n");
  auto d = c.dit_config();
  EXPECT_EQ(d.dim, 32u);
  EXPECT_EQ(d.recursion.experts, 3u);
  EXPECT_EQ(d.recursion.latent_steps, 5);
  EXPECT_EQ(d.recursion.lora_rank, 4u);
  auto t = c.train_config();
  EXPECT_DOUBLE_EQ(t.optim.lr, 0.001);
  EXPECT_DOUBLE_EQ(t.optim.beta1, 0.9);
  EXPECT_DOUBLE_EQ(t.optim.beta2, 0.999);
  EXPECT_DOUBLE_EQ(t.optim.weight_decay, 0.0);
  EXPECT_EQ(c.schedule().steps, 200);
  EXPECT_EQ(c.planner_config().experts, frozenlake::kActions);
}

TEST(Config, ShippedConfigsParse) {
  const fs::path dir = fs::path(RSR_SOURCE_DIR) / "configs";
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    EXPECT_NO_THROW(load_config(e.path())) << e.path();
    ++n;
  }
  EXPECT_GE(n, 3);
  RunConfig defaults;
  defaults.output_dir = "runs/diffusion";
  EXPECT_EQ(load_config(dir / "diffusion.ini"), defaults);
}

TEST(Config, OutputDirectoryEnvironmentOverride) {
  ::unsetenv("RSR_OUTPUT_DIR");
  EXPECT_EQ(resolve_output_dir("runs/a"), fs::path("runs/a"));
  ::setenv("RSR_OUTPUT_DIR", "/tmp/elsewhere", 1);
  EXPECT_EQ(resolve_output_dir("runs/a"), fs::path("/tmp/elsewhere"));
  ::unsetenv("RSR_OUTPUT_DIR");
}

TEST(Checkpoint, RoundTripPreservesBits) {
  Rng rng(3);
  Tensor a({2, 3}, {1.0, -0.0, 1e-300, 3.5, -7.25, 0.1});
  Tensor b({4}, {rng.normal(), rng.normal(), rng.normal(), rng.normal()});
  ParamList params{{"a", a}, {"b", b}};
  const auto bytes = encode_checkpoint("seed = 1\n", params);
  EXPECT_EQ(bytes.substr(0, 8), std::string("RSRCKPT\0", 8));
  const auto ck = decode_checkpoint(bytes);
  EXPECT_EQ(ck.config_text, "seed = 1\n");
  ASSERT_EQ(ck.tensors.size(), 2u);
  EXPECT_EQ(ck.tensors[0].shape, (Shape{2, 3}));
  Tensor a2({2, 3}, std::vector<double>(6, 0.0)), b2({4}, std::vector<double>(4, 0.0));
  apply_checkpoint(ck, {{"a", a2}, {"b", b2}});
  for (std::size_t i = 0; i < 6; ++i)
    EXPECT_EQ(std::bit_cast<std::uint64_t>(a2.values()[i]), std::bit_cast<std::uint64_t>(a.values()[i]));
  EXPECT_EQ(encode_checkpoint("seed = 1\n", {{"a", a2}, {"b", b2}}), bytes);
}

TEST(Checkpoint, IntegrityErrors) {
  Tensor a({3}, {1.0, 2.0, 3.0});
  const auto good = encode_checkpoint("x", {{"a", a}});
  auto expect_error = [](const std::string& bytes, const std::string& needle) {
    try {
      decode_checkpoint(bytes);
      ADD_FAILURE() << "no error for " << needle;
    } catch (const CheckpointError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  for (std::size_t i = 8; i < good.size(); i += 7) {
    auto bad = good;
    bad[i] = static_cast<char>(bad[i] ^ 0x10);
    expect_error(bad, "checksum");
  }
  expect_error(good.substr(0, good.size() - 3), "checksum");
  auto magic = good;
  magic[0] = 'X';
  expect_error(magic, "magic");
  expect_error("RSR", "magic");

  // Future version with a valid checksum.
  auto body = good.substr(0, good.size() - 8);
  body[8] = 2;
  auto sum = fnv1a64(body);
  for (int i = 0; i < 8; ++i) body.push_back(static_cast<char>((sum >> (8 * i)) & 0xFF));
  expect_error(body, "version 2");
}

TEST(Checkpoint, ShapeOrNameMismatchRejected) {
  Tensor a({3}, {1.0, 2.0, 3.0});
  const auto ck = decode_checkpoint(encode_checkpoint("", {{"a", a}}));
  Tensor wrong({4}, std::vector<double>(4, 0.0));
  EXPECT_THROW(apply_checkpoint(ck, {{"a", wrong}}), CheckpointError);
  Tensor renamed({3}, std::vector<double>(3, 0.0));
  EXPECT_THROW(apply_checkpoint(ck, {{"b", renamed}}), CheckpointError);
  EXPECT_THROW(apply_checkpoint(ck, {}), CheckpointError);
}

TEST(Checkpoint, Fnv1aKnownValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(ImageIo, PgmEncoding) {
  std::vector<double> px{-1.0, 0.0, 1.0, 2.0, -5.0, 0.5};
  const auto s = encode_pgm(px, 2, 3);
  const std::string head = "P5\n3 2\n255\n";
  ASSERT_EQ(s.size(), head.size() + 6);
  EXPECT_EQ(s.substr(0, head.size()), head);
  const auto* b = reinterpret_cast<const unsigned char*>(s.data() + head.size());
  EXPECT_EQ(b[0], 0);
  EXPECT_EQ(b[1], 128);
  EXPECT_EQ(b[2], 255);
  EXPECT_EQ(b[3], 255);
  EXPECT_EQ(b[4], 0);
  EXPECT_EQ(b[5], 191);
  EXPECT_THROW(encode_pgm(px, 2, 2), ShapeError);
}

TEST(ImageIo, PpmEncoding) {
  std::vector<double> px{-1.0, 0.0, 1.0, 0.5};
  const auto s = encode_ppm(px, 2, 2);
  const std::string head = "P6\n2 2\n255\n";
  ASSERT_EQ(s.size(), head.size() + 12);
  EXPECT_EQ(s.substr(0, head.size()), head);
}

TEST(Commands, MissingConfigExitsTwoAndNamesPath) {
  std::ostringstream out, err;
  EXPECT_EQ(cmd_train({.config = "/nonexistent/run.ini"}, out, err), kExitUsage);
  EXPECT_NE(err.str().find("/nonexistent/run.ini"), std::string::npos);
}

TEST(Commands, InvalidConfigExitsTwoWithFieldMessage) {
  TempDir d("badcfg");
  analysis::write_text_file(d / "bad.ini", "lr = -3\n");
  std::ostringstream out, err;
  EXPECT_EQ(cmd_train({.config = d / "bad.ini"}, out, err), kExitUsage);
  EXPECT_NE(err.str().find("lr"), std::string::npos);
}

TEST(Commands, GradcheckPassesAndListsEachCheckOnce) {
  std::ostringstream out, err;
  EXPECT_EQ(cmd_gradcheck({}, out, err), kExitOk) << err.str();
  const auto entries = run_gradcheck_suite(0);
  std::set<std::string> names;
  for (const auto& e : entries) {
    EXPECT_TRUE(names.insert(e.name).second) << e.name;
    EXPECT_NE(out.str().find(e.name), std::string::npos);
  }
  for (const char* must : {"mmdit-block", "adapters", "routing-soft", "recursion(M=2,T_latent=2)", "matmul",
                           "attention", "softmax", "layernorm"})
    EXPECT_TRUE(names.count(must)) << must;
}

TEST(Commands, GradcheckCorruptionFailsWithNamedOp) {
  std::ostringstream out, err;
  EXPECT_EQ(cmd_gradcheck({.corrupt = "matmul"}, out, err), kExitCheckFailed);
  EXPECT_NE(err.str().find("gradient check failed for matmul"), std::string::npos);
  // The hook is cleared afterwards.
  std::ostringstream out2, err2;
  EXPECT_EQ(cmd_gradcheck({}, out2, err2), kExitOk);
}

TEST(Commands, FrozenLakeGenWritesMaps) {
  TempDir d("gen");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_frozenlake_gen({.count = 5, .seed = 3, .out = d / "maps"}, out, err), kExitOk);
  int n = 0;
  for (const auto& e : fs::directory_iterator(d / "maps")) {
    auto m = frozenlake::LakeMap::from_text(slurp(e.path()));
    EXPECT_TRUE(frozenlake::solvable(m));
    EXPECT_LE(m.holes(), 2u);
    ++n;
  }
  EXPECT_EQ(n, 5);
  std::ostringstream out2, err2;
  EXPECT_EQ(cmd_frozenlake_gen({.density = 0.9, .out = d / "x"}, out2, err2), kExitUsage);
}

TEST(Commands, FrozenLakeTrainAndEvalPipeline) {
  TempDir d("lake");
  analysis::write_text_file(d / "lake.ini",
                            "task = frozenlake\nseed = 5\ntrain_maps = 40\neval_maps = 12\nplanner_steps = 6\n"
                            "log_every = 3\nplanner_dim = 32\nplanner_heads = 2\nencoder_layers = 1\n");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_train({.config = d / "lake.ini", .out = d / "run"}, out, err), kExitOk) << err.str();
  EXPECT_NE(out.str().find("validated 40 rollouts"), std::string::npos);

  std::ostringstream o2, e2;
  ASSERT_EQ(cmd_frozenlake_eval({.checkpoint = d / "run" / "planner.ckpt", .limit = 4, .out = d / "eval"}, o2, e2),
            kExitOk)
      << e2.str();
  auto summary = nlohmann::json::parse(slurp(d / "eval" / "summary.json"));
  EXPECT_EQ(summary["maps"], 4);
  const int failures = summary["holes"].get<int>() + summary["no_plan"].get<int>();
  std::istringstream lines(slurp(d / "eval" / "failures.ndjson"));
  int logged = 0;
  for (std::string l; std::getline(lines, l);) {
    auto j = nlohmann::json::parse(l);
    EXPECT_NE(j["outcome"], "goal");
    ++logged;
  }
  EXPECT_EQ(logged, failures);
  auto manifest = nlohmann::json::parse(slurp(d / "eval" / "map_0000" / "manifest.json"));
  EXPECT_TRUE(manifest.contains("map"));
  EXPECT_TRUE(manifest.contains("actions"));
  EXPECT_TRUE(manifest.contains("outcome"));
  EXPECT_TRUE(fs::exists(d / "eval" / "map_0000" / "frame_00.ppm"));

  std::ostringstream o3, e3;
  EXPECT_EQ(cmd_sample({.checkpoint = d / "run" / "planner.ckpt", .out = d / "s"}, o3, e3), kExitData);
  EXPECT_NE(e3.str().find("not a diffusion checkpoint"), std::string::npos);
}

TEST_F(TrainedModel, TrainWritesArtifacts) {
  ASSERT_EQ(code_, kExitOk);
  for (const char* f : {"model.ckpt", "config.ini", "train_log.ndjson", "summary.json"})
    EXPECT_TRUE(fs::exists(*dir_ / "run" / f)) << f;
  auto loaded = load_diffusion(ckpt());
  EXPECT_EQ(loaded.cfg.seed, 7u);
  EXPECT_EQ(loaded.cfg.pretrain_steps + loaded.cfg.finetune_steps, 200);
}

TEST_F(TrainedModel, TrainIsByteIdenticalAcrossRuns) {
  ASSERT_EQ(code_, kExitOk);
  std::ostringstream out, err;
  ASSERT_EQ(cmd_train({.config = *dir_ / "smoke.ini", .out = *dir_ / "run2"}, out, err), kExitOk);
  for (const char* f : {"model.ckpt", "config.ini", "train_log.ndjson", "summary.json"})
    EXPECT_EQ(slurp(*dir_ / "run" / f), slurp(*dir_ / "run2" / f)) << f;
}

TEST_F(TrainedModel, EnvironmentSelectsDefaultOutput) {
  ASSERT_EQ(code_, kExitOk);
  ::setenv("RSR_OUTPUT_DIR", (*dir_ / "envout").c_str(), 1);
  std::ostringstream out, err;
  const int rc = cmd_sample({.checkpoint = ckpt(), .cls = 0}, out, err);
  ::unsetenv("RSR_OUTPUT_DIR");
  EXPECT_EQ(rc, kExitOk);
  EXPECT_TRUE(fs::exists(*dir_ / "envout" / "sample_0000.pgm"));
}

TEST_F(TrainedModel, SampleIsByteIdenticalAcrossRuns) {
  ASSERT_EQ(code_, kExitOk);
  for (const char* sub : {"sa", "sb"}) {
    std::ostringstream out, err;
    ASSERT_EQ(cmd_sample({.checkpoint = ckpt(), .cls = 2, .n = 3, .seed = 11, .out = *dir_ / sub}, out, err),
              kExitOk)
        << err.str();
  }
  for (const char* f : {"sample_0000.pgm", "sample_0001.pgm", "sample_0002.pgm", "manifest.json"})
    EXPECT_EQ(slurp(*dir_ / "sa" / f), slurp(*dir_ / "sb" / f)) << f;
  auto m = nlohmann::json::parse(slurp(*dir_ / "sa" / "manifest.json"));
  EXPECT_EQ(m["files"].size(), 3u);
  EXPECT_EQ(m["class"], 2);
}

TEST_F(TrainedModel, SampleRejectsInvalidClassAndCorruption) {
  ASSERT_EQ(code_, kExitOk);
  std::ostringstream out, err;
  EXPECT_EQ(cmd_sample({.checkpoint = ckpt(), .cls = 4, .out = *dir_ / "x"}, out, err), kExitUsage);
  EXPECT_NE(err.str().find("invalid class 4"), std::string::npos);
  EXPECT_EQ(cmd_sample({.checkpoint = ckpt(), .cls = -1, .out = *dir_ / "x"}, out, err), kExitUsage);

  auto bytes = slurp(ckpt());
  bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 1);
  analysis::write_text_file(*dir_ / "corrupt.ckpt", bytes);
  std::ostringstream out2, err2;
  EXPECT_EQ(cmd_sample({.checkpoint = *dir_ / "corrupt.ckpt", .out = *dir_ / "x"}, out2, err2), kExitData);
  EXPECT_NE(err2.str().find("checksum mismatch"), std::string::npos);
  std::ostringstream out3, err3;
  EXPECT_EQ(cmd_sample({.checkpoint = *dir_ / "absent.ckpt", .out = *dir_ / "x"}, out3, err3), kExitData);
  EXPECT_NE(err3.str().find("absent.ckpt"), std::string::npos);
}

TEST_F(TrainedModel, LatentOverrideChangesSamples) {
  ASSERT_EQ(code_, kExitOk);
  auto loaded = load_diffusion(ckpt());
  std::vector<int> labels{1};
  diffusion::SampleOptions one, five;
  one.seed = five.seed = 3;
  one.latent_steps = 1;
  five.latent_steps = 5;
  const auto a = diffusion::sample(loaded.model, loaded.cfg.schedule(), labels, one);
  const auto b = diffusion::sample(loaded.model, loaded.cfg.schedule(), labels, five);
  EXPECT_NE(a, b);
}

TEST_F(TrainedModel, AnalyzeIsByteIdenticalAcrossRuns) {
  ASSERT_EQ(code_, kExitOk);
  for (const char* mode : {"trajectories", "routing"}) {
    const std::string file = std::string(mode) == "routing" ? "routing.json" : "trajectories.csv";
    for (const char* sub : {"aa", "ab"}) {
      std::ostringstream out, err;
      ASSERT_EQ(cmd_analyze({.checkpoint = ckpt(), .mode = mode, .n = 2, .seed = 5, .out = *dir_ / sub / mode}, out,
                            err),
                kExitOk)
          << err.str();
    }
    EXPECT_EQ(slurp(*dir_ / "aa" / mode / file), slurp(*dir_ / "ab" / mode / file)) << mode;
  }
  std::ifstream csv(*dir_ / "aa" / "trajectories" / "trajectories.csv");
  const auto rows = analysis::read_trajectories_csv(csv);
  // 2 images x 200 diffusion steps x T_latent 2 x 16 tokens
  EXPECT_EQ(rows.size(), 2u * 200u * 2u * 16u);
  auto j = nlohmann::json::parse(slurp(*dir_ / "aa" / "routing" / "routing.json"));
  EXPECT_EQ(j["routed"], 2 * 200 * 2 * 16);

  std::ostringstream out, err;
  EXPECT_EQ(cmd_analyze({.checkpoint = ckpt(), .mode = "heatmap"}, out, err), kExitUsage);
}
