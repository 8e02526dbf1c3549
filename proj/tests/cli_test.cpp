#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "emoji/app.hpp"
#include "test_support.hpp"

using nlohmann::json;
using test_support::slurp;
using test_support::TempDir;

namespace {

const std::string kData = EMOJI_TEST_DATA_DIR;
const std::string kCli = EMOJI_CLI_PATH;

struct Result {
  int code;
  std::string out, err;
};

Result run(const TempDir& dir, const std::string& args, const std::string& stdin_text = "") {
  const auto in = dir.file("stdin.txt"), out = dir.file("stdout.txt"), err = dir.file("stderr.txt");
  {
    std::ofstream f(in, std::ios::binary);
    f << stdin_text;
  }
  const std::string cmd = "cd '" + dir.path().string() + "' && '" + kCli + "' " + args + " <'" + in + "' >'" + out +
                          "' 2>'" + err + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

/// Small architecture so every CLI run takes well under a second.
std::string small_config(const TempDir& dir) {
  const json cfg = {{"seed", 5},
                    {"dataset", {{"kind", "dataset1"}, {"train", kData + "/toy_d1_train.csv"}, {"test", kData + "/toy_d1_test.csv"}}},
                    {"model", {{"num_layers", 1}, {"hidden_size", 16}, {"num_heads", 2}, {"ff_size", 32}, {"max_len", 16}}},
                    {"train", {{"epochs", 10}, {"learning_rate", 0.003}}}};
  const auto path = dir.file("small.json");
  std::ofstream(path) << cfg.dump(2);
  return path;
}

std::string sha(const std::string& path) { return emoji::sha256_file(path); }

}  // namespace

TEST(Cli, TrainWritesArtifactsAndManifest) {
  TempDir dir;
  const auto r = run(dir, "train --config " + small_config(dir) + " --out run");
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"model.ckpt", "vocab.txt", "curve.csv", "metrics.json", "manifest.json", "mapping.csv"})
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "run" / f)) << f;
  const auto manifest = json::parse(slurp(dir.file("run/manifest.json")));
  EXPECT_EQ(manifest["command"], "train");
  EXPECT_EQ(manifest["config"]["train"]["epochs"], 10);
  EXPECT_EQ(manifest["config"]["model"]["hidden_size"], 16);
  EXPECT_EQ(manifest["inputs"]["train"]["sha256"], sha(kData + "/toy_d1_train.csv"));
  EXPECT_EQ(manifest["artifacts"]["checkpoint"]["sha256"], sha(dir.file("run/model.ckpt")));
  EXPECT_TRUE(manifest.contains("tool_version"));
  EXPECT_TRUE(manifest.contains("wall_seconds"));
  // One progress line per epoch on standard error.
  EXPECT_NE(r.err.find("epoch=10 train_loss="), std::string::npos);
  const auto metrics = json::parse(slurp(dir.file("run/metrics.json")));
  EXPECT_TRUE(metrics.contains("majority"));
  EXPECT_TRUE(metrics["transformer"].contains("f1_of_macro_pr"));
}

TEST(Cli, RerunsAndManifestReplayAreBitIdentical) {
  TempDir dir;
  const auto cfg = small_config(dir);
  ASSERT_EQ(run(dir, "train --config " + cfg + " --out a").code, 0);
  ASSERT_EQ(run(dir, "train --config " + cfg + " --out b").code, 0);
  ASSERT_EQ(run(dir, "train --config a/manifest.json --out c").code, 0);
  for (const char* f : {"model.ckpt", "vocab.txt", "metrics.json", "mapping.csv"}) {
    EXPECT_EQ(sha(dir.file(std::string("a/") + f)), sha(dir.file(std::string("b/") + f))) << f;
    EXPECT_EQ(sha(dir.file(std::string("a/") + f)), sha(dir.file(std::string("c/") + f))) << f;
  }
  const auto ca = emoji::load_curve(dir.file("a/curve.csv")), cc = emoji::load_curve(dir.file("c/curve.csv"));
  EXPECT_TRUE(emoji::same_values(ca, cc));
}

TEST(Cli, FlagsOverrideConfigFile) {
  TempDir dir;
  const auto r = run(dir, "train --config " + small_config(dir) + " --epochs 3 --seed 9 --out run");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto manifest = json::parse(slurp(dir.file("run/manifest.json")));
  EXPECT_EQ(manifest["config"]["train"]["epochs"], 3);
  EXPECT_EQ(manifest["config"]["seed"], 9);
  EXPECT_EQ(manifest["config"]["model"]["num_layers"], 1);     // from file
  EXPECT_EQ(manifest["config"]["train"]["batch_size"], 16);    // built-in default
  EXPECT_EQ(emoji::load_curve(dir.file("run/curve.csv")).size(), 3u);
}

TEST(Cli, ExitCodesByFailureClass) {
  TempDir dir;
  auto r = run(dir, "train --dataset1 missing_train.csv --test missing_test.csv");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("missing_train.csv"), std::string::npos);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);

  EXPECT_EQ(run(dir, "train --no-such-flag").code, 2);
  EXPECT_EQ(run(dir, "").code, 2);

  std::ofstream(dir.file("bad.csv")) << "hello there,7\n";
  r = run(dir, "train --dataset1 bad.csv --test bad.csv");
  EXPECT_EQ(r.code, 3);

  std::ofstream(dir.file("typo.json")) << R"({"trian": {"epochs": 2}})";
  r = run(dir, "train --config typo.json");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("trian"), std::string::npos);

  r = run(dir, "train --config " + small_config(dir) + " --lr 1e300 --out huge");
  EXPECT_EQ(r.code, 4) << r.err;
}

TEST(Cli, PredictTsvRows) {
  TempDir dir;
  ASSERT_EQ(run(dir, "train --config " + small_config(dir) + " --out run").code, 0);
  auto r = run(dir, "predict --checkpoint run/model.ckpt", "i love you\n");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 2);
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "text\tlabel\temoji\ttop3");
  const auto row = r.out.substr(r.out.find('\n') + 1);
  EXPECT_EQ(std::count(row.begin(), row.end(), '\t'), 3);
  EXPECT_EQ(std::count(row.begin(), row.end(), ':'), 3);

  r = run(dir, "predict --checkpoint run/model.ckpt", "");
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "text\tlabel\temoji\ttop3\n");
  EXPECT_TRUE(std::filesystem::exists(dir.file("run/predict_manifest.json")));

  std::ofstream(dir.file("other_vocab.txt")) << "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\nzebra\n";
  r = run(dir, "predict --checkpoint run/model.ckpt --vocab other_vocab.txt", "hi\n");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("vocabulary"), std::string::npos);
}

TEST(Cli, DatasetTwoPredictionsFollowIdFile) {
  TempDir dir;
  const json cfg = {{"dataset", {{"kind", "dataset2"}, {"train", kData + "/toy_d2_train.csv"}, {"mapping", kData + "/toy_d2_mapping.csv"}}},
                    {"vocab", {{"min_freq", 1}}},
                    {"model", {{"num_layers", 1}, {"hidden_size", 16}, {"num_heads", 2}, {"ff_size", 32}, {"max_len", 16}}},
                    {"train", {{"epochs", 2}}}};
  std::ofstream(dir.file("d2.json")) << cfg.dump();
  auto r = run(dir, "train --config d2.json --out run");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(slurp(dir.file("run/data_report.json")));
  EXPECT_EQ(report["sizes"]["test"], 20);  // 30% of the 80 training rows
  r = run(dir, "predict --checkpoint run/model.ckpt --input " + kData + "/toy_d2_test.csv --text-column TEXT --id-column id --ids " +
                   kData + "/toy_d2_output_ids.csv --output preds.tsv");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto tsv = slurp(dir.file("preds.tsv"));
  std::vector<std::string> ids;
  for (std::size_t pos = tsv.find('\n') + 1; pos < tsv.size(); pos = tsv.find('\n', pos) + 1) ids.push_back(tsv.substr(pos, 4));
  ASSERT_EQ(ids.size(), 10u);
  for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(ids[i], std::to_string(1009 - i));
}

TEST(Cli, EvaluateBaselineAndCurveExport) {
  TempDir dir;
  const auto cfg = small_config(dir);
  ASSERT_EQ(run(dir, "train --config " + cfg + " --out run").code, 0);

  auto r = run(dir, "evaluate --checkpoint run/model.ckpt --test " + kData + "/toy_d1_test.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ev = json::parse(r.out);
  const auto trained = json::parse(slurp(dir.file("run/metrics.json")));
  EXPECT_EQ(ev["transformer"]["accuracy"], trained["transformer"]["accuracy"]);
  EXPECT_EQ(ev["split_sha256"], trained["split_sha256"]);

  r = run(dir, "baseline --config " + cfg + " --run run --out base");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto table = json::parse(r.out)["table"];
  ASSERT_EQ(table.size(), 3u);
  EXPECT_EQ(table[0]["model"], "majority");
  EXPECT_EQ(table[2]["model"], "transformer");
  EXPECT_EQ(json::parse(slurp(dir.file("base/baseline.json")))["split_sha256"], trained["split_sha256"]);

  r = run(dir, "export-curves --run run --output exported.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto text = slurp(dir.file("exported.csv"));
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 11);
  EXPECT_EQ(run(dir, "export-curves --run nowhere").code, 2);
}

TEST(Cli, InputsAreNotModified) {
  TempDir dir;
  const auto before = sha(kData + "/toy_d1_train.csv") + sha(kData + "/toy_d1_test.csv");
  const auto cfg = small_config(dir);
  const auto cfg_before = sha(cfg);
  ASSERT_EQ(run(dir, "train --config " + cfg + " --out run").code, 0);
  ASSERT_EQ(run(dir, "baseline --config " + cfg + " --out base").code, 0);
  EXPECT_EQ(sha(kData + "/toy_d1_train.csv") + sha(kData + "/toy_d1_test.csv"), before);
  EXPECT_EQ(sha(cfg), cfg_before);
}

TEST(Config, PrecedenceAndValidation) {
  using emoji::app::resolve_config;
  TempDir dir;
  std::ofstream(dir.file("c.json")) << R"({"seed": 3, "train": {"epochs": 4, "batch_size": 2}})";
  const auto cfg = resolve_config(dir.file("c.json"), json{{"train", {{"epochs", 6}}}});
  EXPECT_EQ(cfg["seed"], 3);
  EXPECT_EQ(cfg["train"]["epochs"], 6);
  EXPECT_EQ(cfg["train"]["batch_size"], 2);
  EXPECT_EQ(cfg["train"]["learning_rate"], 1e-3);
  EXPECT_TRUE(cfg["train"]["early_stop_patience"].is_null());

  const auto d2 = resolve_config(std::nullopt, json{{"dataset", {{"kind", "dataset2"}}}});
  EXPECT_EQ(d2["train"]["batch_size"], 64);
  EXPECT_EQ(d2["dataset"]["subsample"], 5000);
  EXPECT_EQ(d2["vocab"]["min_freq"], 2);
  EXPECT_EQ(d2["dataset"]["text_column"], "TEXT");

  EXPECT_THROW(resolve_config(std::nullopt, json{{"model", {{"layers", 2}}}}), emoji::InputError);
  EXPECT_THROW(resolve_config(std::nullopt, json{{"dataset", {{"kind", "dataset3"}}}}), emoji::InputError);
  std::ofstream(dir.file("broken.json")) << "{not json";
  EXPECT_THROW(resolve_config(dir.file("broken.json")), emoji::InputError);
}

TEST(Config, SampleConfigsResolve) {
  const std::string root = EMOJI_SOURCE_DIR;
  for (const char* f : {"/configs/dataset1.json", "/configs/dataset2.json", "/configs/smoke.json"}) {
    const auto cfg = emoji::app::resolve_config(root + f);
    EXPECT_NO_THROW(emoji::app::train_config(cfg)) << f;
    EXPECT_NO_THROW(emoji::app::model_config(cfg, 100, 5)) << f;
  }
}
