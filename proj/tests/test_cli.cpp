#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mlst/cli/run.hpp"

using namespace mlst;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result call(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mlst_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

// Small synthetic dataset plus a two-update model.
struct Fixture {
  fs::path dir;
  explicit Fixture(const std::string& name) : dir(fresh_dir(name)) {
    EXPECT_EQ(call({"synth", "--data-dir", dir.string(), "--utterances", "40", "--seed", "5"}).code, 0);
  }
  std::vector<std::string> train_args(const std::string& ckpt) const {
    return {"train", "--data-dir", dir.string(), "--forcing", "merge", "--d-model", "16", "--steps", "2",
            "--accumulation", "2", "--warmup", "10", "--checkpoint", (dir / ckpt).string()};
  }
};

}  // namespace

TEST(Cli, HelpExitsZero) {
  EXPECT_EQ(call({"--help"}).code, 0);
  EXPECT_EQ(call({"train", "--help"}).code, 0);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(call({}).code, 1);
  EXPECT_EQ(call({"frobnicate"}).code, 1);
  EXPECT_EQ(call({"train", "--bogus"}).code, 1);
  EXPECT_EQ(call({"train", "--steps", "many"}).code, 1);
  const auto dir = fresh_dir("usage");
  const auto r = call({"gradcheck", "--forcing", "sideways"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("sideways"), std::string::npos);
  EXPECT_EQ(call({"train", "--data-dir", dir.string()}).code, 1);  // no manifest
}

TEST(Cli, TranslateWithMissingCheckpointWritesNothing) {
  Fixture f("missing_ckpt");
  const auto out = f.dir / "hyps.tsv";
  const auto r = call({"translate", "--data-dir", f.dir.string(), "--checkpoint", (f.dir / "absent.ckpt").string(),
                       "--hypotheses", out.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("absent.ckpt"), std::string::npos);
  EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, CorruptCheckpointIsRuntimeFailure) {
  Fixture f("corrupt_ckpt");
  write(f.dir / "bad.ckpt", "MLSTCKPT but not really");
  const auto out = f.dir / "hyps.tsv";
  const auto r = call({"translate", "--data-dir", f.dir.string(), "--checkpoint", (f.dir / "bad.ckpt").string(),
                       "--hypotheses", out.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, ConfigFileKeysAreCheckedAndFlagsWin) {
  const auto dir = fresh_dir("config");
  write(dir / "unknown.json", R"({"sed": 3})");
  auto r = call({"synth", "--config", (dir / "unknown.json").string(), "--data-dir", dir.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("sed"), std::string::npos);

  write(dir / "typed.json", R"({"utterances": "lots"})");
  EXPECT_EQ(call({"synth", "--config", (dir / "typed.json").string()}).code, 1);

  write(dir / "other.json", R"({"command": "train"})");
  EXPECT_EQ(call({"synth", "--config", (dir / "other.json").string()}).code, 1);

  write(dir / "ok.json", R"({"utterances": 12, "seed": 4, "output": ")" + (dir / "a").string() + R"("})");
  r = call({"synth", "--config", (dir / "ok.json").string(), "--utterances", "20", "--log", (dir / "log").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string log = slurp(dir / "log");
  ASSERT_EQ(log.rfind("config ", 0), 0u);
  const auto header = nlohmann::json::parse(log.substr(7, log.find('\n') - 7));
  EXPECT_EQ(header["utterances"], 20);
  EXPECT_EQ(header["seed"], 4);
  EXPECT_EQ(header["command"], "synth");
  EXPECT_EQ(std::count(std::istreambuf_iterator<char>(*std::make_unique<std::ifstream>(dir / "a" / "manifest.tsv")),
                       std::istreambuf_iterator<char>(), '\n'),
            60);
}

TEST(Cli, DataDirComesFromEnvironment) {
  const auto dir = fresh_dir("env");
  ::setenv("MLST_DATA_DIR", dir.string().c_str(), 1);
  const auto r = call({"synth", "--utterances", "10"});
  ::unsetenv("MLST_DATA_DIR");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "manifest.tsv"));
  EXPECT_TRUE(fs::exists(dir / "features.bin"));
}

TEST(Cli, PipelineProducesHypothesesAndMetrics) {
  Fixture f("pipeline");
  auto r = call(f.train_args("m.ckpt"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("after 2 updates"), std::string::npos);
  const auto ckpt = (f.dir / "m.ckpt").string();
  r = call({"translate", "--data-dir", f.dir.string(), "--checkpoint", ckpt, "--beam", "2", "--max-len", "8"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto hyps = eval::read_hypotheses((f.dir / "hypotheses.tsv").string());
  EXPECT_EQ(hyps.size(), 12u);  // 4 test utterances × 3 languages
  r = call({"evaluate", "--data-dir", f.dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto metrics = nlohmann::json::parse(slurp(f.dir / "metrics.json"));
  for (const char* lang : {"xa", "xb", "xc"}) {
    EXPECT_TRUE(metrics["bleu"].contains(lang));
    EXPECT_TRUE(metrics["language_accuracy"].contains(lang));
    EXPECT_EQ(metrics["utterances"][lang], 4);
  }
  r = call({"audit", "--data-dir", f.dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(nlohmann::json::parse(slurp(f.dir / "audit.json")).contains("language_accuracy"));
}

TEST(Cli, LogHeaderReproducesTrainingBitExactly) {
  Fixture f("repro");
  auto args = f.train_args("first.ckpt");
  args.insert(args.end(), {"--log", (f.dir / "first.log").string(), "--dropout", "0.2"});
  ASSERT_EQ(call(args).code, 0);
  const std::string log = slurp(f.dir / "first.log");
  auto header = nlohmann::json::parse(log.substr(7, log.find('\n') - 7));
  header["checkpoint"] = (f.dir / "second.ckpt").string();
  header["log"] = "";
  write(f.dir / "header.json", header.dump());
  const auto r = call({"train", "--config", (f.dir / "header.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(f.dir / "first.ckpt"), slurp(f.dir / "second.ckpt"));
}

TEST(Cli, AsrPretrainTransferAndMixedTraining) {
  Fixture f("asr");
  const auto d = f.dir.string();
  auto r = call({"asr-pretrain", "--data-dir", d, "--d-model", "16", "--steps", "2", "--accumulation", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("en:"), std::string::npos);
  const auto asr = trainer::load_checkpoint(d + "/asr.ckpt");
  EXPECT_EQ(asr.languages, (std::vector<std::string>{"en"}));

  r = call({"train", "--data-dir", d, "--d-model", "16", "--forcing", "merge", "--mix-asr", "--transfer-from",
            d + "/asr.ckpt", "--steps", "0", "--checkpoint", d + "/init.ckpt"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("transferred"), std::string::npos);
  const auto init = trainer::load_checkpoint(d + "/init.ckpt");
  std::size_t compared = 0;
  for (const auto& t : asr.parameters)
    if (trainer::is_transferable(t.name)) {
      EXPECT_EQ(init.find(t.name)->values, t.values) << t.name;
      ++compared;
    }
  EXPECT_GT(compared, 10u);

  r = call({"train", "--data-dir", d, "--d-model", "16", "--forcing", "merge", "--mix-asr", "--transfer-from",
            d + "/asr.ckpt", "--steps", "2", "--accumulation", "4", "--log-every", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("en:"), std::string::npos);
  const auto mixed = trainer::load_checkpoint(d + "/model.ckpt");
  EXPECT_EQ(mixed.languages.back(), "en");
}

TEST(Cli, GradcheckPassesOnDeskModel) {
  const auto r = call({"gradcheck", "--d-model", "16", "--forcing", "merge"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("max model error"), std::string::npos);
}

TEST(Cli, MultilingualAndUnilingualRunsShareTheHarness) {
  Fixture f("uni");
  const auto d = f.dir.string();
  ASSERT_EQ(call(f.train_args("multi.ckpt")).code, 0);
  auto r = call({"train", "--data-dir", d, "--languages", "xb", "--d-model", "16", "--steps", "2", "--accumulation", "2",
                 "--checkpoint", d + "/uni.ckpt"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(trainer::load_checkpoint(d + "/uni.ckpt").languages, (std::vector<std::string>{"xb"}));
  for (const std::string run : {"multi", "uni"}) {
    r = call({"translate", "--data-dir", d, "--checkpoint", d + "/" + run + ".ckpt", "--languages", "xb", "--max-len",
              "8", "--hypotheses", d + "/" + run + ".tsv"});
    ASSERT_EQ(r.code, 0) << r.err;
    r = call({"evaluate", "--data-dir", d, "--hypotheses", d + "/" + run + ".tsv", "--output", d + "/" + run + ".json"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto metrics = nlohmann::json::parse(slurp(f.dir / (run + ".json")));
    EXPECT_EQ(metrics["utterances"].size(), 1u) << run;
    EXPECT_EQ(metrics["utterances"]["xb"], 4) << run;
  }
}
