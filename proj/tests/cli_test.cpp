#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "cli_support.hpp"
#include "test_support.hpp"

namespace tsgan {
namespace {

using testing::CliRun;
using testing::invoke;
using testing::slurp;
using testing::TempDir;

std::size_t lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

// Small network and data so the end-to-end commands run in seconds.
std::vector<std::string> tiny_train_flags() {
  return {"--subsample-len", "64", "--n-down", "3", "--base-channels", "4", "--latent-dim", "8",
          "--batch-size", "8", "--epochs", "2", "--seed", "5"};
}

void synth_files(const TempDir& dir, const std::string& prefix, const std::string& fault_rate,
                 std::size_t count, std::uint64_t seed) {
  const CliRun r = invoke({"synth", "--samples", "640", "--count", std::to_string(count), "--fault-rate", fault_rate,
                     "--seed", std::to_string(seed), "--out-dir", dir.path().string(), "--prefix", prefix});
  ASSERT_EQ(r.code, 0) << r.err;
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

TEST(CliHelp, EverySubcommandDocumentsFlagsAndDefaults) {
  const CliRun top = invoke({"--help"});
  EXPECT_EQ(top.code, 0);
  for (const char* sub : {"synth", "features", "train", "score", "eval", "sweep"}) {
    EXPECT_NE(top.out.find(sub), std::string::npos) << sub;
    const CliRun r = invoke({sub, "--help"});
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("--config"), std::string::npos) << sub;
  }
  const CliRun train = invoke({"train", "--help"});
  for (const auto& key : cli::train_keys()) {
    const cli::SettingSpec* spec = cli::find_setting(key);
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    EXPECT_NE(train.out.find(flag), std::string::npos) << flag;
    EXPECT_NE(train.out.find(std::string("[") + spec->default_value + "]"), std::string::npos) << key;
  }
}

TEST(CliConfig, DefaultsMatchTrainingProtocol) {
  const TrainConfig c = cli::RunConfig().train_config();
  EXPECT_EQ(c.lr, 0.001f);
  EXPECT_EQ(c.beta1, 0.5f);
  EXPECT_EQ(c.beta2, 0.999f);
  EXPECT_EQ(c.epochs, 20u);
  EXPECT_EQ(c.latent_dim, 64u);
  EXPECT_EQ(c.subsample_len, 12000u);
  EXPECT_EQ(c.batch_size, 64u);
  EXPECT_EQ(c.pipeline_mode, PipelineMode::raw);
  EXPECT_EQ(c.loss_weights.apparent, 50.0f);
}

TEST(CliConfig, ParsesFlatKeyValueText) {
  const auto entries = cli::parse_config_text("# comment\n\nepochs = 3\n  lr=0.01   # trailing\n");
  EXPECT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries.at("epochs"), "3");
  EXPECT_EQ(entries.at("lr"), "0.01");
  EXPECT_THROW(cli::parse_config_text("bogus = 1\n"), ConfigError);
  EXPECT_THROW(cli::parse_config_text("epochs = 1\nepochs = 2\n"), ConfigError);
  EXPECT_THROW(cli::parse_config_text("epochs\n"), ConfigError);
  cli::RunConfig c;
  c.set("epochs", "x");
  EXPECT_THROW(c.train_config(), ConfigError);
  c.set("epochs", "-1");
  EXPECT_THROW(c.train_config(), ConfigError);
}

TEST(CliConfig, FlagBeatsFileBeatsDefault) {
  TempDir dir("cli");
  std::ofstream(dir / "run.cfg") << "samples = 300\ncount = 2\n";
  const auto cfg = (dir / "run.cfg").string();

  ASSERT_EQ(invoke({"synth", "--out-dir", (dir / "a").string()}).code, 0);
  EXPECT_EQ(std::filesystem::file_size(dir / "a" / "synth_normal_000.f32"), 120000u * 4);

  ASSERT_EQ(invoke({"synth", "--config", cfg, "--out-dir", (dir / "b").string()}).code, 0);
  EXPECT_EQ(std::filesystem::file_size(dir / "b" / "synth_normal_000.f32"), 300u * 4);
  EXPECT_TRUE(std::filesystem::exists(dir / "b" / "synth_normal_001.f32"));

  ASSERT_EQ(invoke({"synth", "--config", cfg, "--samples", "200", "--out-dir", (dir / "c").string()}).code, 0);
  EXPECT_EQ(std::filesystem::file_size(dir / "c" / "synth_normal_000.f32"), 200u * 4);
  EXPECT_TRUE(std::filesystem::exists(dir / "c" / "synth_normal_001.f32"));
}

TEST(CliConfig, UnknownKeysAndBadValuesAreUsageErrors) {
  TempDir dir("cli");
  std::ofstream(dir / "bad.cfg") << "sample = 10\n";
  const CliRun r = invoke({"synth", "--config", (dir / "bad.cfg").string(), "--out-dir", dir.path().string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("unknown key 'sample'"), std::string::npos) << r.err;
  EXPECT_EQ(invoke({"synth", "--samples", "ten", "--out-dir", dir.path().string()}).code, 1);
  EXPECT_EQ(invoke({"synth", "--no-such-flag"}).code, 1);
  EXPECT_EQ(invoke({}).code, 1);
  EXPECT_EQ(invoke({"synth", "--config", (dir / "missing.cfg").string()}).code, 2);
}

TEST(CliSynth, WritesOneNormalFileDeterministically) {
  TempDir dir("cli");
  const CliRun a = invoke({"synth", "--samples", "120000", "--fault-rate", "0", "--seed", "1", "--out-dir",
                     (dir / "a").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(std::distance(std::filesystem::directory_iterator(dir / "a"), std::filesystem::directory_iterator{}), 1);
  const auto file = dir / "a" / "synth_normal_000.f32";
  EXPECT_EQ(load_series(file).values.size(), 120000u);
  ASSERT_EQ(invoke({"synth", "--samples", "120000", "--fault-rate", "0", "--seed", "1", "--out-dir",
                 (dir / "b").string()})
                .code,
            0);
  EXPECT_EQ(slurp(file), slurp(dir / "b" / "synth_normal_000.f32"));

  ASSERT_EQ(invoke({"synth", "--samples", "1000", "--fault-rate", "30", "--out-dir", (dir / "c").string()}).code, 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "c" / "synth_fault_000.f32"));
}

TEST(CliSynth, ZeroSamplesIsUsageError) {
  TempDir dir("cli");
  const CliRun r = invoke({"synth", "--samples", "0", "--out-dir", dir.path().string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
}

TEST(CliFeatures, SixteenColumnsOneRowPerWindow) {
  TempDir dir("cli");
  synth_files(dir, "s", "0", 1, 1);
  const CliRun r = invoke({"features", (dir / "s_normal_000.f32").string(), "--feature-window", "100"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string header = r.out.substr(0, r.out.find('\n'));
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), 15);
  EXPECT_EQ(header.substr(0, 12), "max,min,mean");
  EXPECT_EQ(lines(r.out), 1u + 6u);

  const TimeSeries ts = load_series(dir / "s_normal_000.f32");
  const auto first = extract_features(std::span<const float>(ts.values).subspan(0, 100));
  const std::string row = r.out.substr(header.size() + 1, r.out.find('\n', header.size() + 1) - header.size() - 1);
  EXPECT_EQ(row.substr(0, row.find(',')), format_number(first.max));
}

TEST(CliTrain, MissingDataNamesTheGlob) {
  TempDir dir("cli");
  const std::string pattern = (dir / "nothing_*.f32").string();
  const CliRun r = invoke({"train", "--data", pattern, "--out", (dir / "m.ckpt").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find(pattern), std::string::npos) << r.err;
}

TEST(CliTrainEval, EndToEndDeterministic) {
  TempDir dir("cli");
  synth_files(dir, "n", "0", 4, 10);
  synth_files(dir, "f", "30", 2, 50);
  const std::string normal = (dir / "n_*.f32").string(), fault = (dir / "f_*.f32").string();
  const std::string ckpt = (dir / "m.ckpt").string();

  const CliRun t = invoke(concat({"train", "--data", normal, "--out", ckpt}, tiny_train_flags()));
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_NE(t.err.find("epoch 2/2 done"), std::string::npos) << t.err;
  EXPECT_TRUE(std::filesystem::exists(ckpt + ".report.csv"));
  // 40 subsamples split 32/8.
  EXPECT_EQ(load_series(ckpt + ".holdout.f32").values.size(), 8u * 64u);
  const std::string first_ckpt = slurp(ckpt);
  ASSERT_EQ(invoke(concat({"train", "--data", normal, "--out", ckpt}, tiny_train_flags())).code, 0);
  EXPECT_EQ(slurp(ckpt), first_ckpt);

  const std::string holdout = ckpt + ".holdout.f32";
  const CliRun e1 = invoke({"eval", "--checkpoint", ckpt, "--normal", holdout, "--fault", fault, "--out-dir",
                      (dir / "e1").string()});
  ASSERT_EQ(e1.code, 0) << e1.err;
  EXPECT_EQ(e1.out.rfind("auc=", 0), 0u) << e1.out;
  EXPECT_NE(e1.out.find("accuracy="), std::string::npos);
  EXPECT_NE(e1.out.find("n_normal=8 n_fault=20"), std::string::npos) << e1.out;
  const CliRun e2 = invoke({"eval", "--checkpoint", ckpt, "--normal", holdout, "--fault", fault, "--out-dir",
                      (dir / "e2").string()});
  EXPECT_EQ(e2.out, e1.out);
  for (const char* name : {"scores.csv", "metrics.txt", "reconstruction_pairs.csv"})
    EXPECT_EQ(slurp(dir / "e1" / name), slurp(dir / "e2" / name)) << name;

  const CliRun none = invoke({"eval", "--checkpoint", ckpt, "--normal", holdout, "--fault", (dir / "zz*.f32").string()});
  EXPECT_NE(none.code, 0);
  EXPECT_NE(none.err.find("zz*.f32"), std::string::npos);
  EXPECT_NE(invoke({"eval", "--checkpoint", ckpt, "--normal", (dir / "zz*").string(), "--fault", fault}).code, 0);

  const CliRun s = invoke({"score", "--checkpoint", ckpt, fault});
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_EQ(s.out.substr(0, s.out.find('\n')), "id,raw_score,l_apparent,l_latent");
  EXPECT_EQ(lines(s.out), 1u + 20u);
}

TEST(CliScore, CorruptCheckpointIsFormatError) {
  TempDir dir("cli");
  synth_files(dir, "n", "0", 1, 1);
  std::ofstream(dir / "bad.ckpt") << "not a checkpoint";
  const CliRun r = invoke({"score", "--checkpoint", (dir / "bad.ckpt").string(), (dir / "n_*.f32").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST(CliSweep, FourRowsParallelMatchesSequentialAndReproducesTrainEval) {
  TempDir dir("cli");
  synth_files(dir, "n", "0", 4, 20);
  synth_files(dir, "f", "30", 2, 60);
  const std::string normal = (dir / "n_*.f32").string(), fault = (dir / "f_*.f32").string();
  const auto flags = tiny_train_flags();

  const CliRun seq = invoke(concat({"sweep", "--normal", normal, "--fault", fault, "--values", "2,4,8,16"}, flags));
  ASSERT_EQ(seq.code, 0) << seq.err;
  EXPECT_EQ(seq.out.substr(0, seq.out.find('\n')), "value,auc,accuracy");
  EXPECT_EQ(lines(seq.out), 5u);
  const CliRun par = invoke(
      concat({"sweep", "--normal", normal, "--fault", fault, "--values", "2,4,8,16", "--parallel", "3"}, flags));
  ASSERT_EQ(par.code, 0) << par.err;
  EXPECT_EQ(par.out, seq.out);

  // The latent_dim=4 row equals a standalone train + eval with the same seed.
  const std::string ckpt = (dir / "m.ckpt").string();
  auto train_flags = flags;
  for (std::size_t i = 0; i < train_flags.size(); ++i)
    if (train_flags[i] == "--latent-dim") train_flags[i + 1] = "4";
  ASSERT_EQ(invoke(concat({"train", "--data", normal, "--out", ckpt}, train_flags)).code, 0);
  const CliRun e = invoke({"eval", "--checkpoint", ckpt, "--normal", ckpt + ".holdout.f32", "--fault", fault,
                     "--out-dir", (dir / "e").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  const std::string metrics = slurp(dir / "e" / "metrics.txt");
  const std::string auc = metrics.substr(4, metrics.find('\n') - 4);
  EXPECT_NE(seq.out.find("\n4," + auc + ","), std::string::npos) << seq.out << metrics;

  EXPECT_EQ(invoke(concat({"sweep", "--normal", normal, "--fault", fault, "--axis", "depth"}, flags)).code, 1);
}

TEST(CliExitCodes, ErrorKindsMapToCodes) {
  EXPECT_EQ(cli::exit_code_for(UsageError("x")), 1);
  EXPECT_EQ(cli::exit_code_for(ConfigError("x")), 1);
  EXPECT_EQ(cli::exit_code_for(ParseError("x")), 2);
  EXPECT_EQ(cli::exit_code_for(FormatError("x")), 2);
  EXPECT_EQ(cli::exit_code_for(DimensionError("x")), 2);
  EXPECT_EQ(cli::exit_code_for(IoError("x")), 2);
  EXPECT_EQ(cli::exit_code_for(NumericalError("x")), 3);
}

}  // namespace
}  // namespace tsgan
