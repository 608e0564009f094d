#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "capsed/cli.hpp"

using namespace capsed;
namespace fs = std::filesystem;

namespace {

struct Result {
  int status;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int status = run_cli(args, out, err);
  return {status, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("capsed_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

// Small enough to train in well under a second per epoch.
const std::vector<std::string> kTiny{
    "--set", "data.train_clips=3",       "--set", "data.val_clips=1",         "--set", "data.test_clips=1",
    "--set", "data.clip_seconds=2",      "--set", "features.bands=16",        "--set", "model.pools=1,2,2,2",
    "--set", "model.conv_channels=8",    "--set", "model.primary_channels=2", "--set", "model.primary_dim=4",
    "--set", "model.gru_hidden=4",       "--set", "model.fc_hidden=8",        "--set", "train.window=8",
    "--set", "train.hop=4",              "--set", "train.batch_size=8"};

std::vector<std::string> with_tiny(std::vector<std::string> args) {
  args.insert(args.end(), kTiny.begin(), kTiny.end());
  return args;
}

// One corpus and one trained checkpoint shared by the command tests.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fresh_dir("pipeline");
    auto gen = run(with_tiny({"gen-data", "-o", (root_ / "corpus").string(), "--seed", "3"}));
    ASSERT_EQ(gen.status, 0) << gen.err;
    auto train = run(with_tiny({"train", "-m", manifest().string(), "-o", (root_ / "run").string(), "--max-epochs",
                                "1"}));
    ASSERT_EQ(train.status, 0) << train.err;
  }
  static fs::path manifest() { return root_ / "corpus" / "manifest.tsv"; }
  static fs::path checkpoint() { return root_ / "run" / "checkpoint.bin"; }
  static inline fs::path root_;
};

// Eval mode needs batchnorm statistics; one train-mode pass provides them.
void warm_up(CapsuleSed& model, const FeatureMatrix& f) {
  const auto& m = model.config();
  auto windows = windowize(f, EventRoll(0, f.frames), m.frames, Mode::Eval, m.frames);
  const std::vector<const Sample*> batch{&windows[0]};
  Rng rng(0);
  NoGradGuard no_grad;
  model.forward(batch_features(batch), Mode::Train, rng);
}

}  // namespace

TEST(RunConfig, EmptyFileGivesDefaults) {
  auto c = load_run_config(std::nullopt);
  EXPECT_EQ(c.model, ModelConfig{});
  EXPECT_EQ(c.train.adam.learning_rate, 1e-4);
  EXPECT_EQ(c.splits.total(), 30u);
}

TEST(RunConfig, OverridesBeatTheFile) {
  std::istringstream in("[train]\nlearning_rate = 0.01\nbatch_size = 4\n[run]\nseed = 5\n");
  std::vector<std::string> overrides{"train.batch_size=32"};
  auto c = parse_run_config(in, overrides);
  EXPECT_EQ(c.train.adam.learning_rate, 0.01);
  EXPECT_EQ(c.train.batch_size, 32u);
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.train.seed, 5u);
  EXPECT_EQ(c.corpus.seed, 5u);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  std::istringstream unknown("[model]\nwidth = 3\n");
  EXPECT_THROW(parse_run_config(unknown), std::invalid_argument);
  std::istringstream bad("[train]\nbatch_size = -3\n");
  EXPECT_THROW(parse_run_config(bad), std::invalid_argument);
  std::istringstream junk("[train]\nlearning_rate = 1e-3x\n");
  EXPECT_THROW(parse_run_config(junk), std::invalid_argument);
  std::vector<std::string> no_eq{"train.batch_size"};
  std::istringstream empty;
  EXPECT_THROW(parse_run_config(empty, no_eq), std::invalid_argument);
}

TEST(RunConfig, CrossFieldConstraintsAreRechecked) {
  std::istringstream caps("[model]\nprimary_channels = 16\n");
  EXPECT_THROW(parse_run_config(caps), std::invalid_argument);
  std::istringstream grid("[train]\nthresholds = 0.4,0.6\n");
  EXPECT_THROW(parse_run_config(grid), std::invalid_argument);
  std::istringstream pools("[features]\nbands = 20\n");
  EXPECT_THROW(parse_run_config(pools), std::invalid_argument);
}

TEST(RunConfig, WrittenConfigReadsBackIdentically) {
  std::vector<std::string> o{"model.dropout=0.125", "train.thresholds=0.6,0.7", "data.manifest=/x/m.tsv"};
  std::istringstream empty;
  auto a = parse_run_config(empty, o);
  std::stringstream text;
  write_run_config(text, a);
  auto b = parse_run_config(text);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.train.thresholds.candidates, b.train.thresholds.candidates);
  EXPECT_EQ(a.manifest, b.manifest);
  std::stringstream again;
  write_run_config(again, b);
  std::stringstream first;
  write_run_config(first, a);
  EXPECT_EQ(first.str(), again.str());
}

TEST(CouplingGrid, UntrainedSingleIterationIsUniform) {
  ModelConfig m;
  m.routing_iterations = 1;
  CapsuleSed model(m, 1);
  FeatureMatrix f(80, 128);
  Rng rng(2);
  std::normal_distribution<double> g;
  for (auto& v : f.values) v = g(rng);
  warm_up(model, f);
  std::vector<std::string> labels;
  for (std::size_t k = 0; k < 16; ++k) labels.push_back("c" + std::to_string(k));
  auto r = inspect_routing(model, f, 79, 128, labels);
  ASSERT_EQ(r.grids.size(), 16u);
  for (const auto& grid : r.grids) {
    EXPECT_EQ(grid.bands, 5u);
    EXPECT_EQ(grid.channels, 32u);
    for (double v : grid.values) EXPECT_NEAR(v, 1.0 / 16.0, 1e-15);
  }
}

TEST(CouplingGrid, ValuesAreCouplingsOverClasses) {
  ModelConfig m;
  m.bands = 16;
  m.frames = 8;
  m.conv_channels = 8;
  m.primary_channels = 2;
  m.primary_dim = 4;
  m.classes = 3;
  m.gru_hidden = 4;
  m.fc_hidden = 8;
  CapsuleSed model(m, 3);
  FeatureMatrix f(16, 20);
  Rng rng(4);
  std::normal_distribution<double> g;
  for (auto& v : f.values) v = g(rng);
  warm_up(model, f);
  std::vector<std::string> labels{"a", "b", "c"};
  auto r = inspect_routing(model, f, 13, 8, labels);
  ASSERT_EQ(r.grids.size(), 3u);
  EXPECT_EQ(r.grids[0].bands, m.pooled_bands());
  EXPECT_EQ(r.grids[0].channels, 2u);
  for (std::size_t i = 0; i < r.grids[0].values.size(); ++i) {
    double s = 0.0;
    for (const auto& grid : r.grids) {
      EXPECT_GE(grid.values[i], 0.0);
      EXPECT_LE(grid.values[i], 1.0);
      s += grid.values[i];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_THROW(inspect_routing(model, f, 20, 8, labels), std::out_of_range);
}

TEST(CouplingGrid, DominantBandUsesChannelMeanAndPrefersLowerOnTies) {
  CouplingGrid g{"x", 3, 2, {0.1, 0.5, 0.4, 0.2, 0.3, 0.3}};
  EXPECT_EQ(g.dominant_band(), 1u);
  g.values = {0.3, 0.3, 0.3, 0.3, 0.1, 0.1};
  EXPECT_EQ(g.dominant_band(), 0u);
  std::ostringstream os;
  std::vector<CouplingGrid> grids{g};
  write_coupling_grids(os, grids);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "class\tband\tc0\tc1");
}

TEST(Cli, NoVerbOrUnknownVerbFails) {
  EXPECT_NE(run({}).status, 0);
  EXPECT_NE(run({"fly"}).status, 0);
}

TEST(Cli, GenDataRefusesNonEmptyDirectory) {
  const fs::path dir = fresh_dir("refuse");
  fs::create_directories(dir);
  std::ofstream(dir / "keep.txt") << "x";
  auto r = run(with_tiny({"gen-data", "-o", dir.string()}));
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("not empty"), std::string::npos);
  EXPECT_EQ(run(with_tiny({"gen-data", "-o", dir.string(), "--force"})).status, 0);
}

TEST(Cli, GenDataIsDeterministicUnderSeed) {
  const fs::path a = fresh_dir("seed_a"), b = fresh_dir("seed_b");
  ASSERT_EQ(run(with_tiny({"gen-data", "-o", a.string(), "--seed", "7"})).status, 0);
  ASSERT_EQ(run(with_tiny({"gen-data", "-o", b.string(), "--seed", "7"})).status, 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().filename() == "config.ini") continue;
    EXPECT_EQ(slurp(e.path()), slurp(b / fs::relative(e.path(), a))) << e.path();
    ++files;
  }
  EXPECT_EQ(files, 2u * 5u + 2u);  // wav + annotations per clip, classes.txt, manifest.tsv
}

TEST(Cli, GenDataDefaultWritesThirtyClips) {
  const fs::path dir = fresh_dir("default");
  auto r = run({"gen-data", "-o", dir.string(), "--set", "data.clip_seconds=1"});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(r.out, (dir / "manifest.tsv").string() + "\n");
  EXPECT_EQ(read_manifest(dir / "manifest.tsv").size(), 30u);
  std::size_t wavs = 0;
  for (const auto& e : fs::directory_iterator(dir / "audio")) wavs += e.path().extension() == ".wav";
  EXPECT_EQ(wavs, 30u);
}

TEST(Cli, TrainWithoutManifestFailsWithPath) {
  auto r = run({"train", "-m", "/definitely/missing/manifest.tsv", "-o", fresh_dir("nomanifest").string()});
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("/definitely/missing/manifest.tsv"), std::string::npos);
  EXPECT_NE(run({"train", "-o", fresh_dir("nomanifest").string()}).status, 0);
}

TEST(Cli, BadConfigFailsBeforeWork) {
  auto r = run({"gen-data", "-o", fresh_dir("badcfg").string(), "--set", "model.primary_dim=7"});
  EXPECT_NE(r.status, 0);
  EXPECT_FALSE(fs::exists(fresh_dir("badcfg")));
}

TEST_F(CliPipeline, TrainWritesArtifactsAndOneEpoch) {
  const fs::path run_dir = root_ / "run";
  EXPECT_TRUE(fs::exists(run_dir / "checkpoint.bin"));
  EXPECT_TRUE(fs::exists(run_dir / "threshold.txt"));
  EXPECT_EQ(count_lines(run_dir / "history.tsv"), 2u);
  auto echoed = load_run_config(run_dir / "config.ini");
  EXPECT_EQ(echoed.train.max_epochs, 1u);
  EXPECT_EQ(echoed.manifest, manifest());
  auto ckpt = load_checkpoint(checkpoint());
  const double stored = std::stod(slurp(run_dir / "threshold.txt"));
  EXPECT_EQ(ckpt.threshold, stored);
  EXPECT_EQ(ckpt.labels, read_class_list(root_ / "corpus" / "classes.txt"));
}

TEST_F(CliPipeline, EvaluateReportsFourMetrics) {
  const fs::path out = root_ / "eval";
  auto r = run({"evaluate", "-k", checkpoint().string(), "-m", manifest().string(), "-o", out.string()});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.out.find("frame"), std::string::npos);
  std::ifstream in(out / "metrics.tsv");
  std::string line;
  std::getline(in, line);
  std::vector<std::string> names;
  while (std::getline(in, line)) names.push_back(line.substr(0, line.find('\t')));
  EXPECT_EQ(names, (std::vector<std::string>{"ER_frame", "F1_frame", "ER_second", "F1_second"}));
  EXPECT_TRUE(fs::exists(out / "config.ini"));
  auto bad = run({"evaluate", "-k", checkpoint().string(), "-m", manifest().string(), "--split", "dev"});
  EXPECT_NE(bad.status, 0);
}

TEST_F(CliPipeline, PredictOutputParsesBack) {
  const auto entries = read_manifest(manifest());
  const fs::path dest = root_ / "pred" / "clip.txt";
  auto r = run({"predict", "-k", checkpoint().string(), "-i", entries.back().audio.string(), "-o", dest.string(),
                "--threshold", "0.01"});
  ASSERT_EQ(r.status, 0) << r.err;
  auto events = load_annotations(dest);
  EXPECT_FALSE(events.empty());
  auto ckpt = load_checkpoint(checkpoint());
  for (const auto& e : events) {
    EXPECT_NE(std::find(ckpt.labels.begin(), ckpt.labels.end(), e.label), ckpt.labels.end());
    EXPECT_LT(e.onset, e.offset);
  }
  std::vector<AnnotationEvent> reread = events;
  save_annotations(root_ / "pred" / "again.txt", reread);
  EXPECT_EQ(slurp(dest), slurp(root_ / "pred" / "again.txt"));
}

TEST_F(CliPipeline, PredictAllInactiveGivesEmptyFile) {
  const auto entries = read_manifest(manifest());
  const fs::path dest = root_ / "pred" / "none.txt";
  auto r = run({"predict", "-k", checkpoint().string(), "-i", entries.front().audio.string(), "-o", dest.string(),
                "--threshold", "0.9999999"});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_TRUE(fs::exists(dest));
  EXPECT_EQ(fs::file_size(dest), 0u);
}

TEST_F(CliPipeline, PredictAcceptsFeatureCache) {
  const auto entries = read_manifest(manifest());
  auto ckpt = load_checkpoint(checkpoint());
  const Audio audio = read_wav(entries.front().audio);
  const fs::path cache = root_ / "clip.csed";
  write_feature_cache(cache, logmel(audio.samples, audio.sample_rate, ckpt.features));
  const fs::path from_cache = root_ / "pred" / "cache.txt", from_wav = root_ / "pred" / "wav.txt";
  ASSERT_EQ(run({"predict", "-k", checkpoint().string(), "-i", cache.string(), "-o", from_cache.string(),
                 "--threshold", "0.3"}).status, 0);
  ASSERT_EQ(run({"predict", "-k", checkpoint().string(), "-i", entries.front().audio.string(), "-o",
                 from_wav.string(), "--threshold", "0.3"}).status, 0);
  EXPECT_EQ(slurp(from_cache), slurp(from_wav));
  EXPECT_NE(run({"predict", "-k", checkpoint().string(), "-i", "/missing.wav"}).status, 0);
}

TEST_F(CliPipeline, InspectRoutingWritesGrid) {
  const auto entries = read_manifest(manifest());
  const fs::path out = root_ / "routing";
  auto r = run({"inspect-routing", "-k", checkpoint().string(), "-i", entries.front().audio.string(), "-f", "10",
                "-o", out.string()});
  ASSERT_EQ(r.status, 0) << r.err;
  auto ckpt = load_checkpoint(checkpoint());
  // header plus one row per (class, band)
  EXPECT_EQ(count_lines(out / "couplings.tsv"), 1 + ckpt.labels.size() * ckpt.model.pooled_bands());
  EXPECT_NE(r.out.find(ckpt.labels.front()), std::string::npos);
  auto beyond = run({"inspect-routing", "-k", checkpoint().string(), "-i", entries.front().audio.string(), "-f",
                     "50", "-o", out.string()});
  EXPECT_NE(beyond.status, 0);
}

TEST_F(CliPipeline, RepeatSummarizesRuns) {
  const fs::path out = root_ / "repeat";
  auto r = run(with_tiny({"repeat", "-m", manifest().string(), "-o", out.string(), "-n", "2", "--max-epochs", "1"}));
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(count_lines(out / "repeat.tsv"), 5u);
  EXPECT_NE(run(with_tiny({"repeat", "-m", manifest().string(), "-n", "1"})).status, 0);
}
