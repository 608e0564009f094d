#include "capsed/cli.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <thread>

#include "capsed/dataset.hpp"
#include "capsed/metrics.hpp"
#include "capsed/thresholding.hpp"

namespace capsed {

namespace fs = std::filesystem;

std::size_t CouplingGrid::dominant_band() const {
  std::size_t best = 0;
  double best_mean = -1.0;
  for (std::size_t f = 0; f < bands; ++f) {
    double s = 0.0;
    for (std::size_t c = 0; c < channels; ++c) s += at(f, c);
    const double mean = s / static_cast<double>(channels);
    if (mean > best_mean) {
      best_mean = mean;
      best = f;
    }
  }
  return best;
}

std::vector<CouplingGrid> coupling_grids(const RoutingState& state, std::size_t frame, const ModelConfig& config,
                                         std::span<const std::string> labels) {
  const Tensor& c = state.couplings;
  const std::size_t bands = config.pooled_bands(), channels = config.primary_channels;
  if (c.rank() != 3 || c.dim(1) != bands * channels || c.dim(2) != config.classes) {
    throw ShapeError("coupling_grids: couplings " + to_string(c.shape()) + " do not match the model");
  }
  if (frame >= c.dim(0)) throw std::out_of_range("coupling_grids: frame out of range");
  if (labels.size() != config.classes) throw std::invalid_argument("coupling_grids: label count differs from classes");
  const auto v = c.data();
  const std::size_t low = bands * channels, high = config.classes;
  std::vector<CouplingGrid> grids;
  for (std::size_t k = 0; k < high; ++k) {
    CouplingGrid g{labels[k], bands, channels, std::vector<double>(low)};
    for (std::size_t i = 0; i < low; ++i) g.values[i] = v[(frame * low + i) * high + k];
    grids.push_back(std::move(g));
  }
  return grids;
}

RoutingInspection inspect_routing(CapsuleSed& model, const FeatureMatrix& features, std::size_t frame,
                                  std::size_t window, std::span<const std::string> labels) {
  if (frame >= features.frames) {
    throw std::out_of_range("inspect_routing: frame " + std::to_string(frame) + " beyond clip of " +
                            std::to_string(features.frames) + " frames");
  }
  NoGradGuard no_grad;
  const auto windows = windowize(features, EventRoll(0, features.frames), window, Mode::Eval, window);
  const auto& sample = windows[frame / window];
  const std::size_t local = frame - sample.start;
  Rng unused(0);
  const std::vector<const Sample*> batch{&sample};
  const auto out = model.forward(batch_features(batch), Mode::Eval, unused, true);
  RoutingInspection r;
  r.grids = coupling_grids(out.routing.back(), local, model.config(), labels);
  for (std::size_t k = 0; k < model.config().classes; ++k) r.probabilities.push_back(out.probabilities.at({0, k, local}));
  return r;
}

void print_coupling_grids(std::ostream& os, std::span<const CouplingGrid> grids) {
  for (const auto& g : grids) {
    os << g.label << " (dominant band " << g.dominant_band() << ")\n";
    for (std::size_t f = g.bands; f-- > 0;) {
      os << "  band " << f << ' ';
      for (std::size_t c = 0; c < g.channels; ++c) os << ' ' << std::fixed << std::setprecision(3) << g.at(f, c);
      os << '\n';
    }
  }
}

void write_coupling_grids(std::ostream& os, std::span<const CouplingGrid> grids) {
  os << "class\tband";
  const std::size_t channels = grids.empty() ? 0 : grids.front().channels;
  for (std::size_t c = 0; c < channels; ++c) os << "\tc" << c;
  os << '\n' << std::setprecision(17);
  for (const auto& g : grids)
    for (std::size_t f = 0; f < g.bands; ++f) {
      os << g.label << '\t' << f;
      for (std::size_t c = 0; c < g.channels; ++c) os << '\t' << g.at(f, c);
      os << '\n';
    }
}

FeatureMatrix load_input_features(const fs::path& input, const FeatureConfig& features) {
  if (!fs::exists(input)) throw std::runtime_error("input not found: " + input.string());
  if (input.extension() == ".wav") {
    const Audio audio = read_wav(input);
    return logmel(audio.samples, audio.sample_rate, features);
  }
  return read_feature_cache(input);
}

std::vector<ClipData> load_split(const fs::path& manifest, const std::string& split, const Checkpoint& ckpt) {
  if (!fs::exists(manifest)) throw std::runtime_error("manifest not found: " + manifest.string());
  const auto index = class_index(ckpt.labels);
  std::vector<ClipData> clips;
  for (const auto& e : read_manifest(manifest)) {
    if (e.split != split) continue;
    auto clip = make_clip_data(e.audio.stem().string(), read_wav(e.audio), load_annotations(e.annotations), index,
                               ckpt.features);
    clip.features = apply_normalizer(ckpt.normalizer, clip.features);
    clips.push_back(std::move(clip));
  }
  if (clips.empty()) throw std::runtime_error(manifest.string() + ": no clips in split '" + split + "'");
  return clips;
}

namespace {

struct Common {
  std::optional<std::string> config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> output;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_file, "INI configuration file");
    app->add_option("--set", sets, "Override a config key, section.key=value (repeatable)");
    app->add_option("--seed", seed, "Random seed");
    app->add_option("--threads", threads, "Worker threads for linear algebra (default: all cores)");
    app->add_option("-o,--output", output, "Output location");
  }

  RunConfig load(std::vector<std::string> extra = {}) const {
    std::vector<std::string> all = sets;
    if (seed) all.push_back("run.seed=" + std::to_string(*seed));
    if (threads) all.push_back("run.threads=" + std::to_string(*threads));
    if (output) all.push_back("run.output=" + *output);
    all.insert(all.end(), extra.begin(), extra.end());
    std::optional<fs::path> file;
    if (config_file) file = *config_file;
    RunConfig config = load_run_config(file, all);
    const std::size_t n = config.threads ? config.threads : std::max(1u, std::thread::hardware_concurrency());
    Eigen::setNbThreads(static_cast<int>(n));
    return config;
  }
};

fs::path output_root() {
  const char* root = std::getenv("CAPSED_OUTPUT_ROOT");
  return root && *root ? fs::path(root) : fs::path(".");
}

fs::path output_dir(const RunConfig& config, const char* fallback) {
  fs::path dir = config.output.empty() ? output_root() / fallback : config.output;
  fs::create_directories(dir);
  return dir;
}

void echo_config(const fs::path& dir, const RunConfig& config) {
  std::ofstream os(dir / "config.ini");
  write_run_config(os, config);
}

template <class Fn>
void write_file(const fs::path& path, Fn&& fn) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  fn(os);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

fs::path require_manifest(const RunConfig& config) {
  if (config.manifest.empty()) throw std::invalid_argument("no manifest given (use --manifest or data.manifest)");
  if (!fs::exists(config.manifest)) throw std::runtime_error("manifest not found: " + config.manifest.string());
  return config.manifest;
}

struct Trained {
  CapsuleSed model;
  FitResult result;
};

Trained train_model(const RunConfig& config, const Dataset& data, std::uint64_t seed, std::ostream* log) {
  TrainConfig tc = config.train;
  tc.seed = seed;
  CapsuleSed model(config.model_config(data.labels.size()), seed);
  auto samples = training_samples(data.train, tc.window, tc.train_hop);
  auto result = fit(model, samples, data.val, tc, [&](const EpochRecord& r) {
    if (log) print_epoch(*log, r, tc.patience);
  });
  return {std::move(model), std::move(result)};
}

int cmd_gen_data(const RunConfig& config, bool force, std::ostream& out) {
  const fs::path dir = config.output.empty() ? output_root() / "corpus" : config.output;
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw std::runtime_error(dir.string() + " is not empty (use --force to overwrite)");
  }
  fs::create_directories(dir);
  const fs::path manifest = write_corpus(dir, config.corpus, config.splits);
  echo_config(dir, config);
  out << manifest.string() << '\n';
  return 0;
}

int cmd_train(const RunConfig& config, std::ostream& out) {
  const Dataset data = load_dataset(require_manifest(config), config.features);
  const fs::path dir = output_dir(config, "run");
  echo_config(dir, config);
  out << data.train.size() << " train / " << data.val.size() << " val clips, " << data.labels.size() << " classes\n";
  auto trained = train_model(config, data, config.seed, &out);
  const auto ckpt = make_checkpoint(trained.model, config.features, config.train.window, data.labels, data.normalizer,
                                    trained.result.threshold, &trained.result.optimizer);
  save_checkpoint(dir / "checkpoint.bin", ckpt);
  write_file(dir / "history.tsv", [&](std::ostream& os) { write_history(os, trained.result.history); });
  write_file(dir / "threshold.txt", [&](std::ostream& os) { os << trained.result.threshold << '\n'; });
  out << "best epoch " << trained.result.best_epoch << ", threshold " << trained.result.threshold << '\n';
  out << "checkpoint " << (dir / "checkpoint.bin").string() << '\n';
  return 0;
}

int cmd_evaluate(const RunConfig& config, const fs::path& checkpoint, const std::string& split,
                 std::optional<double> threshold, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  auto clips = load_split(require_manifest(config), split, ckpt);
  CapsuleSed model = restore_model(ckpt);
  const double c = threshold.value_or(ckpt.threshold);
  const auto ev = evaluate_clips(model, clips, c, ckpt.window);
  const fs::path dir = output_dir(config, "evaluation");
  echo_config(dir, config);
  write_report(out, ev.report, c);
  write_file(dir / "metrics.tsv", [&](std::ostream& os) { write_report_table(os, ev.report); });
  return 0;
}

int cmd_predict(const RunConfig& config, const fs::path& checkpoint, const fs::path& input,
                std::optional<double> threshold, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const FeatureMatrix features = apply_normalizer(ckpt.normalizer, load_input_features(input, ckpt.features));
  CapsuleSed model = restore_model(ckpt);
  const auto probs = predict_clip(model, features, ckpt.window);
  const auto roll = binarize(probs, threshold.value_or(ckpt.threshold));
  const auto events = events_from_roll(roll, ckpt.features.frame_seconds, ckpt.labels);
  fs::path dest = config.output.empty() ? output_root() / (input.stem().string() + ".txt") : config.output;
  if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
  save_annotations(dest, events);
  out << events.size() << " events -> " << dest.string() << '\n';
  return 0;
}

int cmd_inspect_routing(const RunConfig& config, const fs::path& checkpoint, const fs::path& input,
                        std::size_t frame, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const FeatureMatrix features = apply_normalizer(ckpt.normalizer, load_input_features(input, ckpt.features));
  CapsuleSed model = restore_model(ckpt);
  const auto r = inspect_routing(model, features, frame, ckpt.window, ckpt.labels);
  const fs::path dir = output_dir(config, "routing");
  echo_config(dir, config);
  out << "frame " << frame << '\n';
  for (std::size_t k = 0; k < r.grids.size(); ++k)
    out << "  p(" << r.grids[k].label << ") = " << std::fixed << std::setprecision(3) << r.probabilities[k] << '\n';
  print_coupling_grids(out, r.grids);
  write_file(dir / "couplings.tsv", [&](std::ostream& os) { write_coupling_grids(os, r.grids); });
  write_file(dir / "couplings.txt", [&](std::ostream& os) { print_coupling_grids(os, r.grids); });
  return 0;
}

int cmd_repeat(const RunConfig& config, std::ostream& out) {
  const Dataset data = load_dataset(require_manifest(config), config.features);
  const fs::path dir = output_dir(config, "repeat");
  echo_config(dir, config);
  const auto table = repeat_runs(config.repeats, config.seed, [&](std::uint64_t seed) {
    auto trained = train_model(config, data, seed, nullptr);
    const auto ev = evaluate_clips(trained.model, data.test, trained.result.threshold, config.train.window);
    out << "seed " << seed << ": ER_frame " << ev.report.frame.error_rate.value_or(-1.0) << " F1_frame "
        << ev.report.frame.f1 << '\n';
    return ev.report;
  });
  write_repeat_table(out, table);
  write_file(dir / "repeat.tsv", [&](std::ostream& os) { write_repeat_table(os, table); });
  return 0;
}

}  // namespace

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Polyphonic sound event detection with capsule routing", "capsed"};
  app.require_subcommand(1);

  Common gen_opts, train_opts, eval_opts, predict_opts, routing_opts, repeat_opts;
  std::optional<std::string> manifest;
  std::string checkpoint, input, split = "test";
  std::optional<double> threshold;
  std::optional<std::size_t> max_epochs, runs;
  std::size_t frame = 0;
  bool force = false;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic polyphonic corpus");
  gen_opts.attach(gen);
  gen->add_flag("--force", force, "Write into a non-empty directory");

  auto* train = app.add_subcommand("train", "Train a detector and choose its threshold");
  train_opts.attach(train);
  train->add_option("-m,--manifest", manifest, "Corpus manifest");
  train->add_option("--max-epochs", max_epochs, "Epoch limit");

  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a manifest split");
  eval_opts.attach(evaluate);
  evaluate->add_option("-m,--manifest", manifest, "Corpus manifest");
  evaluate->add_option("-k,--checkpoint", checkpoint, "Checkpoint file")->required();
  evaluate->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  evaluate->add_option("--threshold", threshold, "Override the stored threshold");

  auto* predict = app.add_subcommand("predict", "Detect events in one recording");
  predict_opts.attach(predict);
  predict->add_option("-k,--checkpoint", checkpoint, "Checkpoint file")->required();
  predict->add_option("-i,--input", input, "WAV file or feature cache")->required();
  predict->add_option("--threshold", threshold, "Override the stored threshold");

  auto* routing = app.add_subcommand("inspect-routing", "Dump coupling coefficients at one frame");
  routing_opts.attach(routing);
  routing->add_option("-k,--checkpoint", checkpoint, "Checkpoint file")->required();
  routing->add_option("-i,--input", input, "WAV file or feature cache")->required();
  routing->add_option("-f,--frame", frame, "Frame index within the clip")->required();

  auto* repeat = app.add_subcommand("repeat", "Train and test over consecutive seeds");
  repeat_opts.attach(repeat);
  repeat->add_option("-m,--manifest", manifest, "Corpus manifest");
  repeat->add_option("-n,--runs", runs, "Number of runs");
  repeat->add_option("--max-epochs", max_epochs, "Epoch limit per run");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  std::vector<std::string> extra;
  if (manifest) extra.push_back("data.manifest=" + *manifest);
  if (max_epochs) extra.push_back("train.max_epochs=" + std::to_string(*max_epochs));
  if (runs) extra.push_back("run.repeats=" + std::to_string(*runs));

  try {
    if (gen->parsed()) return cmd_gen_data(gen_opts.load(extra), force, out);
    if (train->parsed()) return cmd_train(train_opts.load(extra), out);
    if (evaluate->parsed()) return cmd_evaluate(eval_opts.load(extra), checkpoint, split, threshold, out);
    if (predict->parsed()) return cmd_predict(predict_opts.load(extra), checkpoint, input, threshold, out);
    if (routing->parsed()) return cmd_inspect_routing(routing_opts.load(extra), checkpoint, input, frame, out);
    return cmd_repeat(repeat_opts.load(extra), out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace capsed
