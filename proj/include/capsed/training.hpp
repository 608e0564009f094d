#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capsed/features.hpp"
#include "capsed/metrics.hpp"
#include "capsed/model.hpp"
#include "capsed/thresholding.hpp"

namespace capsed {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

/// Adam with bias correction and a fixed learning rate.
class Adam {
 public:
  explicit Adam(AdamConfig config = {});

  const AdamConfig& config() const { return config_; }
  std::uint64_t steps() const { return steps_; }

  /// Applies one update from the accumulated gradients. Throws
  /// std::runtime_error naming the parameter if any gradient is non-finite;
  /// nothing is modified in that case.
  void step(std::span<NamedTensor> params);

  struct Moments {
    std::string name;
    std::vector<double> m, v;
  };
  const std::vector<Moments>& moments() const { return moments_; }
  void restore(std::uint64_t steps, std::vector<Moments> moments);

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<Moments> moments_;
};

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 16;
  std::size_t patience = 10;
  std::size_t max_epochs = 200;
  std::size_t window = 128;
  std::size_t train_hop = 64;
  std::uint64_t seed = 1;
  ThresholdConfig thresholds = ThresholdConfig::default_grid();

  void validate() const;
};

/// A whole clip: normalized features and frame-level ground truth.
struct ClipData {
  std::string name;
  FeatureMatrix features;
  EventRoll roll;
};

/// Parameter values and batchnorm statistics, detached from any graph.
struct ModelState {
  std::vector<std::vector<double>> parameters;
  std::vector<RunningStats> batchnorm;
};

ModelState capture_state(const CapsuleSed& model);
void restore_state(CapsuleSed& model, const ModelState& state);

/// Eval-mode windows stitched back into one clip-length probability matrix.
ActivityProbabilities predict_clip(CapsuleSed& model, const FeatureMatrix& features, std::size_t window);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<double> val_error_rate;
  double val_f1 = 0.0;
  double threshold = kMinThreshold;
  std::size_t epochs_since_improvement = 0;
};

struct FitResult {
  ModelState best;
  std::size_t best_epoch = 0;
  double threshold = kMinThreshold;  // chosen on validation at the best epoch
  std::vector<EpochRecord> history;
  Adam optimizer;
};

/// Minibatch Adam over the training windows. After each epoch the
/// validation clips are scored at the best grid threshold; the state with the
/// lowest frame ER (ties to higher frame F1) is kept, and training stops once
/// `patience` epochs pass without improvement. The model is left holding the
/// best state. `on_epoch`, when set, sees every record as it is produced.
FitResult fit(CapsuleSed& model, std::span<const Sample> train, std::span<const ClipData> val,
              const TrainConfig& config, const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Training windows of every clip.
std::vector<Sample> training_samples(std::span<const ClipData> clips, std::size_t window, std::size_t hop);

/// Probabilities, binarized rolls and the four-metric report for a set of clips.
struct Evaluation {
  std::vector<ActivityProbabilities> probabilities;
  std::vector<EventRoll> predictions;
  MetricReport report;
};
Evaluation evaluate_clips(CapsuleSed& model, std::span<const ClipData> clips, double threshold, std::size_t window);

/// "epoch train_loss val_ER_frame val_F1_frame threshold patience" rows.
void write_history(std::ostream& os, std::span<const EpochRecord> history);
void print_epoch(std::ostream& os, const EpochRecord& record, std::size_t patience);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
};

/// Requires at least two values.
Summary summarize(std::span<const double> values);
/// "68.8 ± 0.7" style: `scale` multiplies both numbers before printing.
std::string format_summary(const Summary& s, int decimals, double scale = 1.0);

/// Runs `run(seed)` for seeds base_seed .. base_seed + n - 1 and summarizes
/// ER_frame, F1_frame, ER_second and F1_second across them.
std::map<std::string, Summary> repeat_runs(std::size_t n, std::uint64_t base_seed,
                                           const std::function<MetricReport(std::uint64_t)>& run);
/// Table with one row per metric: name, mean, std, formatted.
void write_repeat_table(std::ostream& os, const std::map<std::string, Summary>& summary);

}  // namespace capsed
