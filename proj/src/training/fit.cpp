#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "capsed/training.hpp"

namespace capsed {

namespace {

double er_or_inf(const std::optional<double>& er) { return er.value_or(std::numeric_limits<double>::infinity()); }

}  // namespace

void TrainConfig::validate() const {
  adam.validate();
  if (batch_size < 1) throw std::invalid_argument("train config: batch size must be positive");
  if (patience < 1) throw std::invalid_argument("train config: patience must be at least 1");
  if (max_epochs < 1) throw std::invalid_argument("train config: max epochs must be positive");
  if (window < 1 || train_hop < 1 || train_hop > window) {
    throw std::invalid_argument("train config: hop must lie in [1, window]");
  }
  thresholds.validate();
}

ModelState capture_state(const CapsuleSed& model) {
  ModelState s;
  for (const auto& p : model.parameters()) s.parameters.emplace_back(p.value.data().begin(), p.value.data().end());
  s.batchnorm = model.batchnorm_stats();
  return s;
}

void restore_state(CapsuleSed& model, const ModelState& state) {
  auto& params = model.parameters();
  if (state.parameters.size() != params.size() || state.batchnorm.size() != model.batchnorm_stats().size()) {
    throw std::invalid_argument("restore_state: state does not match the model layout");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].value.mutable_data();
    if (dst.size() != state.parameters[i].size()) {
      throw std::invalid_argument("restore_state: size mismatch for " + params[i].name);
    }
    std::copy(state.parameters[i].begin(), state.parameters[i].end(), dst.begin());
  }
  model.batchnorm_stats() = state.batchnorm;
}

ActivityProbabilities predict_clip(CapsuleSed& model, const FeatureMatrix& features, std::size_t window) {
  NoGradGuard no_grad;
  const auto windows = windowize(features, EventRoll(0, features.frames), window, Mode::Eval, window);
  std::vector<const Sample*> ptrs;
  for (const auto& w : windows) ptrs.push_back(&w);
  Rng unused(0);
  const auto out = model.forward(batch_features(ptrs), Mode::Eval, unused);
  const std::size_t k = model.config().classes;
  ActivityProbabilities probs(k, features.frames);
  const auto p = out.probabilities.data();
  for (std::size_t w = 0; w < windows.size(); ++w)
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t t = 0; t < window; ++t)
        if (windows[w].mask[t]) probs.at(c, windows[w].start + t) = p[(w * k + c) * window + t];
  return probs;
}

std::vector<Sample> training_samples(std::span<const ClipData> clips, std::size_t window, std::size_t hop) {
  std::vector<Sample> out;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    for (auto& s : windowize(clips[c].features, clips[c].roll, window, Mode::Train, hop)) {
      s.clip = c;
      out.push_back(std::move(s));
    }
  }
  return out;
}

FitResult fit(CapsuleSed& model, std::span<const Sample> train, std::span<const ClipData> val,
              const TrainConfig& config, const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("fit: empty training split");
  if (val.empty()) throw std::invalid_argument("fit: empty validation split");

  FitResult result{{}, 0, kMinThreshold, {}, Adam(config.adam)};
  Rng rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<EventRoll> val_rolls;
  for (const auto& c : val) val_rolls.push_back(c.roll);

  double best_er = std::numeric_limits<double>::infinity(), best_f1 = -1.0;
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<const Sample*> batch;
      std::vector<EventRoll> targets;
      std::vector<FrameMask> masks;
      for (std::size_t i = begin; i < end; ++i) {
        const Sample& s = train[order[i]];
        batch.push_back(&s);
        targets.push_back(s.targets);
        masks.push_back(s.mask);
      }
      model.zero_grad();
      const auto out = model.forward(batch_features(batch), Mode::Train, rng);
      const auto loss = joint_loss(out.probabilities, out.lengths, targets, masks, model.config());
      loss.total.backward();
      result.optimizer.step(model.parameters());
      loss_sum += loss.total.item() * static_cast<double>(batch.size());
    }

    std::vector<ActivityProbabilities> probs;
    for (const auto& c : val) probs.push_back(predict_clip(model, c.features, config.window));
    const ThresholdChoice choice = select_threshold(probs, val_rolls, config.thresholds);

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(train.size());
    record.val_error_rate = choice.error_rate;
    record.val_f1 = choice.f1;
    record.threshold = choice.threshold;
    const double er = er_or_inf(choice.error_rate);
    if (result.best_epoch == 0 || er < best_er || (er == best_er && choice.f1 > best_f1)) {
      best_er = er;
      best_f1 = choice.f1;
      result.best = capture_state(model);
      result.best_epoch = epoch;
      result.threshold = choice.threshold;
      stale = 0;
    } else {
      ++stale;
    }
    record.epochs_since_improvement = stale;
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);
    if (stale >= config.patience) break;
  }
  restore_state(model, result.best);
  return result;
}

Evaluation evaluate_clips(CapsuleSed& model, std::span<const ClipData> clips, double threshold, std::size_t window) {
  Evaluation e;
  std::vector<EventRoll> refs;
  for (const auto& c : clips) {
    e.probabilities.push_back(predict_clip(model, c.features, window));
    e.predictions.push_back(binarize(e.probabilities.back(), threshold));
    refs.push_back(c.roll);
  }
  e.report = evaluate_report(refs, e.predictions);
  return e;
}

void write_history(std::ostream& os, std::span<const EpochRecord> history) {
  os << "epoch\ttrain_loss\tval_ER_frame\tval_F1_frame\tthreshold\tepochs_since_improvement\n";
  const auto old = os.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : history) {
    os << r.epoch << '\t' << r.train_loss << '\t';
    if (r.val_error_rate) os << *r.val_error_rate;
    else os << "undefined";
    os << '\t' << r.val_f1 << '\t' << r.threshold << '\t' << r.epochs_since_improvement << '\n';
  }
  os.precision(old);
}

void print_epoch(std::ostream& os, const EpochRecord& r, std::size_t patience) {
  std::ostringstream line;
  line << "epoch " << std::setw(3) << r.epoch << "  loss " << std::fixed << std::setprecision(5) << r.train_loss
       << "  val ER ";
  if (r.val_error_rate) line << std::setprecision(4) << *r.val_error_rate;
  else line << "undefined";
  line << "  F1 " << std::setprecision(2) << 100.0 * r.val_f1 << "%  threshold " << r.threshold << "  patience "
       << r.epochs_since_improvement << "/" << patience << '\n';
  os << line.str() << std::flush;
}

Summary summarize(std::span<const double> values) {
  if (values.size() < 2) throw std::invalid_argument("summarize: at least two values required");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / (n - 1.0))};
}

std::string format_summary(const Summary& s, int decimals, double scale) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << s.mean * scale << " ± " << s.std * scale;
  return os.str();
}

std::map<std::string, Summary> repeat_runs(std::size_t n, std::uint64_t base_seed,
                                           const std::function<MetricReport(std::uint64_t)>& run) {
  if (n < 2) throw std::invalid_argument("repeat_runs: at least two runs required");
  std::map<std::string, std::vector<double>> values;
  for (std::size_t i = 0; i < n; ++i) {
    const MetricReport r = run(base_seed + i);
    if (!r.frame.error_rate || !r.second.error_rate) {
      throw std::runtime_error("repeat_runs: run with seed " + std::to_string(base_seed + i) +
                               " has no reference events, ER undefined");
    }
    values["ER_frame"].push_back(*r.frame.error_rate);
    values["F1_frame"].push_back(r.frame.f1);
    values["ER_second"].push_back(*r.second.error_rate);
    values["F1_second"].push_back(r.second.f1);
  }
  std::map<std::string, Summary> out;
  for (const auto& [name, v] : values) out[name] = summarize(v);
  return out;
}

void write_repeat_table(std::ostream& os, const std::map<std::string, Summary>& summary) {
  os << "metric\tmean\tstd\tsummary\n";
  const auto old = os.precision(10);
  for (const char* name : {"ER_frame", "F1_frame", "ER_second", "F1_second"}) {
    const auto it = summary.find(name);
    if (it == summary.end()) continue;
    const bool f1 = name[0] == 'F';
    os << name << '\t' << it->second.mean << '\t' << it->second.std << '\t'
       << (f1 ? format_summary(it->second, 1, 100.0) : format_summary(it->second, 2)) << '\n';
  }
  os.precision(old);
}

}  // namespace capsed
