#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "../features/fftw_lock.hpp"
#include "capsed/datagen.hpp"

namespace capsed {

namespace {

double to_ms_grid(double seconds) { return std::round(seconds * 1000.0) / 1000.0; }

void normalize_rms(std::vector<double>& x, double rms) {
  double sq = 0.0;
  for (double v : x) sq += v * v;
  if (sq <= 0.0) return;
  const double g = rms / std::sqrt(sq / static_cast<double>(x.size()));
  for (double& v : x) v *= g;
}

std::vector<double> band_noise(std::size_t n, double low, double high, int rate, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> x(n);
  for (double& v : x) v = g(rng);
  const std::size_t bins = n / 2 + 1;
  auto* spec = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins));
  fftw_plan fwd, inv;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fwd = fftw_plan_dft_r2c_1d(static_cast<int>(n), x.data(), spec, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(static_cast<int>(n), spec, x.data(), FFTW_ESTIMATE);
  }
  fftw_execute(fwd);
  for (std::size_t k = 0; k < bins; ++k) {
    const double hz = static_cast<double>(k) * rate / static_cast<double>(n);
    if (hz < low || hz > high) spec[k][0] = spec[k][1] = 0.0;
  }
  fftw_execute(inv);
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  fftw_free(spec);
  return x;
}

std::vector<double> harmonic_tone(std::size_t n, double low, double high, int rate, Rng& rng) {
  std::uniform_real_distribution<double> f0_dist(low, std::max(low, std::min(high, 2.0 * low)));
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double f0 = f0_dist(rng);
  std::vector<double> x(n, 0.0);
  for (int k = 1; k * f0 <= high; ++k) {
    const double w = 2.0 * std::numbers::pi * k * f0 / rate, p = phase(rng);
    for (std::size_t i = 0; i < n; ++i) x[i] += std::sin(w * static_cast<double>(i) + p) / k;
  }
  return x;
}

void fade(std::vector<double>& x, std::size_t ramp) {
  ramp = std::min(ramp, x.size() / 2);
  for (std::size_t i = 0; i < ramp; ++i) {
    const double g = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / static_cast<double>(ramp));
    x[i] *= g;
    x[x.size() - 1 - i] *= g;
  }
}

bool overlaps(const AnnotationEvent& a, double onset, double offset) { return a.onset < offset && onset < a.offset; }

// Highest number of existing events simultaneously active inside [onset, offset).
std::size_t peak_overlap(const std::vector<AnnotationEvent>& events, double onset, double offset) {
  std::vector<double> probes{onset};
  for (const auto& e : events)
    if (e.onset > onset && e.onset < offset) probes.push_back(e.onset);
  std::size_t peak = 0;
  for (double p : probes) {
    std::size_t n = 0;
    for (const auto& e : events) n += e.onset <= p && p < e.offset;
    peak = std::max(peak, n);
  }
  return peak;
}

}  // namespace

void SyntheticClass::validate(int sample_rate) const {
  if (label.empty() || label.find_first_of("\t\n\r") != std::string::npos) {
    throw std::invalid_argument("synthetic class label must be nonempty and free of tabs and newlines");
  }
  if (!(low_hz >= 0.0 && high_hz > low_hz && high_hz <= sample_rate / 2.0)) {
    throw std::invalid_argument("class " + label + ": band must satisfy 0 <= low < high <= Nyquist");
  }
  if (!(min_seconds > 0.0 && max_seconds >= min_seconds)) {
    throw std::invalid_argument("class " + label + ": duration range must be positive and ordered");
  }
  if (!(min_amplitude > 0.0 && max_amplitude >= min_amplitude)) {
    throw std::invalid_argument("class " + label + ": amplitude range must be positive and ordered");
  }
}

std::vector<SyntheticClass> default_classes() {
  return {
      {"low_rumble", SpectralKind::BandNoise, 40.0, 300.0, 0.5, 3.0, 0.1, 0.3},
      {"tone", SpectralKind::Harmonic, 700.0, 4000.0, 0.5, 3.0, 0.1, 0.3},
      {"hiss", SpectralKind::BandNoise, 7000.0, 14000.0, 0.5, 3.0, 0.1, 0.3},
      {"broadband", SpectralKind::BandNoise, 100.0, 20000.0, 0.5, 3.0, 0.1, 0.3},
  };
}

void CorpusConfig::validate() const {
  if (classes.empty()) throw std::invalid_argument("corpus: no classes");
  if (sample_rate <= 0) throw std::invalid_argument("corpus: sample rate must be positive");
  if (!(clip_seconds > 0.0)) throw std::invalid_argument("corpus: clip length must be positive");
  if (max_polyphony < 1) throw std::invalid_argument("corpus: max polyphony must be at least 1");
  if (!(events_per_second >= 0.0)) throw std::invalid_argument("corpus: event rate must be nonnegative");
  for (std::size_t i = 0; i < classes.size(); ++i) {
    classes[i].validate(sample_rate);
    if (classes[i].min_seconds > clip_seconds) {
      throw std::invalid_argument("corpus: events of class " + classes[i].label + " cannot fit in a " +
                                  std::to_string(clip_seconds) + " s clip");
    }
    for (std::size_t j = 0; j < i; ++j)
      if (classes[j].label == classes[i].label) throw std::invalid_argument("corpus: duplicate label " + classes[i].label);
  }
}

Clip generate_clip(const CorpusConfig& config, std::size_t index) {
  config.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  Rng rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_class(0, config.classes.size() - 1);

  const auto target = static_cast<std::size_t>(std::lround(config.events_per_second * config.clip_seconds));
  std::vector<AnnotationEvent> events;
  std::vector<std::size_t> kinds;
  for (std::size_t attempt = 0; attempt < 50 * target && events.size() < target; ++attempt) {
    const std::size_t k = pick_class(rng);
    const auto& c = config.classes[k];
    const double longest = std::min(c.max_seconds, config.clip_seconds);
    const double duration = to_ms_grid(c.min_seconds + unit(rng) * (longest - c.min_seconds));
    const double onset = to_ms_grid(unit(rng) * (config.clip_seconds - duration));
    const double offset = to_ms_grid(onset + duration);
    if (!(offset > onset) || offset > config.clip_seconds) continue;
    bool clash = false;
    for (std::size_t e = 0; e < events.size() && !clash; ++e) clash = kinds[e] == k && overlaps(events[e], onset, offset);
    if (clash || peak_overlap(events, onset, offset) + 1 > config.max_polyphony) continue;
    events.push_back({onset, offset, c.label});
    kinds.push_back(k);
  }

  const int rate = config.sample_rate;
  Clip clip;
  clip.audio.sample_rate = rate;
  clip.audio.samples.resize(static_cast<std::size_t>(std::lround(config.clip_seconds * rate)));
  std::normal_distribution<double> floor_noise(0.0, config.noise_floor);
  for (double& v : clip.audio.samples) v = floor_noise(rng);

  for (std::size_t e = 0; e < events.size(); ++e) {
    const auto& c = config.classes[kinds[e]];
    const auto n0 = static_cast<std::size_t>(std::lround(events[e].onset * rate));
    const auto n1 = std::min(clip.audio.samples.size(), static_cast<std::size_t>(std::lround(events[e].offset * rate)));
    if (n1 <= n0 + 1) continue;
    auto sig = c.kind == SpectralKind::BandNoise ? band_noise(n1 - n0, c.low_hz, c.high_hz, rate, rng)
                                                 : harmonic_tone(n1 - n0, c.low_hz, c.high_hz, rate, rng);
    normalize_rms(sig, c.min_amplitude + unit(rng) * (c.max_amplitude - c.min_amplitude));
    fade(sig, static_cast<std::size_t>(0.005 * rate));
    for (std::size_t i = 0; i < sig.size(); ++i) clip.audio.samples[n0 + i] += sig[i];
  }

  std::vector<std::size_t> order(events.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return events[a].onset < events[b].onset; });
  for (auto i : order) clip.events.push_back(events[i]);
  return clip;
}

std::vector<Clip> generate_corpus(const CorpusConfig& config) {
  std::vector<Clip> clips;
  clips.reserve(config.n_clips);
  for (std::size_t i = 0; i < config.n_clips; ++i) clips.push_back(generate_clip(config, i));
  return clips;
}

std::vector<std::string> class_labels(std::span<const SyntheticClass> classes) {
  std::vector<std::string> out;
  for (const auto& c : classes) out.push_back(c.label);
  return out;
}

}  // namespace capsed
