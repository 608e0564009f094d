#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>

#include "capsed/features.hpp"
#include "fftw_lock.hpp"

namespace capsed {

namespace {

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

class RealFft {
 public:
  explicit RealFft(std::size_t n)
      : n_(n),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        out_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_.get(), out_.get(), FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_.get(); }
  void magnitude(std::vector<double>& out) {
    fftw_execute(plan_);
    out.resize(n_ / 2 + 1);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::hypot(out_.get()[k][0], out_.get()[k][1]);
  }

 private:
  std::size_t n_;
  std::unique_ptr<double, FftwFree> in_;
  std::unique_ptr<fftw_complex, FftwFree> out_;
  fftw_plan plan_;
};

}  // namespace

std::size_t FeatureConfig::frame_samples() const {
  return static_cast<std::size_t>(std::lround(frame_seconds * sample_rate));
}

void FeatureConfig::validate() const {
  if (sample_rate <= 0) throw std::invalid_argument("feature config: sample rate must be positive");
  if (bands < 1) throw std::invalid_argument("feature config: at least one mel band required");
  if (frame_samples() < 1) throw std::invalid_argument("feature config: frame shorter than one sample");
  if (fft_size < frame_samples()) throw std::invalid_argument("feature config: fft size shorter than frame");
  if (!(min_hz >= 0.0 && max_hz > min_hz && max_hz <= sample_rate / 2.0)) {
    throw std::invalid_argument("feature config: mel range must satisfy 0 <= min < max <= Nyquist");
  }
  if (!(log_floor > 0.0)) throw std::invalid_argument("feature config: log floor must be positive");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<std::vector<double>> mel_filterbank(const FeatureConfig& config) {
  config.validate();
  const std::size_t bins = config.fft_size / 2 + 1;
  const double lo = hz_to_mel(config.min_hz), hi = hz_to_mel(config.max_hz);
  std::vector<double> edges(config.bands + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(config.bands + 1));
  }
  std::vector<std::vector<double>> bank(config.bands, std::vector<double>(bins, 0.0));
  for (std::size_t f = 0; f < config.bands; ++f) {
    const double left = edges[f], center = edges[f + 1], right = edges[f + 2];
    double area = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double hz = static_cast<double>(k) * config.sample_rate / static_cast<double>(config.fft_size);
      double w = 0.0;
      if (hz > left && hz <= center) w = (hz - left) / (center - left);
      else if (hz > center && hz < right) w = (right - hz) / (right - center);
      bank[f][k] = w;
      area += w;
    }
    if (area > 0.0)
      for (double& w : bank[f]) w /= area;
  }
  return bank;
}

FeatureMatrix logmel(std::span<const double> audio, int sample_rate, const FeatureConfig& config) {
  config.validate();
  if (audio.empty()) throw std::invalid_argument("logmel: empty audio");
  if (sample_rate != config.sample_rate) {
    throw std::invalid_argument("logmel: sample rate " + std::to_string(sample_rate) + " Hz, expected " +
                                std::to_string(config.sample_rate) + " Hz");
  }
  for (std::size_t n = 0; n < audio.size(); ++n) {
    if (!std::isfinite(audio[n])) throw std::invalid_argument("logmel: non-finite sample at index " + std::to_string(n));
  }
  const std::size_t hop = config.frame_samples();
  const std::size_t frames = audio.size() / hop;
  if (frames == 0) throw std::invalid_argument("logmel: audio shorter than one analysis frame");

  std::vector<double> window(hop);
  for (std::size_t n = 0; n < hop; ++n) {
    window[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(hop));
  }
  const auto bank = mel_filterbank(config);

  FeatureMatrix out(config.bands, frames);
  RealFft fft(config.fft_size);
  std::vector<double> mag;
  for (std::size_t t = 0; t < frames; ++t) {
    double* in = fft.input();
    std::fill(in, in + config.fft_size, 0.0);
    for (std::size_t n = 0; n < hop; ++n) in[n] = audio[t * hop + n] * window[n];
    fft.magnitude(mag);
    for (std::size_t f = 0; f < config.bands; ++f) {
      double e = 0.0;
      for (std::size_t k = 0; k < mag.size(); ++k) e += bank[f][k] * mag[k];
      out.at(f, t) = std::log(std::max(e, config.log_floor));
    }
  }
  return out;
}

}  // namespace capsed
