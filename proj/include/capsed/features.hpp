#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "capsed/tensor.hpp"
#include "capsed/types.hpp"

namespace capsed {

struct FeatureConfig {
  int sample_rate = 44100;
  double frame_seconds = kFrameDuration;  // window length and hop
  std::size_t fft_size = 2048;
  std::size_t bands = 80;
  double min_hz = 0.0;
  double max_hz = 22050.0;
  double log_floor = 1e-10;

  std::size_t frame_samples() const;
  void validate() const;
};

/// Log mel band energies, band-major: values[f * frames + t].
struct FeatureMatrix {
  std::size_t bands = 0;
  std::size_t frames = 0;
  std::vector<double> values;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t f, std::size_t t) : bands(f), frames(t), values(f * t, 0.0) {}

  double at(std::size_t f, std::size_t t) const { return values[f * frames + t]; }
  double& at(std::size_t f, std::size_t t) { return values[f * frames + t]; }
  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filters on the mel scale, each scaled to unit sum over the
/// FFT bins. Row f holds fft_size / 2 + 1 weights.
std::vector<std::vector<double>> mel_filterbank(const FeatureConfig& config);

/// Hann-windowed, non-overlapping frames; a trailing partial frame is
/// dropped. Magnitude spectrum through the mel bank, then a floored log.
FeatureMatrix logmel(std::span<const double> audio, int sample_rate, const FeatureConfig& config = {});

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> std;
};

inline constexpr double kStdFloor = 1e-8;

/// Pooled per-band statistics over every frame of every matrix.
NormalizationStats fit_normalizer(std::span<const FeatureMatrix> train);
FeatureMatrix apply_normalizer(const NormalizationStats& stats, const FeatureMatrix& features);

/// A fixed-length window of features and targets. mask[t] = 0 marks
/// zero-padded frames past the end of the clip.
struct Sample {
  FeatureMatrix features;
  EventRoll targets;
  FrameMask mask;
  std::size_t start = 0;
  std::size_t clip = 0;
};

/// Train mode slides by `hop` and adds one window flush with the clip end
/// when the last regular window stops short of it. Eval mode tiles with
/// hop = T and pads the tail.
std::vector<Sample> windowize(const FeatureMatrix& features, const EventRoll& targets, std::size_t window,
                              Mode mode, std::size_t hop);

/// Stacks samples into a [B x 1 x F x T] tensor.
Tensor batch_features(std::span<const Sample* const> samples);

struct Audio {
  int sample_rate = 44100;
  std::vector<double> samples;  // mono, nominal range [-1, 1]
};

enum class WavFormat { Pcm16, Float32 };

Audio read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Audio& audio, WavFormat format = WavFormat::Pcm16);

/// "CSED", uint32 version, uint32 bands, uint32 frames, then little-endian
/// doubles in band-major order.
void write_feature_cache(const std::filesystem::path& path, const FeatureMatrix& features);
FeatureMatrix read_feature_cache(const std::filesystem::path& path);

}  // namespace capsed
