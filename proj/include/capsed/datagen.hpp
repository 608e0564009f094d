#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "capsed/features.hpp"
#include "capsed/types.hpp"

namespace capsed {

struct AnnotationEvent {
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds, > onset
  std::string label;

  friend bool operator==(const AnnotationEvent&, const AnnotationEvent&) = default;
};

enum class SpectralKind { BandNoise, Harmonic };

struct SyntheticClass {
  std::string label;
  SpectralKind kind = SpectralKind::BandNoise;
  double low_hz = 0.0;
  double high_hz = 0.0;
  double min_seconds = 0.5;
  double max_seconds = 3.0;
  double min_amplitude = 0.1;  // RMS
  double max_amplitude = 0.3;

  void validate(int sample_rate) const;
};

/// Low rumble, harmonic tone, high hiss and broadband noise.
std::vector<SyntheticClass> default_classes();

struct CorpusConfig {
  std::vector<SyntheticClass> classes = default_classes();
  std::size_t n_clips = 30;
  double clip_seconds = 10.0;
  std::size_t max_polyphony = 3;
  double events_per_second = 0.8;
  double noise_floor = 1e-3;  // RMS of the background
  int sample_rate = 44100;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Clip {
  Audio audio;
  std::vector<AnnotationEvent> events;  // sorted by onset
};

/// Clip `index` of the corpus. Each clip draws from its own seed derived
/// from (seed, index), so clips can be generated in any order.
Clip generate_clip(const CorpusConfig& config, std::size_t index);
std::vector<Clip> generate_corpus(const CorpusConfig& config);

using ClassIndex = std::map<std::string, std::size_t>;
ClassIndex class_index(std::span<const std::string> labels);
std::vector<std::string> class_labels(std::span<const SyntheticClass> classes);

/// Frame t of class k is active iff [t * dt, (t + 1) * dt) intersects an
/// event of class k.
EventRoll roll_from_annotations(std::span<const AnnotationEvent> events, double frame_seconds, std::size_t frames,
                                const ClassIndex& classes);

/// Each maximal run of active frames of one class becomes one event.
std::vector<AnnotationEvent> events_from_roll(const EventRoll& roll, double frame_seconds,
                                              std::span<const std::string> labels);

/// One "onset<TAB>offset<TAB>label" line per event.
std::vector<AnnotationEvent> parse_annotations(std::istream& in, const std::string& source = "<stream>");
std::vector<AnnotationEvent> load_annotations(const std::filesystem::path& path);
/// Sorted by onset; times printed with the fewest decimals (at least 3)
/// that read back to the same double.
void save_annotations(const std::filesystem::path& path, std::vector<AnnotationEvent> events);
std::string format_seconds(double seconds);

struct ManifestEntry {
  std::filesystem::path audio;
  std::filesystem::path annotations;
  std::string split;  // train, val or test

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Relative paths are resolved against the manifest's directory on read.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

/// Labels, one per line, in class-index order.
std::vector<std::string> read_class_list(const std::filesystem::path& path);
void write_class_list(const std::filesystem::path& path, std::span<const std::string> labels);

struct SplitSizes {
  std::size_t train = 20, val = 5, test = 5;
  std::size_t total() const { return train + val + test; }
};

/// Writes audio/, annotations/, classes.txt and manifest.tsv under `dir`.
/// Returns the manifest path.
std::filesystem::path write_corpus(const std::filesystem::path& dir, CorpusConfig config, SplitSizes splits = {});

}  // namespace capsed
