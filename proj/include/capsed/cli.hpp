#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capsed/checkpoint.hpp"
#include "capsed/datagen.hpp"
#include "capsed/features.hpp"
#include "capsed/model.hpp"
#include "capsed/training.hpp"

namespace capsed {

/// Everything a command needs. Loaded from an INI file with sections
/// [model], [train], [features], [data] and [run]; missing keys keep
/// their defaults and unknown keys are rejected.
struct RunConfig {
  ModelConfig model;  // bands, frames and classes are filled in from the other sections
  TrainConfig train;
  FeatureConfig features;
  CorpusConfig corpus;
  SplitSizes splits;
  std::filesystem::path manifest;
  std::filesystem::path output;
  std::uint64_t seed = 1;
  std::size_t threads = 0;  // 0: all available cores
  std::size_t repeats = 10;

  /// Model configuration for a label set of `classes` entries.
  ModelConfig model_config(std::size_t classes) const;
  /// Re-checks every constituent config and the cross-field constraints.
  void validate() const;
};

/// Applies "section.key=value" assignments, in order, on top of `base`.
RunConfig parse_run_config(std::istream& in, std::span<const std::string> overrides = {});
RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          std::span<const std::string> overrides = {});
/// Writes every key, so the output reproduces the config when read back.
void write_run_config(std::ostream& os, const RunConfig& config);

/// Couplings of one event capsule at one frame, laid out by
/// (frequency band, primary channel).
struct CouplingGrid {
  std::string label;
  std::size_t bands = 0;
  std::size_t channels = 0;
  std::vector<double> values;  // band-major

  double at(std::size_t band, std::size_t channel) const { return values[band * channels + channel]; }
  /// Band whose mean coupling over channels is largest; ties go to the lower band.
  std::size_t dominant_band() const;
};

/// Grids from the final routing iteration at `frame` (an index into the
/// leading frame axis of the trace).
std::vector<CouplingGrid> coupling_grids(const RoutingState& final_state, std::size_t frame, const ModelConfig& config,
                                         std::span<const std::string> labels);

struct RoutingInspection {
  std::vector<CouplingGrid> grids;
  std::vector<double> probabilities;  // per class at the inspected frame
};

/// Runs the eval-mode window containing clip frame `frame` with the routing
/// trace kept. `features` must already be normalized.
RoutingInspection inspect_routing(CapsuleSed& model, const FeatureMatrix& features, std::size_t frame,
                                  std::size_t window, std::span<const std::string> labels);

/// Plain-text blocks, one per class, rows are bands (0 = lowest).
void print_coupling_grids(std::ostream& os, std::span<const CouplingGrid> grids);
/// Tab-separated: "class band c0 c1 ..." rows, one per (class, band).
void write_coupling_grids(std::ostream& os, std::span<const CouplingGrid> grids);

/// Raw log-mel features for an audio file, or the contents of a feature cache.
FeatureMatrix load_input_features(const std::filesystem::path& input, const FeatureConfig& features);

/// Clips of one manifest split, normalized with the checkpoint's statistics.
std::vector<ClipData> load_split(const std::filesystem::path& manifest, const std::string& split,
                                 const Checkpoint& checkpoint);

/// Entry point behind the `capsed` executable. Returns the process exit status.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace capsed
