#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "capsed/features.hpp"
#include "capsed/model.hpp"
#include "capsed/training.hpp"

namespace capsed {

struct OptimizerState {
  AdamConfig config;
  std::uint64_t steps = 0;
  std::vector<Adam::Moments> moments;
};

/// Everything needed to rebuild a trained detector.
struct Checkpoint {
  ModelConfig model;
  FeatureConfig features;
  std::size_t window = 128;
  std::vector<std::string> labels;
  NormalizationStats normalizer;
  double threshold = kMinThreshold;
  std::vector<std::string> parameter_names;
  std::vector<Shape> parameter_shapes;
  ModelState state;
  std::optional<OptimizerState> optimizer;
};

Checkpoint make_checkpoint(const CapsuleSed& model, const FeatureConfig& features, std::size_t window,
                           std::vector<std::string> labels, NormalizationStats normalizer, double threshold,
                           const Adam* optimizer = nullptr);

/// Builds a model with the stored configuration and loads its state.
CapsuleSed restore_model(const Checkpoint& checkpoint);

/// Binary: "CSEDCKPT", uint32 version, then configuration, named parameter
/// blocks (name, shape, float64 values), batchnorm statistics, optimizer
/// state, normalizer, threshold and labels, all little-endian.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace capsed
