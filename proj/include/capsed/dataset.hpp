#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "capsed/datagen.hpp"
#include "capsed/features.hpp"
#include "capsed/training.hpp"

namespace capsed {

/// Raw (unnormalized) features and frame-level roll for one clip.
ClipData make_clip_data(std::string name, const Audio& audio, std::span<const AnnotationEvent> events,
                        const ClassIndex& classes, const FeatureConfig& features = {});

struct Dataset {
  std::vector<std::string> labels;
  NormalizationStats normalizer;
  std::vector<ClipData> train, val, test;
};

/// Reads classes.txt next to the manifest, extracts features for every
/// listed clip, fits the normalizer on the train split and applies it to all.
Dataset load_dataset(const std::filesystem::path& manifest, const FeatureConfig& features = {});

/// Same, from clips already in memory, split in order train / val / test.
Dataset dataset_from_clips(std::span<const Clip> clips, std::vector<std::string> labels, SplitSizes splits,
                           const FeatureConfig& features = {});

void normalize_dataset(Dataset& data);

}  // namespace capsed
