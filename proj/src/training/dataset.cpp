#include "capsed/dataset.hpp"

#include <stdexcept>

namespace capsed {

ClipData make_clip_data(std::string name, const Audio& audio, std::span<const AnnotationEvent> events,
                        const ClassIndex& classes, const FeatureConfig& features) {
  ClipData c;
  c.name = std::move(name);
  c.features = logmel(audio.samples, audio.sample_rate, features);
  c.roll = roll_from_annotations(events, features.frame_seconds, c.features.frames, classes);
  return c;
}

void normalize_dataset(Dataset& data) {
  std::vector<FeatureMatrix> train;
  for (const auto& c : data.train) train.push_back(c.features);
  data.normalizer = fit_normalizer(train);
  for (auto* split : {&data.train, &data.val, &data.test})
    for (auto& c : *split) c.features = apply_normalizer(data.normalizer, c.features);
}

Dataset load_dataset(const std::filesystem::path& manifest, const FeatureConfig& features) {
  if (!std::filesystem::exists(manifest)) throw std::runtime_error("manifest not found: " + manifest.string());
  Dataset data;
  data.labels = read_class_list(manifest.parent_path() / "classes.txt");
  const auto index = class_index(data.labels);
  for (const auto& e : read_manifest(manifest)) {
    const auto events = load_annotations(e.annotations);
    auto clip = make_clip_data(e.audio.stem().string(), read_wav(e.audio), events, index, features);
    (e.split == "train" ? data.train : e.split == "val" ? data.val : data.test).push_back(std::move(clip));
  }
  if (data.train.empty()) throw std::runtime_error(manifest.string() + ": no training clips");
  normalize_dataset(data);
  return data;
}

Dataset dataset_from_clips(std::span<const Clip> clips, std::vector<std::string> labels, SplitSizes splits,
                           const FeatureConfig& features) {
  if (clips.size() != splits.total()) throw std::invalid_argument("dataset_from_clips: split sizes do not cover the clips");
  Dataset data;
  data.labels = std::move(labels);
  const auto index = class_index(data.labels);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    auto clip = make_clip_data("clip_" + std::to_string(i), clips[i].audio, clips[i].events, index, features);
    (i < splits.train ? data.train : i < splits.train + splits.val ? data.val : data.test).push_back(std::move(clip));
  }
  normalize_dataset(data);
  return data;
}

}  // namespace capsed
