#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "capsed/datagen.hpp"

namespace capsed {

namespace {

constexpr double kTimeTolerance = 1e-9;

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) return fields;
    start = tab + 1;
  }
}

bool parse_double(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

ClassIndex class_index(std::span<const std::string> labels) {
  ClassIndex index;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    if (!index.emplace(labels[k], k).second) throw std::invalid_argument("duplicate class label " + labels[k]);
  }
  return index;
}

EventRoll roll_from_annotations(std::span<const AnnotationEvent> events, double frame_seconds, std::size_t frames,
                                const ClassIndex& classes) {
  if (!(frame_seconds > 0.0)) throw std::invalid_argument("roll_from_annotations: frame duration must be positive");
  EventRoll roll(classes.size(), frames);
  for (const auto& e : events) {
    const auto it = classes.find(e.label);
    if (it == classes.end()) throw std::invalid_argument("roll_from_annotations: unknown label '" + e.label + "'");
    const double first = std::max(0.0, std::floor(e.onset / frame_seconds) - 1.0);
    for (auto t = static_cast<std::size_t>(first); t < frames; ++t) {
      const double start = static_cast<double>(t) * frame_seconds, end = start + frame_seconds;
      if (start >= e.offset - kTimeTolerance) break;
      if (e.onset < end - kTimeTolerance && e.offset > start + kTimeTolerance) roll.set(it->second, t);
    }
  }
  return roll;
}

std::vector<AnnotationEvent> events_from_roll(const EventRoll& roll, double frame_seconds,
                                              std::span<const std::string> labels) {
  if (labels.size() != roll.classes()) {
    throw std::invalid_argument("events_from_roll: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(roll.classes()) + " classes");
  }
  std::vector<AnnotationEvent> events;
  for (std::size_t k = 0; k < roll.classes(); ++k) {
    std::size_t t = 0;
    while (t < roll.frames()) {
      if (!roll.active(k, t)) {
        ++t;
        continue;
      }
      const std::size_t begin = t;
      while (t < roll.frames() && roll.active(k, t)) ++t;
      events.push_back({static_cast<double>(begin) * frame_seconds, static_cast<double>(t) * frame_seconds, labels[k]});
    }
  }
  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) { return a.onset < b.onset; });
  return events;
}

std::string format_seconds(double seconds) {
  char buf[64];
  for (int precision = 3; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*f", precision, seconds);
    double back = 0.0;
    if (parse_double(buf, back) && back == seconds) break;
  }
  return buf;
}

std::vector<AnnotationEvent> parse_annotations(std::istream& in, const std::string& source) {
  std::vector<AnnotationEvent> events;
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    strip_cr(line);
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(number) + ": ";
    const auto fields = split_tabs(line);
    if (fields.size() != 3) throw std::runtime_error(where + "expected onset<TAB>offset<TAB>label");
    AnnotationEvent e;
    if (!parse_double(fields[0], e.onset) || !parse_double(fields[1], e.offset)) {
      throw std::runtime_error(where + "onset and offset must be numbers");
    }
    e.label = fields[2];
    if (e.label.empty()) throw std::runtime_error(where + "empty label");
    if (e.onset < 0.0) throw std::runtime_error(where + "negative onset");
    if (!(e.offset > e.onset)) throw std::runtime_error(where + "offset must be greater than onset");
    events.push_back(std::move(e));
  }
  return events;
}

std::vector<AnnotationEvent> load_annotations(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_annotations(in, path.string());
}

void save_annotations(const std::filesystem::path& path, std::vector<AnnotationEvent> events) {
  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) { return a.onset < b.onset; });
  auto out = open_out(path);
  for (const auto& e : events) {
    if (e.label.empty() || e.label.find_first_of("\t\n\r") != std::string::npos) {
      throw std::invalid_argument("save_annotations: label '" + e.label + "' is empty or contains a separator");
    }
    if (!(e.offset > e.onset)) throw std::invalid_argument("save_annotations: offset must be greater than onset");
    out << format_seconds(e.onset) << '\t' << format_seconds(e.offset) << '\t' << e.label << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  auto in = open_in(path);
  const auto base = path.parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    strip_cr(line);
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(number) + ": expected audio<TAB>annotations<TAB>split");
    }
    const auto& split = fields[2];
    if (split != "train" && split != "val" && split != "test") {
      throw std::runtime_error(path.string() + ":" + std::to_string(number) + ": unknown split '" + split + "'");
    }
    auto resolve = [&](const std::string& p) {
      std::filesystem::path q(p);
      return q.is_absolute() ? q : base / q;
    };
    entries.push_back({resolve(fields[0]), resolve(fields[1]), split});
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  auto out = open_out(path);
  out << "# audio\tannotations\tsplit\n";
  for (const auto& e : entries) out << e.audio.generic_string() << '\t' << e.annotations.generic_string() << '\t' << e.split << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<std::string> read_class_list(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (!line.empty()) labels.push_back(line);
  }
  if (labels.empty()) throw std::runtime_error(path.string() + ": no class labels");
  class_index(labels);
  return labels;
}

void write_class_list(const std::filesystem::path& path, std::span<const std::string> labels) {
  auto out = open_out(path);
  for (const auto& l : labels) out << l << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::filesystem::path write_corpus(const std::filesystem::path& dir, CorpusConfig config, SplitSizes splits) {
  config.n_clips = splits.total();
  config.validate();
  std::filesystem::create_directories(dir / "audio");
  std::filesystem::create_directories(dir / "annotations");
  const auto labels = class_labels(config.classes);
  write_class_list(dir / "classes.txt", labels);

  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < config.n_clips; ++i) {
    const Clip clip = generate_clip(config, i);
    char stem[32];
    std::snprintf(stem, sizeof stem, "clip_%03zu", i);
    const std::filesystem::path audio = std::filesystem::path("audio") / (std::string(stem) + ".wav");
    const std::filesystem::path ann = std::filesystem::path("annotations") / (std::string(stem) + ".txt");
    write_wav(dir / audio, clip.audio, WavFormat::Float32);
    save_annotations(dir / ann, clip.events);
    const char* split = i < splits.train ? "train" : i < splits.train + splits.val ? "val" : "test";
    entries.push_back({audio, ann, split});
  }
  const auto manifest = dir / "manifest.tsv";
  write_manifest(manifest, entries);
  return manifest;
}

}  // namespace capsed
