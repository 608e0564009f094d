#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace capsed {

inline constexpr double kFrameDuration = 0.040;

/// Per-frame validity flags (1 = real frame, 0 = padding).
using FrameMask = std::vector<std::uint8_t>;

/// Binary class x frame activity matrix, class-major.
class EventRoll {
 public:
  EventRoll() = default;
  EventRoll(std::size_t classes, std::size_t frames)
      : classes_(classes), frames_(frames), cells_(classes * frames, 0) {}

  std::size_t classes() const { return classes_; }
  std::size_t frames() const { return frames_; }

  bool active(std::size_t k, std::size_t t) const { return cells_[index(k, t)] != 0; }
  void set(std::size_t k, std::size_t t, bool on = true) { cells_[index(k, t)] = on ? 1 : 0; }

  std::size_t active_count() const {
    std::size_t n = 0;
    for (auto c : cells_) n += c;
    return n;
  }

  const std::vector<std::uint8_t>& cells() const { return cells_; }

  friend bool operator==(const EventRoll&, const EventRoll&) = default;

 private:
  std::size_t index(std::size_t k, std::size_t t) const {
    if (k >= classes_ || t >= frames_) throw std::out_of_range("EventRoll index out of range");
    return k * frames_ + t;
  }

  std::size_t classes_ = 0;
  std::size_t frames_ = 0;
  std::vector<std::uint8_t> cells_;
};

/// Real-valued class x frame matrix in [0, 1], class-major.
struct ActivityProbabilities {
  std::size_t classes = 0;
  std::size_t frames = 0;
  std::vector<double> values;

  ActivityProbabilities() = default;
  ActivityProbabilities(std::size_t k, std::size_t t) : classes(k), frames(t), values(k * t, 0.0) {}

  double at(std::size_t k, std::size_t t) const { return values[k * frames + t]; }
  double& at(std::size_t k, std::size_t t) { return values[k * frames + t]; }
};

}  // namespace capsed
