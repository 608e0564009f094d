#pragma once

#include <mutex>

namespace capsed::detail {

/// FFTW planning is not thread safe; execution is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace capsed::detail
