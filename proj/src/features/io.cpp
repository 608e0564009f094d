#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "capsed/features.hpp"

namespace capsed {

namespace {

constexpr std::uint32_t kCacheVersion = 1;

void put_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  os.write(b, 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

std::uint64_t get_le(const unsigned char* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

Audio read_wav(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const auto bad = [&](const std::string& why) { return std::runtime_error(path.string() + ": " + why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw bad("not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* h = bytes.data() + pos;
    const std::size_t size = get_le(h + 4, 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw bad("truncated chunk");
    if (std::memcmp(h, "fmt ", 4) == 0) {
      if (size < 16) throw bad("short fmt chunk");
      format = static_cast<std::uint16_t>(get_le(h + 8, 2));
      channels = static_cast<std::uint16_t>(get_le(h + 10, 2));
      rate = static_cast<std::uint32_t>(get_le(h + 12, 4));
      bits = static_cast<std::uint16_t>(get_le(h + 22, 2));
      if (format == 0xFFFE && size >= 26) format = static_cast<std::uint16_t>(get_le(h + 32, 2));
      have_fmt = true;
    } else if (std::memcmp(h, "data", 4) == 0) {
      if (!have_fmt) throw bad("data chunk before fmt chunk");
      if (channels != 1) throw bad(std::to_string(channels) + " channels, expected mono");
      Audio audio;
      audio.sample_rate = static_cast<int>(rate);
      const unsigned char* d = bytes.data() + body;
      if (format == 1 && bits == 16) {
        audio.samples.resize(size / 2);
        for (std::size_t n = 0; n < audio.samples.size(); ++n) {
          const auto v = static_cast<std::int16_t>(get_le(d + 2 * n, 2));
          audio.samples[n] = v / 32768.0;
        }
      } else if (format == 3 && bits == 32) {
        audio.samples.resize(size / 4);
        for (std::size_t n = 0; n < audio.samples.size(); ++n) {
          audio.samples[n] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(d + 4 * n, 4)));
        }
      } else {
        throw bad("unsupported encoding (format " + std::to_string(format) + ", " + std::to_string(bits) +
                  " bits); expected 16-bit PCM or 32-bit float");
      }
      return audio;
    }
    pos = body + size + (size & 1);
  }
  throw bad("no data chunk");
}

void write_wav(const std::filesystem::path& path, const Audio& audio, WavFormat format) {
  const std::uint16_t bits = format == WavFormat::Pcm16 ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(audio.samples.size() * bits / 8);
  auto out = open_out(path);
  out.write("RIFF", 4);
  put_u32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put_u32(out, 16);
  put_u16(out, format == WavFormat::Pcm16 ? 1 : 3);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate) * bits / 8);
  put_u16(out, bits / 8);
  put_u16(out, bits);
  out.write("data", 4);
  put_u32(out, data_bytes);
  for (double s : audio.samples) {
    if (format == WavFormat::Pcm16) {
      const double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
      put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32768.0))));
    } else {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(s)));
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_feature_cache(const std::filesystem::path& path, const FeatureMatrix& features) {
  auto out = open_out(path);
  out.write("CSED", 4);
  put_u32(out, kCacheVersion);
  put_u32(out, static_cast<std::uint32_t>(features.bands));
  put_u32(out, static_cast<std::uint32_t>(features.frames));
  for (double v : features.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

FeatureMatrix read_feature_cache(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "CSED", 4) != 0) {
    throw std::runtime_error(path.string() + ": not a feature cache");
  }
  const auto version = get_le(bytes.data() + 4, 4);
  if (version != kCacheVersion) {
    throw std::runtime_error(path.string() + ": unsupported cache version " + std::to_string(version));
  }
  FeatureMatrix m(get_le(bytes.data() + 8, 4), get_le(bytes.data() + 12, 4));
  if (bytes.size() != 16 + 8 * m.values.size()) throw std::runtime_error(path.string() + ": truncated feature cache");
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    m.values[i] = std::bit_cast<double>(get_le(bytes.data() + 16 + 8 * i, 8));
  }
  return m;
}

}  // namespace capsed
