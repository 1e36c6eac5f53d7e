#pragma once

// 16-bit PCM mono RIFF/WAVE reader and writer.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "ockd/corpus/utterance.hpp"
#include "ockd/error.hpp"

namespace ockd::corpus {

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

inline std::int16_t to_pcm16(double x) {
  return static_cast<std::int16_t>(std::lround(std::clamp(x, -1.0, 1.0) * 32767.0));
}
inline double from_pcm16(std::int16_t q) { return static_cast<double>(q) / 32767.0; }

inline std::string encode_wav(std::span<const double> samples, int sample_rate = kSampleRate) {
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  detail::put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);  // PCM
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, static_cast<std::uint32_t>(sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(sample_rate) * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out += "data";
  detail::put_u32(out, data_bytes);
  for (double x : samples) detail::put_u16(out, static_cast<std::uint16_t>(to_pcm16(x)));
  return out;
}

inline std::vector<double> decode_wav(const std::string& bytes, const std::string& source) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0) {
    throw data_error(source + ": not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = detail::get_u32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw data_error(source + ": truncated chunk");
    if (std::memcmp(p + pos, "fmt ", 4) == 0) {
      if (size < 16) throw data_error(source + ": short fmt chunk");
      const auto format = detail::get_u16(p + body);
      const auto channels = detail::get_u16(p + body + 2);
      const auto rate = detail::get_u32(p + body + 4);
      const auto bits = detail::get_u16(p + body + 14);
      if (format != 1 || channels != 1 || bits != 16 || rate != kSampleRate) {
        throw data_error(source + ": expected 16 kHz mono 16-bit PCM");
      }
      have_fmt = true;
    } else if (std::memcmp(p + pos, "data", 4) == 0) {
      if (!have_fmt) throw data_error(source + ": data chunk before fmt chunk");
      std::vector<double> samples(size / 2);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        samples[i] = from_pcm16(static_cast<std::int16_t>(detail::get_u16(p + body + 2 * i)));
      }
      return samples;
    }
    pos = body + size + (size & 1);
  }
  throw data_error(source + ": no data chunk");
}

inline std::vector<double> read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes, path);
}

}  // namespace ockd::corpus
