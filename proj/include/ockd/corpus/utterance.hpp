#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ockd/error.hpp"

namespace ockd::corpus {

inline constexpr int kSampleRate = 16000;

enum class Label { kBonafide, kSpoof };

inline const char* label_name(Label l) { return l == Label::kBonafide ? "bonafide" : "spoof"; }

inline Label parse_label(std::string_view s) {
  if (s == "bonafide") return Label::kBonafide;
  if (s == "spoof") return Label::kSpoof;
  throw data_error("unknown label '" + std::string(s) + "'");
}

struct Utterance {
  std::string utt_id;
  std::vector<double> samples;  // 16 kHz mono, within [-1, 1]
  Label label = Label::kBonafide;
  std::string attack_id = "-";  // "-" bonafide, "A##" seen, "U##" unseen

  double duration_s() const { return static_cast<double>(samples.size()) / kSampleRate; }
};

struct ProtocolEntry {
  std::string utt_id;
  std::string attack_id;
  Label label = Label::kBonafide;

  bool operator==(const ProtocolEntry&) const = default;
};

/// `<utt_id> <attack_id> <label>` per line.
inline std::string format_protocol(const std::vector<ProtocolEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    out += e.utt_id + ' ' + e.attack_id + ' ' + label_name(e.label) + '\n';
  }
  return out;
}

inline std::vector<ProtocolEntry> parse_protocol(std::istream& in, const std::string& source) {
  std::vector<ProtocolEntry> entries;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    ProtocolEntry e;
    std::string label, extra;
    if (!(fields >> e.utt_id >> e.attack_id >> label) || (fields >> extra)) {
      throw data_error(source + ":" + std::to_string(lineno) +
                       ": expected '<utt_id> <attack_id> <label>'");
    }
    try {
      e.label = parse_label(label);
    } catch (const Error& err) {
      throw data_error(source + ":" + std::to_string(lineno) + ": " + err.what());
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

inline std::vector<ProtocolEntry> read_protocol(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open protocol file " + path);
  return parse_protocol(in, path);
}

// splitmix64 finalizer; stable across platforms, unlike std::hash.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Per-item seed derived from a run seed and a string key (FNV-1a then mix).
inline std::uint64_t keyed_seed(std::uint64_t seed, std::string_view key, std::uint64_t salt = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : key) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(mix64(seed ^ h) + salt);
}

}  // namespace ockd::corpus
