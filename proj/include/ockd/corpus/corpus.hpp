#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ockd/corpus/synth.hpp"
#include "ockd/corpus/utterance.hpp"
#include "ockd/corpus/wav.hpp"
#include "ockd/io.hpp"

namespace ockd::corpus {

struct SplitCounts {
  int bonafide = 0;
  int spoof = 0;
};

struct CorpusConfig {
  SplitCounts train{400, 400};
  SplitCounts dev{100, 100};
  SplitCounts eval_seen{200, 200};
  SplitCounts eval_unseen{200, 200};
  VoiceParams voice;
};

inline constexpr std::array<std::string_view, 4> kSplitNames = {"train", "dev", "eval_seen",
                                                                 "eval_unseen"};

struct SplitPlan {
  std::string name;
  std::vector<ProtocolEntry> entries;
};

/// Protocol entries for every split; ids are unique across the corpus.
using CorpusPlan = std::vector<SplitPlan>;

inline CorpusPlan plan_corpus(const CorpusConfig& config, std::uint64_t seed) {
  struct SplitSpec {
    std::string_view name, prefix;
    SplitCounts counts;
    bool unseen;
  };
  const std::array<SplitSpec, 4> specs = {{{"train", "T", config.train, false},
                                           {"dev", "D", config.dev, false},
                                           {"eval_seen", "ES", config.eval_seen, false},
                                           {"eval_unseen", "EU", config.eval_unseen, true}}};
  CorpusPlan plan;
  std::set<std::string> ids;
  for (const auto& spec : specs) {
    if (spec.counts.bonafide < 0 || spec.counts.spoof < 0) {
      throw usage_error("corpus: negative count for split " + std::string(spec.name));
    }
    const auto& families = spec.unseen ? kUnseenFamilies : kSeenFamilies;
    std::vector<ProtocolEntry> entries;
    for (int i = 0; i < spec.counts.bonafide; ++i) entries.push_back({"", "-", Label::kBonafide});
    for (int i = 0; i < spec.counts.spoof; ++i) {
      entries.push_back({"", std::string(families[static_cast<std::size_t>(i) % families.size()]),
                         Label::kSpoof});
    }
    std::mt19937_64 rng(keyed_seed(seed, spec.name));
    std::shuffle(entries.begin(), entries.end(), rng);
    for (std::size_t i = 0; i < entries.size(); ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "%s_%06zu", std::string(spec.prefix).c_str(), i + 1);
      entries[i].utt_id = id;
      if (!ids.insert(id).second) throw data_error("corpus: duplicate utt_id " + std::string(id));
    }
    plan.push_back({std::string(spec.name), std::move(entries)});
  }
  return plan;
}

inline Utterance synthesize(const ProtocolEntry& entry, std::uint64_t seed,
                            const VoiceParams& voice = {}) {
  Utterance u;
  u.utt_id = entry.utt_id;
  u.label = entry.label;
  u.attack_id = entry.attack_id;
  const std::uint64_t s = keyed_seed(seed, entry.utt_id);
  u.samples = entry.label == Label::kBonafide ? gen_bonafide(s, voice)
                                              : gen_spoof(entry.attack_id, s, voice);
  return u;
}

inline std::filesystem::path wav_path(const std::filesystem::path& corpus_dir,
                                      const std::string& utt_id) {
  return corpus_dir / "wav" / (utt_id + ".wav");
}

inline std::filesystem::path protocol_path(const std::filesystem::path& corpus_dir,
                                           std::string_view split) {
  return corpus_dir / "protocols" / (std::string(split) + ".txt");
}

/// Generates every utterance, writes `wav/<utt_id>.wav` and
/// `protocols/<split>.txt` under `corpus_dir`, and returns the plan.
inline CorpusPlan build_corpus(const CorpusConfig& config, std::uint64_t seed,
                               const std::filesystem::path& corpus_dir) {
  CorpusPlan plan = plan_corpus(config, seed);
  for (const auto& split : plan) {
    for (const auto& e : split.entries) {
      const Utterance u = synthesize(e, seed, config.voice);
      io::write_file_atomic(wav_path(corpus_dir, e.utt_id), encode_wav(u.samples));
    }
    io::write_file_atomic(protocol_path(corpus_dir, split.name), format_protocol(split.entries));
  }
  return plan;
}

inline Utterance load_utterance(const std::filesystem::path& corpus_dir, const ProtocolEntry& e) {
  Utterance u;
  u.utt_id = e.utt_id;
  u.label = e.label;
  u.attack_id = e.attack_id;
  u.samples = read_wav(wav_path(corpus_dir, e.utt_id).string());
  return u;
}

inline std::vector<Utterance> load_utterances(const std::filesystem::path& corpus_dir,
                                              const std::vector<ProtocolEntry>& entries) {
  std::vector<Utterance> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(load_utterance(corpus_dir, e));
  return out;
}

}  // namespace ockd::corpus
