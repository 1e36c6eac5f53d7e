#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ockd/corpus/dsp.hpp"
#include "ockd/corpus/utterance.hpp"
#include "ockd/error.hpp"

namespace ockd::corpus {

struct TrimOptions {
  double threshold_db = -30.0;  // relative to the loudest frame
  std::size_t frame = 400;      // 25 ms
  std::size_t hop = 160;        // 10 ms
  double min_keep_s = 0.2;
};

/// Sample range [begin, end) kept by trim_nonspeech.
struct TrimRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Drops leading and trailing frames whose RMS falls below the threshold.
/// Each kept edge frame contributes hop/2 around its centre; interior samples
/// are untouched.
inline TrimRange nonspeech_range(std::span<const double> x, const TrimOptions& opt = {}) {
  if (x.size() < opt.frame) throw data_error("trim_nonspeech: utterance shorter than one frame");
  const std::size_t frames = (x.size() - opt.frame) / opt.hop + 1;
  std::vector<double> level(frames);
  double loudest = 0.0;
  for (std::size_t f = 0; f < frames; ++f) {
    level[f] = dsp::rms(x.subspan(f * opt.hop, opt.frame));
    loudest = std::max(loudest, level[f]);
  }
  if (loudest <= 0.0) throw data_error("trim_nonspeech: utterance is entirely below threshold");
  const double gate = loudest * std::pow(10.0, opt.threshold_db / 20.0);
  std::size_t first = 0;
  while (level[first] < gate) ++first;
  std::size_t last = frames - 1;
  while (level[last] < gate) --last;

  TrimRange r;
  const std::size_t half = opt.frame / 2, half_hop = opt.hop / 2;
  r.begin = first == 0 ? 0 : first * opt.hop + half - half_hop;
  r.end = last == frames - 1 ? x.size() : last * opt.hop + half + half_hop;
  if (static_cast<double>(r.end - r.begin) < opt.min_keep_s * kSampleRate) {
    throw data_error("trim_nonspeech: less than " + std::to_string(opt.min_keep_s) +
                     " s of audio above threshold");
  }
  return r;
}

inline Utterance trim_nonspeech(const Utterance& utt, const TrimOptions& opt = {}) {
  TrimRange r;
  try {
    r = nonspeech_range(utt.samples, opt);
  } catch (const Error& e) {
    throw data_error(utt.utt_id + ": " + e.what());
  }
  Utterance out = utt;
  out.samples.assign(utt.samples.begin() + static_cast<std::ptrdiff_t>(r.begin),
                     utt.samples.begin() + static_cast<std::ptrdiff_t>(r.end));
  return out;
}

}  // namespace ockd::corpus
