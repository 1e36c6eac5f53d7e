#pragma once

// Source-filter generator for the synthetic corpus. Bonafide utterances are a
// jittered, vibrato-modulated harmonic source shaped by drifting formant
// resonators and a syllabic envelope, padded with low-level silence. Spoofs
// start from the same draw and carry one family-specific artifact, strong
// enough for a small raw-waveform model to pick up.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ockd/corpus/dsp.hpp"
#include "ockd/corpus/utterance.hpp"
#include "ockd/error.hpp"

namespace ockd::corpus {

struct VoiceParams {
  double min_duration_s = 1.0;
  double max_duration_s = 4.0;
  bool constant_pitch = false;    // monotone pulse-train source: no contour, vibrato,
                                  // jitter or breath noise
  double bandwidth_scale = 1.0;   // > 1 flattens the formant peaks
};

inline constexpr std::array<std::string_view, 4> kSeenFamilies = {"A01", "A02", "A03", "A04"};
inline constexpr std::array<std::string_view, 4> kUnseenFamilies = {"U01", "U02", "U03", "U04"};

inline bool is_seen_family(std::string_view f) {
  return std::find(kSeenFamilies.begin(), kSeenFamilies.end(), f) != kSeenFamilies.end();
}
inline bool is_unseen_family(std::string_view f) {
  return std::find(kUnseenFamilies.begin(), kUnseenFamilies.end(), f) != kUnseenFamilies.end();
}

namespace detail {

inline constexpr double kFs = kSampleRate;
inline constexpr double kPulseHarmonic = 0.15;

// Rescales so that the absolute peak equals `target`.
inline void set_peak(std::vector<double>& x, double target) {
  const double p = dsp::peak(x);
  if (p <= 0.0) return;
  for (double& v : x) v *= target / p;
}

// Smoothed amplitude envelope, normalized to a unit maximum.
inline std::vector<double> envelope(std::span<const double> x, std::size_t half_width) {
  std::vector<double> prefix(x.size() + 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) prefix[i + 1] = prefix[i] + std::abs(x[i]);
  std::vector<double> env(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t lo = i > half_width ? i - half_width : 0;
    const std::size_t hi = std::min(x.size(), i + half_width + 1);
    env[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
  }
  const double mx = dsp::peak(env);
  if (mx > 0.0) {
    for (double& v : env) v /= mx;
  }
  return env;
}

}  // namespace detail

/// One bonafide-style utterance, a pure function of (seed, params).
inline std::vector<double> gen_bonafide(std::uint64_t seed, const VoiceParams& params = {}) {
  using std::numbers::pi;
  constexpr double fs = detail::kFs;
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double duration = uniform(params.min_duration_s, params.max_duration_s);
  const auto n = static_cast<std::size_t>(std::lround(duration * fs));
  const auto lead = static_cast<std::size_t>(uniform(0.15, 0.35) * fs);
  const auto trail = static_cast<std::size_t>(uniform(0.15, 0.35) * fs);
  const std::size_t v0 = std::min(lead, n / 3);
  const std::size_t v1 = n - std::min(trail, n / 3);
  const double voiced_len = static_cast<double>(v1 - v0);

  // Pitch contour: declination, slow wander, vibrato.
  const double f0 = uniform(90.0, 220.0);
  const double declination = uniform(0.05, 0.15);
  const double wander_f1 = uniform(0.3, 1.2), wander_p1 = uniform(0.0, 2 * pi);
  const double wander_f2 = uniform(0.3, 1.2), wander_p2 = uniform(0.0, 2 * pi);
  const double vib_rate = uniform(4.5, 6.5), vib_phase = uniform(0.0, 2 * pi);
  const double vib_depth = uniform(0.005, 0.015);
  const double jitter_sd = uniform(0.008, 0.02);

  // Formant trajectory through three vowel targets.
  const int n_formants = std::uniform_int_distribution<int>(2, 3)(rng);
  constexpr std::array<std::array<double, 2>, 3> kRanges = {
      {{300.0, 850.0}, {900.0, 2200.0}, {2300.0, 3300.0}}};
  std::array<std::array<double, 3>, 3> targets{};
  std::array<double, 3> bandwidth{};
  for (int k = 0; k < 3; ++k) {
    for (auto& t : targets[k]) t = uniform(kRanges[k][0], kRanges[k][1]);
    bandwidth[k] = uniform(60.0, 150.0) * params.bandwidth_scale;
  }
  std::array<dsp::Resonator, 3> resonators;

  const double syllable_rate = uniform(3.0, 5.0), syllable_phase = uniform(0.0, 2 * pi);
  const double breath_level = uniform(0.01, 0.04);
  const double breath = params.constant_pitch ? 0.0 : breath_level;

  std::vector<double> x(n, 0.0);
  double phase = 0.0;
  double jitter = 1.0;
  for (std::size_t i = v0; i < v1; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double pos = static_cast<double>(i - v0) / voiced_len;  // 0..1

    double f = f0;
    if (!params.constant_pitch) {
      f *= 1.0 + declination * (0.5 - pos);
      f *= 1.0 + 0.04 * std::sin(2 * pi * wander_f1 * t + wander_p1) +
           0.03 * std::sin(2 * pi * wander_f2 * t + wander_p2);
      f *= 1.0 + vib_depth * std::sin(2 * pi * vib_rate * t + vib_phase);
      f *= jitter;
    }
    phase += 2 * pi * f / fs;
    if (phase >= 2 * pi) {
      phase -= 2 * pi;
      if (!params.constant_pitch) jitter = 1.0 + jitter_sd * gauss(rng);
    }

    // Band-limited source via the sin(k*phi) recurrence: sawtooth-like 1/k
    // rolloff, or flat harmonics for the monotone pulse train.
    const int harmonics = std::max(1, static_cast<int>(7500.0 / f));
    const double c2 = 2.0 * std::cos(phase);
    double s_prev = 0.0, s_cur = std::sin(phase), src = 0.0;
    for (int k = 1; k <= harmonics; ++k) {
      src += params.constant_pitch ? detail::kPulseHarmonic * s_cur : s_cur / k;
      const double s_next = c2 * s_cur - s_prev;
      s_prev = s_cur;
      s_cur = s_next;
    }
    src += breath * gauss(rng);

    if ((i - v0) % 64 == 0) {
      const double seg = pos * 2.0;
      const std::size_t a = std::min<std::size_t>(1, static_cast<std::size_t>(seg));
      const double frac = std::clamp(seg - static_cast<double>(a), 0.0, 1.0);
      const double w = 0.5 - 0.5 * std::cos(pi * frac);
      for (int k = 0; k < n_formants; ++k) {
        const double fk = targets[k][a] * (1.0 - w) + targets[k][a + 1] * w;
        resonators[k].set(fk, bandwidth[k], fs);
      }
    }
    double y = src;
    for (int k = 0; k < n_formants; ++k) y = resonators[k](y);

    const double onset = std::min({1.0, static_cast<double>(i - v0) / (0.03 * fs),
                                   static_cast<double>(v1 - i) / (0.03 * fs)});
    const double syl = 0.5 - 0.5 * std::cos(2 * pi * syllable_rate * t + syllable_phase);
    x[i] = y * onset * (0.3 + 0.7 * std::sqrt(syl));
  }

  const double speech_rms = dsp::rms(std::span<const double>(x).subspan(v0, v1 - v0));
  const double noise_sd = speech_rms * std::pow(10.0, -uniform(40.0, 50.0) / 20.0);
  for (double& v : x) v += noise_sd * gauss(rng);
  detail::set_peak(x, uniform(0.25, 0.8));
  return x;
}

namespace detail {

inline std::vector<double> phase_randomize(std::span<const double> x, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-std::numbers::pi, std::numbers::pi);
  return dsp::stft_process(x, 512, 128, [&](std::size_t, dsp::Spectrum& s) {
    for (std::size_t k = 1; k + 1 < s.size(); ++k) s[k] = std::polar(std::abs(s[k]), u(rng));
  });
}

// Vocoder-style magnitude coding: each STFT frame keeps only the RMS
// magnitude of every `band`-bin group, rounded to a `step_db` grid. Phases
// are kept, harmonic fine structure within a band is lost.
inline std::vector<double> quantize_magnitude(std::span<const double> x, double step_db,
                                              std::size_t band) {
  return dsp::stft_process(x, 512, 128, [=](std::size_t, dsp::Spectrum& s) {
    for (std::size_t b0 = 1; b0 < s.size(); b0 += band) {
      const std::size_t b1 = std::min(s.size(), b0 + band);
      double energy = 0.0;
      for (std::size_t k = b0; k < b1; ++k) energy += std::norm(s[k]);
      const double mag = std::sqrt(energy / static_cast<double>(b1 - b0));
      if (mag < 1e-12) continue;
      const double q = std::pow(10.0, std::round(20.0 * std::log10(mag) / step_db) * step_db / 20.0);
      for (std::size_t k = b0; k < b1; ++k) {
        const double m = std::abs(s[k]);
        s[k] = m < 1e-12 ? std::complex<double>(q, 0.0) : s[k] * (q / m);
      }
    }
  });
}

inline std::vector<double> clip_compand(std::span<const double> x) {
  const double p = dsp::peak(x);
  const double clip = 0.45 * p;
  constexpr double mu = 255.0;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = std::clamp(x[i], -clip, clip) / clip;
    const double c = std::copysign(std::log1p(mu * std::abs(v)) / std::log1p(mu), v);
    const double q = std::round(c * 127.0) / 127.0;
    y[i] = std::copysign((std::pow(1.0 + mu, std::abs(q)) - 1.0) / mu, q);
  }
  return y;
}

inline std::vector<double> time_smear(std::span<const double> x, std::mt19937_64& rng) {
  constexpr std::size_t frame = 480, hop = 120;
  const auto w = dsp::hann(frame);
  std::uniform_int_distribution<int> shift(-96, 96);
  std::vector<double> out(x.size(), 0.0), norm(x.size(), 0.0);
  for (std::size_t start = 0; start < x.size(); start += hop) {
    const long dst = static_cast<long>(start) + shift(rng);
    for (std::size_t i = 0; i < frame && start + i < x.size(); ++i) {
      const long j = dst + static_cast<long>(i);
      if (j < 0 || j >= static_cast<long>(x.size())) continue;
      out[static_cast<std::size_t>(j)] += w[i] * x[start + i];
      norm[static_cast<std::size_t>(j)] += w[i];
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = norm[i] > 1e-3 ? out[i] / norm[i] : 0.0;
  return out;
}

inline std::vector<double> add_inharmonic(std::span<const double> x, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> freq(350.0, 5000.0), ph(0.0, 2 * std::numbers::pi);
  const int tones = std::uniform_int_distribution<int>(3, 5)(rng);
  const auto env = envelope(x, 160);
  const double level = 0.35 * dsp::rms(x) * std::sqrt(2.0);
  std::vector<double> y(x.begin(), x.end());
  for (int k = 0; k < tones; ++k) {
    const double f = freq(rng), p = ph(rng);
    for (std::size_t i = 0; i < y.size(); ++i) {
      y[i] += level / tones * env[i] * std::sin(2 * std::numbers::pi * f * i / kFs + p);
    }
  }
  return y;
}

inline std::vector<double> band_limit(std::span<const double> x, double cutoff_hz, int bits) {
  auto spec = dsp::rfft(x);
  for (std::size_t k = 0; k < spec.size(); ++k) {
    if (static_cast<double>(k) * kFs / static_cast<double>(x.size()) > cutoff_hz) spec[k] = 0.0;
  }
  auto y = dsp::irfft(spec, x.size());
  const double levels = std::pow(2.0, bits - 1);
  for (double& v : y) v = std::round(v * levels) / levels;
  return y;
}

}  // namespace detail

/// A spoofed utterance of the given attack family, a pure function of
/// (family, seed).
inline std::vector<double> gen_spoof(std::string_view family, std::uint64_t seed,
                                     const VoiceParams& base = {}) {
  if (!is_seen_family(family) && !is_unseen_family(family)) {
    throw usage_error("gen_spoof: unknown attack family '" + std::string(family) + "'");
  }
  std::mt19937_64 rng(mix64(seed ^ 0x5f0f5f0fULL));
  VoiceParams params = base;
  if (family == "A01") params.constant_pitch = true;
  if (family == "U03") params.bandwidth_scale = 8.0;
  std::vector<double> x = gen_bonafide(seed, params);
  const double target_peak = dsp::peak(x);

  std::vector<double> y;
  if (family == "A01" || family == "U03") {
    y = std::move(x);
  } else if (family == "A02") {
    y = detail::phase_randomize(x, rng);
  } else if (family == "A03") {
    y = detail::quantize_magnitude(x, 6.0, 8);
  } else if (family == "A04") {
    y = detail::clip_compand(x);
  } else if (family == "U01") {
    y = detail::time_smear(x, rng);
  } else if (family == "U02") {
    y = detail::add_inharmonic(x, rng);
  } else {  // U04
    y = detail::band_limit(x, 3000.0, 10);
  }
  detail::set_peak(y, target_peak);
  return y;
}

}  // namespace ockd::corpus
