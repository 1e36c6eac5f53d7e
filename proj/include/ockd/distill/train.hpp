#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ockd/autodiff/adam.hpp"
#include "ockd/autodiff/tensor.hpp"
#include "ockd/corpus/utterance.hpp"
#include "ockd/distill/losses.hpp"
#include "ockd/models/encoder.hpp"

namespace ockd::distill {

using corpus::Label;
using corpus::Utterance;
using models::Encoder;
using models::EncoderConfig;

// Logit index of each class. The bonafide logit comes second, as in the
// common two-class countermeasure layout.
inline constexpr std::size_t kSpoofClass = 0;
inline constexpr std::size_t kBonafideClass = 1;

struct TrainOptions {
  ad::AdamOptions adam;
  int epochs = 100;
  int batch_size = 32;
  std::uint64_t seed = 0;
  bool augment = true;
  double crop_s = 0.0;  // random training crop length; 0 keeps full utterances
};

struct TeacherConfig {
  EncoderConfig encoder = models::teacher_config();
  TrainOptions train;
  double spoof_weight = 0.1;
  double bonafide_weight = 0.9;
};

struct DistillConfig {
  double lambda = 1e-5;
  models::LayerMap layer_map;
  Objective objective = Objective::kTotal;
  TrainOptions train;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double wallclock_ms = 0.0;
};

/// `epoch<TAB>loss<TAB>wallclock_ms` per line.
inline std::string format_log(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os.precision(10);
  for (const auto& e : log) {
    os << e.epoch << '\t' << e.loss << '\t' << static_cast<long long>(e.wallclock_ms) << '\n';
  }
  return os.str();
}

struct TrainResult {
  Encoder model;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// (1/N) * sum_i w[y_i] * -log softmax(logits_i)[y_i].
inline ad::Tensor weighted_cross_entropy(const ad::Tensor& logits, std::span<const Label> labels,
                                         double spoof_weight, double bonafide_weight) {
  if (logits.rank() != 2 || logits.dim(1) != 2 || logits.dim(0) != labels.size()) {
    throw ad::ShapeError("weighted_cross_entropy", logits.shape(), ad::Shape{labels.size(), 2});
  }
  const std::size_t n = labels.size();
  std::vector<double> pick(n * 2, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const bool bona = labels[i] == Label::kBonafide;
    pick[i * 2 + (bona ? kBonafideClass : kSpoofClass)] =
        -(bona ? bonafide_weight : spoof_weight) / static_cast<double>(n);
  }
  return ad::sum(ad::log_softmax(logits) * ad::Tensor::from({n, 2}, std::move(pick)));
}

/// Training view of an utterance: optional random crop, then optional
/// additive Gaussian noise at an SNR drawn from [15, 40] dB. Randomness is
/// keyed by (seed, utt_id, epoch), so batch order does not matter.
inline std::vector<double> training_waveform(const Utterance& u, const TrainOptions& opt,
                                             int epoch, std::size_t min_length) {
  std::mt19937_64 rng(corpus::keyed_seed(opt.seed, u.utt_id, static_cast<std::uint64_t>(epoch)));
  std::vector<double> x = u.samples;
  const auto crop = static_cast<std::size_t>(std::lround(opt.crop_s * corpus::kSampleRate));
  if (crop >= min_length && x.size() > crop) {
    const std::size_t start =
        std::uniform_int_distribution<std::size_t>(0, x.size() - crop)(rng);
    x = std::vector<double>(x.begin() + static_cast<std::ptrdiff_t>(start),
                            x.begin() + static_cast<std::ptrdiff_t>(start + crop));
  }
  if (opt.augment) {
    double power = 0.0;
    for (double v : x) power += v * v;
    power /= static_cast<double>(std::max<std::size_t>(x.size(), 1));
    const double snr_db = std::uniform_real_distribution<double>(15.0, 40.0)(rng);
    const double sd = std::sqrt(power * std::pow(10.0, -snr_db / 10.0));
    std::normal_distribution<double> noise(0.0, sd);
    for (double& v : x) v = std::clamp(v + noise(rng), -1.0, 1.0);
  }
  return x;
}

namespace detail {

inline void check_options(const TrainOptions& opt) {
  if (opt.epochs < 1) throw usage_error("training: epochs must be >= 1");
  if (opt.batch_size < 1) throw usage_error("training: batch_size must be >= 1");
}

inline void check_finite(double loss, const char* what, int epoch) {
  if (!std::isfinite(loss)) {
    throw numeric_error(std::string(what) + ": non-finite loss in epoch " + std::to_string(epoch));
  }
}

// Runs `step` over seed-shuffled minibatches for every epoch; `step` returns
// the batch loss after updating parameters.
template <typename Step>
std::vector<EpochLog> run_epochs(std::size_t count, const TrainOptions& opt, const char* what,
                                 Step step, const EpochCallback& on_epoch) {
  std::vector<std::size_t> order(count);
  std::vector<EpochLog> log;
  const auto start = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(corpus::mix64(opt.seed + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < count; b += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t e = std::min(count, b + static_cast<std::size_t>(opt.batch_size));
      const double loss = step(std::span<const std::size_t>(order).subspan(b, e - b), epoch);
      check_finite(loss, what, epoch);
      total += loss;
      ++batches;
    }
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    log.push_back({epoch, total / batches, ms});
    if (on_epoch) on_epoch(log.back());
  }
  return log;
}

}  // namespace detail

/// Trains the binary teacher on bonafide and spoof utterances with weighted
/// cross-entropy.
inline TrainResult train_teacher(const std::vector<Utterance>& data, const TeacherConfig& config,
                                 const EpochCallback& on_epoch = {}) {
  detail::check_options(config.train);
  if (!config.encoder.num_classes) throw usage_error("train_teacher: teacher needs a class head");
  const bool has_bona = std::any_of(data.begin(), data.end(),
                                    [](const Utterance& u) { return u.label == Label::kBonafide; });
  const bool has_spoof = std::any_of(data.begin(), data.end(),
                                     [](const Utterance& u) { return u.label == Label::kSpoof; });
  if (!has_bona || !has_spoof) {
    throw data_error("train_teacher: training data must contain both bonafide and spoof");
  }

  Encoder model(config.encoder, corpus::mix64(config.train.seed ^ 0x7eac4e7ULL));
  ad::Adam adam(model.parameters(), config.train.adam);
  const auto min_len = static_cast<std::size_t>(config.encoder.frontend_frame);
  auto step = [&](std::span<const std::size_t> idx, int epoch) {
    std::vector<std::vector<double>> waves;
    std::vector<Label> labels;
    for (std::size_t i : idx) {
      waves.push_back(training_waveform(data[i], config.train, epoch, min_len));
      labels.push_back(data[i].label);
    }
    std::vector<std::span<const double>> views(waves.begin(), waves.end());
    const auto stack = model.forward_batch(views);
    const ad::Tensor loss = weighted_cross_entropy(stack.logits, labels, config.spoof_weight,
                                                   config.bonafide_weight);
    adam.zero_grad();
    loss.backward();
    adam.step();
    return loss.item();
  };
  auto log = detail::run_epochs(data.size(), config.train, "train_teacher", step, on_epoch);
  return {std::move(model), std::move(log)};
}

/// Trains a bonafide-only student to reproduce the frozen teacher's mapped
/// hidden embeddings.
inline TrainResult distill_student(const std::vector<Utterance>& bonafide, const Encoder& teacher,
                                   const EncoderConfig& student_config,
                                   const DistillConfig& config,
                                   const EpochCallback& on_epoch = {}) {
  detail::check_options(config.train);
  if (bonafide.empty()) throw data_error("distill_student: empty training list");
  for (const auto& u : bonafide) {
    if (u.label != Label::kBonafide) {
      throw data_error("distill_student: training list must be bonafide only, got spoof " +
                       u.utt_id);
    }
  }
  if (!teacher.config().shares_embedding_space(student_config)) {
    throw usage_error(
        "distill_student: teacher and student must share d_model and frontend framing");
  }
  if (student_config.num_classes) throw usage_error("distill_student: student has no class head");
  const models::LayerMap map =
      config.layer_map.pairs.empty()
          ? models::layer_map(teacher.config().num_layers, student_config.num_layers)
          : config.layer_map;

  Encoder student(student_config, corpus::mix64(config.train.seed ^ 0x57d3e7ULL));
  ad::Adam adam(student.parameters(), config.train.adam);
  const auto min_len = static_cast<std::size_t>(student_config.frontend_frame);
  auto step = [&](std::span<const std::size_t> idx, int epoch) {
    std::vector<std::vector<double>> waves;
    for (std::size_t i : idx) {
      waves.push_back(training_waveform(bonafide[i], config.train, epoch, min_len));
    }
    std::vector<std::span<const double>> views(waves.begin(), waves.end());
    models::HiddenStack target;
    {
      ad::NoGradGuard frozen;
      target = teacher.forward_batch(views);
    }
    const auto stack = student.forward_batch(views);
    const auto report = loss_total(target, stack, map, config.lambda, config.objective);
    adam.zero_grad();
    report.objective.backward();
    adam.step();
    return report.objective.item();
  };
  auto log = detail::run_epochs(bonafide.size(), config.train, "distill_student", step, on_epoch);
  return {std::move(student), std::move(log)};
}

}  // namespace ockd::distill
