#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ockd/autodiff/tensor.hpp"
#include "ockd/corpus/utterance.hpp"
#include "ockd/distill/train.hpp"
#include "ockd/models/encoder.hpp"

namespace ockd::eval {

using models::Encoder;
using models::HiddenStack;
using models::LayerMap;

namespace detail {

inline double row_cosine(const ad::Tensor& a, const ad::Tensor& b, const std::string& utt_id) {
  if (a.shape() != b.shape()) throw ad::ShapeError("similarity", a.shape(), b.shape());
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < 1e-12 || nb < 1e-12) {
    throw numeric_error("degenerate (zero-norm) embedding while scoring " + utt_id);
  }
  return dot / (na * nb);
}

}  // namespace detail

/// Mean cosine similarity over the mapped layer pairs and the backend pair
/// of single-utterance stacks. In [-1, 1]; higher means more bonafide-like.
inline double similarity(const HiddenStack& teacher, const HiddenStack& student,
                         const LayerMap& map, const std::string& utt_id = "<utterance>") {
  double total = 0.0;
  for (const auto& [s, t] : map.pairs) {
    if (s < 1 || static_cast<std::size_t>(s) > student.num_layers() || t < 1 ||
        static_cast<std::size_t>(t) > teacher.num_layers()) {
      throw usage_error("similarity: layer pair (" + std::to_string(s) + "," +
                        std::to_string(t) + ") outside the stacks");
    }
    total += detail::row_cosine(teacher.layers[static_cast<std::size_t>(t - 1)],
                                student.layers[static_cast<std::size_t>(s - 1)], utt_id);
  }
  if (map.includes_backend) total += detail::row_cosine(teacher.backend, student.backend, utt_id);
  return total / static_cast<double>(map.num_terms());
}

/// Binary countermeasure score of the teacher: bonafide minus spoof logit.
inline double logit_score(const HiddenStack& teacher) {
  if (!teacher.has_logits()) throw usage_error("logit_score: stack has no logits");
  return teacher.logits[distill::kBonafideClass] - teacher.logits[distill::kSpoofClass];
}

inline void check_pairing(const Encoder& teacher, const Encoder& student) {
  if (!teacher.config().shares_embedding_space(student.config())) {
    throw usage_error("scoring: teacher and student differ in d_model or frontend framing");
  }
}

inline double score_utterance(const Encoder& teacher, const Encoder& student,
                              const corpus::Utterance& utt) {
  check_pairing(teacher, student);
  ad::NoGradGuard no_grad;
  const LayerMap map = models::layer_map(teacher.config().num_layers,
                                         student.config().num_layers);
  return similarity(teacher.forward(utt.samples), student.forward(utt.samples), map, utt.utt_id);
}

struct UtteranceScores {
  double teacher = 0.0;  // logit margin
  double ockd = 0.0;     // teacher-student similarity
};

/// Both scores from one teacher forward pass.
inline UtteranceScores score_both(const Encoder& teacher, const Encoder& student,
                                  const corpus::Utterance& utt) {
  check_pairing(teacher, student);
  ad::NoGradGuard no_grad;
  const LayerMap map = models::layer_map(teacher.config().num_layers,
                                         student.config().num_layers);
  const HiddenStack t = teacher.forward(utt.samples);
  return {logit_score(t), similarity(t, student.forward(utt.samples), map, utt.utt_id)};
}

}  // namespace ockd::eval
