#pragma once

// Wav2Vec-style toy encoder: a strided linear frontend over raw samples, a
// feature LayerNorm, sinusoidal positions, pre-norm transformer blocks, and an
// attention-pooling backend. The same class builds both the teacher (with a 2-class head) and
// the depth-compressed student (no head).

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ockd/autodiff/tensor.hpp"
#include "ockd/error.hpp"

namespace ockd::models {

using ad::Tensor;

struct EncoderConfig {
  int num_layers = 12;
  int d_model = 32;
  int n_heads = 4;
  int ff_dim = 64;
  int frontend_frame = 400;
  int frontend_stride = 200;
  std::optional<int> num_classes;  // 2 for a teacher, empty for a student

  void validate() const {
    if (num_layers <= 0 || d_model <= 0 || n_heads <= 0 || ff_dim <= 0 ||
        frontend_frame <= 0 || frontend_stride <= 0) {
      throw usage_error("encoder config: all sizes must be positive");
    }
    if (d_model % n_heads != 0) {
      throw usage_error("encoder config: n_heads (" + std::to_string(n_heads) +
                        ") must divide d_model (" + std::to_string(d_model) + ")");
    }
    if (num_classes && *num_classes != 2) {
      throw usage_error("encoder config: num_classes must be 2 when present");
    }
  }

  /// Embeddings of two encoders are comparable only when these agree.
  bool shares_embedding_space(const EncoderConfig& other) const {
    return d_model == other.d_model && frontend_frame == other.frontend_frame &&
           frontend_stride == other.frontend_stride;
  }

  bool operator==(const EncoderConfig&) const = default;
};

inline EncoderConfig teacher_config(int num_layers = 12) {
  EncoderConfig c;
  c.num_layers = num_layers;
  c.num_classes = 2;
  return c;
}

inline EncoderConfig student_config(const EncoderConfig& teacher, int num_layers = 4) {
  EncoderConfig c = teacher;
  c.num_layers = num_layers;
  c.num_classes.reset();
  return c;
}

/// Per-layer time-pooled embeddings of a batch; every tensor has N rows.
struct HiddenStack {
  std::vector<Tensor> layers;  // layers[i] is [N, d_model], output of block i+1
  Tensor backend;              // [N, d_model]
  Tensor logits;               // [N, 2], teacher only

  std::size_t num_layers() const { return layers.size(); }
  std::size_t batch_size() const { return backend.defined() ? backend.dim(0) : 0; }
  bool has_logits() const { return logits.defined(); }
};

/// Student/teacher layer pairs (1-based block indices) plus the backend pair.
struct LayerMap {
  std::vector<std::pair<int, int>> pairs;  // (student, teacher)
  bool includes_backend = true;

  std::size_t num_terms() const { return pairs.size() + (includes_backend ? 1 : 0); }
  bool operator==(const LayerMap&) const = default;
};

/// Every second student block learns from the teacher block at the same
/// relative depth: (2k, 2k * L_T / L_S) for k = 1 .. L_S / 2.
inline LayerMap layer_map(int teacher_layers, int student_layers) {
  if (student_layers <= 0 || teacher_layers <= 0) {
    throw usage_error("layer_map: layer counts must be positive");
  }
  if (student_layers % 2 != 0) {
    throw usage_error("layer_map: student depth " + std::to_string(student_layers) +
                      " must be even");
  }
  if (teacher_layers % student_layers != 0) {
    throw usage_error("layer_map: teacher depth " + std::to_string(teacher_layers) +
                      " is not a multiple of student depth " +
                      std::to_string(student_layers));
  }
  const int ratio = teacher_layers / student_layers;
  LayerMap map;
  for (int k = 1; k <= student_layers / 2; ++k) map.pairs.emplace_back(2 * k, 2 * k * ratio);
  return map;
}

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Number of frontend frames for a waveform of `length` samples.
inline std::size_t frame_count(std::size_t length, int frame, int stride) {
  if (length < static_cast<std::size_t>(frame)) return 0;
  return (length - static_cast<std::size_t>(frame)) / static_cast<std::size_t>(stride) + 1;
}

inline Tensor sinusoidal_positions(std::size_t steps, std::size_t dim) {
  std::vector<double> pe(steps * dim);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate =
          std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      const double a = static_cast<double>(t) * rate;
      pe[t * dim + i] = i % 2 == 0 ? std::sin(a) : std::cos(a);
    }
  }
  return Tensor::from({steps, dim}, std::move(pe));
}

class Encoder {
 public:
  Encoder(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    build(&rng);
  }

  /// Adopts parameters loaded from disk; names and shapes must match the
  /// architecture described by `config`.
  Encoder(const EncoderConfig& config, std::vector<NamedTensor> params) : config_(config) {
    config_.validate();
    build(nullptr);
    if (params.size() != params_.size()) {
      throw data_error("encoder: expected " + std::to_string(params_.size()) +
                       " parameters, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].name != params_[i].name ||
          params[i].value.shape() != params_[i].value.shape()) {
        throw data_error("encoder: parameter " + std::to_string(i) + " '" + params[i].name +
                         "' " + ad::shape_str(params[i].value.shape()) + " does not match '" +
                         params_[i].name + "' " + ad::shape_str(params_[i].value.shape()));
      }
      std::vector<double> v(params[i].value.data().begin(), params[i].value.data().end());
      params_[i].value = Tensor::from(params_[i].value.shape(), std::move(v), true);
    }
    bind();
  }

  Encoder(const Encoder&) = delete;
  Encoder& operator=(const Encoder&) = delete;
  Encoder(Encoder&&) = default;
  Encoder& operator=(Encoder&&) = default;

  /// Deep copy with independent parameter storage.
  Encoder clone() const {
    std::vector<NamedTensor> copy;
    for (const auto& p : params_) copy.push_back({p.name, p.value.detach()});
    Encoder e(config_, std::move(copy));
    e.set_trainable(trainable());
    return e;
  }

  const EncoderConfig& config() const { return config_; }
  bool is_teacher() const { return config_.num_classes.has_value(); }
  const std::vector<NamedTensor>& named_parameters() const { return params_; }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.value);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void set_trainable(bool on) {
    for (auto& p : params_) p.value.set_requires_grad(on);
  }
  bool trainable() const { return params_.front().value.requires_grad(); }

  /// Strided linear projection of overlapping frames, then GELU: [T, d_model].
  Tensor frontend(std::span<const double> waveform) const {
    const std::size_t frame = static_cast<std::size_t>(config_.frontend_frame);
    const std::size_t stride = static_cast<std::size_t>(config_.frontend_stride);
    const std::size_t steps = frame_count(waveform.size(), config_.frontend_frame,
                                          config_.frontend_stride);
    if (steps == 0) {
      throw data_error("frontend: waveform of " + std::to_string(waveform.size()) +
                       " samples is shorter than one frame (" + std::to_string(frame) + ")");
    }
    std::vector<double> frames(steps * frame);
    for (std::size_t t = 0; t < steps; ++t) {
      std::copy_n(waveform.begin() + static_cast<std::ptrdiff_t>(t * stride), frame,
                  frames.begin() + static_cast<std::ptrdiff_t>(t * frame));
    }
    const Tensor x = Tensor::from({steps, frame}, std::move(frames));
    return ad::gelu(ad::matmul(x, front_w_) + front_b_);
  }

  /// Normalizes frame features [T, d_model], adds positions and runs every
  /// transformer block. Fills `layers` (one pooled row each) and returns the final
  /// hidden sequence through `final_sequence`.
  HiddenStack encode(const Tensor& features, Tensor* final_sequence = nullptr) const {
    const std::size_t d = static_cast<std::size_t>(config_.d_model);
    if (features.rank() != 2 || features.dim(1) != d) {
      throw ad::ShapeError("encode", features.shape(), ad::Shape{0, d});
    }
    // Raw-sample features are tiny next to the unit-scale positions; the
    // feature norm puts them on the same footing.
    Tensor x = ad::layer_norm(features, feature_g_, feature_b_) +
               sinusoidal_positions(features.dim(0), d);
    HiddenStack stack;
    for (const Block& b : blocks_) {
      x = x + attention(ad::layer_norm(x, b.ln1_g, b.ln1_b), b);
      const Tensor h = ad::layer_norm(x, b.ln2_g, b.ln2_b);
      x = x + (ad::matmul(ad::gelu(ad::matmul(h, b.w1) + b.b1), b.w2) + b.b2);
      stack.layers.push_back(ad::reshape(ad::mean(x, 0), {1, d}));
    }
    if (final_sequence) *final_sequence = x;
    return stack;
  }

  /// Learned-query attention pooling over time; the teacher also gets logits.
  void backend_head(const Tensor& sequence, HiddenStack& stack) const {
    const std::size_t d = static_cast<std::size_t>(config_.d_model);
    const Tensor scores = ad::scale(ad::matmul(sequence, ad::reshape(query_, {d, 1})),
                                    1.0 / std::sqrt(static_cast<double>(d)));
    const Tensor weights = ad::softmax(ad::transpose(scores));  // [1, T]
    stack.backend = ad::matmul(weights, sequence);              // [1, d]
    if (is_teacher()) stack.logits = ad::matmul(stack.backend, head_w_) + head_b_;
  }

  HiddenStack forward(std::span<const double> waveform) const {
    Tensor seq;
    HiddenStack stack = encode(frontend(waveform), &seq);
    backend_head(seq, stack);
    return stack;
  }

  /// Runs each utterance separately and stacks the pooled rows.
  HiddenStack forward_batch(const std::vector<std::span<const double>>& batch) const {
    if (batch.empty()) throw usage_error("forward_batch: empty batch");
    std::vector<HiddenStack> rows;
    rows.reserve(batch.size());
    for (const auto& w : batch) rows.push_back(forward(w));
    return stack_rows(rows);
  }

  static HiddenStack stack_rows(const std::vector<HiddenStack>& rows) {
    HiddenStack out;
    const std::size_t layers = rows.front().num_layers();
    std::vector<Tensor> parts(rows.size());
    for (std::size_t l = 0; l < layers; ++l) {
      for (std::size_t i = 0; i < rows.size(); ++i) parts[i] = rows[i].layers[l];
      out.layers.push_back(rows.size() == 1 ? parts[0] : ad::concat(parts, 0));
    }
    for (std::size_t i = 0; i < rows.size(); ++i) parts[i] = rows[i].backend;
    out.backend = rows.size() == 1 ? parts[0] : ad::concat(parts, 0);
    if (rows.front().has_logits()) {
      for (std::size_t i = 0; i < rows.size(); ++i) parts[i] = rows[i].logits;
      out.logits = rows.size() == 1 ? parts[0] : ad::concat(parts, 0);
    }
    return out;
  }

 private:
  struct Block {
    Tensor ln1_g, ln1_b, wq, bq, wk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b, w1, b1, w2, b2;
  };

  Tensor attention(const Tensor& h, const Block& b) const {
    const std::size_t heads = static_cast<std::size_t>(config_.n_heads);
    const std::size_t dh = static_cast<std::size_t>(config_.d_model) / heads;
    const Tensor q = ad::matmul(h, b.wq) + b.bq;
    const Tensor k = ad::matmul(h, b.wk);
    const Tensor v = ad::matmul(h, b.wv) + b.bv;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t j = 0; j < heads; ++j) {
      const Tensor qj = ad::slice(q, 1, j * dh, (j + 1) * dh);
      const Tensor kj = ad::slice(k, 1, j * dh, (j + 1) * dh);
      const Tensor vj = ad::slice(v, 1, j * dh, (j + 1) * dh);
      const Tensor a = ad::softmax(ad::scale(ad::matmul(qj, ad::transpose(kj)), inv_sqrt));
      outs.push_back(ad::matmul(a, vj));
    }
    const Tensor merged = heads == 1 ? outs.front() : ad::concat(outs, 1);
    return ad::matmul(merged, b.wo) + b.bo;
  }

  // Declares every parameter in a fixed order. With an RNG, values are drawn
  // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); without one they are zero and
  // expected to be overwritten.
  void build(std::mt19937_64* rng) {
    params_.clear();
    const std::size_t d = static_cast<std::size_t>(config_.d_model);
    const std::size_t ff = static_cast<std::size_t>(config_.ff_dim);
    const std::size_t frame = static_cast<std::size_t>(config_.frontend_frame);
    auto linear = [&](const std::string& name, ad::Shape shape, std::size_t fan_in) {
      Tensor t = Tensor::zeros(std::move(shape), true);
      if (rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (double& v : t.mutable_data()) v = u(*rng);
      }
      params_.push_back({name, t});
    };
    auto constant = [&](const std::string& name, std::size_t n, double v) {
      params_.push_back({name, Tensor::full({n}, v, true)});
    };
    linear("frontend.weight", {frame, d}, frame);
    linear("frontend.bias", {d}, frame);
    constant("feature_norm.gamma", d, 1.0);
    constant("feature_norm.beta", d, 0.0);
    for (int i = 0; i < config_.num_layers; ++i) {
      const std::string p = "layers." + std::to_string(i) + ".";
      constant(p + "attn_norm.gamma", d, 1.0);
      constant(p + "attn_norm.beta", d, 0.0);
      // No key bias: softmax over keys is invariant to it, so its gradient
      // is identically zero.
      for (const char* m : {"q", "k", "v", "o"}) {
        linear(p + "attn.w" + m, {d, d}, d);
        if (*m != 'k') linear(p + "attn.b" + m, {d}, d);
      }
      constant(p + "ffn_norm.gamma", d, 1.0);
      constant(p + "ffn_norm.beta", d, 0.0);
      linear(p + "ffn.w1", {d, ff}, d);
      linear(p + "ffn.b1", {ff}, d);
      linear(p + "ffn.w2", {ff, d}, ff);
      linear(p + "ffn.b2", {d}, ff);
    }
    linear("backend.query", {d}, d);
    if (is_teacher()) {
      linear("head.weight", {d, 2}, d);
      linear("head.bias", {2}, d);
    }
    bind();
  }

  void bind() {
    std::size_t i = 0;
    auto next = [&]() -> Tensor { return params_.at(i++).value; };
    front_w_ = next();
    front_b_ = next();
    feature_g_ = next();
    feature_b_ = next();
    blocks_.assign(static_cast<std::size_t>(config_.num_layers), Block{});
    for (Block& b : blocks_) {
      b.ln1_g = next();
      b.ln1_b = next();
      b.wq = next();
      b.bq = next();
      b.wk = next();
      b.wv = next();
      b.bv = next();
      b.wo = next();
      b.bo = next();
      b.ln2_g = next();
      b.ln2_b = next();
      b.w1 = next();
      b.b1 = next();
      b.w2 = next();
      b.b2 = next();
    }
    query_ = next();
    if (is_teacher()) {
      head_w_ = next();
      head_b_ = next();
    }
  }

  EncoderConfig config_;
  std::vector<NamedTensor> params_;
  Tensor front_w_, front_b_;
  Tensor feature_g_, feature_b_;
  std::vector<Block> blocks_;
  Tensor query_;
  Tensor head_w_, head_b_;
};

}  // namespace ockd::models
