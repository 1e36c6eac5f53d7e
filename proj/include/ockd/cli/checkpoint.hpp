#pragma once

// Checkpoint layout, all integers little-endian:
//
//   "OCKD"                 4-byte magic
//   u32 version            currently 1
//   u8  kind               0 teacher, 1 student
//   u32 x 7                num_layers d_model n_heads ff_dim frame stride num_classes(0 = none)
//   u32 count              number of tensors
//   count x { u32 name_len, name bytes, u32 rank, u64 dims[rank], f64 values[] }
//   32 bytes               SHA-256 of everything above

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "ockd/io.hpp"
#include "ockd/models/encoder.hpp"

namespace ockd::cli {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class ModelKind : std::uint8_t { kTeacher = 0, kStudent = 1 };

inline const char* kind_name(ModelKind k) { return k == ModelKind::kTeacher ? "teacher" : "student"; }

using Digest = std::array<unsigned char, 32>;

inline Digest sha256(const void* data, std::size_t size) {
  Digest d{};
  unsigned int len = 0;
  if (EVP_Digest(data, size, d.data(), &len, EVP_sha256(), nullptr) != 1 || len != d.size()) {
    throw Error(ErrorKind::kData, "sha256 failed");
  }
  return d;
}

inline std::string hex(const Digest& d) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  for (unsigned char c : d) {
    s.push_back(kHex[c >> 4]);
    s.push_back(kHex[c & 15]);
  }
  return s;
}

struct Checkpoint {
  ModelKind kind = ModelKind::kTeacher;
  models::EncoderConfig config;
  std::vector<models::NamedTensor> params;
  Digest digest{};

  models::Encoder to_encoder() const {
    std::vector<models::NamedTensor> copy;
    for (const auto& p : params) copy.push_back({p.name, p.value.detach()});
    return models::Encoder(config, std::move(copy));
  }
};

namespace detail {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t limit, std::string source)
      : bytes_(bytes), limit_(limit), source_(std::move(source)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > limit_) throw data_error(source_ + ": truncated checkpoint");
  }
  const std::string& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
  std::string source_;
};

}  // namespace detail

inline std::string serialize_checkpoint(ModelKind kind, const models::Encoder& model) {
  std::string out = "OCKD";
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(kind));
  const auto& c = model.config();
  for (int v : {c.num_layers, c.d_model, c.n_heads, c.ff_dim, c.frontend_frame, c.frontend_stride,
                c.num_classes.value_or(0)}) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  }
  const auto& params = model.named_parameters();
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) detail::put<std::uint64_t>(out, d);
    for (double v : p.value.data()) detail::put<double>(out, v);
  }
  const Digest digest = sha256(out.data(), out.size());
  out.append(reinterpret_cast<const char*>(digest.data()), digest.size());
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& source) {
  if (bytes.size() < 4 + 32 || bytes.compare(0, 4, "OCKD") != 0) {
    throw data_error(source + ": not an OCKD checkpoint");
  }
  const std::size_t body = bytes.size() - 32;
  Checkpoint ck;
  std::memcpy(ck.digest.data(), bytes.data() + body, 32);
  if (sha256(bytes.data(), body) != ck.digest) {
    throw data_error(source + ": checkpoint digest mismatch (file corrupted)");
  }
  detail::Reader r(bytes, body, source);
  r.get_string(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw data_error(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto kind = r.get<std::uint8_t>();
  if (kind > 1) throw data_error(source + ": bad model kind");
  ck.kind = static_cast<ModelKind>(kind);
  auto& c = ck.config;
  for (int* field : {&c.num_layers, &c.d_model, &c.n_heads, &c.ff_dim, &c.frontend_frame,
                     &c.frontend_stride}) {
    *field = static_cast<int>(r.get<std::uint32_t>());
  }
  const auto classes = r.get<std::uint32_t>();
  if (classes != 0) c.num_classes = static_cast<int>(classes);
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    models::NamedTensor p;
    p.name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    ad::Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.get<std::uint64_t>());
    std::vector<double> values(ad::numel(shape));
    for (double& v : values) v = r.get<double>();
    p.value = ad::Tensor::from(std::move(shape), std::move(values));
    ck.params.push_back(std::move(p));
  }
  if (r.pos() != body) throw data_error(source + ": trailing bytes in checkpoint");
  try {
    c.validate();
  } catch (const Error& e) {
    throw data_error(source + ": " + e.what());
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, ModelKind kind,
                            const models::Encoder& model) {
  io::write_file_atomic(path, serialize_checkpoint(kind, model));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw data_error("checkpoint not found: " + path.string());
  return parse_checkpoint(io::read_file(path), path.string());
}

inline models::Encoder load_model(const std::filesystem::path& path, ModelKind expected) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.kind != expected) {
    throw data_error(path.string() + ": expected a " + kind_name(expected) + " checkpoint, got " +
                     kind_name(ck.kind));
  }
  return ck.to_encoder();
}

}  // namespace ockd::cli
