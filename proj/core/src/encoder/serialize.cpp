#include <cstring>

#include "contrastcat/encoder/encoder.hpp"
#include "contrastcat/util/binary_io.hpp"
#include "contrastcat/util/error.hpp"
#include "contrastcat/util/hash.hpp"

namespace ccat {

namespace {
constexpr char kMagic[8] = {'C', 'C', 'A', 'T', 'M', 'O', 'D', 'L'};
}

std::vector<std::uint8_t> serialize_model(const Encoder& model) {
  ByteWriter w;
  w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), sizeof(kMagic)));
  w.u32(kModelFormatVersion);
  const auto& c = model.config();
  for (std::uint64_t v : {std::uint64_t(c.layers), std::uint64_t(c.heads),
                          std::uint64_t(c.model_dim), std::uint64_t(c.head_dim),
                          std::uint64_t(c.ffn_dim), std::uint64_t(c.vocab_size),
                          std::uint64_t(c.max_len), std::uint64_t(c.classes), c.seed})
    w.u64(v);
  model.weights().for_each([&](const nk::Matrix& m) { w.matrix(m); });
  return w.take();
}

Encoder deserialize_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "model");
  const auto magic = r.bytes(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("model: bad magic bytes");
  }
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion) {
    throw FormatError("model: unsupported format version " + std::to_string(version) +
                      " (expected " + std::to_string(kModelFormatVersion) + ")");
  }
  EncoderConfig c;
  c.layers = r.u64();
  c.heads = r.u64();
  c.model_dim = r.u64();
  c.head_dim = r.u64();
  c.ffn_dim = r.u64();
  c.vocab_size = r.u64();
  c.max_len = r.u64();
  c.classes = r.u64();
  c.seed = r.u64();
  c.validate();
  EncoderWeights w;
  w.layers.resize(c.layers);
  w.for_each([&](nk::Matrix& m) { m = r.matrix(); });
  if (!r.at_end()) throw FormatError("model: trailing bytes after weights");
  return Encoder(c, std::move(w));
}

void save_model(const Encoder& model, const std::string& path) {
  write_file(path, serialize_model(model));
}

Encoder load_model(const std::string& path) { return deserialize_model(read_file(path)); }

std::uint64_t Encoder::fingerprint() const {
  Fnv1a h;
  h.update(serialize_model(*this));
  return h.digest();
}

}  // namespace ccat
