#include "contrastcat/reflib/reflib.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <random>

#include "contrastcat/util/binary_io.hpp"
#include "contrastcat/util/error.hpp"
#include "contrastcat/util/hash.hpp"
#include "contrastcat/util/parallel.hpp"

namespace ccat {

const std::vector<ReferenceEntry>& ReferenceLibrary::entries(ClassId c) const {
  if (c >= per_class.size()) {
    throw LibraryError("reference library has no entries for class " + std::to_string(c));
  }
  return per_class[c];
}

std::size_t ReferenceLibrary::total_entries() const {
  std::size_t n = 0;
  for (const auto& v : per_class) n += v.size();
  return n;
}

ReferenceLibrary ReferenceLibrary::truncated(std::size_t count) const {
  ReferenceLibrary out = *this;
  for (auto& v : out.per_class)
    if (v.size() > count) v.resize(count);
  return out;
}

namespace {

ReferenceEntry make_entry(const TokenSequence& tokens, ForwardTrace trace, ClassId c,
                          std::size_t source) {
  ReferenceEntry e;
  e.tokens = tokens;
  e.activations = std::move(trace.activations);
  e.score = trace.probs[c];
  e.source_index = source;
  return e;
}

std::vector<std::vector<double>> train_probabilities(const Encoder& model, const Corpus& corpus) {
  std::vector<std::vector<double>> probs(corpus.train.size());
  parallel_for(corpus.train.size(),
               [&](std::size_t i) { probs[i] = model.probabilities(corpus.train[i]); });
  return probs;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

std::string no_reference_message(double gamma, ClassId c) {
  char g[32];
  std::snprintf(g, sizeof(g), "%g", gamma);
  return "no training sequence has prob < " + std::string(g) + " for class " + std::to_string(c) +
         "; raise gamma";
}

void check_args(double gamma, std::size_t k) {
  if (!(gamma > 0.0)) throw InputError("gamma must be positive");
  if (k < 1) throw InputError("reference count k must be >= 1");
}

}  // namespace

ReferenceLibrary build_library(const Encoder& model, const Corpus& corpus, double gamma,
                               std::size_t k) {
  check_args(gamma, k);
  const std::size_t classes = model.config().classes;
  const auto probs = train_probabilities(model, corpus);

  ReferenceLibrary lib;
  lib.gamma = gamma;
  lib.k = k;
  lib.model_fingerprint = model.fingerprint();
  lib.per_class.resize(classes);
  for (ClassId c = 0; c < classes; ++c) {
    std::vector<std::size_t> qualifying;
    for (std::size_t i = 0; i < probs.size(); ++i)
      if (probs[i][c] < gamma) qualifying.push_back(i);
    if (qualifying.empty()) {
      throw LibraryError(no_reference_message(gamma, c));
    }
    std::stable_sort(qualifying.begin(), qualifying.end(),
                     [&](std::size_t a, std::size_t b) { return probs[a][c] < probs[b][c]; });
    if (qualifying.size() < k) {
      lib.warnings.push_back("class " + std::to_string(c) + ": only " +
                             std::to_string(qualifying.size()) + " of " + std::to_string(k) +
                             " references qualify");
    }
    qualifying.resize(std::min(qualifying.size(), k));
    auto& entries = lib.per_class[c];
    entries.resize(qualifying.size());
    parallel_for(qualifying.size(), [&](std::size_t j) {
      const std::size_t src = qualifying[j];
      entries[j] = make_entry(corpus.train[src], model.forward(corpus.train[src]), c, src);
    });
  }
  return lib;
}

std::size_t aligned_position(std::size_t reference_length, std::size_t position) {
  if (position < reference_length) return position;
  if (reference_length <= 1) return 0;
  return 1 + (position - 1) % (reference_length - 1);
}

std::vector<nk::Matrix> reference_for(const ReferenceEntry& entry, std::size_t length) {
  const std::size_t tr = entry.length();
  std::vector<nk::Matrix> out;
  out.reserve(entry.activations.size());
  for (const auto& a : entry.activations) {
    if (tr == length) {
      out.push_back(a);
      continue;
    }
    nk::Matrix r(length, a.cols());
    for (std::size_t i = 0; i < length; ++i) {
      const auto src = a.row(aligned_position(tr, i));
      std::copy(src.begin(), src.end(), r.row(i).begin());
    }
    out.push_back(std::move(r));
  }
  return out;
}

namespace {
constexpr char kMagic[8] = {'C', 'C', 'A', 'T', 'R', 'L', 'I', 'B'};
constexpr std::uint64_t kNoLabel = ~0ULL;
}  // namespace

std::vector<std::uint8_t> serialize_library(const ReferenceLibrary& lib) {
  ByteWriter w;
  w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), sizeof(kMagic)));
  w.u32(kLibraryFormatVersion);
  w.f64(lib.gamma);
  w.u64(lib.k);
  w.u64(lib.model_fingerprint);
  const std::uint8_t sel = static_cast<std::uint8_t>(lib.selection);
  w.bytes(std::span(&sel, 1));
  w.u64(lib.per_class.size());
  for (const auto& entries : lib.per_class) {
    w.u64(entries.size());
    for (const auto& e : entries) {
      w.f64(e.score);
      w.u64(e.source_index);
      w.str(e.tokens.text);
      w.u64(e.tokens.label ? *e.tokens.label : kNoLabel);
      w.u64(e.tokens.ids.size());
      for (TokenId id : e.tokens.ids) w.u32(id);
      w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(e.tokens.kinds.data()),
                        e.tokens.kinds.size()));
      w.u64(e.activations.size());
      for (const auto& a : e.activations) w.matrix(a);
    }
  }
  return w.take();
}

ReferenceLibrary deserialize_library(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "reference library");
  if (std::memcmp(r.bytes(sizeof(kMagic)).data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("reference library: bad magic bytes");
  }
  const std::uint32_t version = r.u32();
  if (version != kLibraryFormatVersion) {
    throw FormatError("reference library: unsupported format version " + std::to_string(version));
  }
  ReferenceLibrary lib;
  lib.gamma = r.f64();
  lib.k = r.u64();
  lib.model_fingerprint = r.u64();
  const std::uint8_t sel = r.bytes(1)[0];
  if (sel > static_cast<std::uint8_t>(ReferenceSelection::kSame)) {
    throw FormatError("reference library: unknown selection tag");
  }
  lib.selection = static_cast<ReferenceSelection>(sel);
  // Counts are bounded by the bytes left so corrupt headers cannot force huge allocations.
  const auto count = [&](std::size_t min_bytes_each) {
    const std::uint64_t n = r.u64();
    if (n > bytes.size() / std::max<std::size_t>(min_bytes_each, 1)) {
      throw FormatError("reference library: implausible count " + std::to_string(n));
    }
    return static_cast<std::size_t>(n);
  };
  lib.per_class.resize(count(8));
  for (auto& entries : lib.per_class) {
    entries.resize(count(8));
    for (auto& e : entries) {
      e.score = r.f64();
      e.source_index = r.u64();
      e.tokens.text = r.str();
      const std::uint64_t label = r.u64();
      if (label != kNoLabel) e.tokens.label = label;
      const std::size_t n = count(5);
      e.tokens.ids.resize(n);
      for (auto& id : e.tokens.ids) id = r.u32();
      const auto kinds = r.bytes(n);
      e.tokens.kinds.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        if (kinds[i] > static_cast<std::uint8_t>(TokenKind::kOrdinary)) {
          throw FormatError("reference library: bad token kind");
        }
        e.tokens.kinds[i] = static_cast<TokenKind>(kinds[i]);
      }
      e.activations.resize(count(16));
      for (auto& a : e.activations) a = r.matrix();
    }
  }
  if (!r.at_end()) throw FormatError("reference library: trailing bytes");
  return lib;
}

void save_library(const ReferenceLibrary& lib, const std::string& path) {
  write_file(path, serialize_library(lib));
}

ReferenceLibrary load_library(const std::string& path, const Encoder& model) {
  ReferenceLibrary lib = deserialize_library(read_file(path));
  const std::uint64_t fp = model.fingerprint();
  if (lib.model_fingerprint != fp) {
    throw CompatibilityError("reference library '" + path + "' was built for model " +
                             to_hex(lib.model_fingerprint) + ", not " + to_hex(fp));
  }
  for (const auto& entries : lib.per_class) {
    for (const auto& e : entries) {
      if (e.activations.size() != model.config().layers) {
        throw CompatibilityError("reference library layer count does not match model");
      }
      for (const auto& a : e.activations) {
        if (a.cols() != model.config().model_dim) {
          throw CompatibilityError("reference library activation width does not match model");
        }
      }
    }
  }
  return lib;
}

std::vector<ReferenceEntry> sample_references_online(const Encoder& model, const Corpus& corpus,
                                                     ClassId c, double gamma, std::size_t k,
                                                     std::uint64_t seed) {
  check_args(gamma, k);
  if (c >= model.config().classes) throw InputError("class id out of range");
  std::vector<ReferenceEntry> picks;
  for (std::size_t src : permutation(corpus.train.size(), seed)) {
    ForwardTrace trace = model.forward(corpus.train[src]);
    if (trace.probs[c] < gamma) {
      picks.push_back(make_entry(corpus.train[src], std::move(trace), c, src));
      if (picks.size() == k) break;
    }
  }
  if (picks.empty()) {
    throw LibraryError(no_reference_message(gamma, c));
  }
  return picks;
}

ReferenceLibrary sample_library_online(const Encoder& model, const Corpus& corpus, double gamma,
                                       std::size_t k, std::uint64_t seed) {
  ReferenceLibrary lib;
  lib.gamma = gamma;
  lib.k = k;
  lib.model_fingerprint = model.fingerprint();
  lib.per_class.resize(model.config().classes);
  for (ClassId c = 0; c < lib.per_class.size(); ++c)
    lib.per_class[c] = sample_references_online(model, corpus, c, gamma, k, seed + c);
  return lib;
}

ReferenceLibrary build_reference_pool(const Encoder& model, const Corpus& corpus,
                                      ReferenceSelection selection, double gamma, std::size_t k,
                                      std::uint64_t seed) {
  if (selection == ReferenceSelection::kContrasting) return build_library(model, corpus, gamma, k);
  check_args(gamma, k);
  const std::size_t classes = model.config().classes;
  const auto probs = train_probabilities(model, corpus);
  ReferenceLibrary lib;
  lib.gamma = gamma;
  lib.k = k;
  lib.model_fingerprint = model.fingerprint();
  lib.selection = selection;
  lib.per_class.resize(classes);
  for (ClassId c = 0; c < classes; ++c) {
    std::vector<std::size_t> chosen;
    for (std::size_t src : permutation(corpus.train.size(), seed + c)) {
      const auto& p = probs[src];
      const bool keep =
          selection == ReferenceSelection::kRandom ||
          static_cast<ClassId>(std::max_element(p.begin(), p.end()) - p.begin()) == c;
      if (keep) chosen.push_back(src);
      if (chosen.size() == k) break;
    }
    if (chosen.empty()) {
      throw LibraryError("no training sequence is predicted as class " + std::to_string(c));
    }
    auto& entries = lib.per_class[c];
    entries.resize(chosen.size());
    parallel_for(chosen.size(), [&](std::size_t j) {
      entries[j] = make_entry(corpus.train[chosen[j]], model.forward(corpus.train[chosen[j]]), c,
                              chosen[j]);
    });
  }
  return lib;
}

}  // namespace ccat
