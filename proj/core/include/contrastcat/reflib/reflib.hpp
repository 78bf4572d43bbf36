#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "contrastcat/corpus/corpus.hpp"
#include "contrastcat/encoder/encoder.hpp"

namespace ccat {

/// A cached reference: a training sequence whose probability for the owning
/// target class is below gamma, with its full activation stack.
struct ReferenceEntry {
  TokenSequence tokens;
  std::vector<nk::Matrix> activations;  // [layer] T_r×n over the reference's active prefix
  double score = 0.0;                   // prob_c(r) for the target class the entry serves
  std::size_t source_index = 0;         // index into the training split

  std::size_t length() const noexcept {
    return activations.empty() ? 0 : activations.front().rows();
  }
};

/// How a set of references was chosen. Only kContrasting carries the
/// prob_c(r) < gamma guarantee; the other two exist for ablations.
enum class ReferenceSelection : std::uint8_t { kContrasting, kRandom, kSame };

/// Per-target-class references. entries(c) serves attributions for class c:
/// every entry there has prob_c(r) < gamma, so the references come from the
/// other classes.
struct ReferenceLibrary {
  double gamma = 1e-3;
  std::size_t k = 30;
  std::uint64_t model_fingerprint = 0;
  ReferenceSelection selection = ReferenceSelection::kContrasting;
  std::vector<std::vector<ReferenceEntry>> per_class;
  std::vector<std::string> warnings;

  const std::vector<ReferenceEntry>& entries(ClassId c) const;
  std::size_t total_entries() const;
  /// Copy keeping at most the first `count` entries of every class.
  ReferenceLibrary truncated(std::size_t count) const;
};

inline constexpr double kDefaultGamma = 1e-3;
inline constexpr std::size_t kDefaultReferencesPerClass = 30;

/// Scans the training split in order and keeps, per class, the k sequences
/// with the lowest prob_c below gamma (ties broken by training index).
/// Fewer than k qualifying adds a warning; none throws LibraryError naming
/// the class.
ReferenceLibrary build_library(const Encoder& model, const Corpus& corpus, double gamma,
                               std::size_t k);

/// Per-layer T×n reference activations aligned to an input of length T.
/// Positions beyond the reference are filled by cycling over the
/// reference's non-CLS span; CLS always maps to the reference CLS.
std::vector<nk::Matrix> reference_for(const ReferenceEntry& entry, std::size_t length);

/// Source row of the reference used for input position `position`.
std::size_t aligned_position(std::size_t reference_length, std::size_t position);

// File layout (little-endian): magic "CCATRLIB", u32 version, f64 gamma,
// u64 k, u64 model fingerprint, u8 selection, u64 classes, then per class a
// u64 entry count and per entry: f64 score, u64 source index, str text,
// u64 label (all ones when absent), u64 ids length, u32 ids, u8 kinds,
// u64 layer count, matrices.
inline constexpr std::uint32_t kLibraryFormatVersion = 1;

std::vector<std::uint8_t> serialize_library(const ReferenceLibrary& lib);
ReferenceLibrary deserialize_library(std::span<const std::uint8_t> bytes);
void save_library(const ReferenceLibrary& lib, const std::string& path);
/// Throws CompatibilityError when the stored fingerprint differs from
/// model.fingerprint().
ReferenceLibrary load_library(const std::string& path, const Encoder& model);

/// Constrained random sampling: walks a seeded permutation of the training
/// split, running the model on each candidate, until k sequences with
/// prob_c < gamma are found. Activations are recomputed for every pick.
std::vector<ReferenceEntry> sample_references_online(const Encoder& model, const Corpus& corpus,
                                                     ClassId c, double gamma, std::size_t k,
                                                     std::uint64_t seed);

/// Reference pools for the ablations. kRandom draws k training sequences
/// uniformly ignoring gamma; kSame draws k sequences predicted as the target
/// class; kContrasting is build_library.
ReferenceLibrary build_reference_pool(const Encoder& model, const Corpus& corpus,
                                      ReferenceSelection selection, double gamma, std::size_t k,
                                      std::uint64_t seed);

/// Pool where entries(c) holds up to k constrained-random picks for class c.
ReferenceLibrary sample_library_online(const Encoder& model, const Corpus& corpus, double gamma,
                                       std::size_t k, std::uint64_t seed);

}  // namespace ccat
