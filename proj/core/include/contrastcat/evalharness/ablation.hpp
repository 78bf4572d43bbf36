#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "contrastcat/evalharness/evaluate.hpp"

namespace ccat {

/// One line of a sweep table. Values are AUCs over the k grid.
struct SweepRow {
  std::string sweep;
  std::string setting;
  CurveSet curves;
  double seconds = 0.0;
};

struct SweepContext {
  const Encoder* model = nullptr;
  const Corpus* corpus = nullptr;
  std::vector<TokenSequence> samples;
  std::vector<ClassId> classes;  // predicted class per sample
  RefinementConfig refine;
  std::vector<double> grid = default_k_grid();
  std::uint64_t seed = 0;
};

/// Gathers test-split samples and their predicted classes.
SweepContext make_sweep_context(const Encoder& model, const Corpus& corpus,
                                std::span<const std::size_t> sample_indices,
                                const RefinementConfig& refine, std::uint64_t seed);

/// Contrast-CAT curves against `library`, or AttCAT when library is null
/// (the zero-reference case).
SweepRow contrast_row(const SweepContext& ctx, const ReferenceLibrary* library,
                      const RefinementConfig& refine, std::string sweep, std::string setting);

/// Per gamma, a constrained-random pool of k references per class seeded
/// from ctx.seed.
std::vector<SweepRow> sweep_gamma(const SweepContext& ctx, std::span<const double> gammas,
                                  std::size_t k);

/// Windows ending at the final layer, from the last two layers up to all.
/// Setting is the number of layers used.
std::vector<SweepRow> sweep_layers(const SweepContext& ctx, const ReferenceLibrary& library);

/// Prefixes of the library. Count 0 is AttCAT.
std::vector<SweepRow> sweep_reference_counts(const SweepContext& ctx,
                                             const ReferenceLibrary& library,
                                             std::span<const std::size_t> counts);

std::vector<SweepRow> sweep_threshold_rules(const SweepContext& ctx,
                                            const ReferenceLibrary& library);

/// random / same / contrasting pools of size k, built once from ctx.seed.
std::vector<SweepRow> sweep_reference_modes(const SweepContext& ctx, double gamma, std::size_t k);

std::vector<SweepRow> sweep_deletion_modes(const SweepContext& ctx,
                                           const ReferenceLibrary& library);

/// Prebuilt library against per-input constrained-random sampling.
struct LibraryComparison {
  double library_seconds = 0.0;
  double online_seconds = 0.0;
  CurveSet library_curves;
  CurveSet online_curves;
};

LibraryComparison compare_library_online(const SweepContext& ctx, const ReferenceLibrary& library);

std::string threshold_tag(ThresholdRule r);    // "mean-std", "mean", "mean+std"
ThresholdRule parse_threshold(const std::string& s);
std::string deletion_tag(DeletionMode m);      // "cumulative", "individual"
DeletionMode parse_deletion(const std::string& s);
std::string selection_tag(ReferenceSelection s);  // "random", "same", "contrasting"

/// sweep,setting,aopc_morf,aopc_lerf,lodds_morf,lodds_lerf,abs_lodds_morf,abs_lodds_lerf
void write_sweep_csv(std::span<const SweepRow> rows, const std::string& path);

}  // namespace ccat
