#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "contrastcat/attribution/attribution.hpp"
#include "contrastcat/reflib/reflib.hpp"

namespace ccat {

/// kCumulative: step s removes the top-s tokens together.
/// kIndividual: step s removes only the s-th ranked token.
/// Both always perturb the original input.
enum class DeletionMode { kCumulative, kIndividual };

enum class ThresholdRule { kMeanMinusStd, kMean, kMeanPlusStd };

struct DropScore {
  std::vector<double> drops;  // prob_c(original) - prob_c(perturbed), one per step
  double mean = 0.0;

  std::size_t steps() const noexcept { return drops.size(); }
};

struct RefinementConfig {
  double fraction = 0.2;  // of ordinary tokens, in (0, 1]
  ThresholdRule rule = ThresholdRule::kMeanPlusStd;
  DeletionMode mode = DeletionMode::kCumulative;
  AttentionAggregation aggregation = AttentionAggregation::kColumnMean;
  LayerWindow window;
  GradientTarget target = GradientTarget::kLogit;

  /// Throws InputError when fraction is outside (0, 1].
  void validate() const;
};

/// max(1, ceil(fraction * ordinary)).
std::size_t deletion_steps(std::size_t ordinary, double fraction);

/// Throws InputError when tokens has no ordinary position or the map does
/// not cover the active prefix.
DropScore deletion_score(const Classifier& model, const TokenSequence& tokens,
                         const AttributionMap& map, ClassId c, double fraction,
                         DeletionMode mode = DeletionMode::kCumulative);

/// Population statistics of scores; rule picks mean - std, mean or mean + std.
double drop_threshold(std::span<const double> scores, ThresholdRule rule);

struct RefinementResult {
  AttributionMap map;
  std::vector<AttributionMap> candidates;  // D, one per reference, in reference order
  std::vector<double> drop_means;          // S per candidate
  double rho = 0.0;
  std::vector<std::size_t> members;  // indices into candidates with S >= rho
  bool fallback = false;             // M was empty; map is the best single candidate
};

/// Full multi-reference pipeline against an explicit reference list. Throws
/// LibraryError when references is empty.
RefinementResult refine(const Encoder& model, const TokenSequence& tokens, ClassId c,
                        std::span<const ReferenceEntry> references,
                        const RefinementConfig& config = {});

/// refine() against library.entries(c), returning only the aggregated map.
AttributionMap refine_and_aggregate(const Encoder& model, const TokenSequence& tokens, ClassId c,
                                    const ReferenceLibrary& library,
                                    const RefinementConfig& config = {});

/// Builds a pool of the given selection (seeded) and refines against it.
/// kContrasting is refine_and_aggregate over a freshly built library. Sweeps
/// should build the pool once with build_reference_pool instead.
AttributionMap ablation_variant(const Encoder& model, const TokenSequence& tokens, ClassId c,
                                const Corpus& corpus, ReferenceSelection selection,
                                std::uint64_t seed, const RefinementConfig& config = {},
                                double gamma = kDefaultGamma,
                                std::size_t k = kDefaultReferencesPerClass);

}  // namespace ccat
