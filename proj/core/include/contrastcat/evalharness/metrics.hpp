#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "contrastcat/attribution/attribution.hpp"

namespace ccat {

/// MoRF removes the highest-scored tokens first, LeRF the lowest.
enum class Order { kMoRF, kLeRF };
enum class Metric { kAopc, kLOdds };

std::string order_tag(Order o);    // "morf" / "lerf"
std::string metric_tag(Metric m);  // "aopc" / "lodds"

inline constexpr double kProbabilityFloor = 1e-12;

/// {10, 20, ..., 90}.
std::vector<double> default_k_grid();

/// ceil(k% of ordinary), at least 1, at most ordinary.
std::size_t removal_count(std::size_t ordinary, double k_percent);

/// Positions replaced by PAD at k% under the given order.
std::vector<std::size_t> removed_positions(const AttributionMap& map, double k_percent, Order o);

/// Original and perturbed probability of the evaluated class for one sample
/// at every grid point.
struct SampleProbabilities {
  double original = 0.0;
  std::vector<double> perturbed;
};

/// Parallel over samples. Grid points with the same removal count share one
/// forward pass. Throws InputError when the spans disagree in length, a k
/// lies outside (0, 100), or a map does not cover its sample.
std::vector<SampleProbabilities> perturbation_probabilities(
    const Classifier& model, std::span<const TokenSequence> samples,
    std::span<const AttributionMap> maps, std::span<const ClassId> classes,
    std::span<const double> grid, Order order);

/// mean(y - y~) and mean(log(max(y~, floor) / max(y, floor))) at grid index g.
double aopc_at(std::span<const SampleProbabilities> probs, std::size_t g);
double lodds_at(std::span<const SampleProbabilities> probs, std::size_t g);

double aopc(const Classifier& model, std::span<const TokenSequence> samples,
            std::span<const AttributionMap> maps, std::span<const ClassId> classes,
            double k_percent, Order order);
double lodds(const Classifier& model, std::span<const TokenSequence> samples,
             std::span<const AttributionMap> maps, std::span<const ClassId> classes,
             double k_percent, Order order);

struct PerturbationCurve {
  Metric metric = Metric::kAopc;
  Order order = Order::kMoRF;
  std::vector<double> grid;
  std::vector<double> values;
  double auc = 0.0;  // arithmetic mean of values
};

PerturbationCurve make_curve(Metric metric, Order order, std::span<const double> grid,
                             std::span<const SampleProbabilities> probs);

PerturbationCurve curve_and_auc(Metric metric, const Classifier& model,
                                std::span<const TokenSequence> samples,
                                std::span<const AttributionMap> maps,
                                std::span<const ClassId> classes, Order order,
                                std::span<const double> grid = default_k_grid());

/// AOPC MoRF, AOPC LeRF, LOdds MoRF, LOdds LeRF from two sweeps of forward
/// passes.
struct CurveSet {
  PerturbationCurve aopc_morf, aopc_lerf, lodds_morf, lodds_lerf;
};

CurveSet evaluate_curves(const Classifier& model, std::span<const TokenSequence> samples,
                         std::span<const AttributionMap> maps, std::span<const ClassId> classes,
                         std::span<const double> grid = default_k_grid());

/// (concordant - discordant) / (n(n-1)/2) over item pairs of two orderings
/// of the same items. Throws InputError on length mismatch, n < 2, or when
/// the two are not permutations of one set.
double kendall_tau(std::span<const std::size_t> a, std::span<const std::size_t> b);

using AttributionFn = std::function<AttributionMap(const TokenSequence&, ClassId)>;

/// Mean Kendall tau between the descending rankings for the predicted class
/// c and for (c + 1) mod C. Samples with fewer than two ordinary tokens are
/// skipped; throws InputError when none remain.
double confidence_test(const Classifier& model, std::span<const TokenSequence> samples,
                       const AttributionFn& attribute);

}  // namespace ccat
