#include "contrastcat/refine/refine.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "contrastcat/util/error.hpp"
#include "contrastcat/util/parallel.hpp"

namespace ccat {

void RefinementConfig::validate() const {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InputError("deletion fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
}

std::size_t deletion_steps(std::size_t ordinary, double fraction) {
  const auto s = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ordinary)));
  return std::max<std::size_t>(1, std::min(s, ordinary));
}

namespace {

// Removal set for every step, sorted ascending so equal sets compare equal.
std::vector<std::vector<std::size_t>> removal_sets(const AttributionMap& map, std::size_t steps,
                                                   DeletionMode mode) {
  const auto rank = map.ranking(true);
  std::vector<std::vector<std::size_t>> sets;
  for (std::size_t s = 1; s <= steps; ++s) {
    std::vector<std::size_t> set;
    if (mode == DeletionMode::kCumulative) {
      set.assign(rank.begin(), rank.begin() + static_cast<std::ptrdiff_t>(s));
    } else {
      set.push_back(rank[s - 1]);
    }
    std::sort(set.begin(), set.end());
    sets.push_back(std::move(set));
  }
  return sets;
}

std::size_t check_map(const TokenSequence& tokens, const AttributionMap& map) {
  const std::size_t ordinary = tokens.ordinary_count();
  if (ordinary == 0) throw InputError("deletion test needs at least one ordinary token");
  if (map.length() != tokens.active_length()) {
    throw InputError("attribution map covers " + std::to_string(map.length()) +
                     " positions, input has " + std::to_string(tokens.active_length()));
  }
  return ordinary;
}

DropScore assemble(double base, const std::vector<double>& perturbed) {
  DropScore d;
  for (double p : perturbed) d.drops.push_back(base - p);
  double sum = 0.0;
  for (double v : d.drops) sum += v;
  d.mean = sum / static_cast<double>(d.drops.size());
  return d;
}

}  // namespace

DropScore deletion_score(const Classifier& model, const TokenSequence& tokens,
                         const AttributionMap& map, ClassId c, double fraction,
                         DeletionMode mode) {
  RefinementConfig cfg;
  cfg.fraction = fraction;
  cfg.validate();
  const std::size_t ordinary = check_map(tokens, map);
  const double base = model.probabilities(tokens).at(c);
  std::vector<double> perturbed;
  for (const auto& set : removal_sets(map, deletion_steps(ordinary, fraction), mode))
    perturbed.push_back(model.probabilities(replace_with_pad(tokens, set)).at(c));
  return assemble(base, perturbed);
}

double drop_threshold(std::span<const double> scores, ThresholdRule rule) {
  if (scores.empty()) throw InputError("threshold of an empty score set");
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(scores.size());
  double var = 0.0;
  for (double s : scores) var += (s - mean) * (s - mean);
  const double sd = std::sqrt(var / static_cast<double>(scores.size()));
  switch (rule) {
    case ThresholdRule::kMeanMinusStd: return mean - sd;
    case ThresholdRule::kMean: return mean;
    case ThresholdRule::kMeanPlusStd: break;
  }
  return mean + sd;
}

RefinementResult refine(const Encoder& model, const TokenSequence& tokens, ClassId c,
                        std::span<const ReferenceEntry> references,
                        const RefinementConfig& config) {
  config.validate();
  if (references.empty()) {
    throw LibraryError("no contrastive references for class " + std::to_string(c));
  }
  const Analysis an = model.analyze(tokens, c, config.target);
  const AveragedAttention abar = averaged_attention(an.trace, config.aggregation);
  const std::size_t length = an.trace.length();

  RefinementResult out;
  out.candidates.reserve(references.size());
  for (std::size_t r = 0; r < references.size(); ++r) {
    const auto ref = reference_for(references[r], length);
    AttributionMap m = contrast_map(an.trace, an.activation_grads, ref, abar, config.window);
    m.reference_id = r;
    out.candidates.push_back(std::move(m));
  }

  // Many maps share their top-ranked prefix, so each distinct removal set is
  // evaluated once.
  const std::size_t ordinary = check_map(tokens, out.candidates.front());
  const std::size_t steps = deletion_steps(ordinary, config.fraction);
  std::vector<std::vector<std::vector<std::size_t>>> sets;
  std::map<std::vector<std::size_t>, std::size_t> slot;
  std::vector<const std::vector<std::size_t>*> unique;
  for (const auto& m : out.candidates) {
    sets.push_back(removal_sets(m, steps, config.mode));
    for (const auto& s : sets.back()) {
      auto [it, fresh] = slot.emplace(s, unique.size());
      if (fresh) unique.push_back(&it->first);
    }
  }
  std::vector<double> prob(unique.size());
  parallel_for(unique.size(), [&](std::size_t u) {
    prob[u] = model.probabilities(replace_with_pad(tokens, *unique[u])).at(c);
  });

  const double base = an.trace.probs.at(c);
  for (const auto& per_map : sets) {
    std::vector<double> perturbed;
    for (const auto& s : per_map) perturbed.push_back(prob[slot.at(s)]);
    out.drop_means.push_back(assemble(base, perturbed).mean);
  }

  out.rho = drop_threshold(out.drop_means, config.rule);
  for (std::size_t i = 0; i < out.candidates.size(); ++i)
    if (out.drop_means[i] >= out.rho) out.members.push_back(i);

  if (out.members.empty()) {
    // mean + std exceeds the maximum when S is left-skewed; first maximum wins.
    const auto best = static_cast<std::size_t>(
        std::max_element(out.drop_means.begin(), out.drop_means.end()) - out.drop_means.begin());
    out.map = out.candidates[best];
    out.fallback = true;
    return out;
  }
  out.map = out.candidates[out.members.front()];
  std::fill(out.map.scores.begin(), out.map.scores.end(), 0.0);
  for (std::size_t i : out.members)
    for (std::size_t p = 0; p < length; ++p) out.map.scores[p] += out.candidates[i].scores[p];
  for (double& v : out.map.scores) v /= static_cast<double>(out.members.size());
  out.map.reference_id.reset();
  if (out.members.size() == 1) out.map.reference_id = out.members.front();
  return out;
}

AttributionMap refine_and_aggregate(const Encoder& model, const TokenSequence& tokens, ClassId c,
                                    const ReferenceLibrary& library,
                                    const RefinementConfig& config) {
  return refine(model, tokens, c, library.entries(c), config).map;
}

AttributionMap ablation_variant(const Encoder& model, const TokenSequence& tokens, ClassId c,
                                const Corpus& corpus, ReferenceSelection selection,
                                std::uint64_t seed, const RefinementConfig& config, double gamma,
                                std::size_t k) {
  const ReferenceLibrary pool = build_reference_pool(model, corpus, selection, gamma, k, seed);
  return refine_and_aggregate(model, tokens, c, pool, config);
}

}  // namespace ccat
