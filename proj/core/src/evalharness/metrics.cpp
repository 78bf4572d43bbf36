#include "contrastcat/evalharness/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "contrastcat/util/error.hpp"
#include "contrastcat/util/parallel.hpp"

namespace ccat {

std::string order_tag(Order o) { return o == Order::kMoRF ? "morf" : "lerf"; }
std::string metric_tag(Metric m) { return m == Metric::kAopc ? "aopc" : "lodds"; }

std::vector<double> default_k_grid() {
  std::vector<double> g;
  for (int k = 10; k <= 90; k += 10) g.push_back(k);
  return g;
}

std::size_t removal_count(std::size_t ordinary, double k_percent) {
  if (!(k_percent > 0.0 && k_percent < 100.0)) {
    throw InputError("k must lie in (0, 100), got " + std::to_string(k_percent));
  }
  // The small slack keeps exact products such as 30% of 10 from rounding up
  // past the integer they represent.
  const double raw = k_percent / 100.0 * static_cast<double>(ordinary);
  auto n = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::size_t>(n, 1, std::max<std::size_t>(ordinary, 1));
}

std::vector<std::size_t> removed_positions(const AttributionMap& map, double k_percent, Order o) {
  auto rank = map.ranking(o == Order::kMoRF);
  rank.resize(std::min(rank.size(), removal_count(rank.size(), k_percent)));
  return rank;
}

std::vector<SampleProbabilities> perturbation_probabilities(
    const Classifier& model, std::span<const TokenSequence> samples,
    std::span<const AttributionMap> maps, std::span<const ClassId> classes,
    std::span<const double> grid, Order order) {
  if (samples.size() != maps.size() || samples.size() != classes.size()) {
    throw InputError("samples, maps and classes must have equal length");
  }
  for (double k : grid) removal_count(1, k);
  std::vector<SampleProbabilities> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t s) {
    const auto& tokens = samples[s];
    const auto& map = maps[s];
    if (map.length() != tokens.active_length()) {
      throw InputError("map for sample " + std::to_string(s) + " covers " +
                       std::to_string(map.length()) + " positions, sample has " +
                       std::to_string(tokens.active_length()));
    }
    const ClassId c = classes[s];
    out[s].original = model.probabilities(tokens).at(c);
    const auto rank = map.ranking(order == Order::kMoRF);
    std::map<std::size_t, double> by_count;
    for (double k : grid) {
      const std::size_t n = std::min(rank.size(), removal_count(rank.size(), k));
      auto it = by_count.find(n);
      if (it == by_count.end()) {
        const std::vector<std::size_t> drop(rank.begin(),
                                            rank.begin() + static_cast<std::ptrdiff_t>(n));
        it = by_count.emplace(n, model.probabilities(replace_with_pad(tokens, drop)).at(c)).first;
      }
      out[s].perturbed.push_back(it->second);
    }
  });
  return out;
}

double aopc_at(std::span<const SampleProbabilities> probs, std::size_t g) {
  if (probs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : probs) sum += p.original - p.perturbed.at(g);
  return sum / static_cast<double>(probs.size());
}

double lodds_at(std::span<const SampleProbabilities> probs, std::size_t g) {
  if (probs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : probs) {
    sum += std::log(std::max(p.perturbed.at(g), kProbabilityFloor) /
                    std::max(p.original, kProbabilityFloor));
  }
  return sum / static_cast<double>(probs.size());
}

double aopc(const Classifier& model, std::span<const TokenSequence> samples,
            std::span<const AttributionMap> maps, std::span<const ClassId> classes,
            double k_percent, Order order) {
  const double grid[] = {k_percent};
  return aopc_at(perturbation_probabilities(model, samples, maps, classes, grid, order), 0);
}

double lodds(const Classifier& model, std::span<const TokenSequence> samples,
             std::span<const AttributionMap> maps, std::span<const ClassId> classes,
             double k_percent, Order order) {
  const double grid[] = {k_percent};
  return lodds_at(perturbation_probabilities(model, samples, maps, classes, grid, order), 0);
}

PerturbationCurve make_curve(Metric metric, Order order, std::span<const double> grid,
                             std::span<const SampleProbabilities> probs) {
  PerturbationCurve c;
  c.metric = metric;
  c.order = order;
  c.grid.assign(grid.begin(), grid.end());
  for (std::size_t g = 0; g < grid.size(); ++g)
    c.values.push_back(metric == Metric::kAopc ? aopc_at(probs, g) : lodds_at(probs, g));
  double sum = 0.0;
  for (double v : c.values) sum += v;
  c.auc = c.values.empty() ? 0.0 : sum / static_cast<double>(c.values.size());
  return c;
}

PerturbationCurve curve_and_auc(Metric metric, const Classifier& model,
                                std::span<const TokenSequence> samples,
                                std::span<const AttributionMap> maps,
                                std::span<const ClassId> classes, Order order,
                                std::span<const double> grid) {
  return make_curve(metric, order, grid,
                    perturbation_probabilities(model, samples, maps, classes, grid, order));
}

CurveSet evaluate_curves(const Classifier& model, std::span<const TokenSequence> samples,
                         std::span<const AttributionMap> maps, std::span<const ClassId> classes,
                         std::span<const double> grid) {
  const auto morf = perturbation_probabilities(model, samples, maps, classes, grid, Order::kMoRF);
  const auto lerf = perturbation_probabilities(model, samples, maps, classes, grid, Order::kLeRF);
  return {make_curve(Metric::kAopc, Order::kMoRF, grid, morf),
          make_curve(Metric::kAopc, Order::kLeRF, grid, lerf),
          make_curve(Metric::kLOdds, Order::kMoRF, grid, morf),
          make_curve(Metric::kLOdds, Order::kLeRF, grid, lerf)};
}

double kendall_tau(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.size() != b.size()) {
    throw InputError("kendall_tau: lengths differ (" + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + ")");
  }
  const std::size_t n = a.size();
  if (n < 2) throw InputError("kendall_tau needs at least two items");
  std::map<std::size_t, std::size_t> pos_b;
  for (std::size_t i = 0; i < n; ++i) pos_b[b[i]] = i;
  if (pos_b.size() != n) throw InputError("kendall_tau: second ordering repeats an item");
  std::vector<std::size_t> mapped(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto it = pos_b.find(a[i]);
    if (it == pos_b.end()) throw InputError("kendall_tau: orderings hold different items");
    mapped[i] = it->second;
  }
  long long concordant = 0;
  long long discordant = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (mapped[i] < mapped[j]) ++concordant;
      else ++discordant;
    }
  }
  return static_cast<double>(concordant - discordant) /
         (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

double confidence_test(const Classifier& model, std::span<const TokenSequence> samples,
                       const AttributionFn& attribute) {
  const std::size_t classes = model.num_classes();
  if (classes < 2) throw InputError("confidence test needs at least two classes");
  std::vector<double> tau(samples.size(), 0.0);
  std::vector<char> used(samples.size(), 0);
  parallel_for(samples.size(), [&](std::size_t s) {
    if (samples[s].ordinary_count() < 2) return;
    const auto p = model.probabilities(samples[s]);
    const auto c = static_cast<ClassId>(std::max_element(p.begin(), p.end()) - p.begin());
    const auto ra = attribute(samples[s], c).ranking(true);
    const auto rb = attribute(samples[s], (c + 1) % classes).ranking(true);
    tau[s] = kendall_tau(ra, rb);
    used[s] = 1;
  });
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (used[s]) {
      sum += tau[s];
      ++n;
    }
  }
  if (n == 0) throw InputError("confidence test: no sample has two ordinary tokens");
  return sum / static_cast<double>(n);
}

}  // namespace ccat
