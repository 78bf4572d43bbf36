#include "contrastcat/evalharness/ablation.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "contrastcat/util/error.hpp"
#include "contrastcat/util/parallel.hpp"

namespace ccat {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

CurveSet curves_for(const SweepContext& ctx, const AttributionFn& fn) {
  std::vector<AttributionMap> maps(ctx.samples.size());
  parallel_for(ctx.samples.size(),
               [&](std::size_t s) { maps[s] = fn(ctx.samples[s], ctx.classes[s]); });
  return evaluate_curves(*ctx.model, ctx.samples, maps, ctx.classes, ctx.grid);
}

}  // namespace

std::string threshold_tag(ThresholdRule r) {
  switch (r) {
    case ThresholdRule::kMeanMinusStd: return "mean-std";
    case ThresholdRule::kMean: return "mean";
    case ThresholdRule::kMeanPlusStd: break;
  }
  return "mean+std";
}

ThresholdRule parse_threshold(const std::string& s) {
  for (auto r : {ThresholdRule::kMeanMinusStd, ThresholdRule::kMean, ThresholdRule::kMeanPlusStd})
    if (threshold_tag(r) == s) return r;
  throw InputError("unknown threshold rule '" + s + "' (mean-std, mean, mean+std)");
}

std::string deletion_tag(DeletionMode m) {
  return m == DeletionMode::kCumulative ? "cumulative" : "individual";
}

DeletionMode parse_deletion(const std::string& s) {
  if (s == "cumulative") return DeletionMode::kCumulative;
  if (s == "individual") return DeletionMode::kIndividual;
  throw InputError("unknown deletion mode '" + s + "' (cumulative, individual)");
}

std::string selection_tag(ReferenceSelection s) {
  switch (s) {
    case ReferenceSelection::kRandom: return "random";
    case ReferenceSelection::kSame: return "same";
    case ReferenceSelection::kContrasting: break;
  }
  return "contrasting";
}

SweepContext make_sweep_context(const Encoder& model, const Corpus& corpus,
                                std::span<const std::size_t> sample_indices,
                                const RefinementConfig& refine, std::uint64_t seed) {
  SweepContext ctx;
  ctx.model = &model;
  ctx.corpus = &corpus;
  for (std::size_t i : sample_indices) {
    if (i >= corpus.test.size()) throw InputError("sample index outside the test split");
    ctx.samples.push_back(corpus.test[i]);
  }
  ctx.classes = predicted_classes(model, ctx.samples);
  ctx.refine = refine;
  ctx.seed = seed;
  return ctx;
}

SweepRow contrast_row(const SweepContext& ctx, const ReferenceLibrary* library,
                      const RefinementConfig& refine, std::string sweep, std::string setting) {
  const auto t0 = std::chrono::steady_clock::now();
  const Encoder& model = *ctx.model;
  AttributionFn fn;
  if (library) {
    fn = [&](const TokenSequence& t, ClassId c) {
      return refine_and_aggregate(model, t, c, *library, refine);
    };
  } else {
    fn = [&](const TokenSequence& t, ClassId c) {
      const Analysis an = model.analyze(t, c, refine.target);
      return cat_maps(an.trace, an.activation_grads,
                      averaged_attention(an.trace, refine.aggregation), refine.window)
          .second;
    };
  }
  SweepRow row;
  row.sweep = std::move(sweep);
  row.setting = std::move(setting);
  row.curves = curves_for(ctx, fn);
  row.seconds = seconds_since(t0);
  return row;
}

std::vector<SweepRow> sweep_gamma(const SweepContext& ctx, std::span<const double> gammas,
                                  std::size_t k) {
  std::vector<SweepRow> rows;
  for (double g : gammas) {
    const ReferenceLibrary pool = sample_library_online(*ctx.model, *ctx.corpus, g, k, ctx.seed);
    rows.push_back(contrast_row(ctx, &pool, ctx.refine, "gamma", format_number(g)));
  }
  return rows;
}

std::vector<SweepRow> sweep_layers(const SweepContext& ctx, const ReferenceLibrary& library) {
  const std::size_t layers = ctx.model->config().layers;
  std::vector<SweepRow> rows;
  for (std::size_t used = std::min<std::size_t>(2, layers); used <= layers; ++used) {
    RefinementConfig cfg = ctx.refine;
    cfg.window.first_layer = layers - used + 1;
    rows.push_back(contrast_row(ctx, &library, cfg, "layers", std::to_string(used)));
  }
  return rows;
}

std::vector<SweepRow> sweep_reference_counts(const SweepContext& ctx,
                                             const ReferenceLibrary& library,
                                             std::span<const std::size_t> counts) {
  std::vector<SweepRow> rows;
  for (std::size_t n : counts) {
    if (n == 0) {
      rows.push_back(contrast_row(ctx, nullptr, ctx.refine, "references", "0"));
      continue;
    }
    const ReferenceLibrary lib = library.truncated(n);
    rows.push_back(contrast_row(ctx, &lib, ctx.refine, "references", std::to_string(n)));
  }
  return rows;
}

std::vector<SweepRow> sweep_threshold_rules(const SweepContext& ctx,
                                            const ReferenceLibrary& library) {
  std::vector<SweepRow> rows;
  for (auto r :
       {ThresholdRule::kMeanMinusStd, ThresholdRule::kMean, ThresholdRule::kMeanPlusStd}) {
    RefinementConfig cfg = ctx.refine;
    cfg.rule = r;
    rows.push_back(contrast_row(ctx, &library, cfg, "threshold", threshold_tag(r)));
  }
  return rows;
}

std::vector<SweepRow> sweep_reference_modes(const SweepContext& ctx, double gamma, std::size_t k) {
  std::vector<SweepRow> rows;
  for (auto sel :
       {ReferenceSelection::kRandom, ReferenceSelection::kSame, ReferenceSelection::kContrasting}) {
    const ReferenceLibrary pool =
        build_reference_pool(*ctx.model, *ctx.corpus, sel, gamma, k, ctx.seed);
    rows.push_back(contrast_row(ctx, &pool, ctx.refine, "mode", selection_tag(sel)));
  }
  return rows;
}

std::vector<SweepRow> sweep_deletion_modes(const SweepContext& ctx,
                                           const ReferenceLibrary& library) {
  std::vector<SweepRow> rows;
  for (auto m : {DeletionMode::kCumulative, DeletionMode::kIndividual}) {
    RefinementConfig cfg = ctx.refine;
    cfg.mode = m;
    rows.push_back(contrast_row(ctx, &library, cfg, "deletion", deletion_tag(m)));
  }
  return rows;
}

LibraryComparison compare_library_online(const SweepContext& ctx,
                                         const ReferenceLibrary& library) {
  const Encoder& model = *ctx.model;
  LibraryComparison out;
  auto t0 = std::chrono::steady_clock::now();
  out.library_curves = curves_for(ctx, [&](const TokenSequence& t, ClassId c) {
    return refine_and_aggregate(model, t, c, library, ctx.refine);
  });
  out.library_seconds = seconds_since(t0);

  // Each input draws its own references, seeded by its position in the sample list.
  std::vector<AttributionMap> maps(ctx.samples.size());
  t0 = std::chrono::steady_clock::now();
  parallel_for(ctx.samples.size(), [&](std::size_t s) {
    const auto refs = sample_references_online(model, *ctx.corpus, ctx.classes[s], library.gamma,
                                               library.k, ctx.seed + s);
    maps[s] = refine(model, ctx.samples[s], ctx.classes[s], refs, ctx.refine).map;
  });
  out.online_curves = evaluate_curves(model, ctx.samples, maps, ctx.classes, ctx.grid);
  out.online_seconds = seconds_since(t0);
  return out;
}

void write_sweep_csv(std::span<const SweepRow> rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << "sweep,setting,aopc_morf,aopc_lerf,lodds_morf,lodds_lerf,abs_lodds_morf,"
         "abs_lodds_lerf\n";
  for (const auto& r : rows) {
    const auto& c = r.curves;
    out << r.sweep << ',' << r.setting << ',' << format_number(c.aopc_morf.auc) << ','
        << format_number(c.aopc_lerf.auc) << ',' << format_number(c.lodds_morf.auc) << ','
        << format_number(c.lodds_lerf.auc) << ',' << format_number(std::abs(c.lodds_morf.auc))
        << ',' << format_number(std::abs(c.lodds_lerf.auc)) << '\n';
  }
}

}  // namespace ccat
