#include "contrastcat/evalharness/evaluate.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <cmath>

#include <json.hpp>

#include "contrastcat/util/error.hpp"
#include "contrastcat/util/hash.hpp"
#include "contrastcat/util/parallel.hpp"

namespace ccat {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<TokenSequence> gather(const Corpus& corpus, std::span<const std::size_t> indices) {
  std::vector<TokenSequence> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= corpus.test.size()) {
      throw InputError("sample index " + std::to_string(i) + " outside the test split");
    }
    out.push_back(corpus.test[i]);
  }
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  return out;
}

}  // namespace

AttributionFn make_attributor(const Encoder& model, Method method,
                              const ReferenceLibrary* library, const RefinementConfig& config) {
  if (method == Method::kContrastCat) {
    if (library == nullptr) throw LibraryError("contrast-cat needs a reference library");
    return [&model, library, config](const TokenSequence& t, ClassId c) {
      return refine_and_aggregate(model, t, c, *library, config);
    };
  }
  return [&model, method, target = config.target](const TokenSequence& t, ClassId c) {
    return baseline_map(model, t, c, method, target);
  };
}

std::vector<ClassId> predicted_classes(const Classifier& model,
                                       std::span<const TokenSequence> samples) {
  std::vector<ClassId> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t s) {
    const auto p = model.probabilities(samples[s]);
    out[s] = static_cast<ClassId>(std::max_element(p.begin(), p.end()) - p.begin());
  });
  return out;
}

std::vector<AttributionMap> attribute_predicted(const Encoder& model,
                                                std::span<const TokenSequence> samples,
                                                const AttributionFn& attribute,
                                                std::vector<ClassId>& classes) {
  classes = predicted_classes(model, samples);
  std::vector<AttributionMap> maps(samples.size());
  parallel_for(samples.size(), [&](std::size_t s) { maps[s] = attribute(samples[s], classes[s]); });
  return maps;
}

EvalReport evaluate(const Encoder& model, const Corpus& corpus,
                    std::span<const std::size_t> sample_indices, const ReferenceLibrary* library,
                    const EvalOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto samples = gather(corpus, sample_indices);
  EvalReport report;
  report.sample_indices.assign(sample_indices.begin(), sample_indices.end());
  report.model_fingerprint = model.fingerprint();
  report.corpus_fingerprint = corpus.fingerprint();
  if (library) report.warnings = library->warnings;
  for (Method m : options.methods) {
    const auto tm = std::chrono::steady_clock::now();
    std::vector<ClassId> classes;
    const auto maps =
        attribute_predicted(model, samples, make_attributor(model, m, library, options.refine),
                            classes);
    MethodReport r;
    r.name = method_tag(m);
    r.curves = evaluate_curves(model, samples, maps, classes, options.grid);
    r.seconds = seconds_since(tm);
    if (options.keep_maps) r.maps = maps;
    report.methods.push_back(std::move(r));
  }
  report.seconds = seconds_since(t0);
  return report;
}

EvalReport evaluate_maps(const Encoder& model, const Corpus& corpus,
                         std::span<const AttributionRecord> records,
                         std::span<const double> grid) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> order;
  std::map<std::string, std::map<std::size_t, const AttributionRecord*>> by_method;
  for (const auto& r : records) {
    const std::string tag = method_tag(r.map.method);
    if (!by_method.count(tag)) order.push_back(tag);
    if (!by_method[tag].emplace(r.sample, &r).second) {
      throw InputError("duplicate map for sample " + std::to_string(r.sample) + " under " + tag);
    }
  }
  if (order.empty()) throw InputError("no attribution records to evaluate");
  std::vector<std::size_t> indices;
  for (const auto& [idx, rec] : by_method[order.front()]) indices.push_back(idx);
  const auto samples = gather(corpus, indices);

  EvalReport report;
  report.sample_indices = indices;
  report.model_fingerprint = model.fingerprint();
  report.corpus_fingerprint = corpus.fingerprint();
  for (const auto& tag : order) {
    const auto tm = std::chrono::steady_clock::now();
    const auto& recs = by_method[tag];
    std::vector<std::size_t> these;
    for (const auto& [idx, rec] : recs) these.push_back(idx);
    if (these != indices) {
      throw InputError("method " + tag + " does not cover the same samples as " + order.front());
    }
    std::vector<AttributionMap> maps;
    std::vector<ClassId> classes;
    for (std::size_t s = 0; s < indices.size(); ++s) {
      const AttributionMap& m = recs.at(indices[s])->map;
      const auto& seq = samples[s];
      if (m.length() != seq.active_length() ||
          !std::equal(m.kinds.begin(), m.kinds.end(), seq.kinds.begin())) {
        throw InputError("map for sample " + std::to_string(indices[s]) + " (" + tag +
                         ") does not match the corpus tokens");
      }
      maps.push_back(m);
      classes.push_back(m.target_class);
    }
    MethodReport r;
    r.name = tag;
    r.curves = evaluate_curves(model, samples, maps, classes, grid);
    r.seconds = seconds_since(tm);
    report.methods.push_back(std::move(r));
  }
  report.seconds = seconds_since(t0);
  return report;
}

std::string format_number(double v) {
  if (v == 0.0) return "0";  // folds -0
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

void write_curves_csv(const EvalReport& report, const std::string& path) {
  auto out = open_out(path);
  out << "method,metric,order,k,value\n";
  for (const auto& m : report.methods) {
    for (const PerturbationCurve* c :
         {&m.curves.aopc_morf, &m.curves.aopc_lerf, &m.curves.lodds_morf, &m.curves.lodds_lerf}) {
      for (std::size_t g = 0; g < c->grid.size(); ++g) {
        out << m.name << ',' << metric_tag(c->metric) << ',' << order_tag(c->order) << ','
            << format_number(c->grid[g]) << ',' << format_number(c->values[g]) << '\n';
      }
    }
  }
}

void write_auc_csv(const EvalReport& report, const std::string& path) {
  auto out = open_out(path);
  out << "method,aopc_morf,aopc_lerf,lodds_morf,lodds_lerf,abs_lodds_morf,abs_lodds_lerf\n";
  for (const auto& m : report.methods) {
    const auto& c = m.curves;
    out << m.name << ',' << format_number(c.aopc_morf.auc) << ','
        << format_number(c.aopc_lerf.auc) << ',' << format_number(c.lodds_morf.auc) << ','
        << format_number(c.lodds_lerf.auc) << ',' << format_number(std::abs(c.lodds_morf.auc))
        << ',' << format_number(std::abs(c.lodds_lerf.auc)) << '\n';
  }
}

void write_summary_json(const EvalReport& report, const std::string& path) {
  nlohmann::json j;
  j["samples"] = report.sample_indices.size();
  j["model_fingerprint"] = to_hex(report.model_fingerprint);
  j["corpus_fingerprint"] = to_hex(report.corpus_fingerprint);
  j["seconds"] = report.seconds;
  j["warnings"] = report.warnings;
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& m : report.methods) {
    methods.push_back({{"method", m.name},
                       {"seconds", m.seconds},
                       {"aopc_morf_auc", m.curves.aopc_morf.auc},
                       {"aopc_lerf_auc", m.curves.aopc_lerf.auc},
                       {"lodds_morf_auc", m.curves.lodds_morf.auc},
                       {"lodds_lerf_auc", m.curves.lodds_lerf.auc}});
  }
  j["methods"] = methods;
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

}  // namespace ccat
