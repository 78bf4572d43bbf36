#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "contrastcat/evalharness/metrics.hpp"
#include "contrastcat/refine/refine.hpp"

namespace ccat {

/// Attribution for `method`. kContrastCat refines against `library`, which
/// must outlive the returned function; a null library throws LibraryError.
AttributionFn make_attributor(const Encoder& model, Method method,
                              const ReferenceLibrary* library,
                              const RefinementConfig& config = {});

/// Maps for every sample at the model's predicted class, computed in
/// parallel. classes receives the predicted class per sample.
std::vector<AttributionMap> attribute_predicted(const Encoder& model,
                                                std::span<const TokenSequence> samples,
                                                const AttributionFn& attribute,
                                                std::vector<ClassId>& classes);

std::vector<ClassId> predicted_classes(const Classifier& model,
                                       std::span<const TokenSequence> samples);

struct MethodReport {
  std::string name;
  CurveSet curves;
  double seconds = 0.0;  // attribution plus metrics
  std::vector<AttributionMap> maps;  // filled only with EvalOptions::keep_maps
};

struct EvalReport {
  std::vector<MethodReport> methods;
  std::vector<std::size_t> sample_indices;  // into the test split
  std::uint64_t model_fingerprint = 0;
  std::uint64_t corpus_fingerprint = 0;
  double seconds = 0.0;
  std::vector<std::string> warnings;
};

struct EvalOptions {
  std::vector<Method> methods = all_methods();
  std::vector<double> grid = default_k_grid();
  RefinementConfig refine;
  bool keep_maps = false;
};

/// Evaluates every method on the same samples (test-split indices).
EvalReport evaluate(const Encoder& model, const Corpus& corpus,
                    std::span<const std::size_t> sample_indices, const ReferenceLibrary* library,
                    const EvalOptions& options = {});

/// Same, but with precomputed maps. Each record's `sample` is a test-split
/// index and its class is the evaluated class. Every method must cover the
/// same sample set (InputError otherwise); methods are reported in
/// first-seen order.
EvalReport evaluate_maps(const Encoder& model, const Corpus& corpus,
                         std::span<const AttributionRecord> records,
                         std::span<const double> grid = default_k_grid());

/// method,metric,order,k,value
void write_curves_csv(const EvalReport& report, const std::string& path);
/// method,aopc_morf,aopc_lerf,lodds_morf,lodds_lerf,abs_lodds_morf,abs_lodds_lerf
void write_auc_csv(const EvalReport& report, const std::string& path);
/// Fingerprints, sample count, per-method timings and warnings.
void write_summary_json(const EvalReport& report, const std::string& path);

/// Fixed 12-significant-digit rendering used by every CSV writer.
std::string format_number(double v);

}  // namespace ccat
