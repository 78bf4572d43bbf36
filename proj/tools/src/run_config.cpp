#include "contrastcat_cli/run_config.hpp"

#include <json.hpp>

#include "contrastcat/evalharness/ablation.hpp"
#include "contrastcat/util/error.hpp"

namespace ccat::cli {

RefinementConfig RunConfig::refinement() const {
  RefinementConfig r;
  r.fraction = fraction;
  r.rule = parse_threshold(rho);
  r.mode = parse_deletion(deletion);
  if (aggregation == "column") {
    r.aggregation = AttentionAggregation::kColumnMean;
  } else if (aggregation == "cls") {
    r.aggregation = AttentionAggregation::kClsRow;
  } else {
    throw InputError("unknown attention aggregation '" + aggregation + "' (column, cls)");
  }
  if (target == "logit") {
    r.target = GradientTarget::kLogit;
  } else if (target == "probability") {
    r.target = GradientTarget::kProbability;
  } else {
    throw InputError("unknown gradient target '" + target + "' (logit, probability)");
  }
  r.validate();
  return r;
}

CsvSchema RunConfig::schema() const {
  CsvSchema s;
  s.text_column = text_column;
  s.label_column = label_column;
  s.split_column = split_column;
  s.test_fraction = test_fraction;
  s.classes = classes;
  s.max_len = max_len;
  return s;
}

// One field list drives both directions so they cannot drift apart.
#define CCAT_RUN_CONFIG_FIELDS(X)                                                            \
  X(command) X(model_path) X(library_path) X(maps_path) X(input_path) X(out_dir) X(csv_path) \
  X(text_column) X(label_column) X(split_column) X(test_fraction) X(synth_seed) X(n_train)  \
  X(n_test) X(max_len) X(classes) X(epochs) X(batch_size) X(learning_rate) X(model_seed)     \
  X(train_seed) X(gamma) X(k) X(fraction) X(rho) X(deletion) X(aggregation) X(target)        \
  X(methods) X(grid) X(samples) X(seed) X(dump_maps) X(texts) X(color) X(sweeps) X(gammas)   \
  X(reference_counts) X(pca_layers) X(contrast)

std::string to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
#define CCAT_PUT(f) j[#f] = cfg.f;
  CCAT_RUN_CONFIG_FIELDS(CCAT_PUT)
#undef CCAT_PUT
  j["target_class"] = cfg.target_class ? nlohmann::ordered_json(*cfg.target_class) : nullptr;
  return j.dump(2);
}

RunConfig from_json(const std::string& text) {
  RunConfig cfg;
  try {
    const auto j = nlohmann::json::parse(text);
#define CCAT_GET(f) \
  if (j.contains(#f)) j.at(#f).get_to(cfg.f);
    CCAT_RUN_CONFIG_FIELDS(CCAT_GET)
#undef CCAT_GET
    if (j.contains("target_class") && !j["target_class"].is_null()) {
      cfg.target_class = j["target_class"].get<std::size_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return cfg;
}

}  // namespace ccat::cli
