#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include <json.hpp>

#include "contrastcat/evalharness/ablation.hpp"
#include "contrastcat/evalharness/pca.hpp"
#include "contrastcat/util/error.hpp"
#include "contrastcat/util/hash.hpp"
#include "contrastcat_cli/cli.hpp"
#include "contrastcat_cli/render.hpp"

namespace ccat::cli {

namespace fs = std::filesystem;

namespace {

std::string out_path(const RunConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out_dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << text;
}

Corpus load_corpus(const RunConfig& cfg) {
  if (!cfg.csv_path.empty()) return load_csv(cfg.csv_path, cfg.schema());
  return synth_sentiment(cfg.synth_seed, cfg.n_train, cfg.n_test, cfg.max_len);
}

Encoder load_checked_model(const RunConfig& cfg, const Corpus& corpus) {
  Encoder model = load_model(cfg.model_path);
  const auto& c = model.config();
  if (c.vocab_size != corpus.vocab.size() || c.max_len != corpus.max_len ||
      c.classes != corpus.classes) {
    throw CompatibilityError("model '" + cfg.model_path + "' (vocab " +
                             std::to_string(c.vocab_size) + ", max_len " +
                             std::to_string(c.max_len) + ") was not trained on this corpus (vocab " +
                             std::to_string(corpus.vocab.size()) + ", max_len " +
                             std::to_string(corpus.max_len) + ")");
  }
  return model;
}

ReferenceLibrary obtain_library(const RunConfig& cfg, const Encoder& model, const Corpus& corpus,
                                std::ostream& out) {
  if (!cfg.library_path.empty()) return load_library(cfg.library_path, model);
  out << "no --library given; building one in memory (gamma " << cfg.gamma << ", k " << cfg.k
      << ")\n";
  return build_library(model, corpus, cfg.gamma, cfg.k);
}

std::vector<Method> methods_of(const RunConfig& cfg, std::vector<Method> fallback) {
  if (cfg.methods.empty()) return fallback;
  std::vector<Method> out;
  for (const auto& m : cfg.methods) out.push_back(parse_method(m));
  return out;
}

bool uses_contrast(const std::vector<Method>& ms) {
  return std::find(ms.begin(), ms.end(), Method::kContrastCat) != ms.end();
}

std::vector<std::size_t> pick_samples(const RunConfig& cfg, const Corpus& corpus,
                                      std::ostream& out, std::vector<std::string>* warnings) {
  bool clamped = false;
  auto idx = split_sample(corpus, cfg.samples, cfg.seed, &clamped);
  if (clamped) {
    const std::string w = "requested " + std::to_string(cfg.samples) + " samples, test split has " +
                          std::to_string(corpus.test.size()) + "; using all";
    out << "warning: " << w << '\n';
    if (warnings) warnings->push_back(w);
  }
  return idx;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

void cmd_train(const RunConfig& cfg, std::ostream& out) {
  const Corpus corpus = load_corpus(cfg);
  EncoderConfig ec;
  ec.vocab_size = corpus.vocab.size();
  ec.max_len = corpus.max_len;
  ec.classes = corpus.classes;
  ec.seed = cfg.model_seed;
  Encoder model(ec);
  TrainingConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.learning_rate = cfg.learning_rate;
  tc.seed = cfg.train_seed;
  const TrainingReport r = train(model, corpus, tc);
  save_model(model, out_path(cfg, "model.bin"));

  nlohmann::ordered_json j;
  j["epoch_loss"] = r.epoch_loss;
  j["train_accuracy"] = r.train_accuracy;
  j["test_accuracy"] = r.test_accuracy;
  j["seconds"] = r.seconds;
  j["model_fingerprint"] = to_hex(model.fingerprint());
  j["corpus_fingerprint"] = to_hex(corpus.fingerprint());
  write_text(out_path(cfg, "train_report.json"), j.dump(2) + "\n");
  out << "trained " << cfg.epochs << " epochs in " << fixed(r.seconds, 1) << "s: train acc "
      << fixed(r.train_accuracy) << ", test acc " << fixed(r.test_accuracy) << '\n'
      << "model: " << out_path(cfg, "model.bin") << '\n';
}

void cmd_build_reflib(const RunConfig& cfg, std::ostream& out) {
  const Corpus corpus = load_corpus(cfg);
  const Encoder model = load_checked_model(cfg, corpus);
  const ReferenceLibrary lib = build_library(model, corpus, cfg.gamma, cfg.k);
  for (const auto& w : lib.warnings) out << "warning: " << w << '\n';
  save_library(lib, out_path(cfg, "reflib.bin"));

  nlohmann::ordered_json j;
  j["gamma"] = lib.gamma;
  j["k"] = lib.k;
  j["model_fingerprint"] = to_hex(lib.model_fingerprint);
  j["warnings"] = lib.warnings;
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  for (ClassId c = 0; c < lib.per_class.size(); ++c) {
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (const auto& e : lib.per_class[c])
      entries.push_back({{"source", e.source_index}, {"score", e.score}, {"text", e.tokens.text}});
    classes.push_back({{"class", c}, {"entries", entries}});
    out << "class " << c << ": " << lib.per_class[c].size() << " references\n";
  }
  j["classes"] = classes;
  write_text(out_path(cfg, "reflib.json"), j.dump(2) + "\n");
  out << "library: " << out_path(cfg, "reflib.bin") << '\n';
}

void cmd_attribute(const RunConfig& cfg, std::ostream& out) {
  const Corpus corpus = load_corpus(cfg);
  const Encoder model = load_checked_model(cfg, corpus);
  const auto methods = methods_of(cfg, {Method::kContrastCat});
  const RefinementConfig rc = cfg.refinement();
  std::optional<ReferenceLibrary> lib;
  if (uses_contrast(methods)) lib = obtain_library(cfg, model, corpus, out);

  std::vector<std::string> texts = cfg.texts;
  if (!cfg.input_path.empty()) {
    std::ifstream in(cfg.input_path);
    std::string line;
    while (std::getline(in, line))
      if (line.find_first_not_of(" \t\r") != std::string::npos) texts.push_back(line);
  }
  if (cfg.target_class && *cfg.target_class >= model.num_classes()) {
    throw InputError("--class " + std::to_string(*cfg.target_class) + " outside [0, " +
                     std::to_string(model.num_classes()) + ")");
  }

  std::vector<AttributionRecord> records;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const TokenSequence seq = encode(texts[i], corpus.vocab, corpus.max_len);
    if (seq.ordinary_count() == 0) throw InputError("text " + std::to_string(i) + " has no tokens");
    const auto probs = model.probabilities(seq);
    const auto predicted =
        static_cast<ClassId>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    const ClassId c = cfg.target_class.value_or(predicted);
    out << "text " << i << ": predicted " << predicted << " (p=" << fixed(probs[predicted])
        << "), attributing class " << c << '\n';
    for (Method m : methods) {
      AttributionRecord r;
      r.sample = i;
      r.text = texts[i];
      if (m == Method::kContrastCat) {
        RefinementResult res = refine(model, seq, c, lib->entries(c), rc);
        r.map = std::move(res.map);
        r.drop_scores = std::move(res.drop_means);
      } else {
        r.map = baseline_map(model, seq, c, m, rc.target);
      }
      r.tokens = display_tokens(seq, corpus.vocab, r.map.length());
      out << "  " << render_ansi(r, cfg.color) << '\n';
      records.push_back(std::move(r));
    }
  }
  write_attribution_jsonl(out_path(cfg, "attributions.jsonl"), records);
  write_text(out_path(cfg, "heatmap.html"), render_html(records, "Token attribution"));
  out << "maps: " << out_path(cfg, "attributions.jsonl") << "\nheatmap: "
      << out_path(cfg, "heatmap.html") << '\n';
}

void cmd_evaluate(const RunConfig& cfg, std::ostream& out) {
  const Corpus corpus = load_corpus(cfg);
  const Encoder model = load_checked_model(cfg, corpus);
  EvalReport report;
  if (!cfg.maps_path.empty()) {
    const auto records = read_attribution_jsonl(cfg.maps_path);
    report = evaluate_maps(model, corpus, records, cfg.grid);
  } else {
    std::vector<std::string> warnings;
    const auto idx = pick_samples(cfg, corpus, out, &warnings);
    EvalOptions opt;
    opt.methods = methods_of(cfg, all_methods());
    opt.grid = cfg.grid;
    opt.refine = cfg.refinement();
    opt.keep_maps = cfg.dump_maps;
    std::optional<ReferenceLibrary> lib;
    if (uses_contrast(opt.methods)) lib = obtain_library(cfg, model, corpus, out);
    report = evaluate(model, corpus, idx, lib ? &*lib : nullptr, opt);
    report.warnings.insert(report.warnings.end(), warnings.begin(), warnings.end());
    if (cfg.dump_maps) {
      std::vector<AttributionRecord> records;
      for (const auto& m : report.methods) {
        for (std::size_t s = 0; s < idx.size(); ++s) {
          AttributionRecord r;
          r.sample = idx[s];
          r.text = corpus.test[idx[s]].text;
          r.map = m.maps[s];
          r.tokens = display_tokens(corpus.test[idx[s]], corpus.vocab, r.map.length());
          records.push_back(std::move(r));
        }
      }
      write_attribution_jsonl(out_path(cfg, "maps.jsonl"), records);
    }
  }
  write_curves_csv(report, out_path(cfg, "curves.csv"));
  write_auc_csv(report, out_path(cfg, "auc.csv"));
  write_summary_json(report, out_path(cfg, "summary.json"));
  out << std::left << std::setw(14) << "method" << "  AOPC-MoRF  AOPC-LeRF  LOdds-MoRF  LOdds-LeRF\n";
  for (const auto& m : report.methods) {
    const auto& c = m.curves;
    out << std::left << std::setw(14) << m.name << std::right << std::setw(11)
        << fixed(c.aopc_morf.auc) << std::setw(11) << fixed(c.aopc_lerf.auc) << std::setw(12)
        << fixed(c.lodds_morf.auc) << std::setw(12) << fixed(c.lodds_lerf.auc) << '\n';
  }
  out << report.sample_indices.size() << " samples; reports in " << cfg.out_dir << '\n';
}

void cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  const Corpus corpus = load_corpus(cfg);
  const Encoder model = load_checked_model(cfg, corpus);
  const auto idx = pick_samples(cfg, corpus, out, nullptr);
  const SweepContext ctx = make_sweep_context(model, corpus, idx, cfg.refinement(), cfg.seed);
  std::vector<std::string> sweeps = cfg.sweeps;
  if (sweeps.empty())
    sweeps = {"gamma", "layers", "references", "threshold", "mode", "deletion", "online"};

  std::optional<ReferenceLibrary> lib;
  auto library = [&]() -> const ReferenceLibrary& {
    if (!lib) lib = obtain_library(cfg, model, corpus, out);
    return *lib;
  };
  auto emit = [&](const std::string& name, const std::vector<SweepRow>& rows) {
    write_sweep_csv(rows, out_path(cfg, "sweep_" + name + ".csv"));
    for (const auto& r : rows) {
      out << std::left << std::setw(11) << r.sweep << std::setw(12) << r.setting
          << " AOPC-MoRF " << fixed(r.curves.aopc_morf.auc) << "  AOPC-LeRF "
          << fixed(r.curves.aopc_lerf.auc) << "  LOdds-MoRF " << fixed(r.curves.lodds_morf.auc)
          << '\n';
    }
  };
  for (const auto& s : sweeps) {
    if (s == "gamma") {
      emit(s, sweep_gamma(ctx, cfg.gammas, cfg.k));
    } else if (s == "layers") {
      emit(s, sweep_layers(ctx, library()));
    } else if (s == "references") {
      emit(s, sweep_reference_counts(ctx, library(), cfg.reference_counts));
    } else if (s == "threshold") {
      emit(s, sweep_threshold_rules(ctx, library()));
    } else if (s == "mode") {
      emit(s, sweep_reference_modes(ctx, cfg.gamma, cfg.k));
    } else if (s == "deletion") {
      emit(s, sweep_deletion_modes(ctx, library()));
    } else if (s == "online") {
      const auto cmp = compare_library_online(ctx, library());
      std::vector<SweepRow> rows(2);
      rows[0] = {"online", "library", cmp.library_curves, cmp.library_seconds};
      rows[1] = {"online", "on-the-fly", cmp.online_curves, cmp.online_seconds};
      emit(s, rows);
      out << "library " << fixed(cmp.library_seconds, 2) << "s vs on-the-fly "
          << fixed(cmp.online_seconds, 2) << "s\n";
    } else {
      throw InputError("unknown sweep '" + s + "'");
    }
  }
  out << "sweeps in " << cfg.out_dir << '\n';
}

void cmd_pca_export(const RunConfig& cfg, std::ostream& out) {
  const Corpus corpus = load_corpus(cfg);
  const Encoder model = load_checked_model(cfg, corpus);
  const auto idx = pick_samples(cfg, corpus, out, nullptr);
  std::vector<TokenSequence> samples;
  for (std::size_t i : idx) samples.push_back(corpus.test[i]);
  std::vector<std::size_t> layers = cfg.pca_layers;
  if (layers.empty())
    for (std::size_t l = 1; l <= model.config().layers; ++l) layers.push_back(l);
  std::optional<ReferenceLibrary> lib;
  if (cfg.contrast) lib = obtain_library(cfg, model, corpus, out);
  const auto points = pca_activation_export(model, samples, layers, lib ? &*lib : nullptr);
  write_pca_csv(points, out_path(cfg, "pca.csv"));
  for (std::size_t l : layers)
    out << "layer " << l << ": centroid distance " << fixed(centroid_distance(points, l)) << '\n';
  out << "points: " << out_path(cfg, "pca.csv") << '\n';
}

}  // namespace ccat::cli
