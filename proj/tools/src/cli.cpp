#include "contrastcat_cli/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "contrastcat/evalharness/metrics.hpp"
#include "contrastcat/util/binary_io.hpp"
#include "contrastcat/util/error.hpp"

namespace ccat::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape:
    case ErrorKind::kState:
    case ErrorKind::kInvariant:
      return kExitInvariant;
    case ErrorKind::kInput:
    case ErrorKind::kFormat:
    case ErrorKind::kLibrary:
    case ErrorKind::kCompatibility:
    case ErrorKind::kExport:
      break;
  }
  return kExitData;
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
  return buf;
}

std::string existing(const std::string& path, const char* what) {
  if (path.empty()) return path;
  const fs::path p = fs::absolute(path);
  if (!fs::exists(p)) throw UsageError(std::string(what) + " '" + path + "' does not exist");
  return p.lexically_normal().string();
}

void require(const std::string& value, const char* flag, const std::string& command) {
  if (value.empty()) throw UsageError(command + " needs " + flag);
}

// Resolves paths, checks the flags each command needs, creates the output
// directory and writes the manifest.
RunConfig resolve(RunConfig cfg) {
  cfg.model_path = existing(cfg.model_path, "model");
  cfg.library_path = existing(cfg.library_path, "library");
  cfg.maps_path = existing(cfg.maps_path, "maps file");
  cfg.input_path = existing(cfg.input_path, "input file");
  cfg.csv_path = existing(cfg.csv_path, "corpus");
  try {
    cfg.refinement();
    for (const auto& m : cfg.methods) parse_method(m);
    for (const auto& g : cfg.grid) removal_count(1, g);
  } catch (const InputError& e) {
    throw UsageError(e.what());
  }
  const std::string& c = cfg.command;
  if (c != "train") require(cfg.model_path, "--model", c);
  if (c == "attribute" && cfg.texts.empty() && cfg.input_path.empty()) {
    throw UsageError("attribute needs --text or --input");
  }
  if (cfg.out_dir.empty()) cfg.out_dir = (fs::path("runs") / (c + "-" + timestamp())).string();
  cfg.out_dir = fs::absolute(cfg.out_dir).lexically_normal().string();
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw UsageError("cannot create output directory '" + cfg.out_dir + "': " + ec.message());
  std::ofstream(fs::path(cfg.out_dir) / "manifest.json") << to_json(cfg) << '\n';
  return cfg;
}

void add_corpus_options(CLI::App* app, RunConfig& cfg) {
  app->add_option("--csv", cfg.csv_path, "CSV corpus (default: synthetic sentiment corpus)");
  app->add_option("--text-column", cfg.text_column);
  app->add_option("--label-column", cfg.label_column);
  app->add_option("--split-column", cfg.split_column);
  app->add_option("--test-fraction", cfg.test_fraction);
  app->add_option("--classes", cfg.classes);
  app->add_option("--max-len", cfg.max_len, "Token budget including CLS");
  app->add_option("--synth-seed", cfg.synth_seed);
  app->add_option("--n-train", cfg.n_train);
  app->add_option("--n-test", cfg.n_test);
}

void add_refine_options(CLI::App* app, RunConfig& cfg) {
  app->add_option("--library", cfg.library_path, "Reference library file");
  app->add_option("--gamma", cfg.gamma, "Reference threshold on prob_c");
  app->add_option("-k,--references", cfg.k, "References per class");
  app->add_option("--fraction", cfg.fraction, "Deletion-test fraction of ordinary tokens");
  app->add_option("--rho", cfg.rho, "mean-std | mean | mean+std");
  app->add_option("--deletion", cfg.deletion, "cumulative | individual");
  app->add_option("--aggregation", cfg.aggregation, "column | cls");
  app->add_option("--target", cfg.target, "logit | probability");
}

void add_eval_options(CLI::App* app, RunConfig& cfg) {
  app->add_option("-n,--samples", cfg.samples, "Test samples to evaluate");
  app->add_option("--seed", cfg.seed, "Sample selection and reference sampling seed");
  app->add_option("--grid", cfg.grid, "k percentages")->delimiter(',');
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  // --manifest is applied before parsing so explicit flags override it.
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--manifest" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--manifest=", 0) == 0) path = args[i].substr(11);
    if (path.empty()) continue;
    try {
      const auto bytes = read_file(path);
      cfg = from_json(std::string(bytes.begin(), bytes.end()));
      cfg.out_dir.clear();
    } catch (const Error& e) {
      err << "error: " << e.what() << '\n';
      return kExitUsage;
    }
  }

  CLI::App app{"Contrastive token attribution for transformer text classifiers", "contrastcat"};
  app.require_subcommand(1);
  std::string manifest;
  std::size_t target_class = 0;
  bool no_color = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--manifest", manifest, "Replay a manifest.json; flags override it");
    sub->add_option("-o,--out", cfg.out_dir, "Output directory (default runs/<cmd>-<time>)");
    add_corpus_options(sub, cfg);
  };

  auto* train = app.add_subcommand("train", "Train the toy encoder");
  common(train);
  train->add_option("--epochs", cfg.epochs);
  train->add_option("--batch-size", cfg.batch_size);
  train->add_option("--lr", cfg.learning_rate);
  train->add_option("--model-seed", cfg.model_seed);
  train->add_option("--train-seed", cfg.train_seed);

  auto* reflib = app.add_subcommand("build-reflib", "Build the per-class reference library");
  common(reflib);
  reflib->add_option("-m,--model", cfg.model_path)->required();
  reflib->add_option("--gamma", cfg.gamma);
  reflib->add_option("-k,--references", cfg.k);

  auto* attribute = app.add_subcommand("attribute", "Attribute texts and render heatmaps");
  common(attribute);
  attribute->add_option("-m,--model", cfg.model_path)->required();
  add_refine_options(attribute, cfg);
  attribute->add_option("-t,--text", cfg.texts, "Text to attribute (repeatable)");
  attribute->add_option("-i,--input", cfg.input_path, "File with one text per line");
  attribute->add_option("--methods", cfg.methods, "Comma-separated method tags")->delimiter(',');
  auto* cls = attribute->add_option("--class", target_class, "Target class (default: predicted)");
  attribute->add_flag("--no-color", no_color, "Plain-text terminal output");

  auto* evaluate = app.add_subcommand("evaluate", "AOPC / LOdds curves for every method");
  common(evaluate);
  evaluate->add_option("-m,--model", cfg.model_path)->required();
  add_refine_options(evaluate, cfg);
  add_eval_options(evaluate, cfg);
  evaluate->add_option("--methods", cfg.methods, "Comma-separated method tags")->delimiter(',');
  evaluate->add_option("--maps", cfg.maps_path, "Evaluate precomputed attribution JSONL");
  evaluate->add_flag("--dump-maps", cfg.dump_maps, "Also write maps.jsonl");

  auto* ablate = app.add_subcommand("ablate", "Ablation sweeps");
  common(ablate);
  ablate->add_option("-m,--model", cfg.model_path)->required();
  add_refine_options(ablate, cfg);
  add_eval_options(ablate, cfg);
  ablate
      ->add_option("--sweeps", cfg.sweeps,
                   "gamma,layers,references,threshold,mode,deletion,online (default all)")
      ->delimiter(',');
  ablate->add_option("--gammas", cfg.gammas)->delimiter(',');
  ablate->add_option("--reference-counts", cfg.reference_counts)->delimiter(',');

  auto* pca = app.add_subcommand("pca-export", "2-D PCA of token-averaged activations");
  common(pca);
  pca->add_option("-m,--model", cfg.model_path)->required();
  add_refine_options(pca, cfg);
  add_eval_options(pca, cfg);
  pca->add_option("--layers", cfg.pca_layers, "1-based layers (default all)")->delimiter(',');
  pca->add_flag("--contrast", cfg.contrast, "Subtract the mean contrastive reference");

  // A manifest may already have filled required options.
  if (!cfg.model_path.empty()) {
    for (auto* sub : {reflib, attribute, evaluate, ablate, pca})
      sub->get_option("--model")->required(false);
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::ostringstream help;
    const int code = app.exit(e, help, err);
    if (code == 0) {
      out << help.str();
      return kExitOk;
    }
    return kExitUsage;
  }

  try {
    for (auto* sub : app.get_subcommands()) cfg.command = sub->get_name();
    if (cls->count() > 0) cfg.target_class = target_class;
    if (no_color) cfg.color = false;
    cfg = resolve(std::move(cfg));
    const std::string& c = cfg.command;
    if (c == "train") cmd_train(cfg, out);
    else if (c == "build-reflib") cmd_build_reflib(cfg, out);
    else if (c == "attribute") cmd_attribute(cfg, out);
    else if (c == "evaluate") cmd_evaluate(cfg, out);
    else if (c == "ablate") cmd_ablate(cfg, out);
    else cmd_pca_export(cfg, out);
    return kExitOk;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInvariant;
  }
}

}  // namespace ccat::cli
