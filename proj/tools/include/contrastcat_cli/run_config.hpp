#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "contrastcat/corpus/corpus.hpp"
#include "contrastcat/refine/refine.hpp"

namespace ccat::cli {

/// Everything a subcommand reads. Written as manifest.json into every output
/// directory; `--manifest` loads one back, and explicit flags override it.
struct RunConfig {
  std::string command;

  std::string model_path;
  std::string library_path;
  std::string maps_path;
  std::string input_path;
  std::string out_dir;

  // Corpus: a CSV when csv_path is set, otherwise the synthetic generator.
  std::string csv_path;
  std::string text_column = "text";
  std::string label_column = "label";
  std::string split_column = "split";
  double test_fraction = 0.2;
  std::uint64_t synth_seed = 1;
  std::size_t n_train = 2000;
  std::size_t n_test = 500;
  std::size_t max_len = 32;
  std::size_t classes = 2;

  // Training.
  std::size_t epochs = 3;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t model_seed = 7;
  std::uint64_t train_seed = 11;

  // Attribution and refinement.
  double gamma = 1e-3;
  std::size_t k = 30;
  double fraction = 0.2;
  std::string rho = "mean+std";
  std::string deletion = "cumulative";
  std::string aggregation = "column";
  std::string target = "logit";
  std::vector<std::string> methods;

  // Evaluation.
  std::vector<double> grid = {10, 20, 30, 40, 50, 60, 70, 80, 90};
  std::size_t samples = 200;
  std::uint64_t seed = 0;
  bool dump_maps = false;

  // attribute
  std::vector<std::string> texts;
  std::optional<std::size_t> target_class;
  bool color = true;

  // ablate
  std::vector<std::string> sweeps;
  std::vector<double> gammas = {0.1, 0.01, 0.001};
  std::vector<std::size_t> reference_counts = {0, 1, 5, 10, 20, 30};

  // pca-export
  std::vector<std::size_t> pca_layers;
  bool contrast = false;

  RefinementConfig refinement() const;
  CsvSchema schema() const;
};

std::string to_json(const RunConfig& cfg);
/// Unknown keys are ignored; a wrong type throws FormatError.
RunConfig from_json(const std::string& text);

}  // namespace ccat::cli
