#pragma once

#include "layerlens/bundle.hpp"
#include "layerlens/probes.hpp"
#include "layerlens/prompts.hpp"
#include "layerlens/tokenizer.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace layerlens {

struct option_score {
  std::size_t option_index = 0;
  double sum_logprob = 0.0;
  std::size_t token_count = 0;
  double mean_logprob = 0.0; // sum / count
};

enum class normalization { sum, mean };
enum class tie_break { lowest_index, seeded_random };

normalization normalization_from_string(const std::string &s);
tie_break tie_break_from_string(const std::string &s);
std::string to_string(normalization n);
std::string to_string(tie_break t);

struct eval_config {
  normalization norm = normalization::sum;
  tie_break tie = tie_break::lowest_index;
  std::vector<std::size_t> layers; // ascending, 1-based
  std::uint64_t seed = 0;
  bool lens_final_norm = true; // false: unembed the raw residual
  int threads = 1;
};

// "all", "last" or a comma list of 1-based indices.
std::vector<std::size_t> parse_layers(const std::string &text,
                                      std::size_t n_layers);

// Per-layer metric row. `task_split` carries task-qualified accuracies
// (e.g. arith_int / arith_float) when the dataset mixes item tasks;
// `steps` maps reasoning-step count to (accuracy, bucket size).
struct layer_metrics {
  std::size_t items = 0;
  double accuracy = 0.0;
  double mc1 = 0.0;
  double mc3 = 0.0;
  bool has_mc = false;
  std::map<std::string, double> task_split;
  std::map<int, std::pair<double, std::size_t>> steps;
};

struct layer_scores {
  std::string task;
  std::map<std::size_t, layer_metrics> rows;
};

// One score record per (item, option, layer); the results-file row.
struct result_row {
  std::string item_id;
  std::size_t option_index = 0;
  std::size_t layer = 0;
  double sum_logprob = 0.0;
  std::size_t token_count = 0;
};

// Eq.-style option log-probability at one layer: encode prompt and
// prompt+option separately, score the continuation ids in a single
// forward pass over the full sequence, reading the layer's lens
// distribution at the position before each option token.
option_score option_logprob(const model_bundle &bundle, const tokenizer &tok,
                            const std::string &prompt,
                            const std::string &option, std::size_t layer,
                            bool lens_final_norm = true);

// Same forward pass scored at several layers at once.
std::map<std::size_t, option_score>
option_logprob_layers(const model_bundle &bundle, const tokenizer &tok,
                      const std::string &prompt, const std::string &option,
                      const std::vector<std::size_t> &layers,
                      bool lens_final_norm = true);

// Argmax over options of the configured score, ties resolved per config.
std::size_t choose_index(const std::vector<option_score> &scores,
                         const eval_config &cfg, const std::string &item_id,
                         std::size_t layer);

std::pair<std::size_t, std::vector<option_score>>
score_item(const model_bundle &bundle, const tokenizer &tok,
           const prompt_library &lib, const probe_item &item,
           const eval_config &cfg, std::size_t layer);

// Fraction of items whose chosen option is a correct one. Throws
// metric_error on an empty set.
double accuracy(const std::vector<std::size_t> &chosen,
                const std::vector<const probe_item *> &items);

// mc1 in {0,1}: best-scored option is true. mc3 in [0,1]: probability
// mass on true options over mass on all options (log-sum-exp).
std::pair<double, double>
truthfulqa_metrics(const std::vector<option_score> &scores,
                   const std::vector<std::size_t> &correct,
                   normalization norm);

// All (item, option, layer) scores; one forward per (item, option)
// capturing every requested layer. Aborts with the failing item id.
std::vector<result_row> score_dataset(const model_bundle &bundle,
                                      const tokenizer &tok,
                                      const probe_dataset &ds,
                                      const prompt_library &lib,
                                      const eval_config &cfg);

// Deterministic single-threaded fold over rows sorted by
// (item id, option, layer). Pure function of (rows, dataset, cfg).
layer_scores aggregate_results(const std::vector<result_row> &rows,
                               const probe_dataset &ds,
                               const eval_config &cfg);

layer_scores layer_sweep(const model_bundle &bundle, const tokenizer &tok,
                         const probe_dataset &ds, const prompt_library &lib,
                         const eval_config &cfg);

// Per-reasoning-steps accuracy over one layer's results; items without
// metadata are excluded and their count reported through `excluded`.
std::map<int, std::pair<double, std::size_t>>
steps_breakdown(const std::vector<std::size_t> &chosen,
                const std::vector<const probe_item *> &items,
                std::size_t *excluded = nullptr);

// Results / metrics file round-trip.
void write_results_csv(const std::filesystem::path &path,
                       const std::vector<result_row> &rows,
                       const std::string &manifest_hash);
std::vector<result_row> read_results_csv(const std::filesystem::path &path);

struct metrics_metadata {
  std::string manifest_hash;
  std::string task;
  std::string model_label;
  std::string normalization_name;
};

void write_metrics_csv(const std::filesystem::path &path,
                       const layer_scores &scores,
                       const metrics_metadata &meta);
layer_scores read_metrics_csv(const std::filesystem::path &path,
                              metrics_metadata *meta = nullptr);

} // namespace layerlens
