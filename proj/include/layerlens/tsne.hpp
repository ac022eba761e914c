#pragma once

#include "layerlens/bundle.hpp"
#include "layerlens/probes.hpp"
#include "layerlens/prompts.hpp"
#include "layerlens/tokenizer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace layerlens {

enum class pooling { last_token, mean_option_tokens };

pooling pooling_from_string(const std::string &s);
std::string to_string(pooling p);

// Pooled hidden states: one row per item, labelled (language tag).
struct embedding_set {
  std::vector<double> x; // n x d row-major
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<std::string> labels;
  std::vector<std::string> ids;
  std::size_t layer = 0;
  pooling pool = pooling::last_token;
};

// Run forward on prompt + correct option per item and pool the tapped
// hidden states at `layer`.
embedding_set extract_embeddings(const model_bundle &bundle,
                                 const tokenizer &tok,
                                 const probe_dataset &ds,
                                 const prompt_library &lib, std::size_t layer,
                                 pooling pool);

struct tsne_params {
  double perplexity = 0.0; // 0: default min(30, (n-1)/3), clamped to >= 1
  std::size_t iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;   // first 250 iterations
  double momentum_early = 0.5;        // before iteration 250
  double momentum_late = 0.8;         // from iteration 250
  std::uint64_t seed = 0;

  double resolve_perplexity(std::size_t n) const;
};

// Symmetrized Gaussian affinities: per-point bandwidth found by binary
// search on log-perplexity (<= 64 iterations, tolerance 1e-5), then
// P = (p_{j|i} + p_{i|j}) / 2n. Zero diagonal, entries sum to 1.
// Throws degenerate_input_error naming the first duplicate row pair.
std::vector<double> pairwise_affinities(const std::vector<double> &x,
                                        std::size_t n, std::size_t d,
                                        double perplexity);

struct tsne_result {
  std::vector<double> y; // n x 2
  std::vector<std::pair<std::size_t, double>> kl_trace; // every 50 iters
  double kl_initial = 0.0;
  double kl_final = 0.0;
};

// Gradient descent on KL(P || Q) with the Student-t kernel, momentum,
// early exaggeration and per-point gradient clipping at norm 100.
tsne_result tsne_project(const std::vector<double> &affinities, std::size_t n,
                         const tsne_params &params);
tsne_result tsne_project(const embedding_set &emb, const tsne_params &params);

// KL(P || Q(y)); usable as an evaluator independent of the optimizer.
double tsne_kl(const std::vector<double> &affinities,
               const std::vector<double> &y, std::size_t n);

// Mean fraction of each point's k nearest neighbours (Euclidean, self
// excluded) that share its label. Throws input_error when k >= n.
double nn_purity(const std::vector<double> &y, std::size_t n, std::size_t dim,
                 const std::vector<std::string> &labels, std::size_t k);

// CSV with a metadata comment block: id,label,layer,y1,y2.
void write_projection_csv(const std::filesystem::path &path,
                          const embedding_set &emb, const tsne_result &res,
                          const tsne_params &params,
                          const std::string &manifest_hash);

} // namespace layerlens
