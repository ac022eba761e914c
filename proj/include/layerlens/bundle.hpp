#pragma once

#include "layerlens/model_config.hpp"
#include "layerlens/tensor_container.hpp"

#include <span>
#include <utility>

namespace layerlens {

// Complete model state: config, raw tensor records (kept byte-exact for
// round-tripping) and 32-bit float views used by the compute path.
// Immutable after load; safe to share across concurrent readers.
struct model_bundle {
  model_config config;
  tensor_container store;
  std::map<std::string, std::vector<float>> f32;
  std::string tokenizer_vocab;  // empty -> byte fallback tokenizer
  std::string tokenizer_merges;

  // Float view of a named tensor. Throws missing_tensor_error.
  std::span<const float> tensor(const std::string &name) const;
  const std::vector<std::size_t> &shape(const std::string &name) const;
};

// The architecture's full weight layout: token embedding, per-layer
// q/k/v/o attention projections (k and v sized for n_kv_heads), gate/up/
// down MLP projections, the two per-layer norm gains, the final norm gain
// and the unembedding. 2-D shapes are (out_features, in_features).
std::vector<std::pair<std::string, std::vector<std::size_t>>>
expected_tensor_names(const model_config &cfg);

model_bundle load_bundle(const std::filesystem::path &path);
void save_bundle(const model_bundle &bundle,
                 const std::filesystem::path &path);

// Assemble a bundle from parts, validating layout; used by fixtures and
// checkpoint conversion.
model_bundle make_bundle(const model_config &cfg,
                         std::vector<tensor_record> tensors,
                         std::string tokenizer_vocab = "",
                         std::string tokenizer_merges = "");

namespace tensor_names {
std::string token_embedding();
std::string wq(std::size_t layer);
std::string wk(std::size_t layer);
std::string wv(std::size_t layer);
std::string wo(std::size_t layer);
std::string w_gate(std::size_t layer);
std::string w_down(std::size_t layer);
std::string w_up(std::size_t layer);
std::string attention_norm(std::size_t layer);
std::string ffn_norm(std::size_t layer);
std::string final_norm();
std::string unembedding();
} // namespace tensor_names

} // namespace layerlens
