#pragma once

#include "layerlens/bundle.hpp"

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <vector>

namespace layerlens {

// One forward pass request. Layer indices are 1-based; a tap captures the
// residual stream after that layer's full block (post-MLP).
struct forward_request {
  std::vector<int> tokens;
  std::set<std::size_t> tap_layers;
  bool want_hidden = true;
  bool want_lens_logprobs = false;
};

struct layer_tap {
  std::vector<float> hidden;        // seq_len x d_model (row-major)
  std::vector<float> lens_logprobs; // seq_len x vocab_size, when requested
};

struct forward_result {
  std::size_t seq_len = 0;
  std::size_t d_model = 0;
  std::size_t vocab_size = 0;
  std::vector<float> final_logits; // seq_len x vocab_size
  std::map<std::size_t, layer_tap> taps;

  std::span<const float> logits_row(std::size_t pos) const;
  std::span<const float> hidden_row(std::size_t layer, std::size_t pos) const;
};

// y_i = x_i / sqrt(mean_j x_j^2 + eps) * gain_i
void rms_norm(std::span<const float> x, std::span<const float> gain, float eps,
              std::span<float> out);
std::vector<float> rms_norm(std::span<const float> x,
                            std::span<const float> gain, float eps);

// Rotate pair (v[2k], v[2k+1]) by position * theta^(-2k / head_dim),
// in place. head_dim must be even.
void apply_rope(std::span<float> vec, double position, double theta);

// Mutable activation state lives entirely inside the call; the bundle is
// shared read-only, so concurrent calls over one bundle are safe.
forward_result forward(const model_bundle &bundle, const forward_request &req);

// Log-softmax over a logits row (max-subtracted, log-sum-exp normalized).
std::vector<float> log_softmax(std::span<const float> logits);

// Early-exit readout of one residual-stream row: final norm, unembedding,
// log-softmax. `apply_final_norm = false` unembeds the raw residual (the
// sensitivity switch).
std::vector<float> logit_lens(const model_bundle &bundle,
                              std::span<const float> hidden,
                              bool apply_final_norm = true);

float silu(float x);

// Lowest-index argmax.
std::size_t argmax(std::span<const float> v);

} // namespace layerlens
