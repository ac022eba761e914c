#pragma once

#include "layerlens/bundle.hpp"

#include <cstdint>

namespace layerlens {

// Deterministic seeded bundle with small random weights (uniform in
// [-scale, scale]); identical across platforms for a given seed.
model_bundle random_bundle(const model_config &cfg, std::uint64_t seed,
                           float scale = 0.08f);

// All-zero weights: every logit is exactly zero, so the next-token
// distribution is uniform at every layer.
model_bundle constant_logit_bundle(const model_config &cfg);

// The config used by the pipeline fixtures and tests.
model_config fixture_config(std::size_t n_layers = 4, std::size_t d_model = 32,
                            std::size_t vocab_size = 320,
                            std::size_t max_seq_len = 4096);

} // namespace layerlens
