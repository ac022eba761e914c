#include "layerlens/fixtures.hpp"

#include "layerlens/rng.hpp"

namespace layerlens {

model_bundle random_bundle(const model_config &cfg, std::uint64_t seed,
                           float scale) {
  mt19937_source rng(splitmix64(seed));
  std::vector<tensor_record> tensors;
  for (const auto &[name, shape] : expected_tensor_names(cfg)) {
    std::size_t numel = 1;
    for (std::size_t d : shape)
      numel *= d;
    std::vector<float> values(numel);
    for (auto &v : values)
      v = static_cast<float>(rng.uniform(-scale, scale));
    // Norm gains near 1 keep activations in a sane range.
    if (shape.size() == 1)
      for (auto &v : values)
        v += 1.0f;
    tensors.push_back(make_f32_record(name, shape, values));
  }
  return make_bundle(cfg, std::move(tensors));
}

model_bundle constant_logit_bundle(const model_config &cfg) {
  std::vector<tensor_record> tensors;
  for (const auto &[name, shape] : expected_tensor_names(cfg)) {
    std::size_t numel = 1;
    for (std::size_t d : shape)
      numel *= d;
    tensors.push_back(
        make_f32_record(name, shape, std::vector<float>(numel, 0.0f)));
  }
  return make_bundle(cfg, std::move(tensors));
}

model_config fixture_config(std::size_t n_layers, std::size_t d_model,
                            std::size_t vocab_size, std::size_t max_seq_len) {
  model_config cfg;
  cfg.n_layers = n_layers;
  cfg.d_model = d_model;
  cfg.n_heads = 4;
  cfg.n_kv_heads = 2;
  cfg.d_ff = d_model * 2;
  cfg.vocab_size = vocab_size;
  cfg.max_seq_len = max_seq_len;
  cfg.validate();
  return cfg;
}

} // namespace layerlens
