#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace layerlens {

// Decoder architecture parameters. The published model family instances
// (32/4096, 40/5120, 80/8192 layers/width) are expressible; fixtures use
// tiny values.
struct model_config {
  std::size_t n_layers = 0;
  std::size_t d_model = 0;
  std::size_t n_heads = 0;
  std::size_t n_kv_heads = 0;
  std::size_t d_ff = 0;
  std::size_t vocab_size = 0;
  float rope_theta = 10000.0f;
  float rms_eps = 1e-5f;
  std::size_t max_seq_len = 0;

  std::size_t head_dim() const { return d_model / n_heads; }

  // Throws config_error on any violated invariant.
  void validate() const;

  bool operator==(const model_config &o) const = default;
};

// Flat key/value text document ("n_layers = 4" per line, '#' comments).
model_config parse_config_text(const std::string &text);
std::string config_to_text(const model_config &cfg);

// Round-trip through a container's __metadata__ map ("config.*" keys).
model_config config_from_metadata(const std::map<std::string, std::string> &m);
void config_into_metadata(const model_config &cfg,
                          std::map<std::string, std::string> &m);

} // namespace layerlens
