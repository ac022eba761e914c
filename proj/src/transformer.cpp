#include "layerlens/transformer.hpp"

#include "layerlens/errors.hpp"

#include <cmath>
#include <cstring>

namespace layerlens {

namespace {

// y = W x with W row-major (rows x cols).
void matvec(std::span<const float> w, std::size_t rows, std::size_t cols,
            const float *x, float *y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const float *wr = w.data() + r * cols;
    float acc = 0.0f;
    for (std::size_t c = 0; c < cols; ++c)
      acc += wr[c] * x[c];
    y[r] = acc;
  }
}

void softmax_inplace(float *v, std::size_t n) {
  float mx = v[0];
  for (std::size_t i = 1; i < n; ++i)
    mx = std::max(mx, v[i]);
  float sum = 0.0f;
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = std::exp(v[i] - mx);
    sum += v[i];
  }
  const float inv = 1.0f / sum;
  for (std::size_t i = 0; i < n; ++i)
    v[i] *= inv;
}

} // namespace

float silu(float x) { return x / (1.0f + std::exp(-x)); }

std::size_t argmax(std::span<const float> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best])
      best = i;
  return best;
}

void rms_norm(std::span<const float> x, std::span<const float> gain, float eps,
              std::span<float> out) {
  if (x.size() != gain.size() || x.size() != out.size())
    throw input_error("rms_norm: size mismatch");
  float ms = 0.0f;
  for (float v : x)
    ms += v * v;
  ms /= static_cast<float>(x.size());
  const float inv = 1.0f / std::sqrt(ms + eps);
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = x[i] * inv * gain[i];
}

std::vector<float> rms_norm(std::span<const float> x,
                            std::span<const float> gain, float eps) {
  std::vector<float> out(x.size());
  rms_norm(x, gain, eps, out);
  return out;
}

void apply_rope(std::span<float> vec, double position, double theta) {
  if (vec.size() % 2 != 0)
    throw config_error("apply_rope: head_dim must be even");
  const std::size_t half = vec.size() / 2;
  for (std::size_t k = 0; k < half; ++k) {
    const double freq =
        std::pow(theta, -2.0 * static_cast<double>(k) /
                            static_cast<double>(vec.size()));
    const double angle = position * freq;
    const float c = static_cast<float>(std::cos(angle));
    const float s = static_cast<float>(std::sin(angle));
    const float a = vec[2 * k];
    const float b = vec[2 * k + 1];
    vec[2 * k] = a * c - b * s;
    vec[2 * k + 1] = a * s + b * c;
  }
}

std::vector<float> log_softmax(std::span<const float> logits) {
  std::vector<float> out(logits.size());
  float mx = logits[0];
  for (float v : logits)
    mx = std::max(mx, v);
  float sum = 0.0f;
  for (std::size_t i = 0; i < logits.size(); ++i)
    sum += std::exp(logits[i] - mx);
  const float lse = mx + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i)
    out[i] = logits[i] - lse;
  return out;
}

std::vector<float> logit_lens(const model_bundle &bundle,
                              std::span<const float> hidden,
                              bool apply_final_norm) {
  const model_config &cfg = bundle.config;
  if (hidden.size() != cfg.d_model)
    throw input_error("logit_lens: hidden size != d_model");
  std::vector<float> h(hidden.begin(), hidden.end());
  if (apply_final_norm) {
    const auto gain = bundle.tensor(tensor_names::final_norm());
    rms_norm(h, gain, cfg.rms_eps, h);
  }
  std::vector<float> logits(cfg.vocab_size);
  matvec(bundle.tensor(tensor_names::unembedding()), cfg.vocab_size,
         cfg.d_model, h.data(), logits.data());
  return log_softmax(logits);
}

std::span<const float> forward_result::logits_row(std::size_t pos) const {
  return std::span<const float>(final_logits.data() + pos * vocab_size,
                                vocab_size);
}

std::span<const float> forward_result::hidden_row(std::size_t layer,
                                                  std::size_t pos) const {
  const auto &tap = taps.at(layer);
  return std::span<const float>(tap.hidden.data() + pos * d_model, d_model);
}

forward_result forward(const model_bundle &bundle,
                       const forward_request &req) {
  const model_config &cfg = bundle.config;
  const std::size_t seq = req.tokens.size();
  if (seq == 0)
    throw input_error("forward: empty token sequence");
  if (seq > cfg.max_seq_len)
    throw input_error("forward: sequence length " + std::to_string(seq) +
                      " exceeds max_seq_len " +
                      std::to_string(cfg.max_seq_len));
  for (int id : req.tokens)
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size)
      throw input_error("forward: token id out of range: " +
                        std::to_string(id));
  for (std::size_t l : req.tap_layers)
    if (l < 1 || l > cfg.n_layers)
      throw input_error("forward: tap layer out of range: " +
                        std::to_string(l));

  const std::size_t d = cfg.d_model;
  const std::size_t hd = cfg.head_dim();
  const std::size_t kv_dim = cfg.n_kv_heads * hd;
  const std::size_t group = cfg.n_heads / cfg.n_kv_heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

  forward_result res;
  res.seq_len = seq;
  res.d_model = d;
  res.vocab_size = cfg.vocab_size;

  // Residual stream, seq x d.
  std::vector<float> x(seq * d);
  {
    const auto emb = bundle.tensor(tensor_names::token_embedding());
    for (std::size_t t = 0; t < seq; ++t)
      std::memcpy(x.data() + t * d,
                  emb.data() + static_cast<std::size_t>(req.tokens[t]) * d,
                  d * sizeof(float));
  }

  std::vector<float> xn(seq * d);
  std::vector<float> q(seq * d), k(seq * kv_dim), v(seq * kv_dim);
  std::vector<float> attn_out(seq * d);
  std::vector<float> scores(seq);
  std::vector<float> gate(cfg.d_ff), up(cfg.d_ff), mlp(d);

  for (std::size_t layer = 0; layer < cfg.n_layers; ++layer) {
    namespace tn = tensor_names;
    const auto attn_gain = bundle.tensor(tn::attention_norm(layer));
    const auto wq = bundle.tensor(tn::wq(layer));
    const auto wk = bundle.tensor(tn::wk(layer));
    const auto wv = bundle.tensor(tn::wv(layer));
    const auto wo = bundle.tensor(tn::wo(layer));

    for (std::size_t t = 0; t < seq; ++t)
      rms_norm(std::span<const float>(x.data() + t * d, d), attn_gain,
               cfg.rms_eps, std::span<float>(xn.data() + t * d, d));

    for (std::size_t t = 0; t < seq; ++t) {
      matvec(wq, d, d, xn.data() + t * d, q.data() + t * d);
      matvec(wk, kv_dim, d, xn.data() + t * d, k.data() + t * kv_dim);
      matvec(wv, kv_dim, d, xn.data() + t * d, v.data() + t * kv_dim);
      for (std::size_t h = 0; h < cfg.n_heads; ++h)
        apply_rope(std::span<float>(q.data() + t * d + h * hd, hd),
                   static_cast<double>(t), cfg.rope_theta);
      for (std::size_t h = 0; h < cfg.n_kv_heads; ++h)
        apply_rope(std::span<float>(k.data() + t * kv_dim + h * hd, hd),
                   static_cast<double>(t), cfg.rope_theta);
    }

    // Causal grouped-query attention: query head h reads kv head h / group.
    std::fill(xn.begin(), xn.end(), 0.0f); // reuse xn as head-concat buffer
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const std::size_t kvh = h / group;
      for (std::size_t t = 0; t < seq; ++t) {
        const float *qt = q.data() + t * d + h * hd;
        for (std::size_t s = 0; s <= t; ++s) {
          const float *ks = k.data() + s * kv_dim + kvh * hd;
          float acc = 0.0f;
          for (std::size_t i = 0; i < hd; ++i)
            acc += qt[i] * ks[i];
          scores[s] = acc * scale;
        }
        softmax_inplace(scores.data(), t + 1);
        float *out = xn.data() + t * d + h * hd;
        for (std::size_t s = 0; s <= t; ++s) {
          const float *vs = v.data() + s * kv_dim + kvh * hd;
          const float p = scores[s];
          for (std::size_t i = 0; i < hd; ++i)
            out[i] += p * vs[i];
        }
      }
    }
    for (std::size_t t = 0; t < seq; ++t) {
      matvec(wo, d, d, xn.data() + t * d, attn_out.data() + t * d);
      float *xt = x.data() + t * d;
      const float *at = attn_out.data() + t * d;
      for (std::size_t i = 0; i < d; ++i)
        xt[i] += at[i];
    }

    const auto ffn_gain = bundle.tensor(tn::ffn_norm(layer));
    const auto w1 = bundle.tensor(tn::w_gate(layer));
    const auto w2 = bundle.tensor(tn::w_down(layer));
    const auto w3 = bundle.tensor(tn::w_up(layer));
    for (std::size_t t = 0; t < seq; ++t) {
      rms_norm(std::span<const float>(x.data() + t * d, d), ffn_gain,
               cfg.rms_eps, std::span<float>(xn.data() + t * d, d));
      matvec(w1, cfg.d_ff, d, xn.data() + t * d, gate.data());
      matvec(w3, cfg.d_ff, d, xn.data() + t * d, up.data());
      for (std::size_t i = 0; i < cfg.d_ff; ++i)
        gate[i] = silu(gate[i]) * up[i];
      matvec(w2, d, cfg.d_ff, gate.data(), mlp.data());
      float *xt = x.data() + t * d;
      for (std::size_t i = 0; i < d; ++i)
        xt[i] += mlp[i];
    }

    if (req.tap_layers.count(layer + 1)) {
      layer_tap tap;
      if (req.want_hidden || req.want_lens_logprobs)
        tap.hidden = x;
      res.taps.emplace(layer + 1, std::move(tap));
    }
  }

  // Final norm + unembedding.
  const auto final_gain = bundle.tensor(tensor_names::final_norm());
  const auto unembed = bundle.tensor(tensor_names::unembedding());
  res.final_logits.resize(seq * cfg.vocab_size);
  std::vector<float> hn(d);
  for (std::size_t t = 0; t < seq; ++t) {
    rms_norm(std::span<const float>(x.data() + t * d, d), final_gain,
             cfg.rms_eps, hn);
    matvec(unembed, cfg.vocab_size, d, hn.data(),
           res.final_logits.data() + t * cfg.vocab_size);
  }

  if (req.want_lens_logprobs) {
    for (auto &[layer, tap] : res.taps) {
      tap.lens_logprobs.resize(seq * cfg.vocab_size);
      if (layer == cfg.n_layers) {
        // Identical composition to the final head: reuse the final logits.
        for (std::size_t t = 0; t < seq; ++t) {
          const auto lp = log_softmax(res.logits_row(t));
          std::memcpy(tap.lens_logprobs.data() + t * cfg.vocab_size, lp.data(),
                      cfg.vocab_size * sizeof(float));
        }
      } else {
        for (std::size_t t = 0; t < seq; ++t) {
          const auto lp = logit_lens(
              bundle, std::span<const float>(tap.hidden.data() + t * d, d),
              true);
          std::memcpy(tap.lens_logprobs.data() + t * cfg.vocab_size, lp.data(),
                      cfg.vocab_size * sizeof(float));
        }
      }
      if (!req.want_hidden)
        tap.hidden.clear();
    }
  }
  return res;
}

} // namespace layerlens
