#include "layerlens/bundle.hpp"

#include "layerlens/errors.hpp"

namespace layerlens {

namespace tensor_names {

std::string token_embedding() { return "tok_embeddings.weight"; }

namespace {
std::string layer_name(std::size_t layer, const char *suffix) {
  return "layers." + std::to_string(layer) + "." + suffix;
}
} // namespace

std::string wq(std::size_t l) { return layer_name(l, "attention.wq.weight"); }
std::string wk(std::size_t l) { return layer_name(l, "attention.wk.weight"); }
std::string wv(std::size_t l) { return layer_name(l, "attention.wv.weight"); }
std::string wo(std::size_t l) { return layer_name(l, "attention.wo.weight"); }
std::string w_gate(std::size_t l) {
  return layer_name(l, "feed_forward.w1.weight");
}
std::string w_down(std::size_t l) {
  return layer_name(l, "feed_forward.w2.weight");
}
std::string w_up(std::size_t l) {
  return layer_name(l, "feed_forward.w3.weight");
}
std::string attention_norm(std::size_t l) {
  return layer_name(l, "attention_norm.weight");
}
std::string ffn_norm(std::size_t l) { return layer_name(l, "ffn_norm.weight"); }
std::string final_norm() { return "norm.weight"; }
std::string unembedding() { return "output.weight"; }

} // namespace tensor_names

std::span<const float> model_bundle::tensor(const std::string &name) const {
  const auto it = f32.find(name);
  if (it == f32.end())
    throw missing_tensor_error("tensor not in bundle: " + name);
  return it->second;
}

const std::vector<std::size_t> &
model_bundle::shape(const std::string &name) const {
  const auto it = store.tensors.find(name);
  if (it == store.tensors.end())
    throw missing_tensor_error("tensor not in bundle: " + name);
  return it->second.shape;
}

std::vector<std::pair<std::string, std::vector<std::size_t>>>
expected_tensor_names(const model_config &cfg) {
  cfg.validate();
  namespace tn = tensor_names;
  const std::size_t kv_dim = cfg.n_kv_heads * cfg.head_dim();
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  out.emplace_back(tn::token_embedding(),
                   std::vector<std::size_t>{cfg.vocab_size, cfg.d_model});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    out.emplace_back(tn::wq(l),
                     std::vector<std::size_t>{cfg.d_model, cfg.d_model});
    out.emplace_back(tn::wk(l), std::vector<std::size_t>{kv_dim, cfg.d_model});
    out.emplace_back(tn::wv(l), std::vector<std::size_t>{kv_dim, cfg.d_model});
    out.emplace_back(tn::wo(l),
                     std::vector<std::size_t>{cfg.d_model, cfg.d_model});
    out.emplace_back(tn::w_gate(l),
                     std::vector<std::size_t>{cfg.d_ff, cfg.d_model});
    out.emplace_back(tn::w_down(l),
                     std::vector<std::size_t>{cfg.d_model, cfg.d_ff});
    out.emplace_back(tn::w_up(l),
                     std::vector<std::size_t>{cfg.d_ff, cfg.d_model});
    out.emplace_back(tn::attention_norm(l),
                     std::vector<std::size_t>{cfg.d_model});
    out.emplace_back(tn::ffn_norm(l), std::vector<std::size_t>{cfg.d_model});
  }
  out.emplace_back(tn::final_norm(), std::vector<std::size_t>{cfg.d_model});
  out.emplace_back(tn::unembedding(),
                   std::vector<std::size_t>{cfg.vocab_size, cfg.d_model});
  return out;
}

namespace {

void validate_and_materialize(model_bundle &b) {
  for (const auto &[name, shape] : expected_tensor_names(b.config)) {
    const auto it = b.store.tensors.find(name);
    if (it == b.store.tensors.end())
      throw missing_tensor_error("bundle is missing tensor: " + name);
    const tensor_record &rec = it->second;
    if (rec.shape != shape) {
      std::string want, got;
      for (auto d : shape)
        want += std::to_string(d) + ",";
      for (auto d : rec.shape)
        got += std::to_string(d) + ",";
      throw shape_error("tensor " + name + ": expected shape (" + want +
                        ") but container has (" + got + ")");
    }
    if (rec.shape.empty() || rec.shape.size() > 2)
      throw shape_error("tensor " + name + ": rank must be 1 or 2");
  }
  for (const auto &[name, rec] : b.store.tensors)
    b.f32.emplace(name, record_to_f32(rec));
}

} // namespace

model_bundle load_bundle(const std::filesystem::path &path) {
  model_bundle b;
  b.store = load_container(path);
  b.config = config_from_metadata(b.store.metadata);
  if (const auto it = b.store.metadata.find("tokenizer.vocab");
      it != b.store.metadata.end())
    b.tokenizer_vocab = it->second;
  if (const auto it = b.store.metadata.find("tokenizer.merges");
      it != b.store.metadata.end())
    b.tokenizer_merges = it->second;
  validate_and_materialize(b);
  return b;
}

void save_bundle(const model_bundle &bundle,
                 const std::filesystem::path &path) {
  tensor_container c = bundle.store;
  config_into_metadata(bundle.config, c.metadata);
  if (!bundle.tokenizer_vocab.empty())
    c.metadata["tokenizer.vocab"] = bundle.tokenizer_vocab;
  if (!bundle.tokenizer_merges.empty())
    c.metadata["tokenizer.merges"] = bundle.tokenizer_merges;
  save_container(c, path);
}

model_bundle make_bundle(const model_config &cfg,
                         std::vector<tensor_record> tensors,
                         std::string tokenizer_vocab,
                         std::string tokenizer_merges) {
  model_bundle b;
  b.config = cfg;
  b.tokenizer_vocab = std::move(tokenizer_vocab);
  b.tokenizer_merges = std::move(tokenizer_merges);
  for (auto &rec : tensors) {
    std::string name = rec.name;
    b.store.tensors.emplace(std::move(name), std::move(rec));
  }
  config_into_metadata(cfg, b.store.metadata);
  validate_and_materialize(b);
  return b;
}

} // namespace layerlens
