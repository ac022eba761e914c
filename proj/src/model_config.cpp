#include "layerlens/model_config.hpp"

#include "layerlens/errors.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>
#include <vector>

namespace layerlens {

namespace {

std::string trim(const std::string &s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos)
    return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::size_t parse_count(const std::string &key, const std::string &value) {
  std::size_t v = 0;
  const auto res = std::from_chars(value.data(), value.data() + value.size(), v);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size())
    throw config_error("config field " + key + ": not a count: " + value);
  return v;
}

float parse_real(const std::string &key, const std::string &value) {
  try {
    std::size_t pos = 0;
    const float v = std::stof(value, &pos);
    if (pos != value.size())
      throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception &) {
    throw config_error("config field " + key + ": not a number: " + value);
  }
}

void apply_field(model_config &cfg, const std::string &key,
                 const std::string &value, std::vector<std::string> &seen) {
  seen.push_back(key);
  if (key == "n_layers")
    cfg.n_layers = parse_count(key, value);
  else if (key == "d_model")
    cfg.d_model = parse_count(key, value);
  else if (key == "n_heads")
    cfg.n_heads = parse_count(key, value);
  else if (key == "n_kv_heads")
    cfg.n_kv_heads = parse_count(key, value);
  else if (key == "d_ff")
    cfg.d_ff = parse_count(key, value);
  else if (key == "vocab_size")
    cfg.vocab_size = parse_count(key, value);
  else if (key == "max_seq_len")
    cfg.max_seq_len = parse_count(key, value);
  else if (key == "rope_theta")
    cfg.rope_theta = parse_real(key, value);
  else if (key == "rms_eps")
    cfg.rms_eps = parse_real(key, value);
  else
    throw config_error("unknown config field: " + key);
}

void require_fields(const std::vector<std::string> &seen) {
  for (const char *req : {"n_layers", "d_model", "n_heads", "n_kv_heads",
                          "d_ff", "vocab_size", "max_seq_len"}) {
    bool found = false;
    for (const auto &s : seen)
      found = found || s == req;
    if (!found)
      throw config_error(std::string("missing config field: ") + req);
  }
}

std::string real_to_text(float v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

} // namespace

void model_config::validate() const {
  if (n_layers < 1 || d_model < 1 || n_heads < 1 || n_kv_heads < 1 ||
      d_ff < 1 || vocab_size < 1 || max_seq_len < 1)
    throw config_error("all config counts must be >= 1");
  if (d_model % n_heads != 0)
    throw config_error("d_model must be divisible by n_heads");
  if (n_heads % n_kv_heads != 0)
    throw config_error("n_heads must be divisible by n_kv_heads");
  if (!(rope_theta > 0.0f))
    throw config_error("rope_theta must be positive");
  if (!(rms_eps > 0.0f))
    throw config_error("rms_eps must be positive");
}

model_config parse_config_text(const std::string &text) {
  model_config cfg;
  std::vector<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#')
      continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw config_error("config line " + std::to_string(line_no) +
                         ": expected key = value");
    apply_field(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)), seen);
  }
  require_fields(seen);
  cfg.validate();
  return cfg;
}

std::string config_to_text(const model_config &cfg) {
  std::ostringstream out;
  out << "n_layers = " << cfg.n_layers << "\n";
  out << "d_model = " << cfg.d_model << "\n";
  out << "n_heads = " << cfg.n_heads << "\n";
  out << "n_kv_heads = " << cfg.n_kv_heads << "\n";
  out << "d_ff = " << cfg.d_ff << "\n";
  out << "vocab_size = " << cfg.vocab_size << "\n";
  out << "rope_theta = " << real_to_text(cfg.rope_theta) << "\n";
  out << "rms_eps = " << real_to_text(cfg.rms_eps) << "\n";
  out << "max_seq_len = " << cfg.max_seq_len << "\n";
  return out.str();
}

model_config
config_from_metadata(const std::map<std::string, std::string> &m) {
  model_config cfg;
  std::vector<std::string> seen;
  for (const auto &[k, v] : m) {
    if (k.rfind("config.", 0) == 0)
      apply_field(cfg, k.substr(7), v, seen);
  }
  require_fields(seen);
  cfg.validate();
  return cfg;
}

void config_into_metadata(const model_config &cfg,
                          std::map<std::string, std::string> &m) {
  m["config.n_layers"] = std::to_string(cfg.n_layers);
  m["config.d_model"] = std::to_string(cfg.d_model);
  m["config.n_heads"] = std::to_string(cfg.n_heads);
  m["config.n_kv_heads"] = std::to_string(cfg.n_kv_heads);
  m["config.d_ff"] = std::to_string(cfg.d_ff);
  m["config.vocab_size"] = std::to_string(cfg.vocab_size);
  m["config.rope_theta"] = real_to_text(cfg.rope_theta);
  m["config.rms_eps"] = real_to_text(cfg.rms_eps);
  m["config.max_seq_len"] = std::to_string(cfg.max_seq_len);
}

} // namespace layerlens
