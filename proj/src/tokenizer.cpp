#include "layerlens/tokenizer.hpp"

#include "layerlens/bundle.hpp"
#include "layerlens/errors.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace layerlens {

namespace {

constexpr int k_pad_id = 0;
constexpr int k_bos_id = 1;
constexpr int k_eos_id = 2;

bool needs_escape(unsigned char c) {
  return c <= 0x20 || c >= 0x7f || c == '\\';
}

int parse_hex_digit(char c) {
  if (c >= '0' && c <= '9')
    return c - '0';
  if (c >= 'a' && c <= 'f')
    return c - 'a' + 10;
  if (c >= 'A' && c <= 'F')
    return c - 'A' + 10;
  return -1;
}

} // namespace

std::string escape_token(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (unsigned char c : raw) {
    if (needs_escape(c)) {
      char buf[5];
      std::snprintf(buf, sizeof buf, "\\x%02x", c);
      out += buf;
    } else {
      out.push_back(static_cast<char>(c));
    }
  }
  return out;
}

std::string unescape_token(std::string_view escaped) {
  std::string out;
  out.reserve(escaped.size());
  for (std::size_t i = 0; i < escaped.size(); ++i) {
    if (escaped[i] != '\\') {
      out.push_back(escaped[i]);
      continue;
    }
    if (i + 3 >= escaped.size() || escaped[i + 1] != 'x')
      throw format_error("bad byte escape in token: " + std::string(escaped));
    const int hi = parse_hex_digit(escaped[i + 2]);
    const int lo = parse_hex_digit(escaped[i + 3]);
    if (hi < 0 || lo < 0)
      throw format_error("bad byte escape in token: " + std::string(escaped));
    out.push_back(static_cast<char>(hi * 16 + lo));
    i += 3;
  }
  return out;
}

tokenizer byte_fallback_tokenizer(std::size_t vocab_size) {
  if (vocab_size < 259)
    throw config_error("byte fallback tokenizer needs vocab_size >= 259");
  tokenizer t;
  t.byte_fallback_ = true;
  t.bos_id_ = k_bos_id;
  t.eos_id_ = k_eos_id;
  t.id_to_token_.resize(vocab_size);
  t.id_to_token_[k_pad_id] = "<pad>";
  t.id_to_token_[k_bos_id] = "<s>";
  t.id_to_token_[k_eos_id] = "</s>";
  for (int b = 0; b < 256; ++b)
    t.id_to_token_[b + 3] = std::string(1, static_cast<char>(b));
  for (std::size_t i = 259; i < vocab_size; ++i)
    t.id_to_token_[i] = "<unused_" + std::to_string(i) + ">";
  for (std::size_t i = 0; i < vocab_size; ++i)
    t.token_to_id_.emplace(t.id_to_token_[i], static_cast<int>(i));
  return t;
}

tokenizer load_bpe(const std::string &vocab_text,
                   const std::string &merges_text) {
  tokenizer t;
  std::map<int, std::string> by_id;
  {
    std::istringstream in(vocab_text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r')
        line.pop_back();
      if (line.empty())
        continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw format_error("vocab line " + std::to_string(line_no) +
                           ": expected id<TAB>token");
      int id = -1;
      const auto res =
          std::from_chars(line.data(), line.data() + tab, id);
      if (res.ec != std::errc() || res.ptr != line.data() + tab || id < 0)
        throw format_error("vocab line " + std::to_string(line_no) +
                           ": bad id");
      if (by_id.count(id))
        throw format_error("vocab line " + std::to_string(line_no) +
                           ": duplicate id " + std::to_string(id));
      by_id[id] = unescape_token(std::string_view(line).substr(tab + 1));
    }
  }
  if (by_id.empty())
    throw format_error("empty vocab file");
  const int max_id = by_id.rbegin()->first;
  // token <-> id must be a bijection over [0, vocab_size): no gaps.
  if (by_id.size() != static_cast<std::size_t>(max_id) + 1)
    throw format_error("vocab ids are not dense over [0, " +
                       std::to_string(max_id + 1) + ")");
  t.id_to_token_.resize(static_cast<std::size_t>(max_id) + 1);
  for (auto &[id, tok] : by_id) {
    t.id_to_token_[static_cast<std::size_t>(id)] = tok;
    if (!t.token_to_id_.emplace(tok, id).second)
      throw format_error("duplicate vocab token string: " + escape_token(tok));
  }

  {
    std::istringstream in(merges_text);
    std::string line;
    int rank = 0;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r')
        line.pop_back();
      if (line.empty())
        continue;
      const auto sp = line.find(' ');
      if (sp == std::string::npos)
        throw format_error("merges line " + std::to_string(line_no) +
                           ": expected left<SPACE>right");
      const std::string left = unescape_token(line.substr(0, sp));
      const std::string right = unescape_token(line.substr(sp + 1));
      if (!t.token_to_id_.count(left) || !t.token_to_id_.count(right))
        throw format_error("merges line " + std::to_string(line_no) +
                           ": unknown token");
      if (!t.token_to_id_.count(left + right))
        throw format_error("merges line " + std::to_string(line_no) +
                           ": merged token not in vocab");
      t.merges_.emplace(std::make_pair(left, right), rank);
      ++rank;
    }
  }

  const auto bos = t.token_to_id_.find("<s>");
  const auto eos = t.token_to_id_.find("</s>");
  t.bos_id_ = bos != t.token_to_id_.end() ? bos->second : k_bos_id;
  t.eos_id_ = eos != t.token_to_id_.end() ? eos->second : k_eos_id;
  if (t.bos_id_ >= static_cast<int>(t.vocab_size()) ||
      t.eos_id_ >= static_cast<int>(t.vocab_size()))
    throw format_error("special ids out of range");
  return t;
}

namespace {
std::string read_text_file(const std::filesystem::path &p) {
  std::ifstream in(p, std::ios::binary);
  if (!in)
    throw io_error("cannot open: " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}
} // namespace

tokenizer load_bpe_files(const std::filesystem::path &vocab_file,
                         const std::filesystem::path &merges_file) {
  return load_bpe(read_text_file(vocab_file), read_text_file(merges_file));
}

tokenizer tokenizer_for_bundle(const model_bundle &bundle) {
  if (!bundle.tokenizer_vocab.empty())
    return load_bpe(bundle.tokenizer_vocab, bundle.tokenizer_merges);
  return byte_fallback_tokenizer(bundle.config.vocab_size);
}

std::vector<int> tokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  if (text.empty())
    return out;

  if (is_byte_fallback()) {
    out.reserve(text.size());
    for (unsigned char c : text)
      out.push_back(static_cast<int>(c) + 3);
    return out;
  }

  // Start from single bytes, then repeatedly apply the lowest-rank merge
  // present anywhere in the sequence, merging all its occurrences
  // left-to-right.
  std::vector<std::string> units;
  units.reserve(text.size());
  for (char c : text)
    units.emplace_back(1, c);

  while (units.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    for (std::size_t i = 0; i + 1 < units.size(); ++i) {
      const auto it = merges_.find({units[i], units[i + 1]});
      if (it != merges_.end() && it->second < best_rank)
        best_rank = it->second;
    }
    if (best_rank == std::numeric_limits<int>::max())
      break;
    std::vector<std::string> next;
    next.reserve(units.size());
    for (std::size_t i = 0; i < units.size();) {
      if (i + 1 < units.size()) {
        const auto it = merges_.find({units[i], units[i + 1]});
        if (it != merges_.end() && it->second == best_rank) {
          next.push_back(units[i] + units[i + 1]);
          i += 2;
          continue;
        }
      }
      next.push_back(units[i]);
      ++i;
    }
    units.swap(next);
  }

  out.reserve(units.size());
  for (const auto &u : units) {
    const auto it = token_to_id_.find(u);
    if (it == token_to_id_.end())
      throw format_error("no vocab entry for unit: " + escape_token(u));
    out.push_back(it->second);
  }
  return out;
}

std::string tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= static_cast<int>(vocab_size()))
      throw decode_error("token id out of range: " + std::to_string(id));
    // bos/eos render as empty strings. A vocab without explicit marker
    // entries has no renderable specials, so nothing is skipped.
    if ((id == bos_id_ || id == eos_id_) &&
        (id_to_token_[static_cast<std::size_t>(id)] == "<s>" ||
         id_to_token_[static_cast<std::size_t>(id)] == "</s>"))
      continue;
    out += id_to_token_[static_cast<std::size_t>(id)];
  }
  return out;
}

} // namespace layerlens
