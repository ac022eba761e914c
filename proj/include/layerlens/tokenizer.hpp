#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace layerlens {

struct model_bundle;

// Immutable text <-> id mapping. Two flavours: a byte-level fallback for
// fixture models (ids 0/1/2 = pad/bos/eos, byte b -> id b+3) and a
// byte-pair-encoding table loaded from vocab/merges text files.
class tokenizer {
public:
  std::size_t vocab_size() const { return id_to_token_.size(); }
  int bos_id() const { return bos_id_; }
  int eos_id() const { return eos_id_; }
  bool is_byte_fallback() const { return merges_.empty() && byte_fallback_; }

  // Deterministic; never inserts bos/eos (callers add specials).
  std::vector<int> encode(std::string_view text) const;

  // Concatenates token strings; bos/eos render as empty strings.
  // Throws decode_error on an out-of-range id.
  std::string decode(std::span<const int> ids) const;

  friend tokenizer byte_fallback_tokenizer(std::size_t vocab_size);
  friend tokenizer load_bpe(const std::string &vocab_text,
                            const std::string &merges_text);

private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  std::map<std::pair<std::string, std::string>, int> merges_; // pair -> rank
  int bos_id_ = 1;
  int eos_id_ = 2;
  bool byte_fallback_ = false;
};

tokenizer byte_fallback_tokenizer(std::size_t vocab_size);

// vocab_text: "id<TAB>token" lines, "\xNN" escapes for bytes <= 0x20,
// >= 0x7f and backslash. merges_text: "left right" per line, rank = line
// number. Throws format_error on violations.
tokenizer load_bpe(const std::string &vocab_text,
                   const std::string &merges_text);
tokenizer load_bpe_files(const std::filesystem::path &vocab_file,
                         const std::filesystem::path &merges_file);

// BPE when the bundle carries tokenizer assets, byte fallback otherwise.
tokenizer tokenizer_for_bundle(const model_bundle &bundle);

// The escape convention shared by vocab and merges files.
std::string escape_token(std::string_view raw);
std::string unescape_token(std::string_view escaped);

} // namespace layerlens
