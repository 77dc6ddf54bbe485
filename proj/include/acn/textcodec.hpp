#pragma once

// Byte-level subword codec. The 256 single-byte tokens are always present,
// so every byte string has an encoding and decode(encode(s)) == s.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "acn/ops.hpp"

namespace acn {

class Vocab {
 public:
  // Pure byte vocabulary: id b is the single byte b.
  Vocab();
  // Ids follow list order; the first 256 entries must be the single bytes 0..255.
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  // -1 when absent.
  TokenId find(std::string_view token) const;

  // Greedy longest match, left to right.
  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  // One token per line, rank = line number. Printable ASCII other than
  // backslash is written verbatim, every other byte as \xHH, backslash as \\.
  std::string serialize() const;
  static Vocab parse(std::string_view text);
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  // FNV-1a over serialize().
  std::uint64_t hash() const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  struct TrieNode {
    std::vector<std::pair<unsigned char, std::int32_t>> children;  // sorted by byte
    TokenId id = -1;
  };
  void build_index();
  std::int32_t child(std::int32_t node, unsigned char byte) const;

  std::vector<std::string> tokens_;
  std::vector<TrieNode> trie_;
};

// Splits text into chunks that merges never cross: an optional leading
// space followed by a run of letters, digits, or punctuation; or a run of
// other whitespace.
std::vector<std::string_view> pretokenize(std::string_view text);

// Frequency-driven pair merging over bytes within pretokenized chunks until
// the vocabulary reaches target_size or no adjacent pair occurs twice. Ties
// go to the lexicographically smallest (left, right) byte-string pair.
Vocab train_vocab(const std::vector<std::string>& corpus, std::size_t target_size);

}  // namespace acn
