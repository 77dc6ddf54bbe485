#include "acn/textcodec.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "acn/errors.hpp"

namespace acn {

namespace {

enum class CharClass { Letter, Digit, Space, Other };

CharClass classify(unsigned char c) {
  if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80) return CharClass::Letter;
  if (c >= '0' && c <= '9') return CharClass::Digit;
  if (c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\v' || c == '\f') return CharClass::Space;
  return CharClass::Other;
}

}  // namespace

std::vector<std::string_view> pretokenize(std::string_view text) {
  std::vector<std::string_view> chunks;
  const std::size_t n = text.size();
  std::size_t i = 0;
  auto cls = [&](std::size_t k) { return classify(static_cast<unsigned char>(text[k])); };
  while (i < n) {
    const std::size_t start = i;
    if (text[i] == ' ' && i + 1 < n && cls(i + 1) != CharClass::Space) ++i;
    const CharClass c = cls(i);
    if (c == CharClass::Space) {
      while (i < n && cls(i) == CharClass::Space) {
        // Leave a single space that introduces the next word to that word.
        if (text[i] == ' ' && i > start && i + 1 < n && cls(i + 1) != CharClass::Space) break;
        ++i;
      }
    } else {
      while (i < n && cls(i) == c) ++i;
    }
    chunks.push_back(text.substr(start, i - start));
  }
  return chunks;
}

Vocab::Vocab() {
  tokens_.reserve(256);
  for (int b = 0; b < 256; ++b) tokens_.emplace_back(1, static_cast<char>(b));
  build_index();
}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 256) throw ParseError("vocab", "needs the 256 byte tokens, got " + std::to_string(tokens_.size()));
  for (int b = 0; b < 256; ++b) {
    if (tokens_[static_cast<std::size_t>(b)] != std::string(1, static_cast<char>(b))) {
      throw ParseError("vocab", "entry " + std::to_string(b) + " must be the single byte " + std::to_string(b));
    }
  }
  build_index();
}

std::int32_t Vocab::child(std::int32_t node, unsigned char byte) const {
  const auto& kids = trie_[static_cast<std::size_t>(node)].children;
  auto it = std::lower_bound(kids.begin(), kids.end(), byte,
                             [](const auto& entry, unsigned char b) { return entry.first < b; });
  if (it == kids.end() || it->first != byte) return -1;
  return it->second;
}

void Vocab::build_index() {
  trie_.assign(1, TrieNode{});
  for (std::size_t id = 0; id < tokens_.size(); ++id) {
    const std::string& tok = tokens_[id];
    if (tok.empty()) throw ParseError("vocab", "empty token at id " + std::to_string(id));
    std::int32_t node = 0;
    for (unsigned char c : tok) {
      std::int32_t next = child(node, c);
      if (next < 0) {
        next = static_cast<std::int32_t>(trie_.size());
        auto& kids = trie_[static_cast<std::size_t>(node)].children;
        auto it = std::lower_bound(kids.begin(), kids.end(), c,
                                   [](const auto& entry, unsigned char b) { return entry.first < b; });
        kids.insert(it, {c, next});
        trie_.emplace_back();
      }
      node = next;
    }
    auto& slot = trie_[static_cast<std::size_t>(node)].id;
    if (slot >= 0) throw ParseError("vocab", "duplicate token at id " + std::to_string(id));
    slot = static_cast<TokenId>(id);
  }
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ParseError("decode", "unknown token id " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocab::find(std::string_view token) const {
  std::int32_t node = 0;
  for (unsigned char c : token) {
    node = child(node, c);
    if (node < 0) return -1;
  }
  return token.empty() ? -1 : trie_[static_cast<std::size_t>(node)].id;
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  ids.reserve(text.size() / 2 + 1);
  std::size_t i = 0;
  while (i < text.size()) {
    std::int32_t node = 0;
    TokenId best = -1;
    std::size_t best_len = 0;
    for (std::size_t j = i; j < text.size(); ++j) {
      node = child(node, static_cast<unsigned char>(text[j]));
      if (node < 0) break;
      const TokenId id = trie_[static_cast<std::size_t>(node)].id;
      if (id >= 0) {
        best = id;
        best_len = j - i + 1;
      }
    }
    ids.push_back(best);  // single bytes always match
    i += best_len;
  }
  return ids;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) out += token(id);
  return out;
}

std::string Vocab::serialize() const {
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (const auto& tok : tokens_) {
    for (unsigned char c : tok) {
      if (c == '\\') {
        out += "\\\\";
      } else if (c > 0x20 && c < 0x7f) {
        out += static_cast<char>(c);
      } else {
        out += "\\x";
        out += hex[c >> 4];
        out += hex[c & 0xf];
      }
    }
    out += '\n';
  }
  return out;
}

Vocab Vocab::parse(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  auto hexval = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  while (pos < text.size()) {
    ++line_no;
    const std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) throw ParseError("vocab line " + std::to_string(line_no), "missing newline");
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    std::string tok;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] != '\\') {
        tok += line[i];
        continue;
      }
      if (i + 1 < line.size() && line[i + 1] == '\\') {
        tok += '\\';
        ++i;
      } else if (i + 3 < line.size() && line[i + 1] == 'x' && hexval(line[i + 2]) >= 0 && hexval(line[i + 3]) >= 0) {
        tok += static_cast<char>(hexval(line[i + 2]) * 16 + hexval(line[i + 3]));
        i += 3;
      } else {
        throw ParseError("vocab line " + std::to_string(line_no), "bad escape sequence");
      }
    }
    if (tok.empty()) throw ParseError("vocab line " + std::to_string(line_no), "empty token");
    tokens.push_back(std::move(tok));
  }
  return Vocab(std::move(tokens));
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path, "cannot open for writing");
  out << serialize();
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, "cannot open vocab file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : serialize()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Vocab train_vocab(const std::vector<std::string>& corpus, std::size_t target_size) {
  if (target_size < 256) throw ConfigError("train_vocab: target_size must be >= 256, got " + std::to_string(target_size));
  std::map<std::string, std::size_t> chunk_counts;
  for (const auto& text : corpus) {
    for (auto chunk : pretokenize(text)) ++chunk_counts[std::string(chunk)];
  }
  std::vector<std::string> tokens;
  for (int b = 0; b < 256; ++b) tokens.emplace_back(1, static_cast<char>(b));
  std::map<std::string, TokenId> index;
  for (std::size_t i = 0; i < tokens.size(); ++i) index[tokens[i]] = static_cast<TokenId>(i);

  struct Word {
    std::vector<TokenId> symbols;
    std::size_t count;
  };
  std::vector<Word> words;
  for (const auto& [chunk, count] : chunk_counts) {
    Word w{{}, count};
    for (unsigned char c : chunk) w.symbols.push_back(c);
    words.push_back(std::move(w));
  }

  while (tokens.size() < target_size) {
    std::map<std::pair<TokenId, TokenId>, std::size_t> pairs;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) pairs[{w.symbols[i], w.symbols[i + 1]}] += w.count;
    }
    const std::pair<TokenId, TokenId>* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [pair, count] : pairs) {
      if (count < 2) continue;
      bool better = count > best_count;
      if (!better && count == best_count && best) {
        const auto& bl = tokens[static_cast<std::size_t>(best->first)];
        const auto& br = tokens[static_cast<std::size_t>(best->second)];
        const auto& cl = tokens[static_cast<std::size_t>(pair.first)];
        const auto& cr = tokens[static_cast<std::size_t>(pair.second)];
        better = std::tie(cl, cr) < std::tie(bl, br);
      }
      if (better) {
        best = &pair;
        best_count = count;
      }
    }
    if (!best) break;
    const auto [left, right] = *best;
    const std::string merged = tokens[static_cast<std::size_t>(left)] + tokens[static_cast<std::size_t>(right)];
    TokenId merged_id;
    if (auto it = index.find(merged); it != index.end()) {
      merged_id = it->second;
    } else {
      merged_id = static_cast<TokenId>(tokens.size());
      tokens.push_back(merged);
      index[merged] = merged_id;
    }
    for (auto& w : words) {
      std::vector<TokenId> next;
      next.reserve(w.symbols.size());
      for (std::size_t i = 0; i < w.symbols.size(); ++i) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == left && w.symbols[i + 1] == right) {
          next.push_back(merged_id);
          ++i;
        } else {
          next.push_back(w.symbols[i]);
        }
      }
      w.symbols = std::move(next);
    }
  }
  return Vocab(std::move(tokens));
}

}  // namespace acn
