#include "doctest.h"

#include <cstdio>

#include "acn/corpus.hpp"
#include "acn/pipeline.hpp"
#include "acn/random.hpp"
#include "acn/textcodec.hpp"

using namespace acn;

TEST_CASE("byte vocabulary encodes every byte as itself") {
  Vocab v;
  CHECK(v.size() == 256);
  const std::string s("\x00\xff a\n", 5);
  auto ids = v.encode(s);
  CHECK(ids == std::vector<TokenId>{0, 255, 32, 97, 10});
  CHECK(v.decode(ids) == s);
  CHECK(v.encode("").empty());
  const std::vector<TokenId> bad = {256};
  CHECK_THROWS_AS(v.decode(bad), ParseError);
}

TEST_CASE("encoding is greedy longest match") {
  std::vector<std::string> toks;
  for (int b = 0; b < 256; ++b) toks.emplace_back(1, static_cast<char>(b));
  toks.push_back("ab");
  toks.push_back("abc");
  Vocab v(toks);
  CHECK(v.encode("abcab") == std::vector<TokenId>{257, 256});
  CHECK(v.encode("abd") == std::vector<TokenId>{256, 'd'});
  CHECK(v.find("abc") == 257);
  CHECK(v.find("zz") == -1);
  toks.push_back("ab");
  CHECK_THROWS_AS(Vocab{toks}, ParseError);
  CHECK_THROWS_AS(Vocab(std::vector<std::string>{"a"}), ParseError);
}

TEST_CASE("pair merging picks the most frequent pair, ties lexicographically") {
  // Chunks carry their leading space, so here " c", "ab" and "cd" all occur
  // three times and the space-initial pair wins the tie.
  Vocab v = train_vocab({"ab ab ab cd cd cd"}, 258);
  REQUIRE(v.size() == 258);
  CHECK(v.token(256) == " c");
  CHECK(v.token(257) == " cd");
  Vocab u = train_vocab({"cd", "ab", "cd", "ab", "ab"}, 258);
  CHECK(u.token(256) == "ab");
  CHECK(u.token(257) == "cd");
  // Merging stops once no pair occurs twice.
  Vocab w = train_vocab({"xy"}, 300);
  CHECK(w.size() == 256);
  CHECK_THROWS_AS(train_vocab({"x"}, 100), ConfigError);
  CHECK(train_vocab({"ab ab ab cd cd cd"}, 258) == v);
}

TEST_CASE("pretokenizer keeps leading spaces with the following run") {
  auto chunks = pretokenize("hi there,  x\n");
  std::vector<std::string> s(chunks.begin(), chunks.end());
  std::string joined;
  for (const auto& c : s) joined += c;
  CHECK(joined == "hi there,  x\n");
  CHECK(s.front() == "hi");
}

TEST_CASE("vocabulary file round trip preserves ids and hash") {
  auto data = generate_synthetic(3, 10, EntityPool::Train);
  Vocab v = train_vocab(vocab_training_texts(data.corpus, {"odd \\ bytes \x01\x7f\xc3\xa9"}), 400);
  const std::string text = v.serialize();
  Vocab back = Vocab::parse(text);
  CHECK(back == v);
  CHECK(back.hash() == v.hash());
  CHECK(back.serialize() == text);
  CHECK_THROWS_AS(Vocab::parse("\\q\n"), ParseError);
  const std::string path = "test_vocab_roundtrip.txt";
  v.save(path);
  CHECK(Vocab::load(path) == v);
  std::remove(path.c_str());
}

TEST_CASE("decode inverts encode on the corpus and on random bytes") {
  auto data = generate_synthetic(4, 30, EntityPool::Train);
  const auto texts = vocab_training_texts(data.corpus, generate_pretraining_text(5, 20, EntityPool::Train));
  Vocab v = train_vocab(texts, 512);
  for (const auto& t : texts) CHECK(v.decode(v.encode(t)) == t);
  auto eval = generate_synthetic(6, 10, EntityPool::Eval);
  for (const auto& t : vocab_training_texts(eval.corpus, {})) CHECK(v.decode(v.encode(t)) == t);
  Rng rng(11);
  std::size_t failures = 0;
  for (int i = 0; i < 10000; ++i) {
    std::string s(rng.below(40), '\0');
    for (auto& c : s) c = static_cast<char>(rng.below(256));
    if (v.decode(v.encode(s)) != s) ++failures;
  }
  CHECK(failures == 0);
}
