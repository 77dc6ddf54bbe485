#include "doctest.h"

#include <algorithm>
#include <cstdio>
#include <set>

#include "acn/corpus.hpp"
#include "acn/pipeline.hpp"

using namespace acn;

TEST_CASE("generation is deterministic per seed") {
  auto a = generate_synthetic(42, 20, EntityPool::Train);
  auto b = generate_synthetic(42, 20, EntityPool::Train);
  auto c = generate_synthetic(43, 20, EntityPool::Train);
  CHECK(a.corpus == b.corpus);
  CHECK(serialize_corpus(a.corpus) == serialize_corpus(b.corpus));
  CHECK_FALSE(a.corpus == c.corpus);
  CHECK(generate_pretraining_text(1, 5, EntityPool::Train) == generate_pretraining_text(1, 5, EntityPool::Train));
  CHECK_THROWS_AS(generate_synthetic(1, 0, EntityPool::Train), ConfigError);
}

TEST_CASE("dialogue shape: one to four turns, two domains, valid against the database") {
  auto data = generate_synthetic(7, 200, EntityPool::Train);
  std::set<std::string> domains;
  for (const auto& d : data.corpus.dialogues) {
    CHECK(d.turns.size() >= 1);
    CHECK(d.turns.size() <= 4);
    domains.insert(d.goal.domain);
    for (const auto& t : d.turns) CHECK(t.db_results.size() <= kMaxDbResults);
  }
  CHECK(domains == std::set<std::string>{"hotel", "restaurant"});
  CHECK_NOTHROW(validate_corpus(data.corpus, data.db));
  CHECK(data.db == pool_database(EntityPool::Train));
  CHECK(data.db.records("hotel").size() == kEntitiesPerDomain);
  CHECK(informable_slots("hotel").size() + requestable_slots("hotel").size() == 5);
  CHECK(informable_slots("restaurant").size() + requestable_slots("restaurant").size() == 5);
}

TEST_CASE("train and eval pools share no entity strings") {
  const auto train = entity_lexicon(pool_database(EntityPool::Train));
  const auto eval = entity_lexicon(pool_database(EntityPool::Eval));
  CHECK(train.size() == 3 * 2 * kEntitiesPerDomain);
  CHECK(eval.size() == 3 * 2 * kEntitiesPerDomain);
  std::vector<std::string> both;
  std::set_intersection(train.begin(), train.end(), eval.begin(), eval.end(), std::back_inserter(both));
  CHECK(both.empty());
  // No eval entity name appears inside the training pool's text either.
  const auto docs = generate_pretraining_text(3, 200, EntityPool::Train);
  auto tr = generate_synthetic(9, 100, EntityPool::Train);
  std::string all = serialize_corpus(tr.corpus);
  for (const auto& d : docs) all += d;
  for (const auto& e : eval) CHECK(all.find(e) == std::string::npos);
}

TEST_CASE("validator rejects broken corpora") {
  auto data = generate_synthetic(11, 5, EntityPool::Train);
  CorpusFile bad = data.corpus;
  bad.dialogues[0].turns[0].db_total += 1;
  CHECK_THROWS_AS(validate_corpus(bad, data.db), ParseError);
  bad = data.corpus;
  bad.dialogues[1].turns[0].user_utterance.clear();
  CHECK_THROWS_AS(validate_corpus(bad, data.db), ParseError);
  bad = data.corpus;
  bad.dialogues[2].goal.entity = "nobody";
  CHECK_THROWS_AS(validate_corpus(bad, data.db), ParseError);
  // Entities of the other pool are not in this database.
  CHECK_THROWS_AS(validate_corpus(data.corpus, pool_database(EntityPool::Eval)), ParseError);
}

TEST_CASE("corpus file round trip and truncation detection") {
  auto data = generate_synthetic(12, 8, EntityPool::Eval);
  const std::string text = serialize_corpus(data.corpus);
  CHECK(text.rfind("{\"kind\":\"acn-dialogues\",\"format_version\":1,\"pool\":\"eval\",\"dialogues\":8}\n", 0) == 0);
  CHECK(parse_corpus(text) == data.corpus);
  std::string cut = text.substr(0, text.rfind('\n', text.size() - 2) + 1);
  CHECK_THROWS_WITH_AS(parse_corpus(cut), doctest::Contains("truncated"), ParseError);
  std::string wrong = text;
  wrong.replace(wrong.find("\"format_version\":1"), 18, "\"format_version\":9");
  CHECK_THROWS_AS(parse_corpus(wrong), ParseError);
  CHECK_THROWS_AS(parse_corpus(""), ParseError);
  CHECK_THROWS_AS(parse_corpus("{\"kind\":\"other\"}\n"), ParseError);
  const std::string path = "test_corpus_roundtrip.jsonl";
  save_corpus(data.corpus, path);
  CHECK(load_corpus(path, &data.db) == data.corpus);
  std::remove(path.c_str());
}

TEST_CASE("split partitions whole dialogues deterministically") {
  auto data = generate_synthetic(13, 30, EntityPool::Train);
  auto [all, none] = split_corpus(data.corpus, 1.0, 5);
  CHECK(all == data.corpus);
  CHECK(none.dialogues.empty());
  auto [tr, dev] = split_corpus(data.corpus, 0.7, 5);
  auto [tr2, dev2] = split_corpus(data.corpus, 0.7, 5);
  CHECK(tr == tr2);
  CHECK(dev == dev2);
  CHECK(tr.dialogues.size() == 21);
  std::set<std::string> ids;
  for (const auto& d : tr.dialogues) ids.insert(d.id);
  for (const auto& d : dev.dialogues) CHECK(ids.insert(d.id).second);
  CHECK(ids.size() == 30);
  CHECK_THROWS_AS(split_corpus(data.corpus, 1.5, 1), ConfigError);
}

TEST_CASE("pretraining text carries no structure lines") {
  for (const auto& d : generate_pretraining_text(4, 100, EntityPool::Train)) {
    CHECK(d.find("Belief:") == std::string::npos);
    CHECK(d.find("Database:") == std::string::npos);
    CHECK(d.find("Action:") == std::string::npos);
  }
}

TEST_CASE("MultiWOZ structure check") {
  CHECK(check_multiwoz_structure(R"({"d1": {"log": [{"text": "hi", "metadata": {}}]}, "d2": {"log": []}})") == 2);
  CHECK_THROWS_AS(check_multiwoz_structure("[1]"), ParseError);
  CHECK_THROWS_AS(check_multiwoz_structure(R"({"d": {"log": [{"text": 1, "metadata": {}}]}})"), ParseError);
  CHECK_THROWS_AS(check_multiwoz_structure("{oops"), ParseError);
}

TEST_CASE("backbone documents: prose, then dialogue turns, then invented dialogues") {
  const auto prose = generate_pretraining_text(5, 3, EntityPool::Train);
  const auto dialogues = generate_synthetic(6, 4, EntityPool::Train);
  std::size_t turns = 0;
  for (const auto& d : dialogues.corpus.dialogues) turns += d.turns.size();
  const auto docs = backbone_documents(5, 3, 4);
  REQUIRE(docs.size() == prose.size() + turns);
  CHECK(std::equal(prose.begin(), prose.end(), docs.begin()));
  const auto& first = dialogues.corpus.dialogues[0].turns[0];
  CHECK(docs[prose.size()] == serialize_turn({}, first));

  const auto invented = invented_entity_dialogues(7, 4);
  const auto with_invented = backbone_documents(5, 3, 4, 4);
  REQUIRE(with_invented.size() == docs.size() + invented.size());
  CHECK(std::equal(invented.begin(), invented.end(), with_invented.begin() + static_cast<std::ptrdiff_t>(docs.size())));
  CHECK(backbone_documents(5, 0, 0, 0).empty());
}

TEST_CASE("invented-entity dialogues replace every name, phone and postcode") {
  const auto docs = invented_entity_dialogues(11, 12);
  CHECK(docs == invented_entity_dialogues(11, 12));
  const auto source = generate_synthetic(11, 12, EntityPool::Train);
  std::size_t turns = 0;
  for (const auto& d : source.corpus.dialogues) turns += d.turns.size();
  REQUIRE(docs.size() == turns);
  std::size_t i = 0;
  for (const auto& dlg : source.corpus.dialogues) {
    std::vector<DialogueTurn> history;
    for (const auto& turn : dlg.turns) {
      const std::string original = serialize_turn(history, turn);
      const std::string& renamed = docs[i++];
      // The structure survives: same line prefixes.
      CHECK(std::count(renamed.begin(), renamed.end(), '\n') == std::count(original.begin(), original.end(), '\n'));
      for (const auto& domain : source.db.domains()) {
        for (const auto& rec : source.db.records(domain)) {
          CHECK(renamed.find(rec.name) == std::string::npos);
          CHECK(renamed.find(rec.attributes.at("phone")) == std::string::npos);
          CHECK(renamed.find(rec.attributes.at("postcode")) == std::string::npos);
        }
      }
      history.push_back(turn);
    }
  }
}
