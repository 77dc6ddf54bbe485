#pragma once

// Synthetic two-domain task-oriented dialogues (restaurant, hotel) and the
// versioned corpus file format.
//
// Corpus file: line-delimited JSON. Line 1 is a header
//   {"kind":"acn-dialogues","format_version":1,"pool":"train","dialogues":N}
// followed by exactly N dialogue lines
//   {"id":..., "goal":{...}, "turns":[{"user":..., "belief":{domain:{slot:value}},
//    "db":{"total":n,"records":[{"domain","name","attributes"}]},
//    "action":[[domain, act, slot, value], ...], "system":...}, ...]}

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "acn/dialogue.hpp"
#include "acn/kb.hpp"

namespace acn {

inline constexpr int kCorpusFormatVersion = 1;

enum class EntityPool { Train, Eval };
const char* to_string(EntityPool pool);
EntityPool entity_pool_from_string(const std::string& name);

struct GoalSpec {
  std::string domain;
  SlotValues constraints;              // informable slot -> value
  std::vector<std::string> requested;  // requestable slots
  std::string entity;                  // name the system is expected to offer
  bool operator==(const GoalSpec&) const = default;
};

struct Dialogue {
  std::string id;
  GoalSpec goal;
  std::vector<DialogueTurn> turns;
  bool operator==(const Dialogue&) const = default;
};

struct CorpusFile {
  int format_version = kCorpusFormatVersion;
  std::string pool = "train";
  std::vector<Dialogue> dialogues;
  bool operator==(const CorpusFile&) const = default;
};

struct SyntheticData {
  CorpusFile corpus;
  Database db;
};

// Informable and requestable slots per domain.
const std::vector<std::string>& domain_names();
const std::vector<std::string>& informable_slots(const std::string& domain);
const std::vector<std::string>& requestable_slots(const std::string& domain);

inline constexpr std::size_t kEntitiesPerDomain = 40;

// The entity database of a pool; fixed per pool, independent of any seed.
// Entity names, phone numbers and postcodes of the two pools are disjoint.
Database pool_database(EntityPool pool);

// 1-4 user turns per dialogue, deterministic for a given seed.
SyntheticData generate_synthetic(std::uint64_t seed, std::size_t n_dialogues, EntityPool pool);

// Free-running prose and chat about a pool's entities, without any of the
// Belief/Database/Action structure lines. Used to pretrain the backbone.
std::vector<std::string> generate_pretraining_text(std::uint64_t seed, std::size_t n_documents, EntityPool pool);

// Throws ParseError naming the dialogue and turn that breaks an invariant:
// non-empty utterances, goal entity satisfying its constraints, and every
// turn's database results equal to lookup(db, belief).
void validate_corpus(const CorpusFile& corpus, const Database& db);

std::string serialize_corpus(const CorpusFile& corpus);
CorpusFile parse_corpus(const std::string& text, const std::string& source = "<corpus>");
void save_corpus(const CorpusFile& corpus, const std::string& path);
// Parses and, when db is given, validates.
CorpusFile load_corpus(const std::string& path, const Database* db = nullptr);

// Partition by whole dialogues. train_ratio in [0,1]; the rest goes to dev.
std::pair<CorpusFile, CorpusFile> split_corpus(const CorpusFile& corpus, double train_ratio, std::uint64_t seed);

// Names, phone numbers and postcodes of every record in the database.
std::vector<std::string> entity_lexicon(const Database& db);

// Structural check of a MultiWOZ-style JSON file: an object of dialogues,
// each with a "log" array whose entries carry "text" and "metadata".
// Returns the number of dialogues; throws ParseError otherwise.
std::size_t check_multiwoz_structure(const std::string& json_text);

}  // namespace acn
