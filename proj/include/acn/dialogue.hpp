#pragma once

// Structured dialogue semantics and their plain-text linearization.
//
// One training sequence per system turn:
//
//   User: <earlier user utterance>          (last <= 15 history turns)
//   System: <earlier system response>
//   User: <current utterance>
//   Belief: restaurant area = north, restaurant food = italian
//   Database: 2 matches. name = ..., area = ...; name = ..., ...
//   Action: restaurant inform phone 01223 456789; general reqmore
//   System: <response>
//
// Empty belief and action render as "none". Belief clauses are separated by
// ", " and actions by "; ", so values may not contain those separators.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "acn/ops.hpp"

namespace acn {

class Vocab;

using SlotValues = std::map<std::string, std::string>;

struct BeliefState {
  std::map<std::string, SlotValues> domains;  // canonical order: domain, then slot

  bool empty() const;
  std::size_t slot_count() const;
  void set(const std::string& domain, const std::string& slot, const std::string& value);
  // Lower-cased, whitespace-collapsed copy of every key and value.
  BeliefState normalized() const;
  bool operator==(const BeliefState&) const = default;
};

enum class ActType { Inform, Request, Book, Offer, Recommend, NoOffer, Greet, Bye };
inline constexpr std::array<ActType, 8> kAllActTypes = {ActType::Inform, ActType::Request, ActType::Book,
                                                        ActType::Offer,  ActType::Recommend, ActType::NoOffer,
                                                        ActType::Greet,  ActType::Bye};
const char* to_string(ActType type);
std::optional<ActType> act_type_from_string(std::string_view name);

struct DialogueAct {
  std::string domain;
  ActType type = ActType::Inform;
  std::string slot;   // may be empty (then value is empty too)
  std::string value;  // may be empty
  bool operator==(const DialogueAct&) const = default;
};

struct SystemAction {
  std::vector<DialogueAct> acts;
  bool operator==(const SystemAction&) const = default;
};

struct EntityRecord {
  std::string domain;
  std::string name;
  SlotValues attributes;  // includes "name"
  bool operator==(const EntityRecord&) const = default;
};

struct DialogueTurn {
  std::string user_utterance;
  BeliefState belief;
  std::vector<EntityRecord> db_results;  // at most three
  std::size_t db_total = 0;              // matches before truncation
  SystemAction action;
  std::string system_response;
  bool operator==(const DialogueTurn&) const = default;
};

inline constexpr std::size_t kMaxHistoryTurns = 15;

enum class Segment { History = 0, Belief, Database, Action, Response };
inline constexpr std::size_t kSegmentCount = 5;
const char* to_string(Segment segment);

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - begin; }
  bool operator==(const Span&) const = default;
};

struct LinearizedTurn {
  std::vector<TokenId> token_ids;
  std::vector<std::uint8_t> loss_mask;
  std::array<Span, kSegmentCount> spans;  // indexed by Segment

  const Span& span(Segment s) const { return spans[static_cast<std::size_t>(s)]; }
};

// Collects clauses a tolerant parse skipped.
struct ParseReport {
  std::vector<std::string> malformed;
  bool ok() const { return malformed.empty(); }
};

std::string belief_text(const BeliefState& belief);
std::string action_text(const SystemAction& action);
std::string history_text(const std::vector<DialogueTurn>& history, std::size_t max_history_turns = kMaxHistoryTurns);

// Per-segment text of one turn, in sequence order.
std::array<std::string, kSegmentCount> turn_segments(const std::vector<DialogueTurn>& history,
                                                     const DialogueTurn& current,
                                                     std::size_t max_history_turns = kMaxHistoryTurns);
std::string serialize_turn(const std::vector<DialogueTurn>& history, const DialogueTurn& current,
                           std::size_t max_history_turns = kMaxHistoryTurns);

// Each parser reads the remainder of the line after the last occurrence of
// its marker ("Belief:", "Action:", "System:"). A missing marker throws
// ParseError. Without a report, a malformed clause throws; with one, it is
// skipped and recorded.
BeliefState parse_belief(std::string_view text, ParseReport* report = nullptr);
SystemAction parse_action(std::string_view text, ParseReport* report = nullptr);
std::string extract_response(std::string_view text);

// Tokenizes each segment separately so span boundaries are exact.
LinearizedTurn linearize_turn(const Vocab& vocab, const std::vector<DialogueTurn>& history,
                              const DialogueTurn& current, std::size_t max_history_turns = kMaxHistoryTurns);

// 1 everywhere except the database segment. Throws ParseError when spans
// overlap or fail to cover the sequence in order.
std::vector<std::uint8_t> build_loss_mask(const LinearizedTurn& turn);

// Lower-case and collapse runs of whitespace; trims both ends.
std::string normalize_value(std::string_view text);

}  // namespace acn
