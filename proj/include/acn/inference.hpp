#pragma once

// Staged greedy decoding: belief, database splice, action, response.

#include <string>
#include <vector>

#include "acn/decoder.hpp"
#include "acn/dialogue.hpp"
#include "acn/kb.hpp"
#include "acn/model.hpp"
#include "acn/textcodec.hpp"

namespace acn {

struct StageLimits {
  std::size_t belief = 64;
  std::size_t action = 48;
  std::size_t response = 96;
};

enum class Stage { Belief, Database, Action, Response, Done };
const char* to_string(Stage stage);

class GenerationState {
 public:
  GenerationState(std::vector<TokenId> context, StageLimits limits, std::size_t max_positions);

  const std::vector<TokenId>& context() const { return context_; }
  Stage stage() const { return stage_; }
  const StageLimits& limits() const { return limits_; }

  // Throws LengthError past max_positions.
  void append(const std::vector<TokenId>& ids);
  // Moves forward in Belief, Database, Action, Response, Done order only.
  void advance(Stage next);

 private:
  std::vector<TokenId> context_;
  Stage stage_ = Stage::Belief;
  StageLimits limits_;
  std::size_t max_positions_;
};

struct TokenDiagnostic {
  TokenId id = 0;
  std::string text;
  double gate = 0.0;        // g_c at the step that emitted the token
  double copy_share = 0.0;  // g_c * copy probability of the emitted token
};

struct Generation {
  std::string text;  // includes the stop text when it was reached
  std::vector<TokenId> tokens;
  std::vector<TokenDiagnostic> diagnostics;
  bool stopped = false;
};

// Greedy argmax over the mixed distribution (lowest id wins ties) until the
// decoded text ends with stop_text or max_new_tokens are produced. A context
// that already ends with stop_text yields an empty generation.
Generation generate_until(const Model& model, const Vocab& vocab, const std::vector<TokenId>& context,
                          const std::string& stop_text, std::size_t max_new_tokens);
// Same, continuing on a decoder whose cache already holds the context.
Generation generate_until(IncrementalDecoder& decoder, const Vocab& vocab, const std::string& stop_text,
                          std::size_t max_new_tokens);

// Raised in strict mode when a generated belief or action line does not parse.
class GenerationError : public ParseError {
 public:
  GenerationError(Stage stage, std::string raw, const std::string& what);
  Stage stage() const { return stage_; }
  const std::string& raw() const { return raw_; }

 private:
  Stage stage_;
  std::string raw_;
};

struct TurnResult {
  BeliefState belief;
  std::string belief_line;  // raw generated text after "Belief:"
  QueryResult db;
  std::string db_text;
  SystemAction action;
  std::string action_line;
  std::string response;
  std::vector<TokenDiagnostic> diagnostics;  // one per generated response token
  ParseReport belief_report, action_report;
  bool parse_ok() const { return belief_report.ok() && action_report.ok(); }
};

// Runs the staged pipeline for one user utterance. In strict mode malformed
// belief or action lines raise GenerationError; otherwise they are skipped
// and listed in the reports.
TurnResult respond(const Model& model, const Vocab& vocab, const Database& db, const std::vector<DialogueTurn>& history,
                   const std::string& user_utterance, const StageLimits& limits = {}, bool strict = true);

}  // namespace acn
