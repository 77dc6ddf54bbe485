#pragma once

// Dialogue metrics and the corpus evaluation driver.

#include <string>
#include <vector>

#include "acn/corpus.hpp"
#include "acn/inference.hpp"

namespace acn {

// Fraction of turns whose normalized belief states are equal.
double joint_accuracy(const std::vector<BeliefState>& pred, const std::vector<BeliefState>& gold);

struct InformSuccess {
  double inform = 0.0;
  double success = 0.0;
  std::size_t dialogues = 0;
};

// responses[d] holds the generated system responses of dialogue d. Inform:
// some entity satisfying the goal constraints is named. Success: inform and
// every requested slot value of the goal entity appears.
InformSuccess inform_success(const std::vector<Dialogue>& dialogues,
                             const std::vector<std::vector<std::string>>& responses, const Database& db);

// Corpus BLEU-4 over whitespace tokens with add-one smoothing on orders 2-4
// and a brevity penalty.
double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references);

// (inform + success) * 0.5 + bleu, all on the 0-100 scale.
double combined_score(double inform_pct, double success_pct, double bleu_pts);

struct EntityScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t mentioned = 0;  // entity mentions in responses
  std::size_t supported = 0;  // ... of which appear in the allowed sources
  std::size_t required = 0;   // entity mentions in the gold responses
  std::size_t recalled = 0;   // ... of which the response also mentions
};

// Lexicon strings found in text, longest match first, non-overlapping, on
// word boundaries.
std::vector<std::string> entity_mentions(const std::string& text, const std::vector<std::string>& lexicon);

// Micro-averaged over turns; sources[i] is the text the i-th response may
// copy from (database results and dialogue history).
EntityScores entity_consistency(const std::vector<std::string>& responses, const std::vector<std::string>& sources,
                                const std::vector<std::string>& gold_responses, const std::vector<std::string>& lexicon);

struct EvalReport {
  double joint_accuracy = 0.0;
  double inform = 0.0;
  double success = 0.0;
  double bleu = 0.0;
  double combined = 0.0;  // percent scale
  EntityScores entity;
  double parse_rate = 0.0;
  std::size_t dialogues = 0;
  std::size_t turns = 0;
  std::size_t parsed_turns = 0;
  std::size_t belief_matches = 0;

  std::string to_json() const;
  std::string to_text() const;
};

struct TurnPrediction {
  std::string dialogue_id;
  std::size_t turn = 0;
  TurnResult result;
};

// Runs respond() on every turn with the gold history, then scores. The
// lexicon used for entity consistency should cover every pool the model may
// have seen, so invented entities are recognised.
EvalReport evaluate_corpus(const Model& model, const Vocab& vocab, const Database& db, const CorpusFile& corpus,
                           const std::vector<std::string>& lexicon, const StageLimits& limits = {},
                           std::vector<TurnPrediction>* predictions = nullptr);

}  // namespace acn
