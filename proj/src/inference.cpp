#include "acn/inference.hpp"

#include "acn/errors.hpp"

namespace acn {

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::Belief: return "belief";
    case Stage::Database: return "db";
    case Stage::Action: return "action";
    case Stage::Response: return "response";
    case Stage::Done: return "done";
  }
  return "?";
}

GenerationState::GenerationState(std::vector<TokenId> context, StageLimits limits, std::size_t max_positions)
    : context_(std::move(context)), limits_(limits), max_positions_(max_positions) {
  if (context_.size() > max_positions_) {
    throw LengthError("generation context of " + std::to_string(context_.size()) + " tokens exceeds max_positions " +
                      std::to_string(max_positions_));
  }
}

void GenerationState::append(const std::vector<TokenId>& ids) {
  if (context_.size() + ids.size() > max_positions_) {
    throw LengthError("generation context would grow to " + std::to_string(context_.size() + ids.size()) +
                      " tokens, past max_positions " + std::to_string(max_positions_));
  }
  context_.insert(context_.end(), ids.begin(), ids.end());
}

void GenerationState::advance(Stage next) {
  if (static_cast<int>(next) <= static_cast<int>(stage_)) {
    throw InvariantViolation(std::string("generation stage cannot move from ") + to_string(stage_) + " to " +
                             to_string(next));
  }
  stage_ = next;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string context_tail(const Vocab& vocab, const std::vector<TokenId>& ids, std::size_t bytes) {
  std::string tail;
  for (std::size_t i = ids.size(); i > 0 && tail.size() < bytes; --i) tail = vocab.token(ids[i - 1]) + tail;
  return tail;
}

}  // namespace

Generation generate_until(IncrementalDecoder& decoder, const Vocab& vocab, const std::string& stop_text,
                          std::size_t max_new_tokens) {
  Generation gen;
  std::string tail = context_tail(vocab, decoder.tokens(), stop_text.size());
  if (!stop_text.empty() && ends_with(tail, stop_text)) {
    gen.stopped = true;
    return gen;
  }
  while (gen.tokens.size() < max_new_tokens) {
    const StepDistribution step = decoder.next();
    std::size_t best = 0;
    for (std::size_t i = 1; i < step.mixed_probs.size(); ++i) {
      if (step.mixed_probs[i] > step.mixed_probs[best]) best = i;
    }
    const auto id = static_cast<TokenId>(best);
    TokenDiagnostic diag;
    diag.id = id;
    diag.text = vocab.token(id);
    diag.gate = step.gate;
    diag.copy_share = step.copy_probs.empty() ? 0.0 : step.gate * step.copy_probs[best];
    gen.tokens.push_back(id);
    gen.text += diag.text;
    tail += diag.text;
    gen.diagnostics.push_back(std::move(diag));
    decoder.push(id);
    if (!stop_text.empty() && ends_with(tail, stop_text)) {
      gen.stopped = true;
      break;
    }
    if (tail.size() > 4 * stop_text.size() + 64) tail.erase(0, tail.size() - stop_text.size());
  }
  return gen;
}

Generation generate_until(const Model& model, const Vocab& vocab, const std::vector<TokenId>& context,
                          const std::string& stop_text, std::size_t max_new_tokens) {
  if (context.size() > model.config().max_positions) {
    throw LengthError("generation context of " + std::to_string(context.size()) + " tokens exceeds max_positions " +
                      std::to_string(model.config().max_positions));
  }
  if (context.empty()) throw LengthError("generation needs a non-empty context");
  NoGradGuard guard;
  IncrementalDecoder decoder(model);
  decoder.sync(context);
  return generate_until(decoder, vocab, stop_text, max_new_tokens);
}

GenerationError::GenerationError(Stage stage, std::string raw, const std::string& what)
    : ParseError(to_string(stage), what), stage_(stage), raw_(std::move(raw)) {}

TurnResult respond(const Model& model, const Vocab& vocab, const Database& db, const std::vector<DialogueTurn>& history,
                   const std::string& user_utterance, const StageLimits& limits, bool strict) {
  NoGradGuard guard;
  TurnResult result;
  const std::string head = history_text(history, kMaxHistoryTurns) + "User: " + user_utterance + "\n";
  std::vector<TokenId> context = vocab.encode(head);
  const auto belief_marker = vocab.encode("Belief:");
  context.insert(context.end(), belief_marker.begin(), belief_marker.end());
  GenerationState state(std::move(context), limits, model.config().max_positions);
  IncrementalDecoder decoder(model);
  decoder.sync(state.context());

  auto run_stage = [&](std::size_t limit) {
    Generation g = generate_until(decoder, vocab, "\n", limit);
    state.append(g.tokens);
    return g;
  };
  auto strip_newline = [](std::string s) {
    if (!s.empty() && s.back() == '\n') s.pop_back();
    return s;
  };

  const Generation belief_gen = run_stage(limits.belief);
  result.belief_line = strip_newline(belief_gen.text);
  try {
    result.belief = parse_belief("Belief:" + result.belief_line, strict ? nullptr : &result.belief_report);
  } catch (const ParseError& e) {
    throw GenerationError(Stage::Belief, result.belief_line, e.what());
  }
  if (!belief_gen.stopped) state.append(vocab.encode("\n"));

  state.advance(Stage::Database);
  result.db = lookup(db, result.belief);
  result.db_text = format_results(result.db.records, result.db.total);
  state.append(vocab.encode("Database: " + result.db_text + "\n"));

  state.advance(Stage::Action);
  state.append(vocab.encode("Action:"));
  decoder.sync(state.context());
  const Generation action_gen = run_stage(limits.action);
  result.action_line = strip_newline(action_gen.text);
  try {
    result.action = parse_action("Action:" + result.action_line, strict ? nullptr : &result.action_report);
  } catch (const ParseError& e) {
    throw GenerationError(Stage::Action, result.action_line, e.what());
  }
  if (!action_gen.stopped) state.append(vocab.encode("\n"));

  state.advance(Stage::Response);
  state.append(vocab.encode("System:"));
  decoder.sync(state.context());
  const Generation response_gen = run_stage(limits.response);
  result.response = extract_response("System:" + response_gen.text);
  result.diagnostics = response_gen.diagnostics;
  state.advance(Stage::Done);
  return result;
}

}  // namespace acn
